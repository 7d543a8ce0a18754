//! Exploration behaviour of untrained neural policies.
//!
//! A policy network drawn at initialization and held fixed drives a
//! trajectory that is locally ballistic. Redrawing the network at every step
//! turns the same dynamics into a state-dependent diffusion whose covariance
//! is the NNGP kernel. This crate provides both rollout families, their
//! hybrids, the kernel and diffusion tools, and the statistics used to tell
//! them apart.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod env;
pub mod error;
pub mod fokker_planck;
pub mod hallway;
pub mod nngp;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod stats;

pub use env::{EnvSpec, HallwaySpec};
pub use error::{Error, Result};
pub use nngp::{DiffusionConvention, KernelFamily, KernelSpec};
pub use policy::{Activation, Architecture, InitKind, InitScheme, PolicyNet};
pub use rollout::{Ensemble, ModeConfig, PolicySpec, ResetSchedule, RolloutMode, Trajectory};

use std::hash::Hasher;

/// FNV-1a 64 hash of the canonical JSON form of `value` (object keys sorted).
pub fn config_hash<T: serde::Serialize>(value: &T) -> u64 {
    // serde_json::Value keeps maps sorted without the preserve_order feature.
    let canonical = serde_json::to_value(value).map(|v| v.to_string()).unwrap_or_default();
    let mut h = fnv::FnvHasher::default();
    h.write(canonical.as_bytes());
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn hash_ignores_key_order() {
        let a = serde_json::json!({"x": 1, "y": [1.5, 2.0]});
        let b: serde_json::Value = serde_json::from_str(r#"{"y": [1.5, 2.0], "x": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut m = BTreeMap::new();
        m.insert("x", 2);
        assert_ne!(config_hash(&a), config_hash(&m));
    }
}
