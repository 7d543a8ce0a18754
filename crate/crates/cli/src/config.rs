//! JSON configuration for each subcommand. Unknown fields are rejected.

use polexp_core::analysis::DriftMethod;
use polexp_core::fokker_planck::FpConfig;
use polexp_core::hallway::HallwayBenchmark;
use polexp_core::{EnvSpec, KernelSpec, ModeConfig, PolicySpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn zero() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub env: EnvSpec,
    pub s0: Vec<f64>,
    pub horizon: usize,
    pub n: usize,
    pub mode: ModeConfig,
    #[serde(default = "zero")]
    pub seed: u64,
    /// Fit window for the MSD exponent, `[t0, t1]`.
    #[serde(default)]
    pub msd_window: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub policy: PolicySpec,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kernel: KernelSpec,
    pub states: Vec<Vec<f64>>,
    #[serde(default)]
    pub jitter: f64,
    /// Monte Carlo check of every state pair against finite nets.
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default = "zero")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheckConfig {
    pub policy: PolicySpec,
    pub env: EnvSpec,
    pub s0: Vec<f64>,
    pub horizon: usize,
    pub n_nets: usize,
    #[serde(default = "first_step")]
    pub drift: DriftMethod,
    #[serde(default = "zero")]
    pub seed: u64,
}

fn first_step() -> DriftMethod {
    DriftMethod::FirstStep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallwayConfig {
    #[serde(default)]
    pub benchmark: HallwayBenchmark,
    #[serde(default = "zero")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateConfig {
    /// Solver grid and diffusion parameters; also sets the GP rollouts.
    /// A nonpositive `dt` is replaced by the largest stable step.
    pub fp: FpConfig,
    /// Simulated time for the numeric solution.
    pub fp_time: f64,
    pub horizon: usize,
    pub n: usize,
    /// Logarithmic histogram: `[0, r_min]` then `n_bins` bins to `r_max`.
    pub r_min: f64,
    pub r_max: f64,
    pub n_bins: usize,
    pub fit_range: (f64, f64),
    #[serde(default = "zero")]
    pub seed: u64,
}

pub fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
    })
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn core(e: polexp_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate().map_err(core)?;
        positive("horizon", self.horizon)?;
        positive("n", self.n)?;
        if self.s0.len() != self.env.dim {
            return Err(CliError::Config(format!("s0 has {} entries, env.dim is {}", self.s0.len(), self.env.dim)));
        }
        if let ModeConfig::Hybrid { n_switch, .. } = self.mode {
            if n_switch > self.horizon {
                return Err(CliError::Config("n_switch exceeds the horizon".into()));
            }
        }
        if let Some((t0, t1)) = self.msd_window {
            if t0 == 0 || t1 <= t0 || t1 > self.horizon {
                return Err(CliError::Config("msd_window needs 1 <= t0 < t1 <= horizon".into()));
            }
        }
        Ok(())
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.kernel.validate().map_err(core)?;
        if self.states.is_empty() {
            return Err(CliError::Config("states must not be empty".into()));
        }
        let d = self.states[0].len();
        if d == 0 || self.states.iter().any(|s| s.len() != d) {
            return Err(CliError::Config("states must share one positive dimension".into()));
        }
        if let Some(mc) = &self.mc {
            mc.policy.arch.validate().map_err(core)?;
            mc.policy.init.validate().map_err(core)?;
            if mc.policy.arch.input_dim != d {
                return Err(CliError::Config("mc.policy input_dim differs from the state dimension".into()));
            }
            if mc.n_draws < 2 {
                return Err(CliError::Config("mc.n_draws must be at least 2".into()));
            }
        }
        Ok(())
    }
}

impl BoundCheckConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate().map_err(core)?;
        self.policy.arch.validate().map_err(core)?;
        self.policy.init.validate().map_err(core)?;
        positive("horizon", self.horizon)?;
        positive("n_nets", self.n_nets)?;
        if self.env.delta_cap.is_none() {
            return Err(CliError::Config("bound-check needs env.delta_cap".into()));
        }
        if self.s0.len() != self.env.dim {
            return Err(CliError::Config("s0 does not match env.dim".into()));
        }
        Ok(())
    }
}

impl HallwayConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let b = &self.benchmark;
        b.env.validate().map_err(core)?;
        b.hallway().map_err(core)?;
        positive("horizon", b.horizon)?;
        positive("n", b.n)?;
        if b.s0.len() != b.env.dim {
            return Err(CliError::Config("s0 does not match env.dim".into()));
        }
        if b.resolved_switch().map_err(core)? > b.horizon {
            return Err(CliError::Config("n_switch exceeds the horizon".into()));
        }
        Ok(())
    }
}

impl SteadyStateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let mut fp = self.fp.clone();
        fp.dt = 1.0;
        fp.validate().map_err(core)?;
        positive("horizon", self.horizon)?;
        positive("n", self.n)?;
        positive("n_bins", self.n_bins)?;
        if !(self.r_min > 0.0 && self.r_max > self.r_min) {
            return Err(CliError::Config("need 0 < r_min < r_max".into()));
        }
        if !(self.fit_range.0 > 0.0 && self.fit_range.1 > self.fit_range.0) {
            return Err(CliError::Config("fit_range must be increasing and positive".into()));
        }
        if !(self.fp_time > 0.0) {
            return Err(CliError::Config("fp_time must be positive".into()));
        }
        Ok(())
    }
}
