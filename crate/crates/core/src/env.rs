//! Deterministic transition dynamics `s' = f(s, a)`.
//!
//! The base map is `L_s·s + L_a·a`. Optional constraints are applied in this
//! order: the locality cap rescales the displacement, the reflecting box folds
//! coordinates back inside `[-bound, bound]`, and the hallway wall truncates
//! any move that would pass through it outside the gap.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::policy::norm;

/// The locality cap keeps displacements strictly below `δ` by this factor.
pub const CAP_SHRINK: f64 = 1.0 - 1e-9;
/// Distance kept between a blocked agent and the wall face.
pub const FACE_GAP: f64 = 1e-9;

/// A wall occupying the slab `B ≤ x₀ ≤ B + thickness`, open where the
/// transverse coordinates lie within `gap_halfwidth` of `gap_center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallwaySpec {
    pub wall_coordinate: f64,
    pub gap_center: Vec<f64>,
    pub gap_halfwidth: f64,
    pub wall_thickness: f64,
}

impl HallwaySpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim < 2 {
            return Err(Error::param("barrier", "a hallway needs at least two dimensions"));
        }
        check_dim(dim - 1, self.gap_center.len())?;
        if !(self.gap_halfwidth > 0.0) {
            return Err(Error::param("gap_halfwidth", "must be positive"));
        }
        if !(self.wall_thickness > 0.0) {
            return Err(Error::param("wall_thickness", "must be positive"));
        }
        Ok(())
    }

    pub fn near_face(&self) -> f64 {
        self.wall_coordinate
    }

    pub fn far_face(&self) -> f64 {
        self.wall_coordinate + self.wall_thickness
    }

    fn transverse_offset_at(&self, s: &[f64], s2: &[f64], tau: f64) -> f64 {
        self.gap_center
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let x = s[k + 1] + tau * (s2[k + 1] - s[k + 1]);
                (x - c) * (x - c)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn in_gap(&self, s: &[f64]) -> bool {
        self.transverse_offset_at(s, s, 0.0) <= self.gap_halfwidth
    }

    pub fn in_slab(&self, s: &[f64]) -> bool {
        s[0] >= self.near_face() && s[0] <= self.far_face()
    }

    /// Parameter interval `[τa, τb] ⊂ [0, 1]` on which the segment lies in
    /// the slab, if any.
    fn slab_interval(&self, s: &[f64], s2: &[f64]) -> Option<(f64, f64)> {
        let (x, x2) = (s[0], s2[0]);
        let (lo, hi) = (self.near_face(), self.far_face());
        let dx = x2 - x;
        if dx == 0.0 {
            return (x >= lo && x <= hi).then_some((0.0, 1.0));
        }
        let (t_lo, t_hi) = ((lo - x) / dx, (hi - x) / dx);
        let (a, b) = if t_lo < t_hi { (t_lo, t_hi) } else { (t_hi, t_lo) };
        let (a, b) = (a.max(0.0), b.min(1.0));
        (a <= b).then_some((a, b))
    }

    /// True if the straight segment `s → s2` passes through wall material,
    /// i.e. some point of it inside the slab lies outside the gap.
    pub fn segment_blocked(&self, s: &[f64], s2: &[f64]) -> bool {
        match self.slab_interval(s, s2) {
            None => false,
            // The gap is convex, so checking both ends of the in-slab piece
            // covers the whole piece.
            Some((a, b)) => {
                self.transverse_offset_at(s, s2, a) > self.gap_halfwidth
                    || self.transverse_offset_at(s, s2, b) > self.gap_halfwidth
            }
        }
    }

    /// Resolves a move against the wall.
    fn resolve(&self, s: &[f64], candidate: &mut [f64]) {
        if !self.segment_blocked(s, candidate) {
            return;
        }
        if self.in_slab(s) {
            // Inside the corridor: keep the axial motion, pull the transverse
            // position back inside the gap.
            self.project_into_gap(candidate);
            return;
        }
        let (a, _) = self.slab_interval(s, candidate).expect("blocked implies overlap");
        if self.transverse_offset_at(s, candidate, a) <= self.gap_halfwidth {
            // Entered through the opening but would clip the corridor side:
            // stop just inside the entrance.
            let inward = if s[0] < self.near_face() { FACE_GAP } else { -FACE_GAP };
            let entry: Vec<f64> = s.iter().zip(candidate.iter()).map(|(p, q)| p + a * (q - p)).collect();
            candidate.copy_from_slice(&entry);
            candidate[0] += inward;
            self.project_into_gap(candidate);
        } else {
            // Hit the wall: remove the component through it, keep the slide.
            candidate[0] = if s[0] < self.near_face() {
                self.near_face() - FACE_GAP
            } else {
                self.far_face() + FACE_GAP
            };
        }
    }

    fn project_into_gap(&self, s: &mut [f64]) {
        let off = self.transverse_offset_at(s, s, 0.0);
        let limit = self.gap_halfwidth * CAP_SHRINK;
        if off > limit {
            let scale = limit / off;
            for (k, c) in self.gap_center.iter().enumerate() {
                s[k + 1] = c + (s[k + 1] - c) * scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub dim: usize,
    #[serde(default = "one")]
    pub l_s: f64,
    #[serde(default = "one")]
    pub l_a: f64,
    /// Locality cap δ on the per-step displacement.
    #[serde(default)]
    pub delta_cap: Option<f64>,
    /// Half-width of a reflecting box `[-bound, bound]^d`.
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default)]
    pub barrier: Option<HallwaySpec>,
}

fn one() -> f64 {
    1.0
}

/// Lipschitz constants of the dynamics. `nominal` marks constants that are
/// exact for the unconstrained affine map only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub l_s: f64,
    pub l_a: f64,
    pub nominal: bool,
}

impl EnvSpec {
    /// Pure integrator `s' = s + a` in `dim` dimensions.
    pub fn integrator(dim: usize) -> Self {
        Self {
            dim,
            l_s: 1.0,
            l_a: 1.0,
            delta_cap: None,
            bound: None,
            barrier: None,
        }
    }

    pub fn with_cap(mut self, delta: f64) -> Self {
        self.delta_cap = Some(delta);
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_barrier(mut self, barrier: HallwaySpec) -> Self {
        self.barrier = Some(barrier);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if !(self.l_s > 0.0 && self.l_s.is_finite()) {
            return Err(Error::param("l_s", "must be positive"));
        }
        if !(self.l_a > 0.0 && self.l_a.is_finite()) {
            return Err(Error::param("l_a", "must be positive"));
        }
        if let Some(d) = self.delta_cap {
            if !(d > 0.0) {
                return Err(Error::param("delta_cap", "must be positive"));
            }
        }
        if let Some(b) = self.bound {
            if !(b > 0.0) {
                return Err(Error::param("bound", "must be positive"));
            }
        }
        if let Some(h) = &self.barrier {
            h.validate(self.dim)?;
        }
        Ok(())
    }

    pub fn lipschitz_constants(&self) -> LipschitzConstants {
        LipschitzConstants {
            l_s: self.l_s,
            l_a: self.l_a,
            nominal: self.delta_cap.is_some() || self.bound.is_some() || self.barrier.is_some(),
        }
    }

    pub fn step(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.step_into(s, a, &mut out)?;
        Ok(out)
    }

    pub fn step_into(&self, s: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, s.len())?;
        check_dim(self.dim, a.len())?;
        check_dim(self.dim, out.len())?;
        // Work on the displacement so the cap acts on s' − s.
        for ((o, x), u) in out.iter_mut().zip(s).zip(a) {
            *o = (self.l_s - 1.0) * x + self.l_a * u;
        }
        if let Some(delta) = self.delta_cap {
            let len = norm(out);
            let max = delta * CAP_SHRINK;
            if len > max {
                let scale = max / len;
                out.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for (o, x) in out.iter_mut().zip(s) {
            *o += x;
        }
        if let Some(b) = self.bound {
            out.iter_mut().for_each(|x| *x = reflect(*x, b));
        }
        if let Some(h) = &self.barrier {
            h.resolve(s, out);
        }
        Ok(())
    }
}

/// Folds `x` into `[-b, b]` by mirror reflection.
fn reflect(x: f64, b: f64) -> f64 {
    if x.abs() <= b {
        return x;
    }
    let period = 4.0 * b;
    let y = (x + b).rem_euclid(period);
    if y <= 2.0 * b {
        y - b
    } else {
        3.0 * b - y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hallway(b: f64, half: f64) -> HallwaySpec {
        HallwaySpec {
            wall_coordinate: b,
            gap_center: vec![0.0],
            gap_halfwidth: half,
            wall_thickness: 0.05,
        }
    }

    #[test]
    fn pure_integrator() {
        let env = EnvSpec::integrator(2);
        assert_eq!(env.step(&[1.0, 2.0], &[0.5, -1.0]).unwrap(), vec![1.5, 1.0]);
    }

    #[test]
    fn cap_rescales_displacement() {
        let env = EnvSpec::integrator(2).with_cap(0.1);
        let s = env.step(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        let len = norm(&s);
        assert!(len < 0.1 && len > 0.1 - 1e-9);
        assert!((s[0] / len - 0.6).abs() < 1e-12 && (s[1] / len - 0.8).abs() < 1e-12);
    }

    #[test]
    fn blocked_move_stops_at_face() {
        let env = EnvSpec::integrator(2).with_barrier(hallway(1.0, 0.1));
        let s = env.step(&[0.9, 0.5], &[0.2, 0.0]).unwrap();
        assert!(s[0] < 1.0 && (s[0] - 1.0).abs() < 1e-8);
        assert_eq!(s[1], 0.5);
    }

    #[test]
    fn blocked_move_keeps_tangential_slide() {
        let env = EnvSpec::integrator(2).with_barrier(hallway(1.0, 0.1));
        let s = env.step(&[0.95, 0.5], &[0.2, -0.1]).unwrap();
        assert!(s[0] < 1.0);
        assert!((s[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn gap_lets_agent_through() {
        let env = EnvSpec::integrator(2).with_barrier(hallway(1.0, 0.1));
        let s = env.step(&[0.95, 0.02], &[0.2, 0.0]).unwrap();
        assert_eq!(s, vec![1.15, 0.02]);
    }

    #[test]
    fn corridor_side_walls_hold() {
        let env = EnvSpec::integrator(2).with_barrier(hallway(1.0, 0.1));
        let start = [1.02, 0.05];
        let s = env.step(&start, &[0.0, 0.3]).unwrap();
        assert!(s[1] <= 0.1);
        assert!(!env.barrier.as_ref().unwrap().segment_blocked(&start, &s));
    }

    #[test]
    fn box_reflects() {
        assert_eq!(reflect(6.5, 6.0), 5.5);
        assert_eq!(reflect(-6.25, 6.0), -5.75);
        assert_eq!(reflect(3.0, 6.0), 3.0);
        let env = EnvSpec::integrator(1).with_bound(1.0);
        assert!((env.step(&[0.9], &[0.3]).unwrap()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let env = EnvSpec::integrator(2);
        assert!(env.step(&[1.0], &[1.0, 0.0]).is_err());
        assert!(env.step(&[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn lipschitz_constants_are_reported() {
        let mut env = EnvSpec::integrator(2);
        assert_eq!(
            env.lipschitz_constants(),
            LipschitzConstants { l_s: 1.0, l_a: 1.0, nominal: false }
        );
        env.l_s = 0.9;
        assert_eq!(env.lipschitz_constants().l_s, 0.9);
        env.l_s = 1.05;
        let c = env.clone().with_cap(0.1).lipschitz_constants();
        assert_eq!(c.l_s, 1.05);
        assert!(c.nominal);
    }

    #[test]
    fn validation() {
        assert!(EnvSpec::integrator(0).validate().is_err());
        assert!(EnvSpec::integrator(2).with_cap(0.0).validate().is_err());
        assert!(EnvSpec::integrator(1).with_barrier(hallway(1.0, 0.1)).validate().is_err());
        let mut bad = hallway(1.0, 0.1);
        bad.gap_halfwidth = 0.0;
        assert!(EnvSpec::integrator(2).with_barrier(bad).validate().is_err());
    }
}
