//! Trajectory statistics: drift and ballistic error, mean squared
//! displacement, radial histograms and tails, passage rates, and the
//! switch-step heuristic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, HallwaySpec};
use crate::error::{check_dim, Error, Result};
use crate::fokker_planck::{ball_volume, DensityForm, RadialDensity};
use crate::policy::{distance, norm};
use crate::rollout::{Ensemble, Trajectory};
use crate::stats::{linear_fit, wilson_interval, LineFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMethod {
    /// `c = π(s₀)`, the first action.
    #[default]
    FirstAction,
    /// Mean of all actions along the trajectory.
    MeanAction,
    /// `c = s₁ − s₀`, the first realized displacement. Under a cap this is
    /// the capped action, which keeps the quadratic bound sound when
    /// `‖π(s₀)‖ > δ`.
    FirstStep,
}

pub fn drift_estimate(traj: &Trajectory, method: DriftMethod) -> Result<Vec<f64>> {
    let first = traj
        .actions
        .first()
        .ok_or_else(|| Error::InsufficientData("trajectory has no actions".into()))?;
    Ok(match method {
        DriftMethod::FirstAction => first.clone(),
        DriftMethod::MeanAction => {
            let n = traj.actions.len() as f64;
            let mut c = vec![0.0; first.len()];
            for a in &traj.actions {
                c.iter_mut().zip(a).for_each(|(c, a)| *c += a / n);
            }
            c
        }
        DriftMethod::FirstStep => traj.states[1].iter().zip(&traj.states[0]).map(|(a, b)| a - b).collect(),
    })
}

/// `ε_t = ‖s_t − (s₀ + t·c)‖` for `t = 0..=T`.
pub fn ballistic_error(traj: &Trajectory, c: &[f64]) -> Result<Vec<f64>> {
    check_dim(traj.dim(), c.len())?;
    let s0 = &traj.states[0];
    Ok(traj
        .states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let t = t as f64;
            s.iter()
                .zip(s0)
                .zip(c)
                .map(|((x, x0), c)| {
                    let e = x - (x0 + t * c);
                    e * e
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// `½·δ·L_a·L_π·t²`.
pub fn quadratic_bound(delta: f64, l_a: f64, l_pi: f64, t: f64) -> f64 {
    0.5 * delta * l_a * l_pi * t * t
}

/// `k·t·(A^t − 1)/(A − 1)`, the bound for `ε_{t+1} ≤ A·ε_t + k·t`; reduces to
/// `k·t²` as `A → 1`.
pub fn geometric_bound(k: f64, a: f64, t: f64) -> f64 {
    if (a - 1.0).abs() < 1e-12 {
        k * t * t
    } else {
        k * t * (a.powf(t) - 1.0) / (a - 1.0)
    }
}

/// Steps until the ballistic error bound reaches `‖c‖`:
/// `t* = √(2‖c‖ / (δ·L_a·L_π))`, infinite when the product vanishes.
pub fn validity_horizon(c_norm: f64, delta: f64, l_a: f64, l_pi: f64) -> f64 {
    let k = delta * l_a * l_pi;
    if k > 0.0 {
        (2.0 * c_norm / k).sqrt()
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    Quadratic,
    Geometric { a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallisticReport {
    pub c: Vec<f64>,
    pub eps_series: Vec<f64>,
    pub bound_series: Vec<f64>,
    /// `None` when the horizon is unbounded.
    pub horizon: Option<f64>,
    /// Steps `t` with `ε_t` above the bound (beyond a 1e-9 relative slack).
    pub violations: Vec<usize>,
    pub bound: BoundKind,
}

impl BallisticReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,eps,bound")?;
        for (t, (e, b)) in self.eps_series.iter().zip(&self.bound_series).enumerate() {
            writeln!(w, "{t},{e},{b}")?;
        }
        Ok(())
    }
}

fn violations(eps: &[f64], bound: &[f64]) -> Vec<usize> {
    eps.iter()
        .zip(bound)
        .enumerate()
        .filter(|(_, (e, b))| **e > **b * (1.0 + 1e-9) + 1e-12)
        .map(|(t, _)| t)
        .collect()
}

fn cap_of(env: &EnvSpec) -> Result<f64> {
    env.delta_cap
        .ok_or_else(|| Error::NotApplicable("the bound needs a locality cap δ on the environment".into()))
}

/// Checks the quadratic ballistic bound along `traj`, which must come from a
/// fixed policy with Lipschitz constant `l_pi` in `env` (which needs
/// `L_s = 1` and a cap δ).
pub fn quadratic_check(traj: &Trajectory, env: &EnvSpec, l_pi: f64, c: &[f64]) -> Result<BallisticReport> {
    if env.l_s != 1.0 {
        return Err(Error::NotApplicable(format!(
            "quadratic bound assumes L_s = 1, got {}; use geometric_check",
            env.l_s
        )));
    }
    let delta = cap_of(env)?;
    let eps = ballistic_error(traj, c)?;
    let bound: Vec<f64> = (0..eps.len()).map(|t| quadratic_bound(delta, env.l_a, l_pi, t as f64)).collect();
    Ok(BallisticReport {
        c: c.to_vec(),
        violations: violations(&eps, &bound),
        eps_series: eps,
        bound_series: bound,
        horizon: Some(validity_horizon(norm(c), delta, env.l_a, l_pi)).filter(|h| h.is_finite()),
        bound: BoundKind::Quadratic,
    })
}

/// Geometric variant for `L_s ≠ 1`. The reference path iterates the
/// environment under the constant action `c` rather than `s₀ + t·c`, and the
/// bound is `geometric_bound(δ·L_a·L_π, L_s, t)`.
pub fn geometric_check(traj: &Trajectory, env: &EnvSpec, l_pi: f64, c: &[f64]) -> Result<BallisticReport> {
    check_dim(traj.dim(), c.len())?;
    let delta = cap_of(env)?;
    let k = delta * env.l_a * l_pi;
    let mut reference = traj.states[0].clone();
    let mut eps = Vec::with_capacity(traj.states.len());
    for (t, s) in traj.states.iter().enumerate() {
        if t > 0 {
            reference = env.step(&reference, c)?;
        }
        eps.push(distance(s, &reference));
    }
    let bound: Vec<f64> = (0..eps.len()).map(|t| geometric_bound(k, env.l_s, t as f64)).collect();
    Ok(BallisticReport {
        c: c.to_vec(),
        violations: violations(&eps, &bound),
        eps_series: eps,
        bound_series: bound,
        horizon: None,
        bound: BoundKind::Geometric { a: env.l_s },
    })
}

/// Worst-case iterates of an error recurrence against its closed-form bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub iterates: Vec<f64>,
    pub bounds: Vec<f64>,
    pub dominated: bool,
}

fn recurrence(a: f64, k: f64, eps0: f64, horizon: usize, bound: impl Fn(f64) -> f64) -> RecurrenceReport {
    let mut iterates = Vec::with_capacity(horizon + 1);
    let mut e = eps0;
    for t in 0..=horizon {
        iterates.push(e);
        e = a * e + k * t as f64;
    }
    let bounds: Vec<f64> = (0..=horizon).map(|t| bound(t as f64)).collect();
    let dominated = violations(&iterates, &bounds).is_empty();
    RecurrenceReport {
        iterates,
        bounds,
        dominated,
    }
}

/// `ε_{t+1} = ε_t + k·t` against `k·t²/2 + ε₀`.
pub fn quadratic_recurrence(k: f64, eps0: f64, horizon: usize) -> RecurrenceReport {
    recurrence(1.0, k, eps0, horizon, |t| 0.5 * k * t * t + eps0)
}

/// `ε_{t+1} = A·ε_t + k·t` against `geometric_bound(k, A, t) + ε₀`.
///
/// For `A > 1` and `ε₀ > 0` the initial error itself grows as `A^t·ε₀` and
/// the bound does not dominate; it is sound for `ε₀ = 0` or `A ≤ 1`.
pub fn geometric_recurrence(a: f64, k: f64, eps0: f64, horizon: usize) -> RecurrenceReport {
    recurrence(a, k, eps0, horizon, |t| geometric_bound(k, a, t) + eps0)
}

/// Mean squared displacement `⟨‖s_t − s₀‖²⟩` for `t = 0..=T`.
pub fn msd(ensemble: &Ensemble) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = ensemble.trajectories.iter().map(squared_displacement).collect();
    msd_from_displacements(&per)
}

/// `‖s_t − s₀‖²` along one trajectory.
pub fn squared_displacement(traj: &Trajectory) -> Vec<f64> {
    let s0 = &traj.states[0];
    traj.states
        .iter()
        .map(|s| s.iter().zip(s0).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect()
}

pub fn msd_from_displacements(per_traj: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_traj
        .first()
        .ok_or_else(|| Error::InsufficientData("empty ensemble".into()))?;
    let n = per_traj.len() as f64;
    let mut out = vec![0.0; first.len()];
    for d in per_traj {
        check_dim(first.len(), d.len())?;
        out.iter_mut().zip(d).for_each(|(o, x)| *o += x);
    }
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Log-log slope of the MSD over `t ∈ [t0, t1]`.
pub fn msd_exponent(msd: &[f64], t0: usize, t1: usize) -> Result<LineFit> {
    if t0 == 0 || t1 <= t0 || t1 >= msd.len() {
        return Err(Error::param("window", format!("need 1 ≤ t0 < t1 < {}", msd.len())));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, &m) in msd.iter().enumerate().take(t1 + 1).skip(t0) {
        if m <= 0.0 {
            return Err(Error::InsufficientData(format!("MSD is zero at t = {t}")));
        }
        xs.push((t as f64).ln());
        ys.push(m.ln());
    }
    Ok(linear_fit(&xs, &ys))
}

/// `n` equal bins over `[0, r_max]`.
pub fn linear_edges(r_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| r_max * i as f64 / n as f64).collect()
}

/// `[0, r_min]` followed by `n` logarithmic bins up to `r_max`.
pub fn log_edges(r_min: f64, r_max: f64, n: usize) -> Vec<f64> {
    let ratio = (r_max / r_min).ln();
    std::iter::once(0.0)
        .chain((0..=n).map(|i| r_min * (ratio * i as f64 / n as f64).exp()))
        .collect()
}

/// Radial density estimate from sample radii. Values are counts divided by
/// `N` times the shell volume; radii beyond the last edge count towards `N`
/// only. Bin positions are midpoints, or geometric means for bins not
/// touching the origin when `geometric` is set.
pub fn radial_histogram_from_radii(radii: &[f64], d: usize, edges: &[f64], geometric: bool) -> Result<RadialDensity> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] < 0.0 {
        return Err(Error::param("edges", "need increasing nonnegative edges"));
    }
    if radii.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let n_bins = edges.len() - 1;
    let mut counts = vec![0u64; n_bins];
    for &r in radii {
        // Index of the last edge ≤ r.
        let i = edges.partition_point(|&e| e <= r);
        if i >= 1 && i <= n_bins {
            counts[i - 1] += 1;
        } else if r == edges[n_bins] {
            counts[n_bins - 1] += 1;
        }
    }
    let total = radii.len() as f64;
    let values = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (total * (ball_volume(d, w[1]) - ball_volume(d, w[0]))))
        .collect();
    let r_grid = edges
        .windows(2)
        .map(|w| if geometric && w[0] > 0.0 { (w[0] * w[1]).sqrt() } else { 0.5 * (w[0] + w[1]) })
        .collect();
    Ok(RadialDensity {
        r_grid,
        values,
        d,
        truncation: edges[n_bins],
        form: DensityForm::Empirical,
        bin_edges: Some(edges.to_vec()),
        counts: Some(counts),
    })
}

/// Radii `‖s_t‖` across the ensemble at step `t`.
pub fn radii_at(ensemble: &Ensemble, t: usize) -> Result<Vec<f64>> {
    ensemble
        .trajectories
        .iter()
        .map(|tr| {
            tr.states
                .get(t)
                .map(|s| norm(s))
                .ok_or_else(|| Error::param("t", format!("beyond horizon {}", tr.horizon())))
        })
        .collect()
}

/// Histogram of `‖s_t‖` with `n_bins` linear bins over `[0, r_max]`.
pub fn radial_histogram(ensemble: &Ensemble, t: usize, n_bins: usize, r_max: f64) -> Result<RadialDensity> {
    radial_histogram_from_radii(&radii_at(ensemble, t)?, ensemble.dim(), &linear_edges(r_max, n_bins), false)
}

/// Bins with fewer samples are left out of tail fits.
pub const MIN_TAIL_COUNT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub slope_stderr: f64,
    pub fit_range: (f64, f64),
    pub n_points: usize,
}

/// Log-log slope of the density over bins positioned in `[r_min, r_max]`.
pub fn tail_exponent(density: &RadialDensity, r_min: f64, r_max: f64) -> Result<TailFit> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, (&r, &v)) in density.r_grid.iter().zip(&density.values).enumerate() {
        let enough = density.counts.as_ref().is_none_or(|c| c[i] >= MIN_TAIL_COUNT);
        if r >= r_min && r <= r_max && v > 0.0 && enough {
            xs.push(r.ln());
            ys.push(v.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable bins in [{r_min}, {r_max}]",
            xs.len()
        )));
    }
    let fit = linear_fit(&xs, &ys);
    Ok(TailFit {
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        fit_range: (r_min, r_max),
        n_points: xs.len(),
    })
}

/// Whether a trajectory ever gets past the far face of the wall.
pub fn passed(traj: &Trajectory, hallway: &HallwaySpec) -> bool {
    let target = hallway.far_face();
    traj.states.iter().any(|s| s[0] > target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageRate {
    pub passed: usize,
    pub n: usize,
    pub rate: f64,
    /// 95% Wilson interval.
    pub lo: f64,
    pub hi: f64,
}

impl PassageRate {
    pub fn from_counts(passed: usize, n: usize) -> Self {
        let (lo, hi) = wilson_interval(passed, n, 1.959_963_984_540_054);
        Self {
            passed,
            n,
            rate: if n == 0 { 0.0 } else { passed as f64 / n as f64 },
            lo,
            hi,
        }
    }

    /// Intervals do not overlap and `self` lies above `other`.
    pub fn clearly_above(&self, other: &Self) -> bool {
        self.lo > other.hi
    }
}

pub fn passage_rate(flags: &[bool]) -> PassageRate {
    PassageRate::from_counts(flags.iter().filter(|&&f| f).count(), flags.len())
}

/// Window of sensible switch steps for a hybrid rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchWindow {
    /// `2Δ/δ`: twice the steps needed to cover `Δ` at full speed δ.
    pub n_min: f64,
    /// Steps before the ballistic error passes `factor·Δ`.
    pub n_max: f64,
    pub feasible: bool,
}

/// `n_min = 2Δ/δ` and `n_max = √(2·factor·Δ/(δ·L_π))`, the point where the
/// quadratic error bound with `L_a = 1` reaches `factor·Δ`.
pub fn switch_step_heuristic(l_pi: f64, travel: f64, delta: f64, factor: f64) -> Result<SwitchWindow> {
    if !(travel > 0.0 && delta > 0.0 && l_pi >= 0.0 && factor > 0.0) {
        return Err(Error::param("switch heuristic", "needs Δ, δ, factor > 0 and L_π ≥ 0"));
    }
    let n_min = 2.0 * travel / delta;
    let n_max = validity_horizon(factor * travel, delta, 1.0, l_pi);
    Ok(SwitchWindow {
        n_min,
        n_max,
        feasible: n_min <= n_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::RolloutMode;

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        let actions: Vec<Vec<f64>> = states
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
            .collect();
        let n = actions.len();
        Trajectory {
            states,
            actions,
            mode: RolloutMode::Fixed,
            seed: 0,
            policy_seeds: vec![0; n],
            n_resets: 0,
        }
    }

    #[test]
    fn quadratic_bound_reference() {
        assert_eq!(quadratic_bound(0.1, 1.0, 2.0, 10.0), 10.0);
        assert!((validity_horizon(1.0, 0.1, 1.0, 2.0) - 10f64.sqrt()).abs() < 1e-12);
        assert!(validity_horizon(1.0, 0.1, 1.0, 0.0).is_infinite());
    }

    #[test]
    fn straight_line_has_zero_error() {
        let tr = traj((0..20).map(|t| vec![0.5 * t as f64, -0.25 * t as f64]).collect());
        let c = drift_estimate(&tr, DriftMethod::FirstAction).unwrap();
        assert!(ballistic_error(&tr, &c).unwrap().iter().all(|&e| e < 1e-12));
        let mean = drift_estimate(&tr, DriftMethod::MeanAction).unwrap();
        assert!(mean.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(drift_estimate(&tr, DriftMethod::FirstStep).unwrap(), c);
    }

    #[test]
    fn quadratic_requires_unit_state_lipschitz_and_cap() {
        let tr = traj(vec![vec![0.0], vec![0.1]]);
        let mut env = EnvSpec::integrator(1).with_cap(0.1);
        env.l_s = 1.05;
        assert!(quadratic_check(&tr, &env, 1.0, &[0.1]).is_err());
        assert!(quadratic_check(&tr, &EnvSpec::integrator(1), 1.0, &[0.1]).is_err());
    }

    #[test]
    fn recurrences() {
        let q = quadratic_recurrence(0.3, 0.2, 100);
        assert!(q.dominated);
        // Equality case: ε_t = ε₀ + k·t(t−1)/2.
        assert!((q.iterates[10] - (0.2 + 0.3 * 45.0)).abs() < 1e-12);
        let g = geometric_recurrence(0.5, 1.0, 0.0, 200);
        assert!(g.dominated);
        assert!(g.iterates.iter().enumerate().all(|(t, e)| *e <= 2.0 * t as f64 + 1e-12));
        assert!(geometric_recurrence(1.2, 0.5, 0.0, 60).dominated);
        // Pure geometric growth of the initial error escapes the bound.
        let pure = geometric_recurrence(2.0, 0.0, 1.0, 10);
        assert_eq!(pure.iterates[10], 1024.0);
        assert!(!pure.dominated);
    }

    #[test]
    fn geometric_bound_limit() {
        let near = geometric_bound(0.3, 1.0 + 1e-9, 20.0);
        assert!((near - geometric_bound(0.3, 1.0, 20.0)).abs() / near < 1e-6);
    }

    #[test]
    fn msd_window_checks() {
        let m: Vec<f64> = (0..50).map(|t| (t * t) as f64).collect();
        let fit = msd_exponent(&m, 1, 49).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(msd_exponent(&m, 0, 10).is_err());
        assert!(msd_exponent(&m, 10, 50).is_err());
    }

    #[test]
    fn histogram_counts_and_mass() {
        let radii = [0.1, 0.2, 0.6, 0.9, 1.0, 5.0];
        let h = radial_histogram_from_radii(&radii, 2, &linear_edges(1.0, 2), false).unwrap();
        assert_eq!(h.counts.as_ref().unwrap(), &vec![2, 3]);
        assert!((h.mass() - 5.0 / 6.0).abs() < 1e-12);
        let e = log_edges(0.1, 10.0, 2);
        assert_eq!(e.len(), 4);
        assert!((e[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tail_of_exact_power_law() {
        let r_grid: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let values = r_grid.iter().map(|r| r.powf(-2.5)).collect();
        let dens = RadialDensity {
            r_grid,
            values,
            d: 2,
            truncation: 40.0,
            form: DensityForm::Numeric,
            bin_edges: None,
            counts: None,
        };
        let fit = tail_exponent(&dens, 5.0, 40.0).unwrap();
        assert!((fit.slope + 2.5).abs() < 1e-12);
        assert_eq!(fit.n_points, 36);
        assert!(tail_exponent(&dens, 50.0, 60.0).is_err());
    }

    #[test]
    fn passage_and_intervals() {
        let hall = HallwaySpec {
            wall_coordinate: 1.0,
            gap_center: vec![0.0],
            gap_halfwidth: 0.1,
            wall_thickness: 0.05,
        };
        assert!(passed(&traj(vec![vec![0.0, 0.0], vec![1.2, 0.0]]), &hall));
        assert!(!passed(&traj(vec![vec![0.0, 0.0], vec![1.02, 0.0]]), &hall));
        let a = PassageRate::from_counts(80, 100);
        let b = PassageRate::from_counts(20, 100);
        assert!(a.clearly_above(&b) && !b.clearly_above(&a));
    }

    #[test]
    fn switch_window() {
        let w = switch_step_heuristic(2.0, 1.0, 0.1, 0.1).unwrap();
        assert!((w.n_min - 20.0).abs() < 1e-12);
        assert!((w.n_max - 1.0).abs() < 1e-12);
        assert!(!w.feasible);
        assert!(switch_step_heuristic(0.0, 1.0, 0.1, 0.1).unwrap().feasible);
    }
}
