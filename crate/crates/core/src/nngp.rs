//! Infinite-width kernels, the per-state diffusion coefficient, exact GP
//! sampling and Monte Carlo estimates of finite-width covariances.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::policy::{dot, norm, sample_policy, Architecture, InitScheme, Scratch};
use crate::rng;

/// Starting jitter when a kernel matrix refuses to factor.
pub const JITTER_START: f64 = 1e-10;
/// Number of jitter doublings tried before giving up.
pub const JITTER_DOUBLINGS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// One-hidden-layer ReLU (arc-cosine) kernel.
    ReluArccos,
    /// Squared-exponential comparison kernel.
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    #[serde(default = "default_lengthscale")]
    pub rbf_lengthscale: f64,
}

fn default_lengthscale() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn relu(sigma_w2: f64, sigma_b2: f64) -> Self {
        Self {
            family: KernelFamily::ReluArccos,
            sigma_w2,
            sigma_b2,
            rbf_lengthscale: 1.0,
        }
    }

    pub fn rbf(sigma_w2: f64, sigma_b2: f64, lengthscale: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            sigma_w2,
            sigma_b2,
            rbf_lengthscale: lengthscale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w2 >= 0.0 && self.sigma_w2.is_finite()) {
            return Err(Error::param("sigma_w2", "must be finite and nonnegative"));
        }
        if !(self.sigma_b2 >= 0.0 && self.sigma_b2.is_finite()) {
            return Err(Error::param("sigma_b2", "must be finite and nonnegative"));
        }
        if !(self.rbf_lengthscale > 0.0 && self.rbf_lengthscale.is_finite()) {
            return Err(Error::param("rbf_lengthscale", "must be positive"));
        }
        Ok(())
    }
}

/// How the ReLU kernel's diagonal is turned into a diffusion coefficient.
///
/// `Isotropic` uses `σ_b² + (σ_w²/π)‖s‖²`; `KernelDiagonal` uses the kernel
/// diagonal itself, `σ_b² + σ_w²‖s‖²`. The two differ by a factor π on the
/// state-dependent term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionConvention {
    #[default]
    Isotropic,
    KernelDiagonal,
}

impl DiffusionConvention {
    /// Σ as a function of the squared radius.
    #[inline]
    pub fn sigma(self, sigma_w2: f64, sigma_b2: f64, r2: f64) -> f64 {
        match self {
            DiffusionConvention::Isotropic => sigma_b2 + sigma_w2 * r2 / PI,
            DiffusionConvention::KernelDiagonal => sigma_b2 + sigma_w2 * r2,
        }
    }
}

/// Angular factor `sin θ + (π − θ) cos θ` for a clamped cosine.
#[inline]
fn arccos_angular(cos_theta: f64) -> f64 {
    let c = cos_theta.clamp(-1.0, 1.0);
    let theta = c.acos();
    theta.sin() + (PI - theta) * c
}

pub fn kernel(spec: &KernelSpec, s: &[f64], s2: &[f64]) -> Result<f64> {
    check_dim(s.len(), s2.len())?;
    Ok(kernel_unchecked(spec, s, s2))
}

fn kernel_unchecked(spec: &KernelSpec, s: &[f64], s2: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::ReluArccos => {
            let (n1, n2) = (norm(s), norm(s2));
            if n1 == 0.0 || n2 == 0.0 {
                return spec.sigma_b2;
            }
            let n12 = n1 * n2;
            spec.sigma_w2 / PI * n12 * arccos_angular(dot(s, s2) / n12) + spec.sigma_b2
        }
        KernelFamily::Rbf => {
            let d2: f64 = s.iter().zip(s2).map(|(a, b)| (a - b) * (a - b)).sum();
            let l = spec.rbf_lengthscale;
            spec.sigma_w2 * (-d2 / (2.0 * l * l)).exp() + spec.sigma_b2
        }
    }
}

/// Per-step action variance Σ(s) under per-step policy resampling.
///
/// The RBF family is stationary, so its coefficient is `σ_w² + σ_b²` at
/// every state.
pub fn diffusion_coefficient(spec: &KernelSpec, convention: DiffusionConvention, s: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::Rbf => spec.sigma_w2 + spec.sigma_b2,
        KernelFamily::ReluArccos => convention.sigma(spec.sigma_w2, spec.sigma_b2, dot(s, s)),
    }
}

/// A kernel matrix together with the diagonal jitter that made it factor.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub matrix: DMatrix<f64>,
    pub jitter: f64,
    pub cholesky_l: DMatrix<f64>,
}

/// Assembles `K(sᵢ, sⱼ) + jitter·δᵢⱼ` and factors it.
///
/// If the requested jitter does not factor, jitter is escalated from
/// `max(jitter, 1e-10)` by doubling, [`JITTER_DOUBLINGS`] times at most. An
/// all-zero covariance is accepted as-is with a zero factor.
pub fn kernel_matrix(spec: &KernelSpec, states: &[Vec<f64>], jitter: f64) -> Result<KernelMatrix> {
    spec.validate()?;
    if states.is_empty() {
        return Err(Error::InsufficientData("no states".into()));
    }
    if !(jitter >= 0.0) {
        return Err(Error::param("jitter", "must be nonnegative"));
    }
    let dim = states[0].len();
    for s in states {
        check_dim(dim, s.len())?;
    }
    let n = states.len();
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = kernel_unchecked(spec, &states[i], &states[j]);
            raw[(i, j)] = k;
            raw[(j, i)] = k;
        }
    }
    if raw.iter().all(|&x| x == 0.0) && jitter == 0.0 {
        return Ok(KernelMatrix {
            cholesky_l: raw.clone(),
            matrix: raw,
            jitter: 0.0,
        });
    }
    let base = jitter.max(JITTER_START);
    let attempts = std::iter::once(jitter).chain((0..=JITTER_DOUBLINGS).map(|k| base * 2f64.powi(k as i32)));
    let mut last = jitter;
    for attempt in attempts {
        last = attempt;
        let mut m = raw.clone();
        for i in 0..n {
            m[(i, i)] += attempt;
        }
        if let Some(ch) = m.clone().cholesky() {
            return Ok(KernelMatrix {
                matrix: m,
                jitter: attempt,
                cholesky_l: ch.unpack(),
            });
        }
    }
    Err(Error::Factorization { jitter: last })
}

/// Joint draw of a GP policy at `states`: an `n × action_dim` matrix whose
/// columns are independent `N(0, K)` vectors.
pub fn gp_sample_actions(spec: &KernelSpec, states: &[Vec<f64>], action_dim: usize, seed: u64) -> Result<DMatrix<f64>> {
    if action_dim == 0 {
        return Err(Error::param("action_dim", "must be positive"));
    }
    let km = kernel_matrix(spec, states, 0.0)?;
    let n = states.len();
    let mut rng = rng::stream(seed);
    let mut out = DMatrix::zeros(n, action_dim);
    for c in 0..action_dim {
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        out.set_column(c, &(&km.cholesky_l * z));
    }
    Ok(out)
}

/// Monte Carlo covariance estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Estimates `Cov[π_θ(s)₀, π_θ(s2)₀]` over `n_draws` independent nets.
pub fn mc_covariance(
    arch: &Architecture,
    init: &InitScheme,
    s: &[f64],
    s2: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    Ok(mc_covariance_pairs(arch, init, &[(s.to_vec(), s2.to_vec())], n_draws, seed)?[0].estimate)
}

/// Covariance estimates for several state pairs from one shared set of nets.
pub fn mc_covariance_pairs(
    arch: &Architecture,
    init: &InitScheme,
    pairs: &[(Vec<f64>, Vec<f64>)],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<CovEstimate>> {
    if n_draws < 2 {
        return Err(Error::param("n_draws", "need at least 2 draws"));
    }
    for (a, b) in pairs {
        check_dim(arch.input_dim, a.len())?;
        check_dim(arch.input_dim, b.len())?;
    }
    let mut net = sample_policy(arch, init, seed)?;
    let mut scratch = Scratch::default();
    let mut out = Vec::new();
    // Per pair: running sums of x, y, xy, (xy)².
    let mut acc = vec![[0.0f64; 5]; pairs.len()];
    for draw in 0..n_draws {
        net.resample(init, rng::split(seed, draw as u64));
        for ((a, b), sums) in pairs.iter().zip(acc.iter_mut()) {
            net.forward_into(a, &mut scratch, &mut out)?;
            let x = out[0];
            net.forward_into(b, &mut scratch, &mut out)?;
            let y = out[0];
            sums[0] += x;
            sums[1] += y;
            sums[2] += x * y;
            sums[3] += (x * y) * (x * y);
            sums[4] += 1.0;
        }
    }
    Ok(acc
        .into_iter()
        .map(|[sx, sy, sxy, sxy2, n]| {
            let (mx, my, mxy) = (sx / n, sy / n, sxy / n);
            let estimate = (sxy - n * mx * my) / (n - 1.0);
            let var_xy = (sxy2 / n - mxy * mxy).max(0.0);
            CovEstimate {
                estimate,
                stderr: (var_xy / n).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FRAC_1_PI: f64 = std::f64::consts::FRAC_1_PI;

    #[test]
    fn relu_kernel_reference_angles() {
        let spec = KernelSpec::relu(1.0, 0.0);
        assert!((kernel(&spec, &[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((kernel(&spec, &[1.0, 0.0], &[0.0, 1.0]).unwrap() - FRAC_1_PI).abs() < 1e-12);
        let biased = KernelSpec::relu(1.0, 0.25);
        assert!((kernel(&biased, &[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_gives_bias_variance() {
        let spec = KernelSpec::relu(2.0, 0.3);
        assert_eq!(kernel(&spec, &[0.0, 0.0], &[1.0, 5.0]).unwrap(), 0.3);
    }

    #[test]
    fn kernel_rejects_dimension_mismatch() {
        assert!(kernel(&KernelSpec::relu(1.0, 0.0), &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn clamped_cosine_near_parallel() {
        // Nearly parallel vectors can give |cos θ| slightly above 1.
        let spec = KernelSpec::relu(1.0, 0.0);
        let s = [0.1 + 0.2, 0.3];
        let k = kernel(&spec, &s, &s).unwrap();
        assert!(k.is_finite());
        assert!((k - dot(&s, &s)).abs() < 1e-12);
    }

    #[test]
    fn diffusion_conventions() {
        let spec = KernelSpec::relu(PI, 1.0);
        assert!((diffusion_coefficient(&spec, DiffusionConvention::Isotropic, &[1.0, 0.0]) - 2.0).abs() < 1e-12);
        assert_eq!(diffusion_coefficient(&spec, DiffusionConvention::Isotropic, &[0.0, 0.0]), 1.0);
        let unit = KernelSpec::relu(1.0, 0.0);
        let s = [2.0, 0.0];
        let d = diffusion_coefficient(&unit, DiffusionConvention::KernelDiagonal, &s);
        assert!((d - 4.0).abs() < 1e-12);
        assert!((d - kernel(&unit, &s, &s).unwrap()).abs() < 1e-12);
        let rbf = KernelSpec::rbf(0.3, 0.1, 2.0);
        assert_eq!(diffusion_coefficient(&rbf, DiffusionConvention::Isotropic, &[9.0, 9.0]), 0.4);
    }

    #[test]
    fn single_state_matrix() {
        let km = kernel_matrix(&KernelSpec::relu(1.0, 0.0), &[vec![1.0, 0.0]], 0.0).unwrap();
        assert_eq!(km.matrix.shape(), (1, 1));
        assert!((km.matrix[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(km.jitter, 0.0);
    }

    #[test]
    fn duplicated_states_factor_with_jitter() {
        let states = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let km = kernel_matrix(&KernelSpec::relu(1.0, 0.0), &states, 1e-8).unwrap();
        assert!(km.jitter >= 1e-8);
        let km0 = kernel_matrix(&KernelSpec::relu(1.0, 0.0), &states, 0.0).unwrap();
        assert!(km0.jitter > 0.0 && km0.jitter <= JITTER_START * 2f64.powi(JITTER_DOUBLINGS as i32));
    }

    #[test]
    fn factorization_error_reports_final_jitter() {
        // An indefinite "kernel" cannot exist, so force failure through a
        // huge rank-deficient block that jitter this small cannot fix.
        let spec = KernelSpec::relu(1e12, 0.0);
        let s = vec![1.0, 1.0];
        let states = vec![s.clone(), s.clone(), s];
        match kernel_matrix(&spec, &states, 0.0) {
            Err(Error::Factorization { jitter }) => {
                assert!((jitter - JITTER_START * 2f64.powi(JITTER_DOUBLINGS as i32)).abs() < 1e-20)
            }
            Ok(km) => {
                // Roundoff may leave the block barely positive; the factor
                // must then still reproduce the matrix.
                let l = &km.cholesky_l;
                assert!((l * l.transpose() - &km.matrix).abs().max() < 1e-3 * 1e12);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn zero_covariance_samples_are_zero() {
        let spec = KernelSpec::relu(0.0, 0.0);
        let states = vec![vec![1.0, 0.0], vec![0.0, 3.0]];
        let a = gp_sample_actions(&spec, &states, 2, 1).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rbf_is_shift_invariant() {
        let spec = KernelSpec::rbf(1.3, 0.2, 0.7);
        let (s, s2) = ([0.4, -1.0], [1.1, 0.5]);
        let base = kernel(&spec, &s, &s2).unwrap();
        let mut rng = rng::stream(3);
        for _ in 0..20 {
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let a: Vec<f64> = s.iter().zip(&v).map(|(x, y)| x + y).collect();
            let b: Vec<f64> = s2.iter().zip(&v).map(|(x, y)| x + y).collect();
            assert!((kernel(&spec, &a, &b).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_kernel_is_not_stationary() {
        let spec = KernelSpec::relu(1.0, 0.1);
        let (s, s2, v) = ([1.0, 0.0], [0.0, 1.0], [2.0, -0.5]);
        let a = [s[0] + v[0], s[1] + v[1]];
        let b = [s2[0] + v[0], s2[1] + v[1]];
        let shifted = kernel(&spec, &a, &b).unwrap();
        assert!((shifted - kernel(&spec, &s, &s2).unwrap()).abs() > 1e-3);
    }
}
