//! Radial densities, closed-form stationary states and a conservative
//! finite-volume solver for the radially symmetric Fokker–Planck equation
//!
//! ```text
//! ∂p/∂t = ½ r^{1−d} ∂_r [ r^{d−1} ∂_r (Σ(r) p) ]
//! ```
//!
//! on a disk/ball of radius `R` with zero-flux boundaries.
//!
//! Two stationary candidates are provided. `PowerLaw` is
//! `(σ_b² + a·r²)^{−d/2}`; `HarmonicFlux` is `1/Σ`, the regular solution with
//! `Σ·p` constant. They coincide for `d = 2`. Free-space versions of both are
//! not normalizable, so every density here lives on `[0, R]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nngp::DiffusionConvention;

/// Positivity floor below which evolved values are clipped to zero.
pub const POSITIVITY_FLOOR: f64 = -1e-14;

/// Surface area of the unit sphere in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * unit_sphere_area(d - 2) / (d - 2) as f64,
    }
}

/// Volume of the ball of radius `r` in `R^d`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_sphere_area(d) * r.powi(d as i32) / d as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityForm {
    PowerLaw,
    HarmonicFlux,
    Numeric,
    Empirical,
}

impl DensityForm {
    pub fn name(self) -> &'static str {
        match self {
            DensityForm::PowerLaw => "power_law",
            DensityForm::HarmonicFlux => "harmonic_flux",
            DensityForm::Numeric => "numeric",
            DensityForm::Empirical => "empirical",
        }
    }
}

/// A radially symmetric density per unit d-volume, `p(s) = f(‖s‖)`.
///
/// When `bin_edges` is present each value is a shell average over
/// `[edges[i], edges[i+1]]` and integrals are exact sums over shells;
/// otherwise values are point samples integrated with the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialDensity {
    pub r_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub d: usize,
    pub truncation: f64,
    pub form: DensityForm,
    pub bin_edges: Option<Vec<f64>>,
    /// Sample counts per bin (empirical densities only).
    pub counts: Option<Vec<u64>>,
}

impl RadialDensity {
    pub fn shell_volumes(&self) -> Option<Vec<f64>> {
        self.bin_edges
            .as_ref()
            .map(|e| e.windows(2).map(|w| ball_volume(self.d, w[1]) - ball_volume(self.d, w[0])).collect())
    }

    /// `∫ f(r) S_d r^{d−1} dr` over the grid.
    pub fn mass(&self) -> f64 {
        integrate(self, &self.values)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InsufficientData("density has no finite positive mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(self)
    }

    /// `E[r²]` under the density.
    pub fn second_moment(&self) -> f64 {
        let weighted: Vec<f64> = match &self.bin_edges {
            // Exact shell average of r² for a flat density within the shell.
            Some(e) => self
                .values
                .iter()
                .zip(e.windows(2))
                .map(|(v, w)| {
                    let d = self.d as f64;
                    let (a, b) = (w[0], w[1]);
                    let r2 = d / (d + 2.0) * (b.powf(d + 2.0) - a.powf(d + 2.0)) / (b.powf(d) - a.powf(d));
                    v * r2
                })
                .collect(),
            None => self.values.iter().zip(&self.r_grid).map(|(v, r)| v * r * r).collect(),
        };
        integrate(self, &weighted)
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.d == other.d && self.r_grid == other.r_grid && self.bin_edges == other.bin_edges
    }
}

fn integrate(density: &RadialDensity, values: &[f64]) -> f64 {
    match density.shell_volumes() {
        Some(vols) => values.iter().zip(&vols).map(|(v, w)| v * w).sum(),
        None => {
            let s_d = unit_sphere_area(density.d);
            let dm1 = density.d as i32 - 1;
            let g: Vec<f64> = values
                .iter()
                .zip(&density.r_grid)
                .map(|(v, r)| v * s_d * r.powi(dm1))
                .collect();
            density
                .r_grid
                .windows(2)
                .zip(g.windows(2))
                .map(|(r, g)| 0.5 * (r[1] - r[0]) * (g[0] + g[1]))
                .sum()
        }
    }
}

/// `∫ |a − b| S_d r^{d−1} dr`.
pub fn compare_l1(a: &RadialDensity, b: &RadialDensity) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
    Ok(integrate(a, &diff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Reflecting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpConfig {
    pub d: usize,
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    #[serde(default)]
    pub convention: DiffusionConvention,
    /// Constant drift μ₀. Only zero drift is supported by the radial solver.
    #[serde(default)]
    pub drift: Vec<f64>,
    pub radius: f64,
    pub n_cells: usize,
    pub dt: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl FpConfig {
    pub fn cell_width(&self) -> f64 {
        self.radius / self.n_cells as f64
    }

    pub fn sigma(&self, r: f64) -> f64 {
        self.convention.sigma(self.sigma_w2, self.sigma_b2, r * r)
    }

    /// Coefficient `a` in `Σ(r) = σ_b² + a·r²`.
    pub fn radial_coefficient(&self) -> f64 {
        match self.convention {
            DiffusionConvention::Isotropic => self.sigma_w2 / PI,
            DiffusionConvention::KernelDiagonal => self.sigma_w2,
        }
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        let h = self.cell_width();
        (0..self.n_cells).map(|i| (i as f64 + 0.5) * h).collect()
    }

    pub fn cell_faces(&self) -> Vec<f64> {
        let h = self.cell_width();
        (0..=self.n_cells).map(|i| i as f64 * h).collect()
    }

    /// Largest stable explicit time step: `0.4·Δr²/max Σ`, tightened in high
    /// dimension so the innermost cell keeps a nonnegative update.
    pub fn stable_dt(&self) -> f64 {
        let h = self.cell_width();
        let max_sigma = self.cell_centers().iter().map(|&r| self.sigma(r)).fold(0.0, f64::max);
        if max_sigma == 0.0 {
            return f64::INFINITY;
        }
        let general = 0.4 * h * h / max_sigma;
        let inner = 2.0 * h * h / (self.d as f64 * self.sigma(0.5 * h));
        general.min(inner)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::param("d", "must be positive"));
        }
        if !(self.sigma_w2 >= 0.0) || !(self.sigma_b2 >= 0.0) {
            return Err(Error::param("sigma", "variances must be nonnegative"));
        }
        if self.drift.iter().any(|&m| m != 0.0) {
            return Err(Error::param("drift", "only zero drift keeps the problem radial"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::param("radius", "must be positive"));
        }
        if self.n_cells < 32 {
            return Err(Error::param("n_cells", "need at least 32 cells"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        Ok(())
    }

    /// Cell-averaged density from a pointwise profile, normalized on the grid.
    pub fn density_from(&self, form: DensityForm, f: impl Fn(f64) -> f64) -> Result<RadialDensity> {
        RadialDensity {
            r_grid: self.cell_centers(),
            values: self.cell_centers().into_iter().map(f).collect(),
            d: self.d,
            truncation: self.radius,
            form,
            bin_edges: Some(self.cell_faces()),
            counts: None,
        }
        .normalized()
    }
}

/// Unnormalized closed-form stationary profile at radius `r`.
pub fn closed_form_value(form: DensityForm, cfg: &FpConfig, r: f64) -> Result<f64> {
    let sigma = cfg.sigma(r);
    match form {
        DensityForm::PowerLaw => Ok(sigma.powf(-(cfg.d as f64) / 2.0)),
        DensityForm::HarmonicFlux => Ok(1.0 / sigma),
        _ => Err(Error::param("form", "not a closed form")),
    }
}

/// Normalized closed-form stationary density on the solver grid.
pub fn stationary_closed_form(form: DensityForm, cfg: &FpConfig) -> Result<RadialDensity> {
    cfg.validate()?;
    if cfg.sigma_b2 == 0.0 {
        return Err(Error::param(
            "sigma_b2",
            "zero bias variance makes the profile singular at the origin",
        ));
    }
    closed_form_value(form, cfg, 0.0)?;
    cfg.density_from(form, |r| closed_form_value(form, cfg, r).unwrap_or(f64::NAN))
}

/// Radial Laplacian `g'' + (d−1)/r·g'` of `g = Σ·f` for a closed form,
/// evaluated analytically.
///
/// With `Σ = b + a r²` and `g = Σ^m` the Laplacian is `2·a·b·d·m·Σ^{m−2}`,
/// so it vanishes for the harmonic form (`m = 0`) and for the power-law form
/// (`m = 1 − d/2`) exactly when `d = 2` or `b = 0`.
pub fn stationarity_residual(form: DensityForm, cfg: &FpConfig, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    let m = match form {
        DensityForm::PowerLaw => 1.0 - cfg.d as f64 / 2.0,
        DensityForm::HarmonicFlux => 0.0,
        _ => return Err(Error::param("form", "not a closed form")),
    };
    let (a, b) = (cfg.radial_coefficient(), cfg.sigma_b2);
    let sigma = cfg.sigma(r);
    Ok(2.0 * a * b * cfg.d as f64 * m * sigma.powf(m - 2.0))
}

/// Fourth-order finite-difference radial Laplacian of `g` at `r`, step
/// `1e-4·r`.
pub fn radial_laplacian_fd(g: impl Fn(f64) -> f64, d: usize, r: f64) -> f64 {
    let h = 1e-4 * r;
    let (m2, m1, c, p1, p2) = (g(r - 2.0 * h), g(r - h), g(r), g(r + h), g(r + 2.0 * h));
    let second = (-p2 + 16.0 * p1 - 30.0 * c + 16.0 * m1 - m2) / (12.0 * h * h);
    let first = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    second + (d as f64 - 1.0) / r * first
}

/// Explicit conservative finite-volume solver.
#[derive(Debug, Clone)]
pub struct FpSolver {
    cfg: FpConfig,
    p: Vec<f64>,
    sigma: Vec<f64>,
    volumes: Vec<f64>,
    /// Interior face areas divided by `2Δr`, faces `1..n`.
    conductance: Vec<f64>,
    flux: Vec<f64>,
    time: f64,
    clipped: usize,
}

impl FpSolver {
    pub fn new(cfg: &FpConfig, p0: &RadialDensity) -> Result<Self> {
        cfg.validate()?;
        let limit = cfg.stable_dt();
        if cfg.dt > limit {
            return Err(Error::Unstable { dt: cfg.dt, limit });
        }
        let centers = cfg.cell_centers();
        let faces = cfg.cell_faces();
        if p0.d != cfg.d || p0.r_grid != centers || p0.bin_edges.as_deref() != Some(&faces[..]) {
            return Err(Error::GridMismatch);
        }
        let h = cfg.cell_width();
        let s_d = unit_sphere_area(cfg.d);
        let volumes = faces.windows(2).map(|w| ball_volume(cfg.d, w[1]) - ball_volume(cfg.d, w[0])).collect();
        let conductance = faces[1..cfg.n_cells]
            .iter()
            .map(|&r| s_d * r.powi(cfg.d as i32 - 1) / (2.0 * h))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            p: p0.values.clone(),
            sigma: centers.iter().map(|&r| cfg.sigma(r)).collect(),
            volumes,
            conductance,
            flux: vec![0.0; cfg.n_cells + 1],
            time: 0.0,
            clipped: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of values clipped at the positivity floor so far.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().zip(&self.volumes).map(|(p, v)| p * v).sum()
    }

    pub fn step(&mut self) {
        let n = self.cfg.n_cells;
        // Outward flux through face i (between cells i−1 and i); faces 0 and
        // n carry none.
        for i in 1..n {
            let g_in = self.sigma[i - 1] * self.p[i - 1];
            let g_out = self.sigma[i] * self.p[i];
            self.flux[i] = -self.conductance[i - 1] * (g_out - g_in);
        }
        let dt = self.cfg.dt;
        for i in 0..n {
            self.p[i] += dt * (self.flux[i] - self.flux[i + 1]) / self.volumes[i];
            if self.p[i] < 0.0 {
                if self.p[i] < POSITIVITY_FLOOR {
                    self.clipped += 1;
                    self.p[i] = 0.0;
                } else {
                    self.p[i] = 0.0;
                }
            }
        }
        self.time += dt;
    }

    pub fn density(&self) -> RadialDensity {
        RadialDensity {
            r_grid: self.cfg.cell_centers(),
            values: self.p.clone(),
            d: self.cfg.d,
            truncation: self.cfg.radius,
            form: DensityForm::Numeric,
            bin_edges: Some(self.cfg.cell_faces()),
            counts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub density: RadialDensity,
}

/// Evolves `p0` for `n_steps`, recording a snapshot every `every` steps (and
/// always the first and last state).
pub fn evolve_radial(cfg: &FpConfig, p0: &RadialDensity, n_steps: usize, every: usize) -> Result<Vec<Snapshot>> {
    let mut solver = FpSolver::new(cfg, p0)?;
    let every = every.max(1);
    let mut out = vec![Snapshot {
        t: 0.0,
        density: solver.density(),
    }];
    for k in 1..=n_steps {
        solver.step();
        if k % every == 0 || k == n_steps {
            out.push(Snapshot {
                t: solver.time(),
                density: solver.density(),
            });
        }
    }
    if solver.clipped() > 0 {
        log::warn!("{} density values fell below {POSITIVITY_FLOOR:e} and were clipped", solver.clipped());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, sigma_w2: f64, sigma_b2: f64) -> FpConfig {
        let mut c = FpConfig {
            d,
            sigma_w2,
            sigma_b2,
            convention: DiffusionConvention::Isotropic,
            drift: vec![],
            radius: 4.0,
            n_cells: 64,
            dt: 1.0,
            boundary: Boundary::Reflecting,
        };
        c.dt = c.stable_dt();
        c
    }

    #[test]
    fn sphere_areas() {
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert!((unit_sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((ball_volume(3, 2.0) - 4.0 / 3.0 * PI * 8.0).abs() < 1e-12);
    }

    #[test]
    fn eq3_ratio_at_unit_radius() {
        let c = cfg(2, PI, 1.0);
        let ratio = closed_form_value(DensityForm::PowerLaw, &c, 1.0).unwrap()
            / closed_form_value(DensityForm::PowerLaw, &c, 0.0).unwrap();
        assert!((ratio - 0.5).abs() < 1e-15);
    }

    #[test]
    fn forms_coincide_in_two_dimensions() {
        let c = cfg(2, 0.7, 0.3);
        let a = stationary_closed_form(DensityForm::PowerLaw, &c).unwrap();
        let b = stationary_closed_form(DensityForm::HarmonicFlux, &c).unwrap();
        assert!(compare_l1(&a, &b).unwrap() < 1e-12);
        assert!((a.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_profile_is_rejected() {
        assert!(stationary_closed_form(DensityForm::HarmonicFlux, &cfg(2, 1.0, 0.0)).is_err());
    }

    #[test]
    fn residuals_match_finite_differences() {
        for (d, b) in [(2, 0.5), (3, 0.5), (3, 0.0), (5, 1.0)] {
            let c = cfg(d, 2.0, b);
            for form in [DensityForm::PowerLaw, DensityForm::HarmonicFlux] {
                for r in [0.3, 1.0, 2.5] {
                    let analytic = stationarity_residual(form, &c, r).unwrap();
                    let g = |x: f64| c.sigma(x) * closed_form_value(form, &c, x).unwrap();
                    let fd = radial_laplacian_fd(g, d, r);
                    assert!((analytic - fd).abs() < 1e-5 * (1.0 + analytic.abs()), "d={d} b={b} r={r}: {analytic} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn eq3_residual_vanishes_only_in_special_cases() {
        let r = 1.3;
        assert!(stationarity_residual(DensityForm::PowerLaw, &cfg(2, 1.0, 0.5), r).unwrap().abs() < 1e-8);
        assert!(stationarity_residual(DensityForm::PowerLaw, &cfg(3, 1.0, 0.0), r).unwrap().abs() < 1e-6);
        assert!(stationarity_residual(DensityForm::PowerLaw, &cfg(3, 1.0, 0.5), r).unwrap().abs() > 1e-3);
        assert_eq!(stationarity_residual(DensityForm::HarmonicFlux, &cfg(4, 1.0, 0.5), r).unwrap(), 0.0);
    }

    #[test]
    fn l1_of_identical_and_disjoint() {
        let c = cfg(2, 1.0, 1.0);
        let a = c.density_from(DensityForm::Numeric, |r| if r < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let b = c.density_from(DensityForm::Numeric, |r| if r > 2.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(compare_l1(&a, &a).unwrap(), 0.0);
        assert!((compare_l1(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch() {
        let a = stationary_closed_form(DensityForm::HarmonicFlux, &cfg(2, 1.0, 1.0)).unwrap();
        let mut other = cfg(2, 1.0, 1.0);
        other.radius = 5.0;
        let b = stationary_closed_form(DensityForm::HarmonicFlux, &other).unwrap();
        assert_eq!(compare_l1(&a, &b), Err(Error::GridMismatch));
    }

    #[test]
    fn unstable_dt_is_rejected_before_running() {
        let mut c = cfg(2, 1.0, 1.0);
        let p0 = stationary_closed_form(DensityForm::HarmonicFlux, &c).unwrap();
        c.dt *= 1.5;
        assert!(matches!(evolve_radial(&c, &p0, 10, 1), Err(Error::Unstable { .. })));
    }

    #[test]
    fn nonzero_drift_is_rejected() {
        let mut c = cfg(2, 1.0, 1.0);
        c.drift = vec![0.1, 0.0];
        assert!(c.validate().is_err());
    }
}
