use polexp_core::analysis::{
    drift_estimate, geometric_check, log_edges, msd, msd_exponent, quadratic_check, radial_histogram_from_radii,
    tail_exponent, BallisticReport, TailFit,
};
use polexp_core::fokker_planck::{
    ball_volume, closed_form_value, compare_l1, evolve_radial, stationary_closed_form, DensityForm, FpConfig,
    RadialDensity,
};
use polexp_core::hallway::HallwayReport;
use polexp_core::nngp::{diffusion_coefficient, kernel_matrix, mc_covariance_pairs, CovEstimate};
use polexp_core::policy::sample_policy;
use polexp_core::rollout::{map_ensemble, rollout_fixed, run_ensemble};
use polexp_core::stats::LineFit;
use polexp_core::{rng, DiffusionConvention, KernelSpec, ModeConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BoundCheckConfig, HallwayConfig, KernelConfig, RolloutConfig, SteadyStateConfig};
use crate::error::CliError;
use crate::output::{num, OutputDir};

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize)]
struct RolloutReport {
    mode: &'static str,
    n: usize,
    horizon: usize,
    dim: usize,
    final_msd: f64,
    msd_exponent: Option<LineFit>,
    mean_resets: f64,
}

pub fn rollout(cfg: &RolloutConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let ens = run_ensemble(&cfg.mode, &cfg.env, &cfg.s0, cfg.horizon, cfg.n, cfg.seed)?;
    let d = cfg.env.dim;
    let mut columns = cols(&["traj_id", "t"]);
    columns.extend((0..d).map(|i| format!("s_{i}")));
    columns.extend((0..d).map(|i| format!("a_{i}")));
    let mut rows = Vec::with_capacity(cfg.n * (cfg.horizon + 1));
    for (id, tr) in ens.trajectories.iter().enumerate() {
        for (t, s) in tr.states.iter().enumerate() {
            let mut row = vec![id.to_string(), t.to_string()];
            row.extend(s.iter().map(|&x| num(x)));
            match tr.actions.get(t) {
                Some(a) => row.extend(a.iter().map(|&x| num(x))),
                None => row.extend((0..d).map(|_| String::new())),
            }
            rows.push(row);
        }
    }
    out.csv("trajectories.csv", &columns, &rows)?;

    let m = msd(&ens)?;
    let msd_rows: Vec<Vec<String>> = m.iter().enumerate().map(|(t, v)| vec![t.to_string(), num(*v)]).collect();
    out.csv("msd.csv", &cols(&["t", "msd"]), &msd_rows)?;
    let window = cfg.msd_window.or(if cfg.horizon >= 2 { Some((1, cfg.horizon)) } else { None });
    let msd_exponent = window.and_then(|(t0, t1)| msd_exponent(&m, t0, t1).ok());
    out.json(
        "rollout.json",
        &RolloutReport {
            mode: cfg.mode.mode().name(),
            n: cfg.n,
            horizon: cfg.horizon,
            dim: d,
            final_msd: m[cfg.horizon],
            msd_exponent,
            mean_resets: ens.trajectories.iter().map(|t| t.n_resets as f64).sum::<f64>() / cfg.n as f64,
        },
    )
}

#[derive(Serialize)]
struct PairCheck {
    i: usize,
    j: usize,
    kernel: f64,
    mc: CovEstimate,
    relative_error: Option<f64>,
}

#[derive(Serialize)]
struct KernelReport {
    n_states: usize,
    jitter_used: f64,
    diffusion_isotropic: Vec<f64>,
    diffusion_kernel_diagonal: Vec<f64>,
    mc: Vec<PairCheck>,
}

pub fn kernel(cfg: &KernelConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let km = kernel_matrix(&cfg.kernel, &cfg.states, cfg.jitter)?;
    let n = cfg.states.len();
    let mut columns = cols(&["i"]);
    columns.extend((0..n).map(|j| format!("k_{j}")));
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| std::iter::once(i.to_string()).chain((0..n).map(|j| num(km.matrix[(i, j)]))).collect())
        .collect();
    out.csv("kernel.csv", &columns, &rows)?;

    let mut checks = Vec::new();
    if let Some(mc) = &cfg.mc {
        let index: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            index.iter().map(|&(i, j)| (cfg.states[i].clone(), cfg.states[j].clone())).collect();
        let est = mc_covariance_pairs(&mc.policy.arch, &mc.policy.init, &pairs, mc.n_draws, cfg.seed)?;
        for (&(i, j), e) in index.iter().zip(est) {
            let k = polexp_core::nngp::kernel(&cfg.kernel, &cfg.states[i], &cfg.states[j])?;
            checks.push(PairCheck {
                i,
                j,
                kernel: k,
                mc: e,
                relative_error: (k != 0.0).then(|| (e.estimate - k).abs() / k.abs()),
            });
        }
    }
    let diffusion = |c| cfg.states.iter().map(|s| diffusion_coefficient(&cfg.kernel, c, s)).collect();
    out.json(
        "kernel.json",
        &KernelReport {
            n_states: n,
            jitter_used: km.jitter,
            diffusion_isotropic: diffusion(DiffusionConvention::Isotropic),
            diffusion_kernel_diagonal: diffusion(DiffusionConvention::KernelDiagonal),
            mc: checks,
        },
    )
}

#[derive(Serialize)]
struct NetCheck {
    net_id: usize,
    net_seed: u64,
    l_pi: f64,
    c: Vec<f64>,
    horizon: Option<f64>,
    violations: usize,
    max_error: f64,
}

#[derive(Serialize)]
struct BoundReport {
    bound: &'static str,
    n_nets: usize,
    total_violations: usize,
    nets: Vec<NetCheck>,
}

pub fn bound_check(cfg: &BoundCheckConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let quadratic = cfg.env.l_s == 1.0;
    let results: Vec<(NetCheck, BallisticReport)> = (0..cfg.n_nets)
        .into_par_iter()
        .map(|i| {
            let net_seed = rng::fixed_net_seed(rng::trajectory_seed(cfg.seed, i as u64));
            let net = sample_policy(&cfg.policy.arch, &cfg.policy.init, net_seed)?;
            let traj = rollout_fixed(&net, &cfg.env, &cfg.s0, cfg.horizon)?;
            let l_pi = net.lipschitz_upper_bound();
            let c = drift_estimate(&traj, cfg.drift)?;
            let report = if quadratic {
                quadratic_check(&traj, &cfg.env, l_pi, &c)?
            } else {
                geometric_check(&traj, &cfg.env, l_pi, &c)?
            };
            let check = NetCheck {
                net_id: i,
                net_seed,
                l_pi,
                c,
                horizon: report.horizon,
                violations: report.violations.len(),
                max_error: report.eps_series.iter().copied().fold(0.0, f64::max),
            };
            Ok((check, report))
        })
        .collect::<polexp_core::Result<_>>()?;
    let mut rows = Vec::new();
    for (check, report) in &results {
        for (t, (e, b)) in report.eps_series.iter().zip(&report.bound_series).enumerate() {
            rows.push(vec![check.net_id.to_string(), t.to_string(), num(*e), num(*b)]);
        }
    }
    out.csv("bounds.csv", &cols(&["net_id", "t", "eps", "bound"]), &rows)?;
    let nets: Vec<NetCheck> = results.into_iter().map(|(c, _)| c).collect();
    out.json(
        "bound_check.json",
        &BoundReport {
            bound: if quadratic { "quadratic" } else { "geometric" },
            n_nets: cfg.n_nets,
            total_violations: nets.iter().map(|n| n.violations).sum(),
            nets,
        },
    )
}

pub fn hallway(cfg: &HallwayConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let report: HallwayReport = cfg.benchmark.run(cfg.seed)?;
    let rows: Vec<Vec<String>> = report
        .outcomes
        .iter()
        .map(|o| {
            vec![
                o.mode.clone(),
                o.rate.passed.to_string(),
                o.rate.n.to_string(),
                num(o.rate.rate),
                num(o.rate.lo),
                num(o.rate.hi),
            ]
        })
        .collect();
    out.csv("hallway.csv", &cols(&["mode", "passed", "n", "rate", "lo", "hi"]), &rows)?;
    out.json("hallway.json", &report)
}

#[derive(Serialize)]
struct FormSlopes {
    power_law: f64,
    harmonic_flux: f64,
}

#[derive(Serialize)]
struct FpSummary {
    dt: f64,
    steps: usize,
    final_time: f64,
    mass: f64,
    l1_to_power_law: f64,
    l1_to_harmonic_flux: f64,
}

#[derive(Serialize)]
struct SteadyReport {
    n: usize,
    horizon: usize,
    empirical_tail: Option<TailFit>,
    tail_error: Option<String>,
    closed_form_slopes: FormSlopes,
    /// Radius where the quadratic term of Σ overtakes σ_b².
    crossover_radius: f64,
    fp: FpSummary,
}

fn closed_slope(form: DensityForm, fp: &FpConfig, lo: f64, hi: f64) -> Result<f64, CliError> {
    let r_grid: Vec<f64> = (0..=40).map(|i| lo * (hi / lo).powf(i as f64 / 40.0)).collect();
    let values = r_grid
        .iter()
        .map(|&r| closed_form_value(form, fp, r))
        .collect::<polexp_core::Result<_>>()?;
    let dens = RadialDensity {
        r_grid,
        values,
        d: fp.d,
        truncation: hi,
        form,
        bin_edges: None,
        counts: None,
    };
    Ok(tail_exponent(&dens, lo, hi)?.slope)
}

pub fn steady_state(cfg: &SteadyStateConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let mut fp = cfg.fp.clone();
    if fp.dt <= 0.0 {
        fp.dt = fp.stable_dt();
    }
    let d = fp.d;
    let mode = ModeConfig::PerStepGp {
        kernel: KernelSpec::relu(fp.sigma_w2, fp.sigma_b2),
        convention: fp.convention,
    };
    let env = polexp_core::EnvSpec::integrator(d);
    let radii = map_ensemble(&mode, &env, &vec![0.0; d], cfg.horizon, cfg.n, cfg.seed, |_, mut st| {
        while st.advance()? {}
        Ok(st.state().iter().map(|x| x * x).sum::<f64>().sqrt())
    })?;
    let edges = log_edges(cfg.r_min, cfg.r_max, cfg.n_bins);
    let hist = radial_histogram_from_radii(&radii, d, &edges, true)?;
    let (lo, hi) = cfg.fit_range;
    let (empirical_tail, tail_error) = match tail_exponent(&hist, lo, hi) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };

    // Closed forms on the histogram bins, scaled to the histogram's mass.
    let hist_mass = hist.mass();
    let mut scaled = Vec::new();
    for form in [DensityForm::PowerLaw, DensityForm::HarmonicFlux] {
        let raw: Vec<f64> = hist
            .r_grid
            .iter()
            .map(|&r| closed_form_value(form, &fp, r))
            .collect::<polexp_core::Result<_>>()?;
        let mass: f64 = raw
            .iter()
            .zip(edges.windows(2))
            .map(|(v, w)| v * (ball_volume(d, w[1]) - ball_volume(d, w[0])))
            .sum();
        scaled.push(raw.into_iter().map(|v| v * hist_mass / mass).collect::<Vec<f64>>());
    }
    let counts = hist.counts.clone().unwrap_or_default();
    let rows: Vec<Vec<String>> = (0..hist.values.len())
        .map(|i| {
            vec![
                num(hist.r_grid[i]),
                num(edges[i]),
                num(edges[i + 1]),
                counts[i].to_string(),
                num(hist.values[i]),
                num(scaled[0][i]),
                num(scaled[1][i]),
            ]
        })
        .collect();
    out.csv(
        "empirical_density.csv",
        &cols(&["r", "r_lo", "r_hi", "count", "density", "power_law", "harmonic_flux"]),
        &rows,
    )?;

    // Numeric solution from a bump at a tenth of the domain radius.
    let width = 0.05 * fp.radius;
    let p0 = fp.density_from(DensityForm::Numeric, |r| (-(r - 0.1 * fp.radius).powi(2) / (2.0 * width * width)).exp())?;
    let steps = (cfg.fp_time / fp.dt).ceil() as usize;
    let snaps = evolve_radial(&fp, &p0, steps, steps.max(1))?;
    let last = &snaps.last().expect("at least one snapshot").density;
    let power = stationary_closed_form(DensityForm::PowerLaw, &fp);
    let harmonic = stationary_closed_form(DensityForm::HarmonicFlux, &fp);
    let (power, harmonic) = match (power, harmonic) {
        (Ok(p), Ok(h)) => (p, h),
        (Err(e), _) | (_, Err(e)) => return Err(CliError::Config(e.to_string())),
    };
    let rows: Vec<Vec<String>> = (0..last.values.len())
        .map(|i| {
            vec![
                num(last.r_grid[i]),
                num(last.values[i]),
                num(power.values[i]),
                num(harmonic.values[i]),
            ]
        })
        .collect();
    out.csv("fp_density.csv", &cols(&["r", "numeric", "power_law", "harmonic_flux"]), &rows)?;

    let a = fp.radial_coefficient();
    out.json(
        "steady_state.json",
        &SteadyReport {
            n: cfg.n,
            horizon: cfg.horizon,
            empirical_tail,
            tail_error,
            closed_form_slopes: FormSlopes {
                power_law: closed_slope(DensityForm::PowerLaw, &fp, lo, hi)?,
                harmonic_flux: closed_slope(DensityForm::HarmonicFlux, &fp, lo, hi)?,
            },
            crossover_radius: if a > 0.0 { (fp.sigma_b2 / a).sqrt() } else { f64::INFINITY },
            fp: FpSummary {
                dt: fp.dt,
                steps,
                final_time: snaps.last().map(|s| s.t).unwrap_or(0.0),
                mass: last.mass(),
                l1_to_power_law: compare_l1(last, &power)?,
                l1_to_harmonic_flux: compare_l1(last, &harmonic)?,
            },
        },
    )
}
