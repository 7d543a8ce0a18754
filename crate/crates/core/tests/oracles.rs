//! Library results checked against independent reference computations.

use std::f64::consts::PI;

use polexp_core::analysis::{drift_estimate, geometric_check, quadratic_bound, validity_horizon, DriftMethod};
use polexp_core::fokker_planck::{evolve_radial, stationary_closed_form, Boundary, DensityForm, FpConfig};
use polexp_core::hallway::HallwayBenchmark;
use polexp_core::nngp::{gp_sample_actions, kernel};
use polexp_core::policy::sample_policy;
use polexp_core::rollout::rollout_fixed;
use polexp_core::{Activation, Architecture, DiffusionConvention, EnvSpec, HallwaySpec, InitScheme, KernelSpec};

/// `E[φ(w·s) φ(w·t)]` for `w ~ N(0, 2I)` in two dimensions by angular
/// quadrature: the radial part integrates to 2, so the expectation is
/// `(2/π)·‖s‖‖t‖·∫ relu(cos(φ−α)) relu(cos(φ−β)) dφ`.
fn relu_kernel_by_quadrature(s: [f64; 2], t: [f64; 2]) -> f64 {
    let (ns, nt) = (s[0].hypot(s[1]), t[0].hypot(t[1]));
    let (a, b) = (s[1].atan2(s[0]), t[1].atan2(t[0]));
    let n = 400_000;
    let h = 2.0 * PI / n as f64;
    let integral: f64 = (0..n)
        .map(|i| {
            let phi = (i as f64 + 0.5) * h;
            (phi - a).cos().max(0.0) * (phi - b).cos().max(0.0)
        })
        .sum::<f64>()
        * h;
    2.0 / PI * ns * nt * integral
}

#[test]
fn relu_kernel_matches_quadrature() {
    let spec = KernelSpec::relu(1.0, 0.0);
    for (s, t) in [
        ([1.0, 0.0], [1.0, 0.0]),
        ([1.0, 0.0], [0.0, 2.0]),
        ([0.3, -1.2], [-0.8, 0.5]),
        ([2.0, 1.0], [1.5, 1.4]),
        ([1.0, 1.0], [-1.0, -1.0]),
    ] {
        let want = relu_kernel_by_quadrature(s, t);
        let got = kernel(&spec, &s, &t).unwrap();
        assert!((got - want).abs() < 1e-8, "{s:?} {t:?}: {got} vs {want}");
    }
}

#[test]
fn gp_draws_have_the_kernel_covariance() {
    let spec = KernelSpec::relu(1.0, 0.2);
    let states = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![-0.3, 1.0]];
    let n = 20_000;
    let mut acc = [[0.0; 3]; 3];
    for seed in 0..n {
        let a = gp_sample_actions(&spec, &states, 1, seed).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                acc[i][j] += a[(i, 0)] * a[(j, 0)] / n as f64;
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let k = kernel(&spec, &states[i], &states[j]).unwrap();
            let kii = kernel(&spec, &states[i], &states[i]).unwrap();
            let kjj = kernel(&spec, &states[j], &states[j]).unwrap();
            let se = ((kii * kjj + k * k) / n as f64).sqrt();
            assert!((acc[i][j] - k).abs() < 4.0 * se, "({i},{j}): {} vs {k}", acc[i][j]);
        }
    }
}

#[test]
fn zero_flux_state_is_a_fixed_point_of_the_solver() {
    for d in [1, 2, 3, 4] {
        let mut cfg = FpConfig {
            d,
            sigma_w2: 2.0,
            sigma_b2: 0.5,
            convention: DiffusionConvention::KernelDiagonal,
            drift: vec![],
            radius: 3.0,
            n_cells: 40,
            dt: 1.0,
            boundary: Boundary::Reflecting,
        };
        cfg.dt = cfg.stable_dt();
        let p = stationary_closed_form(DensityForm::HarmonicFlux, &cfg).unwrap();
        let snaps = evolve_radial(&cfg, &p, 2000, 2000).unwrap();
        let last = &snaps.last().unwrap().density;
        for (a, b) in last.values.iter().zip(&p.values) {
            assert!((a - b).abs() <= 1e-12 * b, "d={d}");
        }
    }
}

#[test]
fn validity_horizon_is_where_the_bound_reaches_the_drift() {
    let (c, delta, l_a, l_pi) = (0.7, 0.05, 1.3, 12.0);
    let t = validity_horizon(c, delta, l_a, l_pi);
    assert!((quadratic_bound(delta, l_a, l_pi, t) - c).abs() < 1e-12);
}

#[test]
fn geometric_bound_holds_for_contracting_and_expanding_dynamics() {
    let arch = Architecture::new(2, vec![32, 32], 2, Activation::Relu);
    for l_s in [0.9, 1.02] {
        for seed in 0..20 {
            let net = sample_policy(&arch, &InitScheme::gaussian(1.0, 0.2), seed).unwrap();
            let mut env = EnvSpec::integrator(2).with_cap(0.05);
            env.l_s = l_s;
            let traj = rollout_fixed(&net, &env, &[0.4, -0.2], 100).unwrap();
            let c = drift_estimate(&traj, DriftMethod::FirstStep).unwrap();
            let report = geometric_check(&traj, &env, net.lipschitz_upper_bound(), &c).unwrap();
            assert!(report.holds(), "L_s={l_s} seed={seed}: {:?}", report.violations);
        }
    }
}

#[test]
fn open_hallway_gives_every_mode_the_same_high_rate() {
    let mut bench = HallwayBenchmark {
        n: 100,
        horizon: 400,
        reset: None,
        ..HallwayBenchmark::default()
    };
    bench.fixed.arch = Architecture::new(2, vec![32], 2, Activation::Relu);
    bench.resample.init = InitScheme::gaussian(1.0, 0.3);
    // A gap wider than the box leaves nothing to block; start beside the wall.
    bench.env.barrier = Some(HallwaySpec {
        wall_coordinate: 0.5,
        gap_center: vec![0.0],
        gap_halfwidth: 100.0,
        wall_thickness: 0.05,
    });
    let report = bench.run(3).unwrap();
    let free = {
        let mut b = bench.clone();
        b.env.barrier.as_mut().unwrap().gap_halfwidth = 1e3;
        b.run(3).unwrap()
    };
    for o in &report.outcomes {
        assert!(o.rate.rate > 0.3, "{}: {}", o.mode, o.rate.rate);
        assert_eq!(o, free.outcome(&o.mode).unwrap());
    }
}
