//! Trajectory generation under fixed, per-step resampled, GP-idealized,
//! hybrid and stochastic-reset policies.
//!
//! All modes share one seed layout (see [`crate::rng`]): the policy used at
//! step `t` of a trajectory with seed `seed` is drawn from
//! `step_seed(seed, t)`. Modes that agree on which steps resample therefore
//! produce bit-identical states, which is what makes the boundary
//! equivalences (hybrid with `n = 0` or `n = T`, reset probability 0 or 1)
//! exact.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{check_dim, Error, Result};
use crate::nngp::{diffusion_coefficient, DiffusionConvention, KernelSpec};
use crate::policy::{sample_policy, Architecture, InitScheme, PolicyNet, Scratch};
use crate::rng;

/// Time-based probability of replacing the current policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetSchedule {
    Constant { p: f64 },
    /// Linear ramp from `p0` at `t = 0` to `p1` at `t = T − 1`.
    Linear { p0: f64, p1: f64 },
}

impl ResetSchedule {
    pub fn probability(&self, t: usize, horizon: usize) -> f64 {
        match *self {
            ResetSchedule::Constant { p } => p,
            ResetSchedule::Linear { p0, p1 } => {
                if horizon <= 1 {
                    p0
                } else {
                    p0 + (p1 - p0) * t as f64 / (horizon - 1) as f64
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        let valid = match *self {
            ResetSchedule::Constant { p } => ok(p),
            ResetSchedule::Linear { p0, p1 } => ok(p0) && ok(p1),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::param("schedule", "probabilities must lie in [0, 1]"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RolloutMode {
    Fixed,
    PerStepResample,
    PerStepGp,
    Hybrid { n_switch: usize },
    StochasticReset { schedule: ResetSchedule },
}

impl RolloutMode {
    pub fn name(&self) -> &'static str {
        match self {
            RolloutMode::Fixed => "fixed",
            RolloutMode::PerStepResample => "per_step_resample",
            RolloutMode::PerStepGp => "per_step_gp",
            RolloutMode::Hybrid { .. } => "hybrid",
            RolloutMode::StochasticReset { .. } => "stochastic_reset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `T + 1` states, starting with `s₀`.
    pub states: Vec<Vec<f64>>,
    /// `T` actions; `actions[t]` moved `states[t]` to `states[t + 1]`.
    pub actions: Vec<Vec<f64>>,
    pub mode: RolloutMode,
    pub seed: u64,
    /// Seed of the policy (or GP draw) that produced each action.
    pub policy_seeds: Vec<u64>,
    /// Number of policy replacements (stochastic reset only).
    pub n_resets: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }
}

/// How a trajectory picks its action at each step.
#[derive(Debug, Clone)]
enum Source {
    Fixed(PolicyNet),
    Resample {
        net: PolicyNet,
        init: InitScheme,
    },
    Gp {
        kernel: KernelSpec,
        convention: DiffusionConvention,
    },
    Hybrid {
        fixed: PolicyNet,
        net: PolicyNet,
        init: InitScheme,
        n_switch: usize,
    },
    Reset {
        initial: PolicyNet,
        fresh: PolicyNet,
        init: InitScheme,
        schedule: ResetSchedule,
    },
}

/// Advances one trajectory a step at a time without storing it.
#[derive(Debug, Clone)]
pub struct Stepper {
    env: EnvSpec,
    source: Source,
    mode: RolloutMode,
    seed: u64,
    horizon: usize,
    t: usize,
    state: Vec<f64>,
    next: Vec<f64>,
    action: Vec<f64>,
    policy_seed: u64,
    n_resets: usize,
    scratch: Scratch,
}

impl Stepper {
    fn new(env: &EnvSpec, source: Source, mode: RolloutMode, s0: &[f64], horizon: usize, seed: u64) -> Result<Self> {
        env.validate()?;
        check_dim(env.dim, s0.len())?;
        if horizon == 0 {
            return Err(Error::param("horizon", "must be positive"));
        }
        let nets: Vec<&PolicyNet> = match &source {
            Source::Fixed(n) => vec![n],
            Source::Resample { net, .. } => vec![net],
            Source::Hybrid { fixed, net, .. } => vec![fixed, net],
            Source::Reset { initial, fresh, .. } => vec![initial, fresh],
            Source::Gp { kernel, .. } => {
                kernel.validate()?;
                vec![]
            }
        };
        for net in nets {
            check_dim(env.dim, net.input_dim())?;
            check_dim(env.dim, net.output_dim())?;
        }
        Ok(Self {
            env: env.clone(),
            source,
            mode,
            seed,
            horizon,
            t: 0,
            state: s0.to_vec(),
            next: vec![0.0; env.dim],
            action: Vec::with_capacity(env.dim),
            policy_seed: 0,
            n_resets: 0,
            scratch: Scratch::default(),
        })
    }

    pub fn fixed(net: &PolicyNet, env: &EnvSpec, s0: &[f64], horizon: usize) -> Result<Self> {
        Self::new(env, Source::Fixed(net.clone()), RolloutMode::Fixed, s0, horizon, net.seed)
    }

    pub fn resample(arch: &Architecture, init: &InitScheme, env: &EnvSpec, s0: &[f64], horizon: usize, seed: u64) -> Result<Self> {
        init.validate()?;
        let net = PolicyNet::zeros(arch.clone())?;
        Self::new(env, Source::Resample { net, init: *init }, RolloutMode::PerStepResample, s0, horizon, seed)
    }

    pub fn gp(kernel: &KernelSpec, convention: DiffusionConvention, env: &EnvSpec, s0: &[f64], horizon: usize, seed: u64) -> Result<Self> {
        let source = Source::Gp {
            kernel: *kernel,
            convention,
        };
        Self::new(env, source, RolloutMode::PerStepGp, s0, horizon, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn hybrid(
        fixed: &PolicyNet,
        arch: &Architecture,
        init: &InitScheme,
        env: &EnvSpec,
        s0: &[f64],
        horizon: usize,
        n_switch: usize,
        seed: u64,
    ) -> Result<Self> {
        init.validate()?;
        if n_switch > horizon {
            return Err(Error::param("n_switch", format!("must not exceed the horizon {horizon}")));
        }
        let source = Source::Hybrid {
            fixed: fixed.clone(),
            net: PolicyNet::zeros(arch.clone())?,
            init: *init,
            n_switch,
        };
        Self::new(env, source, RolloutMode::Hybrid { n_switch }, s0, horizon, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn stochastic_reset(
        net0: &PolicyNet,
        arch: &Architecture,
        init: &InitScheme,
        env: &EnvSpec,
        s0: &[f64],
        horizon: usize,
        schedule: ResetSchedule,
        seed: u64,
    ) -> Result<Self> {
        init.validate()?;
        schedule.validate()?;
        let source = Source::Reset {
            initial: net0.clone(),
            fresh: PolicyNet::zeros(arch.clone())?,
            init: *init,
            schedule,
        };
        Self::new(env, source, RolloutMode::StochasticReset { schedule }, s0, horizon, seed)
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Number of steps taken so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.horizon
    }

    /// Action taken by the most recent step.
    pub fn last_action(&self) -> &[f64] {
        &self.action
    }

    pub fn last_policy_seed(&self) -> u64 {
        self.policy_seed
    }

    pub fn n_resets(&self) -> usize {
        self.n_resets
    }

    /// Takes one step. Returns `false` once the horizon is reached.
    pub fn advance(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let t = self.t;
        let step_seed = rng::step_seed(self.seed, t as u64);
        let (state, action, scratch) = (&self.state, &mut self.action, &mut self.scratch);
        self.policy_seed = match &mut self.source {
            Source::Fixed(net) => {
                net.forward_into(state, scratch, action)?;
                net.seed
            }
            Source::Resample { net, init } => {
                net.resample(init, step_seed);
                net.forward_into(state, scratch, action)?;
                step_seed
            }
            Source::Gp { kernel, convention } => {
                let sd = diffusion_coefficient(kernel, *convention, state).sqrt();
                let mut g = rng::stream(step_seed);
                action.clear();
                action.extend((0..state.len()).map(|_| sd * g.sample::<f64, _>(StandardNormal)));
                step_seed
            }
            Source::Hybrid {
                fixed,
                net,
                init,
                n_switch,
            } => {
                if t < *n_switch {
                    fixed.forward_into(state, scratch, action)?;
                    fixed.seed
                } else {
                    net.resample(init, step_seed);
                    net.forward_into(state, scratch, action)?;
                    step_seed
                }
            }
            Source::Reset {
                initial,
                fresh,
                init,
                schedule,
            } => {
                let p = schedule.probability(t, self.horizon);
                let u: f64 = rng::stream(rng::coin_seed(self.seed, t as u64)).gen();
                if u < p {
                    fresh.resample(init, step_seed);
                    self.n_resets += 1;
                }
                let current = if self.n_resets > 0 { fresh } else { initial };
                current.forward_into(state, scratch, action)?;
                current.seed
            }
        };
        self.env.step_into(&self.state, &self.action, &mut self.next)?;
        std::mem::swap(&mut self.state, &mut self.next);
        self.t += 1;
        Ok(true)
    }

    /// Runs to the horizon, recording every state and action.
    pub fn collect(mut self) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut actions = Vec::with_capacity(self.horizon);
        let mut policy_seeds = Vec::with_capacity(self.horizon);
        states.push(self.state.clone());
        while self.advance()? {
            states.push(self.state.clone());
            actions.push(self.action.clone());
            policy_seeds.push(self.policy_seed);
        }
        Ok(Trajectory {
            states,
            actions,
            mode: self.mode,
            seed: self.seed,
            policy_seeds,
            n_resets: self.n_resets,
        })
    }
}

/// Rollout under one fixed net. The trajectory seed is the net's seed.
pub fn rollout_fixed(net: &PolicyNet, env: &EnvSpec, s0: &[f64], horizon: usize) -> Result<Trajectory> {
    Stepper::fixed(net, env, s0, horizon)?.collect()
}

/// A fresh net from `(arch, init)` at every step.
pub fn rollout_resample(
    arch: &Architecture,
    init: &InitScheme,
    env: &EnvSpec,
    s0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    Stepper::resample(arch, init, env, s0, horizon, seed)?.collect()
}

/// Per-step resampling in the infinite-width limit.
///
/// Each step queries a fresh policy at a single state, so only the one-point
/// marginal `N(0, Σ(s)·I)` matters and no joint GP draw is needed.
pub fn rollout_gp(
    kernel: &KernelSpec,
    convention: DiffusionConvention,
    env: &EnvSpec,
    s0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    Stepper::gp(kernel, convention, env, s0, horizon, seed)?.collect()
}

/// `net` for steps `0..n_switch`, per-step resampling afterwards.
#[allow(clippy::too_many_arguments)]
pub fn rollout_hybrid(
    net: &PolicyNet,
    arch: &Architecture,
    init: &InitScheme,
    env: &EnvSpec,
    s0: &[f64],
    horizon: usize,
    n_switch: usize,
    seed: u64,
) -> Result<Trajectory> {
    Stepper::hybrid(net, arch, init, env, s0, horizon, n_switch, seed)?.collect()
}

/// Starts from `net0`; at step `t` the current net is replaced by a fresh draw
/// with probability `schedule(t)` and kept until the next replacement.
#[allow(clippy::too_many_arguments)]
pub fn rollout_stochastic_reset(
    net0: &PolicyNet,
    arch: &Architecture,
    init: &InitScheme,
    env: &EnvSpec,
    s0: &[f64],
    horizon: usize,
    schedule: ResetSchedule,
    seed: u64,
) -> Result<Trajectory> {
    Stepper::stochastic_reset(net0, arch, init, env, s0, horizon, schedule, seed)?.collect()
}

/// Architecture and initialization of a policy family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub arch: Architecture,
    pub init: InitScheme,
}

/// Everything needed to roll out one ensemble member from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeConfig {
    Fixed {
        policy: PolicySpec,
    },
    PerStepResample {
        policy: PolicySpec,
    },
    PerStepGp {
        kernel: KernelSpec,
        #[serde(default)]
        convention: DiffusionConvention,
    },
    Hybrid {
        fixed: PolicySpec,
        resample: PolicySpec,
        n_switch: usize,
    },
    StochasticReset {
        fixed: PolicySpec,
        resample: PolicySpec,
        schedule: ResetSchedule,
    },
}

impl ModeConfig {
    pub fn mode(&self) -> RolloutMode {
        match self {
            ModeConfig::Fixed { .. } => RolloutMode::Fixed,
            ModeConfig::PerStepResample { .. } => RolloutMode::PerStepResample,
            ModeConfig::PerStepGp { .. } => RolloutMode::PerStepGp,
            ModeConfig::Hybrid { n_switch, .. } => RolloutMode::Hybrid { n_switch: *n_switch },
            ModeConfig::StochasticReset { schedule, .. } => RolloutMode::StochasticReset { schedule: *schedule },
        }
    }

    /// The stepper for the trajectory with seed `seed`. Fixed nets are drawn
    /// from `fixed_net_seed(seed)`, so fixed, hybrid and reset modes start
    /// from the same net.
    pub fn stepper(&self, env: &EnvSpec, s0: &[f64], horizon: usize, seed: u64) -> Result<Stepper> {
        let fixed_net = |p: &PolicySpec| sample_policy(&p.arch, &p.init, rng::fixed_net_seed(seed));
        match self {
            ModeConfig::Fixed { policy } => {
                let net = fixed_net(policy)?;
                let mut st = Stepper::fixed(&net, env, s0, horizon)?;
                st.seed = seed;
                Ok(st)
            }
            ModeConfig::PerStepResample { policy } => Stepper::resample(&policy.arch, &policy.init, env, s0, horizon, seed),
            ModeConfig::PerStepGp { kernel, convention } => Stepper::gp(kernel, *convention, env, s0, horizon, seed),
            ModeConfig::Hybrid {
                fixed,
                resample,
                n_switch,
            } => Stepper::hybrid(
                &fixed_net(fixed)?,
                &resample.arch,
                &resample.init,
                env,
                s0,
                horizon,
                *n_switch,
                seed,
            ),
            ModeConfig::StochasticReset {
                fixed,
                resample,
                schedule,
            } => Stepper::stochastic_reset(
                &fixed_net(fixed)?,
                &resample.arch,
                &resample.init,
                env,
                s0,
                horizon,
                *schedule,
                seed,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    pub env: EnvSpec,
    pub horizon: usize,
    pub master_seed: u64,
    pub config_hash: u64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.env.dim
    }
}

/// Runs `f` on the stepper of every ensemble member in parallel. Member `i`
/// depends only on `trajectory_seed(master_seed, i)`.
pub fn map_ensemble<R, F>(
    config: &ModeConfig,
    env: &EnvSpec,
    s0: &[f64],
    horizon: usize,
    n: usize,
    master_seed: u64,
    f: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize, Stepper) -> Result<R> + Sync,
{
    if n == 0 {
        return Err(Error::param("n", "ensemble needs at least one trajectory"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = rng::trajectory_seed(master_seed, i as u64);
            f(i, config.stepper(env, s0, horizon, seed)?)
        })
        .collect()
}

pub fn run_ensemble(
    config: &ModeConfig,
    env: &EnvSpec,
    s0: &[f64],
    horizon: usize,
    n: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    let trajectories = map_ensemble(config, env, s0, horizon, n, master_seed, |_, st| st.collect())?;
    let config_hash = crate::config_hash(&(config, env, s0, horizon, n, master_seed));
    Ok(Ensemble {
        trajectories,
        env: env.clone(),
        horizon,
        master_seed,
        config_hash,
    })
}
