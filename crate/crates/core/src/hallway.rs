//! Passage-rate comparison of rollout modes in front of a wall with a narrow
//! gap.

use serde::{Deserialize, Serialize};

use crate::analysis::{switch_step_heuristic, PassageRate, SwitchWindow};
use crate::env::{EnvSpec, HallwaySpec};
use crate::error::{Error, Result};
use crate::policy::{Activation, Architecture, InitScheme};
use crate::rollout::{map_ensemble, ModeConfig, PolicySpec, ResetSchedule, Stepper};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HallwayBenchmark {
    pub env: EnvSpec,
    pub s0: Vec<f64>,
    pub horizon: usize,
    pub n: usize,
    /// Policy family for fixed runs and the first phase of hybrid runs.
    pub fixed: PolicySpec,
    /// Policy family redrawn at every step.
    pub resample: PolicySpec,
    /// Hybrid switch step; taken from the heuristic when absent.
    pub n_switch: Option<usize>,
    /// Fraction of the wall distance used for the heuristic's upper end.
    pub heuristic_factor: f64,
    /// Schedule for the stochastic-reset mode; the mode is skipped if absent.
    pub reset: Option<ResetSchedule>,
}

impl Default for HallwayBenchmark {
    fn default() -> Self {
        let hallway = HallwaySpec {
            wall_coordinate: 2.0,
            gap_center: vec![0.0],
            gap_halfwidth: 0.15,
            wall_thickness: 0.05,
        };
        Self {
            env: EnvSpec::integrator(2).with_cap(0.1).with_bound(6.0).with_barrier(hallway),
            s0: vec![0.0, 0.0],
            horizon: 2000,
            n: 2000,
            fixed: PolicySpec {
                arch: Architecture::standard_mlp(2),
                init: InitScheme::gaussian(1.0, 0.1),
            },
            resample: PolicySpec {
                arch: Architecture::new(2, vec![64], 2, Activation::Relu),
                init: InitScheme::gaussian(0.05, 0.01),
            },
            n_switch: None,
            heuristic_factor: 0.1,
            reset: Some(ResetSchedule::Linear { p0: 0.0, p1: 0.05 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: String,
    pub rate: PassageRate,
    /// Mean first-passage step over the trajectories that passed.
    pub mean_passage_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallwayReport {
    pub n_switch: usize,
    pub switch_window: SwitchWindow,
    pub target_x: f64,
    pub outcomes: Vec<ModeOutcome>,
}

impl HallwayReport {
    pub fn outcome(&self, mode: &str) -> Option<&ModeOutcome> {
        self.outcomes.iter().find(|o| o.mode == mode)
    }
}

impl HallwayBenchmark {
    pub fn hallway(&self) -> Result<&HallwaySpec> {
        self.env
            .barrier
            .as_ref()
            .ok_or_else(|| Error::NotApplicable("the benchmark environment has no hallway".into()))
    }

    pub fn switch_window(&self) -> Result<SwitchWindow> {
        let hall = self.hallway()?;
        let delta = self
            .env
            .delta_cap
            .ok_or_else(|| Error::NotApplicable("the switch heuristic needs a cap δ".into()))?;
        let travel = hall.wall_coordinate - self.s0[0];
        // L_π of the fixed family is not known before sampling; the window's
        // upper end is reported for the nominal L_π = 1.
        switch_step_heuristic(1.0, travel, delta, self.heuristic_factor)
    }

    pub fn resolved_switch(&self) -> Result<usize> {
        match self.n_switch {
            Some(n) => Ok(n),
            None => Ok((self.switch_window()?.n_min.ceil() as usize).min(self.horizon)),
        }
    }

    pub fn modes(&self) -> Result<Vec<ModeConfig>> {
        let mut modes = vec![
            ModeConfig::Fixed {
                policy: self.fixed.clone(),
            },
            ModeConfig::PerStepResample {
                policy: self.resample.clone(),
            },
            ModeConfig::Hybrid {
                fixed: self.fixed.clone(),
                resample: self.resample.clone(),
                n_switch: self.resolved_switch()?,
            },
        ];
        if let Some(schedule) = self.reset {
            modes.push(ModeConfig::StochasticReset {
                fixed: self.fixed.clone(),
                resample: self.resample.clone(),
                schedule,
            });
        }
        Ok(modes)
    }

    /// Runs every mode on the same trajectory seeds.
    pub fn run(&self, master_seed: u64) -> Result<HallwayReport> {
        let hall = self.hallway()?;
        let target = hall.far_face();
        let mut outcomes = Vec::new();
        for mode in self.modes()? {
            let steps = map_ensemble(&mode, &self.env, &self.s0, self.horizon, self.n, master_seed, |_, st| {
                first_passage(st, target, matches!(mode, ModeConfig::Fixed { .. }))
            })?;
            let hits: Vec<usize> = steps.iter().flatten().copied().collect();
            outcomes.push(ModeOutcome {
                mode: mode.mode().name().to_string(),
                rate: PassageRate::from_counts(hits.len(), self.n),
                mean_passage_step: if hits.is_empty() {
                    None
                } else {
                    Some(hits.iter().sum::<usize>() as f64 / hits.len() as f64)
                },
            });
        }
        Ok(HallwayReport {
            n_switch: self.resolved_switch()?,
            switch_window: self.switch_window()?,
            target_x: target,
            outcomes,
        })
    }
}

/// First step at which `x₀ > target`, if any. A deterministic stepper that
/// stops moving is stuck for good, so it ends early.
fn first_passage(mut st: Stepper, target: f64, deterministic: bool) -> Result<Option<usize>> {
    if st.state()[0] > target {
        return Ok(Some(0));
    }
    let mut prev = st.state().to_vec();
    while st.advance()? {
        if st.state()[0] > target {
            return Ok(Some(st.t()));
        }
        if deterministic {
            if st.state() == prev.as_slice() {
                return Ok(None);
            }
            prev.copy_from_slice(st.state());
        }
    }
    Ok(None)
}
