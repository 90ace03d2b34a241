//! Oracle rollouts recorded as imitation samples.

use serde::{Deserialize, Serialize};

use super::{HarnessError, HarnessSettings};
use crate::controller::{pid_step, scale_waypoint, PidState};
use crate::planner::{goal_observation, ImitationSample, ObsContext, OraclePlanner};
use crate::world::{episode_status, generate_scenario, render_observation, ActuationNoise, NoisyDynamics, ScenarioKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    pub scenario: ScenarioKind,
    pub episodes: usize,
    pub seed: u64,
    /// `P`: past frames stored with each sample.
    pub context: usize,
    /// Actuation noise during rollouts, so samples cover off-path states.
    pub noise: ActuationNoise,
    /// Keep one sample every this many control steps.
    pub sample_every: usize,
    pub settings: HarnessSettings,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Box,
            episodes: 10,
            seed: 0,
            context: 5,
            noise: ActuationNoise {
                sigma_v: 0.1,
                sigma_omega: 0.3,
            },
            sample_every: 1,
            settings: HarnessSettings::default(),
        }
    }
}

/// One sample per control step. Episode `i` uses seed `seed + i` and
/// targets goal `(seed + i) mod goal_count`.
pub fn export_oracle_dataset(cfg: &ExportConfig) -> Result<Vec<ImitationSample>, HarnessError> {
    if cfg.episodes == 0 || cfg.sample_every == 0 {
        return Err(HarnessError::Config("episodes and sample_every must be positive".into()));
    }
    let st = &cfg.settings;
    st.validate()?;
    let ctrl = &st.controller;
    let mut samples = Vec::new();
    for e in 0..cfg.episodes as u64 {
        let seed = cfg.seed + e;
        let scenario = generate_scenario(cfg.scenario, seed, &st.generation)?;
        let goal = scenario.goals[(seed % scenario.goals.len() as u64) as usize].clone();
        let goal_obs = goal_observation(&scenario, &goal.id, &st.sensor, st.uav_radius)?;
        let oracle = OraclePlanner::new(&scenario, st.oracle_config());
        let mut dynamics = NoisyDynamics::new(cfg.noise, seed);
        let mut pid = PidState::default();
        let mut pose = scenario.spawn;
        let mut history = Vec::new();
        for step in 0..st.max_steps {
            history.push(render_observation(&pose, &scenario, &st.sensor, step));
            if history.len() > cfg.context + 1 {
                history.remove(0);
            }
            let Ok(plan) = oracle.plan(&pose, goal.position) else {
                break;
            };
            let disp = scale_waypoint(plan.waypoints[0], ctrl.v_max, ctrl.f_c);
            let action = pid_step(disp, ctrl, &mut pid, ctrl.dt());
            if (step as usize).is_multiple_of(cfg.sample_every) {
                samples.push(ImitationSample {
                    context: ObsContext::from_history(&history, cfg.context),
                    goal_obs: goal_obs.clone(),
                    target_plan: plan,
                });
            }
            pose = dynamics.step(pose, action, ctrl.dt());
            if episode_status(&pose, &scenario, &goal, st.delta, st.uav_radius, step + 1, st.max_steps).is_terminal() {
                break;
            }
        }
    }
    Ok(samples)
}
