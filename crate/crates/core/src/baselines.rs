//! Non-learning comparison policies: a standard artificial potential field
//! and two scripted controllers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{pid_step, ControllerConfig, PidState};
use crate::geometry::{closest_point_on_segment, Vec2};
use crate::world::{ContinuousAction, Pose, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfParams {
    pub k_att: f64,
    pub k_rep: f64,
    /// Influence radius of the repulsion, meters of clearance.
    pub rho0: f64,
    /// Distance beyond which attraction stops growing.
    pub att_sat: f64,
}

impl Default for ApfParams {
    fn default() -> Self {
        Self {
            k_att: 1.0,
            k_rep: 0.5,
            rho0: 1.5,
            att_sat: 2.0,
        }
    }
}

impl ApfParams {
    pub fn validate(&self) -> Result<(), String> {
        if [self.k_att, self.k_rep, self.rho0, self.att_sat].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err("APF parameters must be positive".into())
        }
    }
}

/// Smallest clearance used in the repulsion law; keeps the field finite
/// when the disk touches an obstacle.
const MIN_RHO: f64 = 1e-3;

/// Closest boundary point of every obstacle and wall.
fn closest_points(pos: Vec2, scenario: &Scenario) -> impl Iterator<Item = Vec2> + '_ {
    let obstacles = scenario.obstacles.iter().map(move |o| o.closest_boundary_point(pos));
    let walls = scenario
        .bounds
        .walls()
        .into_iter()
        .map(move |(a, b)| closest_point_on_segment(pos, a, b));
    obstacles.chain(walls)
}

pub fn attractive_force(pos: Vec2, goal: Vec2, params: &ApfParams) -> Vec2 {
    let f = (goal - pos) * params.k_att;
    let cap = params.k_att * params.att_sat;
    let n = f.norm();
    if n > cap {
        f * (cap / n)
    } else {
        f
    }
}

/// Sum over obstacles and walls of `k_rep (1/ρ − 1/ρ0) / ρ²` along the
/// direction away from the closest point, where ρ is the clearance of the
/// UAV disk.
pub fn repulsive_force(pos: Vec2, scenario: &Scenario, params: &ApfParams, uav_radius: f64) -> Vec2 {
    let mut f = Vec2::ZERO;
    for q in closest_points(pos, scenario) {
        let away = pos - q;
        let dist = away.norm();
        let rho = (dist - uav_radius).max(MIN_RHO);
        if rho >= params.rho0 || dist == 0.0 {
            continue;
        }
        let mag = params.k_rep * (1.0 / rho - 1.0 / params.rho0) / (rho * rho);
        f = f + away * (mag / dist);
    }
    f
}

/// `½ k_rep Σ (1/ρ − 1/ρ0)²` over sources within the influence radius.
pub fn repulsive_potential(pos: Vec2, scenario: &Scenario, params: &ApfParams, uav_radius: f64) -> f64 {
    closest_points(pos, scenario)
        .map(|q| (pos.distance(q) - uav_radius).max(MIN_RHO))
        .filter(|&rho| rho < params.rho0)
        .map(|rho| 0.5 * params.k_rep * (1.0 / rho - 1.0 / params.rho0).powi(2))
        .sum()
}

pub fn apf_force(pos: Vec2, goal: Vec2, scenario: &Scenario, params: &ApfParams, uav_radius: f64) -> Vec2 {
    attractive_force(pos, goal, params) + repulsive_force(pos, scenario, params, uav_radius)
}

/// Maps the total force to a body-frame displacement of length
/// `min(|F|, v_max) / f_c` and runs the shared PID.
pub fn apf_action(
    pose: &Pose,
    goal: Vec2,
    scenario: &Scenario,
    params: &ApfParams,
    ctrl: &ControllerConfig,
    uav_radius: f64,
    state: &mut PidState,
) -> ContinuousAction {
    let f = apf_force(pose.position(), goal, scenario, params, uav_radius);
    let disp = capped_body_displacement(pose, f, ctrl);
    pid_step(disp, ctrl, state, ctrl.dt())
}

fn capped_body_displacement(pose: &Pose, world: Vec2, ctrl: &ControllerConfig) -> Vec2 {
    let n = world.norm();
    if n == 0.0 || !n.is_finite() {
        return Vec2::ZERO;
    }
    let body = world.rotate(-pose.heading);
    body * (n.min(ctrl.v_max) / ctrl.f_c / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedKind {
    StraightLine,
    Random,
}

/// StraightLine steers at the goal with the shared PID and ignores
/// obstacles; Random draws `v ~ U[0, v_max]`, `ω ~ U[−ω_max, ω_max]`.
pub fn scripted_action(
    kind: ScriptedKind,
    pose: &Pose,
    goal: Vec2,
    ctrl: &ControllerConfig,
    state: &mut PidState,
    rng: &mut ChaCha8Rng,
) -> ContinuousAction {
    match kind {
        ScriptedKind::StraightLine => {
            let disp = capped_body_displacement(pose, goal - pose.position(), ctrl);
            pid_step(disp, ctrl, state, ctrl.dt())
        }
        ScriptedKind::Random => ContinuousAction {
            v: rng.random_range(0.0..=ctrl.v_max),
            omega: rng.random_range(-ctrl.omega_max..=ctrl.omega_max),
        },
    }
}
