//! Waypoint planning: a temporal distance plus `H` normalized body-frame
//! waypoints from a stack of recent observations and a goal view.
//!
//! Two planners share the [`WaypointPlan`] output: the geometric
//! [`oracle`] (grid search on the true map, used for supervision and as an
//! upper bound) and the learned [`network`], trained by imitation.

pub mod dataset;
pub mod gradcheck;
pub mod network;
pub mod oracle;
mod params_file;
pub mod train;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::grid::GridError;
use crate::world::{render_observation, EgoObservation, Pose, Scenario, SensorConfig};

pub use dataset::{read_dataset, write_dataset, ImitationSample};
pub use gradcheck::{check_gradients, tiny_gradient_check, GradCheckReport};
pub use network::{
    planner_forward, planner_gradients, planner_loss, ModelConfig, ObsContext, PlannerParams, D_NORM,
};
pub use oracle::{oracle_plan, plan_from_path, OracleConfig, OraclePlanner};
pub use params_file::{read_params, write_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use train::{train_from, train_planner, waypoint_mse, Optimizer, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset line {line}: {source}")]
    DatasetParse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad params magic {found:?}, expected \"VLFP\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported params version {0}")]
    VersionUnsupported(u32),
    #[error("params file truncated while reading {0}")]
    Truncated(String),
    #[error("params file: {0}")]
    InvalidParams(String),
    #[error("goal {0:?} is not in the scenario")]
    UnknownGoal(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Planner output: predicted steps to go and `H` normalized waypoints
/// (+x forward, +y left), each component in [−1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub temporal_distance: f64,
    pub waypoints: Vec<Vec2>,
}

impl WaypointPlan {
    pub fn is_valid(&self, horizon: usize) -> bool {
        self.waypoints.len() == horizon
            && self.temporal_distance.is_finite()
            && self.temporal_distance >= 0.0
            && self
                .waypoints
                .iter()
                .all(|w| (-1.0..=1.0).contains(&w.x) && (-1.0..=1.0).contains(&w.y))
    }
}

/// Pose from which a goal's reference view is rendered: `distance` meters
/// from the goal, facing it, at the first collision-free bearing scanned
/// counter-clockwise from the arena center direction.
pub fn goal_view_pose(scenario: &Scenario, goal: Vec2, distance: f64, clearance: f64) -> Pose {
    let to_center = scenario.bounds.center() - goal;
    let base = if to_center.norm() > 1e-9 { to_center.y.atan2(to_center.x) } else { 0.0 };
    for d in [distance, distance * 0.75, distance * 0.5] {
        for k in 0..16 {
            let theta = base + k as f64 * PI / 8.0;
            let p = goal + Vec2::from_angle(theta) * d;
            if scenario.clearance(p) >= clearance {
                return Pose::new(p.x, p.y, theta + PI);
            }
        }
    }
    let p = goal + Vec2::from_angle(base) * distance;
    Pose::new(p.x, p.y, base + PI)
}

/// The goal image analogue: the panorama seen from [`goal_view_pose`].
pub fn goal_observation(scenario: &Scenario, goal_id: &str, sensor: &SensorConfig, uav_radius: f64) -> Result<EgoObservation, PlannerError> {
    let goal = scenario
        .goal(goal_id)
        .ok_or_else(|| PlannerError::UnknownGoal(goal_id.to_string()))?;
    let pose = goal_view_pose(scenario, goal.position, 1.0, uav_radius + 0.05);
    Ok(render_observation(&pose, scenario, sensor, 0))
}
