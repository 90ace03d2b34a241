use serde::{Deserialize, Serialize};

use super::{GoalObject, Pose, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Running,
    Success,
    Collision,
    Timeout,
}

impl EpisodeStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, EpisodeStatus::Running)
    }
}

/// True if a disk of `uav_radius` at the pose overlaps an obstacle or leaves the arena.
pub fn collides(pose: &Pose, scenario: &Scenario, uav_radius: f64) -> bool {
    let p = pose.position();
    scenario.bounds.inner_clearance(p) < uav_radius
        || scenario.obstacles.iter().any(|o| o.distance(p) < uav_radius)
}

/// Classifies the current state. Priority: Success > Collision > Timeout > Running.
pub fn episode_status(
    pose: &Pose,
    scenario: &Scenario,
    goal: &GoalObject,
    delta: f64,
    uav_radius: f64,
    step: u32,
    max_steps: u32,
) -> EpisodeStatus {
    if pose.position().distance(goal.position) <= delta {
        EpisodeStatus::Success
    } else if collides(pose, scenario, uav_radius) {
        EpisodeStatus::Collision
    } else if step >= max_steps {
        EpisodeStatus::Timeout
    } else {
        EpisodeStatus::Running
    }
}
