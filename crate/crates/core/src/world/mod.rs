//! Deterministic 2D world: scenarios, unicycle kinematics, ray-cast
//! observations and episode termination.

mod dynamics;
mod scenario;
mod sensor;
mod status;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Polygon, Rect, Vec2};

pub use dynamics::{step_dynamics, ActuationNoise, NoisyDynamics};
pub use scenario::{generate_scenario, ArenaLayout, GenerationConfig};
pub use sensor::{render_observation, EgoObservation, SensorConfig, SEMANTIC_FREE, SEMANTIC_OBSTACLE};
pub use status::{collides, episode_status, EpisodeStatus};

/// Default UAV footprint radius, meters.
pub const DEFAULT_UAV_RADIUS: f64 = 0.2;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scenario generation failed for {kind} seed {seed} after {attempts} attempts")]
    GenerationFailed {
        kind: ScenarioKind,
        seed: u64,
        attempts: usize,
    },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown scenario kind {0:?}")]
    UnknownKind(String),
}

/// Planar UAV state. Heading is kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Expresses a world point in this pose's body frame (+x forward, +y left).
    pub fn to_body(&self, world: Vec2) -> Vec2 {
        (world - self.position()).rotate(-self.heading)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// A (v, ω) velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContinuousAction {
    pub v: f64,
    pub omega: f64,
}

impl ContinuousAction {
    pub const STOP: ContinuousAction = ContinuousAction { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    /// Saturates both channels to the given caps.
    pub fn clamped(self, v_max: f64, omega_max: f64) -> Self {
        Self {
            v: self.v.clamp(-v_max, v_max),
            omega: self.omega.clamp(-omega_max, omega_max),
        }
    }
}

/// A semantically labeled goal anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalObject {
    pub id: String,
    pub descriptor: String,
    pub position: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Box,
    Furniture,
    Barrier,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::Box, ScenarioKind::Furniture, ScenarioKind::Barrier];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Box => "box",
            ScenarioKind::Furniture => "furniture",
            ScenarioKind::Barrier => "barrier",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "box" => Ok(ScenarioKind::Box),
            "furniture" => Ok(ScenarioKind::Furniture),
            "barrier" => Ok(ScenarioKind::Barrier),
            _ => Err(WorldError::UnknownKind(s.to_string())),
        }
    }
}

/// Obstacle layout plus goal anchors and the spawn pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub bounds: Rect,
    pub obstacles: Vec<Polygon>,
    pub goals: Vec<GoalObject>,
    pub spawn: Pose,
}

impl Scenario {
    /// An obstacle-free arena with no goals, mostly for tests and fixtures.
    pub fn empty(bounds: Rect, spawn: Pose) -> Self {
        Self {
            kind: ScenarioKind::Box,
            seed: 0,
            bounds,
            obstacles: Vec::new(),
            goals: Vec::new(),
            spawn,
        }
    }

    pub fn with_goal(mut self, id: &str, descriptor: &str, position: Vec2, radius: f64) -> Self {
        self.goals.push(GoalObject {
            id: id.to_string(),
            descriptor: descriptor.to_string(),
            position,
            radius,
        });
        self
    }

    pub fn with_obstacle(mut self, polygon: Polygon) -> Self {
        self.obstacles.push(polygon);
        self
    }

    pub fn goal(&self, id: &str) -> Option<&GoalObject> {
        self.goals.iter().find(|g| g.id == id)
    }

    /// Semantic id of a goal: its index plus one.
    pub fn goal_semantic_id(&self, id: &str) -> Option<u8> {
        self.goals.iter().position(|g| g.id == id).map(|i| (i + 1) as u8)
    }

    /// Clearance of a point to the nearest obstacle or wall.
    pub fn clearance(&self, p: Vec2) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(p))
            .fold(self.bounds.inner_clearance(p), f64::min)
    }

    /// Checks every structural invariant except reachability.
    pub fn validate(&self, uav_radius: f64) -> Result<(), WorldError> {
        let bad = |msg: String| Err(WorldError::InvalidScenario(msg));
        if !(self.bounds.area() > 0.0) {
            return bad("bounds have no area".into());
        }
        if !self.spawn.is_finite() {
            return bad("spawn pose is not finite".into());
        }
        if self.clearance(self.spawn.position()) < uav_radius {
            return bad("spawn is not collision-free".into());
        }
        for o in &self.obstacles {
            if o.vertices.len() < 3 || o.vertices.iter().any(|v| !v.is_finite()) {
                return bad("degenerate obstacle polygon".into());
            }
        }
        for (i, g) in self.goals.iter().enumerate() {
            if !(g.radius > 0.0) {
                return bad(format!("goal {} has non-positive radius", g.id));
            }
            if self.goals[..i].iter().any(|h| h.id == g.id) {
                return bad(format!("duplicate goal id {}", g.id));
            }
            if !self.bounds.contains(g.position) || self.obstacles.iter().any(|o| o.contains(g.position)) {
                return bad(format!("goal {} lies outside free space", g.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
