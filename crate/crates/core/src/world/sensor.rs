//! Egocentric semantic depth panorama standing in for the onboard camera.

use serde::{Deserialize, Serialize};

use super::{Pose, Scenario};
use crate::geometry::{ray_circle_hit, Vec2};

/// Nothing hit within range, or a boundary wall.
pub const SEMANTIC_FREE: u8 = 0;
/// An obstacle polygon.
pub const SEMANTIC_OBSTACLE: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub rays: usize,
    /// Horizontal field of view, radians.
    pub fov: f64,
    /// Maximum reported depth, meters.
    pub d_max: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 64,
            fov: 82.6f64.to_radians(),
            d_max: 10.0,
        }
    }
}

impl SensorConfig {
    /// Bearing of ray `i`, positive to the right of the heading.
    pub fn bearing(&self, i: usize) -> f64 {
        if self.rays == 1 {
            return 0.0;
        }
        -self.fov / 2.0 + self.fov * i as f64 / (self.rays - 1) as f64
    }
}

/// One rendered frame: `depths[i]` and `semantics[i]` describe ray `i`,
/// ordered left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    pub depths: Vec<f64>,
    pub semantics: Vec<u8>,
    pub fov: f64,
    pub timestamp_step: u32,
}

impl EgoObservation {
    pub fn rays(&self) -> usize {
        self.depths.len()
    }
}

/// Casts `cfg.rays` rays across the field of view. Each ray reports the
/// distance to the first obstacle, goal disk or wall, clamped to `d_max`.
pub fn render_observation(pose: &Pose, scenario: &Scenario, cfg: &SensorConfig, step: u32) -> EgoObservation {
    let origin = pose.position();
    let mut depths = Vec::with_capacity(cfg.rays);
    let mut semantics = Vec::with_capacity(cfg.rays);
    for i in 0..cfg.rays {
        let dir = Vec2::from_angle(pose.heading - cfg.bearing(i));
        let mut best = scenario.bounds.ray_exit(origin, dir);
        let mut label = SEMANTIC_FREE;
        for obstacle in &scenario.obstacles {
            if let Some(t) = obstacle.ray_hit(origin, dir) {
                if t < best {
                    best = t;
                    label = SEMANTIC_OBSTACLE;
                }
            }
        }
        for (k, goal) in scenario.goals.iter().enumerate() {
            if let Some(t) = ray_circle_hit(origin, dir, goal.position, goal.radius) {
                if t < best {
                    best = t;
                    label = (k + 1).min(254) as u8;
                }
            }
        }
        if best > cfg.d_max {
            best = cfg.d_max;
            label = SEMANTIC_FREE;
        }
        depths.push(best);
        semantics.push(label);
    }
    EgoObservation {
        depths,
        semantics,
        fov: cfg.fov,
        timestamp_step: step,
    }
}
