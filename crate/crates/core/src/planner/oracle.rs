//! Geometric oracle: shortest grid path on the true map, resampled into
//! body-frame waypoints.

use serde::{Deserialize, Serialize};

use super::{PlannerError, WaypointPlan};
use crate::geometry::Vec2;
use crate::grid::{point_at_arc_length, polyline_length, shortcut, GridConfig, OccupancyGrid};
use crate::world::{Pose, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid: GridConfig,
    pub horizon: usize,
    /// Waypoint spacing in control periods at full speed.
    pub waypoint_stride: f64,
    /// Meters mapped to a normalized waypoint component of 1.
    pub norm_scale: f64,
    pub v_max: f64,
    pub f_c: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            horizon: 5,
            waypoint_stride: 8.0,
            norm_scale: 4.0,
            v_max: 1.0,
            f_c: 15.0,
        }
    }
}

impl OracleConfig {
    pub fn step_length(&self) -> f64 {
        self.v_max / self.f_c
    }
}

/// Oracle bound to one scenario; the occupancy grid is built once.
#[derive(Debug, Clone)]
pub struct OraclePlanner<'a> {
    scenario: &'a Scenario,
    grid: OccupancyGrid,
    cfg: OracleConfig,
}

impl<'a> OraclePlanner<'a> {
    pub fn new(scenario: &'a Scenario, cfg: OracleConfig) -> Self {
        Self {
            scenario,
            grid: OccupancyGrid::new(scenario, &cfg.grid),
            cfg,
        }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    /// Smoothed collision-free path from `from` to `goal`.
    pub fn path(&self, from: Vec2, goal: Vec2) -> Result<Vec<Vec2>, PlannerError> {
        let raw = self.grid.search(from, goal)?;
        let poly = self.grid.polyline(from, goal, &raw);
        Ok(shortcut(&poly, self.scenario, self.grid.inflation()))
    }

    pub fn plan(&self, pose: &Pose, goal: Vec2) -> Result<WaypointPlan, PlannerError> {
        let path = self.path(pose.position(), goal)?;
        Ok(plan_from_path(pose, &path, &self.cfg))
    }
}

/// Samples `horizon` points at multiples of the stride length along `path`
/// and expresses them in the pose's body frame, normalized and clamped.
pub fn plan_from_path(pose: &Pose, path: &[Vec2], cfg: &OracleConfig) -> WaypointPlan {
    let step = cfg.step_length();
    let spacing = step * cfg.waypoint_stride;
    let waypoints = (1..=cfg.horizon)
        .map(|k| {
            let body = pose.to_body(point_at_arc_length(path, spacing * k as f64));
            Vec2::new(
                (body.x / cfg.norm_scale).clamp(-1.0, 1.0),
                (body.y / cfg.norm_scale).clamp(-1.0, 1.0),
            )
        })
        .collect();
    WaypointPlan {
        temporal_distance: polyline_length(path) / step,
        waypoints,
    }
}

/// One-shot oracle plan (builds the grid on every call).
pub fn oracle_plan(pose: &Pose, goal: Vec2, scenario: &Scenario, cfg: &OracleConfig) -> Result<WaypointPlan, PlannerError> {
    OraclePlanner::new(scenario, *cfg).plan(pose, goal)
}
