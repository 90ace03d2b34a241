//! Seeded rejection-sampling layouts for the three arena kinds.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GoalObject, Pose, Scenario, ScenarioKind, WorldError};
use crate::geometry::{convex_hull, Polygon, Rect, Vec2};
use crate::grid::{GridConfig, OccupancyGrid};
use crate::instruction::default_items;

/// Arena edge length and obstacle count range for one scenario kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArenaLayout {
    pub size: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub box_layout: ArenaLayout,
    pub furniture_layout: ArenaLayout,
    pub barrier_layout: ArenaLayout,
    pub goal_count: usize,
    pub goal_radius: f64,
    pub min_goal_separation: f64,
    /// Minimum spawn-to-goal distance as a fraction of the arena size.
    pub min_goal_distance_frac: f64,
    /// Clearance required around spawn and goals beyond the grid inflation.
    pub placement_slack: f64,
    pub max_attempts: usize,
    pub items: Vec<String>,
    pub grid: GridConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            box_layout: ArenaLayout { size: 10.0, min_obstacles: 0, max_obstacles: 2 },
            furniture_layout: ArenaLayout { size: 15.0, min_obstacles: 4, max_obstacles: 8 },
            barrier_layout: ArenaLayout { size: 20.0, min_obstacles: 8, max_obstacles: 16 },
            goal_count: 3,
            goal_radius: 0.3,
            min_goal_separation: 1.5,
            min_goal_distance_frac: 0.3,
            placement_slack: 0.1,
            max_attempts: 200,
            items: default_items(),
            grid: GridConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn layout(&self, kind: ScenarioKind) -> ArenaLayout {
        match kind {
            ScenarioKind::Box => self.box_layout,
            ScenarioKind::Furniture => self.furniture_layout,
            ScenarioKind::Barrier => self.barrier_layout,
        }
    }

    fn check(&self, kind: ScenarioKind) -> Result<(), WorldError> {
        let l = self.layout(kind);
        let bad = |m: &str| Err(WorldError::InvalidConfig(m.to_string()));
        if !(l.size > 0.0) {
            return bad("arena size must be positive");
        }
        if l.min_obstacles > l.max_obstacles {
            return bad("min_obstacles exceeds max_obstacles");
        }
        if self.items.len() < self.goal_count {
            return bad("item list shorter than goal count");
        }
        if !(self.goal_radius > 0.0) {
            return bad("goal radius must be positive");
        }
        Ok(())
    }
}

fn kind_salt(kind: ScenarioKind) -> u64 {
    match kind {
        ScenarioKind::Box => 0x9E37_79B9_7F4A_7C15,
        ScenarioKind::Furniture => 0xC2B2_AE3D_27D4_EB4F,
        ScenarioKind::Barrier => 0x1656_67B1_9E37_79F9,
    }
}

/// Generates a scenario deterministically from `(kind, seed, cfg)`.
///
/// Layouts are rejection-sampled until spawn and goals have clearance and
/// every goal is reachable on the planning grid.
pub fn generate_scenario(kind: ScenarioKind, seed: u64, cfg: &GenerationConfig) -> Result<Scenario, WorldError> {
    cfg.check(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_salt(kind));
    let layout = cfg.layout(kind);
    let bounds = Rect::new(Vec2::ZERO, Vec2::new(layout.size, layout.size));
    for _ in 0..cfg.max_attempts {
        if let Some(s) = attempt(kind, seed, bounds, layout, cfg, &mut rng) {
            return Ok(s);
        }
    }
    Err(WorldError::GenerationFailed {
        kind,
        seed,
        attempts: cfg.max_attempts,
    })
}

fn attempt(
    kind: ScenarioKind,
    seed: u64,
    bounds: Rect,
    layout: ArenaLayout,
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Scenario> {
    let count = rng.random_range(layout.min_obstacles..=layout.max_obstacles);
    let obstacles: Vec<Polygon> = (0..count).map(|_| sample_obstacle(kind, bounds, rng)).collect();
    let mut scenario = Scenario {
        kind,
        seed,
        bounds,
        obstacles,
        goals: Vec::new(),
        spawn: Pose::new(0.0, 0.0, 0.0),
    };
    let need = cfg.grid.inflation() + cfg.placement_slack;

    let spawn_pos = sample_free(&scenario, need, rng, |_| true)?;
    scenario.spawn = Pose::new(spawn_pos.x, spawn_pos.y, rng.random_range(-PI..PI));

    let mut items = cfg.items.clone();
    items.shuffle(rng);
    let min_dist = cfg.min_goal_distance_frac * layout.size;
    for (k, descriptor) in items.into_iter().take(cfg.goal_count).enumerate() {
        let placed: Vec<Vec2> = scenario.goals.iter().map(|g| g.position).collect();
        let pos = sample_free(&scenario, need, rng, |p| {
            p.distance(spawn_pos) >= min_dist && placed.iter().all(|q| q.distance(p) >= cfg.min_goal_separation)
        })?;
        scenario.goals.push(GoalObject {
            id: format!("g{k}"),
            descriptor,
            position: pos,
            radius: cfg.goal_radius,
        });
    }

    let grid = OccupancyGrid::new(&scenario, &cfg.grid);
    scenario
        .goals
        .iter()
        .all(|g| grid.search(spawn_pos, g.position).is_ok())
        .then_some(scenario)
}

fn sample_free(
    scenario: &Scenario,
    clearance: f64,
    rng: &mut ChaCha8Rng,
    accept: impl Fn(Vec2) -> bool,
) -> Option<Vec2> {
    let b = scenario.bounds;
    (0..100).find_map(|_| {
        let p = Vec2::new(
            rng.random_range(b.min.x + clearance..b.max.x - clearance),
            rng.random_range(b.min.y + clearance..b.max.y - clearance),
        );
        (scenario.clearance(p) >= clearance && accept(p)).then_some(p)
    })
}

fn sample_obstacle(kind: ScenarioKind, bounds: Rect, rng: &mut ChaCha8Rng) -> Polygon {
    let margin = 0.5;
    let center = Vec2::new(
        rng.random_range(bounds.min.x + margin..bounds.max.x - margin),
        rng.random_range(bounds.min.y + margin..bounds.max.y - margin),
    );
    match kind {
        ScenarioKind::Box => {
            let half = Vec2::new(rng.random_range(0.4..1.25), rng.random_range(0.4..1.25));
            Polygon::rect(center - half, center + half)
        }
        ScenarioKind::Furniture => {
            let half = Vec2::new(rng.random_range(0.25..1.0), rng.random_range(0.25..1.0));
            Polygon::rect(center - half, center + half)
        }
        ScenarioKind::Barrier => {
            // Elongated irregular slab: hull of points scattered in a rotated ellipse.
            let half_len = rng.random_range(0.75..2.0);
            let half_thick = rng.random_range(0.15..0.45);
            let angle = rng.random_range(0.0..PI);
            let n = rng.random_range(6..=9);
            let pts: Vec<Vec2> = (0..n)
                .map(|_| {
                    let t = rng.random_range(0.0..2.0 * PI);
                    let r = rng.random_range(0.6f64..1.0).sqrt();
                    Vec2::new(half_len * r * t.cos(), half_thick * r * t.sin()).rotate(angle) + center
                })
                .collect();
            let hull = convex_hull(&pts);
            if hull.len() >= 3 {
                Polygon::new(hull)
            } else {
                let h = Vec2::new(half_len, half_thick);
                Polygon::rect(center - h, center + h)
            }
        }
    }
}
