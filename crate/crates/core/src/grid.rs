//! Occupancy-grid shortest paths: 8-connected A* with the octile heuristic,
//! followed by line-of-sight shortcutting against the continuous geometry.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::world::{Scenario, DEFAULT_UAV_RADIUS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("goal at ({x:.3}, {y:.3}) is unreachable")]
    Unreachable { x: f64, y: f64 },
    #[error("start has no free cell nearby")]
    NoFreeStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Cell edge length, meters.
    pub cell: f64,
    pub uav_radius: f64,
    /// Extra clearance added to the UAV radius when inflating obstacles.
    pub margin: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cell: 0.25,
            uav_radius: DEFAULT_UAV_RADIUS,
            margin: 0.15,
        }
    }
}

impl GridConfig {
    pub fn inflation(&self) -> f64 {
        self.uav_radius + self.margin
    }
}

/// Blocked/free cells over a scenario's bounds, obstacles inflated.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    blocked: Vec<bool>,
    inflation: f64,
}

type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    f: f64,
    order: u64,
    index: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, then FIFO on insertion order.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.order.cmp(&self.order))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Octile distance between two cells, in cell units.
pub fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

/// Result of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    /// Octile length through the cell centers, meters.
    pub cost: f64,
}

impl OccupancyGrid {
    pub fn new(scenario: &Scenario, cfg: &GridConfig) -> Self {
        let origin = scenario.bounds.min;
        let nx = (scenario.bounds.width() / cfg.cell).ceil().max(1.0) as usize;
        let ny = (scenario.bounds.height() / cfg.cell).ceil().max(1.0) as usize;
        let inflation = cfg.inflation();
        let mut blocked = vec![false; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let c = Vec2::new(
                    origin.x + (ix as f64 + 0.5) * cfg.cell,
                    origin.y + (iy as f64 + 0.5) * cfg.cell,
                );
                blocked[iy * nx + ix] = scenario.clearance(c) < inflation;
            }
        }
        Self {
            origin,
            cell: cfg.cell,
            nx,
            ny,
            blocked,
            inflation,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    pub fn cell_of(&self, p: Vec2) -> Cell {
        let fx = ((p.x - self.origin.x) / self.cell).floor();
        let fy = ((p.y - self.origin.y) / self.cell).floor();
        (
            (fx.max(0.0) as usize).min(self.nx - 1),
            (fy.max(0.0) as usize).min(self.ny - 1),
        )
    }

    pub fn center(&self, c: Cell) -> Vec2 {
        Vec2::new(
            self.origin.x + (c.0 as f64 + 0.5) * self.cell,
            self.origin.y + (c.1 as f64 + 0.5) * self.cell,
        )
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[c.1 * self.nx + c.0]
    }

    fn neighbor(&self, c: Cell, d: (isize, isize)) -> Option<Cell> {
        let x = c.0 as isize + d.0;
        let y = c.1 as isize + d.1;
        (x >= 0 && y >= 0 && (x as usize) < self.nx && (y as usize) < self.ny).then_some((x as usize, y as usize))
    }

    /// Nearest free cell by breadth-first search over 8-neighbors.
    fn nearest_free(&self, start: Cell) -> Option<Cell> {
        if !self.is_blocked(start) {
            return Some(start);
        }
        let mut seen = vec![false; self.nx * self.ny];
        let mut queue = VecDeque::from([start]);
        seen[start.1 * self.nx + start.0] = true;
        while let Some(c) = queue.pop_front() {
            for d in NEIGHBORS {
                if let Some(n) = self.neighbor(c, d) {
                    let idx = n.1 * self.nx + n.0;
                    if seen[idx] {
                        continue;
                    }
                    if !self.blocked[idx] {
                        return Some(n);
                    }
                    seen[idx] = true;
                    queue.push_back(n);
                }
            }
        }
        None
    }

    /// A* from the cell containing `start` to the cell containing `goal`.
    /// A blocked start is first moved to the nearest free cell; the returned
    /// cost is measured from that cell.
    pub fn search(&self, start: Vec2, goal: Vec2) -> Result<GridPath, GridError> {
        let unreachable = GridError::Unreachable { x: goal.x, y: goal.y };
        let goal_cell = self.cell_of(goal);
        if self.is_blocked(goal_cell) {
            return Err(unreachable);
        }
        let start_cell = self.nearest_free(self.cell_of(start)).ok_or(GridError::NoFreeStart)?;
        let n = self.nx * self.ny;
        let idx = |c: Cell| c.1 * self.nx + c.0;
        let mut g = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let mut heap = BinaryHeap::new();
        let mut order = 0u64;
        g[idx(start_cell)] = 0.0;
        heap.push(Frontier {
            f: octile(start_cell, goal_cell),
            order,
            index: idx(start_cell),
        });
        while let Some(Frontier { index, .. }) = heap.pop() {
            if closed[index] {
                continue;
            }
            closed[index] = true;
            let c = (index % self.nx, index / self.nx);
            if c == goal_cell {
                let mut cells = vec![c];
                let mut cur = index;
                while parent[cur] != usize::MAX {
                    cur = parent[cur];
                    cells.push((cur % self.nx, cur / self.nx));
                }
                cells.reverse();
                return Ok(GridPath {
                    cells,
                    cost: g[index] * self.cell,
                });
            }
            for d in NEIGHBORS {
                let Some(nb) = self.neighbor(c, d) else { continue };
                if self.is_blocked(nb) || closed[idx(nb)] {
                    continue;
                }
                let diagonal = d.0 != 0 && d.1 != 0;
                if diagonal {
                    // No corner cutting.
                    let side_a = (nb.0, c.1);
                    let side_b = (c.0, nb.1);
                    if self.is_blocked(side_a) || self.is_blocked(side_b) {
                        continue;
                    }
                }
                let tentative = g[index] + if diagonal { SQRT_2 } else { 1.0 };
                if tentative < g[idx(nb)] {
                    g[idx(nb)] = tentative;
                    parent[idx(nb)] = index;
                    order += 1;
                    heap.push(Frontier {
                        f: tentative + octile(nb, goal_cell),
                        order,
                        index: idx(nb),
                    });
                }
            }
        }
        Err(unreachable)
    }

    /// Polyline from the exact start to the exact goal through the grid path.
    pub fn polyline(&self, start: Vec2, goal: Vec2, path: &GridPath) -> Vec<Vec2> {
        let start_cell = self.cell_of(start);
        let mut pts = vec![start];
        let inner = &path.cells[..path.cells.len().saturating_sub(1)];
        pts.extend(
            inner
                .iter()
                .filter(|&&c| c != start_cell)
                .map(|&c| self.center(c)),
        );
        pts.push(goal);
        pts
    }
}

/// Line-of-sight shortcutting: greedily extends each segment while it keeps
/// at least the grid inflation of clearance (or the start's own clearance,
/// if smaller).
pub fn shortcut(points: &[Vec2], scenario: &Scenario, inflation: f64) -> Vec<Vec2> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let clear = |a: Vec2, b: Vec2| {
        let need = inflation.min(scenario.clearance(a)) - 1e-9;
        scenario.bounds.inner_clearance(a).min(scenario.bounds.inner_clearance(b)) >= need
            && scenario.obstacles.iter().all(|o| o.segment_distance(a, b) >= need)
    };
    let mut out = vec![points[0]];
    let mut i = 0;
    while i < points.len() - 1 {
        let mut j = i + 1;
        while j + 1 < points.len() && clear(points[i], points[j + 1]) {
            j += 1;
        }
        out.push(points[j]);
        i = j;
    }
    out
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Point at arc length `s` along a polyline, clamped to its end.
pub fn point_at_arc_length(points: &[Vec2], s: f64) -> Vec2 {
    let mut remaining = s.max(0.0);
    for w in points.windows(2) {
        let len = w[0].distance(w[1]);
        if remaining <= len && len > 0.0 {
            return w[0] + (w[1] - w[0]) * (remaining / len);
        }
        remaining -= len;
    }
    *points.last().expect("nonempty polyline")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Rect};
    use crate::world::Pose;
    use approx::assert_abs_diff_eq;

    fn open(half: f64) -> Scenario {
        Scenario::empty(Rect::new(Vec2::new(-half, -half), Vec2::new(half, half)), Pose::new(0.0, 0.0, 0.0))
    }

    /// Brute-force Dijkstra over the same grid, used to check A* optimality.
    fn dijkstra(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Option<f64> {
        let (nx, ny) = grid.dims();
        let mut dist = vec![f64::INFINITY; nx * ny];
        let mut done = vec![false; nx * ny];
        dist[start.1 * nx + start.0] = 0.0;
        loop {
            let mut best = None;
            for i in 0..nx * ny {
                if !done[i] && dist[i].is_finite() && best.is_none_or(|b: usize| dist[i] < dist[b]) {
                    best = Some(i);
                }
            }
            let i = best?;
            done[i] = true;
            let c = (i % nx, i / nx);
            if c == goal {
                return Some(dist[i] * grid.cell_size());
            }
            for d in NEIGHBORS {
                let Some(nb) = grid.neighbor(c, d) else { continue };
                if grid.is_blocked(nb) {
                    continue;
                }
                let diag = d.0 != 0 && d.1 != 0;
                if diag && (grid.is_blocked((nb.0, c.1)) || grid.is_blocked((c.0, nb.1))) {
                    continue;
                }
                let nd = dist[i] + if diag { SQRT_2 } else { 1.0 };
                let j = nb.1 * nx + nb.0;
                if nd < dist[j] {
                    dist[j] = nd;
                }
            }
        }
    }

    #[test]
    fn straight_line_in_open_space() {
        let s = open(5.0);
        let grid = OccupancyGrid::new(&s, &GridConfig::default());
        let path = grid.search(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)).unwrap();
        assert_abs_diff_eq!(path.cost, 3.0, epsilon = 1e-12);
        let poly = grid.polyline(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), &path);
        let smooth = shortcut(&poly, &s, grid.inflation());
        assert_eq!(smooth, vec![Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)]);
    }

    #[test]
    fn astar_matches_dijkstra_around_obstacles() {
        let s = open(4.0)
            .with_obstacle(Polygon::rect(Vec2::new(-0.5, -3.0), Vec2::new(0.5, 2.0)))
            .with_obstacle(Polygon::rect(Vec2::new(1.5, -1.0), Vec2::new(2.5, 4.0)));
        let grid = OccupancyGrid::new(&s, &GridConfig::default());
        for (a, b) in [
            (Vec2::new(-3.0, -3.0), Vec2::new(3.0, 3.0)),
            (Vec2::new(-2.0, 0.0), Vec2::new(3.3, -3.0)),
            (Vec2::new(1.0, 3.0), Vec2::new(-3.0, -3.5)),
        ] {
            let astar = grid.search(a, b).unwrap().cost;
            let brute = dijkstra(&grid, grid.cell_of(a), grid.cell_of(b)).unwrap();
            assert_abs_diff_eq!(astar, brute, epsilon = 1e-9);
        }
    }

    #[test]
    fn walled_off_goal_is_unreachable() {
        let s = open(5.0).with_obstacle(Polygon::rect(Vec2::new(1.0, -5.0), Vec2::new(1.5, 5.0)));
        let grid = OccupancyGrid::new(&s, &GridConfig::default());
        assert!(matches!(
            grid.search(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)),
            Err(GridError::Unreachable { .. })
        ));
    }

    #[test]
    fn shortcut_keeps_clearance() {
        let s = open(5.0).with_obstacle(Polygon::rect(Vec2::new(-0.5, -2.0), Vec2::new(0.5, 2.0)));
        let grid = OccupancyGrid::new(&s, &GridConfig::default());
        let (a, b) = (Vec2::new(-3.0, 0.0), Vec2::new(3.0, 0.0));
        let path = grid.search(a, b).unwrap();
        let smooth = shortcut(&grid.polyline(a, b, &path), &s, grid.inflation());
        assert!(smooth.len() >= 3);
        for w in smooth.windows(2) {
            for o in &s.obstacles {
                assert!(o.segment_distance(w[0], w[1]) >= grid.inflation() - 1e-9);
            }
        }
        assert!(polyline_length(&smooth) <= path.cost + 0.5);
    }

    #[test]
    fn arc_length_sampling() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 2.0)];
        assert_eq!(point_at_arc_length(&pts, 0.5), Vec2::new(0.5, 0.0));
        assert_eq!(point_at_arc_length(&pts, 2.0), Vec2::new(1.0, 1.0));
        assert_eq!(point_at_arc_length(&pts, 9.0), Vec2::new(1.0, 2.0));
    }
}
