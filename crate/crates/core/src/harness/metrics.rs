//! SR / OS / SPL / NE over a set of episode logs.

use serde::{Deserialize, Serialize};

use super::EpisodeLog;
use crate::world::EpisodeStatus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Success rate, percent.
    pub sr: f64,
    /// Oracle success rate, percent.
    pub os: f64,
    /// Success weighted by path length, in [0, 1].
    pub spl: f64,
    /// Mean final distance to the goal, meters.
    pub ne: f64,
    pub n: usize,
}

impl Metrics {
    pub fn empty() -> Self {
        Self {
            sr: 0.0,
            os: 0.0,
            spl: 0.0,
            ne: 0.0,
            n: 0,
        }
    }
}

/// `SPL = (1/N) Σ S_i · l_i / max(p_i, l_i)`; an episode that succeeds
/// with `l_i = p_i = 0` counts as 1.
pub fn compute_metrics(logs: &[EpisodeLog], delta: f64) -> Metrics {
    if logs.is_empty() {
        return Metrics::empty();
    }
    let n = logs.len() as f64;
    let mut success = 0usize;
    let mut oracle = 0usize;
    let mut spl = 0.0;
    let mut ne = 0.0;
    for log in logs {
        if log.outcome == EpisodeStatus::Success {
            success += 1;
            let denom = log.path_length.max(log.shortest_path);
            spl += if denom > 0.0 { log.shortest_path / denom } else { 1.0 };
        }
        if log.min_goal_distance <= delta {
            oracle += 1;
        }
        ne += log.final_goal_distance;
    }
    Metrics {
        sr: 100.0 * success as f64 / n,
        os: 100.0 * oracle as f64 / n,
        spl: spl / n,
        ne: ne / n,
        n: logs.len(),
    }
}
