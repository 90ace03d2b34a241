//! Benchmark suites: scenario kinds × planners × seeded episodes.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, run_episode_with, EpisodeConfig, EpisodeLog, HarnessError, HarnessSettings, Metrics, PlannerChoice, PoolSource, Resources};
use crate::world::{generate_scenario, ScenarioKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSpec {
    pub planner: PlannerChoice,
    #[serde(default)]
    pub params_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub scenarios: Vec<ScenarioKind>,
    pub planners: Vec<PlannerSpec>,
    pub episodes: usize,
    pub base_seed: u64,
    pub parallel: bool,
    /// Phrase instructions through an affordance cue instead of naming the item.
    pub indirect_instructions: bool,
    pub bypass_prompting: bool,
    pub pool: PoolSource,
    pub settings: HarnessSettings,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioKind::ALL.to_vec(),
            planners: vec![
                PlannerSpec {
                    planner: PlannerChoice::Oracle,
                    params_path: None,
                },
                PlannerSpec {
                    planner: PlannerChoice::Apf,
                    params_path: None,
                },
            ],
            episodes: 100,
            base_seed: 0,
            parallel: true,
            indirect_instructions: false,
            bypass_prompting: false,
            pool: PoolSource::Builtin,
            settings: HarnessSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: ScenarioKind,
    pub planner: PlannerChoice,
    pub label: String,
    pub metrics: Metrics,
    pub failures: Vec<EpisodeFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub episodes: usize,
    pub base_seed: u64,
    pub delta: f64,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: BenchReport,
    /// Successful episode logs per cell, in seed order.
    pub logs: Vec<Vec<EpisodeLog>>,
}

fn label(p: PlannerChoice) -> &'static str {
    match p {
        PlannerChoice::Oracle => "pipeline + oracle planner",
        PlannerChoice::Learned => "pipeline + learned planner",
        PlannerChoice::Apf => "standard APF",
        PlannerChoice::StraightLine => "straight line",
        PlannerChoice::Random => "random",
    }
}

/// The seed picks the target goal; the instruction names it directly or
/// through one of its affordance cues.
fn episode_config(suite: &SuiteConfig, res: &Resources, kind: ScenarioKind, spec: &PlannerSpec, seed: u64) -> Result<EpisodeConfig, HarnessError> {
    let scenario = generate_scenario(kind, seed, &suite.settings.generation)?;
    let goal = &scenario.goals[(seed % scenario.goals.len() as u64) as usize];
    let instruction = match res.table.cue_for(&goal.descriptor) {
        Some(cue) if suite.indirect_instructions => format!("fly where someone can {cue}"),
        _ => format!("fly to the {}", goal.descriptor),
    };
    Ok(EpisodeConfig {
        scenario: kind,
        seed,
        instruction,
        planner: spec.planner,
        pool: suite.pool.clone(),
        params_path: spec.params_path.clone(),
        bypass_prompting: suite.bypass_prompting,
        intended_goal: Some(goal.id.clone()),
        scenario_path: None,
        settings: suite.settings.clone(),
    })
}

pub fn run_benchmark(suite: &SuiteConfig) -> Result<BenchOutcome, HarnessError> {
    suite.settings.validate()?;
    if suite.episodes == 0 || suite.scenarios.is_empty() || suite.planners.is_empty() {
        return Err(HarnessError::Config("suite needs scenarios, planners and episodes".into()));
    }
    let resources = suite
        .planners
        .iter()
        .map(|p| Resources::load(&suite.settings, &suite.pool, p.params_path.as_deref(), None))
        .collect::<Result<Vec<_>, _>>()?;

    let cells: Vec<(ScenarioKind, usize)> = suite
        .scenarios
        .iter()
        .flat_map(|&k| (0..suite.planners.len()).map(move |p| (k, p)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..suite.episodes as u64).map(move |e| (c, suite.base_seed + e)))
        .collect();
    let run = |&(c, seed): &(usize, u64)| {
        let (kind, p) = cells[c];
        let res = &resources[p];
        episode_config(suite, res, kind, &suite.planners[p], seed).and_then(|cfg| run_episode_with(&cfg, res))
    };
    let results: Vec<Result<EpisodeLog, HarnessError>> = if suite.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };

    let mut logs: Vec<Vec<EpisodeLog>> = vec![Vec::new(); cells.len()];
    let mut failures: Vec<Vec<EpisodeFailure>> = vec![Vec::new(); cells.len()];
    for (&(c, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(log) => logs[c].push(log),
            Err(e) => failures[c].push(EpisodeFailure {
                seed,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    let report = BenchReport {
        episodes: suite.episodes,
        base_seed: suite.base_seed,
        delta: suite.settings.delta,
        cells: cells
            .iter()
            .enumerate()
            .map(|(i, &(scenario, p))| CellReport {
                scenario,
                planner: suite.planners[p].planner,
                label: label(suite.planners[p].planner).to_string(),
                metrics: compute_metrics(&logs[i], suite.settings.delta),
                failures: std::mem::take(&mut failures[i]),
            })
            .collect(),
    };
    Ok(BenchOutcome { report, logs })
}

/// Fixed-width human-readable table.
pub fn format_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<28} {:>5} {:>7} {:>7} {:>6} {:>7} {:>5}",
        "scenario", "method", "N", "SR", "OS", "SPL", "NE", "fail"
    );
    for c in &report.cells {
        let m = &c.metrics;
        let _ = writeln!(
            out,
            "{:<10} {:<28} {:>5} {:>7.1} {:>7.1} {:>6.3} {:>7.2} {:>5}",
            c.scenario.as_str(),
            c.label,
            m.n,
            m.sr,
            m.os,
            m.spl,
            m.ne,
            c.failures.len()
        );
    }
    out
}
