//! One closed-loop episode: prompt, retrieval, then plan / control / step
//! at the control rate until a terminal status.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, HarnessSettings};
use crate::baselines::{apf_action, scripted_action, ScriptedKind};
use crate::controller::{pid_step, scale_waypoint, PidState};
use crate::geometry::Vec2;
use crate::grid::OccupancyGrid;
use crate::instruction::{
    default_affordances, default_items, encode_instruction, load_items, passthrough, AffordanceTable, Instruction, Prompt,
};
use crate::planner::network::Inputs;
use crate::planner::{goal_observation, read_params, ObsContext, OraclePlanner, PlannerParams, WaypointPlan};
use crate::retrieval::{read_pool, retrieve, GoalPool, RetrievalResult};
use crate::world::{
    episode_status, generate_scenario, render_observation, ContinuousAction, EgoObservation, EpisodeStatus, GoalObject,
    NoisyDynamics, Pose, Scenario, ScenarioKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerChoice {
    Oracle,
    Learned,
    Apf,
    StraightLine,
    Random,
}

impl PlannerChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerChoice::Oracle => "oracle",
            PlannerChoice::Learned => "learned",
            PlannerChoice::Apf => "apf",
            PlannerChoice::StraightLine => "straight",
            PlannerChoice::Random => "random",
        }
    }
}

impl FromStr for PlannerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(PlannerChoice::Oracle),
            "learned" => Ok(PlannerChoice::Learned),
            "apf" => Ok(PlannerChoice::Apf),
            "straight" | "straight_line" => Ok(PlannerChoice::StraightLine),
            "random" => Ok(PlannerChoice::Random),
            other => Err(format!("unknown planner {other:?}")),
        }
    }
}

/// Candidate pool: hashed descriptors of the scenario's goals, or a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Builtin,
    File(PathBuf),
}

impl FromStr for PoolSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "builtin" {
            PoolSource::Builtin
        } else {
            PoolSource::File(PathBuf::from(s))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub instruction: String,
    pub planner: PlannerChoice,
    pub pool: PoolSource,
    pub params_path: Option<PathBuf>,
    /// Use the raw instruction as the retrieval query.
    pub bypass_prompting: bool,
    /// Goal the instruction refers to; success is judged against it. When
    /// absent the retrieved goal is used.
    pub intended_goal: Option<String>,
    /// Scenario loaded from JSON instead of generated.
    pub scenario_path: Option<PathBuf>,
    pub settings: HarnessSettings,
}

impl EpisodeConfig {
    pub fn new(scenario: ScenarioKind, seed: u64, instruction: &str, planner: PlannerChoice) -> Self {
        Self {
            scenario,
            seed,
            instruction: instruction.to_string(),
            planner,
            pool: PoolSource::Builtin,
            params_path: None,
            bypass_prompting: false,
            intended_goal: None,
            scenario_path: None,
            settings: HarnessSettings::default(),
        }
    }
}

/// Files loaded once and shared read-only across episodes.
#[derive(Debug, Clone)]
pub struct Resources {
    pub items: Vec<String>,
    pub table: AffordanceTable,
    pub pool: Option<GoalPool>,
    pub params: Option<Arc<PlannerParams>>,
    pub fixed_scenario: Option<Scenario>,
}

impl Resources {
    pub fn load(
        settings: &HarnessSettings,
        pool: &PoolSource,
        params_path: Option<&Path>,
        scenario_path: Option<&Path>,
    ) -> Result<Self, HarnessError> {
        let items = match &settings.items_path {
            Some(p) => load_items(p)?,
            None => default_items(),
        };
        let table = match &settings.affordances_path {
            Some(p) => AffordanceTable::load(p)?,
            None => default_affordances(),
        };
        let pool = match pool {
            PoolSource::Builtin => None,
            PoolSource::File(p) => Some(read_pool(p)?),
        };
        let params = params_path.map(read_params).transpose()?.map(Arc::new);
        let fixed_scenario = match scenario_path {
            Some(p) => {
                let s = Scenario::from_json(&std::fs::read_to_string(p)?)?;
                s.validate(settings.uav_radius)?;
                Some(s)
            }
            None => None,
        };
        Ok(Self {
            items,
            table,
            pool,
            params,
            fixed_scenario,
        })
    }

    pub fn for_episode(cfg: &EpisodeConfig) -> Result<Self, HarnessError> {
        Self::load(&cfg.settings, &cfg.pool, cfg.params_path.as_deref(), cfg.scenario_path.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub temporal_distance: f64,
    pub waypoint: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub pose: Pose,
    pub plan: Option<PlanSummary>,
    pub action: ContinuousAction,
    pub status: EpisodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub config: EpisodeConfig,
    pub prompt: Prompt,
    pub retrieval: RetrievalResult,
    pub target_goal: String,
    pub intended_goal: String,
    pub goal_position: Vec2,
    pub spawn: Pose,
    pub steps: Vec<StepRecord>,
    pub outcome: EpisodeStatus,
    pub path_length: f64,
    pub min_goal_distance: f64,
    pub final_goal_distance: f64,
    pub shortest_path: f64,
}

impl EpisodeLog {
    pub fn poses(&self) -> impl Iterator<Item = Pose> + '_ {
        std::iter::once(self.spawn).chain(self.steps.iter().map(|s| s.pose))
    }
}

/// Writes a header line (the log without steps) followed by one line per
/// step.
pub fn write_episode_jsonl<W: Write>(log: &EpisodeLog, mut out: W) -> Result<(), HarnessError> {
    let header = EpisodeLog {
        steps: Vec::new(),
        ..log.clone()
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in &log.steps {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Grid shortest path (octile metric) from the scenario spawn to `goal`.
pub fn shortest_path_length(scenario: &Scenario, goal: &GoalObject, settings: &HarnessSettings) -> Result<f64, HarnessError> {
    let grid = OccupancyGrid::new(scenario, &settings.generation.grid);
    Ok(grid.search(scenario.spawn.position(), goal.position)?.cost)
}

pub fn run_episode(cfg: &EpisodeConfig) -> Result<EpisodeLog, HarnessError> {
    let res = Resources::for_episode(cfg)?;
    run_episode_with(cfg, &res)
}

enum Policy<'a> {
    Oracle(OraclePlanner<'a>),
    Learned { params: &'a PlannerParams, goal_obs: EgoObservation },
    Apf,
    Scripted(ScriptedKind, ChaCha8Rng),
}

pub fn run_episode_with(cfg: &EpisodeConfig, res: &Resources) -> Result<EpisodeLog, HarnessError> {
    let st = &cfg.settings;
    st.validate()?;
    let scenario = match &res.fixed_scenario {
        Some(s) => s.clone(),
        None => generate_scenario(cfg.scenario, cfg.seed, &st.generation)?,
    };

    let instruction = Instruction::new(cfg.instruction.clone())?;
    let prompt = if cfg.bypass_prompting {
        passthrough(instruction.raw())
    } else {
        encode_instruction(&instruction, &res.items, &res.table)
    };
    let mut pool = match &res.pool {
        Some(p) => p.clone(),
        None => GoalPool::from_scenario(&scenario, st.retrieval.dim)?,
    };
    pool.link_to(&scenario);
    let retrieval = retrieve(&prompt, &pool, &st.retrieval)?;
    let entry = &pool.entries[retrieval.best_index];
    let target_id = entry.goal_link.clone().ok_or_else(|| HarnessError::UnlinkedGoal(entry.id.clone()))?;
    let target = scenario.goal(&target_id).expect("linked goal exists").clone();
    let intended = match &cfg.intended_goal {
        Some(id) => scenario
            .goal(id)
            .cloned()
            .ok_or_else(|| HarnessError::Config(format!("intended goal {id:?} not in scenario")))?,
        None => target.clone(),
    };
    let shortest_path = shortest_path_length(&scenario, &intended, st)?;

    let ctrl = &st.controller;
    let dt = ctrl.dt();
    let mut policy = match cfg.planner {
        PlannerChoice::Oracle => Policy::Oracle(OraclePlanner::new(&scenario, st.oracle_config())),
        PlannerChoice::Learned => {
            let params = res.params.as_deref().ok_or(HarnessError::MissingParams)?;
            let goal_obs = goal_observation(&scenario, &target.id, &st.sensor, st.uav_radius)?;
            Policy::Learned { params, goal_obs }
        }
        PlannerChoice::Apf => Policy::Apf,
        PlannerChoice::StraightLine => Policy::Scripted(ScriptedKind::StraightLine, ChaCha8Rng::seed_from_u64(cfg.seed)),
        PlannerChoice::Random => Policy::Scripted(ScriptedKind::Random, ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let context_len = match &policy {
        Policy::Learned { params, .. } => params.cfg.context + 1,
        _ => 1,
    };

    let mut dynamics = NoisyDynamics::new(st.noise, cfg.seed);
    let mut pid = PidState::default();
    let mut pose = scenario.spawn;
    let mut history: Vec<EgoObservation> = Vec::with_capacity(context_len + 1);
    let mut steps = Vec::new();
    let mut outcome = EpisodeStatus::Running;
    for step in 0..st.max_steps {
        let obs = render_observation(&pose, &scenario, &st.sensor, step);
        history.push(obs);
        if history.len() > context_len {
            history.remove(0);
        }
        let mut plan_summary = None;
        let mut follow = |plan: &WaypointPlan, pid: &mut PidState| {
            let wp = plan.waypoints[0];
            plan_summary = Some(PlanSummary {
                temporal_distance: plan.temporal_distance,
                waypoint: wp,
            });
            pid_step(scale_waypoint(wp, ctrl.v_max, ctrl.f_c), ctrl, pid, dt)
        };
        let action = match &mut policy {
            Policy::Oracle(oracle) => match oracle.plan(&pose, target.position) {
                Ok(plan) => follow(&plan, &mut pid),
                Err(_) => ContinuousAction::STOP,
            },
            Policy::Learned { params, goal_obs } => {
                let ctx = ObsContext::from_history(&history, params.cfg.context);
                let inputs = Inputs::new(&ctx, goal_obs, &params.cfg)?;
                let plan = crate::planner::network::forward_inputs(&inputs, params);
                follow(&plan, &mut pid)
            }
            Policy::Apf => apf_action(&pose, target.position, &scenario, &st.apf, ctrl, st.uav_radius, &mut pid),
            Policy::Scripted(kind, rng) => scripted_action(*kind, &pose, target.position, ctrl, &mut pid, rng),
        };
        let action = action.clamped(ctrl.v_max, ctrl.omega_max);
        pose = dynamics.step(pose, action, dt);
        let status = episode_status(&pose, &scenario, &intended, st.delta, st.uav_radius, step + 1, st.max_steps);
        steps.push(StepRecord {
            step: step + 1,
            pose,
            plan: plan_summary,
            action,
            status,
        });
        if status.is_terminal() {
            outcome = status;
            break;
        }
    }

    let goal = intended.position;
    let spawn = scenario.spawn;
    let mut path_length = 0.0;
    let mut min_goal_distance = spawn.position().distance(goal);
    let mut prev = spawn.position();
    for s in &steps {
        let p = s.pose.position();
        path_length += prev.distance(p);
        min_goal_distance = min_goal_distance.min(p.distance(goal));
        prev = p;
    }
    Ok(EpisodeLog {
        config: cfg.clone(),
        prompt,
        retrieval,
        target_goal: target.id.clone(),
        intended_goal: intended.id.clone(),
        goal_position: goal,
        spawn,
        steps,
        outcome,
        path_length,
        min_goal_distance,
        final_goal_distance: prev.distance(goal),
        shortest_path,
    })
}
