//! Episode orchestration, metrics and benchmark suites.

mod bench;
mod episode;
mod export;
mod metrics;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::ApfParams;
use crate::controller::ControllerConfig;
use crate::grid::GridError;
use crate::instruction::InstructionError;
use crate::planner::{OracleConfig, PlannerError};
use crate::retrieval::{RetrievalConfig, RetrievalError};
use crate::world::{ActuationNoise, GenerationConfig, SensorConfig, WorldError, DEFAULT_UAV_RADIUS};

pub use bench::{format_table, run_benchmark, BenchOutcome, BenchReport, CellReport, EpisodeFailure, PlannerSpec, SuiteConfig};
pub use episode::{
    run_episode, run_episode_with, shortest_path_length, write_episode_jsonl, EpisodeConfig, EpisodeLog, PlanSummary, PlannerChoice,
    PoolSource, Resources, StepRecord,
};
pub use export::{export_oracle_dataset, ExportConfig};
pub use metrics::{compute_metrics, Metrics};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("retrieved pool entry {0:?} is not linked to any scenario goal")]
    UnlinkedGoal(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("learned planner requires a params file")]
    MissingParams,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Stable machine-readable error category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::World(WorldError::GenerationFailed { .. }) => "generation_failed",
            HarnessError::World(_) => "world",
            HarnessError::Instruction(InstructionError::ProviderTimeout(_)) => "provider_timeout",
            HarnessError::Instruction(InstructionError::MalformedReply(_)) => "malformed_reply",
            HarnessError::Instruction(_) => "instruction",
            HarnessError::Retrieval(RetrievalError::BadMagic { .. }) => "bad_magic",
            HarnessError::Retrieval(RetrievalError::VersionUnsupported(_)) => "version_unsupported",
            HarnessError::Retrieval(RetrievalError::Truncated { .. }) => "truncated_file",
            HarnessError::Retrieval(RetrievalError::DimMismatch { .. }) => "dim_mismatch",
            HarnessError::Retrieval(RetrievalError::NormViolation { .. }) => "norm_violation",
            HarnessError::Retrieval(_) => "retrieval",
            HarnessError::Planner(PlannerError::Grid(_)) | HarnessError::Grid(_) => "unreachable_goal",
            HarnessError::Planner(PlannerError::BadMagic { .. }) => "bad_magic",
            HarnessError::Planner(PlannerError::VersionUnsupported(_)) => "version_unsupported",
            HarnessError::Planner(PlannerError::Truncated(_)) => "truncated_file",
            HarnessError::Planner(PlannerError::ShapeMismatch(_)) => "shape_mismatch",
            HarnessError::Planner(PlannerError::Diverged { .. }) => "diverged",
            HarnessError::Planner(PlannerError::DatasetParse { .. }) => "dataset_parse",
            HarnessError::Planner(_) => "planner",
            HarnessError::UnlinkedGoal(_) => "unlinked_goal",
            HarnessError::Config(_) => "config",
            HarnessError::MissingParams => "missing_params",
            HarnessError::Io(_) => "io",
            HarnessError::Json(_) => "json",
        }
    }
}

/// Settings shared by every episode; the master JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessSettings {
    pub generation: GenerationConfig,
    pub sensor: SensorConfig,
    pub controller: ControllerConfig,
    /// Oracle waypoint sampling; speed and rate are taken from `controller`.
    pub oracle: OracleConfig,
    pub apf: ApfParams,
    pub retrieval: RetrievalConfig,
    pub noise: ActuationNoise,
    pub delta: f64,
    pub max_steps: u32,
    pub uav_radius: f64,
    pub items_path: Option<PathBuf>,
    pub affordances_path: Option<PathBuf>,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            sensor: SensorConfig::default(),
            controller: ControllerConfig::default(),
            oracle: OracleConfig::default(),
            apf: ApfParams::default(),
            retrieval: RetrievalConfig::default(),
            noise: ActuationNoise::default(),
            delta: 0.5,
            max_steps: 600,
            uav_radius: DEFAULT_UAV_RADIUS,
            items_path: None,
            affordances_path: None,
        }
    }
}

impl HarnessSettings {
    /// The real-world success radius preset.
    pub fn real_world_preset() -> Self {
        Self {
            delta: 0.8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.delta > 0.0) {
            return Err(HarnessError::Config("delta must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(HarnessError::Config("max_steps must be positive".into()));
        }
        self.controller.validate().map_err(HarnessError::Config)?;
        self.apf.validate().map_err(HarnessError::Config)?;
        if !(self.retrieval.logit_scale > 0.0) {
            return Err(HarnessError::Config("logit_scale must be positive".into()));
        }
        Ok(())
    }

    /// Oracle config with the controller's speed and rate.
    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            v_max: self.controller.v_max,
            f_c: self.controller.f_c,
            grid: self.generation.grid,
            ..self.oracle
        }
    }
}
