use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use aerovln::harness::{
    export_oracle_dataset, format_table, run_benchmark, run_episode, write_episode_jsonl, EpisodeConfig, ExportConfig,
    HarnessError, HarnessSettings, PlannerChoice, PoolSource, SuiteConfig,
};
use aerovln::instruction::{
    default_affordances, default_items, encode_instruction, external_prompt, passthrough, Instruction, LlmProvider,
};
use aerovln::planner::{read_dataset, tiny_gradient_check, train_planner, write_params, ModelConfig, Optimizer, TrainConfig};
use aerovln::retrieval::{embed_descriptor, read_pool, retrieve, GoalPool, GoalPoolEntry, RetrievalConfig};
use aerovln::world::ScenarioKind;

#[derive(Parser)]
#[command(name = "aerovln", version, about = "Vision-language UAV navigation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trajectory as JSONL.
    Run {
        #[arg(long)]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "oracle")]
        planner: PlannerChoice,
        #[arg(long)]
        instruction: String,
        #[arg(long, default_value = "builtin")]
        pool: PoolSource,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        bypass_prompting: bool,
        /// Scenario JSON to use instead of generating one.
        #[arg(long)]
        scenario_file: Option<PathBuf>,
        /// Master settings JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark suite.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the text table here (it is always printed).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Write every episode log as JSONL.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Train the learned planner on an imitation dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda_d: f64,
        #[arg(long, default_value = "adam")]
        optimizer: String,
        /// Keep the learning rate constant instead of cosine-annealing it.
        #[arg(long)]
        constant_lr: bool,
        /// Model shape JSON; defaults to the standard tiny planner.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss curve as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic planner gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Encode an instruction and score it against a pool.
    Retrieve {
        #[arg(long)]
        instruction: String,
        #[arg(long, default_value = "builtin")]
        pool: PoolSource,
        #[arg(long)]
        bypass_prompting: bool,
        /// External prompt provider command, run through `sh -c`.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        fallback: bool,
    },
    /// Roll out the oracle and write imitation samples as JSONL.
    ExportOracle {
        #[arg(long)]
        scenario: ScenarioKind,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        context: usize,
        #[arg(long)]
        no_noise: bool,
        /// Keep one sample every N control steps.
        #[arg(long, default_value_t = 1)]
        sample_every: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl<E: Into<HarnessError>> From<E> for CliError {
    fn from(e: E) -> Self {
        let e = e.into();
        CliError {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn fail(kind: &'static str, message: impl Into<String>) -> CliError {
    CliError {
        kind,
        message: message.into(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(HarnessError::from)?;
    Ok(serde_json::from_str(&text).map_err(HarnessError::from)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(HarnessError::from)?;
    text.push('\n');
    fs::write(path, text).map_err(HarnessError::from)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind, "message": e.message}));
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            scenario,
            seed,
            planner,
            instruction,
            pool,
            params,
            bypass_prompting,
            scenario_file,
            config,
            out,
        } => {
            let mut cfg = EpisodeConfig::new(scenario, seed, &instruction, planner);
            cfg.pool = pool;
            cfg.params_path = params;
            cfg.bypass_prompting = bypass_prompting;
            cfg.scenario_path = scenario_file;
            if let Some(path) = config {
                cfg.settings = read_json::<HarnessSettings>(&path)?;
            }
            let log = run_episode(&cfg)?;
            let mut w = BufWriter::new(File::create(&out).map_err(HarnessError::from)?);
            write_episode_jsonl(&log, &mut w)?;
            w.flush().map_err(HarnessError::from)?;
            println!(
                "{}",
                json!({
                    "outcome": log.outcome,
                    "steps": log.steps.len(),
                    "target_goal": log.target_goal,
                    "final_goal_distance": log.final_goal_distance,
                    "path_length": log.path_length,
                })
            );
        }
        Command::Bench { suite, out, table, logs } => {
            let suite: SuiteConfig = read_json(&suite)?;
            let outcome = run_benchmark(&suite)?;
            write_json(&out, &outcome.report)?;
            let text = format_table(&outcome.report);
            print!("{text}");
            if let Some(path) = table {
                fs::write(path, &text).map_err(HarnessError::from)?;
            }
            if let Some(path) = logs {
                let mut w = BufWriter::new(File::create(&path).map_err(HarnessError::from)?);
                for log in outcome.logs.iter().flatten() {
                    write_episode_jsonl(log, &mut w)?;
                }
                w.flush().map_err(HarnessError::from)?;
            }
        }
        Command::Train {
            data,
            epochs,
            lr,
            seed,
            batch_size,
            lambda_d,
            optimizer,
            constant_lr,
            model,
            out,
            report,
        } => {
            let optimizer = match optimizer.as_str() {
                "adam" => Optimizer::Adam,
                "sgd" => Optimizer::Sgd,
                other => return Err(fail("config", format!("unknown optimizer {other:?}"))),
            };
            let model = match model {
                Some(p) => read_json::<ModelConfig>(&p)?,
                None => ModelConfig::default(),
            };
            let samples = read_dataset(&data)?;
            let cfg = TrainConfig {
                epochs,
                lr,
                batch_size,
                lambda_d,
                seed,
                optimizer,
                cosine_decay: !constant_lr,
            };
            let (params, rep) = train_planner(&samples, model, &cfg)?;
            write_params(&params, &out)?;
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
            println!(
                "{}",
                json!({"samples": samples.len(), "initial_loss": rep.initial_loss(), "final_loss": rep.final_loss()})
            );
        }
        Command::Gradcheck { seed } => {
            let r = tiny_gradient_check(seed)?;
            println!("{}", serde_json::to_string(&r).map_err(HarnessError::from)?);
            if !r.passed(1e-4) {
                return Err(fail("gradcheck_failed", format!("max relative error {}", r.max_rel_error)));
            }
        }
        Command::Retrieve {
            instruction,
            pool,
            bypass_prompting,
            provider,
            fallback,
        } => {
            let items = default_items();
            let table = default_affordances();
            let instr = Instruction::new(instruction)?;
            let prompt = match provider {
                Some(cmd) => {
                    let p = LlmProvider::new(vec!["sh".into(), "-c".into(), cmd]).with_fallback(fallback);
                    external_prompt(&instr, &p, &items, &table)?
                }
                None if bypass_prompting => passthrough(instr.raw()),
                None => encode_instruction(&instr, &items, &table),
            };
            let rcfg = RetrievalConfig::default();
            let pool = match pool {
                PoolSource::File(p) => read_pool(&p)?,
                PoolSource::Builtin => {
                    let entries = items
                        .iter()
                        .map(|d| {
                            Ok(GoalPoolEntry {
                                id: d.replace(' ', "_"),
                                descriptor: d.clone(),
                                embedding: embed_descriptor(d, rcfg.dim)?,
                                goal_link: None,
                            })
                        })
                        .collect::<Result<Vec<_>, aerovln::retrieval::RetrievalError>>()?;
                    GoalPool::new(rcfg.dim, entries)?
                }
            };
            let result = retrieve(&prompt, &pool, &rcfg)?;
            println!("{}", json!({"prompt": prompt, "result": result}));
        }
        Command::ExportOracle {
            scenario,
            episodes,
            seed,
            context,
            no_noise,
            sample_every,
            out,
        } => {
            let mut cfg = ExportConfig {
                scenario,
                episodes,
                seed,
                context,
                sample_every,
                ..Default::default()
            };
            if no_noise {
                cfg.noise = Default::default();
            }
            let samples = export_oracle_dataset(&cfg)?;
            aerovln::planner::write_dataset(&out, &samples)?;
            println!("{}", json!({"samples": samples.len()}));
        }
    }
    Ok(())
}
