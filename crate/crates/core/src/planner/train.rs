//! Mini-batch imitation training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{batch_gradient, forward_inputs, planner_loss, waypoint_error, Inputs, ModelConfig, PlannerParams};
use super::{ImitationSample, PlannerError, WaypointPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda_d: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Anneal the step size from `lr` to 0 along a half cosine.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 32,
            lambda_d: 0.1,
            seed: 0,
            optimizer: Optimizer::Adam,
            cosine_decay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-dataset loss before training, then after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.epoch_losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least the initial loss")
    }
}

struct Adam {
    m: PlannerParams,
    v: PlannerParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut PlannerParams, grad: &PlannerParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grad.tensors());
        for (((p, m), v), g) in tensors {
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

fn encode_all(samples: &[ImitationSample], cfg: &ModelConfig) -> Result<Vec<Inputs>, PlannerError> {
    samples
        .iter()
        .map(|s| {
            if s.target_plan.waypoints.len() != cfg.horizon {
                return Err(PlannerError::ShapeMismatch(format!(
                    "target has {} waypoints, model horizon is {}",
                    s.target_plan.waypoints.len(),
                    cfg.horizon
                )));
            }
            Inputs::new(&s.context, &s.goal_obs, cfg)
        })
        .collect()
}

fn mean_metric(params: &PlannerParams, inputs: &[Inputs], targets: &[&WaypointPlan], f: impl Fn(&WaypointPlan, &WaypointPlan) -> f64 + Sync) -> f64 {
    let per: Vec<f64> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(inp, t)| f(&forward_inputs(inp, params), t))
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Trains from `PlannerParams::init(model, seed)`. Shuffling and
/// initialization derive from `cfg.seed`, so runs are reproducible.
pub fn train_planner(samples: &[ImitationSample], model: ModelConfig, cfg: &TrainConfig) -> Result<(PlannerParams, TrainReport), PlannerError> {
    let params = PlannerParams::init(model, cfg.seed);
    train_from(params, samples, cfg)
}

pub fn train_from(mut params: PlannerParams, samples: &[ImitationSample], cfg: &TrainConfig) -> Result<(PlannerParams, TrainReport), PlannerError> {
    if samples.is_empty() {
        return Err(PlannerError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(PlannerError::InvalidParams("batch_size must be positive and lr finite and nonnegative".into()));
    }
    let inputs = encode_all(samples, &params.cfg)?;
    let targets: Vec<&WaypointPlan> = samples.iter().map(|s| &s.target_plan).collect();
    let full_loss = |p: &PlannerParams| mean_metric(p, &inputs, &targets, |a, b| planner_loss(a, b, cfg.lambda_d));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut adam = Adam {
        m: PlannerParams::zeros(params.cfg),
        v: PlannerParams::zeros(params.cfg),
        t: 0,
    };
    let mut losses = vec![full_loss(&params)];
    let total_steps = (cfg.epochs * samples.len().div_ceil(cfg.batch_size)) as f64;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let lr = if cfg.cosine_decay {
                0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos())
            } else {
                cfg.lr
            };
            step += 1;
            let b_in: Vec<&Inputs> = chunk.iter().map(|&i| &inputs[i]).collect();
            let b_t: Vec<&WaypointPlan> = chunk.iter().map(|&i| targets[i]).collect();
            let (_, grad) = batch_gradient(&params, &b_in, &b_t, cfg.lambda_d);
            match cfg.optimizer {
                Optimizer::Sgd => params.add_scaled(&grad, -lr),
                Optimizer::Adam => adam.step(&mut params, &grad, lr),
            }
        }
        let loss = full_loss(&params);
        if !loss.is_finite() || !params.is_finite() {
            return Err(PlannerError::Diverged { epoch, loss });
        }
        losses.push(loss);
    }
    Ok((params, TrainReport { epoch_losses: losses }))
}

/// Mean waypoint MSE (no temporal-distance term) over `samples`.
pub fn waypoint_mse(params: &PlannerParams, samples: &[ImitationSample]) -> Result<f64, PlannerError> {
    if samples.is_empty() {
        return Err(PlannerError::EmptyDataset);
    }
    let inputs = encode_all(samples, &params.cfg)?;
    let targets: Vec<&WaypointPlan> = samples.iter().map(|s| &s.target_plan).collect();
    Ok(mean_metric(params, &inputs, &targets, waypoint_error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::network::random_sample;

    fn data(n: usize) -> Vec<ImitationSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        (0..n).map(|_| random_sample(&mut rng, &ModelConfig::tiny())).collect()
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let d = data(10);
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            batch_size: 4,
            ..Default::default()
        };
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig { optimizer: opt, ..cfg };
            let (p, report) = train_planner(&d, ModelConfig::tiny(), &cfg).unwrap();
            assert_eq!(p, PlannerParams::init(ModelConfig::tiny(), cfg.seed));
            assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn same_seed_same_params() {
        let d = data(12);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            ..Default::default()
        };
        let (a, ra) = train_planner(&d, ModelConfig::tiny(), &cfg).unwrap();
        let (b, rb) = train_planner(&d, ModelConfig::tiny(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = train_planner(&d, ModelConfig::tiny(), &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_set() {
        let d = data(16);
        let cfg = TrainConfig {
            epochs: 60,
            lr: 1e-2,
            batch_size: 8,
            ..Default::default()
        };
        let (_, r) = train_planner(&d, ModelConfig::tiny(), &cfg).unwrap();
        assert!(r.final_loss() < 0.5 * r.initial_loss(), "{:?}", r.epoch_losses);
    }

    #[test]
    fn cosine_decay_changes_the_run_but_not_the_start() {
        let d = data(8);
        let cos = TrainConfig {
            epochs: 4,
            lr: 1e-2,
            batch_size: 4,
            ..Default::default()
        };
        let flat = TrainConfig { cosine_decay: false, ..cos };
        let (a, ra) = train_planner(&d, ModelConfig::tiny(), &cos).unwrap();
        let (b, rb) = train_planner(&d, ModelConfig::tiny(), &flat).unwrap();
        assert_eq!(ra.initial_loss(), rb.initial_loss());
        assert_ne!(a, b);
    }

    #[test]
    fn divergence_and_empty_data_are_errors() {
        assert!(matches!(
            train_planner(&[], ModelConfig::tiny(), &TrainConfig::default()),
            Err(PlannerError::EmptyDataset)
        ));
        let cfg = TrainConfig {
            epochs: 5,
            lr: 1e200,
            optimizer: Optimizer::Sgd,
            ..Default::default()
        };
        assert!(matches!(
            train_planner(&data(4), ModelConfig::tiny(), &cfg),
            Err(PlannerError::Diverged { .. })
        ));
    }
}
