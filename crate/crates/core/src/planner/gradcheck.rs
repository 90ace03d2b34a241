//! Central finite-difference check of the analytic planner gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{random_sample, planner_forward, planner_gradients, planner_loss, ModelConfig, PlannerParams};
use super::{ImitationSample, PlannerError};

/// Gradients smaller than this are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn mean_loss(params: &PlannerParams, batch: &[ImitationSample], lambda_d: f64) -> Result<f64, PlannerError> {
    let mut total = 0.0;
    for s in batch {
        let pred = planner_forward(&s.context, &s.goal_obs, params)?;
        total += planner_loss(&pred, &s.target_plan, lambda_d);
    }
    Ok(total / batch.len() as f64)
}

/// Compares every gradient entry with `(L(θ+ε) − L(θ−ε)) / 2ε`.
pub fn check_gradients(params: &PlannerParams, batch: &[ImitationSample], lambda_d: f64, epsilon: f64) -> Result<GradCheckReport, PlannerError> {
    let (_, grads) = planner_gradients(params, batch, lambda_d)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().cloned().collect()))
        .collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        epsilon,
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
    };
    for (ti, (name, a_vals)) in analytic.iter().enumerate() {
        for (i, &a) in a_vals.iter().enumerate() {
            let orig = probe.tensors()[ti].iter().nth(i).copied().expect("index in range");
            set(&mut probe, ti, i, orig + epsilon);
            let plus = mean_loss(&probe, batch, lambda_d)?;
            set(&mut probe, ti, i, orig - epsilon);
            let minus = mean_loss(&probe, batch, lambda_d)?;
            set(&mut probe, ti, i, orig);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn set(p: &mut PlannerParams, tensor: usize, index: usize, value: f64) {
    let mut ts = p.tensors_mut();
    *ts[tensor].iter_mut().nth(index).expect("index in range") = value;
}

/// The standard check: random tiny model, random batch of two.
pub fn tiny_gradient_check(seed: u64) -> Result<GradCheckReport, PlannerError> {
    let cfg = ModelConfig::tiny();
    let params = PlannerParams::init(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch: Vec<ImitationSample> = (0..2).map(|_| random_sample(&mut rng, &cfg)).collect();
    check_gradients(&params, &batch, 0.1, 1e-4)
}
