//! Tiny goal-conditioned transformer planner with hand-written backprop.
//!
//! Token layout: `P + 1` frame tokens from the shared encoder ψ, then one
//! goal token from φ over the current and goal panoramas, plus learned
//! positional encodings. Pre-LN causal single-head blocks, a final
//! LayerNorm, mean pooling and a two-layer head emitting `1 + 2H` values.

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ImitationSample, PlannerError, WaypointPlan};
use crate::geometry::Vec2;
use crate::world::{EgoObservation, SensorConfig, SEMANTIC_FREE, SEMANTIC_OBSTACLE};

/// Temporal distance normalizer used inside the loss, in steps.
pub const D_NORM: f64 = 100.0;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rays: usize,
    pub d_max: f64,
    /// Distinct goal semantic ids given their own one-hot class.
    pub goal_classes: usize,
    /// `P`: past frames in the context (the context holds `P + 1`).
    pub context: usize,
    /// `H`: predicted waypoints.
    pub horizon: usize,
    pub d_model: usize,
    /// Hidden width of the ψ / φ encoders.
    pub hidden: usize,
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rays: 64,
            d_max: 10.0,
            goal_classes: 3,
            context: 5,
            horizon: 5,
            d_model: 64,
            hidden: 64,
            layers: 2,
        }
    }
}

impl ModelConfig {
    /// The gradient-check configuration.
    pub fn tiny() -> Self {
        Self {
            rays: 8,
            d_max: 10.0,
            goal_classes: 3,
            context: 2,
            horizon: 2,
            d_model: 8,
            hidden: 8,
            layers: 1,
        }
    }

    /// free, obstacle, then one class per goal.
    pub fn classes(&self) -> usize {
        2 + self.goal_classes
    }

    pub fn features(&self) -> usize {
        self.rays * (1 + self.classes())
    }

    pub fn tokens(&self) -> usize {
        self.context + 2
    }

    pub fn outputs(&self) -> usize {
        1 + 2 * self.horizon
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let ok = self.rays > 0
            && self.d_max > 0.0
            && self.horizon > 0
            && self.d_model > 0
            && self.hidden > 0
            && self.layers > 0;
        if ok {
            Ok(())
        } else {
            Err(PlannerError::InvalidParams(format!("invalid model config {self:?}")))
        }
    }
}

/// `P + 1` observations, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsContext {
    pub frames: Vec<EgoObservation>,
}

impl ObsContext {
    /// The last `p + 1` entries of `history`, left-padded by repeating the
    /// first frame when the history is shorter.
    pub fn from_history(history: &[EgoObservation], p: usize) -> Self {
        let n = p + 1;
        let frames = if history.len() >= n {
            history[history.len() - n..].to_vec()
        } else {
            let pad = n - history.len();
            std::iter::repeat_n(history[0].clone(), pad)
                .chain(history.iter().cloned())
                .collect()
        };
        Self { frames }
    }

    pub fn current(&self) -> &EgoObservation {
        self.frames.last().expect("context is never empty")
    }
}

/// Per-ray `[depth / d_max, one-hot class]`, flattened.
pub fn encode_observation(obs: &EgoObservation, cfg: &ModelConfig) -> Result<Vec<f64>, PlannerError> {
    if obs.depths.len() != cfg.rays || obs.semantics.len() != cfg.rays {
        return Err(PlannerError::ShapeMismatch(format!(
            "observation has {} rays, model expects {}",
            obs.depths.len(),
            cfg.rays
        )));
    }
    let width = 1 + cfg.classes();
    let mut out = vec![0.0; cfg.features()];
    for (i, (&d, &sem)) in obs.depths.iter().zip(&obs.semantics).enumerate() {
        let row = &mut out[i * width..(i + 1) * width];
        row[0] = d / cfg.d_max;
        let class = match sem {
            SEMANTIC_FREE => Some(0),
            SEMANTIC_OBSTACLE => Some(1),
            k if (k as usize) <= cfg.goal_classes => Some(1 + k as usize),
            _ => None,
        };
        if let Some(c) = class {
            row[1 + c] = 1.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array2<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array2<f64>,
}

/// All weights; biases and LayerNorm vectors are `1 × n` rows. The same
/// type carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    pub cfg: ModelConfig,
    pub psi_w1: Array2<f64>,
    pub psi_b1: Array2<f64>,
    pub psi_w2: Array2<f64>,
    pub psi_b2: Array2<f64>,
    pub phi_w1: Array2<f64>,
    pub phi_b1: Array2<f64>,
    pub phi_w2: Array2<f64>,
    pub phi_b2: Array2<f64>,
    pub pos: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array2<f64>,
    pub lnf_b: Array2<f64>,
    pub head_w1: Array2<f64>,
    pub head_b1: Array2<f64>,
    pub head_w2: Array2<f64>,
    pub head_b2: Array2<f64>,
}

impl PlannerParams {
    pub fn zeros(cfg: ModelConfig) -> Self {
        let z = |r: usize, c: usize| Array2::zeros((r, c));
        let (f, h, d) = (cfg.features(), cfg.hidden, cfg.d_model);
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                ln1_g: z(1, d),
                ln1_b: z(1, d),
                wq: z(d, d),
                wk: z(d, d),
                wv: z(d, d),
                wo: z(d, d),
                ln2_g: z(1, d),
                ln2_b: z(1, d),
                ff_w1: z(d, 2 * d),
                ff_b1: z(1, 2 * d),
                ff_w2: z(2 * d, d),
                ff_b2: z(1, d),
            })
            .collect();
        Self {
            cfg,
            psi_w1: z(f, h),
            psi_b1: z(1, h),
            psi_w2: z(h, d),
            psi_b2: z(1, d),
            phi_w1: z(2 * f, h),
            phi_b1: z(1, h),
            phi_w2: z(h, d),
            phi_b2: z(1, d),
            pos: z(cfg.tokens(), d),
            blocks,
            lnf_g: z(1, d),
            lnf_b: z(1, d),
            head_w1: z(d, d),
            head_b1: z(1, d),
            head_w2: z(d, cfg.outputs()),
            head_b2: z(1, cfg.outputs()),
        }
    }

    /// Weights uniform in ±1/√fan_in, biases zero, LayerNorm gain one.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in p.named_tensors_mut() {
            if name.ends_with("_g") {
                t.fill(1.0);
            } else if name.ends_with("_w1") || name.ends_with("_w2") || name.starts_with('w') || name.contains(".w") || name == "pos" {
                let bound = 1.0 / (t.nrows() as f64).sqrt();
                t.mapv_inplace(|_| rng.random_range(-bound..=bound));
            }
        }
        p
    }

    fn names(cfg: &ModelConfig) -> Vec<String> {
        let mut n: Vec<String> = ["psi_w1", "psi_b1", "psi_w2", "psi_b2", "phi_w1", "phi_b1", "phi_w2", "phi_b2", "pos"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for l in 0..cfg.layers {
            for t in ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2"] {
                n.push(format!("block{l}.{t}"));
            }
        }
        n.extend(["lnf_g", "lnf_b", "head_w1", "head_b1", "head_w2", "head_b2"].iter().map(|s| s.to_string()));
        n
    }

    /// Tensors in declaration order (the order of the params file).
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![
            &self.psi_w1, &self.psi_b1, &self.psi_w2, &self.psi_b2, &self.phi_w1, &self.phi_b1, &self.phi_w2,
            &self.phi_b2, &self.pos,
        ];
        for b in &self.blocks {
            v.extend([
                &b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.ff_w1, &b.ff_b1, &b.ff_w2,
                &b.ff_b2,
            ]);
        }
        v.extend([&self.lnf_g, &self.lnf_b, &self.head_w1, &self.head_b1, &self.head_w2, &self.head_b2]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![
            &mut self.psi_w1,
            &mut self.psi_b1,
            &mut self.psi_w2,
            &mut self.psi_b2,
            &mut self.phi_w1,
            &mut self.phi_b1,
            &mut self.phi_w2,
            &mut self.phi_b2,
            &mut self.pos,
        ];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_g,
                &mut b.ln1_b,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.ln2_g,
                &mut b.ln2_b,
                &mut b.ff_w1,
                &mut b.ff_b1,
                &mut b.ff_w2,
                &mut b.ff_b2,
            ]);
        }
        v.extend([
            &mut self.lnf_g,
            &mut self.lnf_b,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ]);
        v
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        Self::names(&self.cfg).into_iter().zip(self.tensors()).collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let names = Self::names(&self.cfg);
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &PlannerParams, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(k, b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * k);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    y: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> LnCache {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv_std.push(is);
    }
    let y = &xhat * g + b;
    LnCache { xhat, inv_std, y }
}

/// Returns `dx` and accumulates into `dg`, `db`.
fn layer_norm_back(dy: &Array2<f64>, c: &LnCache, g: &Array2<f64>, dg: &mut Array2<f64>, db: &mut Array2<f64>) -> Array2<f64> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = dh.sum() / n;
        let m2 = dh.dot(&xh) / n;
        let is = c.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = is * (dh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

fn causal_softmax(scores: &mut Array2<f64>) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row.iter().take(i + 1).cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

struct BlockCache {
    n1: LnCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    c: Array2<f64>,
    n2: LnCache,
    u: Array2<f64>,
    z: Array2<f64>,
}

struct Cache {
    frames: Array2<f64>,
    h1: Array2<f64>,
    a1: Array2<f64>,
    goal_in: Array2<f64>,
    gh1: Array2<f64>,
    ga1: Array2<f64>,
    blocks: Vec<BlockCache>,
    nf: LnCache,
    pooled: Array2<f64>,
    hu: Array2<f64>,
    hz: Array2<f64>,
    out: Array2<f64>,
}

/// Encoded network inputs: frame features `(P + 1) × F` and the goal-fusion
/// input `1 × 2F`.
pub struct Inputs {
    frames: Array2<f64>,
    goal_in: Array2<f64>,
}

impl Inputs {
    pub fn new(ctx: &ObsContext, goal_obs: &EgoObservation, cfg: &ModelConfig) -> Result<Self, PlannerError> {
        if ctx.frames.len() != cfg.context + 1 {
            return Err(PlannerError::ShapeMismatch(format!(
                "context has {} frames, model expects {}",
                ctx.frames.len(),
                cfg.context + 1
            )));
        }
        let f = cfg.features();
        let mut frames = Array2::zeros((cfg.context + 1, f));
        for (i, obs) in ctx.frames.iter().enumerate() {
            let row = encode_observation(obs, cfg)?;
            frames.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        }
        let goal = encode_observation(goal_obs, cfg)?;
        let mut goal_in = Array2::zeros((1, 2 * f));
        goal_in.slice_mut(s![0, ..f]).assign(&frames.row(cfg.context));
        goal_in.slice_mut(s![0, f..]).assign(&ndarray::ArrayView1::from(&goal));
        Ok(Self { frames, goal_in })
    }
}

fn forward_cached(p: &PlannerParams, inp: &Inputs) -> Cache {
    let cfg = &p.cfg;
    let h1 = inp.frames.dot(&p.psi_w1) + &p.psi_b1;
    let a1 = h1.mapv(silu);
    let e = a1.dot(&p.psi_w2) + &p.psi_b2;
    let gh1 = inp.goal_in.dot(&p.phi_w1) + &p.phi_b1;
    let ga1 = gh1.mapv(silu);
    let g = ga1.dot(&p.phi_w2) + &p.phi_b2;
    let mut x = concatenate(Axis(0), &[e.view(), g.view()]).expect("token shapes agree") + &p.pos;

    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let mut blocks = Vec::with_capacity(cfg.layers);
    for b in &p.blocks {
        let n1 = layer_norm(&x, &b.ln1_g, &b.ln1_b);
        let q = n1.y.dot(&b.wq);
        let k = n1.y.dot(&b.wk);
        let v = n1.y.dot(&b.wv);
        let mut a = q.dot(&k.t()) * scale;
        causal_softmax(&mut a);
        let c = a.dot(&v);
        let x1 = &x + &c.dot(&b.wo);
        let n2 = layer_norm(&x1, &b.ln2_g, &b.ln2_b);
        let u = n2.y.dot(&b.ff_w1) + &b.ff_b1;
        let z = u.mapv(silu);
        x = &x1 + &(z.dot(&b.ff_w2) + &b.ff_b2);
        blocks.push(BlockCache { n1, q, k, v, a, c, n2, u, z });
    }
    let nf = layer_norm(&x, &p.lnf_g, &p.lnf_b);
    let pooled = nf.y.mean_axis(Axis(0)).expect("tokens nonempty").insert_axis(Axis(0));
    let hu = pooled.dot(&p.head_w1) + &p.head_b1;
    let hz = hu.mapv(silu);
    let out = hz.dot(&p.head_w2) + &p.head_b2;
    Cache {
        frames: inp.frames.clone(),
        h1,
        a1,
        goal_in: inp.goal_in.clone(),
        gh1,
        ga1,
        blocks,
        nf,
        pooled,
        hu,
        hz,
        out,
    }
}

fn plan_from_output(out: &Array2<f64>, horizon: usize) -> WaypointPlan {
    let o = out.row(0);
    WaypointPlan {
        temporal_distance: softplus(o[0]),
        waypoints: (0..horizon)
            .map(|k| Vec2::new(o[1 + 2 * k].tanh(), o[2 + 2 * k].tanh()))
            .collect(),
    }
}

fn backward(p: &PlannerParams, c: &Cache, d_out: &Array2<f64>) -> PlannerParams {
    let cfg = &p.cfg;
    let mut gr = PlannerParams::zeros(*cfg);

    gr.head_w2 = c.hz.t().dot(d_out);
    gr.head_b2 = d_out.clone();
    let dhz = d_out.dot(&p.head_w2.t());
    let dhu = &dhz * &c.hu.mapv(silu_grad);
    gr.head_w1 = c.pooled.t().dot(&dhu);
    gr.head_b1 = dhu.clone();
    let dpooled = dhu.dot(&p.head_w1.t());

    let t = cfg.tokens();
    let dnf = Array2::from_shape_fn((t, cfg.d_model), |(_, j)| dpooled[[0, j]] / t as f64);
    let mut dx = layer_norm_back(&dnf, &c.nf, &p.lnf_g, &mut gr.lnf_g, &mut gr.lnf_b);

    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    for (l, (b, bc)) in p.blocks.iter().zip(&c.blocks).enumerate().rev() {
        let gb = &mut gr.blocks[l];
        // Feed-forward branch.
        gb.ff_w2 = bc.z.t().dot(&dx);
        gb.ff_b2 = dx.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dz = dx.dot(&b.ff_w2.t());
        let du = &dz * &bc.u.mapv(silu_grad);
        gb.ff_w1 = bc.n2.y.t().dot(&du);
        gb.ff_b1 = du.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dn2 = du.dot(&b.ff_w1.t());
        let dx1 = &dx + &layer_norm_back(&dn2, &bc.n2, &b.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

        // Attention branch.
        gb.wo = bc.c.t().dot(&dx1);
        let dc = dx1.dot(&b.wo.t());
        let da = dc.dot(&bc.v.t());
        let dv = bc.a.t().dot(&dc);
        let mut ds = Array2::zeros(da.raw_dim());
        for i in 0..t {
            let dot: f64 = (0..t).map(|j| da[[i, j]] * bc.a[[i, j]]).sum();
            for j in 0..t {
                ds[[i, j]] = bc.a[[i, j]] * (da[[i, j]] - dot) * scale;
            }
        }
        let dq = ds.dot(&bc.k);
        let dk = ds.t().dot(&bc.q);
        let n1 = &bc.n1.y;
        gb.wq = n1.t().dot(&dq);
        gb.wk = n1.t().dot(&dk);
        gb.wv = n1.t().dot(&dv);
        let dn1 = dq.dot(&b.wq.t()) + dk.dot(&b.wk.t()) + dv.dot(&b.wv.t());
        dx = &dx1 + &layer_norm_back(&dn1, &bc.n1, &b.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
    }

    gr.pos = dx.clone();
    let frames = cfg.context + 1;
    let de = dx.slice(s![..frames, ..]).to_owned();
    let dg = dx.slice(s![frames.., ..]).to_owned();

    gr.psi_w2 = c.a1.t().dot(&de);
    gr.psi_b2 = de.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dh1 = de.dot(&p.psi_w2.t()) * c.h1.mapv(silu_grad);
    gr.psi_w1 = c.frames.t().dot(&dh1);
    gr.psi_b1 = dh1.sum_axis(Axis(0)).insert_axis(Axis(0));

    gr.phi_w2 = c.ga1.t().dot(&dg);
    gr.phi_b2 = dg.clone();
    let dgh1 = dg.dot(&p.phi_w2.t()) * c.gh1.mapv(silu_grad);
    gr.phi_w1 = c.goal_in.t().dot(&dgh1);
    gr.phi_b1 = dgh1;
    gr
}

/// Runs the network on one context and goal view.
pub fn planner_forward(context: &ObsContext, goal_obs: &EgoObservation, params: &PlannerParams) -> Result<WaypointPlan, PlannerError> {
    let inp = Inputs::new(context, goal_obs, &params.cfg)?;
    Ok(forward_inputs(&inp, params))
}

pub fn forward_inputs(inp: &Inputs, params: &PlannerParams) -> WaypointPlan {
    plan_from_output(&forward_cached(params, inp).out, params.cfg.horizon)
}

/// Waypoint MSE over the `2H` components plus `lambda_d` times the squared
/// temporal-distance error in units of [`D_NORM`] steps.
pub fn planner_loss(pred: &WaypointPlan, target: &WaypointPlan, lambda_d: f64) -> f64 {
    waypoint_error(pred, target) + lambda_d * ((pred.temporal_distance - target.temporal_distance) / D_NORM).powi(2)
}

pub fn waypoint_error(pred: &WaypointPlan, target: &WaypointPlan) -> f64 {
    let n = 2 * pred.waypoints.len();
    let sum: f64 = pred
        .waypoints
        .iter()
        .zip(&target.waypoints)
        .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
        .sum();
    sum / n as f64
}

/// Loss and gradient for one encoded sample.
pub fn sample_gradient(params: &PlannerParams, inp: &Inputs, target: &WaypointPlan, lambda_d: f64) -> (f64, PlannerParams) {
    let h = params.cfg.horizon;
    let cache = forward_cached(params, inp);
    let pred = plan_from_output(&cache.out, h);
    let loss = planner_loss(&pred, target, lambda_d);
    let mut d_out = Array2::zeros((1, params.cfg.outputs()));
    let dd = 2.0 * lambda_d * (pred.temporal_distance - target.temporal_distance) / (D_NORM * D_NORM);
    d_out[[0, 0]] = dd * sigmoid(cache.out[[0, 0]]);
    let n = (2 * h) as f64;
    for (k, (w, t)) in pred.waypoints.iter().zip(&target.waypoints).enumerate() {
        d_out[[0, 1 + 2 * k]] = 2.0 * (w.x - t.x) / n * (1.0 - w.x * w.x);
        d_out[[0, 2 + 2 * k]] = 2.0 * (w.y - t.y) / n * (1.0 - w.y * w.y);
    }
    (loss, backward(params, &cache, &d_out))
}

/// Mean loss over `batch` and its exact gradient. Per-sample work runs in
/// parallel; the reduction is in batch order.
pub fn planner_gradients(params: &PlannerParams, batch: &[ImitationSample], lambda_d: f64) -> Result<(f64, PlannerParams), PlannerError> {
    if batch.is_empty() {
        return Err(PlannerError::EmptyDataset);
    }
    let inputs = batch
        .iter()
        .map(|s| Inputs::new(&s.context, &s.goal_obs, &params.cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let targets: Vec<&WaypointPlan> = batch.iter().map(|s| &s.target_plan).collect();
    let refs: Vec<&Inputs> = inputs.iter().collect();
    Ok(batch_gradient(params, &refs, &targets, lambda_d))
}

pub(crate) fn batch_gradient(params: &PlannerParams, inputs: &[&Inputs], targets: &[&WaypointPlan], lambda_d: f64) -> (f64, PlannerParams) {
    for t in targets {
        if t.waypoints.len() != params.cfg.horizon {
            panic!("target horizon {} does not match model horizon {}", t.waypoints.len(), params.cfg.horizon);
        }
    }
    let per: Vec<(f64, PlannerParams)> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(inp, t)| sample_gradient(params, inp, t, lambda_d))
        .collect();
    let mut total = PlannerParams::zeros(params.cfg);
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    let n = inputs.len() as f64;
    total.scale(1.0 / n);
    (loss / n, total)
}

/// Random panorama with every semantic class represented in the draw.
pub fn random_observation(rng: &mut ChaCha8Rng, rays: usize) -> EgoObservation {
    EgoObservation {
        depths: (0..rays).map(|_| rng.random_range(0.0..10.0)).collect(),
        semantics: (0..rays)
            .map(|_| [SEMANTIC_FREE, SEMANTIC_OBSTACLE, 1, 2, 3][rng.random_range(0..5)])
            .collect(),
        fov: SensorConfig::default().fov,
        timestamp_step: 0,
    }
}

/// Random sample for gradient checks and tests.
pub fn random_sample(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> ImitationSample {
    ImitationSample {
        context: ObsContext {
            frames: (0..=cfg.context).map(|_| random_observation(rng, cfg.rays)).collect(),
        },
        goal_obs: random_observation(rng, cfg.rays),
        target_plan: WaypointPlan {
            temporal_distance: rng.random_range(0.0..200.0),
            waypoints: (0..cfg.horizon)
                .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        },
    }
}
