//! Goal retrieval: unit-sphere embeddings, scaled dot-product scoring,
//! softmax normalization and argmax selection over a candidate pool.

mod pool_file;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruction::{tokenize, InstructionError, Prompt, TokenSeq};
use crate::world::Scenario;

pub use pool_file::{decode_pool, encode_pool, read_pool, write_pool, POOL_MAGIC, POOL_VERSION};

/// Entries read from a pool file may deviate from unit norm by this much.
pub const POOL_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Tokens(#[from] InstructionError),
    #[error("embedding dimension must be at least 8, got {0}")]
    InvalidDim(usize),
    #[error("hashed embedding of {tokens:?} is the zero vector")]
    ZeroVector { tokens: Vec<String> },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("duplicate pool id {0:?}")]
    DuplicateId(String),
    #[error("logit scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("bad magic bytes {found:?}, expected \"VLFE\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported pool version {0}")]
    VersionUnsupported(u32),
    #[error("pool file truncated while reading {context}")]
    Truncated { context: String },
    #[error("pool entry {id:?} has norm {norm}, expected 1")]
    NormViolation { id: String, norm: f64 },
    #[error("pool entry {id:?} has a non-finite component")]
    NonFinite { id: String },
    #[error("string too long for the pool format: {0:?}")]
    StringTooLong(String),
    #[error("invalid UTF-8 in pool file")]
    InvalidUtf8,
    #[error("pool file I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// A unit-norm vector stored at single precision; scoring accumulates in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Wraps raw values without renormalizing.
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self { values }
    }

    /// L2-normalizes `values` in f64 before rounding to f32.
    pub fn normalized(values: &[f64]) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm > 0.0 && norm.is_finite()).then(|| Self {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

/// Signed feature hashing of token ids into `d` buckets, L2-normalized.
pub fn embed_text(tokens: &TokenSeq, d: usize) -> Result<Embedding, RetrievalError> {
    if d < 8 {
        return Err(RetrievalError::InvalidDim(d));
    }
    if tokens.is_empty() {
        return Err(RetrievalError::ZeroVector { tokens: Vec::new() });
    }
    let mut acc = vec![0.0f64; d];
    for &h in &tokens.ids {
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[(h % d as u64) as usize] += sign;
    }
    Embedding::normalized(&acc).ok_or_else(|| RetrievalError::ZeroVector {
        tokens: tokens.tokens.clone(),
    })
}

/// Stand-in for an image embedding: the descriptor text through the same hasher.
pub fn embed_descriptor(descriptor: &str, d: usize) -> Result<Embedding, RetrievalError> {
    embed_text(&tokenize(descriptor)?, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalPoolEntry {
    pub id: String,
    pub descriptor: String,
    pub embedding: Embedding,
    /// Scenario goal this candidate depicts; not stored in pool files.
    #[serde(default)]
    pub goal_link: Option<String>,
}

/// Candidate goal pool with a shared embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalPool {
    pub dim: usize,
    pub entries: Vec<GoalPoolEntry>,
}

impl GoalPool {
    pub fn new(dim: usize, entries: Vec<GoalPoolEntry>) -> Result<Self, RetrievalError> {
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.dim() != dim {
                return Err(RetrievalError::DimMismatch {
                    expected: dim,
                    found: e.embedding.dim(),
                });
            }
            if entries[..i].iter().any(|o| o.id == e.id) {
                return Err(RetrievalError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { dim, entries })
    }

    /// Built-in pool: one hashed-descriptor entry per scenario goal.
    pub fn from_scenario(scenario: &Scenario, dim: usize) -> Result<Self, RetrievalError> {
        let entries = scenario
            .goals
            .iter()
            .map(|g| {
                Ok(GoalPoolEntry {
                    id: g.id.clone(),
                    descriptor: g.descriptor.clone(),
                    embedding: embed_descriptor(&g.descriptor, dim)?,
                    goal_link: Some(g.id.clone()),
                })
            })
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        Self::new(dim, entries)
    }

    /// Links unlinked entries to scenario goals by matching id, then by
    /// normalized descriptor tokens.
    pub fn link_to(&mut self, scenario: &Scenario) {
        for e in &mut self.entries {
            if e.goal_link.is_some() {
                continue;
            }
            let norm = |s: &str| tokenize(s).map(|t| t.tokens).unwrap_or_default();
            e.goal_link = scenario
                .goals
                .iter()
                .find(|g| g.id == e.id)
                .or_else(|| scenario.goals.iter().find(|g| norm(&g.descriptor) == norm(&e.descriptor)))
                .map(|g| g.id.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Multiplier applied to dot products before the softmax.
    pub logit_scale: f64,
    pub dim: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            logit_scale: 100.0,
            dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub best_index: usize,
    pub best_id: String,
}

/// `logit_scale · ⟨t, v_j⟩` for every pool entry, in pool order.
pub fn score_pool(t: &Embedding, pool: &[GoalPoolEntry], cfg: &RetrievalConfig) -> Result<Vec<f64>, RetrievalError> {
    if !(cfg.logit_scale > 0.0 && cfg.logit_scale.is_finite()) {
        return Err(RetrievalError::InvalidScale(cfg.logit_scale));
    }
    if pool.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    pool.iter()
        .map(|e| {
            if e.embedding.dim() != t.dim() {
                Err(RetrievalError::DimMismatch {
                    expected: t.dim(),
                    found: e.embedding.dim(),
                })
            } else {
                Ok(cfg.logit_scale * t.dot(&e.embedding))
            }
        })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Embeds the prompt, scores the pool and selects the best candidate.
pub fn retrieve(prompt: &Prompt, pool: &GoalPool, cfg: &RetrievalConfig) -> Result<RetrievalResult, RetrievalError> {
    let t = embed_text(&tokenize(&prompt.text)?, pool.dim)?;
    let scores = score_pool(&t, &pool.entries, cfg)?;
    let probs = softmax(&scores);
    let best_index = argmax(&scores);
    Ok(RetrievalResult {
        best_id: pool.entries[best_index].id.clone(),
        scores,
        probs,
        best_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruction::{default_items, token_id, PromptSource};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Independent reference for the hash embedder: explicit FNV-1a loop.
    fn reference_embed(text: &str, d: usize) -> Vec<f64> {
        let mut acc = vec![0.0; d];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let mut h: u64 = 0xcbf29ce484222325;
            for b in word.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            let sign = if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
            acc[(h % d as u64) as usize] += sign;
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        acc.iter().map(|v| v / n).collect()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn entry(id: &str, values: Vec<f32>) -> GoalPoolEntry {
        GoalPoolEntry {
            id: id.into(),
            descriptor: id.into(),
            embedding: Embedding::from_raw(values),
            goal_link: None,
        }
    }

    fn one_hot(d: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn prompt(text: &str) -> Prompt {
        Prompt {
            text: text.into(),
            source: PromptSource::Template,
            matched_item: None,
        }
    }

    #[test]
    fn embedder_matches_reference() {
        for text in ["a photo of a blue backpack", "pink toy", "apriltag", "wooden chair"] {
            let e = embed_text(&tokenize(text).unwrap(), 64).unwrap();
            let r = reference_embed(text, 64);
            for (a, b) in e.values().iter().zip(&r) {
                assert_eq!(*a, *b as f32);
            }
            assert_abs_diff_eq!(e.norm(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn prompt_is_closer_to_its_descriptor() {
        let p = reference_embed("a photo of a blue backpack", 64);
        let own = cos(&p, &reference_embed("blue backpack", 64));
        let other = cos(&p, &reference_embed("wooden chair", 64));
        assert!(own > other, "{own} <= {other}");
        let e = embed_text(&tokenize("a photo of a blue backpack").unwrap(), 64).unwrap();
        let own_impl = e.dot(&embed_descriptor("blue backpack", 64).unwrap());
        let other_impl = e.dot(&embed_descriptor("wooden chair", 64).unwrap());
        assert!(own_impl > other_impl);
        assert_abs_diff_eq!(own_impl, own, epsilon = 1e-6);
    }

    #[test]
    fn single_token_is_signed_one_hot() {
        let tok = tokenize("apriltag").unwrap();
        let e = embed_text(&tok, 64).unwrap();
        let h = token_id("apriltag");
        let idx = (h % 64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        for (i, &v) in e.values().iter().enumerate() {
            assert_eq!(v, if i == idx { sign } else { 0.0 });
        }
    }

    #[test]
    fn identical_text_gives_identical_embeddings() {
        let a = embed_descriptor("red suitcase", 64).unwrap();
        let b = embed_descriptor("red suitcase", 64).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.dot(&b), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn distinct_descriptors_differ() {
        let a = reference_embed("pink toy", 64);
        let b = reference_embed("apriltag", 64);
        assert!(cos(&a, &b) < 1.0);
        let ea = embed_descriptor("pink toy", 64).unwrap();
        let eb = embed_descriptor("apriltag", 64).unwrap();
        assert!(ea.dot(&eb) < 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(embed_descriptor("", 64).is_err());
        assert!(matches!(
            embed_text(&tokenize("x").unwrap(), 4),
            Err(RetrievalError::InvalidDim(4))
        ));
        // Two tokens in the same bucket with opposite signs cancel.
        let mut pair = None;
        'outer: for a in 0..2000u32 {
            for b in a + 1..2000u32 {
                let (ha, hb) = (token_id(&format!("t{a}")), token_id(&format!("t{b}")));
                if ha % 8 == hb % 8 && (ha >> 63) != (hb >> 63) {
                    pair = Some(format!("t{a} t{b}"));
                    break 'outer;
                }
            }
        }
        let text = pair.expect("cancelling pair exists");
        assert!(matches!(
            embed_text(&tokenize(&text).unwrap(), 8),
            Err(RetrievalError::ZeroVector { .. })
        ));
    }

    #[test]
    fn scaled_dot_product_closed_forms() {
        let cfg = RetrievalConfig { logit_scale: 100.0, dim: 8 };
        let t = Embedding::from_raw(one_hot(8, 0));
        let s = score_pool(&t, &[entry("same", one_hot(8, 0))], &cfg).unwrap();
        assert_eq!(s, vec![100.0]);
        let s = score_pool(&t, &[entry("orth", one_hot(8, 3))], &RetrievalConfig { logit_scale: 37.0, dim: 8 }).unwrap();
        assert_eq!(s, vec![0.0]);
        let mut half = vec![0.0f32; 8];
        half[0] = 0.5;
        half[1] = (0.75f64).sqrt() as f32;
        let s = score_pool(&t, &[entry("half", half)], &cfg).unwrap();
        assert_abs_diff_eq!(s[0], 50.0, epsilon = 1e-12);
        let short = entry("short", vec![1.0; 4]);
        assert!(matches!(
            score_pool(&t, &[short], &cfg),
            Err(RetrievalError::DimMismatch { .. })
        ));
        assert!(matches!(score_pool(&t, &[], &cfg), Err(RetrievalError::EmptyPool)));
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        let p = softmax(&[2f64.ln(), 0.0]);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn retrieval_picks_the_described_goal() {
        let dim = 64;
        let pool = GoalPool::new(
            dim,
            ["blue backpack", "pink toy", "apriltag"]
                .iter()
                .map(|d| GoalPoolEntry {
                    id: d.to_string(),
                    descriptor: d.to_string(),
                    embedding: embed_descriptor(d, dim).unwrap(),
                    goal_link: None,
                })
                .collect(),
        )
        .unwrap();
        let r = retrieve(&prompt("a photo of a blue backpack"), &pool, &RetrievalConfig::default()).unwrap();
        assert_eq!(r.best_id, "blue backpack");
        // Reference scores from the independent embedder.
        let p = reference_embed("a photo of a blue backpack", dim);
        for (j, d) in ["blue backpack", "pink toy", "apriltag"].iter().enumerate() {
            assert_abs_diff_eq!(r.scores[j], 100.0 * cos(&p, &reference_embed(d, dim)), epsilon = 1e-4);
        }
    }

    #[test]
    fn singleton_and_ties() {
        let single = GoalPool::new(8, vec![entry("only", one_hot(8, 2))]).unwrap();
        let r = retrieve(&prompt("anything"), &single, &RetrievalConfig::default()).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.probs, vec![1.0]);

        let tied = GoalPool::new(
            8,
            vec![entry("x", one_hot(8, 5)), entry("a", one_hot(8, 1)), entry("b", one_hot(8, 1))],
        )
        .unwrap();
        let t = Embedding::from_raw(one_hot(8, 1));
        let scores = score_pool(&t, &tied.entries, &RetrievalConfig::default()).unwrap();
        assert_eq!(argmax(&scores), 1);
    }

    #[test]
    fn bundled_items_retrieve_themselves() {
        // Every bundled item must win against every other bundled item.
        let items = default_items();
        for item in &items {
            let p = reference_embed(&format!("a photo of a {item}"), 64);
            let own = cos(&p, &reference_embed(item, 64));
            for other in items.iter().filter(|o| *o != item) {
                let s = cos(&p, &reference_embed(other, 64));
                assert!(own > s, "{item} vs {other}: {own} <= {s}");
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(scores in prop::collection::vec(-1e3f64..1e3, 1..12)) {
            let p = softmax(&scores);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(argmax(&p), argmax(&scores));
        }

        #[test]
        fn shift_invariance(scores in prop::collection::vec(-50f64..50.0, 1..10), c in -100f64..100.0) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let (a, b) = (softmax(&scores), softmax(&shifted));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_monotonicity(dots in prop::collection::vec(-1f64..1.0, 2..8), s1 in 1f64..100.0, k in 1f64..10.0) {
            let lo: Vec<f64> = dots.iter().map(|d| s1 * d).collect();
            let hi: Vec<f64> = dots.iter().map(|d| s1 * k * d).collect();
            prop_assert_eq!(argmax(&lo), argmax(&hi));
            let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            prop_assert!(max(&softmax(&hi)) >= max(&softmax(&lo)) - 1e-12);
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let items = default_items();
            let mut chosen: Vec<&String> = items.iter().collect();
            chosen.shuffle(&mut rng);
            let entries: Vec<GoalPoolEntry> = chosen[..4].iter().map(|d| GoalPoolEntry {
                id: d.to_string(), descriptor: d.to_string(),
                embedding: embed_descriptor(d, 64).unwrap(), goal_link: None,
            }).collect();
            let q = prompt(&format!("a photo of a {}", chosen[0]));
            let base = retrieve(&q, &GoalPool::new(64, entries.clone()).unwrap(), &RetrievalConfig::default()).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<GoalPoolEntry> = perm.iter().map(|&i| entries[i].clone()).collect();
            let r = retrieve(&q, &GoalPool::new(64, permuted).unwrap(), &RetrievalConfig::default()).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(r.scores[k], base.scores[i]);
                prop_assert!((r.probs[k] - base.probs[i]).abs() < 1e-15);
            }
            prop_assert_eq!(&r.best_id, &base.best_id);
        }

        #[test]
        fn embeddings_are_unit_norm(text in "[a-z]{1,8}( [a-z]{1,8}){0,6}", d in 8usize..256) {
            if let Ok(e) = embed_text(&tokenize(&text).unwrap(), d) {
                prop_assert!((e.norm() - 1.0).abs() < 1e-6);
            }
        }
    }
}
