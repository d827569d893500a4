//! Unsupervised adaptation strategies over the memory bank.
//!
//! All strategies are read-only consumers of the bank and pure functions of
//! `(params, batch contents, config, seed)`:
//!
//! - `tent` / `sar`: one gradient-descent step on the mean Shannon entropy of
//!   the softmax action distributions of recent decisions; `sar` first
//!   discards unreliable samples whose entropy exceeds a threshold.
//! - `back_translation`: a rule-based speaker generates pseudo-instructions
//!   for paths sampled between visited nodes of the constructed graph
//!   (shortest within that partial graph, so possibly suboptimal globally),
//!   followed by one cross-entropy imitation step on the demonstrated
//!   decisions.
//! - `mlm`: masks a fraction of stored instruction tokens and takes one
//!   gradient step on a linear masked-token classifier over context-token
//!   count features. Its parameter block is separate from the action scorer
//!   and never touches it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{candidate_set, feature_vector, AgentState, Candidate, PolicyParams, StepTrace};
use crate::episodes::{template_instruction, Instruction, StyleBook, TokenId};
use crate::error::{Error, Result};
use crate::memory::{GlobalGraph, MemoryBank};
use crate::seeds;
use crate::world::{NavGraph, NodeId};

const NS_BT: u64 = 40;
const NS_MLM: u64 = 41;

/// Which adaptation strategy a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    None,
    Tent,
    Sar,
    BackTranslation,
    Mlm,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::None => "none",
            Strategy::Tent => "tent",
            Strategy::Sar => "sar",
            Strategy::BackTranslation => "back_translation",
            Strategy::Mlm => "mlm",
        };
        write!(f, "{name}")
    }
}

/// Adaptation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub strategy: Strategy,
    pub learning_rate: f64,
    /// SAR reliability cut in entropy units. `None` derives the default
    /// `0.4 * ln(mean candidate count)` from the batch itself.
    pub reliability_threshold: Option<f64>,
    pub bt_sample_count: usize,
    pub mask_rate: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            strategy: Strategy::None,
            learning_rate: 1e-3,
            reliability_threshold: None,
            bt_sample_count: 8,
            mask_rate: 0.15,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::InvalidConfig("mask_rate must be in (0,1)".into()));
        }
        if self.strategy == Strategy::BackTranslation && self.bt_sample_count == 0 {
            return Err(Error::InvalidConfig(
                "back_translation needs bt_sample_count >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one adaptation step over parameter block `P`.
#[derive(Debug, Clone)]
pub struct AdaptOutcome<P> {
    pub params: P,
    /// False when the step was a signaled no-op (params unchanged).
    pub applied: bool,
    pub samples_used: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn step_logits(theta: &PolicyParams, features: &[Vec<f64>]) -> Vec<f64> {
    features.iter().map(|phi| seeds::dot(&theta.theta, phi)).collect()
}

/// Mean softmax entropy of a decision batch under `theta`.
pub fn mean_entropy(theta: &PolicyParams, steps: &[StepTrace]) -> f64 {
    let total: f64 = steps
        .iter()
        .map(|s| entropy_of(&softmax(&step_logits(theta, &s.features))))
        .sum();
    total / steps.len() as f64
}

/// Analytic gradient of [`mean_entropy`] with respect to `theta`.
pub fn entropy_gradient(theta: &PolicyParams, steps: &[StepTrace]) -> Vec<f64> {
    let mut grad = vec![0.0; theta.theta.len()];
    for step in steps {
        let p = softmax(&step_logits(theta, &step.features));
        let h = entropy_of(&p);
        for (k, phi) in step.features.iter().enumerate() {
            if p[k] <= 0.0 {
                continue;
            }
            let coeff = -p[k] * (p[k].ln() + h);
            for (g, x) in grad.iter_mut().zip(phi) {
                *g += coeff * x;
            }
        }
    }
    for g in grad.iter_mut() {
        *g /= steps.len() as f64;
    }
    grad
}

/// One demonstrated decision for imitation.
#[derive(Debug, Clone)]
pub struct ImitationStep {
    pub features: Vec<Vec<f64>>,
    /// Index of the demonstrated candidate.
    pub demo: usize,
}

/// Mean cross-entropy of demonstrated actions under `theta`.
pub fn mean_cross_entropy(theta: &PolicyParams, steps: &[ImitationStep]) -> f64 {
    let total: f64 = steps
        .iter()
        .map(|s| {
            let p = softmax(&step_logits(theta, &s.features));
            -p[s.demo].max(1e-300).ln()
        })
        .sum();
    total / steps.len() as f64
}

/// Analytic gradient of [`mean_cross_entropy`] with respect to `theta`.
pub fn cross_entropy_gradient(theta: &PolicyParams, steps: &[ImitationStep]) -> Vec<f64> {
    let mut grad = vec![0.0; theta.theta.len()];
    for step in steps {
        let p = softmax(&step_logits(theta, &step.features));
        for (k, phi) in step.features.iter().enumerate() {
            let coeff = p[k] - if k == step.demo { 1.0 } else { 0.0 };
            for (g, x) in grad.iter_mut().zip(phi) {
                *g += coeff * x;
            }
        }
    }
    for g in grad.iter_mut() {
        *g /= steps.len() as f64;
    }
    grad
}

/// One entropy-minimization step (TENT; SAR when `sar` is set).
///
/// SAR first filters out samples whose entropy exceeds the reliability
/// threshold; if nothing passes, the update is a signaled no-op.
pub fn entropy_adapt(
    theta: &PolicyParams,
    steps: &[StepTrace],
    config: &AdaptConfig,
    sar: bool,
) -> Result<AdaptOutcome<PolicyParams>> {
    config.validate()?;
    theta.validate()?;
    if steps.is_empty() {
        return Err(Error::InvalidConfig("entropy adaptation needs a non-empty batch".into()));
    }

    let used: Vec<StepTrace> = if sar {
        let threshold = config.reliability_threshold.unwrap_or_else(|| {
            let mean_k = steps.iter().map(|s| s.features.len() as f64).sum::<f64>()
                / steps.len() as f64;
            0.4 * mean_k.max(1.0).ln()
        });
        steps
            .iter()
            .filter(|s| entropy_of(&softmax(&step_logits(theta, &s.features))) <= threshold)
            .cloned()
            .collect()
    } else {
        steps.to_vec()
    };

    if used.is_empty() {
        return Ok(AdaptOutcome {
            params: theta.clone(),
            applied: false,
            samples_used: 0,
            objective_before: mean_entropy(theta, steps),
            objective_after: mean_entropy(theta, steps),
        });
    }

    let before = mean_entropy(theta, &used);
    let grad = entropy_gradient(theta, &used);
    let mut updated = theta.clone();
    for (w, g) in updated.theta.iter_mut().zip(&grad) {
        *w -= config.learning_rate * g;
    }
    updated.version += 1;
    let after = mean_entropy(&updated, &used);
    Ok(AdaptOutcome {
        params: updated,
        applied: true,
        samples_used: used.len(),
        objective_before: before,
        objective_after: after,
    })
}

/// Rule-based speaker: invert the instruction template using only information
/// stored in the global graph (positions and landmarks of visited nodes).
pub fn speaker_generate(global: &GlobalGraph, path: &[NodeId]) -> Result<Instruction> {
    template_instruction(
        |id| {
            global
                .node(id)
                .map(|n| (n.pos, n.landmark))
                .ok_or(Error::UnknownNode(id))
        },
        path,
    )
}

/// One back-translation imitation step.
///
/// Samples `bt_sample_count` paths between random visited-node pairs of the
/// constructed graph, speaks pseudo-instructions for them, and takes one
/// cross-entropy step toward reproducing the demonstrated decision at every
/// decision point. Returns a signaled no-op when the graph offers no usable
/// pair.
pub fn bt_adapt(
    theta: &PolicyParams,
    env: &NavGraph,
    book: &StyleBook,
    global: &GlobalGraph,
    config: &AdaptConfig,
    seed: u64,
) -> Result<AdaptOutcome<PolicyParams>> {
    config.validate()?;
    theta.validate()?;
    let no_op = |objective: f64| AdaptOutcome {
        params: theta.clone(),
        applied: false,
        samples_used: 0,
        objective_before: objective,
        objective_after: objective,
    };
    if global.node_count() < 2 {
        return Ok(no_op(f64::NAN));
    }

    let ids: Vec<NodeId> = global.nodes().keys().copied().collect();
    let mut rng = seeds::stream(seed, &[NS_BT]);
    let mut demos: Vec<ImitationStep> = Vec::new();
    for _ in 0..config.bt_sample_count {
        // A handful of attempts per sample; components may be disconnected.
        let mut path = None;
        for _ in 0..20 {
            let a = ids[rng.gen_range(0..ids.len())];
            let b = ids[rng.gen_range(0..ids.len())];
            if a == b {
                continue;
            }
            if let Ok(p) = crate::agent::plan_route(global, env.node_count(), a, b) {
                path = Some(p);
                break;
            }
        }
        let Some(path) = path else { continue };
        let pseudo = speaker_generate(global, &path)?;
        demos.extend(imitation_steps(env, book, &pseudo, &path, global.clone())?);
    }
    if demos.is_empty() {
        return Ok(no_op(f64::NAN));
    }

    let before = mean_cross_entropy(theta, &demos);
    let grad = cross_entropy_gradient(theta, &demos);
    let mut updated = theta.clone();
    for (w, g) in updated.theta.iter_mut().zip(&grad) {
        *w -= config.learning_rate * g;
    }
    updated.version += 1;
    let after = mean_cross_entropy(&updated, &demos);
    Ok(AdaptOutcome {
        params: updated,
        applied: true,
        samples_used: demos.len(),
        objective_before: before,
        objective_after: after,
    })
}

/// Teacher-forced decision contexts along a demonstration path, confined to
/// the given working map. The demo at each step is the next path node; the
/// final demo is STOP.
pub fn imitation_steps(
    env: &NavGraph,
    book: &StyleBook,
    instruction: &Instruction,
    path: &[NodeId],
    known: GlobalGraph,
) -> Result<Vec<ImitationStep>> {
    let mut state = AgentState::for_replay(env, book, instruction, path[0], known, path.len())?;
    let mut steps = Vec::with_capacity(path.len());
    for i in 0..path.len() {
        let dist_from_current = state.known_distances(state.current);
        let dist_from_anchor = state.goal_anchor().map(|a| state.known_distances(a));
        let candidates = candidate_set(&state);
        let features: Vec<Vec<f64>> = candidates
            .iter()
            .map(|&c| feature_vector(&state, c, &dist_from_current, dist_from_anchor.as_deref()))
            .collect();
        let demo_candidate = if i + 1 < path.len() {
            Candidate::Move(path[i + 1])
        } else {
            Candidate::Stop
        };
        let demo = candidates
            .iter()
            .position(|&c| c == demo_candidate)
            .ok_or_else(|| {
                Error::InvariantViolation(format!(
                    "demonstrated action {demo_candidate:?} missing from the candidate set"
                ))
            })?;
        steps.push(ImitationStep { features, demo });

        if let Candidate::Move(target) = demo_candidate {
            state.episode_visited.insert(target);
            state.known.mark_visited(target);
            state.current = target;
            state.consume_landmark();
            state.steps += 1;
        }
    }
    Ok(steps)
}

/// Separate parameter block for the masked-token classifier. Never shared
/// with the action scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangParams {
    /// Class universe: every token id the classifier can predict, sorted.
    pub classes: Vec<TokenId>,
    /// Weight matrix, `classes.len()` rows by `classes.len() + 1` columns
    /// (context counts plus bias).
    pub weights: Vec<Vec<f64>>,
    pub version: u64,
}

impl LangParams {
    /// Zero-initialized classifier over the full token universe implied by
    /// the style book and landmark vocabulary.
    pub fn new(book: &StyleBook, landmark_vocab_size: u32) -> LangParams {
        let classes: Vec<TokenId> = book.vocabulary(landmark_vocab_size).into_keys().collect();
        let dim = classes.len() + 1;
        LangParams {
            weights: vec![vec![0.0; dim]; classes.len()],
            classes,
            version: 0,
        }
    }

    fn class_index(&self, t: TokenId) -> Option<usize> {
        self.classes.binary_search(&t).ok()
    }

    fn context_features(&self, tokens: &[TokenId], masked: &[usize]) -> Vec<f64> {
        let mut f = vec![0.0; self.classes.len() + 1];
        for (i, &t) in tokens.iter().enumerate() {
            if masked.contains(&i) {
                continue;
            }
            if let Some(c) = self.class_index(t) {
                f[c] += 1.0;
            }
        }
        f[self.classes.len()] = 1.0;
        f
    }

    fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|row| seeds::dot(row, f)).collect()
    }
}

/// Number of masked positions for an `len`-token instruction: `ceil(rate *
/// len)`, at least one. The epsilon guards against `0.15 * 20` landing a hair
/// above 3.0 in floating point.
pub fn mask_count(len: usize, rate: f64) -> usize {
    (((rate * len as f64) - 1e-9).ceil().max(1.0)) as usize
}

struct MaskedSample {
    features: Vec<f64>,
    target: usize,
}

fn masked_samples(params: &LangParams, bank: &MemoryBank, rate: f64, seed: u64) -> Vec<MaskedSample> {
    let mut rng = seeds::stream(seed, &[NS_MLM]);
    let mut samples = Vec::new();
    for record in bank.records() {
        let tokens = &record.instruction.tokens;
        if tokens.is_empty() {
            continue;
        }
        let k = mask_count(tokens.len(), rate).min(tokens.len());
        let masked: Vec<usize> = rand::seq::index::sample(&mut rng, tokens.len(), k).into_vec();
        let features = params.context_features(tokens, &masked);
        for &pos in &masked {
            if let Some(target) = params.class_index(tokens[pos]) {
                samples.push(MaskedSample { features: features.clone(), target });
            }
        }
    }
    samples
}

fn masked_cross_entropy(params: &LangParams, samples: &[MaskedSample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let p = softmax(&params.logits(&s.features));
            -p[s.target].max(1e-300).ln()
        })
        .sum();
    total / samples.len() as f64
}

/// One masked-token modelling step over the bank's stored instructions.
///
/// Masks `ceil(mask_rate * L)` tokens per instruction and takes one gradient
/// step on the classifier; the action scorer is untouched. An empty bank is a
/// signaled no-op.
pub fn mlm_adapt(
    params: &LangParams,
    bank: &MemoryBank,
    config: &AdaptConfig,
    seed: u64,
) -> Result<AdaptOutcome<LangParams>> {
    config.validate()?;
    let samples = if bank.is_empty() {
        Vec::new()
    } else {
        masked_samples(params, bank, config.mask_rate, seed)
    };
    if samples.is_empty() {
        return Ok(AdaptOutcome {
            params: params.clone(),
            applied: false,
            samples_used: 0,
            objective_before: f64::NAN,
            objective_after: f64::NAN,
        });
    }

    let before = masked_cross_entropy(params, &samples);
    let n = samples.len() as f64;
    let mut updated = params.clone();
    for s in &samples {
        let p = softmax(&params.logits(&s.features));
        for (c, row) in updated.weights.iter_mut().enumerate() {
            let coeff = (p[c] - if c == s.target { 1.0 } else { 0.0 }) / n;
            for (w, x) in row.iter_mut().zip(&s.features) {
                *w -= config.learning_rate * coeff * x;
            }
        }
    }
    updated.version += 1;
    let after = masked_cross_entropy(&updated, &samples);
    Ok(AdaptOutcome {
        params: updated,
        applied: true,
        samples_used: samples.len(),
        objective_before: before,
        objective_after: after,
    })
}

/// One row of the adaptation log CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptLogRow {
    pub episode_idx: u64,
    pub strategy: Strategy,
    pub objective_before: f64,
    pub objective_after: f64,
    pub samples_used: usize,
    pub theta_norm: f64,
}

impl AdaptLogRow {
    pub fn csv_header() -> &'static str {
        "episode_idx,strategy,objective_before,objective_after,samples_used,theta_norm"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{},{:.6}",
            self.episode_idx,
            self.strategy,
            self.objective_before,
            self.objective_after,
            self.samples_used,
            self.theta_norm
        )
    }
}
