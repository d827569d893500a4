//! Supervised imitation training of the linear scorer on generated
//! (instruction, shortest-path) pairs under a graph-context strategy.

use serde::{Deserialize, Serialize};

use crate::adapt::{cross_entropy_gradient, ImitationStep};
use crate::agent::{candidate_set, feature_vector, AgentState, Candidate, PolicyParams};
use crate::episodes::{generate_episodes, Episode, EpisodeGenConfig, StyleBook};
use crate::error::{Error, Result};
use crate::memory::{rebuild_global_graph, EpisodeRecord, GlobalGraph, MemoryBank};
use crate::seeds;
use crate::world::NavGraph;

use super::config::TrainConfig;

const NS_TRAIN: u64 = 70;

/// Graph context handed to the policy during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum TrainStrategy {
    /// Every episode starts from a blank map (standard per-episode setting).
    EmptyGraph,
    /// Every episode sees the complete ground-truth map (pretraining).
    FullGraph,
    /// Episodes accumulate into a bank whose graph re-initializes every
    /// `alpha` episodes (environment-specific fine-tuning).
    Buffer { alpha: usize },
}

/// Teacher-forced decision contexts along a reference path, with local
/// observation folding into the map exactly as in evaluation. The demo at
/// each step is the next path node; the final demo is STOP.
pub fn teacher_forced_steps(
    env: &NavGraph,
    book: &StyleBook,
    episode: &Episode,
    start_graph: GlobalGraph,
) -> Result<(Vec<ImitationStep>, EpisodeRecord)> {
    let path = &episode.reference_path;
    let mut state = AgentState::new(env, book, episode, start_graph, path.len())?;
    let mut steps = Vec::with_capacity(path.len());
    let mut observations = Vec::with_capacity(path.len());
    let mut actions = Vec::with_capacity(path.len().saturating_sub(1));

    for i in 0..path.len() {
        state.observe_local()?;
        observations.push(state.current);
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
                    "demonstration {demo_candidate:?} missing from training candidates"
                ))
            })?;
        steps.push(ImitationStep { features, demo });

        if let Candidate::Move(target) = demo_candidate {
            state.episode_visited.insert(target);
            state.known.mark_visited(target);
            state.current = target;
            state.consume_landmark();
            state.steps += 1;
            actions.push(target);
        }
    }

    let record = EpisodeRecord {
        instruction: episode.instruction.clone(),
        observations,
        actions,
        trajectory: path.clone(),
        stopped: true,
    };
    Ok((steps, record))
}

/// The assembled imitation dataset plus the coverage of each episode's
/// starting context (useful for verifying strategy semantics).
#[derive(Debug, Clone)]
pub struct ImitationDataset {
    pub steps: Vec<ImitationStep>,
    pub context_coverages: Vec<f64>,
}

/// Build teacher-forced decisions over every training environment under the
/// chosen strategy.
pub fn build_imitation_dataset(
    envs: &[NavGraph],
    book: &StyleBook,
    strategy: TrainStrategy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ImitationDataset> {
    if envs.is_empty() {
        return Err(Error::InvalidConfig("no training environments".into()));
    }
    let mut steps = Vec::new();
    let mut context_coverages = Vec::new();
    for env in envs {
        let episodes = generate_episodes(
            env,
            &EpisodeGenConfig {
                count: cfg.episodes_per_env,
                min_hops: cfg.min_hops,
                max_hops: cfg.max_hops,
                clause_dropout: cfg.clause_dropout,
                seed: seeds::mix(seed, &[NS_TRAIN, env.rng_seed()]),
            },
        )?;
        let mut bank = MemoryBank::new(env.env_id());
        for episode in &episodes {
            let start_graph = match strategy {
                TrainStrategy::EmptyGraph => GlobalGraph::empty(env.env_id(), 1),
                TrainStrategy::FullGraph => GlobalGraph::full_of(env, 1),
                TrainStrategy::Buffer { alpha } => rebuild_global_graph(&bank, alpha, env)?,
            };
            context_coverages.push(start_graph.coverage(env)?);
            let (ep_steps, record) = teacher_forced_steps(env, book, episode, start_graph)?;
            steps.extend(ep_steps);
            if let TrainStrategy::Buffer { .. } = strategy {
                bank.append(record, env)?;
            }
        }
    }
    Ok(ImitationDataset { steps, context_coverages })
}

/// Full-batch gradient descent on mean demonstration cross-entropy.
fn optimize(mut theta: PolicyParams, steps: &[ImitationStep], lr: f64, iterations: usize) -> PolicyParams {
    for _ in 0..iterations {
        let grad = cross_entropy_gradient(&theta, steps);
        for (w, g) in theta.theta.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    theta.version += 1;
    theta
}

/// Train the scorer from zeros under one graph-context strategy.
/// Deterministic under `seed`.
pub fn train_policy(
    envs: &[NavGraph],
    book: &StyleBook,
    strategy: TrainStrategy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PolicyParams> {
    train_from(PolicyParams::zeros(), envs, book, strategy, cfg, seed)
}

/// Continue training from existing weights.
pub fn train_from(
    init: PolicyParams,
    envs: &[NavGraph],
    book: &StyleBook,
    strategy: TrainStrategy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PolicyParams> {
    let dataset = build_imitation_dataset(envs, book, strategy, cfg, seed)?;
    if dataset.steps.is_empty() {
        return Err(Error::InvalidConfig("empty imitation dataset".into()));
    }
    Ok(optimize(init, &dataset.steps, cfg.learning_rate, cfg.iterations))
}

/// The two-stage recipe: full-graph pretraining, then environment-specific
/// buffer fine-tuning.
pub fn pretrain_finetune(
    envs: &[NavGraph],
    book: &StyleBook,
    alpha: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PolicyParams> {
    let pretrained = train_policy(envs, book, TrainStrategy::FullGraph, cfg, seed)?;
    train_from(
        pretrained,
        envs,
        book,
        TrainStrategy::Buffer { alpha },
        cfg,
        seeds::mix(seed, &[NS_TRAIN, 1]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::mean_cross_entropy;
    use crate::world::{generate_environment, EnvSpec};

    fn envs() -> Vec<NavGraph> {
        [71u64, 72]
            .iter()
            .map(|&seed| {
                let spec = EnvSpec {
                    node_count: 16,
                    landmark_vocab_size: 16,
                    view_count: 2,
                    feature_dim: 8,
                    ..EnvSpec::default()
                };
                generate_environment(seed, &spec).unwrap()
            })
            .collect()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            episodes_per_env: 12,
            min_hops: 3,
            max_hops: 5,
            iterations: 40,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn full_graph_contexts_have_full_coverage() {
        let envs = envs();
        let book = StyleBook::new(1, 5);
        let dataset =
            build_imitation_dataset(&envs, &book, TrainStrategy::FullGraph, &quick_cfg(), 1)
                .unwrap();
        assert!(dataset.context_coverages.iter().all(|&c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn buffer_contexts_reinitialize() {
        let envs = envs();
        let book = StyleBook::new(1, 5);
        let dataset = build_imitation_dataset(
            &envs,
            &book,
            TrainStrategy::Buffer { alpha: 4 },
            &quick_cfg(),
            1,
        )
        .unwrap();
        // Context of episode i is the bank rebuilt from k = i records: it
        // grows inside each alpha-window and restarts right after a boundary
        // (k = 5 covers only episode 4).
        let per_env: Vec<&[f64]> = dataset.context_coverages.chunks(12).collect();
        for cov in per_env {
            assert_eq!(cov[0], 0.0, "first context is empty");
            for i in 1..4 {
                assert!(cov[i + 1] + 1e-12 >= cov[i], "growth inside the window");
            }
            assert!(cov[4] > 0.0);
            assert!(cov[5] <= cov[4] + 1e-12, "window restart cannot raise coverage");
            for i in 5..8 {
                assert!(cov[i + 1] + 1e-12 >= cov[i], "growth inside the second window");
            }
        }
    }

    #[test]
    fn empty_graph_contexts_start_blank() {
        let envs = envs();
        let book = StyleBook::new(1, 5);
        let dataset =
            build_imitation_dataset(&envs, &book, TrainStrategy::EmptyGraph, &quick_cfg(), 1)
                .unwrap();
        assert!(dataset.context_coverages.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let envs = envs();
        let book = StyleBook::new(1, 5);
        let cfg = quick_cfg();
        let a = train_policy(&envs, &book, TrainStrategy::FullGraph, &cfg, 5).unwrap();
        let b = train_policy(&envs, &book, TrainStrategy::FullGraph, &cfg, 5).unwrap();
        assert_eq!(a, b);

        let dataset =
            build_imitation_dataset(&envs, &book, TrainStrategy::FullGraph, &cfg, 5).unwrap();
        let loss0 = mean_cross_entropy(&PolicyParams::zeros(), &dataset.steps);
        let loss1 = mean_cross_entropy(&a, &dataset.steps);
        assert!(loss1 < loss0, "training must reduce imitation loss: {loss0} -> {loss1}");
    }

    #[test]
    fn empty_training_set_errors() {
        let book = StyleBook::new(1, 5);
        assert!(train_policy(&[], &book, TrainStrategy::FullGraph, &quick_cfg(), 1).is_err());
    }
}
