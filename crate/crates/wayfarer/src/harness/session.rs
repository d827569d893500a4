//! One environment session: sequential episode execution with memory,
//! metrics, optional adaptation, and checkpoint/resume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    bt_adapt, entropy_adapt, mlm_adapt, AdaptConfig, AdaptLogRow, LangParams, Strategy,
};
use crate::agent::{execute_episode, Candidate, EpisodeConfig, PolicyParams};
use crate::episodes::{Episode, Style, StyleBook};
use crate::error::{Error, Result};
use crate::memory::{rebuild_global_graph, GlobalGraph, MemoryBank};
use crate::metrics::{evaluate_episode, EpisodeMetrics};
use crate::seeds;
use crate::world::{NavGraph, NodeId};

use super::config::MemoryMode;

const NS_PROPORTION: u64 = 60;
const NS_ADAPT: u64 = 61;

/// Cadence of bank-sampling strategies (back-translation, MLM): every 10
/// episodes. Entropy strategies run after every episode on its decisions.
const BANK_ADAPT_EVERY: usize = 10;

/// A random connected induced subgraph covering `ceil(p * n)` nodes, grown by
/// seeded frontier expansion. `p = 1` is exactly the full ground-truth graph.
pub fn sample_proportion_graph(
    truth: &NavGraph,
    p: f64,
    seed: u64,
    alpha: usize,
) -> Result<GlobalGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("proportion {p} outside [0,1]")));
    }
    let n = truth.node_count();
    let target = ((p * n as f64).ceil() as usize).min(n);
    let mut graph = GlobalGraph::empty(truth.env_id(), alpha);
    if target == 0 {
        return Ok(graph);
    }
    let mut rng = seeds::stream(seed, &[NS_PROPORTION]);
    let mut chosen = std::collections::BTreeSet::new();
    let mut frontier: Vec<NodeId> = vec![rng.gen_range(0..n as NodeId)];
    while chosen.len() < target {
        let pick = rng.gen_range(0..frontier.len());
        let node = frontier.swap_remove(pick);
        if !chosen.insert(node) {
            continue;
        }
        for &(nb, _) in truth.neighbors(node)? {
            if !chosen.contains(&nb) {
                frontier.push(nb);
            }
        }
        if frontier.is_empty() && chosen.len() < target {
            // Connected ground truth: frontier only empties when done.
            break;
        }
    }
    for &id in &chosen {
        let node = truth.node(id)?;
        graph.insert_node(id, node.pos, node.landmark);
    }
    for &(a, b) in truth.edges() {
        if chosen.contains(&a) && chosen.contains(&b) {
            graph.insert_edge(a, b)?;
        }
    }
    Ok(graph)
}

/// One metrics CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_id: String,
    pub episode_idx: u64,
    pub style: Style,
    pub metrics: EpisodeMetrics,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "env_id,episode_idx,style,tl,ne,sr,spl,ndtw"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{},{:.6},{:.6}",
            self.env_id,
            self.episode_idx,
            self.style,
            self.metrics.tl,
            self.metrics.ne,
            self.metrics.success,
            self.metrics.spl,
            self.metrics.ndtw
        )
    }
}

/// Trajectory dump line (JSON Lines, one per episode).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub episode_id: u64,
    pub trajectory: Vec<NodeId>,
    pub actions: Vec<NodeId>,
    pub stopped: bool,
    pub step_count: usize,
}

/// Everything a finished session hands back.
#[derive(Debug, Clone, Default)]
pub struct SessionOutput {
    pub rows: Vec<MetricsRow>,
    /// Per-episode success in execution order, for slope analysis.
    pub successes: Vec<f64>,
    /// Per-episode graph coverage after integrating that episode.
    pub coverage: Vec<f64>,
    pub adapt_log: Vec<AdaptLogRow>,
    pub trajectories: Vec<TrajectoryDump>,
}

/// Serialized session state: enough to resume mid-stream and produce
/// identical subsequent outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCheckpoint {
    pub bank: MemoryBank,
    pub memory: MemoryMode,
    pub theta: PolicyParams,
    pub lang: LangParams,
    pub episodes_done: usize,
    pub session_seed: u64,
}

/// Sequential evaluation of one environment (batch size 1). Episodes flow
/// through: rebuild map per memory mode, execute, evaluate, append to the
/// bank, optionally adapt.
pub struct Session<'a> {
    pub env: &'a NavGraph,
    pub book: &'a StyleBook,
    pub memory: MemoryMode,
    pub bank: MemoryBank,
    pub theta: PolicyParams,
    pub lang: LangParams,
    pub adapt_cfg: AdaptConfig,
    pub step_limit: usize,
    pub session_seed: u64,
    pub episodes_done: usize,
    pub output: SessionOutput,
}

impl<'a> Session<'a> {
    pub fn new(
        env: &'a NavGraph,
        book: &'a StyleBook,
        memory: MemoryMode,
        theta: PolicyParams,
        adapt_cfg: AdaptConfig,
        step_limit: usize,
        session_seed: u64,
    ) -> Session<'a> {
        Session {
            env,
            book,
            memory,
            bank: MemoryBank::new(env.env_id()),
            lang: LangParams::new(book, env.spec().landmark_vocab_size),
            theta,
            adapt_cfg,
            step_limit,
            session_seed,
            episodes_done: 0,
            output: SessionOutput::default(),
        }
    }

    pub fn checkpoint(&self) -> SessionCheckpoint {
        SessionCheckpoint {
            bank: self.bank.clone(),
            memory: self.memory,
            theta: self.theta.clone(),
            lang: self.lang.clone(),
            episodes_done: self.episodes_done,
            session_seed: self.session_seed,
        }
    }

    /// Resume from a checkpoint; subsequent episodes behave exactly as they
    /// would have in the original session.
    pub fn restore(
        env: &'a NavGraph,
        book: &'a StyleBook,
        adapt_cfg: AdaptConfig,
        step_limit: usize,
        cp: SessionCheckpoint,
    ) -> Session<'a> {
        Session {
            env,
            book,
            memory: cp.memory,
            bank: cp.bank,
            theta: cp.theta,
            lang: cp.lang,
            adapt_cfg,
            step_limit,
            session_seed: cp.session_seed,
            episodes_done: cp.episodes_done,
            output: SessionOutput::default(),
        }
    }

    fn gr_alpha(&self) -> usize {
        match self.memory {
            MemoryMode::Gr { alpha } => alpha,
            // Bank-wide union for modes without buffered re-initialization.
            _ => usize::MAX,
        }
    }

    fn start_graph(&self) -> Result<GlobalGraph> {
        match self.memory {
            MemoryMode::None => Ok(GlobalGraph::empty(self.env.env_id(), 1)),
            MemoryMode::Gr { alpha } => rebuild_global_graph(&self.bank, alpha, self.env),
            MemoryMode::Proportion { p } => {
                let seed = seeds::mix(self.session_seed, &[self.episodes_done as u64]);
                sample_proportion_graph(self.env, p, seed, 1)
            }
        }
    }

    /// Execute one styled episode end to end.
    pub fn run_one(&mut self, episode: &Episode) -> Result<()> {
        let start_graph = self.start_graph()?;
        let config = EpisodeConfig { step_limit: self.step_limit };
        let (result, record) =
            execute_episode(self.env, self.book, episode, &self.theta, start_graph, &config)?;
        self.bank.append(record, self.env)?;

        let metrics = evaluate_episode(self.env, &episode.reference_path, &result.trajectory)?;
        self.output.rows.push(MetricsRow {
            env_id: self.env.env_id().to_string(),
            episode_idx: episode.episode_id,
            style: episode.instruction.style,
            metrics,
        });
        self.output.successes.push(metrics.success as f64);
        self.output.trajectories.push(TrajectoryDump {
            episode_id: episode.episode_id,
            trajectory: result.trajectory.clone(),
            actions: result
                .decisions
                .iter()
                .filter_map(|d| match d {
                    Candidate::Move(id) => Some(*id),
                    Candidate::Stop => None,
                })
                .collect(),
            stopped: result.stopped,
            step_count: result.steps,
        });

        let coverage = match self.memory {
            MemoryMode::None => 0.0,
            MemoryMode::Gr { alpha } => rebuild_global_graph(&self.bank, alpha, self.env)?
                .coverage(self.env)?,
            MemoryMode::Proportion { .. } => start_graph_coverage(self.env, &self.memory),
        };
        self.output.coverage.push(coverage);

        self.episodes_done += 1;
        self.adapt_after(&result)?;
        Ok(())
    }

    fn adapt_after(&mut self, result: &crate::agent::TrajectoryResult) -> Result<()> {
        let episode_idx = (self.episodes_done - 1) as u64;
        let seed = seeds::mix(self.session_seed, &[NS_ADAPT, episode_idx]);
        match self.adapt_cfg.strategy {
            Strategy::None => {}
            Strategy::Tent | Strategy::Sar => {
                if result.traces.is_empty() {
                    return Ok(());
                }
                let sar = self.adapt_cfg.strategy == Strategy::Sar;
                let out = entropy_adapt(&self.theta, &result.traces, &self.adapt_cfg, sar)?;
                self.log_adapt(episode_idx, out.applied, out.samples_used, out.objective_before, out.objective_after);
                self.theta = out.params;
            }
            Strategy::BackTranslation => {
                if self.episodes_done % BANK_ADAPT_EVERY == 0 {
                    let graph = rebuild_global_graph(&self.bank, self.gr_alpha(), self.env)?;
                    let out = bt_adapt(&self.theta, self.env, self.book, &graph, &self.adapt_cfg, seed)?;
                    self.log_adapt(episode_idx, out.applied, out.samples_used, out.objective_before, out.objective_after);
                    self.theta = out.params;
                }
            }
            Strategy::Mlm => {
                if self.episodes_done % BANK_ADAPT_EVERY == 0 {
                    let out = mlm_adapt(&self.lang, &self.bank, &self.adapt_cfg, seed)?;
                    self.log_adapt(episode_idx, out.applied, out.samples_used, out.objective_before, out.objective_after);
                    self.lang = out.params;
                }
            }
        }
        Ok(())
    }

    fn log_adapt(&mut self, episode_idx: u64, applied: bool, samples: usize, before: f64, after: f64) {
        let theta_norm = seeds::l2_norm(&self.theta.theta);
        self.output.adapt_log.push(AdaptLogRow {
            episode_idx,
            strategy: self.adapt_cfg.strategy,
            objective_before: before,
            objective_after: after,
            samples_used: if applied { samples } else { 0 },
            theta_norm,
        });
    }
}

fn start_graph_coverage(env: &NavGraph, memory: &MemoryMode) -> f64 {
    match memory {
        MemoryMode::Proportion { p } => {
            let n = env.node_count() as f64;
            ((p * n).ceil().min(n)) / n
        }
        _ => 0.0,
    }
}

/// Run a full episode sequence through a fresh session.
pub fn run_session(
    env: &NavGraph,
    book: &StyleBook,
    episodes: &[Episode],
    theta: &PolicyParams,
    memory: MemoryMode,
    adapt_cfg: &AdaptConfig,
    step_limit: usize,
    session_seed: u64,
) -> Result<SessionOutput> {
    let mut session = Session::new(
        env,
        book,
        memory,
        theta.clone(),
        adapt_cfg.clone(),
        step_limit,
        session_seed,
    );
    for episode in episodes {
        session.run_one(episode)?;
    }
    Ok(session.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{generate_episodes, EpisodeGenConfig};
    use crate::world::{generate_environment, EnvSpec};

    fn env(seed: u64, n: usize) -> NavGraph {
        let spec = EnvSpec {
            node_count: n,
            landmark_vocab_size: n as u32,
            view_count: 2,
            feature_dim: 8,
            ..EnvSpec::default()
        };
        generate_environment(seed, &spec).unwrap()
    }

    #[test]
    fn proportion_graph_full_and_partial() {
        let truth = env(44, 20);
        let full = sample_proportion_graph(&truth, 1.0, 9, 1).unwrap();
        assert_eq!(full.node_count(), 20);
        assert_eq!(full.edges().len(), truth.edges().len());
        assert!((full.coverage(&truth).unwrap() - 1.0).abs() < 1e-12);

        let half = sample_proportion_graph(&truth, 0.5, 9, 1).unwrap();
        assert_eq!(half.node_count(), 10);
        half.verify_subgraph(&truth).unwrap();
        // Connected growth: every chosen node reachable from the first.
        let ids: Vec<NodeId> = half.nodes().keys().copied().collect();
        let dist = crate::world::dijkstra(truth.node_count(), ids[0], |u| {
            half.neighbors(u).iter().copied()
        });
        for &id in &ids {
            assert!(dist[id as usize].is_finite());
        }

        // Deterministic per seed, varies across seeds.
        let again = sample_proportion_graph(&truth, 0.5, 9, 1).unwrap();
        assert_eq!(half, again);
    }

    #[test]
    fn full_proportion_equals_full_graph_candidates() {
        use crate::agent::{candidate_set, AgentState};
        use crate::episodes::base_instruction;
        use crate::memory::GlobalGraph;

        let truth = env(48, 18);
        let book = StyleBook::new(1, 5);
        let (path, _) = truth.shortest_path(0, 9).unwrap();
        let episode = Episode {
            episode_id: 0,
            instruction: base_instruction(&truth, &path).unwrap(),
            start: 0,
            goal: 9,
            reference_path: path,
        };
        let via_full =
            AgentState::new(&truth, &book, &episode, GlobalGraph::full_of(&truth, 1), 15).unwrap();
        let via_proportion = AgentState::new(
            &truth,
            &book,
            &episode,
            sample_proportion_graph(&truth, 1.0, 5, 1).unwrap(),
            15,
        )
        .unwrap();
        assert_eq!(candidate_set(&via_full), candidate_set(&via_proportion));

        // Proportion 1.0 sessions report full coverage at every episode.
        let episodes = generate_episodes(
            &truth,
            &EpisodeGenConfig { count: 8, min_hops: 3, max_hops: 5, clause_dropout: 0.0, seed: 2 },
        )
        .unwrap();
        let out = run_session(
            &truth,
            &book,
            &episodes,
            &PolicyParams::oracle(),
            MemoryMode::Proportion { p: 1.0 },
            &AdaptConfig::default(),
            15,
            1,
        )
        .unwrap();
        assert!(out.coverage.iter().all(|&c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn session_coverage_sawtooths_under_gr() {
        let truth = env(45, 16);
        let book = StyleBook::new(1, 5);
        let episodes = generate_episodes(
            &truth,
            &EpisodeGenConfig { count: 30, min_hops: 3, max_hops: 6, clause_dropout: 0.0, seed: 3 },
        )
        .unwrap();
        let out = run_session(
            &truth,
            &book,
            &episodes,
            &PolicyParams::oracle(),
            MemoryMode::Gr { alpha: 10 },
            &AdaptConfig::default(),
            15,
            77,
        )
        .unwrap();
        assert_eq!(out.coverage.len(), 30);
        for (i, w) in out.coverage.windows(2).enumerate() {
            let next_is_boundary = (i + 1) % 10 == 0; // episode i+2 starts a window
            if next_is_boundary {
                assert!(w[1] <= w[0] + 1e-12, "coverage drops at the boundary");
            } else {
                assert!(w[1] + 1e-12 >= w[0], "coverage non-decreasing inside a window");
            }
        }
    }

    #[test]
    fn checkpoint_resume_is_identical() {
        let truth = env(46, 14);
        let book = StyleBook::new(1, 5);
        let episodes = generate_episodes(
            &truth,
            &EpisodeGenConfig { count: 20, min_hops: 3, max_hops: 5, clause_dropout: 0.2, seed: 5 },
        )
        .unwrap();
        let adapt_cfg = AdaptConfig { strategy: Strategy::Tent, ..AdaptConfig::default() };
        let theta = PolicyParams::oracle();

        let mut full = Session::new(
            &truth, &book, MemoryMode::Gr { alpha: 7 }, theta.clone(), adapt_cfg.clone(), 15, 99,
        );
        for ep in &episodes {
            full.run_one(ep).unwrap();
        }

        let mut head = Session::new(
            &truth, &book, MemoryMode::Gr { alpha: 7 }, theta, adapt_cfg.clone(), 15, 99,
        );
        for ep in &episodes[..10] {
            head.run_one(ep).unwrap();
        }
        let cp = head.checkpoint();
        let json = serde_json::to_string(&cp).unwrap();
        let cp: SessionCheckpoint = serde_json::from_str(&json).unwrap();
        let mut tail = Session::restore(&truth, &book, adapt_cfg, 15, cp);
        for ep in &episodes[10..] {
            tail.run_one(ep).unwrap();
        }

        let full_rows: Vec<String> = full.output.rows.iter().map(|r| r.to_csv()).collect();
        let tail_rows: Vec<String> = tail.output.rows.iter().map(|r| r.to_csv()).collect();
        assert_eq!(&full_rows[10..], &tail_rows[..]);
        assert_eq!(full.theta, tail.theta);
        assert_eq!(full.bank, tail.bank);
    }

    #[test]
    fn memoryless_mode_is_order_invariant() {
        let truth = env(47, 14);
        let book = StyleBook::new(1, 5);
        let episodes = generate_episodes(
            &truth,
            &EpisodeGenConfig { count: 12, min_hops: 3, max_hops: 5, clause_dropout: 0.2, seed: 6 },
        )
        .unwrap();
        let theta = PolicyParams::oracle();
        let run = |order: Vec<usize>| {
            let eps: Vec<Episode> = order.iter().map(|&i| episodes[i].clone()).collect();
            let out = run_session(
                &truth, &book, &eps, &theta, MemoryMode::None,
                &AdaptConfig::default(), 15, 3,
            )
            .unwrap();
            let mut by_id: Vec<(u64, String)> = out
                .rows
                .iter()
                .map(|r| (r.episode_idx, r.to_csv()))
                .collect();
            by_id.sort();
            by_id
        };
        let forward = run((0..12).collect());
        let backward = run((0..12).rev().collect());
        assert_eq!(forward, backward);
    }
}
