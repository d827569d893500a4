//! Linear candidate-scoring policy and the global-action episode executor.
//!
//! At each decision point the agent considers every known, reachable,
//! not-yet-visited node of its working map (global graph plus the always
//! observable ground-truth neighbors of its position) as a candidate, plus
//! STOP. Each candidate is scored as `⟨theta, φ(state, candidate)⟩` over the
//! fixed 12-feature map below; the argmax wins, ties broken by candidate
//! order (ascending node id, STOP last). Chosen move targets are reached by
//! shortest-path planning inside the known map, which may be longer than the
//! ground-truth shortest route while the map is partial.
//!
//! Keeping the scorer linear in `theta` keeps every adaptation gradient
//! analytic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::episodes::{Episode, Instruction, StyleBook};
use crate::error::{Error, Result};
use crate::memory::{EpisodeRecord, GlobalGraph, MemorySession};
use crate::seeds;
use crate::world::{shortest_path_via, LandmarkId, NavGraph, NodeId};

/// Dimension of the feature map `φ`.
pub const FEATURE_DIM: usize = 12;

/// Feature indices, fixed for the lifetime of a trained policy.
pub mod feature {
    pub const MOVE_BIAS: usize = 0;
    pub const STOP_BIAS: usize = 1;
    pub const NEXT_LANDMARK_MATCH: usize = 2;
    pub const GOAL_LANDMARK_MATCH: usize = 3;
    pub const PANORAMA_ALIGNMENT: usize = 4;
    pub const GEODESIC_PROGRESS: usize = 5;
    pub const STEP_FRACTION: usize = 6;
    pub const STOP_AT_GOAL: usize = 7;
    pub const ROUTE_COST: usize = 8;
    pub const ADJACENT: usize = 9;
    pub const ANY_LANDMARK_MATCH: usize = 10;
    pub const CONSUMED_FRACTION: usize = 11;
}

/// Weights of the linear candidate scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    /// Incremented by every applied adaptation or training update.
    pub version: u64,
}

impl PolicyParams {
    /// Uniform policy: all-zero weights.
    pub fn zeros() -> PolicyParams {
        PolicyParams {
            theta: vec![0.0; FEATURE_DIM],
            version: 0,
        }
    }

    /// Hand-crafted goal-seeking weights: jump to the node whose landmark
    /// matches the decoded goal, then stop on it. With unique landmarks and a
    /// fully covered map this policy is exact.
    pub fn oracle() -> PolicyParams {
        let mut theta = vec![0.0; FEATURE_DIM];
        theta[feature::GOAL_LANDMARK_MATCH] = 10.0;
        theta[feature::STOP_AT_GOAL] = 10.0;
        theta[feature::STOP_BIAS] = -1.0;
        PolicyParams { theta, version: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                got: self.theta.len(),
            });
        }
        if !self.theta.iter().all(|w| w.is_finite()) {
            return Err(Error::InvariantViolation("non-finite policy weight".into()));
        }
        Ok(())
    }
}

/// One entry of the agent's action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Candidate {
    Move(NodeId),
    Stop,
}

/// Live state of one episode execution.
#[derive(Debug, Clone)]
pub struct AgentState<'a> {
    pub env: &'a NavGraph,
    /// Working map: the session's global graph extended by this episode's
    /// observations.
    pub known: GlobalGraph,
    pub current: NodeId,
    pub steps: usize,
    pub step_limit: usize,
    /// Start node plus every node traversed so far this episode.
    pub episode_visited: BTreeSet<NodeId>,
    pub instruction: Instruction,
    /// Instruction landmarks in content order; the goal landmark is last.
    pub landmark_seq: Vec<LandmarkId>,
    /// Pointer into `landmark_seq`: landmarks before it have been reached.
    pub consumed: usize,
    pub goal_landmark: LandmarkId,
    /// Mean landmark embedding over the instruction, for panorama alignment.
    pub instr_embedding: Vec<f64>,
}

impl<'a> AgentState<'a> {
    pub fn new(
        env: &'a NavGraph,
        book: &StyleBook,
        episode: &Episode,
        known: GlobalGraph,
        step_limit: usize,
    ) -> Result<AgentState<'a>> {
        let mut state =
            Self::init(env, book, &episode.instruction, episode.start, known, step_limit)?;
        state.observe_local()?;
        state.known.mark_visited(episode.start);
        state.consume_landmark();
        Ok(state)
    }

    /// Replay state confined to an already constructed map: no local
    /// observation happens, so the working graph never grows. Used by
    /// back-translation, which runs inside the agent's own model.
    pub fn for_replay(
        env: &'a NavGraph,
        book: &StyleBook,
        instruction: &Instruction,
        start: NodeId,
        known: GlobalGraph,
        step_limit: usize,
    ) -> Result<AgentState<'a>> {
        if !known.contains(start) {
            return Err(Error::UnknownNode(start));
        }
        let mut state = Self::init(env, book, instruction, start, known, step_limit)?;
        state.known.mark_visited(start);
        state.consume_landmark();
        Ok(state)
    }

    fn init(
        env: &'a NavGraph,
        book: &StyleBook,
        instruction: &Instruction,
        start: NodeId,
        mut known: GlobalGraph,
        step_limit: usize,
    ) -> Result<AgentState<'a>> {
        env.node(start)?;
        let goal_landmark = book.oracle_decode(instruction)?;
        let landmark_seq = book.landmark_sequence(instruction)?;
        let dim = env.spec().feature_dim;
        let mut instr_embedding = vec![0.0; dim];
        for &lm in &landmark_seq {
            for (acc, x) in instr_embedding.iter_mut().zip(env.landmark_embedding(lm)) {
                *acc += x;
            }
        }
        if !landmark_seq.is_empty() {
            for x in instr_embedding.iter_mut() {
                *x /= landmark_seq.len() as f64;
            }
        }

        known.reset_visited();
        Ok(AgentState {
            env,
            known,
            current: start,
            steps: 0,
            step_limit,
            episode_visited: BTreeSet::from([start]),
            instruction: instruction.clone(),
            landmark_seq,
            consumed: 0,
            goal_landmark,
            instr_embedding,
        })
    }

    /// Fold the current position and its ground-truth neighbors (always
    /// observable) into the working map. This is how the map grows.
    pub fn observe_local(&mut self) -> Result<()> {
        let here = self.env.node(self.current)?;
        self.known.insert_node(here.id, here.pos, here.landmark);
        for &(n, _) in self.env.neighbors(self.current)? {
            let node = self.env.node(n)?;
            self.known.insert_node(n, node.pos, node.landmark);
            self.known.insert_edge(self.current, n)?;
        }
        Ok(())
    }

    /// Advance the instruction pointer when the current node's landmark is
    /// the next unconsumed one. Applied on arrival at decision targets.
    pub fn consume_landmark(&mut self) {
        if self.consumed < self.landmark_seq.len() {
            if let Ok(node) = self.env.node(self.current) {
                if node.landmark == self.landmark_seq[self.consumed] {
                    self.consumed += 1;
                }
            }
        }
    }

    fn next_unconsumed(&self) -> Option<LandmarkId> {
        self.landmark_seq.get(self.consumed).copied()
    }

    /// Geodesic distances from `source` inside the working map.
    pub fn known_distances(&self, source: NodeId) -> Vec<f64> {
        crate::world::dijkstra(self.env.node_count(), source, |u| {
            self.known.neighbors(u).iter().copied()
        })
    }

    /// Smallest-id known node carrying the goal landmark, if any.
    pub fn goal_anchor(&self) -> Option<NodeId> {
        self.known
            .nodes()
            .iter()
            .find(|(_, n)| n.landmark == self.goal_landmark)
            .map(|(&id, _)| id)
    }
}

/// Unvisited known nodes reachable from the current position, in ascending id
/// order, followed by STOP. STOP is always present.
pub fn candidate_set(state: &AgentState<'_>) -> Vec<Candidate> {
    let dist = state.known_distances(state.current);
    let mut out: Vec<Candidate> = state
        .known
        .nodes()
        .keys()
        .copied()
        .filter(|&id| {
            !state.episode_visited.contains(&id) && dist[id as usize].is_finite()
        })
        .map(Candidate::Move)
        .collect();
    out.push(Candidate::Stop);
    out
}

/// The fixed feature map `φ(state, candidate)`.
pub fn feature_vector(
    state: &AgentState<'_>,
    candidate: Candidate,
    dist_from_current: &[f64],
    dist_from_anchor: Option<&[f64]>,
) -> Vec<f64> {
    let mut phi = vec![0.0; FEATURE_DIM];
    let mean_edge = state.env.spec().mean_edge_length;
    match candidate {
        Candidate::Move(id) => {
            phi[feature::MOVE_BIAS] = 1.0;
            let landmark = state
                .known
                .node(id)
                .map(|n| n.landmark)
                .unwrap_or_else(|| state.env.node(id).map(|n| n.landmark).unwrap_or(u32::MAX));
            if Some(landmark) == state.next_unconsumed() {
                phi[feature::NEXT_LANDMARK_MATCH] = 1.0;
            }
            if landmark == state.goal_landmark {
                phi[feature::GOAL_LANDMARK_MATCH] = 1.0;
            }
            if state
                .landmark_seq
                .get(state.consumed..)
                .unwrap_or(&[])
                .contains(&landmark)
            {
                phi[feature::ANY_LANDMARK_MATCH] = 1.0;
            }
            if let Ok(mean) = state.env.panorama_mean(id) {
                phi[feature::PANORAMA_ALIGNMENT] = seeds::cosine(mean, &state.instr_embedding);
            }
            let route = dist_from_current[id as usize];
            if route.is_finite() {
                phi[feature::ROUTE_COST] = route / (4.0 * mean_edge);
            }
            if let Some(anchor_dist) = dist_from_anchor {
                let here = anchor_dist[state.current as usize];
                let there = anchor_dist[id as usize];
                if here.is_finite() && there.is_finite() {
                    phi[feature::GEODESIC_PROGRESS] = (here - there) / mean_edge;
                }
            }
            if state
                .env
                .neighbors(state.current)
                .map(|ns| ns.iter().any(|&(n, _)| n == id))
                .unwrap_or(false)
            {
                phi[feature::ADJACENT] = 1.0;
            }
        }
        Candidate::Stop => {
            phi[feature::STOP_BIAS] = 1.0;
            if state.step_limit > 0 {
                phi[feature::STEP_FRACTION] = state.steps as f64 / state.step_limit as f64;
            }
            if state
                .env
                .node(state.current)
                .map(|n| n.landmark == state.goal_landmark)
                .unwrap_or(false)
            {
                phi[feature::STOP_AT_GOAL] = 1.0;
            }
            if !state.landmark_seq.is_empty() {
                phi[feature::CONSUMED_FRACTION] =
                    state.consumed as f64 / state.landmark_seq.len() as f64;
            }
        }
    }
    phi
}

/// Logits for each candidate: `⟨theta, φ⟩`. Pure and deterministic.
pub fn score_candidates(theta: &PolicyParams, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    theta.validate()?;
    features
        .iter()
        .map(|phi| {
            if phi.len() != theta.theta.len() {
                return Err(Error::DimensionMismatch {
                    expected: theta.theta.len(),
                    got: phi.len(),
                });
            }
            Ok(seeds::dot(&theta.theta, phi))
        })
        .collect()
}

/// Greedy argmax; ties go to the earliest candidate.
pub fn select_action(logits: &[f64], candidates: &[Candidate]) -> Result<(usize, Candidate)> {
    if logits.is_empty() || logits.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len().max(1),
            got: logits.len(),
        });
    }
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    Ok((best, candidates[best]))
}

/// Shortest route inside the known map from `from` to `to` (both inclusive).
/// Errors when `to` is not reachable, which violates the candidate-set
/// precondition.
pub fn plan_route(
    known: &GlobalGraph,
    node_budget: usize,
    from: NodeId,
    to: NodeId,
) -> Result<Vec<NodeId>> {
    shortest_path_via(node_budget, from, to, |u| known.neighbors(u).iter().copied())
        .map(|(path, _)| path)
        .ok_or(Error::Unreachable { from, to })
}

/// Everything retained from one decision, enough to recompute logits under a
/// different `theta` during adaptation.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub candidates: Vec<Candidate>,
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub chosen: usize,
}

/// Outcome of one executed episode.
#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    /// Every traversed node, starting at the episode's start node.
    pub trajectory: Vec<NodeId>,
    /// The decision sequence (move targets, then STOP when chosen).
    pub decisions: Vec<Candidate>,
    /// True when the agent chose STOP; false when the step limit ended the
    /// episode.
    pub stopped: bool,
    /// Move decisions taken.
    pub steps: usize,
    pub traces: Vec<StepTrace>,
}

/// Execution knobs for one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Maximum number of move decisions.
    pub step_limit: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        // Reference paths are 4-7 hops; double slack.
        EpisodeConfig { step_limit: 15 }
    }
}

/// Run one episode against an explicit starting map. Returns the result and
/// the memory record; the caller owns appending the record to its bank.
pub fn execute_episode(
    env: &NavGraph,
    book: &StyleBook,
    episode: &Episode,
    theta: &PolicyParams,
    start_graph: GlobalGraph,
    config: &EpisodeConfig,
) -> Result<(TrajectoryResult, EpisodeRecord)> {
    theta.validate()?;
    let mut state = AgentState::new(env, book, episode, start_graph, config.step_limit)?;
    let mut trajectory = vec![state.current];
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    let mut decisions = Vec::new();
    let mut traces = Vec::new();
    let mut stopped = false;

    loop {
        state.observe_local()?;
        observations.push(state.current);
        if state.steps >= state.step_limit {
            break;
        }

        let dist_from_current = state.known_distances(state.current);
        let dist_from_anchor = state.goal_anchor().map(|a| state.known_distances(a));
        let candidates = candidate_set(&state);
        let features: Vec<Vec<f64>> = candidates
            .iter()
            .map(|&c| feature_vector(&state, c, &dist_from_current, dist_from_anchor.as_deref()))
            .collect();
        let logits = score_candidates(theta, &features)?;
        let (chosen, action) = select_action(&logits, &candidates)?;
        traces.push(StepTrace {
            candidates: candidates.clone(),
            features,
            logits,
            chosen,
        });
        decisions.push(action);

        match action {
            Candidate::Stop => {
                stopped = true;
                break;
            }
            Candidate::Move(target) => {
                let route = plan_route(&state.known, env.node_count(), state.current, target)?;
                for &n in &route[1..] {
                    trajectory.push(n);
                    state.episode_visited.insert(n);
                    state.known.mark_visited(n);
                }
                state.current = target;
                state.consume_landmark();
                actions.push(target);
                state.steps += 1;
            }
        }
    }

    let record = EpisodeRecord {
        instruction: episode.instruction.clone(),
        observations,
        actions,
        trajectory: trajectory.clone(),
        stopped,
    };
    let result = TrajectoryResult {
        trajectory,
        decisions,
        stopped,
        steps: state.steps,
        traces,
    };
    Ok((result, record))
}

/// Run one episode inside a memory session: rebuild the global graph from the
/// bank, execute, then append the record. This is the online evaluation loop
/// (batch size 1).
pub fn run_episode(
    env: &NavGraph,
    book: &StyleBook,
    episode: &Episode,
    theta: &PolicyParams,
    session: &mut MemorySession,
    config: &EpisodeConfig,
) -> Result<TrajectoryResult> {
    if session.bank.env_id() != env.env_id() {
        return Err(Error::InvalidConfig(format!(
            "memory session for {} cannot run in {}",
            session.bank.env_id(),
            env.env_id()
        )));
    }
    let start_graph = session.start_graph(env)?;
    let (result, record) = execute_episode(env, book, episode, theta, start_graph, config)?;
    session.bank.append(record, env)?;
    Ok(result)
}
