//! Per-environment episodic memory and the cross-episode global graph.
//!
//! The [`MemoryBank`] is strictly append-only: after `k` executed episodes it
//! holds exactly the instructions, observation sequences, action sequences,
//! and trajectories of episodes `1..=k`, failed ones included. It is never
//! cleared.
//!
//! The [`GlobalGraph`] is the union topological map over the trajectories
//! accumulated since the last re-initialization boundary. With buffer
//! threshold `alpha`, the accumulation window restarts at every multiple of
//! `alpha` episodes: after `k` episodes the graph covers 1-based episode
//! indices in `(floor((k-1)/alpha)*alpha, k]`. Only the graph is ever
//! re-initialized — the bank keeps everything.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episodes::Instruction;
use crate::error::{Error, Result};
use crate::world::{LandmarkId, NavGraph, NodeId};

/// Everything retained from one executed episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instruction: Instruction,
    /// Node observed at each decision point, including the final position.
    pub observations: Vec<NodeId>,
    /// Chosen move targets, one per decision; STOP is not an entry, so
    /// `actions.len() == observations.len() - 1`.
    pub actions: Vec<NodeId>,
    /// Every node traversed, in order, starting at the episode's start node.
    pub trajectory: Vec<NodeId>,
    /// Whether the episode ended with an explicit STOP (vs. the step limit).
    pub stopped: bool,
}

/// Append-only store of executed episodes for one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    env_id: String,
    records: Vec<EpisodeRecord>,
}

impl MemoryBank {
    pub fn new(env_id: impl Into<String>) -> MemoryBank {
        MemoryBank {
            env_id: env_id.into(),
            records: Vec::new(),
        }
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> Option<&EpisodeRecord> {
        self.records.get(index)
    }

    /// Append a record after validating it against the ground truth. On
    /// rejection the bank is unchanged.
    pub fn append(&mut self, record: EpisodeRecord, truth: &NavGraph) -> Result<()> {
        validate_record(&record, truth)?;
        self.records.push(record);
        Ok(())
    }
}

fn validate_record(record: &EpisodeRecord, truth: &NavGraph) -> Result<()> {
    if record.observations.is_empty() {
        return Err(Error::InconsistentRecord("no observations".into()));
    }
    if record.actions.len() + 1 != record.observations.len() {
        return Err(Error::InconsistentRecord(format!(
            "expected |A| = |O| - 1, got |A| = {}, |O| = {}",
            record.actions.len(),
            record.observations.len()
        )));
    }
    if record.trajectory.is_empty() {
        return Err(Error::InconsistentRecord("empty trajectory".into()));
    }
    for &n in record
        .trajectory
        .iter()
        .chain(&record.observations)
        .chain(&record.actions)
    {
        if !truth.contains(n) {
            return Err(Error::InconsistentRecord(format!(
                "node {n} does not exist in the ground truth"
            )));
        }
    }
    for pair in record.trajectory.windows(2) {
        if !truth.has_edge(pair[0], pair[1]) {
            return Err(Error::InconsistentRecord(format!(
                "trajectory nodes {} and {} are not adjacent",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

/// Node payload inside the global graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalNode {
    pub pos: [f64; 3],
    pub landmark: LandmarkId,
    pub visited: bool,
}

/// Cross-episode union topological map with buffered re-initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalGraph {
    env_id: String,
    nodes: BTreeMap<NodeId, GlobalNode>,
    edges: BTreeSet<(NodeId, NodeId)>,
    /// Adjacency mirror of `edges` with Euclidean lengths, kept in sync.
    adjacency: BTreeMap<NodeId, Vec<(NodeId, f64)>>,
    pub episodes_since_reset: usize,
    pub alpha: usize,
}

impl GlobalGraph {
    pub fn empty(env_id: impl Into<String>, alpha: usize) -> GlobalGraph {
        GlobalGraph {
            env_id: env_id.into(),
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            episodes_since_reset: 0,
            alpha,
        }
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Option<&GlobalNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, GlobalNode> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    /// Known neighbors of `id` in ascending id order.
    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, f64)] {
        self.adjacency.get(&id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Insert or refresh a node. Later payloads overwrite earlier ones.
    pub fn insert_node(&mut self, id: NodeId, pos: [f64; 3], landmark: LandmarkId) {
        let visited = self.nodes.get(&id).map(|n| n.visited).unwrap_or(false);
        self.nodes.insert(id, GlobalNode { pos, landmark, visited });
        self.adjacency.entry(id).or_default();
    }

    /// Insert an undirected edge between two known nodes.
    pub fn insert_edge(&mut self, a: NodeId, b: NodeId) -> Result<()> {
        if a == b {
            return Err(Error::InvariantViolation(format!("self-loop on node {a}")));
        }
        let (pa, pb) = match (self.nodes.get(&a), self.nodes.get(&b)) {
            (Some(na), Some(nb)) => (na.pos, nb.pos),
            _ => {
                return Err(Error::InvariantViolation(format!(
                    "edge ({a},{b}) references a node missing from the global graph"
                )))
            }
        };
        let key = if a < b { (a, b) } else { (b, a) };
        if self.edges.insert(key) {
            let dx = pa[0] - pb[0];
            let dy = pa[1] - pb[1];
            let dz = pa[2] - pb[2];
            let w = (dx * dx + dy * dy + dz * dz).sqrt();
            let list_a = self.adjacency.entry(a).or_default();
            list_a.push((b, w));
            list_a.sort_by_key(|&(id, _)| id);
            let list_b = self.adjacency.entry(b).or_default();
            list_b.push((a, w));
            list_b.sort_by_key(|&(id, _)| id);
        }
        Ok(())
    }

    /// Merge a trajectory (nodes and consecutive edges) into the graph,
    /// validating against the ground truth.
    pub fn absorb_trajectory(&mut self, trajectory: &[NodeId], truth: &NavGraph) -> Result<()> {
        for &n in trajectory {
            let node = truth.node(n)?;
            self.insert_node(n, node.pos, node.landmark);
        }
        for pair in trajectory.windows(2) {
            if !truth.has_edge(pair[0], pair[1]) {
                return Err(Error::InvariantViolation(format!(
                    "trajectory edge ({},{}) is not a ground-truth edge",
                    pair[0], pair[1]
                )));
            }
            self.insert_edge(pair[0], pair[1])?;
        }
        Ok(())
    }

    /// Clear the visited flag on every node; topology unchanged. Idempotent.
    pub fn reset_visited(&mut self) {
        for node in self.nodes.values_mut() {
            node.visited = false;
        }
    }

    pub fn mark_visited(&mut self, id: NodeId) -> bool {
        match self.nodes.get_mut(&id) {
            Some(node) => {
                node.visited = true;
                true
            }
            None => false,
        }
    }

    pub fn visited_count(&self) -> usize {
        self.nodes.values().filter(|n| n.visited).count()
    }

    /// Fraction of ground-truth nodes present in this graph.
    pub fn coverage(&self, truth: &NavGraph) -> Result<f64> {
        for &id in self.nodes.keys() {
            if !truth.contains(id) {
                return Err(Error::InvariantViolation(format!(
                    "global-graph node {id} is not part of the ground truth"
                )));
            }
        }
        Ok(self.nodes.len() as f64 / truth.node_count() as f64)
    }

    /// Check the subgraph invariant against the ground truth: every node and
    /// edge must exist there with identical payloads.
    pub fn verify_subgraph(&self, truth: &NavGraph) -> Result<()> {
        for (&id, node) in &self.nodes {
            let gt = truth.node(id).map_err(|_| {
                Error::InvariantViolation(format!("fabricated node {id} in global graph"))
            })?;
            if gt.pos != node.pos || gt.landmark != node.landmark {
                return Err(Error::InvariantViolation(format!(
                    "node {id} payload diverges from ground truth"
                )));
            }
        }
        for &(a, b) in &self.edges {
            if !truth.has_edge(a, b) {
                return Err(Error::InvariantViolation(format!(
                    "fabricated edge ({a},{b}) in global graph"
                )));
            }
        }
        Ok(())
    }
}

impl GlobalGraph {
    /// The complete ground-truth map: every node and edge, visited flags
    /// clear. Used for full-graph pretraining contexts and oracle ceilings.
    pub fn full_of(truth: &NavGraph, alpha: usize) -> GlobalGraph {
        let mut graph = GlobalGraph::empty(truth.env_id(), alpha);
        for node in truth.nodes() {
            graph.insert_node(node.id, node.pos, node.landmark);
        }
        for &(a, b) in truth.edges() {
            graph
                .insert_edge(a, b)
                .expect("ground-truth edges connect inserted nodes");
        }
        graph
    }
}

/// One environment's live evaluation state: the bank plus the buffer
/// threshold. Mutation is single-writer and strictly sequential in episode
/// order; distinct environments may run fully in parallel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySession {
    pub bank: MemoryBank,
    pub alpha: usize,
}

impl MemorySession {
    pub fn new(env_id: impl Into<String>, alpha: usize) -> MemorySession {
        MemorySession {
            bank: MemoryBank::new(env_id),
            alpha,
        }
    }

    /// The global graph an episode starts from: the bank rebuilt under the
    /// session's buffer threshold.
    pub fn start_graph(&self, truth: &NavGraph) -> Result<GlobalGraph> {
        rebuild_global_graph(&self.bank, self.alpha, truth)
    }

    pub fn checkpoint(&self) -> BankCheckpoint {
        BankCheckpoint {
            bank: self.bank.clone(),
            alpha: self.alpha,
        }
    }

    pub fn from_checkpoint(cp: BankCheckpoint) -> MemorySession {
        MemorySession {
            bank: cp.bank,
            alpha: cp.alpha,
        }
    }
}

/// Rebuild the global graph from the bank under buffer threshold `alpha`.
///
/// Pure: replaying the same bank always reproduces the identical graph. After
/// `k` episodes the accumulation window covers 1-based episode indices in
/// `(floor((k-1)/alpha)*alpha, k]`; an empty bank yields an empty graph.
pub fn rebuild_global_graph(
    bank: &MemoryBank,
    alpha: usize,
    truth: &NavGraph,
) -> Result<GlobalGraph> {
    if alpha == 0 {
        return Err(Error::InvalidConfig("alpha must be >= 1".into()));
    }
    let mut graph = GlobalGraph::empty(bank.env_id(), alpha);
    let k = bank.len();
    if k == 0 {
        return Ok(graph);
    }
    let window_start = (k - 1) / alpha * alpha; // 0-based record index
    for record in &bank.records()[window_start..k] {
        graph.absorb_trajectory(&record.trajectory, truth)?;
    }
    graph.episodes_since_reset = k - window_start;
    Ok(graph)
}

/// Serialized session memory: the bank plus the buffer threshold, enough to
/// resume deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankCheckpoint {
    pub bank: MemoryBank,
    pub alpha: usize,
}

impl BankCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint json");
        std::fs::write(path, text).map_err(Error::io(path.display().to_string()))
    }

    /// Load and revalidate every record against the ground truth.
    pub fn load(path: &Path, truth: &NavGraph) -> Result<BankCheckpoint> {
        let text =
            std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))?;
        let raw: BankCheckpoint =
            serde_json::from_str(&text).map_err(Error::json(path.display().to_string()))?;
        let mut bank = MemoryBank::new(raw.bank.env_id());
        for record in raw.bank.records {
            bank.append(record, truth)?;
        }
        Ok(BankCheckpoint { bank, alpha: raw.alpha })
    }
}
