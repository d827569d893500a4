//! Procedural synthetic environments and geodesic queries over them.
//!
//! An environment is a connected undirected graph of viewpoints. Every node
//! carries a 3D position, a landmark token, and a panorama of `V` unit-norm
//! feature vectors of dimension `D`. Edge lengths are always the Euclidean
//! distance between endpoint positions; they are never stored separately.
//!
//! Generation is a pure function of `(seed, spec)`: identical inputs yield a
//! bit-identical graph. Two layout families are provided — `residential-grid`
//! (rooms on a grid connected by doors) and `nonresidential-hall` (a corridor
//! spine with branch clusters).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Node identifier within one environment.
pub type NodeId = u32;
/// Landmark token identifier (index into the landmark vocabulary).
pub type LandmarkId = u32;

// Seed-stream namespaces, so independent draws never share a stream.
const NS_JITTER: u64 = 2;
const NS_DOORS: u64 = 3;
const NS_LANDMARK: u64 = 4;
const NS_VIEW: u64 = 5;
const NS_EMBED: u64 = 6;
const NS_CLUSTER: u64 = 7;

/// Weight of the landmark-conditioned component mixed into each view vector.
/// Large enough that panorama means carry a decodable landmark signal.
const LANDMARK_SIGNAL: f64 = 2.0;

/// Layout family for procedural generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Rooms on a rectangular grid with door edges between some neighbors.
    #[serde(rename = "residential-grid")]
    ResidentialGrid,
    /// A corridor spine with small branch clusters hanging off it.
    #[serde(rename = "nonresidential-hall")]
    NonresidentialHall,
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layout::ResidentialGrid => write!(f, "residential-grid"),
            Layout::NonresidentialHall => write!(f, "nonresidential-hall"),
        }
    }
}

/// Parameters controlling environment generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub node_count: usize,
    pub layout: Layout,
    /// Realized mean edge length in meters; positions are rescaled so the
    /// generated graph matches this exactly.
    pub mean_edge_length: f64,
    pub landmark_vocab_size: u32,
    /// Fraction of nodes carrying a non-unique landmark token. Zero means
    /// every node gets a distinct token.
    pub landmark_duplication_rate: f64,
    /// Views per panorama (`V`).
    pub view_count: usize,
    /// Feature dimension per view (`D`).
    pub feature_dim: usize,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec {
            node_count: 36,
            layout: Layout::ResidentialGrid,
            // Matches typical indoor viewpoint spacing; keeps the 3 m success
            // threshold meaningful.
            mean_edge_length: 2.25,
            landmark_vocab_size: 64,
            landmark_duplication_rate: 0.0,
            view_count: 36,
            feature_dim: 16,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(Error::InvalidSpec("node_count must be >= 1".into()));
        }
        if !(self.mean_edge_length > 0.0) || !self.mean_edge_length.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "mean_edge_length must be positive, got {}",
                self.mean_edge_length
            )));
        }
        if self.view_count == 0 {
            return Err(Error::InvalidSpec("view_count must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidSpec("feature_dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.landmark_duplication_rate) {
            return Err(Error::InvalidSpec(format!(
                "landmark_duplication_rate must be in [0,1], got {}",
                self.landmark_duplication_rate
            )));
        }
        if self.landmark_vocab_size == 0 {
            return Err(Error::InvalidSpec("landmark_vocab_size must be >= 1".into()));
        }
        if self.landmark_duplication_rate == 0.0
            && (self.landmark_vocab_size as usize) < self.node_count
        {
            return Err(Error::InvalidSpec(format!(
                "unique landmarks require vocab >= node_count ({} < {})",
                self.landmark_vocab_size, self.node_count
            )));
        }
        Ok(())
    }
}

/// One viewpoint of the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavNode {
    pub id: NodeId,
    /// Position in meters, `[x, y, z]`.
    pub pos: [f64; 3],
    pub landmark: LandmarkId,
    /// `V` unit-norm feature vectors of dimension `D`.
    pub views: Vec<Vec<f64>>,
}

/// Ground-truth connectivity graph of one environment.
///
/// Immutable after construction; queries are pure and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct NavGraph {
    env_id: String,
    rng_seed: u64,
    spec: EnvSpec,
    nodes: Vec<NavNode>,
    /// Normalized edge set: `a < b` for every stored pair.
    edges: BTreeSet<(NodeId, NodeId)>,
    /// Sorted adjacency with precomputed Euclidean lengths.
    adjacency: Vec<Vec<(NodeId, f64)>>,
    /// Per-node mean over panorama views, cached for scoring.
    view_means: Vec<Vec<f64>>,
}

impl PartialEq for NavGraph {
    fn eq(&self, other: &Self) -> bool {
        self.env_id == other.env_id
            && self.rng_seed == other.rng_seed
            && self.spec == other.spec
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

/// Panorama plus landmark returned by [`NavGraph::observation_at`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<'a> {
    pub panorama: &'a [Vec<f64>],
    pub landmark: LandmarkId,
}

/// Serialized form of a [`NavGraph`].
#[derive(Debug, Serialize, Deserialize)]
struct EnvFile {
    env_id: String,
    seed: u64,
    spec: EnvSpec,
    nodes: Vec<NavNode>,
    edges: Vec<(NodeId, NodeId)>,
}

/// Generate an environment from a seed and spec.
///
/// The result satisfies every graph invariant: connected, symmetric, no
/// self-loops, positive edge lengths, exactly `V` unit-norm views per node,
/// landmarks within the vocabulary, and unique landmarks when the duplication
/// rate is zero.
pub fn generate_environment(seed: u64, spec: &EnvSpec) -> Result<NavGraph> {
    spec.validate()?;
    let n = spec.node_count;
    let env_id = format!("{}-{}n-s{}", spec.layout, n, seed);

    let (mut positions, edges) = match spec.layout {
        Layout::ResidentialGrid => grid_layout(seed, n),
        Layout::NonresidentialHall => hall_layout(seed, n),
    };
    rescale_positions(&mut positions, &edges, spec.mean_edge_length);

    let landmarks = assign_landmarks(seed, spec)?;

    let mut nodes = Vec::with_capacity(n);
    for id in 0..n as NodeId {
        let landmark = landmarks[id as usize];
        let views = make_panorama(seed, id, landmark, spec);
        nodes.push(NavNode {
            id,
            pos: positions[id as usize],
            landmark,
            views,
        });
    }

    NavGraph::from_parts(env_id, seed, spec.clone(), nodes, edges.into_iter().collect())
}

/// Rooms on a `rows x cols` grid; doors between orthogonal neighbors. A
/// randomized spanning tree keeps the floor connected, and a fraction of the
/// remaining candidate doors is kept for loops.
fn grid_layout(seed: u64, n: usize) -> (Vec<[f64; 3]>, BTreeSet<(NodeId, NodeId)>) {
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut jitter = seeds::stream(seed, &[NS_JITTER]);
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        positions.push([
            c as f64 + jitter.gen_range(-0.18..0.18),
            r as f64 + jitter.gen_range(-0.18..0.18),
            jitter.gen_range(-0.05..0.05),
        ]);
    }

    let mut candidates: Vec<(NodeId, NodeId)> = Vec::new();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        if c + 1 < cols && i + 1 < n {
            candidates.push((i as NodeId, (i + 1) as NodeId));
        }
        if (r + 1) * cols + c < n {
            candidates.push((i as NodeId, ((r + 1) * cols + c) as NodeId));
        }
    }
    (positions, sparsify(seed, n, candidates))
}

/// Corridor spine along the x axis with small branch clusters alternating
/// sides. Clusters are chains attached to spine nodes, so the hall is
/// connected by construction.
fn hall_layout(seed: u64, n: usize) -> (Vec<[f64; 3]>, BTreeSet<(NodeId, NodeId)>) {
    let spine_count = n.div_ceil(4).max(2).min(n);
    let mut jitter = seeds::stream(seed, &[NS_JITTER]);
    let mut cluster_rng = seeds::stream(seed, &[NS_CLUSTER]);
    let mut positions = Vec::with_capacity(n);
    let mut edges = BTreeSet::new();

    for i in 0..spine_count {
        positions.push([
            1.4 * i as f64 + jitter.gen_range(-0.12..0.12),
            jitter.gen_range(-0.12..0.12),
            jitter.gen_range(-0.05..0.05),
        ]);
        if i > 0 {
            edges.insert(((i - 1) as NodeId, i as NodeId));
        }
    }

    // Distribute the remaining nodes into chains off the spine.
    let mut next = spine_count;
    let mut anchor = 0usize;
    while next < n {
        let chain_len = cluster_rng.gen_range(1..=3).min(n - next);
        let side = if anchor % 2 == 0 { 1.0 } else { -1.0 };
        let base = positions[anchor % spine_count];
        let mut prev = (anchor % spine_count) as NodeId;
        for m in 0..chain_len {
            positions.push([
                base[0] + jitter.gen_range(-0.25..0.25),
                base[1] + side * (m as f64 + 1.0) + jitter.gen_range(-0.12..0.12),
                jitter.gen_range(-0.05..0.05),
            ]);
            let id = next as NodeId;
            edges.insert(ordered(prev, id));
            prev = id;
            next += 1;
        }
        anchor += 1;
    }
    (positions, edges)
}

/// Keep a randomized spanning tree plus ~55% of the remaining candidates.
fn sparsify(seed: u64, n: usize, mut candidates: Vec<(NodeId, NodeId)>) -> BTreeSet<(NodeId, NodeId)> {
    let mut rng = seeds::stream(seed, &[NS_DOORS]);
    candidates.shuffle(&mut rng);

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    let mut edges = BTreeSet::new();
    let mut extras = Vec::new();
    for (a, b) in candidates {
        let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
        if ra != rb {
            parent[ra] = rb;
            edges.insert(ordered(a, b));
        } else {
            extras.push((a, b));
        }
    }
    for (a, b) in extras {
        if rng.gen_bool(0.55) {
            edges.insert(ordered(a, b));
        }
    }
    edges
}

/// Scale every position so the realized mean edge length equals the target.
fn rescale_positions(positions: &mut [[f64; 3]], edges: &BTreeSet<(NodeId, NodeId)>, target: f64) {
    if edges.is_empty() {
        return;
    }
    let total: f64 = edges
        .iter()
        .map(|&(a, b)| euclid(&positions[a as usize], &positions[b as usize]))
        .sum();
    let mean = total / edges.len() as f64;
    let factor = target / mean;
    for p in positions.iter_mut() {
        for c in p.iter_mut() {
            *c *= factor;
        }
    }
}

/// Choose the landmark token for each node. With duplication rate `d`, the
/// node population shares `ceil(n * (1 - d))` distinct tokens (at least one),
/// each used at least once.
fn assign_landmarks(seed: u64, spec: &EnvSpec) -> Result<Vec<LandmarkId>> {
    let n = spec.node_count;
    let vocab = spec.landmark_vocab_size as usize;
    let distinct = ((n as f64) * (1.0 - spec.landmark_duplication_rate)).ceil() as usize;
    let distinct = distinct.clamp(1, n.min(vocab));

    let mut rng = seeds::stream(seed, &[NS_LANDMARK]);
    let chosen: Vec<LandmarkId> = rand::seq::index::sample(&mut rng, vocab, distinct)
        .into_iter()
        .map(|t| t as LandmarkId)
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut landmarks = vec![0 as LandmarkId; n];
    for (slot, &node) in order.iter().enumerate() {
        landmarks[node] = if slot < distinct {
            chosen[slot]
        } else {
            chosen[rng.gen_range(0..distinct)]
        };
    }
    Ok(landmarks)
}

/// Deterministic unit embedding for a landmark token in feature space.
pub fn landmark_embedding(seed: u64, landmark: LandmarkId, dim: usize) -> Vec<f64> {
    seeds::unit_vec(&mut seeds::stream(seed, &[NS_EMBED, landmark as u64]), dim)
}

/// Panorama views: seeded noise plus a landmark-conditioned component, so the
/// panorama mean points toward the landmark embedding while individual views
/// stay diverse.
fn make_panorama(seed: u64, node: NodeId, landmark: LandmarkId, spec: &EnvSpec) -> Vec<Vec<f64>> {
    let anchor = landmark_embedding(seed, landmark, spec.feature_dim);
    (0..spec.view_count)
        .map(|v| {
            let mut rng = seeds::stream(seed, &[NS_VIEW, node as u64, v as u64]);
            let mut view = seeds::unit_vec(&mut rng, spec.feature_dim);
            for (x, a) in view.iter_mut().zip(&anchor) {
                *x += LANDMARK_SIGNAL * a;
            }
            if !seeds::normalize(&mut view) {
                view = anchor.clone();
            }
            view
        })
        .collect()
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn euclid(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl NavGraph {
    /// Assemble and validate a graph from explicit parts. This is the single
    /// gate through which both the generator and the file loader pass, so
    /// every constructed graph satisfies the invariants.
    pub fn from_parts(
        env_id: String,
        rng_seed: u64,
        spec: EnvSpec,
        nodes: Vec<NavNode>,
        edges: Vec<(NodeId, NodeId)>,
    ) -> Result<NavGraph> {
        spec.validate()?;
        if nodes.len() != spec.node_count {
            return Err(Error::InvariantViolation(format!(
                "node count {} does not match spec {}",
                nodes.len(),
                spec.node_count
            )));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id as usize != i {
                return Err(Error::InvariantViolation(format!(
                    "node ids must be contiguous from 0; slot {} holds id {}",
                    i, node.id
                )));
            }
            if node.landmark >= spec.landmark_vocab_size {
                return Err(Error::InvariantViolation(format!(
                    "node {} landmark {} outside vocab {}",
                    node.id, node.landmark, spec.landmark_vocab_size
                )));
            }
            if node.views.len() != spec.view_count {
                return Err(Error::InvariantViolation(format!(
                    "node {} has {} views, expected {}",
                    node.id,
                    node.views.len(),
                    spec.view_count
                )));
            }
            for view in &node.views {
                if view.len() != spec.feature_dim {
                    return Err(Error::InvariantViolation(format!(
                        "node {} view has dim {}, expected {}",
                        node.id,
                        view.len(),
                        spec.feature_dim
                    )));
                }
                if (seeds::l2_norm(view) - 1.0).abs() > 1e-9 {
                    return Err(Error::InvariantViolation(format!(
                        "node {} view is not unit-norm",
                        node.id
                    )));
                }
            }
            if !node.pos.iter().all(|c| c.is_finite()) {
                return Err(Error::InvariantViolation(format!(
                    "node {} has non-finite position",
                    node.id
                )));
            }
        }

        let mut normalized = BTreeSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::InvariantViolation(format!("self-loop on node {a}")));
            }
            if a as usize >= nodes.len() || b as usize >= nodes.len() {
                return Err(Error::InvariantViolation(format!(
                    "edge ({a},{b}) references a missing node"
                )));
            }
            if euclid(&nodes[a as usize].pos, &nodes[b as usize].pos) <= 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "edge ({a},{b}) has non-positive length"
                )));
            }
            normalized.insert(ordered(a, b));
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &normalized {
            let w = euclid(&nodes[a as usize].pos, &nodes[b as usize].pos);
            adjacency[a as usize].push((b, w));
            adjacency[b as usize].push((a, w));
        }
        for list in adjacency.iter_mut() {
            list.sort_by_key(|&(id, _)| id);
        }

        let view_means = nodes
            .iter()
            .map(|node| {
                let mut mean = vec![0.0; spec.feature_dim];
                for view in &node.views {
                    for (m, x) in mean.iter_mut().zip(view) {
                        *m += x;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= node.views.len() as f64;
                }
                mean
            })
            .collect();

        let graph = NavGraph {
            env_id,
            rng_seed,
            spec,
            nodes,
            edges: normalized,
            adjacency,
            view_means,
        };
        if !graph.is_connected() {
            return Err(Error::InvariantViolation("graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NavNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&NavNode> {
        self.nodes.get(id as usize).ok_or(Error::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        (id as usize) < self.nodes.len()
    }

    /// Normalized `(a, b)` edge pairs with `a < b`.
    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&ordered(a, b))
    }

    /// Neighbors of `id` in ascending id order with edge lengths.
    pub fn neighbors(&self, id: NodeId) -> Result<&[(NodeId, f64)]> {
        self.adjacency
            .get(id as usize)
            .map(|v| v.as_slice())
            .ok_or(Error::UnknownNode(id))
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Result<f64> {
        if !self.has_edge(a, b) {
            return Err(Error::InvariantViolation(format!(
                "nodes {a} and {b} are not adjacent"
            )));
        }
        Ok(euclid(&self.nodes[a as usize].pos, &self.nodes[b as usize].pos))
    }

    pub fn position(&self, id: NodeId) -> Result<[f64; 3]> {
        Ok(self.node(id)?.pos)
    }

    /// Straight-line distance between two nodes.
    pub fn straight_line(&self, a: NodeId, b: NodeId) -> Result<f64> {
        Ok(euclid(&self.node(a)?.pos, &self.node(b)?.pos))
    }

    /// Mean over the node's panorama views.
    pub fn panorama_mean(&self, id: NodeId) -> Result<&[f64]> {
        self.node(id)?;
        Ok(&self.view_means[id as usize])
    }

    /// Landmark embedding in this environment's feature space.
    pub fn landmark_embedding(&self, landmark: LandmarkId) -> Vec<f64> {
        landmark_embedding(self.rng_seed, landmark, self.spec.feature_dim)
    }

    /// The node's stored panorama and landmark. Pure read.
    pub fn observation_at(&self, id: NodeId) -> Result<Observation<'_>> {
        let node = self.node(id)?;
        Ok(Observation {
            panorama: &node.views,
            landmark: node.landmark,
        })
    }

    /// Geodesic distances from `source` to every node (infinity where
    /// unreachable, which cannot happen on a validated ground-truth graph).
    pub fn geodesics_from(&self, source: NodeId) -> Result<Vec<f64>> {
        self.node(source)?;
        let dist = dijkstra(self.nodes.len(), source, |u| {
            self.adjacency[u as usize].iter().copied()
        });
        Ok(dist)
    }

    /// Shortest path between two nodes.
    ///
    /// Among equal-length paths the lexicographically smallest node-id
    /// sequence is returned. The length is the Dijkstra-accumulated geodesic
    /// distance.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<(Vec<NodeId>, f64)> {
        self.node(a)?;
        self.node(b)?;
        shortest_path_via(self.nodes.len(), a, b, |u| {
            self.adjacency[u as usize].iter().copied()
        })
        .ok_or(Error::Unreachable { from: a, to: b })
    }

    /// Breadth-first reachability from node 0 covers all nodes.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = std::collections::VecDeque::from([0 as NodeId]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.nodes.len()
    }

    /// Serialize to the environment JSON schema.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(EnvFile {
            env_id: self.env_id.clone(),
            seed: self.rng_seed,
            spec: self.spec.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.iter().copied().collect(),
        })
        .expect("environment serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json()).expect("env json");
        std::fs::write(path, text).map_err(Error::io(path.display().to_string()))
    }

    /// Load and revalidate every invariant.
    pub fn load(path: &Path) -> Result<NavGraph> {
        let text =
            std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))?;
        let file: EnvFile =
            serde_json::from_str(&text).map_err(Error::json(path.display().to_string()))?;
        NavGraph::from_parts(file.env_id, file.seed, file.spec, file.nodes, file.edges)
    }
}

/// Dijkstra over an arbitrary adjacency function. Distances are `f64::INFINITY`
/// where unreachable. Deterministic: the heap orders by (distance, node id).
pub(crate) fn dijkstra<F, I>(n: usize, source: NodeId, neighbors: F) -> Vec<f64>
where
    F: Fn(NodeId) -> I,
    I: Iterator<Item = (NodeId, f64)>,
{
    let mut dist = vec![f64::INFINITY; n];
    dist[source as usize] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((HeapDist(0.0), source)));
    while let Some(Reverse((HeapDist(d), u))) = heap.pop() {
        if d > dist[u as usize] {
            continue;
        }
        for (v, w) in neighbors(u) {
            let nd = d + w;
            if nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push(Reverse((HeapDist(nd), v)));
            }
        }
    }
    dist
}

/// Shortest path with the lexicographic tie-break, over an arbitrary
/// adjacency function. Returns `None` when `to` is unreachable from `from`.
///
/// Runs Dijkstra from the target, then walks greedily from the source always
/// taking the smallest-id neighbor that lies on a distance-consistent edge
/// (`w(u,v) + dist_to_target(v) == dist_to_target(u)`, exact arithmetic). At
/// least one such neighbor exists at every step because Dijkstra set
/// `dist_to_target(u)` through exactly that expression.
pub(crate) fn shortest_path_via<F, I>(
    n: usize,
    from: NodeId,
    to: NodeId,
    neighbors: F,
) -> Option<(Vec<NodeId>, f64)>
where
    F: Fn(NodeId) -> I,
    I: Iterator<Item = (NodeId, f64)>,
{
    if from == to {
        return Some((vec![from], 0.0));
    }
    let dist_to_target = dijkstra(n, to, &neighbors);
    let total = dist_to_target[from as usize];
    if !total.is_finite() {
        return None;
    }
    let mut path = vec![from];
    let mut current = from;
    while current != to {
        let here = dist_to_target[current as usize];
        let mut step = None;
        for (v, w) in neighbors(current) {
            if w + dist_to_target[v as usize] == here {
                step = Some(v);
                break;
            }
        }
        // Adjacency iterators are ascending by id, so the first consistent
        // neighbor is the lexicographic choice.
        let next = step.expect("distance-consistent neighbor must exist");
        path.push(next);
        current = next;
        debug_assert!(path.len() <= n, "shortest-path reconstruction cycled");
    }
    Some((path, total))
}

/// f64 wrapper ordered by total_cmp so it can live in a BinaryHeap.
#[derive(PartialEq)]
struct HeapDist(f64);

impl Eq for HeapDist {}

impl PartialOrd for HeapDist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapDist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// All-pairs geodesic distances via repeated Dijkstra. Convenience for small
/// graphs and metric caches.
pub fn all_pairs(graph: &NavGraph) -> Vec<Vec<f64>> {
    (0..graph.node_count() as NodeId)
        .map(|s| graph.geodesics_from(s).expect("valid source"))
        .collect()
}
