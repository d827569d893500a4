//! Trajectory evaluation: TL, NE, SR, SPL, nDTW, adaptation slopes, and
//! cross-run aggregation.
//!
//! All arithmetic is 64-bit. Navigation error is geodesic on the ground-truth
//! graph. nDTW uses dynamic programming over geodesic node-pair distances
//! with unit step moves (match/insert/delete all cost the full pairwise
//! distance), boundary-aligned, normalized by `exp(-DTW / (|R| * 3 m))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{NavGraph, NodeId};

/// Success and nDTW distance threshold in meters.
pub const SUCCESS_THRESHOLD_M: f64 = 3.0;
/// Default group size for adaptation-slope analysis.
pub const DEFAULT_GROUP_SIZE: usize = 50;

/// Per-episode evaluation results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Trajectory length in meters.
    pub tl: f64,
    /// Navigation error in meters (geodesic).
    pub ne: f64,
    /// 1 when the agent stopped within 3 m of the goal.
    pub success: u8,
    /// Success weighted by path length, in [0, 1].
    pub spl: f64,
    /// Normalized dynamic time warping similarity, in (0, 1].
    pub ndtw: f64,
}

impl EpisodeMetrics {
    /// Check the metric domain invariants.
    pub fn validate(&self) -> Result<()> {
        let ok = self.tl >= 0.0
            && self.ne >= 0.0
            && (self.success == 0 || self.success == 1)
            && (0.0..=1.0).contains(&self.spl)
            && self.spl <= self.success as f64
            && self.ndtw > 0.0
            && self.ndtw <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvariantViolation(format!("metrics out of domain: {self:?}")))
        }
    }
}

/// Sum of traversed edge lengths. Revisited edges count every time.
pub fn path_length(graph: &NavGraph, trajectory: &[NodeId]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::InvariantViolation("empty trajectory".into()));
    }
    let mut total = 0.0;
    for pair in trajectory.windows(2) {
        total += graph.edge_length(pair[0], pair[1])?;
    }
    Ok(total)
}

/// Geodesic distance between the stop location and the target.
pub fn navigation_error(graph: &NavGraph, stop: NodeId, goal: NodeId) -> Result<f64> {
    let (_, len) = graph.shortest_path(stop, goal)?;
    Ok(len)
}

/// 1 iff the navigation error is within the 3 m threshold (inclusive).
pub fn success(ne: f64) -> u8 {
    u8::from(ne <= SUCCESS_THRESHOLD_M)
}

/// Success weighted by path length: `success * shortest / max(shortest, pred)`,
/// defined as `success` when the shortest length is zero.
pub fn spl(success: u8, shortest_len: f64, pred_len: f64) -> Result<f64> {
    if shortest_len < 0.0 || pred_len < 0.0 {
        return Err(Error::InvariantViolation(format!(
            "negative path length: shortest {shortest_len}, predicted {pred_len}"
        )));
    }
    if shortest_len == 0.0 {
        return Ok(success as f64);
    }
    Ok(success as f64 * shortest_len / shortest_len.max(pred_len))
}

/// Geodesic cost matrix `d[i][j] = dist(reference[i], predicted[j])` shared by
/// the DP and the brute-force alignment oracle.
pub fn dtw_cost_matrix(
    graph: &NavGraph,
    reference: &[NodeId],
    predicted: &[NodeId],
) -> Result<Vec<Vec<f64>>> {
    if reference.is_empty() || predicted.is_empty() {
        return Err(Error::InvariantViolation("nDTW requires non-empty paths".into()));
    }
    let mut dist_from: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for &r in reference {
        if let std::collections::btree_map::Entry::Vacant(slot) = dist_from.entry(r) {
            slot.insert(graph.geodesics_from(r)?);
        }
    }
    for &q in predicted {
        graph.node(q)?;
    }
    Ok(reference
        .iter()
        .map(|r| predicted.iter().map(|&q| dist_from[r][q as usize]).collect())
        .collect())
}

/// Boundary-aligned DTW cost by dynamic programming over a cost matrix.
pub fn dtw_from_matrix(cost: &[Vec<f64>]) -> f64 {
    let m = cost.len();
    let n = cost[0].len();
    let mut dp = vec![vec![f64::INFINITY; n + 1]; m + 1];
    dp[0][0] = 0.0;
    for i in 1..=m {
        for j in 1..=n {
            let best = dp[i - 1][j].min(dp[i][j - 1]).min(dp[i - 1][j - 1]);
            dp[i][j] = cost[i - 1][j - 1] + best;
        }
    }
    dp[m][n]
}

/// Normalized dynamic time warping similarity between the reference path and
/// a predicted path: `exp(-DTW / (|reference| * 3 m))`.
pub fn ndtw(graph: &NavGraph, reference: &[NodeId], predicted: &[NodeId]) -> Result<f64> {
    let cost = dtw_cost_matrix(graph, reference, predicted)?;
    let dtw = dtw_from_matrix(&cost);
    Ok((-dtw / (reference.len() as f64 * SUCCESS_THRESHOLD_M)).exp())
}

/// Evaluate one executed trajectory against its reference path.
pub fn evaluate_episode(
    graph: &NavGraph,
    reference: &[NodeId],
    trajectory: &[NodeId],
) -> Result<EpisodeMetrics> {
    if reference.is_empty() || trajectory.is_empty() {
        return Err(Error::InvariantViolation("empty path in evaluation".into()));
    }
    let start = reference[0];
    let goal = *reference.last().expect("non-empty");
    let stop = *trajectory.last().expect("non-empty");
    let tl = path_length(graph, trajectory)?;
    let ne = navigation_error(graph, stop, goal)?;
    let success = success(ne);
    let (_, shortest_len) = graph.shortest_path(start, goal)?;
    let spl = spl(success, shortest_len, tl)?;
    let ndtw = ndtw(graph, reference, trajectory)?;
    let metrics = EpisodeMetrics { tl, ne, success, spl, ndtw };
    metrics.validate()?;
    Ok(metrics)
}

/// Ordinary least-squares slope of group-mean success against group index.
///
/// The series is cut into consecutive groups of `group_size` (a trailing
/// partial group is dropped); the slope is per group.
pub fn adaptation_slope(per_episode_success: &[f64], group_size: usize) -> Result<f64> {
    if group_size == 0 {
        return Err(Error::InvalidConfig("group size must be >= 1".into()));
    }
    let required = 2 * group_size;
    if per_episode_success.len() < required {
        return Err(Error::TooFewEpisodes {
            required,
            got: per_episode_success.len(),
        });
    }
    let means: Vec<f64> = per_episode_success
        .chunks_exact(group_size)
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let n = means.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = means.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in means.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    Ok(num / den)
}

/// Mean with standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

/// Arithmetic mean and `sample_std / sqrt(n)`; a single run has stderr 0.
pub fn summarize(values: &[f64]) -> MeanStderr {
    assert!(!values.is_empty(), "summarize requires at least one run");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanStderr { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    MeanStderr {
        mean,
        stderr: var.sqrt() / n.sqrt(),
    }
}

/// Independent brute-force oracles used by the test suites. These must stay
/// algorithmically separate from the production paths they check.
pub mod oracle {
    use super::*;

    /// All-pairs shortest distances by Floyd–Warshall.
    pub fn floyd_warshall(graph: &NavGraph) -> Vec<Vec<f64>> {
        let n = graph.node_count();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for &(a, b) in graph.edges() {
            let w = graph.edge_length(a, b).expect("edge exists");
            d[a as usize][b as usize] = w;
            d[b as usize][a as usize] = w;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    /// Minimum alignment cost by exhaustive enumeration of every monotone,
    /// boundary-aligned warping path. Accumulates costs front-to-back, the
    /// same order as the DP, so agreement is exact.
    pub fn dtw_exhaustive(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], i: usize, j: usize, acc: f64) -> f64 {
            let acc = cost[i][j] + acc;
            let (m, n) = (cost.len(), cost[0].len());
            if i + 1 == m && j + 1 == n {
                return acc;
            }
            let mut best = f64::INFINITY;
            if i + 1 < m {
                best = best.min(go(cost, i + 1, j, acc));
            }
            if j + 1 < n {
                best = best.min(go(cost, i, j + 1, acc));
            }
            if i + 1 < m && j + 1 < n {
                best = best.min(go(cost, i + 1, j + 1, acc));
            }
            best
        }
        go(cost, 0, 0, 0.0)
    }
}
