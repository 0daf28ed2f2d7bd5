//! Behavioral scoring: neighbor-logit evaluation on grid tasks and exact-match
//! accuracy on generated answers.

use std::collections::{HashMap, HashSet};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{GridError, GridTruth, Lattice};
use crate::numeric::CompensatedSum;
use crate::scalar::Scalar;
use crate::store::{SequenceRecord, SpanLabel, StoreError, TrajectoryBundle};

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("node token {0} is not among the tracked tokens")]
    UntrackedToken(u32),
    #[error("sequence `{0}` has no grid ground truth")]
    NoGridTruth(String),
    #[error("sequence `{0}` has no node token ids")]
    NoNodeTokens(String),
    #[error("sequence `{0}` has no tracked logits")]
    NoLogits(String),
    #[error("sequence `{id}`: {reason}")]
    BadTruth { id: String, reason: String },
    #[error("step at position {position} is outside {n_tokens} logit rows")]
    PositionOutOfRange { position: usize, n_tokens: usize },
    #[error("node {node} is outside the {n_nodes}-node lattice")]
    NodeOutOfRange { node: usize, n_nodes: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = BehaviorError> = std::result::Result<T, E>;

/// One prediction step: logits at `position` while the walk sits on `node`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEval<T> {
    pub position: usize,
    pub node: usize,
    pub neighbor_mean: T,
    pub non_neighbor_mean: T,
    /// Strictly higher neighbor mean.
    pub success: bool,
}

impl<T: Scalar> StepEval<T> {
    pub fn difference(&self) -> T {
        self.neighbor_mean - self.non_neighbor_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEval<T> {
    pub steps: Vec<StepEval<T>>,
    /// Mean over steps of neighbor minus non-neighbor mean logit.
    pub logit_difference: T,
}

impl<T: Scalar> NeighborEval<T> {
    pub fn success_rate(&self) -> T {
        let hits = self.steps.iter().filter(|s| s.success).count();
        T::from_usize_lossy(hits) / T::from_usize_lossy(self.steps.len().max(1))
    }

    pub fn mean_neighbor(&self) -> T {
        mean_of(self.steps.iter().map(|s| s.neighbor_mean), self.steps.len())
    }

    pub fn mean_non_neighbor(&self) -> T {
        mean_of(self.steps.iter().map(|s| s.non_neighbor_mean), self.steps.len())
    }
}

fn mean_of<T: Scalar>(values: impl Iterator<Item = T>, n: usize) -> T {
    let mut acc = CompensatedSum::new();
    values.for_each(|v| acc.add(v));
    acc.value() / T::from_usize_lossy(n.max(1))
}

/// Neighbor, non-neighbor and own token sets of `node`.
pub struct TokenPartition {
    pub neighbors: Vec<u32>,
    pub non_neighbors: Vec<u32>,
    pub own: Vec<u32>,
}

/// Splits every node token into the current node's own tokens, tokens of
/// lattice neighbors and the rest.
pub fn partition_tokens(lattice: &Lattice, node_tokens: &[Vec<u32>], node: usize) -> TokenPartition {
    let neighbors = lattice.neighbors(node);
    let mut p = TokenPartition { neighbors: Vec::new(), non_neighbors: Vec::new(), own: Vec::new() };
    for (other, tokens) in node_tokens.iter().enumerate() {
        let bucket = if other == node {
            &mut p.own
        } else if neighbors.contains(&other) {
            &mut p.neighbors
        } else {
            &mut p.non_neighbors
        };
        bucket.extend_from_slice(tokens);
    }
    p
}

/// Scores each `(position, node)` step against the tracked-logit matrix
/// `(tokens, tracked)` whose columns follow `tracked_ids`.
pub fn neighbor_eval<T: Scalar>(
    logits: ArrayView2<'_, f32>,
    tracked_ids: &[u32],
    lattice: &Lattice,
    node_tokens: &[Vec<u32>],
    steps: &[(usize, usize)],
) -> Result<NeighborEval<T>> {
    if node_tokens.len() != lattice.n_nodes() {
        return Err(BehaviorError::NodeOutOfRange { node: node_tokens.len(), n_nodes: lattice.n_nodes() });
    }
    let column: HashMap<u32, usize> = tracked_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let cols = |tokens: &[u32]| -> Result<Vec<usize>> {
        tokens.iter().map(|t| column.get(t).copied().ok_or(BehaviorError::UntrackedToken(*t))).collect()
    };
    let set_mean = |row: usize, cols: &[usize]| -> T {
        mean_of(cols.iter().map(|&c| T::from_f32_lossy(logits[[row, c]])), cols.len())
    };
    let mut out = Vec::with_capacity(steps.len());
    for &(position, node) in steps {
        if node >= lattice.n_nodes() {
            return Err(BehaviorError::NodeOutOfRange { node, n_nodes: lattice.n_nodes() });
        }
        if position >= logits.nrows() {
            return Err(BehaviorError::PositionOutOfRange { position, n_tokens: logits.nrows() });
        }
        let p = partition_tokens(lattice, node_tokens, node);
        let neighbor_mean = set_mean(position, &cols(&p.neighbors)?);
        let non_neighbor_mean = set_mean(position, &cols(&p.non_neighbors)?);
        out.push(StepEval { position, node, neighbor_mean, non_neighbor_mean, success: neighbor_mean > non_neighbor_mean });
    }
    let logit_difference = mean_of(out.iter().map(StepEval::difference), out.len());
    Ok(NeighborEval { steps: out, logit_difference })
}

/// Grid ground truth of a sequence, if it carries one.
pub fn grid_truth(seq: &SequenceRecord) -> Option<GridTruth> {
    serde_json::from_value(seq.truth.clone()).ok()
}

/// Test-walk steps `(token position, node)` of a grid sequence.
pub fn test_steps(seq: &SequenceRecord, truth: &GridTruth) -> Result<Vec<(usize, usize)>> {
    let bad = |reason: String| BehaviorError::BadTruth { id: seq.id.clone(), reason };
    let window = seq
        .spans_labeled(SpanLabel::TestWindow)
        .next()
        .ok_or_else(|| bad("no test-window span".into()))?;
    if window.len() != truth.test_nodes.len() {
        return Err(bad(format!("test window has {} tokens for {} test nodes", window.len(), truth.test_nodes.len())));
    }
    if let Some(node_tokens) = &truth.node_token_ids {
        for (pos, &node) in window.range().zip(&truth.test_nodes) {
            let tok = seq.token_ids[pos];
            if !node_tokens.get(node).is_some_and(|ts| ts.contains(&tok)) {
                return Err(bad(format!("token {tok} at position {pos} does not belong to node {node}")));
            }
        }
    }
    Ok(window.range().zip(truth.test_nodes.iter().copied()).collect())
}

/// Neighbor evaluation of one bundle sequence over its test window.
pub fn evaluate_sequence<T: Scalar>(bundle: &TrajectoryBundle, id: &str) -> Result<NeighborEval<T>> {
    let seq = bundle.sequence(id)?;
    let truth = grid_truth(seq).ok_or_else(|| BehaviorError::NoGridTruth(id.to_string()))?;
    let node_tokens = truth.node_token_ids.clone().ok_or_else(|| BehaviorError::NoNodeTokens(id.to_string()))?;
    let lattice = truth.lattice()?;
    let steps = test_steps(seq, &truth)?;
    let logits = bundle.load_logits(id)?.ok_or_else(|| BehaviorError::NoLogits(id.to_string()))?;
    neighbor_eval(logits.view(), &bundle.manifest.tracked_token_ids, &lattice, &node_tokens, &steps)
}

/// Paired per-step values for a neighbor/non-neighbor scatter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogitScatter<T> {
    pub neighbor: Vec<T>,
    pub non_neighbor: Vec<T>,
    /// `neighbor - non_neighbor` per step.
    pub difference: Vec<T>,
}

pub fn logit_scatter<'a, T: Scalar>(evals: impl IntoIterator<Item = &'a NeighborEval<T>>) -> LogitScatter<T> {
    let mut s = LogitScatter { neighbor: Vec::new(), non_neighbor: Vec::new(), difference: Vec::new() };
    for step in evals.into_iter().flat_map(|e| &e.steps) {
        s.neighbor.push(step.neighbor_mean);
        s.non_neighbor.push(step.non_neighbor_mean);
        s.difference.push(step.difference());
    }
    s
}

/// Exact string match after trimming surrounding whitespace; case is kept.
pub fn exact_match(generated: &str, expected: &str) -> bool {
    generated.trim() == expected.trim()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub prompt_id: String,
    pub generated: String,
    pub expected: String,
    pub correct: bool,
}

impl AccuracyRecord {
    pub fn new(prompt_id: impl Into<String>, generated: impl Into<String>, expected: impl Into<String>) -> Self {
        let (generated, expected) = (generated.into(), expected.into());
        let correct = exact_match(&generated, &expected);
        Self { prompt_id: prompt_id.into(), generated, expected, correct }
    }
}

/// Fraction correct; `None` for no records.
pub fn accuracy(records: &[AccuracyRecord]) -> Option<f64> {
    (!records.is_empty()).then(|| records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

/// True when every pair of token sets is disjoint and their union is every node token.
pub fn partition_is_sound(p: &TokenPartition, node_tokens: &[Vec<u32>]) -> bool {
    let all: HashSet<u32> = node_tokens.iter().flatten().copied().collect();
    let total = p.neighbors.len() + p.non_neighbors.len() + p.own.len();
    let union: HashSet<u32> = p.neighbors.iter().chain(&p.non_neighbors).chain(&p.own).copied().collect();
    total == all.len() && union == all
}
