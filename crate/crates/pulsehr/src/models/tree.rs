//! CART regression trees: greedy binary splits minimizing the summed
//! squared error of the children, leaves predicting the mean label.

use crate::dataset::FeatureMatrix;

use super::{DtParams, Hyperparams, ModelArtifact, ModelError, ModelKind, Payload, TrainMeta};

/// A node counts as pure when its label variance drops below this.
const PURITY_VAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: u16,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

/// Tree stored as an arena; the root is node 0. Rows with
/// `x[feature] <= threshold` descend left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<TreeNode>,
}

impl Tree {
    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

}

/// Sums used by the split score; accumulated over rows in a fixed order so
/// scores are reproducible bit for bit.
pub(crate) struct NodeStats {
    sum: f64,
    sum2: f64,
}

impl NodeStats {
    fn of(train: &FeatureMatrix, idx: &[usize]) -> Self {
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for &i in idx {
            let y = train.label(i);
            sum += y;
            sum2 += y * y;
        }
        Self { sum, sum2 }
    }

    fn mean(&self, n: usize) -> f64 {
        self.sum / n as f64
    }
}

/// Exact two-pass squared error, used only for the purity stop so constant
/// labels register as exactly pure.
fn node_sse(train: &FeatureMatrix, idx: &[usize]) -> f64 {
    let mean = NodeStats::of(train, idx).mean(idx.len());
    idx.iter()
        .map(|&i| (train.label(i) - mean).powi(2))
        .sum()
}

pub(crate) struct BestSplit {
    pub feature: u16,
    pub threshold: f64,
    score: f64,
}

/// Exhaustively score every candidate split of this node: all features, all
/// midpoints between consecutive distinct sorted values. Returns the split
/// with the lowest summed child squared error; ties keep the lowest feature
/// index, then the lowest threshold (guaranteed by scan order and strict
/// improvement).
pub(crate) fn best_split(
    train: &FeatureMatrix,
    idx: &[usize],
    stats: &NodeStats,
) -> Option<BestSplit> {
    let n = idx.len();
    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for feature in 0..train.k() {
        sorted.clear();
        sorted.extend(idx.iter().map(|&i| (train.row(i)[feature], train.label(i))));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut sum_l = 0.0;
        let mut sum2_l = 0.0;
        for split_at in 1..n {
            let (v_prev, y_prev) = sorted[split_at - 1];
            sum_l += y_prev;
            sum2_l += y_prev * y_prev;
            let v_here = sorted[split_at].0;
            if v_here <= v_prev {
                continue;
            }
            let score = split_score(stats, sum_l, sum2_l, split_at, n);
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(BestSplit {
                    feature: feature as u16,
                    threshold: 0.5 * (v_prev + v_here),
                    score,
                });
            }
        }
    }
    best
}

/// Summed squared error of both children, from the left child's running
/// sums and the node totals. Shared by the fit and by test oracles so both
/// see bit-identical scores.
pub(crate) fn split_score(stats: &NodeStats, sum_l: f64, sum2_l: f64, n_l: usize, n: usize) -> f64 {
    let n_r = n - n_l;
    let sum_r = stats.sum - sum_l;
    let sum2_r = stats.sum2 - sum2_l;
    let sse_l = sum2_l - sum_l * sum_l / n_l as f64;
    let sse_r = sum2_r - sum_r * sum_r / n_r as f64;
    sse_l.max(0.0) + sse_r.max(0.0)
}

pub(crate) fn grow_tree(train: &FeatureMatrix, max_depth: u32) -> Tree {
    grow_tree_from(train, (0..train.len()).collect(), max_depth)
}

/// Grow on an explicit row multiset; duplicate indices weight a row, which
/// is how bootstrap resamples are fed in without copying the matrix.
pub(crate) fn grow_tree_from(train: &FeatureMatrix, idx: Vec<usize>, max_depth: u32) -> Tree {
    let mut nodes = Vec::new();
    grow_node(train, idx, 0, max_depth, &mut nodes);
    Tree { nodes }
}

fn grow_node(
    train: &FeatureMatrix,
    idx: Vec<usize>,
    depth: u32,
    max_depth: u32,
    nodes: &mut Vec<TreeNode>,
) -> u32 {
    let n = idx.len();
    let stats = NodeStats::of(train, &idx);
    let slot = nodes.len() as u32;
    nodes.push(TreeNode::Leaf {
        value: stats.mean(n),
    });
    if depth >= max_depth || n < 2 || node_sse(train, &idx) <= PURITY_VAR_EPS * n as f64 {
        return slot;
    }
    let Some(split) = best_split(train, &idx, &stats) else {
        return slot;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| train.row(i)[split.feature as usize] <= split.threshold);
    let left = grow_node(train, left_idx, depth + 1, max_depth, nodes);
    let right = grow_node(train, right_idx, depth + 1, max_depth, nodes);
    nodes[slot as usize] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    slot
}

/// Fit a CART regression tree.
pub fn fit_dt(train: &FeatureMatrix, params: &DtParams) -> Result<ModelArtifact, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let tree = grow_tree(train, params.max_depth);
    Ok(ModelArtifact {
        kind: ModelKind::Dt,
        hyperparams: Hyperparams::Dt(params.clone()),
        meta: TrainMeta {
            k: train.k(),
            n_rows: train.len(),
            seed: 0,
        },
        payload: Payload::Dt(tree),
    })
}
