//! CART regression trees and the two ensembles built on them: random
//! forest ([`forest::ForestModel`]) and squared-error gradient boosting
//! ([`boost::BoostModel`]).

pub mod boost;
pub mod forest;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("empty training set")]
    Empty,
    #[error("training rows and targets differ: {rows} vs {targets}")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("model trained on {fitted} features, queried with {given}")]
    FeatureMismatch { fitted: usize, given: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
}

/// Binary regression tree. Queries route left when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Predicts every row; errors if the matrix is narrower than the
    /// largest feature index the tree splits on.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, TreeError> {
        if let Some(max_feature) = self.max_feature() {
            if max_feature >= x.cols() {
                return Err(TreeError::FeatureMismatch {
                    fitted: max_feature + 1,
                    given: x.cols(),
                });
            }
        }
        Ok(x.row_iter().map(|row| self.predict_row(row)).collect())
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => {
                let mut m = *feature;
                if let Some(l) = left.max_feature() {
                    m = m.max(l);
                }
                if let Some(r) = right.max_feature() {
                    m = m.max(r);
                }
                Some(m)
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    /// Maximum split depth; `None` grows until the other stops trigger.
    pub max_depth: Option<usize>,
    /// Minimum samples in each child of a split.
    pub min_leaf: usize,
    /// Features considered per split; `None` means all.
    pub mtry: Option<usize>,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
            mtry: None,
        }
    }
}

/// Fits a CART regression tree by greedy variance reduction.
///
/// At each node, among `mtry` randomly chosen features, the split
/// maximizing `parent SSE - (left SSE + right SSE)` wins; thresholds are
/// midpoints of consecutive distinct sorted values; leaves hold the mean
/// target of their rows. Splitting stops at `max_depth`, when a node has
/// fewer than `2 * min_leaf` rows, or when no split has positive gain.
/// Ties on gain resolve to the lowest feature index, then lowest threshold.
pub fn cart_fit<R: Rng>(
    x: &Matrix,
    y: &[f64],
    params: &CartParams,
    rng: &mut R,
) -> Result<TreeNode, TreeError> {
    if x.rows() == 0 {
        return Err(TreeError::Empty);
    }
    if x.rows() != y.len() {
        return Err(TreeError::LengthMismatch {
            rows: x.rows(),
            targets: y.len(),
        });
    }
    if params.min_leaf == 0 {
        return Err(TreeError::BadParam("min_leaf must be at least 1".into()));
    }
    let mtry = params.mtry.unwrap_or(x.cols());
    if mtry == 0 || mtry > x.cols() {
        return Err(TreeError::BadParam(format!(
            "mtry = {mtry} out of range for {} features",
            x.cols()
        )));
    }
    let indices: Vec<usize> = (0..x.rows()).collect();
    Ok(grow_cart(x, y, &indices, params, mtry, 0, rng))
}

fn mean_at(y: &[f64], indices: &[usize]) -> f64 {
    indices.iter().map(|&i| y[i]).sum::<f64>() / indices.len() as f64
}

fn grow_cart<R: Rng>(
    x: &Matrix,
    y: &[f64],
    indices: &[usize],
    params: &CartParams,
    mtry: usize,
    depth: usize,
    rng: &mut R,
) -> TreeNode {
    let leaf = || TreeNode::Leaf {
        value: mean_at(y, indices),
    };
    if indices.len() < 2 * params.min_leaf {
        return leaf();
    }
    if let Some(max_depth) = params.max_depth {
        if depth >= max_depth {
            return leaf();
        }
    }
    // Bitwise-constant targets: exactly zero variance, no split possible.
    if indices.windows(2).all(|w| y[w[0]] == y[w[1]]) {
        return leaf();
    }

    // The drawn feature subset is sorted so that equal-gain candidates
    // resolve to the lowest feature index.
    let mut features: Vec<usize> = rand::seq::index::sample(rng, x.cols(), mtry).into_vec();
    features.sort_unstable();

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for &f in &features {
        if let Some((gain, threshold)) = best_variance_split(x, y, indices, f, params.min_leaf)
        {
            let better = match best {
                None => gain > 0.0,
                Some((bg, _, _)) => gain > bg,
            };
            if better {
                best = Some((gain, f, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return leaf();
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| x.get(i, feature) <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow_cart(x, y, &left_idx, params, mtry, depth + 1, rng)),
        right: Box::new(grow_cart(x, y, &right_idx, params, mtry, depth + 1, rng)),
    }
}

/// Best `(gain, threshold)` for one feature under the variance-reduction
/// criterion, or `None` if the feature admits no valid split. Thresholds
/// scan in ascending order, so ties keep the lowest threshold.
fn best_variance_split(
    x: &Matrix,
    y: &[f64],
    indices: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let n = indices.len();
    let mut pairs: Vec<(f64, f64)> = indices.iter().map(|&i| (x.get(i, feature), y[i])).collect();
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
    let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let parent_sse = total_sq - total_sum * total_sum / n as f64;

    let mut best: Option<(f64, f64)> = None;
    let mut left_sum = 0.0;
    let mut left_sq = 0.0;
    for i in 1..n {
        left_sum += pairs[i - 1].1;
        left_sq += pairs[i - 1].1 * pairs[i - 1].1;
        if pairs[i].0 <= pairs[i - 1].0 {
            continue; // not between distinct values
        }
        if i < min_leaf || n - i < min_leaf {
            continue;
        }
        let right_sum = total_sum - left_sum;
        let right_sq = total_sq - left_sq;
        let left_sse = left_sq - left_sum * left_sum / i as f64;
        let right_sse = right_sq - right_sum * right_sum / (n - i) as f64;
        let gain = parent_sse - left_sse - right_sse;
        // For values ulps apart the midpoint can round up onto the right
        // value; fall back to the left value so `x <= threshold` routes
        // exactly the first `i` sorted rows left and neither child is
        // ever empty.
        let mut threshold = 0.5 * (pairs[i - 1].0 + pairs[i].0);
        if threshold >= pairs[i].0 {
            threshold = pairs[i - 1].0;
        }
        let better = match best {
            None => gain > 0.0,
            Some((bg, _)) => gain > bg,
        };
        if better {
            best = Some((gain, threshold));
        }
    }
    best
}
