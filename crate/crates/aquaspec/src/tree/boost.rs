//! Gradient boosting for squared error. Each round fits a regression tree
//! to the current gradients `g_i = prediction_i - y_i` (unit hessians),
//! scoring splits with the regularized gain
//! `0.5 * [GL^2/(HL+lambda) + GR^2/(HR+lambda) - (GL+GR)^2/(HL+HR+lambda)]`
//! and assigning leaf weights `-G/(H+lambda)`.

use serde::{Deserialize, Serialize};

use super::{TreeError, TreeNode};
use crate::data::Matrix;
use crate::serialize::VersionedSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    /// Learning rate applied to every tree's output.
    pub eta: f64,
    /// L2 regularization on leaf weights.
    pub lambda: f64,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            eta: 0.3,
            lambda: 1.0,
            max_depth: Some(3),
            min_leaf: 1,
        }
    }
}

/// Fitted boosting model: `prediction = base_score + eta * sum(tree outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    base_score: f64,
    trees: Vec<TreeNode>,
    eta: f64,
    lambda: f64,
    n_features: usize,
}

impl VersionedSchema for BoostModel {
    const SCHEMA: &'static str = "aquaspec.boost";
    const VERSION: u32 = 1;
}

impl BoostModel {
    pub fn fit(x: &Matrix, y: &[f64], params: &BoostParams) -> Result<Self, TreeError> {
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
        if !(params.eta.is_finite() && params.eta > 0.0) {
            return Err(TreeError::BadParam(format!("eta must be positive, got {}", params.eta)));
        }
        if !(params.lambda.is_finite() && params.lambda >= 0.0) {
            return Err(TreeError::BadParam(format!(
                "lambda must be nonnegative, got {}",
                params.lambda
            )));
        }

        let n = x.rows();
        let base_score = y.iter().sum::<f64>() / n as f64;
        let mut predictions = vec![base_score; n];
        let mut trees = Vec::with_capacity(params.n_rounds);
        let indices: Vec<usize> = (0..n).collect();

        for _ in 0..params.n_rounds {
            let gradients: Vec<f64> = predictions.iter().zip(y).map(|(p, t)| p - t).collect();
            let tree = grow_boost_tree(x, &gradients, &indices, params, 0);
            for (i, row) in x.row_iter().enumerate() {
                predictions[i] += params.eta * tree.predict_row(row);
            }
            trees.push(tree);
        }

        Ok(Self {
            base_score,
            trees,
            eta: params.eta,
            lambda: params.lambda,
            n_features: x.cols(),
        })
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, TreeError> {
        if x.cols() != self.n_features {
            return Err(TreeError::FeatureMismatch {
                fitted: self.n_features,
                given: x.cols(),
            });
        }
        Ok(x.row_iter()
            .map(|row| {
                self.base_score
                    + self.eta
                        * self
                            .trees
                            .iter()
                            .map(|t| t.predict_row(row))
                            .sum::<f64>()
            })
            .collect())
    }
}

fn leaf_weight(grad_sum: f64, count: f64, lambda: f64) -> f64 {
    -grad_sum / (count + lambda)
}

fn grow_boost_tree(
    x: &Matrix,
    gradients: &[f64],
    indices: &[usize],
    params: &BoostParams,
    depth: usize,
) -> TreeNode {
    let g: f64 = indices.iter().map(|&i| gradients[i]).sum();
    let h = indices.len() as f64;
    let leaf = || TreeNode::Leaf {
        value: leaf_weight(g, h, params.lambda),
    };
    if indices.len() < 2 * params.min_leaf {
        return leaf();
    }
    if let Some(max_depth) = params.max_depth {
        if depth >= max_depth {
            return leaf();
        }
    }
    if indices.windows(2).all(|w| gradients[w[0]] == gradients[w[1]]) {
        return leaf();
    }

    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x.cols() {
        if let Some((gain, threshold)) =
            best_gain_split(x, gradients, indices, f, params.min_leaf, params.lambda)
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
        left: Box::new(grow_boost_tree(x, gradients, &left_idx, params, depth + 1)),
        right: Box::new(grow_boost_tree(x, gradients, &right_idx, params, depth + 1)),
    }
}

fn best_gain_split(
    x: &Matrix,
    gradients: &[f64],
    indices: &[usize],
    feature: usize,
    min_leaf: usize,
    lambda: f64,
) -> Option<(f64, f64)> {
    let n = indices.len();
    let mut pairs: Vec<(f64, f64)> = indices
        .iter()
        .map(|&i| (x.get(i, feature), gradients[i]))
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let total_g: f64 = pairs.iter().map(|p| p.1).sum();
    let total_h = n as f64;
    let parent_score = total_g * total_g / (total_h + lambda);

    let mut best: Option<(f64, f64)> = None;
    let mut left_g = 0.0;
    for i in 1..n {
        left_g += pairs[i - 1].1;
        if pairs[i].0 <= pairs[i - 1].0 {
            continue;
        }
        if i < min_leaf || n - i < min_leaf {
            continue;
        }
        let right_g = total_g - left_g;
        let (lh, rh) = (i as f64, (n - i) as f64);
        let gain =
            0.5 * (left_g * left_g / (lh + lambda) + right_g * right_g / (rh + lambda)
                - parent_score);
        // Same midpoint-rounding guard as the CART splitter: never let the
        // threshold land on the right value.
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
