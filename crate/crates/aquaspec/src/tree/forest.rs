//! Random forest regression: bagged CART trees with per-node random
//! feature subsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cart_fit, CartParams, TreeError, TreeNode};
use crate::data::Matrix;
use crate::serialize::VersionedSchema;
use crate::stream::substream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features per split; `None` means the regression default `ceil(d/3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Trees train on bootstrap resamples unless disabled.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<TreeNode>,
    n_features: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    seed: u64,
}

impl VersionedSchema for ForestModel {
    const SCHEMA: &'static str = "aquaspec.random_forest";
    const VERSION: u32 = 1;
}

impl ForestModel {
    /// Trains `n_trees` CART trees, each on its own bootstrap resample and
    /// RNG substream derived from `seed`. The result is identical for any
    /// tree evaluation order.
    pub fn fit(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<Self, TreeError> {
        if x.rows() < 2 {
            return Err(TreeError::BadParam(format!(
                "random forest needs at least 2 rows, got {}",
                x.rows()
            )));
        }
        if x.rows() != y.len() {
            return Err(TreeError::LengthMismatch {
                rows: x.rows(),
                targets: y.len(),
            });
        }
        if params.n_trees == 0 {
            return Err(TreeError::BadParam("n_trees must be at least 1".into()));
        }
        let mtry = params.mtry.unwrap_or_else(|| x.cols().div_ceil(3));
        if mtry == 0 || mtry > x.cols() {
            return Err(TreeError::BadParam(format!(
                "mtry = {mtry} out of range for {} features",
                x.cols()
            )));
        }
        let cart = CartParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry: Some(mtry),
        };
        let n = x.rows();
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(params.seed, t as u64));
                if params.bootstrap {
                    let indices: Vec<usize> =
                        (0..n).map(|_| rng.random_range(0..n)).collect();
                    let xb = x.select_rows(&indices);
                    let yb: Vec<f64> = indices.iter().map(|&i| y[i]).collect();
                    cart_fit(&xb, &yb, &cart, &mut rng)
                } else {
                    cart_fit(x, y, &cart, &mut rng)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            trees,
            n_features: x.cols(),
            mtry,
            min_leaf: params.min_leaf,
            max_depth: params.max_depth,
            seed: params.seed,
        })
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    /// Mean over the per-tree predictions.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, TreeError> {
        if x.cols() != self.n_features {
            return Err(TreeError::FeatureMismatch {
                fitted: self.n_features,
                given: x.cols(),
            });
        }
        let inv = 1.0 / self.trees.len() as f64;
        Ok(x.row_iter()
            .map(|row| {
                self.trees
                    .iter()
                    .map(|t| t.predict_row(row))
                    .sum::<f64>()
                    * inv
            })
            .collect())
    }
}
