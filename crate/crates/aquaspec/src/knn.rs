//! k-nearest-neighbor regression: brute-force Euclidean scan, unweighted
//! neighbor mean, distance ties broken by lower training-row index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::serialize::VersionedSchema;

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("k = {k} out of range for {n} training rows")]
    BadK { k: usize, n: usize },
    #[error("model trained on {fitted} features, queried with {given}")]
    FeatureMismatch { fitted: usize, given: usize },
    #[error("training rows and targets differ: {rows} vs {targets}")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("empty training set")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    train_features: Matrix,
    train_targets: Vec<f64>,
    k: usize,
}

impl VersionedSchema for KnnModel {
    const SCHEMA: &'static str = "aquaspec.knn";
    const VERSION: u32 = 1;
}

impl KnnModel {
    /// Stores the training data verbatim. Requires `1 <= k <= n`.
    pub fn fit(x: &Matrix, y: &[f64], k: usize) -> Result<Self, KnnError> {
        if x.rows() == 0 {
            return Err(KnnError::Empty);
        }
        if x.rows() != y.len() {
            return Err(KnnError::LengthMismatch {
                rows: x.rows(),
                targets: y.len(),
            });
        }
        if k == 0 || k > x.rows() {
            return Err(KnnError::BadK { k, n: x.rows() });
        }
        Ok(Self {
            train_features: x.clone(),
            train_targets: y.to_vec(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.train_features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.train_features.rows() == 0
    }

    /// Unweighted mean of the targets of the `k` nearest training rows.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, KnnError> {
        if x.cols() != self.train_features.cols() {
            return Err(KnnError::FeatureMismatch {
                fitted: self.train_features.cols(),
                given: x.cols(),
            });
        }
        Ok(x.row_iter().map(|query| self.predict_one(query)).collect())
    }

    fn predict_one(&self, query: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .train_features
            .row_iter()
            .enumerate()
            .map(|(i, row)| {
                let d2: f64 = row
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2, i)
            })
            .collect();
        // Ties on distance resolve to the lower training-row index.
        dist.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let sum: f64 = dist[..self.k]
            .iter()
            .map(|&(_, i)| self.train_targets[i])
            .sum();
        sum / self.k as f64
    }
}
