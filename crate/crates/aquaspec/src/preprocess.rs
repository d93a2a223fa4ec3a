//! The pipeline between raw spectra and model inputs: band selection,
//! per-feature standardization, and PCA.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Matrix, SampleTable};
use crate::serialize::VersionedSchema;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("band selection [{low_nm}, {high_nm}] is empty or inverted")]
    EmptyBandSelection { low_nm: f64, high_nm: f64 },
    #[error("table has no wavelength grid; band selection needs one")]
    NoGrid,
    #[error("standardizer fitted on {fitted} features, applied to {given}")]
    FeatureMismatch { fitted: usize, given: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("component count {k} out of range; must satisfy 1 <= k <= min(n-1, d) = {max}")]
    ComponentsOutOfRange { k: usize, max: usize },
    #[error("svd failed to converge")]
    SvdFailed,
}

/// Keeps only the feature columns whose wavelength lies in
/// `[low_nm, high_nm]` (inclusive). Bounds must be on the grid.
pub fn select_bands(
    table: &SampleTable,
    low_nm: f64,
    high_nm: f64,
) -> Result<SampleTable, PreprocessError> {
    let grid = table.feature_grid().ok_or(PreprocessError::NoGrid)?;
    if low_nm >= high_nm {
        return Err(PreprocessError::EmptyBandSelection { low_nm, high_nm });
    }
    let low = grid.index_of(low_nm)?;
    let high = grid.index_of(high_nm)?;
    let cols: Vec<usize> = (low..=high).collect();
    if cols.is_empty() {
        return Err(PreprocessError::EmptyBandSelection { low_nm, high_nm });
    }
    let features = table.features().select_cols(&cols);
    let new_grid =
        crate::data::WavelengthGrid::new(grid.wavelength(low), grid.step_nm(), cols.len())
            .map_err(PreprocessError::from)?;
    Ok(SampleTable::new(
        features,
        Some(new_grid),
        table.target().to_vec(),
        table.parameter(),
    )?)
}

/// Degenerate features (population stdev below this, relative to the mean's
/// magnitude) are mapped to 0 instead of being divided by a vanishing
/// stdev. Near-zero variance columns show up in practice as PCA scores of
/// rank-deficient data, where dividing would amplify rounding noise to unit
/// scale.
const DEGENERATE_STDEV_TOLERANCE: f64 = 1e-12;

/// Per-feature standardization to zero mean and unit (population) stdev.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    means: Vec<f64>,
    stdevs: Vec<f64>,
}

impl VersionedSchema for Standardizer {
    const SCHEMA: &'static str = "aquaspec.standardizer";
    const VERSION: u32 = 1;
}

impl Standardizer {
    /// Fits means and population stdevs on `x` (at least two rows).
    pub fn fit(x: &Matrix) -> Result<Self, PreprocessError> {
        if x.rows() < 2 {
            return Err(PreprocessError::TooFewRows {
                needed: 2,
                got: x.rows(),
            });
        }
        let n = x.rows() as f64;
        let d = x.cols();
        let mut means = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![0.0; d];
        for row in x.row_iter() {
            for ((v, &mean), &value) in vars.iter_mut().zip(&means).zip(row) {
                let c = value - mean;
                *v += c * c;
            }
        }
        let stdevs = vars.iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { means, stdevs })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stdevs(&self) -> &[f64] {
        &self.stdevs
    }

    fn is_degenerate(&self, feature: usize) -> bool {
        self.stdevs[feature]
            <= DEGENERATE_STDEV_TOLERANCE * self.means[feature].abs().max(1.0)
    }

    /// Applies `(x - mean) / stdev` per feature; degenerate features map
    /// to 0.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, PreprocessError> {
        if x.cols() != self.means.len() {
            return Err(PreprocessError::FeatureMismatch {
                fitted: self.means.len(),
                given: x.cols(),
            });
        }
        let degenerate: Vec<bool> = (0..x.cols()).map(|j| self.is_degenerate(j)).collect();
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let row = x.row(i);
            for j in 0..x.cols() {
                let v = if degenerate[j] {
                    0.0
                } else {
                    (row[j] - self.means[j]) / self.stdevs[j]
                };
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}

/// Fitted PCA: mean vector, orthonormal component rows, and per-component
/// explained variance under the sample (1/(n-1)) covariance convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// k x d, rows orthonormal, sorted by descending explained variance.
    components: Matrix,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

impl VersionedSchema for PcaModel {
    const SCHEMA: &'static str = "aquaspec.pca";
    const VERSION: u32 = 1;
}

impl PcaModel {
    /// Fits the top-`k` principal components of the sample covariance of
    /// `x`, via SVD of the centered matrix. Requires
    /// `1 <= k <= min(n-1, d)`.
    ///
    /// Each component's largest-magnitude entry is made positive so the
    /// output is deterministic across eigensolvers. Logs a warning when the
    /// k-th eigenvalue is below 1e-12 (rank-deficient input).
    pub fn fit(x: &Matrix, k: usize) -> Result<Self, PreprocessError> {
        let n = x.rows();
        let d = x.cols();
        if n < 2 {
            return Err(PreprocessError::TooFewRows { needed: 2, got: n });
        }
        let max_k = (n - 1).min(d);
        if k == 0 || k > max_k {
            return Err(PreprocessError::ComponentsOutOfRange { k, max: max_k });
        }

        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }

        let centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
        // trace of the sample covariance = squared Frobenius norm / (n-1)
        let total_variance = centered.norm_squared() / (n as f64 - 1.0);

        let svd = nalgebra::linalg::SVD::new(centered, false, true);
        let v_t = svd.v_t.ok_or(PreprocessError::SvdFailed)?;
        let singular = svd.singular_values;

        // nalgebra does not guarantee ordering; sort by descending singular
        // value, breaking exact ties by original index.
        let mut order: Vec<usize> = (0..singular.len()).collect();
        order.sort_by(|&a, &b| {
            singular[b]
                .partial_cmp(&singular[a])
                .unwrap()
                .then(a.cmp(&b))
        });

        let mut components = Matrix::zeros(k, d);
        let mut explained_variance = Vec::with_capacity(k);
        for (rank, &idx) in order.iter().take(k).enumerate() {
            let s = singular[idx];
            explained_variance.push(s * s / (n as f64 - 1.0));
            let row: Vec<f64> = (0..d).map(|j| v_t[(idx, j)]).collect();
            // Sign convention: largest-magnitude entry positive.
            let lead = row
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.abs()
                        .partial_cmp(&b.abs())
                        .unwrap()
                        .then(ib.cmp(ia))
                })
                .map(|(_, &v)| v)
                .unwrap_or(1.0);
            let flip = if lead < 0.0 { -1.0 } else { 1.0 };
            for (j, v) in row.into_iter().enumerate() {
                components.set(rank, j, flip * v);
            }
        }

        if explained_variance[k - 1] < 1e-12 {
            log::warn!(
                "pca: rank-deficient input, eigenvalue {} of component {k} is below 1e-12",
                explained_variance[k - 1]
            );
        }

        Ok(Self {
            mean,
            components,
            explained_variance,
            total_variance,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn n_features(&self) -> usize {
        self.components.cols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Projects `x` (centered by the fitted mean) onto the component rows;
    /// returns an `n x k` score matrix.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix, PreprocessError> {
        let d = self.n_features();
        if x.cols() != d {
            return Err(PreprocessError::FeatureMismatch {
                fitted: d,
                given: x.cols(),
            });
        }
        let k = self.n_components();
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            let row = x.row(i);
            for c in 0..k {
                let comp = self.components.row(c);
                let mut dot = 0.0;
                for j in 0..d {
                    dot += (row[j] - self.mean[j]) * comp[j];
                }
                out.set(i, c, dot);
            }
        }
        Ok(out)
    }

    /// Maps scores back to feature space: `mean + scores * components`.
    pub fn inverse_transform(&self, scores: &Matrix) -> Result<Matrix, PreprocessError> {
        let k = self.n_components();
        if scores.cols() != k {
            return Err(PreprocessError::FeatureMismatch {
                fitted: k,
                given: scores.cols(),
            });
        }
        let d = self.n_features();
        let mut out = Matrix::zeros(scores.rows(), d);
        for i in 0..scores.rows() {
            let s = scores.row(i);
            for j in 0..d {
                let mut v = self.mean[j];
                for c in 0..k {
                    v += s[c] * self.components.get(c, j);
                }
                out.set(i, j, v);
            }
        }
        Ok(out)
    }

    /// Fraction of total variance explained by each component, in [0, 1].
    pub fn variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|&v| v / self.total_variance)
            .collect()
    }

    /// Cumulative variance ratio of all fitted components.
    pub fn cumulative_variance_ratio(&self) -> f64 {
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    /// Smallest component count whose cumulative variance ratio reaches
    /// `threshold`; returns `n_components()` if none does.
    pub fn components_for_ratio(&self, threshold: f64) -> usize {
        let mut acc = 0.0;
        for (i, &v) in self.explained_variance.iter().enumerate() {
            acc += v / self.total_variance;
            if acc >= threshold {
                return i + 1;
            }
        }
        self.n_components()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ParameterKind, WavelengthGrid};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sensor_table() -> SampleTable {
        let grid = WavelengthGrid::new(450.0, 4.0, 125).unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..125).map(|c| (r * 125 + c) as f64).collect())
            .collect();
        SampleTable::new(
            Matrix::from_rows(&rows).unwrap(),
            Some(grid),
            vec![1.0, 2.0, 3.0],
            ParameterKind::Cdom,
        )
        .unwrap()
    }

    #[test]
    fn select_bands_matches_hand_count() {
        let table = sensor_table();
        let cut = select_bands(&table, 470.0, 910.0).unwrap();
        // (910 - 470) / 4 + 1
        assert_eq!(cut.features().cols(), 111);
        assert_eq!(cut.feature_grid().unwrap().start_nm(), 470.0);
        assert_eq!(cut.feature_grid().unwrap().count(), 111);
        // Row count and order preserved; column 0 is the old column 5.
        assert_eq!(cut.len(), 3);
        assert_eq!(cut.features().get(1, 0), table.features().get(1, 5));
    }

    #[test]
    fn select_bands_full_range_is_identity() {
        let table = sensor_table();
        let cut = select_bands(&table, 450.0, 946.0).unwrap();
        assert_eq!(cut, table);
    }

    #[test]
    fn select_bands_rejects_bad_bounds() {
        let table = sensor_table();
        assert!(matches!(
            select_bands(&table, 470.0, 468.0),
            Err(PreprocessError::EmptyBandSelection { .. })
        ));
        assert!(select_bands(&table, 471.0, 910.0).is_err());
    }

    #[test]
    fn standardizer_hand_example() {
        let x = Matrix::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.means(), &[1.0]);
        assert_eq!(s.stdevs(), &[1.0]); // population stdev
        let t = s.apply(&x).unwrap();
        assert_eq!(t.column(0), vec![-1.0, 1.0]);
    }

    #[test]
    fn standardizer_constant_column_maps_to_zero() {
        let x = Matrix::from_vec(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let t = s.apply(&x).unwrap();
        assert_eq!(t.column(0), vec![0.0, 0.0, 0.0]);
        assert!(t.column(1).iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn standardizer_centers_fitting_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..9.0)).collect();
        let x = Matrix::from_vec(50, 4, data).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let t = s.apply(&x).unwrap();
        for j in 0..4 {
            let col = t.column(j);
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-10, "column {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "column {j} var {var}");
        }
    }

    #[test]
    fn standardizer_rejects_width_mismatch() {
        let x = Matrix::zeros(3, 2);
        let s = Standardizer::fit(&x).unwrap();
        assert!(s.apply(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn pca_one_dimensional_data() {
        // Points on a line through varying coordinate 0.
        let x = Matrix::from_vec(4, 3, vec![
            0.0, 1.0, 2.0,
            1.0, 1.0, 2.0,
            2.0, 1.0, 2.0,
            3.0, 1.0, 2.0,
        ])
        .unwrap();
        let model = PcaModel::fit(&x, 2).unwrap();
        let comp0 = model.components().row(0);
        assert!((comp0[0].abs() - 1.0).abs() < 1e-10);
        assert!(comp0[1].abs() < 1e-10 && comp0[2].abs() < 1e-10);
        // Sign convention puts the dominant entry positive.
        assert!(comp0[0] > 0.0);
        let ratios = model.variance_ratio();
        assert!((ratios[0] - 1.0).abs() < 1e-10);
        // Second score coordinate vanishes on rank-1 data.
        let scores = model.transform(&x).unwrap();
        for i in 0..4 {
            assert!(scores.get(i, 1).abs() < 1e-8);
        }
    }

    #[test]
    fn pca_full_rank_completeness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(12, 5, data).unwrap();
        let model = PcaModel::fit(&x, 5).unwrap();
        let sum: f64 = model.explained_variance().iter().sum();
        assert!((sum - model.total_variance()).abs() < 1e-8);
        for pair in model.explained_variance().windows(2) {
            assert!(pair[0] >= pair[1], "explained variance not descending");
        }
        let ratios = model.variance_ratio();
        assert!(ratios.iter().sum::<f64>() <= 1.0 + 1e-8);
        assert!(ratios.iter().all(|&r| (0.0..=1.0 + 1e-12).contains(&r)));
    }

    #[test]
    fn pca_transform_of_mean_is_zero() {
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 5.0, 5.0, 8.0]).unwrap();
        let model = PcaModel::fit(&x, 2).unwrap();
        let mean_row = Matrix::from_vec(1, 2, model.mean().to_vec()).unwrap();
        let scores = model.transform(&mean_row).unwrap();
        assert!(scores.get(0, 0).abs() < 1e-12);
        assert!(scores.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn pca_reconstruction_with_full_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..80).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_vec(20, 4, data).unwrap();
        let model = PcaModel::fit(&x, 4).unwrap();
        let back = model.inverse_transform(&model.transform(&x).unwrap()).unwrap();
        for i in 0..20 {
            for j in 0..4 {
                assert!((back.get(i, j) - x.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(30, 3, data.clone()).unwrap();
        let shifted = Matrix::from_vec(
            30,
            3,
            data.iter()
                .enumerate()
                .map(|(i, v)| v + [10.0, -4.0, 2.5][i % 3])
                .collect(),
        )
        .unwrap();
        let a = PcaModel::fit(&x, 3).unwrap();
        let b = PcaModel::fit(&shifted, 3).unwrap();
        for c in 0..3 {
            for j in 0..3 {
                assert!((a.components().get(c, j) - b.components().get(c, j)).abs() < 1e-10);
            }
            assert!((a.explained_variance()[c] - b.explained_variance()[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn pca_scores_uncorrelated_on_fit_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(50, 6, data).unwrap();
        let model = PcaModel::fit(&x, 4).unwrap();
        let s = model.transform(&x).unwrap();
        let leading = model.explained_variance()[0];
        for a in 0..4 {
            for b in (a + 1)..4 {
                let ca = s.column(a);
                let cb = s.column(b);
                let ma = ca.iter().sum::<f64>() / 50.0;
                let mb = cb.iter().sum::<f64>() / 50.0;
                let cov: f64 = ca
                    .iter()
                    .zip(&cb)
                    .map(|(&u, &v)| (u - ma) * (v - mb))
                    .sum::<f64>()
                    / 49.0;
                assert!(cov.abs() < 1e-8 * leading, "cov({a},{b}) = {cov}");
            }
        }
    }

    #[test]
    fn pca_components_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(40, 5, data).unwrap();
        let model = PcaModel::fit(&x, 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = model
                    .components()
                    .row(a)
                    .iter()
                    .zip(model.components().row(b))
                    .map(|(u, v)| u * v)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn standardize_then_pca_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let data: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..5.0)).collect();
        let x = Matrix::from_vec(80, 5, data).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let xs = s.apply(&x).unwrap();
        // Fitting PCA on the standardized matrix directly equals running it
        // as a pipeline step.
        let direct = PcaModel::fit(&xs, 3).unwrap();
        let pipeline_scores = direct.transform(&s.apply(&x).unwrap()).unwrap();
        let direct_scores = direct.transform(&xs).unwrap();
        assert_eq!(pipeline_scores, direct_scores);
    }

    #[test]
    fn pca_rejects_bad_k() {
        let x = Matrix::zeros(5, 3);
        assert!(matches!(
            PcaModel::fit(&x, 0),
            Err(PreprocessError::ComponentsOutOfRange { .. })
        ));
        assert!(matches!(
            PcaModel::fit(&x, 4),
            Err(PreprocessError::ComponentsOutOfRange { .. })
        ));
        // k = n-1 = 4 exceeds d = 3; max is min(n-1, d).
        let x = Matrix::zeros(3, 5);
        assert!(PcaModel::fit(&x, 2).is_ok());
        assert!(PcaModel::fit(&x, 3).is_err());
    }

    #[test]
    fn isotropic_two_dim_ratios_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(2000, 2, data).unwrap();
        let model = PcaModel::fit(&x, 2).unwrap();
        let ratios = model.variance_ratio();
        // Isotropic generator: both ratios near 0.5 within sampling noise.
        assert!((ratios[0] - 0.5).abs() < 0.05, "{ratios:?}");
        assert!((ratios[1] - 0.5).abs() < 0.05, "{ratios:?}");
    }

    #[test]
    fn pca_and_standardizer_json_round_trip() {
        use crate::serialize::{from_versioned_json, to_versioned_json};
        let x = Matrix::from_vec(4, 2, vec![1.0, 2.0, 3.0, 5.0, 4.0, 4.0, 8.0, 1.0]).unwrap();
        let model = PcaModel::fit(&x, 2).unwrap();
        let json = to_versioned_json(&model);
        let back: PcaModel = from_versioned_json(&json).unwrap();
        assert_eq!(model, back);

        let s = Standardizer::fit(&x).unwrap();
        let json = to_versioned_json(&s);
        let back: Standardizer = from_versioned_json(&json).unwrap();
        assert_eq!(s, back);
    }
}
