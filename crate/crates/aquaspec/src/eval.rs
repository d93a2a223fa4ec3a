//! Experimental protocol: stratified 3:7 train/test split, per-model
//! scaling rules, an optional PCA arm, cross-validated hyperparameter
//! selection, and per-cell R^2 / RMSE reporting.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Matrix, Metrics, ParameterKind, SampleTable};
use crate::knn::KnnModel;
use crate::mars::{mars_fit, MarsModel, MarsParams};
use crate::preprocess::{PcaModel, Standardizer};
use crate::stream::substream_seed;
use crate::svr::{svr_fit, SvrModel, SvrParams};
use crate::tree::boost::{BoostModel, BoostParams};
use crate::tree::forest::{ForestModel, ForestParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("vectors of length {a} and {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("R^2 undefined: test targets have zero variance")]
    ConstantTargets,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("{0}")]
    Model(String),
}

// ---------------------------------------------------------------------------
// Stratified splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of rows assigned to the training subset (3:7 -> 0.3).
    pub train_fraction: f64,
    /// Equal-frequency target bins used for stratification.
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.3,
            n_bins: 10,
            seed: 0,
        }
    }
}

/// Row indices of one train/test split; both sides ascending, disjoint and
/// exhaustive.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of `targets`: rows are ranked by target value, cut
/// into `n_bins` equal-frequency bins, and each bin contributes
/// `round(train_fraction * bin_size)` randomly chosen rows to the training
/// side. The realized train count therefore stays within `n_bins/2` of
/// `round(train_fraction * n)` while every target region is represented.
pub fn stratified_indices(
    targets: &[f64],
    config: &SplitConfig,
) -> Result<SplitIndices, EvalError> {
    let n = targets.len();
    if n < config.n_bins || config.n_bins == 0 {
        return Err(EvalError::TooFewRows {
            needed: config.n_bins.max(1),
            got: n,
        });
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(EvalError::Model(format!(
            "train_fraction must be in (0, 1), got {}",
            config.train_fraction
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        targets[a]
            .partial_cmp(&targets[b])
            .unwrap()
            .then(a.cmp(&b))
    });

    let base = n / config.n_bins;
    let remainder = n % config.n_bins;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut cursor = 0;
    for bin in 0..config.n_bins {
        let size = base + usize::from(bin < remainder);
        let mut members: Vec<usize> = order[cursor..cursor + size].to_vec();
        cursor += size;
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, bin as u64));
        members.shuffle(&mut rng);
        let k = (config.train_fraction * size as f64).round() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Table-level stratified split.
pub fn split_stratified(
    table: &SampleTable,
    config: &SplitConfig,
) -> Result<(SampleTable, SampleTable), EvalError> {
    let idx = stratified_indices(table.target(), config)?;
    Ok((table.select_rows(&idx.train), table.select_rows(&idx.test)))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<(), EvalError> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch {
            a: y.len(),
            b: yhat.len(),
        });
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot` about the mean of
/// `y`. May be negative; errors when `y` is constant.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantTargets);
    }
    let ss_res: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root mean squared error, in the target's unit.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, yhat)?;
    let mse = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

/// Squared Pearson correlation, for comparison with tools that report it
/// as "R^2". `None` when either side is constant.
pub fn pearson_r_squared(y: &[f64], yhat: &[f64]) -> Option<f64> {
    if y.is_empty() || y.len() != yhat.len() {
        return None;
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = yhat.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vp = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        cov += (a - my) * (b - mp);
        vy += (a - my) * (a - my);
        vp += (b - mp) * (b - mp);
    }
    if vy == 0.0 || vp == 0.0 {
        return None;
    }
    Some(cov * cov / (vy * vp))
}

// ---------------------------------------------------------------------------
// Models and hyperparameter grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Knn,
    RandomForest,
    Svm,
    Mars,
    Xgb,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Knn,
        ModelKind::RandomForest,
        ModelKind::Svm,
        ModelKind::Mars,
        ModelKind::Xgb,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::RandomForest => "rf",
            ModelKind::Svm => "svm",
            ModelKind::Mars => "mars",
            ModelKind::Xgb => "xgb",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key)
    }

    /// Feature scaling applies to k-NN, SVM and MARS; the tree ensembles
    /// are split-point invariant and run unscaled.
    pub fn needs_scaling(&self) -> bool {
        matches!(self, ModelKind::Knn | ModelKind::Svm | ModelKind::Mars)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperParams {
    Knn { k: usize },
    RandomForest,
    /// `gamma = gamma_scale / d` at fit time.
    Svm { c: f64, gamma_scale: f64 },
    Mars { max_terms: usize },
    Xgb,
}

impl HyperParams {
    pub fn describe(&self) -> String {
        match self {
            HyperParams::Knn { k } => format!("k={k}"),
            HyperParams::RandomForest => "defaults".into(),
            HyperParams::Svm { c, gamma_scale } => format!("C={c};gamma={gamma_scale}/d"),
            HyperParams::Mars { max_terms } => format!("max_terms={max_terms}"),
            HyperParams::Xgb => "defaults".into(),
        }
    }
}

/// Default hyperparameter grid per model. RF and XGB run at fixed
/// defaults; tuning them is outside the harness budget.
pub fn default_grid(model: ModelKind) -> Vec<HyperParams> {
    match model {
        ModelKind::Knn => [3, 5, 7, 9].map(|k| HyperParams::Knn { k }).to_vec(),
        ModelKind::RandomForest => vec![HyperParams::RandomForest],
        ModelKind::Svm => {
            let mut grid = Vec::new();
            for c in [0.1, 1.0, 10.0] {
                for gamma_scale in [0.1, 1.0, 10.0] {
                    grid.push(HyperParams::Svm { c, gamma_scale });
                }
            }
            grid
        }
        ModelKind::Mars => [11, 21]
            .map(|max_terms| HyperParams::Mars { max_terms })
            .to_vec(),
        ModelKind::Xgb => vec![HyperParams::Xgb],
    }
}

enum FittedModel {
    Knn(KnnModel),
    Forest(ForestModel),
    /// SVR trains on standardized targets (the cited implementation's
    /// default for regression); predictions are mapped back.
    Svr {
        model: SvrModel,
        y_mean: f64,
        y_sd: f64,
    },
    Mars(MarsModel),
    Boost(BoostModel),
}

impl FittedModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>, EvalError> {
        match self {
            FittedModel::Knn(m) => m.predict(x).map_err(|e| EvalError::Model(e.to_string())),
            FittedModel::Forest(m) => m.predict(x).map_err(|e| EvalError::Model(e.to_string())),
            FittedModel::Svr { model, y_mean, y_sd } => Ok(model
                .predict(x)
                .map_err(|e| EvalError::Model(e.to_string()))?
                .into_iter()
                .map(|v| v * y_sd + y_mean)
                .collect()),
            FittedModel::Mars(m) => m.predict(x).map_err(|e| EvalError::Model(e.to_string())),
            FittedModel::Boost(m) => m.predict(x).map_err(|e| EvalError::Model(e.to_string())),
        }
    }
}

fn train_model(
    hp: &HyperParams,
    x: &Matrix,
    y: &[f64],
    seed: u64,
) -> Result<FittedModel, EvalError> {
    let to_eval = |e: String| EvalError::Model(e);
    match *hp {
        HyperParams::Knn { k } => Ok(FittedModel::Knn(
            KnnModel::fit(x, y, k).map_err(|e| to_eval(e.to_string()))?,
        )),
        HyperParams::RandomForest => {
            let params = ForestParams {
                seed,
                ..ForestParams::default()
            };
            Ok(FittedModel::Forest(
                ForestModel::fit(x, y, &params).map_err(|e| to_eval(e.to_string()))?,
            ))
        }
        HyperParams::Svm { c, gamma_scale } => {
            let n = y.len() as f64;
            let y_mean = y.iter().sum::<f64>() / n;
            let sd = (y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n).sqrt();
            let y_sd = if sd > 0.0 { sd } else { 1.0 };
            let scaled: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_sd).collect();
            let params = SvrParams {
                c,
                gamma: Some(gamma_scale / x.cols() as f64),
                ..SvrParams::default()
            };
            let outcome = svr_fit(x, &scaled, &params).map_err(|e| to_eval(e.to_string()))?;
            if !outcome.converged {
                log::warn!(
                    "svr stopped at KKT violation {} after {} iterations",
                    outcome.kkt_violation,
                    outcome.iterations
                );
            }
            Ok(FittedModel::Svr {
                model: outcome.model,
                y_mean,
                y_sd,
            })
        }
        HyperParams::Mars { max_terms } => {
            let params = MarsParams {
                max_terms,
                ..MarsParams::default()
            };
            Ok(FittedModel::Mars(
                mars_fit(x, y, &params).map_err(|e| to_eval(e.to_string()))?,
            ))
        }
        HyperParams::Xgb => Ok(FittedModel::Boost(
            BoostModel::fit(x, y, &BoostParams::default()).map_err(|e| to_eval(e.to_string()))?,
        )),
    }
}

// ---------------------------------------------------------------------------
// Cross-validated selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub chosen: HyperParams,
    /// Mean fold RMSE per grid entry, in grid order. Empty for singleton
    /// grids, which skip cross-validation entirely.
    pub scores: Vec<(HyperParams, f64)>,
}

/// Grid search minimizing mean fold RMSE with deterministic seeded fold
/// assignment. Ties keep the earliest grid entry.
pub fn cv_select(
    x: &Matrix,
    y: &[f64],
    grid: &[HyperParams],
    folds: usize,
    seed: u64,
) -> Result<CvOutcome, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if grid.len() == 1 {
        return Ok(CvOutcome {
            chosen: grid[0],
            scores: vec![],
        });
    }
    let n = x.rows();
    if n < folds || folds < 2 {
        return Err(EvalError::TooFewRows {
            needed: folds.max(2),
            got: n,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, 0xC5));
    order.shuffle(&mut rng);

    let mut scores = Vec::with_capacity(grid.len());
    for (gi, hp) in grid.iter().enumerate() {
        let mut total = 0.0;
        for fold in 0..folds {
            let mut train_idx = Vec::new();
            let mut valid_idx = Vec::new();
            for (pos, &row) in order.iter().enumerate() {
                if pos % folds == fold {
                    valid_idx.push(row);
                } else {
                    train_idx.push(row);
                }
            }
            let xt = x.select_rows(&train_idx);
            let yt: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
            let xv = x.select_rows(&valid_idx);
            let yv: Vec<f64> = valid_idx.iter().map(|&i| y[i]).collect();
            let model =
                train_model(hp, &xt, &yt, substream_seed(seed, (gi * folds + fold) as u64))?;
            let pred = model.predict(&xv)?;
            total += rmse(&yv, &pred)?;
        }
        scores.push((*hp, total / folds as f64));
    }

    let mut best = 0;
    for (i, entry) in scores.iter().enumerate().skip(1) {
        if entry.1 < scores[best].1 {
            best = i;
        }
    }
    Ok(CvOutcome {
        chosen: scores[best].0,
        scores,
    })
}

// ---------------------------------------------------------------------------
// Framework run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    RawBands,
    Pca,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::RawBands, Arm::Pca];

    pub fn key(&self) -> &'static str {
        match self {
            Arm::RawBands => "raw",
            Arm::Pca => "pca",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.key() == key)
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// One requested (model, arm) combination with its tuning grid.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub model: ModelKind,
    pub arm: Arm,
    /// PCA components kept in the PCA arm.
    pub pca_components: usize,
    pub grid: Vec<HyperParams>,
    pub cv_folds: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(model: ModelKind, arm: Arm, seed: u64) -> Self {
        Self {
            model,
            arm,
            pca_components: 8,
            grid: default_grid(model),
            cv_folds: 5,
            seed,
        }
    }

    /// The full 5-model x 2-arm grid at defaults.
    pub fn full_grid(seed: u64) -> Vec<RunSpec> {
        let mut specs = Vec::new();
        for model in ModelKind::ALL {
            for arm in Arm::ALL {
                specs.push(RunSpec::new(model, arm, seed));
            }
        }
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub parameter: ParameterKind,
    pub model: ModelKind,
    pub arm: Arm,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub metrics: Metrics,
    pub pearson_r2: Option<f64>,
    pub hyperparams: String,
    pub pca_cumulative_variance: Option<f64>,
    pub seconds: f64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub outcome: Result<CellOutcome, String>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub cells: Vec<CellResult>,
}

impl EvalReport {
    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(|c| c.outcome.is_err())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&CellKey, &String)> {
        self.cells
            .iter()
            .filter_map(|c| c.outcome.as_ref().err().map(|e| (&c.key, e)))
    }

    pub fn cell(
        &self,
        parameter: ParameterKind,
        model: ModelKind,
        arm: Arm,
    ) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.key.parameter == parameter && c.key.model == model && c.key.arm == arm
        })
    }

    /// Report CSV: one row per successful cell. Wall-clock timings are
    /// written only when `include_timing` is set, because they would break
    /// byte-for-byte reproducibility of reruns; the default emits `0.000`.
    pub fn to_csv(&self, include_timing: bool) -> String {
        let mut out = String::from(
            "parameter,model,arm,r2_percent,rmse,unit,hyperparams,pca_cumvar,seconds\n",
        );
        for cell in &self.cells {
            let Ok(o) = &cell.outcome else {
                continue;
            };
            let cumvar = o
                .pca_cumulative_variance
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            let seconds = if include_timing { o.seconds } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{:.2},{:.4},{},{},{},{seconds:.3}\n",
                cell.key.parameter,
                cell.key.model,
                cell.key.arm,
                100.0 * o.metrics.r_squared,
                o.metrics.rmse,
                cell.key.parameter.unit(),
                o.hyperparams,
                cumvar,
            ));
        }
        out
    }
}

fn matrix_checksum(m: &Matrix) -> u64 {
    let mut h = DefaultHasher::new();
    m.rows().hash(&mut h);
    m.cols().hash(&mut h);
    for v in m.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Fits the preprocessing chain on the training features only and applies
/// it to both sides. Returns the transformed matrices plus the PCA
/// cumulative variance ratio when the PCA arm is active.
///
/// `train_checksum` is the checksum of the split's training partition; it
/// pins the matrix every statistic is fitted on to exactly that
/// partition, so a refactor routing the wrong matrix here fails loudly.
fn preprocess_cell(
    spec: &RunSpec,
    train_x: &Matrix,
    test_x: &Matrix,
    train_checksum: u64,
) -> Result<(Matrix, Matrix, Option<f64>), EvalError> {
    let to_eval = |e: String| EvalError::Model(e);
    assert_eq!(
        matrix_checksum(train_x),
        train_checksum,
        "preprocessing input is not the training partition"
    );

    let (mut train_p, mut test_p, cumvar) = match spec.arm {
        Arm::RawBands => (train_x.clone(), test_x.clone(), None),
        Arm::Pca => {
            let pca = PcaModel::fit(train_x, spec.pca_components)
                .map_err(|e| to_eval(e.to_string()))?;
            let cumvar = pca.cumulative_variance_ratio();
            (
                pca.transform(train_x).map_err(|e| to_eval(e.to_string()))?,
                pca.transform(test_x).map_err(|e| to_eval(e.to_string()))?,
                Some(cumvar),
            )
        }
    };

    if spec.model.needs_scaling() {
        let scaler = Standardizer::fit(&train_p).map_err(|e| to_eval(e.to_string()))?;
        train_p = scaler.apply(&train_p).map_err(|e| to_eval(e.to_string()))?;
        test_p = scaler.apply(&test_p).map_err(|e| to_eval(e.to_string()))?;
    }
    Ok((train_p, test_p, cumvar))
}

fn run_cell(
    spec: &RunSpec,
    train: &SampleTable,
    test: &SampleTable,
) -> Result<CellOutcome, EvalError> {
    let started = Instant::now();
    let train_checksum = matrix_checksum(train.features());
    let (train_x, test_x, cumvar) =
        preprocess_cell(spec, train.features(), test.features(), train_checksum)?;

    let cv = cv_select(&train_x, train.target(), &spec.grid, spec.cv_folds, spec.seed)?;
    let model = train_model(&cv.chosen, &train_x, train.target(), spec.seed)?;
    let pred = model.predict(&test_x)?;
    let metrics = Metrics {
        r_squared: r_squared(test.target(), &pred)?,
        rmse: rmse(test.target(), &pred)?,
    };
    Ok(CellOutcome {
        metrics,
        pearson_r2: pearson_r_squared(test.target(), &pred),
        hyperparams: cv.chosen.describe(),
        pca_cumulative_variance: cumvar,
        seconds: started.elapsed().as_secs_f64(),
        train_size: train.len(),
        test_size: test.len(),
    })
}

/// Runs every requested (parameter, model, arm) cell. Each parameter gets
/// one split (derived from `split.seed` and the parameter's position),
/// shared across all its models for comparability. Preprocessing fits on
/// the training side only. A failing cell is recorded with its error;
/// remaining cells still run.
pub fn run_framework(
    tables: &[SampleTable],
    specs: &[RunSpec],
    split: &SplitConfig,
) -> Result<EvalReport, EvalError> {
    let mut jobs = Vec::new();
    for (pi, table) in tables.iter().enumerate() {
        table
            .validate()
            .map_err(|e| EvalError::Model(e.to_string()))?;
        let config = SplitConfig {
            seed: substream_seed(split.seed, pi as u64),
            ..*split
        };
        let (train, test) = split_stratified(table, &config)?;
        for spec in specs {
            jobs.push((table.parameter(), spec.clone(), train.clone(), test.clone()));
        }
    }

    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|(parameter, spec, train, test)| CellResult {
            key: CellKey {
                parameter: *parameter,
                model: spec.model,
                arm: spec.arm,
            },
            outcome: run_cell(spec, train, test).map_err(|e| e.to_string()),
        })
        .collect();

    Ok(EvalReport { cells })
}

// ---------------------------------------------------------------------------
// Histograms and charts
// ---------------------------------------------------------------------------

/// Equal-width bin counts of `values` over `[lo, hi]`; the top edge is
/// inclusive.
pub fn histogram_counts(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<usize> {
    let mut counts = vec![0; n_bins];
    if !(hi > lo) || n_bins == 0 {
        return counts;
    }
    let width = (hi - lo) / n_bins as f64;
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let bin = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    counts
}

/// Hand-rolled grouped bar chart of R^2 percentages, two bars (raw, PCA)
/// per model. `entries` supply `(label, raw_r2_percent, pca_r2_percent)`;
/// negative values are drawn as empty bars with their numeric label.
pub fn r2_bar_chart(title: &str, entries: &[(String, Option<f64>, Option<f64>)]) -> String {
    let width = 640.0;
    let height = 360.0;
    let margin_left = 50.0;
    let margin_bottom = 40.0;
    let margin_top = 36.0;
    let plot_w = width - margin_left - 20.0;
    let plot_h = height - margin_top - margin_bottom;
    let baseline_y = height - margin_bottom;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        margin_left + plot_w / 2.0
    ));
    for tick in 0..=5 {
        let frac = tick as f64 / 5.0;
        let y = baseline_y - frac * plot_h;
        svg.push_str(&format!(
            "  <line x1=\"{margin_left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            margin_left + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            margin_left - 6.0,
            y + 3.0,
            (frac * 100.0).round()
        ));
    }
    svg.push_str(&format!(
        "  <line x1=\"{margin_left}\" y1=\"{baseline_y}\" x2=\"{:.1}\" y2=\"{baseline_y}\" stroke=\"#444\"/>\n",
        margin_left + plot_w
    ));

    let group_w = plot_w / entries.len().max(1) as f64;
    let bar_w = group_w * 0.32;
    for (i, (label, raw, pca)) in entries.iter().enumerate() {
        let x0 = margin_left + i as f64 * group_w;
        for (slot, (value, color)) in [(raw, "#4878a8"), (pca, "#d88546")].iter().enumerate() {
            let bx = x0 + group_w * 0.15 + slot as f64 * bar_w;
            if let Some(v) = value {
                let clipped = v.clamp(0.0, 100.0);
                let bh = clipped / 100.0 * plot_h;
                svg.push_str(&format!(
                    "  <rect x=\"{bx:.1}\" y=\"{:.1}\" width=\"{bar_w:.1}\" height=\"{bh:.1}\" fill=\"{color}\"/>\n",
                    baseline_y - bh
                ));
                svg.push_str(&format!(
                    "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{v:.1}</text>\n",
                    bx + bar_w / 2.0,
                    baseline_y - bh - 3.0
                ));
            }
        }
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            x0 + group_w / 2.0,
            baseline_y + 16.0
        ));
    }
    svg.push_str(&format!(
        "  <rect x=\"{margin_left}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"#4878a8\"/>\n",
        margin_top - 14.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">raw bands</text>\n",
        margin_left + 14.0,
        margin_top - 5.0
    ));
    svg.push_str(&format!(
        "  <rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"#d88546\"/>\n",
        margin_left + 90.0,
        margin_top - 14.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">with PCA</text>\n",
        margin_left + 104.0,
        margin_top - 5.0
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::WavelengthGrid;
    use rand::Rng;

    fn m(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn split_sizes_for_paper_scale_dataset() {
        let targets: Vec<f64> = (0..1163).map(|i| (i as f64 * 0.73).sin() * 50.0).collect();
        let config = SplitConfig {
            seed: 9,
            ..SplitConfig::default()
        };
        let split = stratified_indices(&targets, &config).unwrap();
        let train = split.train.len() as i64;
        assert!((train - 349).abs() <= 10, "train size {train}");
        assert_eq!(split.train.len() + split.test.len(), 1163);
    }

    #[test]
    fn split_is_deterministic_and_partitioning() {
        let targets: Vec<f64> = (0..200).map(|i| ((i * 37) % 83) as f64).collect();
        let config = SplitConfig {
            seed: 4,
            ..SplitConfig::default()
        };
        let a = stratified_indices(&targets, &config).unwrap();
        let b = stratified_indices(&targets, &config).unwrap();
        assert_eq!(a, b);

        let mut seen = [false; 200];
        for &i in a.train.iter().chain(&a.test) {
            assert!(!seen[i], "row {i} assigned twice");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));

        let c = stratified_indices(
            &targets,
            &SplitConfig {
                seed: 5,
                ..SplitConfig::default()
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_per_bin_fraction_is_tight() {
        let targets: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let config = SplitConfig {
            seed: 1,
            ..SplitConfig::default()
        };
        let split = stratified_indices(&targets, &config).unwrap();
        // Sorted targets mean bin b covers rows [50b, 50b+50).
        for bin in 0..10 {
            let lo = bin * 50;
            let hi = lo + 50;
            let in_bin = split
                .train
                .iter()
                .filter(|&&i| i >= lo && i < hi)
                .count() as f64;
            let fraction = in_bin / 50.0;
            assert!((fraction - 0.3).abs() <= 2.0 / 50.0, "bin {bin}: {fraction}");
        }
    }

    #[test]
    fn split_rejects_tiny_inputs() {
        let targets = vec![1.0; 5];
        assert!(matches!(
            stratified_indices(&targets, &SplitConfig::default()),
            Err(EvalError::TooFewRows { .. })
        ));
    }

    #[test]
    fn metric_hand_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(rmse(&y, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        // Hand computation: SS_res = 2, SS_tot = 2. A constant prediction
        // at the test mean scores exactly zero.
        let y = [0.0, 2.0];
        assert_eq!(rmse(&y, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[1.0, 1.0]).unwrap(), 0.0);
        // Negative R^2: SS_res = 4 over SS_tot = 2, worse than the mean.
        assert_eq!(r_squared(&y, &[2.0, 2.0]).unwrap(), -1.0);
        assert_eq!(rmse(&y, &[2.0, 2.0]).unwrap(), 2.0f64.sqrt());
        // Constant targets are an explicit error.
        assert!(matches!(
            r_squared(&[2.0, 2.0], &[1.0, 3.0]),
            Err(EvalError::ConstantTargets)
        ));
    }

    #[test]
    fn metrics_match_naive_reference_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(2..50);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mean = y.iter().sum::<f64>() / n as f64;
            let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            if ss_tot == 0.0 {
                continue;
            }
            let ss_res: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            let naive_r2 = 1.0 - ss_res / ss_tot;
            let naive_rmse = (ss_res / n as f64).sqrt();
            assert!((r_squared(&y, &p).unwrap() - naive_r2).abs() < 1e-12);
            assert!((rmse(&y, &p).unwrap() - naive_rmse).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_differs_from_r2_on_biased_predictor() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let shifted: Vec<f64> = y.iter().map(|v| v + 10.0).collect();
        assert!((pearson_r_squared(&y, &shifted).unwrap() - 1.0).abs() < 1e-12);
        assert!(r_squared(&y, &shifted).unwrap() < 0.0);
        assert_eq!(pearson_r_squared(&y, &[5.0, 5.0, 5.0, 5.0]), None);
    }

    fn knn_friendly() -> (Matrix, Vec<f64>) {
        // Smooth 1-D function: small k should win.
        let n = 60;
        let x = m(n, 1, (0..n).map(|i| i as f64 / 10.0).collect());
        let y = (0..n).map(|i| (i as f64 / 10.0).sin() * 3.0).collect();
        (x, y)
    }

    #[test]
    fn cv_singleton_grid_short_circuits() {
        let (x, y) = knn_friendly();
        let outcome = cv_select(&x, &y, &[HyperParams::Xgb], 5, 3).unwrap();
        assert!(matches!(outcome.chosen, HyperParams::Xgb));
        assert!(outcome.scores.is_empty());
    }

    #[test]
    fn cv_chooses_argmin_and_is_deterministic() {
        let (x, y) = knn_friendly();
        let grid = default_grid(ModelKind::Knn);
        let a = cv_select(&x, &y, &grid, 5, 7).unwrap();
        let b = cv_select(&x, &y, &grid, 5, 7).unwrap();
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.scores.len(), grid.len());
        let chosen_score = a.scores.iter().find(|(hp, _)| *hp == a.chosen).unwrap().1;
        for (_, score) in &a.scores {
            assert!(chosen_score <= *score);
        }
    }

    #[test]
    fn cv_rejects_empty_grid() {
        let (x, y) = knn_friendly();
        assert!(matches!(
            cv_select(&x, &y, &[], 5, 0),
            Err(EvalError::EmptyGrid)
        ));
    }

    fn tiny_table(n: usize, seed: u64) -> SampleTable {
        let config = crate::synth::GenConfig {
            noise_sd: 0.01,
            ..crate::synth::GenConfig::new(seed)
        };
        let data = crate::synth::generate_dataset(n, &config).unwrap();
        let table = data.table(ParameterKind::Cdom).clone();
        crate::preprocess::select_bands(&table, 470.0, 910.0).unwrap()
    }

    fn quick_specs(seed: u64) -> Vec<RunSpec> {
        ModelKind::ALL
            .into_iter()
            .flat_map(|model| {
                Arm::ALL.into_iter().map(move |arm| {
                    let mut spec = RunSpec::new(model, arm, seed);
                    // Singleton grids keep the test quick.
                    spec.grid.truncate(1);
                    spec
                })
            })
            .collect()
    }

    #[test]
    fn framework_emits_one_cell_per_combination() {
        let table = tiny_table(80, 5);
        let specs = quick_specs(1);
        let split = SplitConfig {
            seed: 3,
            ..SplitConfig::default()
        };
        let report = run_framework(&[table], &specs, &split).unwrap();
        assert_eq!(report.cells.len(), 10);
        for cell in &report.cells {
            let outcome = cell.outcome.as_ref().unwrap_or_else(|e| {
                panic!("cell {:?} failed: {e}", cell.key);
            });
            assert!(outcome.metrics.rmse >= 0.0);
            assert!(outcome.metrics.r_squared <= 1.0);
            if cell.key.arm == Arm::Pca {
                let cumvar = outcome.pca_cumulative_variance.unwrap();
                assert!(cumvar > 0.0 && cumvar <= 1.0 + 1e-9);
            } else {
                assert!(outcome.pca_cumulative_variance.is_none());
            }
        }
    }

    #[test]
    fn framework_attributes_cell_errors_and_continues() {
        let table = tiny_table(80, 6);
        let mut specs = quick_specs(1);
        specs[0].grid = vec![]; // first cell must fail with EmptyGrid
        let split = SplitConfig {
            seed: 3,
            ..SplitConfig::default()
        };
        let report = run_framework(&[table], &specs, &split).unwrap();
        assert_eq!(report.cells.len(), 10);
        assert!(report.cells[0].outcome.is_err());
        assert!(!report.all_failed());
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn framework_csv_is_deterministic() {
        let table = tiny_table(70, 8);
        let specs = vec![
            RunSpec {
                grid: vec![HyperParams::Knn { k: 3 }],
                ..RunSpec::new(ModelKind::Knn, Arm::Pca, 2)
            },
            RunSpec {
                grid: vec![HyperParams::Svm {
                    c: 1.0,
                    gamma_scale: 1.0,
                }],
                ..RunSpec::new(ModelKind::Svm, Arm::RawBands, 2)
            },
        ];
        let split = SplitConfig {
            seed: 11,
            ..SplitConfig::default()
        };
        let a = run_framework(std::slice::from_ref(&table), &specs, &split).unwrap();
        let b = run_framework(&[table], &specs, &split).unwrap();
        assert_eq!(a.to_csv(false), b.to_csv(false));
        assert!(a.to_csv(false).starts_with(
            "parameter,model,arm,r2_percent,rmse,unit,hyperparams,pca_cumvar,seconds\n"
        ));
    }

    #[test]
    fn csv_timing_column_is_zero_unless_requested() {
        let mut report = EvalReport { cells: vec![] };
        report.cells.push(CellResult {
            key: CellKey {
                parameter: ParameterKind::Cdom,
                model: ModelKind::Knn,
                arm: Arm::RawBands,
            },
            outcome: Ok(CellOutcome {
                metrics: Metrics {
                    r_squared: 0.5,
                    rmse: 1.0,
                },
                pearson_r2: None,
                hyperparams: "k=3".into(),
                pca_cumulative_variance: None,
                seconds: 1.234,
                train_size: 30,
                test_size: 70,
            }),
        });
        assert!(report.to_csv(false).contains(",0.000\n"));
        assert!(report.to_csv(true).contains(",1.234\n"));
    }

    #[test]
    fn histogram_counts_cover_all_values() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let counts = histogram_counts(&values, 0.0, 99.0, 10);
        assert_eq!(counts.iter().sum::<usize>(), 100);
        for &c in &counts {
            assert!((9..=11).contains(&c));
        }
    }

    #[test]
    fn svg_chart_contains_bars_and_labels() {
        let svg = r2_bar_chart(
            "cdom",
            &[
                ("knn".into(), Some(74.7), Some(92.8)),
                ("rf".into(), Some(78.1), None),
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("knn"));
        assert!(svg.contains("92.8"));
        assert!(svg.matches("<rect").count() >= 4);
    }

    #[test]
    fn split_table_wrapper_respects_grid() {
        let grid = WavelengthGrid::new(450.0, 4.0, 3).unwrap();
        let n = 40;
        let features = m(n, 3, (0..3 * n).map(|i| i as f64).collect());
        let table = SampleTable::new(
            features,
            Some(grid),
            (0..n).map(|i| i as f64).collect(),
            ParameterKind::Turbidity,
        )
        .unwrap();
        let (train, test) = split_stratified(
            &table,
            &SplitConfig {
                seed: 2,
                ..SplitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(train.len() + test.len(), n);
        assert_eq!(train.feature_grid(), table.feature_grid());
        assert_eq!(train.parameter(), ParameterKind::Turbidity);
    }
}
