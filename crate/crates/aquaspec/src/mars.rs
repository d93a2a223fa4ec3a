//! Multivariate adaptive regression splines: a forward pass that greedily
//! adds reflected hinge pairs `max(0, x[f] - knot)` / `max(0, knot - x[f])`,
//! followed by backward pruning under generalized cross-validation.
//!
//! Least-squares subproblems run on an incrementally maintained
//! Gram-Schmidt QR factorization of the basis design matrix. A candidate
//! column whose orthogonalized norm falls below `1e-12` of its raw norm
//! (condition estimate beyond 1e12) is treated as collinear: redundant
//! halves of a pair are dropped, and a candidate with no independent
//! column is rejected.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::serialize::VersionedSchema;

#[derive(Debug, Error)]
pub enum MarsError {
    #[error("training needs at least 4 rows, got {0}")]
    TooFewRows(usize),
    #[error("training rows and targets differ: {rows} vs {targets}")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("model trained on {fitted} features, queried with {given}")]
    FeatureMismatch { fitted: usize, given: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HingeDirection {
    /// `max(0, x[feature] - knot)`
    Positive,
    /// `max(0, knot - x[feature])`
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeFactor {
    pub feature: usize,
    pub knot: f64,
    pub direction: HingeDirection,
}

impl HingeFactor {
    fn evaluate(&self, row: &[f64]) -> f64 {
        match self.direction {
            HingeDirection::Positive => (row[self.feature] - self.knot).max(0.0),
            HingeDirection::Negative => (self.knot - row[self.feature]).max(0.0),
        }
    }
}

/// Product of hinge factors; an empty factor list is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsTerm {
    pub factors: Vec<HingeFactor>,
}

impl MarsTerm {
    pub fn intercept() -> Self {
        Self { factors: vec![] }
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn uses_feature(&self, feature: usize) -> bool {
        self.factors.iter().any(|f| f.feature == feature)
    }

    pub fn evaluate(&self, row: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.evaluate(row)).product()
    }

    fn max_feature(&self) -> Option<usize> {
        self.factors.iter().map(|f| f.feature).max()
    }
}

/// Ordered term list; `terms[0]` is always the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsBasis {
    pub terms: Vec<MarsTerm>,
    pub max_degree: usize,
}

impl MarsBasis {
    fn intercept_only(max_degree: usize) -> Self {
        Self {
            terms: vec![MarsTerm::intercept()],
            max_degree,
        }
    }

    /// Distinct `(feature, knot)` pairs across all terms; the knot count
    /// `K` in the GCV penalty `c(m) = m + penalty * K`.
    pub fn knot_count(&self) -> usize {
        let mut knots: BTreeSet<(usize, u64)> = BTreeSet::new();
        for term in &self.terms {
            for f in &term.factors {
                knots.insert((f.feature, f.knot.to_bits()));
            }
        }
        knots.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsParams {
    /// Maximum basis terms including the intercept.
    pub max_terms: usize,
    /// Maximum hinge factors per term (1 = additive model).
    pub degree: usize,
    /// GCV effective parameters charged per knot.
    pub penalty_per_knot: f64,
    /// Forward pass stops when the best SSE improvement falls below this
    /// fraction of the intercept-only SSE.
    pub min_improvement: f64,
}

impl Default for MarsParams {
    fn default() -> Self {
        Self {
            max_terms: 21,
            degree: 1,
            penalty_per_knot: 3.0,
            min_improvement: 1e-10,
        }
    }
}

/// Forward-pass result: the selected basis with its least-squares fit.
#[derive(Debug, Clone)]
pub struct MarsForward {
    pub basis: MarsBasis,
    pub coefficients: Vec<f64>,
    pub training_sse: f64,
}

/// Pruned model: retained terms, refit coefficients, and the winning GCV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsModel {
    pub basis: MarsBasis,
    pub coefficients: Vec<f64>,
    pub gcv: f64,
}

impl VersionedSchema for MarsModel {
    const SCHEMA: &'static str = "aquaspec.mars";
    const VERSION: u32 = 1;
}

impl MarsModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, MarsError> {
        let needed = self
            .basis
            .terms
            .iter()
            .filter_map(|t| t.max_feature())
            .max()
            .map(|f| f + 1)
            .unwrap_or(0);
        if x.cols() < needed {
            return Err(MarsError::FeatureMismatch {
                fitted: needed,
                given: x.cols(),
            });
        }
        Ok(x.row_iter()
            .map(|row| {
                self.basis
                    .terms
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(t, &c)| c * t.evaluate(row))
                    .sum()
            })
            .collect())
    }
}

/// Relative threshold below which an orthogonalized column counts as
/// collinear with the current basis.
const DEPENDENCE_TOLERANCE: f64 = 1e-12;

/// Incremental Gram-Schmidt QR of the design matrix, with the running
/// residual of `y` against the basis span.
struct QrState {
    /// Orthonormal columns.
    q: Vec<Vec<f64>>,
    /// Upper-triangular columns: `r[j]` has length `j + 1`.
    r: Vec<Vec<f64>>,
    /// `Q' y` entries.
    qty: Vec<f64>,
    residual: Vec<f64>,
    sse: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl QrState {
    fn new(y: &[f64]) -> Self {
        Self {
            q: vec![],
            r: vec![],
            qty: vec![],
            residual: y.to_vec(),
            sse: dot(y, y),
        }
    }

    fn len(&self) -> usize {
        self.q.len()
    }

    /// Appends a column with re-orthogonalization (two Gram-Schmidt
    /// passes); returns false and leaves the state untouched when the
    /// column is collinear with the basis.
    fn append(&mut self, column: &[f64]) -> bool {
        let raw_norm = dot(column, column).sqrt();
        let mut u = column.to_vec();
        let mut rvec = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (j, q) in self.q.iter().enumerate() {
                let c = dot(q, &u);
                rvec[j] += c;
                for (ui, qi) in u.iter_mut().zip(q) {
                    *ui -= c * qi;
                }
            }
        }
        let norm = dot(&u, &u).sqrt();
        if norm <= DEPENDENCE_TOLERANCE * raw_norm.max(1e-300) {
            return false;
        }
        for ui in &mut u {
            *ui /= norm;
        }
        let qy = dot(&u, &self.residual);
        for (res, qi) in self.residual.iter_mut().zip(&u) {
            *res -= qy * qi;
        }
        self.sse = (self.sse - qy * qy).max(0.0);
        rvec.push(norm);
        self.r.push(rvec);
        self.q.push(u);
        self.qty.push(qy);
        true
    }

    /// Coefficients by back-substitution of `R beta = Q' y`.
    fn solve(&self) -> Vec<f64> {
        let m = self.len();
        let mut beta = vec![0.0; m];
        for j in (0..m).rev() {
            let mut v = self.qty[j];
            for i in (j + 1)..m {
                v -= self.r[i][j] * beta[i];
            }
            beta[j] = v / self.r[j][j];
        }
        beta
    }

    /// SSE reduction from adding the candidate pair, single-pass
    /// orthogonalization. Returns `(gain, independent flags)`.
    fn score_pair(&self, c1: &[f64], c2: &[f64]) -> (f64, [bool; 2]) {
        let mut gain = 0.0;
        let mut kept = [false, false];

        let raw1 = dot(c1, c1).sqrt();
        let mut u1 = c1.to_vec();
        for q in &self.q {
            let c = dot(q, &u1);
            for (ui, qi) in u1.iter_mut().zip(q) {
                *ui -= c * qi;
            }
        }
        let n1 = dot(&u1, &u1).sqrt();
        if n1 > DEPENDENCE_TOLERANCE * raw1.max(1e-300) {
            kept[0] = true;
            let qr = dot(&u1, &self.residual) / n1;
            gain += qr * qr;
        }

        let raw2 = dot(c2, c2).sqrt();
        let mut u2 = c2.to_vec();
        for q in &self.q {
            let c = dot(q, &u2);
            for (ui, qi) in u2.iter_mut().zip(q) {
                *ui -= c * qi;
            }
        }
        if kept[0] {
            let c = dot(&u1, &u2) / (n1 * n1);
            for (ui, vi) in u2.iter_mut().zip(&u1) {
                *ui -= c * vi;
            }
        }
        let n2 = dot(&u2, &u2).sqrt();
        if n2 > DEPENDENCE_TOLERANCE * raw2.max(1e-300) {
            kept[1] = true;
            let qr = dot(&u2, &self.residual) / n2;
            gain += qr * qr;
        }
        (gain, kept)
    }
}

struct Candidate {
    gain: f64,
    parent: usize,
    feature: usize,
    knot: f64,
    kept: [bool; 2],
}

impl Candidate {
    /// Total order for the deterministic reduce: higher gain first, ties
    /// to the lowest feature, lowest knot, lowest parent.
    fn beats(&self, other: &Candidate) -> bool {
        if self.gain != other.gain {
            return self.gain > other.gain;
        }
        (self.feature, self.knot, self.parent) < (other.feature, other.knot, other.parent)
    }
}

/// Forward pass: repeatedly adds the hinge pair (feature, knot at an
/// observed value, parent term) with the largest least-squares SSE
/// reduction, until `max_terms` is reached or the best improvement drops
/// below `min_improvement` times the intercept-only SSE.
pub fn mars_forward(
    x: &Matrix,
    y: &[f64],
    params: &MarsParams,
) -> Result<MarsForward, MarsError> {
    let n = x.rows();
    if n < 4 {
        return Err(MarsError::TooFewRows(n));
    }
    if n != y.len() {
        return Err(MarsError::LengthMismatch {
            rows: n,
            targets: y.len(),
        });
    }
    if params.max_terms == 0 {
        return Err(MarsError::BadParam("max_terms must be at least 1".into()));
    }
    if params.degree == 0 {
        return Err(MarsError::BadParam("degree must be at least 1".into()));
    }

    // Distinct observed values per feature, ascending: the knot candidates.
    let knots: Vec<Vec<f64>> = (0..x.cols())
        .map(|f| {
            let mut vals = x.column(f);
            vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            vals
        })
        .collect();

    let mut basis = MarsBasis::intercept_only(params.degree);
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let yty = dot(y, y);
    let mut qr = QrState::new(y);
    let ok = qr.append(&columns[0]);
    debug_assert!(ok);
    // Intercept-model SSE, floored at rounding scale so an (almost)
    // perfectly fit target cannot admit noise-level "improvements".
    let threshold = params.min_improvement * qr.sse.max(f64::EPSILON * yty);

    while basis.terms.len() < params.max_terms {
        let remaining = params.max_terms - basis.terms.len();
        // (parent, feature) pairs eligible for a new hinge pair.
        let pairs: Vec<(usize, usize)> = (0..basis.terms.len())
            .filter(|&t| basis.terms[t].degree() < params.degree)
            .flat_map(|t| {
                let terms = &basis.terms;
                (0..x.cols())
                    .filter(move |&f| !terms[t].uses_feature(f))
                    .map(move |f| (t, f))
            })
            .collect();

        let best = pairs
            .par_iter()
            .map(|&(parent, feature)| {
                let parent_col = &columns[parent];
                let mut best: Option<Candidate> = None;
                let mut c1 = vec![0.0; n];
                let mut c2 = vec![0.0; n];
                for &knot in &knots[feature] {
                    for i in 0..n {
                        let v = x.get(i, feature);
                        c1[i] = parent_col[i] * (v - knot).max(0.0);
                        c2[i] = parent_col[i] * (knot - v).max(0.0);
                    }
                    let (gain, kept) = qr.score_pair(&c1, &c2);
                    let added = kept.iter().filter(|&&k| k).count();
                    if added == 0 || added > remaining {
                        continue;
                    }
                    let cand = Candidate {
                        gain,
                        parent,
                        feature,
                        knot,
                        kept,
                    };
                    if best.as_ref().is_none_or(|b| cand.beats(b)) {
                        best = Some(cand);
                    }
                }
                best
            })
            .reduce(
                || None,
                |a, b| match (a, b) {
                    (Some(a), Some(b)) => Some(if a.beats(&b) { a } else { b }),
                    (a, None) => a,
                    (None, b) => b,
                },
            );

        let Some(cand) = best else {
            break;
        };
        if cand.gain <= threshold {
            break;
        }

        let directions = [HingeDirection::Positive, HingeDirection::Negative];
        let mut appended = 0;
        for (slot, direction) in directions.into_iter().enumerate() {
            if !cand.kept[slot] {
                continue;
            }
            let factor = HingeFactor {
                feature: cand.feature,
                knot: cand.knot,
                direction,
            };
            let mut term = basis.terms[cand.parent].clone();
            term.factors.push(factor);
            let column: Vec<f64> = x.row_iter().map(|row| term.evaluate(row)).collect();
            // The authoritative collinearity check happens on append; a
            // near-threshold candidate half may still be dropped here.
            if qr.append(&column) {
                basis.terms.push(term);
                columns.push(column);
                appended += 1;
            }
        }
        if appended == 0 {
            break;
        }
    }

    let coefficients = qr.solve();
    Ok(MarsForward {
        basis,
        coefficients,
        training_sse: qr.sse,
    })
}

fn gcv(sse: f64, n: usize, terms: usize, knots: usize, penalty: f64) -> f64 {
    let c = terms as f64 + penalty * knots as f64;
    let denom = 1.0 - c / n as f64;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        (sse / n as f64) / (denom * denom)
    }
}

fn subset_fit(columns: &[Vec<f64>], subset: &[usize], y: &[f64]) -> (Vec<f64>, f64) {
    let mut qr = QrState::new(y);
    for &j in subset {
        // Subsets of an independent basis stay independent.
        let ok = qr.append(&columns[j]);
        debug_assert!(ok, "pruning subset became collinear");
    }
    (qr.solve(), qr.sse)
}

/// Backward pruning: repeatedly drops the term whose removal minimizes
/// GCV, keeping the best subset seen anywhere along the way (including
/// the unpruned basis). The intercept is never dropped.
pub fn mars_prune(
    basis: &MarsBasis,
    x: &Matrix,
    y: &[f64],
    params: &MarsParams,
) -> Result<MarsModel, MarsError> {
    let n = x.rows();
    if n != y.len() {
        return Err(MarsError::LengthMismatch {
            rows: n,
            targets: y.len(),
        });
    }
    let columns: Vec<Vec<f64>> = basis
        .terms
        .iter()
        .map(|t| x.row_iter().map(|row| t.evaluate(row)).collect())
        .collect();

    let knots_of = |subset: &[usize]| {
        MarsBasis {
            terms: subset.iter().map(|&j| basis.terms[j].clone()).collect(),
            max_degree: basis.max_degree,
        }
        .knot_count()
    };

    let mut current: Vec<usize> = (0..basis.terms.len()).collect();
    let (_, sse) = subset_fit(&columns, &current, y);
    let mut best_subset = current.clone();
    let mut best_gcv = gcv(
        sse,
        n,
        current.len(),
        knots_of(&current),
        params.penalty_per_knot,
    );

    while current.len() > 1 {
        let mut step_best: Option<(f64, usize)> = None; // (gcv, position in current)
        for pos in 1..current.len() {
            let mut reduced = current.clone();
            reduced.remove(pos);
            let (_, sse) = subset_fit(&columns, &reduced, y);
            let g = gcv(
                sse,
                n,
                reduced.len(),
                knots_of(&reduced),
                params.penalty_per_knot,
            );
            if step_best.is_none_or(|(bg, _)| g < bg) {
                step_best = Some((g, pos));
            }
        }
        let Some((g, pos)) = step_best else {
            break;
        };
        current.remove(pos);
        if g < best_gcv {
            best_gcv = g;
            best_subset = current.clone();
        }
    }

    let (coefficients, _) = subset_fit(&columns, &best_subset, y);
    Ok(MarsModel {
        basis: MarsBasis {
            terms: best_subset
                .iter()
                .map(|&j| basis.terms[j].clone())
                .collect(),
            max_degree: basis.max_degree,
        },
        coefficients,
        gcv: best_gcv,
    })
}

/// Forward pass followed by backward pruning.
pub fn mars_fit(x: &Matrix, y: &[f64], params: &MarsParams) -> Result<MarsModel, MarsError> {
    let forward = mars_forward(x, y, params)?;
    mars_prune(&forward.basis, x, y, params)
}
