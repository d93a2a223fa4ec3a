//! Epsilon-insensitive support vector regression with an RBF kernel,
//! trained by sequential minimal optimization on the dual problem.
//!
//! The solver works on the expanded box problem with `2n` variables
//! `(alpha_i, alpha*_i)`, minimizing
//! `0.5 lambda' Q lambda + p' lambda` subject to `sum(z_s lambda_s) = 0`
//! and `0 <= lambda_s <= C`, where `z = +1` for the alpha block and `-1`
//! for the alpha* block. Working pairs are the maximal KKT violator plus
//! the partner of maximal second-order objective decrease.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Matrix;
use crate::serialize::VersionedSchema;

#[derive(Debug, Error)]
pub enum SvrError {
    #[error("training needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("training rows and targets differ: {rows} vs {targets}")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("model trained on {fitted} features, queried with {given}")]
    FeatureMismatch { fitted: usize, given: usize },
    #[error("non-finite value in training input")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("vectors of length {a} and {b} in kernel evaluation")]
    KernelLength { a: usize, b: usize },
}

/// `exp(-gamma * ||x - z||^2)`.
pub fn rbf_kernel(x: &[f64], z: &[f64], gamma: f64) -> Result<f64, SvrError> {
    if x.len() != z.len() {
        return Err(SvrError::KernelLength {
            a: x.len(),
            b: z.len(),
        });
    }
    Ok(rbf_unchecked(x, z, gamma))
}

#[inline]
fn rbf_unchecked(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(z) {
        let d = a - b;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

/// How the solver picks its working pair each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairSelection {
    /// Maximal violator plus maximal second-order decrease partner.
    SecondOrder,
    /// Maximal violator plus a random feasible partner; kept for oracle
    /// cross-checks of the selection heuristic.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// Kernel width; `None` uses `1/d`.
    pub gamma: Option<f64>,
    /// Stop when the maximum KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub selection: PairSelection,
    /// Cache the full kernel matrix when `n^2` doubles fit this budget.
    pub cache_budget_mb: usize,
    /// Recompute and assert the dual objective after every update. Test
    /// instrumentation; far too slow for routine fits.
    pub check_objective: bool,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            gamma: None,
            tol: 1e-3,
            max_iter: 100_000,
            selection: PairSelection::SecondOrder,
            cache_budget_mb: 64,
            check_objective: false,
        }
    }
}

/// Fitted model: `f(x) = sum_j coeff_j K(sv_j, x) + bias` with
/// `coeff_j = alpha_j - alpha*_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    support_vectors: Matrix,
    dual_coeffs: Vec<f64>,
    bias: f64,
    gamma: f64,
    c: f64,
    epsilon: f64,
}

impl VersionedSchema for SvrModel {
    const SCHEMA: &'static str = "aquaspec.svr";
    const VERSION: u32 = 1;
}

impl SvrModel {
    pub fn support_vectors(&self) -> &Matrix {
        &self.support_vectors
    }

    pub fn dual_coeffs(&self) -> &[f64] {
        &self.dual_coeffs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, SvrError> {
        if x.cols() != self.support_vectors.cols() {
            return Err(SvrError::FeatureMismatch {
                fitted: self.support_vectors.cols(),
                given: x.cols(),
            });
        }
        Ok(x.row_iter()
            .map(|row| {
                self.bias
                    + self
                        .support_vectors
                        .row_iter()
                        .zip(&self.dual_coeffs)
                        .map(|(sv, &coeff)| coeff * rbf_unchecked(sv, row, self.gamma))
                        .sum::<f64>()
            })
            .collect())
    }
}

/// Fit result: the model plus convergence diagnostics. `dual_objective` is
/// the maximization-form dual value of the extracted coefficients.
#[derive(Debug, Clone)]
pub struct SvrOutcome {
    pub model: SvrModel,
    pub converged: bool,
    pub iterations: usize,
    /// Final `m - M` KKT gap (below `tol` when converged).
    pub kkt_violation: f64,
    pub dual_objective: f64,
}

struct KernelEval<'a> {
    x: &'a Matrix,
    gamma: f64,
    cache: Option<Vec<f64>>,
}

impl<'a> KernelEval<'a> {
    fn new(x: &'a Matrix, gamma: f64, cache_budget_mb: usize) -> Self {
        let n = x.rows();
        let fits = n
            .checked_mul(n)
            .map(|cells| cells * 8 <= cache_budget_mb * 1024 * 1024)
            .unwrap_or(false);
        let cache = fits.then(|| {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = rbf_unchecked(x.row(i), x.row(j), gamma);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            k
        });
        Self { x, gamma, cache }
    }

    /// Kernel row `K(i, .)`; uses `scratch` when the cache is off.
    fn row<'s>(&'s self, i: usize, scratch: &'s mut Vec<f64>) -> &'s [f64] {
        let n = self.x.rows();
        match &self.cache {
            Some(k) => &k[i * n..(i + 1) * n],
            None => {
                scratch.clear();
                let xi = self.x.row(i);
                scratch.extend(
                    self.x
                        .row_iter()
                        .map(|xj| rbf_unchecked(xi, xj, self.gamma)),
                );
                scratch
            }
        }
    }
}

/// Solver state over the expanded index space `s in 0..2n`:
/// `s < n` is `alpha_s` (z = +1), `s >= n` is `alpha*_{s-n}` (z = -1).
struct Smo<'a> {
    n: usize,
    c: f64,
    lambda: Vec<f64>,
    gradient: Vec<f64>,
    kernel: KernelEval<'a>,
}

#[inline]
fn sign(s: usize, n: usize) -> f64 {
    if s < n {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn base(s: usize, n: usize) -> usize {
    if s < n {
        s
    } else {
        s - n
    }
}

impl<'a> Smo<'a> {
    fn new(x: &'a Matrix, y: &[f64], params: &SvrParams, gamma: f64) -> Self {
        let n = x.rows();
        let mut gradient = Vec::with_capacity(2 * n);
        gradient.extend(y.iter().map(|&yi| params.epsilon - yi));
        gradient.extend(y.iter().map(|&yi| params.epsilon + yi));
        Self {
            n,
            c: params.c,
            lambda: vec![0.0; 2 * n],
            gradient,
            kernel: KernelEval::new(x, gamma, params.cache_budget_mb),
        }
    }

    fn in_up(&self, s: usize) -> bool {
        if s < self.n {
            self.lambda[s] < self.c
        } else {
            self.lambda[s] > 0.0
        }
    }

    fn in_low(&self, s: usize) -> bool {
        if s < self.n {
            self.lambda[s] > 0.0
        } else {
            self.lambda[s] < self.c
        }
    }

    /// `-z_s G_s`, the quantity whose spread over (I_up, I_low) measures
    /// KKT violation.
    fn score(&self, s: usize) -> f64 {
        -sign(s, self.n) * self.gradient[s]
    }

    /// `(m, argmax over I_up, M, argmin over I_low)`.
    fn violation_bounds(&self) -> (f64, Option<usize>, f64, Option<usize>) {
        let mut m = f64::NEG_INFINITY;
        let mut m_idx = None;
        let mut mm = f64::INFINITY;
        let mut mm_idx = None;
        for s in 0..2 * self.n {
            let v = self.score(s);
            if self.in_up(s) && v > m {
                m = v;
                m_idx = Some(s);
            }
            if self.in_low(s) && v < mm {
                mm = v;
                mm_idx = Some(s);
            }
        }
        (m, m_idx, mm, mm_idx)
    }

    /// Second-order partner: maximal decrease of the objective among
    /// violating candidates in I_low.
    fn select_partner(&self, i: usize, m: f64, k_i: &[f64]) -> Option<usize> {
        let n = self.n;
        let k_ii = k_i[base(i, n)];
        let mut best: Option<(f64, usize)> = None;
        for s in 0..2 * n {
            if !self.in_low(s) {
                continue;
            }
            let b = m - self.score(s);
            if b <= 0.0 {
                continue;
            }
            let k_ss = 1.0; // RBF diagonal
            let a = (k_ii + k_ss - 2.0 * k_i[base(s, n)]).max(1e-12);
            let decrease = -(b * b) / a;
            if best.is_none_or(|(d, _)| decrease < d) {
                best = Some((decrease, s));
            }
        }
        best.map(|(_, s)| s)
    }

    fn random_partner<R: Rng>(&self, m: f64, rng: &mut R) -> Option<usize> {
        let candidates: Vec<usize> = (0..2 * self.n)
            .filter(|&s| self.in_low(s) && m - self.score(s) > 0.0)
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[rng.random_range(0..candidates.len())])
        }
    }

    /// Analytic two-variable update on `(i, j)`. Returns the step size.
    fn update_pair(
        &mut self,
        i: usize,
        j: usize,
        buf_i: &mut Vec<f64>,
        buf_j: &mut Vec<f64>,
    ) -> f64 {
        let n = self.n;
        let (zi, zj) = (sign(i, n), sign(j, n));
        let zz = zi * zj;
        let Smo {
            lambda,
            gradient,
            kernel,
            c,
            ..
        } = self;
        let c = *c;
        let k_i = kernel.row(base(i, n), buf_i);
        let k_j = kernel.row(base(j, n), buf_j);

        let a = (2.0 - 2.0 * k_i[base(j, n)]).max(1e-12); // K_ii = K_jj = 1 for RBF
        // Unconstrained minimizer along (d_i, d_j) = (t, -zz * t).
        let mut t = -(gradient[i] - zz * gradient[j]) / a;

        // Box constraints on both coordinates.
        let (mut lo, mut hi) = (-lambda[i], c - lambda[i]);
        if zz > 0.0 {
            lo = lo.max(lambda[j] - c);
            hi = hi.min(lambda[j]);
        } else {
            lo = lo.max(-lambda[j]);
            hi = hi.min(c - lambda[j]);
        }
        t = t.clamp(lo, hi);
        if t == 0.0 {
            return 0.0;
        }

        let delta_i = t;
        let delta_j = -zz * t;
        lambda[i] = (lambda[i] + delta_i).clamp(0.0, c);
        lambda[j] = (lambda[j] + delta_j).clamp(0.0, c);

        // G_s += Q_si delta_i + Q_sj delta_j with Q_st = z_s z_t K(s,t).
        let zi_di = zi * delta_i;
        let zj_dj = zj * delta_j;
        for (s, g) in gradient.iter_mut().enumerate() {
            let zs = sign(s, n);
            *g += zs * (zi_di * k_i[base(s, n)] + zj_dj * k_j[base(s, n)]);
        }
        t
    }

    /// Minimization-form objective from the maintained gradient:
    /// `W = 0.5 (lambda' G + lambda' p)`.
    fn objective(&self, y: &[f64], epsilon: f64) -> f64 {
        let n = self.n;
        let mut lg = 0.0;
        let mut lp = 0.0;
        for s in 0..2 * n {
            let p = if s < n {
                epsilon - y[s]
            } else {
                epsilon + y[s - n]
            };
            lg += self.lambda[s] * self.gradient[s];
            lp += self.lambda[s] * p;
        }
        0.5 * (lg + lp)
    }
}

/// Trains an epsilon-SVR model. Non-convergence within `max_iter` is
/// reported in the outcome (and logged), never silent.
pub fn svr_fit(x: &Matrix, y: &[f64], params: &SvrParams) -> Result<SvrOutcome, SvrError> {
    let n = x.rows();
    if n < 2 {
        return Err(SvrError::TooFewRows(n));
    }
    if n != y.len() {
        return Err(SvrError::LengthMismatch {
            rows: n,
            targets: y.len(),
        });
    }
    if x.find_non_finite().is_some() || y.iter().any(|v| !v.is_finite()) {
        return Err(SvrError::NonFinite);
    }
    if !(params.c.is_finite() && params.c > 0.0) {
        return Err(SvrError::BadParam(format!("C must be positive, got {}", params.c)));
    }
    if !(params.epsilon.is_finite() && params.epsilon >= 0.0) {
        return Err(SvrError::BadParam(format!(
            "epsilon must be nonnegative, got {}",
            params.epsilon
        )));
    }
    let gamma = params.gamma.unwrap_or(1.0 / x.cols() as f64);
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(SvrError::BadParam(format!("gamma must be positive, got {gamma}")));
    }
    if params.tol <= 0.0 {
        return Err(SvrError::BadParam(format!("tol must be positive, got {}", params.tol)));
    }

    let mut smo = Smo::new(x, y, params, gamma);
    let mut rng = match params.selection {
        PairSelection::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        PairSelection::SecondOrder => None,
    };
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    let mut iterations = 0;
    let mut violation;
    let mut last_objective = f64::INFINITY;

    loop {
        let (m, m_idx, mm, _) = smo.violation_bounds();
        violation = m - mm;
        if !violation.is_finite() || violation < params.tol {
            break;
        }
        if iterations >= params.max_iter {
            break;
        }
        let i = m_idx.expect("violation finite implies I_up nonempty");
        let j = match &mut rng {
            Some(rng) => smo.random_partner(m, rng),
            None => {
                let k_i = smo.kernel.row(base(i, smo.n), &mut buf_a);
                smo.select_partner(i, m, k_i)
            }
        };
        let Some(j) = j else {
            break;
        };
        let step = smo.update_pair(i, j, &mut buf_a, &mut buf_b);
        if step == 0.0 {
            break;
        }
        iterations += 1;

        if params.check_objective {
            let w = smo.objective(y, params.epsilon);
            assert!(
                w <= last_objective + 1e-9,
                "dual objective regressed: {w} > {last_objective}"
            );
            last_objective = w;
        }
    }

    let converged = violation < params.tol;
    if !converged {
        log::warn!(
            "svr did not converge in {iterations} iterations; final KKT violation {violation} (tol {})",
            params.tol
        );
    }

    // Extract coefficients beta_i = alpha_i - alpha*_i.
    let beta: Vec<f64> = (0..n).map(|i| smo.lambda[i] - smo.lambda[n + i]).collect();

    // Bias from free (strictly interior) variables; with none, from the
    // midpoint of the KKT bounds.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for s in 0..2 * n {
        if smo.lambda[s] > 0.0 && smo.lambda[s] < smo.c {
            free_sum += smo.score(s);
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        let (m, _, mm, _) = smo.violation_bounds();
        match (m.is_finite(), mm.is_finite()) {
            (true, true) => 0.5 * (m + mm),
            (true, false) => m,
            (false, true) => mm,
            (false, false) => 0.0,
        }
    };

    let sv_rows: Vec<usize> = (0..n).filter(|&i| beta[i] != 0.0).collect();
    let support_vectors = x.select_rows(&sv_rows);
    let dual_coeffs: Vec<f64> = sv_rows.iter().map(|&i| beta[i]).collect();

    // Maximization-form dual objective of the extracted coefficients.
    let mut quad = 0.0;
    for (a, &ia) in sv_rows.iter().enumerate() {
        let xa = x.row(ia);
        for (b, &ib) in sv_rows.iter().enumerate() {
            quad += dual_coeffs[a] * dual_coeffs[b] * rbf_unchecked(xa, x.row(ib), gamma);
        }
    }
    let dual_objective = sv_rows
        .iter()
        .zip(&dual_coeffs)
        .map(|(&i, &b)| y[i] * b - params.epsilon * b.abs())
        .sum::<f64>()
        - 0.5 * quad;

    let model = SvrModel {
        support_vectors,
        dual_coeffs,
        bias,
        gamma,
        c: params.c,
        epsilon: params.epsilon,
    };
    Ok(SvrOutcome {
        model,
        converged,
        iterations,
        kkt_violation: violation,
        dual_objective,
    })
}
