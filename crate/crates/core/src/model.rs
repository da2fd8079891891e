//! Model parameters, identifiability bookkeeping and likelihood evaluation.
//!
//! The state-space model is
//!
//! ```text
//! x_{t+1} = A x_t + w_t,   w_t ~ N(0, I),   x_0 = pi0 (deterministic)
//! y_t     = C x_t + v_t,   v_t ~ N(0, diag(r))
//! ```
//!
//! with `A` a `d x d` transition matrix, `C` a `p x d` observation matrix and
//! `r` the diagonal of the observation-noise covariance. The state-noise
//! covariance is pinned to the identity and the initial state is a constant,
//! so neither is stored. The remaining column-ordering freedom is resolved by
//! [`canonicalize`], which sorts the columns of `C` by non-increasing norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Parameter bundle `{A, C, r, pi0}` of the reduced-rank model.
///
/// The observation-noise covariance is kept as its diagonal only; a dense
/// `p x p` matrix is never materialized anywhere in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsParams {
    /// State transition matrix, `d x d`.
    pub a: DMatrix<f64>,
    /// Observation (generative) matrix, `p x d`.
    pub c: DMatrix<f64>,
    /// Diagonal of the observation-noise covariance, length `p`, entries > 0.
    pub r_diag: DVector<f64>,
    /// Initial state constant, length `d`.
    pub pi0: DVector<f64>,
}

impl LdsParams {
    /// Latent dimension `d`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Ambient dimension `p`.
    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Penalty weights and iteration budget for a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// l1 weight on the entries of `A`.
    pub lambda_a: f64,
    /// l2 weight on the entries of `C`.
    pub lambda_c: f64,
    /// Latent dimension.
    pub d: usize,
    /// Maximum number of EM iterations.
    pub max_em_iters: usize,
    /// Iteration budget for the inner proximal solver.
    pub max_inner_iters: usize,
    /// Parameter-change stopping threshold for EM.
    pub em_tol: f64,
}

impl Hyperparams {
    /// Unpenalized defaults: 30 EM iterations, 30 inner iterations, tol 1e-6.
    pub fn new(d: usize) -> Self {
        Self {
            lambda_a: 0.0,
            lambda_c: 0.0,
            d,
            max_em_iters: 30,
            max_inner_iters: 30,
            em_tol: 1e-6,
        }
    }

    /// Same defaults with both penalties set.
    pub fn with_penalties(d: usize, lambda_a: f64, lambda_c: f64) -> Self {
        Self {
            lambda_a,
            lambda_c,
            ..Self::new(d)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_a.is_finite() && self.lambda_a >= 0.0) {
            return Err(Error::Invalid(format!(
                "lambda_a must be finite and >= 0, got {}",
                self.lambda_a
            )));
        }
        if !(self.lambda_c.is_finite() && self.lambda_c >= 0.0) {
            return Err(Error::Invalid(format!(
                "lambda_c must be finite and >= 0, got {}",
                self.lambda_c
            )));
        }
        if self.d == 0 {
            return Err(Error::Invalid("latent dimension d must be >= 1".into()));
        }
        if self.max_em_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::Invalid("iteration budgets must be >= 1".into()));
        }
        if !(self.em_tol.is_finite() && self.em_tol > 0.0) {
            return Err(Error::Invalid(format!(
                "em_tol must be finite and > 0, got {}",
                self.em_tol
            )));
        }
        Ok(())
    }
}

/// Observed series `Y`, one column per time step (`p x T`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    y: DMatrix<f64>,
}

impl ObservationSeries {
    /// Wraps a `p x T` matrix; every entry must be finite and both
    /// dimensions non-zero.
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "observation matrix must be non-empty, got {}x{}",
                y.nrows(),
                y.ncols()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "observation matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { y })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Ambient dimension `p`.
    pub fn obs_dim(&self) -> usize {
        self.y.nrows()
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    /// The prefix `y_1..y_n` as a new series.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Invalid(format!(
                "prefix length {n} out of range 1..={}",
                self.len()
            )));
        }
        Ok(Self {
            y: self.y.columns(0, n).into_owned(),
        })
    }
}

/// Latent series `X`, `d x (T+1)`; column `t` holds `x_t` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeries {
    pub x: DMatrix<f64>,
}

impl LatentSeries {
    /// Number of transitions `T` (one less than the stored column count).
    pub fn len(&self) -> usize {
        self.x.ncols().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Checks shapes, positivity of the noise diagonal and finiteness.
///
/// Violations are data rather than failures: the returned list is empty iff
/// the parameters are well-formed for the given `(p, d)`.
pub fn validate_params(params: &LdsParams, p: usize, d: usize) -> Vec<String> {
    let mut violations = Vec::new();
    if params.a.nrows() != d || params.a.ncols() != d {
        violations.push(format!(
            "A must be {d}x{d}, got {}x{}",
            params.a.nrows(),
            params.a.ncols()
        ));
    }
    if params.c.nrows() != p {
        violations.push(format!("C row count != p: {} vs {p}", params.c.nrows()));
    }
    if params.c.ncols() != d {
        violations.push(format!("C column count != d: {} vs {d}", params.c.ncols()));
    }
    if params.r_diag.len() != p {
        violations.push(format!(
            "R_diag length != p: {} vs {p}",
            params.r_diag.len()
        ));
    }
    if params.pi0.len() != d {
        violations.push(format!("pi0 length != d: {} vs {d}", params.pi0.len()));
    }
    if params.r_diag.iter().any(|&r| r <= 0.0) {
        violations.push("R_diag not strictly positive".into());
    }
    let finite = params
        .a
        .iter()
        .chain(params.c.iter())
        .all(|v| v.is_finite())
        && params.r_diag.iter().all(|v| v.is_finite())
        && params.pi0.iter().all(|v| v.is_finite());
    if !finite {
        violations.push("parameters contain non-finite entries".into());
    }
    violations
}

/// Permutation that orders the columns of `c` by non-increasing Euclidean
/// norm. Ties keep the original column order.
pub fn canonical_permutation(c: &DMatrix<f64>) -> Vec<usize> {
    let norms: Vec<f64> = (0..c.ncols()).map(|j| c.column(j).norm()).collect();
    let mut perm: Vec<usize> = (0..c.ncols()).collect();
    // sort_by is stable, so equal norms preserve index order.
    perm.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));
    perm
}

/// Reorders the latent coordinates so the columns of `C` have non-increasing
/// norm; `A` and `pi0` are permuted simultaneously. The returned model is
/// observationally equivalent to the input.
pub fn canonicalize(params: &LdsParams) -> LdsParams {
    let perm = canonical_permutation(&params.c);
    apply_state_permutation(params, &perm)
}

/// Applies a latent-coordinate permutation to a parameter bundle:
/// `C' = C[:, perm]`, `A'[i, j] = A[perm[i], perm[j]]`, `pi0' = pi0[perm]`.
pub fn apply_state_permutation(params: &LdsParams, perm: &[usize]) -> LdsParams {
    let d = params.state_dim();
    assert_eq!(perm.len(), d, "permutation length must equal d");
    let c = DMatrix::from_fn(params.c.nrows(), d, |i, j| params.c[(i, perm[j])]);
    let a = DMatrix::from_fn(d, d, |i, j| params.a[(perm[i], perm[j])]);
    let pi0 = DVector::from_fn(d, |i, _| params.pi0[perm[i]]);
    LdsParams {
        a,
        c,
        r_diag: params.r_diag.clone(),
        pi0,
    }
}

fn check_series_dims(params: &LdsParams, y: &ObservationSeries) -> Result<(usize, usize, usize)> {
    let p = params.obs_dim();
    let d = params.state_dim();
    let t = y.len();
    let violations = validate_params(params, p, d);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations.join("; ")));
    }
    if y.obs_dim() != p {
        return Err(Error::Dimension(format!(
            "observation dimension {} != C row count {p}",
            y.obs_dim()
        )));
    }
    Ok((p, d, t))
}

/// Complete-data log-likelihood of `(X, Y)` under `params`, up to the
/// constant `(T/2)(p+d) log 2pi` which is dropped.
///
/// The initial state enters through an indicator: if column 0 of `X` is not
/// exactly `pi0` the value is `-inf`.
pub fn log_likelihood(params: &LdsParams, x: &LatentSeries, y: &ObservationSeries) -> Result<f64> {
    let (_, d, t) = check_series_dims(params, y)?;
    if x.x.nrows() != d {
        return Err(Error::Dimension(format!(
            "latent dimension {} != d = {d}",
            x.x.nrows()
        )));
    }
    if x.x.ncols() != t + 1 {
        return Err(Error::Dimension(format!(
            "latent series has {} columns, expected T+1 = {}",
            x.x.ncols(),
            t + 1
        )));
    }
    if x.x.column(0) != params.pi0 {
        return Ok(f64::NEG_INFINITY);
    }

    let mut obs_quad = 0.0;
    let mut state_quad = 0.0;
    for step in 1..=t {
        let resid = y.matrix().column(step - 1) - &params.c * x.x.column(step);
        obs_quad += resid
            .iter()
            .zip(params.r_diag.iter())
            .map(|(e, r)| e * e / r)
            .sum::<f64>();
        let innov = x.x.column(step) - &params.a * x.x.column(step - 1);
        state_quad += innov.norm_squared();
    }
    let log_det_r: f64 = params.r_diag.iter().map(|r| r.ln()).sum();
    Ok(-0.5 * obs_quad - 0.5 * (t as f64) * log_det_r - 0.5 * state_quad)
}

/// Expected penalized objective (the minimization target of the fit),
/// with every state-dependent term replaced by its smoothed expectation:
///
/// ```text
/// sum_t 1/2 E|y_t - C x_t|^2_{R^-1} + T/2 log|R|
///   + sum_t 1/2 E|x_t - A x_{t-1}|^2 + lambda_a |A|_1 + lambda_c |C|_F^2
/// ```
pub fn penalized_objective(
    params: &LdsParams,
    moments: &crate::kalman::SmoothedMoments,
    y: &ObservationSeries,
    hp: &Hyperparams,
) -> Result<f64> {
    let (p, d, t) = check_series_dims(params, y)?;
    if moments.state_dim() != d || moments.len() != t {
        return Err(Error::Dimension(format!(
            "moments are {}-dimensional over {} steps, expected d = {d}, T = {t}",
            moments.state_dim(),
            moments.len()
        )));
    }
    hp.validate()?;

    // Sums of smoothed second moments over t = 1..T and t = 0..T-1.
    let mut s_xx = DMatrix::<f64>::zeros(d, d);
    let mut s_lag = DMatrix::<f64>::zeros(d, d);
    let mut s_cross = DMatrix::<f64>::zeros(d, d);
    for step in 1..=t {
        s_xx += &moments.p_hat[step];
        s_lag += &moments.p_hat[step - 1];
        s_cross += &moments.p_cross[step - 1];
    }

    // Observation block: y-quadratic, cross term, and tr(C'R^-1C sum P_t),
    // all assembled without any p x p product.
    let r_inv = params.r_diag.map(|r| 1.0 / r);
    let mut y_quad = 0.0;
    for j in 0..t {
        let col = y.matrix().column(j);
        y_quad += col
            .iter()
            .zip(r_inv.iter())
            .map(|(v, ri)| v * v * ri)
            .sum::<f64>();
    }
    let r_inv_c = {
        let mut m = params.c.clone();
        for i in 0..p {
            let ri = r_inv[i];
            m.row_mut(i).scale_mut(ri);
        }
        m
    };
    let mut cross_term = 0.0;
    for step in 1..=t {
        let proj = r_inv_c.tr_mul(&y.matrix().column(step - 1).into_owned());
        cross_term += proj.dot(&moments.x_hat.column(step).into_owned());
    }
    let w = params.c.tr_mul(&r_inv_c); // C' R^-1 C, d x d
    let trace_w_sxx = (&w * &s_xx).trace();
    let obs_block = 0.5 * (y_quad - 2.0 * cross_term + trace_w_sxx);

    let log_det_r: f64 = params.r_diag.iter().map(|r| r.ln()).sum();

    // State block: tr(sum P_t) - 2 tr(A sum P_{t,t-1}') + tr(A sum P_{t-1} A').
    let state_block = 0.5
        * (s_xx.trace() - 2.0 * (&params.a * s_cross.transpose()).trace()
            + (&params.a * &s_lag * params.a.transpose()).trace());

    let l1_a: f64 = params.a.iter().map(|v| v.abs()).sum();
    let fro2_c: f64 = params.c.iter().map(|v| v * v).sum();

    Ok(obs_block
        + 0.5 * (t as f64) * log_det_r
        + state_block
        + hp.lambda_a * l1_a
        + hp.lambda_c * fro2_c)
}
