//! FISTA with constant step for quadratic-plus-l1 problems.
//!
//! The problem is `min_X F(X) = 1/2 tr(X G X') - tr(X L') + lambda |X|_1`
//! with `G` a symmetric PSD gram matrix; the gradient of the smooth part is
//! `X G - L` and its Lipschitz constant is the largest eigenvalue of `G`.
//! Solving directly in matrix form avoids materializing the block-diagonal
//! design the vectorized formulation would need.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Quadratic-plus-l1 problem data.
///
/// For the transition-matrix update, `gram` is the summed lagged second
/// moment and `linear` the summed cross moment; any `m x d` iterate shape
/// with a `d x d` gram works.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    /// Symmetric PSD `d x d` gram matrix.
    pub gram: DMatrix<f64>,
    /// Linear term, same shape as the iterate.
    pub linear: DMatrix<f64>,
    /// l1 weight, >= 0.
    pub lambda: f64,
}

impl QuadraticProblem {
    /// Smooth part `1/2 tr(X G X') - tr(X L')`.
    pub fn smooth_value(&self, x: &DMatrix<f64>) -> f64 {
        0.5 * (x * &self.gram * x.transpose()).trace() - (x * self.linear.transpose()).trace()
    }

    /// Full objective including the l1 term.
    pub fn objective(&self, x: &DMatrix<f64>) -> f64 {
        self.smooth_value(x) + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.gram - &self.linear
    }
}

/// Scalar soft-thresholding `S_lam(y) = sign(y) (|y| - lam)_+`.
pub fn soft_threshold(y: f64, lam: f64) -> f64 {
    debug_assert!(lam >= 0.0);
    if y > lam {
        y - lam
    } else if y < -lam {
        y + lam
    } else {
        0.0
    }
}

/// Entrywise soft-thresholding.
pub fn soft_threshold_matrix(y: &DMatrix<f64>, lam: f64) -> DMatrix<f64> {
    y.map(|v| soft_threshold(v, lam))
}

/// Largest eigenvalue of a symmetric PSD gram matrix, the exact Lipschitz
/// constant of the smooth gradient.
pub fn lipschitz_bound(gram: &DMatrix<f64>) -> Result<f64> {
    if gram.nrows() != gram.ncols() {
        return Err(Error::Dimension(format!(
            "gram must be square, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let scale = gram.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let asym = (gram - gram.transpose()).abs().max();
    if asym > 1e-8 * scale {
        return Err(Error::Invalid(format!(
            "gram is not symmetric: max asymmetry {asym:.3e}"
        )));
    }
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    Ok(eig.iter().fold(f64::NEG_INFINITY, |acc, &e| acc.max(e)))
}

/// FISTA with constant step `1/L`.
///
/// Starts from `x0`, stops at `max_iters` or when the relative objective
/// change drops below `tol`, and returns the best iterate seen (including
/// `x0`) together with the objective trace; entry 0 of the trace is `F(x0)`,
/// entry `k` is `F(x_k)`.
pub fn fista_solve(
    prob: &QuadraticProblem,
    x0: &DMatrix<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if max_iters == 0 {
        return Err(Error::Invalid("max_iters must be >= 1".into()));
    }
    if !(prob.lambda >= 0.0 && prob.lambda.is_finite()) {
        return Err(Error::Invalid(format!(
            "lambda must be finite and >= 0, got {}",
            prob.lambda
        )));
    }
    if x0.nrows() != prob.linear.nrows() || x0.ncols() != prob.linear.ncols() {
        return Err(Error::Dimension(format!(
            "x0 is {}x{} but linear term is {}x{}",
            x0.nrows(),
            x0.ncols(),
            prob.linear.nrows(),
            prob.linear.ncols()
        )));
    }
    let lipschitz = lipschitz_bound(&prob.gram)?;
    if lipschitz <= 0.0 || lipschitz.is_nan() {
        return Err(Error::Numerical(format!(
            "Lipschitz constant must be positive, got {lipschitz:.3e}"
        )));
    }
    let step = 1.0 / lipschitz;

    let mut x_prev = x0.clone();
    let mut y = x0.clone();
    let mut t_k = 1.0f64;

    let mut trace = Vec::with_capacity(max_iters + 1);
    trace.push(prob.objective(x0));
    let mut best = x0.clone();
    let mut best_val = trace[0];

    for _ in 0..max_iters {
        let grad = prob.gradient(&y);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("gradient became non-finite".into()));
        }
        let x = soft_threshold_matrix(&(&y - grad * step), step * prob.lambda);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
        y = &x + (&x - &x_prev) * ((t_k - 1.0) / t_next);
        t_k = t_next;

        let val = prob.objective(&x);
        trace.push(val);
        if val < best_val {
            best_val = val;
            best = x.clone();
        }
        x_prev = x;

        let n = trace.len();
        let change = (trace[n - 1] - trace[n - 2]).abs();
        if change < tol * trace[n - 1].abs().max(1.0) {
            break;
        }
    }
    Ok((best, trace))
}
