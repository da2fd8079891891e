//! k-step-ahead forecasting from fitted parameters and a final latent state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::LdsParams;

/// Point forecasts: iterates `x <- A x`, `y = C x` for `k` steps and returns
/// the `p x k` matrix of predicted observations.
pub fn k_step_predict(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    x_last: &DVector<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d || c.ncols() != d || x_last.len() != d {
        return Err(Error::Dimension(format!(
            "inconsistent shapes: A {}x{}, C {}x{}, x {}",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols(),
            x_last.len()
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("forecast horizon must be >= 1".into()));
    }
    let mut predictions = DMatrix::zeros(c.nrows(), k);
    let mut x = x_last.clone();
    for i in 0..k {
        x = a * x;
        predictions.set_column(i, &(c * &x));
    }
    Ok(predictions)
}

/// Forecast covariances over a voxel subset: propagates the state covariance
/// as `S <- A S A' + I` from the final smoothed covariance `v_last` and maps
/// it through the selected rows, `C_S S C_S' + diag(r_S)`. Restricting to a
/// subset keeps the output `s x s` instead of `p x p`.
pub fn predictive_variance(
    params: &LdsParams,
    v_last: &DMatrix<f64>,
    k: usize,
    voxel_subset: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    let d = params.state_dim();
    let p = params.obs_dim();
    if v_last.nrows() != d || v_last.ncols() != d {
        return Err(Error::Dimension(format!(
            "v_last must be {d}x{d}, got {}x{}",
            v_last.nrows(),
            v_last.ncols()
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("forecast horizon must be >= 1".into()));
    }
    if voxel_subset.is_empty() {
        return Err(Error::Invalid("voxel subset must be non-empty".into()));
    }
    if let Some(&bad) = voxel_subset.iter().find(|&&i| i >= p) {
        return Err(Error::Invalid(format!(
            "voxel index {bad} out of range 0..{p}"
        )));
    }

    let s = voxel_subset.len();
    let c_s = DMatrix::from_fn(s, d, |i, j| params.c[(voxel_subset[i], j)]);
    let r_s = DMatrix::from_fn(s, s, |i, j| {
        if i == j {
            params.r_diag[voxel_subset[i]]
        } else {
            0.0
        }
    });

    let mut state_cov = 0.5 * (v_last + v_last.transpose());
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        state_cov = &params.a * &state_cov * params.a.transpose() + DMatrix::identity(d, d);
        state_cov = 0.5 * (&state_cov + state_cov.transpose());
        out.push(&c_s * &state_cov * c_s.transpose() + &r_s);
    }
    Ok(out)
}
