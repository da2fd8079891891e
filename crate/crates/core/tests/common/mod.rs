//! Shared oracles for the integration suites.
//!
//! The centerpiece is an exact joint-Gaussian conditioning oracle: it builds
//! the full covariance of the stacked vector `(x_1..x_T, y_1..y_T)` from the
//! model rollout and conditions on `Y` by Schur complement. It shares no
//! code with the filter/smoother under test.

use nalgebra::{DMatrix, DVector};
use plds_core::model::{LdsParams, ObservationSeries};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Exact posterior of the stacked states `(x_1..x_T)` given `Y`: mean as a
/// `d x T` matrix and the full `dT x dT` covariance (so lag-one blocks are
/// available too).
pub fn exact_conditioning(
    params: &LdsParams,
    y: &ObservationSeries,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = params.state_dim();
    let p = params.obs_dim();
    let t = y.len();

    // Prior mean of x_s is A^s pi0.
    let mut means = DMatrix::zeros(d, t);
    let mut cur = params.pi0.clone();
    for s in 0..t {
        cur = &params.a * cur;
        means.set_column(s, &cur);
    }

    // x_s = mean_s + sum_{j<=s} A^{s-j} w_j, so the noise-to-state map has
    // block (s, j) = A^{s-j}.
    let mut noise_map = DMatrix::zeros(d * t, d * t);
    for s in 0..t {
        let mut power = DMatrix::identity(d, d);
        for j in (0..=s).rev() {
            noise_map.view_mut((s * d, j * d), (d, d)).copy_from(&power);
            power = &params.a * power;
        }
    }
    let cov_xx = &noise_map * noise_map.transpose();

    let mut c_block = DMatrix::zeros(p * t, d * t);
    for s in 0..t {
        c_block
            .view_mut((s * p, s * d), (p, d))
            .copy_from(&params.c);
    }
    let mut cov_yy = &c_block * &cov_xx * c_block.transpose();
    for s in 0..t {
        for i in 0..p {
            cov_yy[(s * p + i, s * p + i)] += params.r_diag[i];
        }
    }
    let cov_xy = &cov_xx * c_block.transpose();

    let mut y_vec = DVector::zeros(p * t);
    let mut y_mean = DVector::zeros(p * t);
    for s in 0..t {
        y_vec.rows_mut(s * p, p).copy_from(&y.matrix().column(s));
        y_mean
            .rows_mut(s * p, p)
            .copy_from(&(&params.c * means.column(s)));
    }

    let cov_yy_inv = cov_yy.try_inverse().expect("observation covariance SPD");
    let mean_vec = {
        let mut m = DVector::zeros(d * t);
        for s in 0..t {
            m.rows_mut(s * d, d).copy_from(&means.column(s));
        }
        m + &cov_xy * &cov_yy_inv * (y_vec - y_mean)
    };
    let cov_post = &cov_xx - &cov_xy * &cov_yy_inv * cov_xy.transpose();

    let mut mean_post = DMatrix::zeros(d, t);
    for s in 0..t {
        mean_post.set_column(s, &mean_vec.rows(s * d, d));
    }
    (mean_post, cov_post)
}

pub fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn standard_normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Random parameter bundle with a spectral radius scaled below 0.9 and noise
/// diagonal in [0.3, 2.3).
pub fn random_params(rng: &mut ChaCha8Rng, p: usize, d: usize) -> LdsParams {
    let mut a = standard_normal_matrix(rng, d, d);
    let radius = plds_core::sim::spectral_radius(&a);
    if radius > 0.9 {
        a /= radius / 0.9;
    }
    LdsParams {
        a,
        c: standard_normal_matrix(rng, p, d),
        r_diag: DVector::from_fn(p, |_, _| 0.3 + 2.0 * rng.random::<f64>()),
        pi0: standard_normal_vector(rng, d),
    }
}

/// `G G'` with `G` of shape `d x rank`: PSD, singular when `rank < d`.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::zeros(d, d);
    }
    let g = standard_normal_matrix(rng, d, rank);
    let m = &g * g.transpose();
    0.5 * (&m + m.transpose())
}
