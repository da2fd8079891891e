//! Ground-truth parameter generation and synthetic series simulation.
//!
//! Randomness comes from ChaCha8, a named portable generator, with one
//! substream per purpose so regenerating a parameter set never perturbs the
//! noise draws: stream 0 feeds parameter generation, stream 1 the state
//! noise, stream 2 the observation noise. Identical seeds therefore produce
//! identical output on every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{LatentSeries, LdsParams, ObservationSeries};

const PARAM_STREAM: u64 = 0;
const STATE_NOISE_STREAM: u64 = 1;
const OBS_NOISE_STREAM: u64 = 2;

/// Spectral radii above this bound get rescaled to it, keeping a margin
/// below 1 so simulated series cannot drift toward marginal stability.
const RADIUS_CAP: f64 = 0.95;

/// Configuration for synthetic data generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub p: usize,
    pub d: usize,
    pub t: usize,
    /// Fraction of transition-matrix entries truncated to zero.
    pub sparsity_level: f64,
    /// Multiple of the identity added to the raw transition matrix.
    pub diag_boost: f64,
    /// Multiple of the identity used for the observation-noise covariance.
    pub r_scale: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Defaults: 20% sparsity, unit identity boost, unit noise scale.
    pub fn new(p: usize, d: usize, t: usize, seed: u64) -> Self {
        Self {
            p,
            d,
            t,
            sparsity_level: 0.2,
            diag_boost: 1.0,
            r_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d == 0 || self.t == 0 {
            return Err(Error::Invalid("p, d and T must all be >= 1".into()));
        }
        if self.d > self.p.min(self.t) {
            return Err(Error::Invalid(format!(
                "d = {} must not exceed min(p, T) = {}",
                self.d,
                self.p.min(self.t)
            )));
        }
        if !(0.0..=1.0).contains(&self.sparsity_level) {
            return Err(Error::Invalid(format!(
                "sparsity_level must lie in [0, 1], got {}",
                self.sparsity_level
            )));
        }
        if !(self.diag_boost > 0.0 && self.diag_boost.is_finite()) {
            return Err(Error::Invalid(format!(
                "diag_boost must be positive, got {}",
                self.diag_boost
            )));
        }
        if !(self.r_scale > 0.0 && self.r_scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "r_scale must be positive, got {}",
                self.r_scale
            )));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill order, fixed so a given seed always yields the same
    // matrix.
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.norm()))
}

/// Draws ground-truth parameters:
///
/// 1. `C`: i.i.d. standard Gaussian, each column sorted ascending.
/// 2. `A`: i.i.d. standard Gaussian plus `diag_boost * I`, the
///    `round(sparsity_level * d^2)` smallest-magnitude entries zeroed, then
///    rescaled onto spectral radius <= 0.95 if it exceeds that cap.
/// 3. `R = r_scale * I` (stored as the diagonal), `pi0 = 0`.
pub fn generate_params(cfg: &SimConfig) -> Result<LdsParams> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, PARAM_STREAM);

    let mut c = standard_normal_matrix(&mut rng, cfg.p, cfg.d);
    for j in 0..cfg.d {
        let mut col: Vec<f64> = c.column(j).iter().copied().collect();
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        for (i, v) in col.into_iter().enumerate() {
            c[(i, j)] = v;
        }
    }

    let mut a = standard_normal_matrix(&mut rng, cfg.d, cfg.d);
    for i in 0..cfg.d {
        a[(i, i)] += cfg.diag_boost;
    }
    let zero_count = (cfg.sparsity_level * (cfg.d * cfg.d) as f64).round() as usize;
    if zero_count > 0 {
        let mut order: Vec<usize> = (0..cfg.d * cfg.d).collect();
        order.sort_by(|&i, &j| {
            a.as_slice()[i]
                .abs()
                .partial_cmp(&a.as_slice()[j].abs())
                .expect("finite entries")
        });
        for &idx in order.iter().take(zero_count.min(cfg.d * cfg.d)) {
            a.as_mut_slice()[idx] = 0.0;
        }
    }
    let radius = spectral_radius(&a);
    if radius > RADIUS_CAP {
        a /= radius / RADIUS_CAP;
    }

    Ok(LdsParams {
        a,
        c,
        r_diag: DVector::from_element(cfg.p, cfg.r_scale),
        pi0: DVector::zeros(cfg.d),
    })
}

/// Rolls the model forward for `t_len` steps: `x_0 = pi0` exactly, then
/// `x_{t+1} = A x_t + w_t` with `w_t ~ N(0, I)` and `y_t = C x_t + v_t` with
/// `v_t ~ N(0, diag(r))`. Deterministic given the seed.
pub fn simulate_series(
    params: &LdsParams,
    t_len: usize,
    seed: u64,
) -> Result<(LatentSeries, ObservationSeries)> {
    let p = params.obs_dim();
    let d = params.state_dim();
    let violations = crate::model::validate_params(params, p, d);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations.join("; ")));
    }
    if t_len == 0 {
        return Err(Error::Invalid("T must be >= 1".into()));
    }

    let mut state_rng = stream_rng(seed, STATE_NOISE_STREAM);
    let mut obs_rng = stream_rng(seed, OBS_NOISE_STREAM);

    let mut x = DMatrix::zeros(d, t_len + 1);
    x.set_column(0, &params.pi0);
    for t in 1..=t_len {
        let noise = DVector::from_fn(d, |_, _| state_rng.sample(StandardNormal));
        let next = &params.a * x.column(t - 1) + noise;
        x.set_column(t, &next);
    }

    let mut y = DMatrix::zeros(p, t_len);
    for t in 1..=t_len {
        let mut col = &params.c * x.column(t);
        for i in 0..p {
            let v: f64 = obs_rng.sample(StandardNormal);
            col[i] += v * params.r_diag[i].sqrt();
        }
        y.set_column(t - 1, &col);
    }

    Ok((LatentSeries { x }, ObservationSeries::new(y)?))
}
