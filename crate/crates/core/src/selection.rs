//! Hyperparameter selection: latent dimension via profile likelihood on the
//! singular-value spectrum, penalty weights via held-out prediction accuracy.
//!
//! The profile likelihood models the ordered singular values as two Gaussian
//! groups split after position `q`, with group means `m1, m2` and one pooled
//! maximum-likelihood variance
//!
//! ```text
//! s2(q) = [ sum_{i<=q} (v_i - m1)^2 + sum_{i>q} (v_i - m2)^2 ] / n
//! L(q)  = -(n/2) (log(2 pi s2(q)) + 1)
//! ```
//!
//! and selects the `q` maximizing `L`. A zero pooled variance (all values
//! equal within a group split) evaluates to `+inf`, so a flat spectrum ties
//! every candidate and the smallest `q` wins.

use rayon::prelude::*;

use crate::em::{self, FitReport};
use crate::error::{Error, Result};
use crate::forecast::k_step_predict;
use crate::metrics::{prediction_scores, PredictionScores};
use crate::model::{Hyperparams, ObservationSeries};

/// Selects the split position maximizing the two-group profile likelihood.
///
/// `singular_values` must be sorted in descending order; candidates run from
/// `q = 1` to `min(d_max, n - 1)` so both groups are non-empty. Returns the
/// selected dimension and the profile value per candidate (index `q - 1`).
pub fn profile_likelihood_d(singular_values: &[f64], d_max: usize) -> Result<(usize, Vec<f64>)> {
    let n = singular_values.len();
    if n < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 singular values, got {n}"
        )));
    }
    if singular_values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Invalid(
            "singular values must be positive and finite".into(),
        ));
    }
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Invalid(
            "singular values must be sorted in descending order".into(),
        ));
    }
    if d_max == 0 {
        return Err(Error::Invalid("d_max must be >= 1".into()));
    }

    let q_max = d_max.min(n - 1);
    let mut profile = Vec::with_capacity(q_max);
    for q in 1..=q_max {
        let (head, tail) = singular_values.split_at(q);
        let m1 = head.iter().sum::<f64>() / head.len() as f64;
        let m2 = tail.iter().sum::<f64>() / tail.len() as f64;
        let ss = head.iter().map(|v| (v - m1) * (v - m1)).sum::<f64>()
            + tail.iter().map(|v| (v - m2) * (v - m2)).sum::<f64>();
        let s2 = ss / n as f64;
        let value = if s2 > 0.0 {
            -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0)
        } else {
            f64::INFINITY
        };
        profile.push(value);
    }

    let mut best_q = 1;
    for (idx, &value) in profile.iter().enumerate() {
        if value > profile[best_q - 1] {
            best_q = idx + 1;
        }
    }
    Ok((best_q, profile))
}

/// Held-out score of one penalty pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub lambda_a: f64,
    pub lambda_c: f64,
    pub scores: PredictionScores,
    /// Final penalized objective of the training fit.
    pub objective: f64,
}

/// Per-pair sweep outcome; a failed fit is recorded, not fatal.
#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Scored(PairScore),
    Failed(String),
}

/// Result of a penalty sweep.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub grid: Vec<(f64, f64)>,
    pub outcomes: Vec<PairOutcome>,
    /// Index into `grid` of the pair with the highest held-out correlation;
    /// ties prefer the smaller `lambda_c`, then the smaller `lambda_a`.
    pub best: usize,
}

impl SweepResult {
    pub fn best_pair(&self) -> (f64, f64) {
        self.grid[self.best]
    }
}

/// Log-spaced `lambda_c` grid from `lo` to `hi` with `lambda_a = ratio *
/// lambda_c`.
pub fn log_lambda_grid(lo: f64, hi: f64, points: usize, ratio: f64) -> Vec<(f64, f64)> {
    assert!(points >= 2 && lo > 0.0 && hi > lo);
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            let lc = (log_lo + t * (log_hi - log_lo)).exp();
            (ratio * lc, lc)
        })
        .collect()
}

/// Default grid: one point per decade from 1e-6 to 1e4, equal penalties.
pub fn default_lambda_grid(ratio: f64) -> Vec<(f64, f64)> {
    log_lambda_grid(1e-6, 1e4, 11, ratio)
}

fn evaluate_pair(
    train: &ObservationSeries,
    test: &nalgebra::DMatrix<f64>,
    hp_base: &Hyperparams,
    lambda_a: f64,
    lambda_c: f64,
    horizon: usize,
) -> Result<PairScore> {
    let hp = Hyperparams {
        lambda_a,
        lambda_c,
        ..hp_base.clone()
    };
    let report: FitReport = em::fit(train, &hp)?;
    let x_last = report.moments.x_hat.column(train.len()).into_owned();
    let pred = k_step_predict(&report.params.a, &report.params.c, &x_last, horizon)?;
    let scores = prediction_scores(test, &pred)?;
    let objective = *report
        .objective_trace
        .last()
        .ok_or_else(|| Error::Numerical("empty objective trace".into()))?;
    Ok(PairScore {
        lambda_a,
        lambda_c,
        scores,
        objective,
    })
}

/// Fits every grid pair on the time-prefix split of `y` and scores k-step
/// predictions against the held-out suffix. Grid points run concurrently;
/// outcomes are aggregated in grid order, so results are deterministic.
pub fn lambda_sweep(
    y: &ObservationSeries,
    hp_base: &Hyperparams,
    grid: &[(f64, f64)],
    train_fraction: f64,
    horizon: usize,
) -> Result<SweepResult> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be >= 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("penalty grid is empty".into()));
    }
    let t_len = y.len();
    let t_train = (train_fraction * t_len as f64).floor() as usize;
    if t_train < 2 {
        return Err(Error::Invalid(format!(
            "training prefix of {t_train} steps is too short"
        )));
    }
    if t_len - t_train < horizon {
        return Err(Error::Invalid(format!(
            "held-out suffix has {} steps, need at least horizon = {horizon}",
            t_len - t_train
        )));
    }

    let train = y.prefix(t_train)?;
    let test = y.matrix().columns(t_train, horizon).into_owned();

    let outcomes: Vec<PairOutcome> = grid
        .par_iter()
        .map(
            |&(la, lc)| match evaluate_pair(&train, &test, hp_base, la, lc, horizon) {
                Ok(score) => PairOutcome::Scored(score),
                Err(e) => PairOutcome::Failed(e.to_string()),
            },
        )
        .collect();

    let mut best: Option<usize> = None;
    for (idx, outcome) in outcomes.iter().enumerate() {
        let PairOutcome::Scored(score) = outcome else {
            continue;
        };
        let Some(corr) = score.scores.correlation else {
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                let PairOutcome::Scored(best_score) = &outcomes[b] else {
                    unreachable!("best always points at a scored outcome")
                };
                let best_corr = best_score.scores.correlation.unwrap();
                corr > best_corr
                    || (corr == best_corr
                        && (score.lambda_c < best_score.lambda_c
                            || (score.lambda_c == best_score.lambda_c
                                && score.lambda_a < best_score.lambda_a)))
            }
        };
        if better {
            best = Some(idx);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Numerical("no grid point produced a finite held-out correlation".into())
    })?;

    Ok(SweepResult {
        grid: grid.to_vec(),
        outcomes,
        best,
    })
}
