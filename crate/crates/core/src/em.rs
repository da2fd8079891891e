//! Penalized EM: SVD+VAR initialization, closed-form M-step updates for the
//! noise diagonal, initial state and observation matrix, and the proximal
//! update for the transition matrix.
//!
//! The M-step consumes only the sufficient statistics accumulated from the
//! smoothed moments, so its cost is independent of `T` once the E-step has
//! run, and nothing `p x p` is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{self, SmoothedMoments};
use crate::model::{
    apply_state_permutation, canonical_permutation, penalized_objective, Hyperparams, LdsParams,
    ObservationSeries,
};
use crate::proximal::{fista_solve, QuadraticProblem};

/// Relative-change tolerance for the inner proximal solver.
const FISTA_TOL: f64 = 1e-8;

/// Sums over `t = 1..T` of the E-step moments, everything the M-step needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Diagonal of `sum_t y_t y_t'`, length `p`.
    pub s_yy_diag: DVector<f64>,
    /// `sum_t y_t x_t'`, `p x d`.
    pub s_yx: DMatrix<f64>,
    /// `sum_t P_t` for `t = 1..T`, `d x d`.
    pub s_xx: DMatrix<f64>,
    /// `sum_t P_{t-1}` for `t = 1..T`, `d x d`.
    pub s_xx_lag: DMatrix<f64>,
    /// `sum_t P_{t,t-1}` for `t = 1..T`, `d x d`.
    pub s_cross: DMatrix<f64>,
    /// Number of time steps `T`.
    pub t_len: usize,
}

/// Which ridge system the observation-matrix update solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CPenaltyMode {
    /// Penalty measured after whitening by the noise, which makes the ridge
    /// system identical across output rows: `(S_xx + lambda I) c_i = s_i`.
    #[default]
    Whitened,
    /// Raw Frobenius penalty: each row solves
    /// `(S_xx + lambda r_i I) c_i = s_i`.
    Unwhitened,
}

/// Switches that trade fidelity experiments against the default update
/// coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub c_penalty: CPenaltyMode,
    /// When false, the noise update uses the previous observation matrix
    /// instead of the freshly updated one.
    pub r_uses_new_c: bool,
    /// Relative-change stopping tolerance for the inner proximal solver;
    /// zero runs the full inner budget every M-step.
    pub inner_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            c_penalty: CPenaltyMode::Whitened,
            r_uses_new_c: true,
            inner_tol: FISTA_TOL,
        }
    }
}

/// Fit output: canonicalized parameters, objective trace and the final
/// E-step moments.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: LdsParams,
    /// Expected penalized objective recorded after each M-step, paired with
    /// the moments that step consumed.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Moments of the final E-step under the returned parameters (same
    /// canonical state ordering).
    pub moments: SmoothedMoments,
}

/// One pass over `t`, producing the five sums. The `y`-dependent pieces are
/// assembled without forming `sum_t y_t y_t'`.
pub fn accumulate_stats(moments: &SmoothedMoments, y: &ObservationSeries) -> SufficientStats {
    let d = moments.state_dim();
    let t_len = y.len();
    assert_eq!(
        moments.len(),
        t_len,
        "moments cover {} steps but series has {}",
        moments.len(),
        t_len
    );
    let p = y.obs_dim();

    let mut s_yy_diag = DVector::zeros(p);
    for col in y.matrix().column_iter() {
        for i in 0..p {
            s_yy_diag[i] += col[i] * col[i];
        }
    }

    let x_hat_obs = moments.x_hat.columns(1, t_len);
    let s_yx = y.matrix() * x_hat_obs.transpose();

    let mut s_xx = DMatrix::zeros(d, d);
    let mut s_xx_lag = DMatrix::zeros(d, d);
    let mut s_cross = DMatrix::zeros(d, d);
    for t in 1..=t_len {
        s_xx += &moments.p_hat[t];
        s_xx_lag += &moments.p_hat[t - 1];
        s_cross += &moments.p_cross[t - 1];
    }
    // The per-step moments are symmetrized already; re-symmetrize the sums to
    // kill accumulation drift.
    let s_xx = 0.5 * (&s_xx + s_xx.transpose());
    let s_xx_lag = 0.5 * (&s_xx_lag + s_xx_lag.transpose());

    SufficientStats {
        s_yy_diag,
        s_yx,
        s_xx,
        s_xx_lag,
        s_cross,
        t_len,
    }
}

/// Noise-diagonal update `r_i = (S_yy_i - <c_i, s_i>) / T`, floored at a
/// small positive multiple of the data scale so the next E-step always sees
/// an invertible noise covariance.
pub fn update_r(stats: &SufficientStats, c_new: &DMatrix<f64>, t_len: usize) -> DVector<f64> {
    assert!(t_len >= 1);
    let p = stats.s_yy_diag.len();
    let t = t_len as f64;
    let scale = stats.s_yy_diag.iter().fold(0.0f64, |acc, &v| acc.max(v)) / t;
    let floor = (1e-8 * scale).max(1e-300);
    DVector::from_fn(p, |i, _| {
        let fit = c_new.row(i).transpose().dot(&stats.s_yx.row(i).transpose());
        ((stats.s_yy_diag[i] - fit) / t).max(floor)
    })
}

/// The initial-state update is the smoothed time-0 mean.
pub fn update_pi0(moments: &SmoothedMoments) -> DVector<f64> {
    moments.x_hat.column(0).into_owned()
}

/// Ridge update of the observation matrix. In the default whitened mode one
/// `d x d` factorization is shared by all `p` rows.
pub fn update_c(
    stats: &SufficientStats,
    lambda_c: f64,
    r_diag: &DVector<f64>,
    mode: CPenaltyMode,
) -> Result<DMatrix<f64>> {
    let d = stats.s_xx.nrows();
    match mode {
        CPenaltyMode::Whitened => {
            let system = &stats.s_xx + DMatrix::from_diagonal_element(d, d, lambda_c);
            let chol = Cholesky::new(system).ok_or_else(|| {
                if lambda_c == 0.0 {
                    Error::Numerical(
                        "S_xx is singular with lambda_c = 0; a positive lambda_c regularizes the solve"
                            .into(),
                    )
                } else {
                    Error::Numerical("ridge system for C is not positive definite".into())
                }
            })?;
            Ok(chol.solve(&stats.s_yx.transpose()).transpose())
        }
        CPenaltyMode::Unwhitened => {
            let p = stats.s_yx.nrows();
            if r_diag.len() != p {
                return Err(Error::Dimension(format!(
                    "R_diag length {} != p = {p}",
                    r_diag.len()
                )));
            }
            let mut c = DMatrix::zeros(p, d);
            for i in 0..p {
                let system =
                    &stats.s_xx + DMatrix::from_diagonal_element(d, d, lambda_c * r_diag[i]);
                let chol = Cholesky::new(system).ok_or_else(|| {
                    if lambda_c == 0.0 {
                        Error::Numerical(
                            "S_xx is singular with lambda_c = 0; a positive lambda_c regularizes the solve"
                                .into(),
                        )
                    } else {
                        Error::Numerical(format!("ridge system for C row {i} is not positive definite"))
                    }
                })?;
                let sol = chol.solve(&stats.s_yx.row(i).transpose());
                c.row_mut(i).copy_from(&sol.transpose());
            }
            Ok(c)
        }
    }
}

/// Transition-matrix update: closed-form solve when unpenalized, otherwise
/// the proximal solver warm-started at the previous estimate (which
/// guarantees the substep never increases the objective).
pub fn update_a(
    stats: &SufficientStats,
    lambda_a: f64,
    a_old: &DMatrix<f64>,
    max_inner: usize,
) -> Result<DMatrix<f64>> {
    update_a_with_tol(stats, lambda_a, a_old, max_inner, FISTA_TOL)
}

/// [`update_a`] with an explicit inner stopping tolerance.
pub fn update_a_with_tol(
    stats: &SufficientStats,
    lambda_a: f64,
    a_old: &DMatrix<f64>,
    max_inner: usize,
    tol: f64,
) -> Result<DMatrix<f64>> {
    if lambda_a == 0.0 {
        let chol = Cholesky::new(stats.s_xx_lag.clone()).ok_or_else(|| {
            Error::Numerical(
                "summed lagged moment matrix is singular; cannot solve the unpenalized update"
                    .into(),
            )
        })?;
        // A S_lag = S_cross  =>  S_lag A' = S_cross'
        return Ok(chol.solve(&stats.s_cross.transpose()).transpose());
    }
    let prob = QuadraticProblem {
        gram: stats.s_xx_lag.clone(),
        linear: stats.s_cross.clone(),
        lambda: lambda_a,
    };
    let (a_new, _) = fista_solve(&prob, a_old, max_inner, tol)?;
    Ok(a_new)
}

/// Initialization output: parameters plus the rank-`d` latent proxy the SVD
/// produces, kept around because the baseline forecaster reads its last
/// column.
#[derive(Debug, Clone)]
pub struct SvdInit {
    pub params: LdsParams,
    /// `d x T` latent proxy (scaled right singular vectors).
    pub latent_proxy: DMatrix<f64>,
}

/// Rank-`d` SVD of the data plus a VAR(1) least-squares fit on the latent
/// proxy: `C0` = leading left singular vectors, `A0` the one-lag regression
/// of the proxy on itself, unit noise diagonal, zero initial state.
pub fn svd_initialize(y: &ObservationSeries, d: usize) -> Result<SvdInit> {
    let p = y.obs_dim();
    let t_len = y.len();
    if d == 0 || d > p.min(t_len) {
        return Err(Error::Invalid(format!(
            "d = {d} must lie in 1..=min(p, T) = {}",
            p.min(t_len)
        )));
    }

    let svd = y.matrix().clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;

    // Defensive ordering: indices of singular values, largest first.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).expect("finite singular values"));

    let tol = sv[order[0]] * p.max(t_len) as f64 * f64::EPSILON;
    let rank = order.iter().filter(|&&i| sv[i] > tol).count();
    if rank < d {
        return Err(Error::Invalid(format!(
            "data matrix has effective rank {rank}, cannot extract d = {d} components"
        )));
    }

    let mut c0 = DMatrix::zeros(p, d);
    let mut proxy = DMatrix::zeros(d, t_len);
    for (k, &idx) in order.iter().take(d).enumerate() {
        c0.set_column(k, &u.column(idx));
        proxy.set_row(k, &(v_t.row(idx) * sv[idx]));
    }

    let a0 = if t_len >= 2 {
        let lagged = proxy.columns(0, t_len - 1);
        let leading = proxy.columns(1, t_len - 1);
        let s_lag = lagged * lagged.transpose();
        let s_cross = leading * lagged.transpose();
        let solved = Cholesky::new(s_lag.clone()).or_else(|| {
            let jitter = 1e-10 * (1.0 + s_lag.trace() / d as f64);
            Cholesky::new(&s_lag + DMatrix::from_diagonal_element(d, d, jitter))
        });
        match solved {
            Some(chol) => chol.solve(&s_cross.transpose()).transpose(),
            None => DMatrix::zeros(d, d),
        }
    } else {
        DMatrix::zeros(d, d)
    };

    Ok(SvdInit {
        params: LdsParams {
            a: a0,
            c: c0,
            r_diag: DVector::from_element(p, 1.0),
            pi0: DVector::zeros(d),
        },
        latent_proxy: proxy,
    })
}

/// Parameter initialization (see [`svd_initialize`]).
pub fn initialize(y: &ObservationSeries, d: usize) -> Result<LdsParams> {
    svd_initialize(y, d).map(|init| init.params)
}

fn relative_change(old: &LdsParams, new: &LdsParams) -> f64 {
    let block = |a: f64, b: f64| a / (1.0 + b);
    let mut delta: f64 = 0.0;
    delta = delta.max(block((&new.a - &old.a).norm(), old.a.norm()));
    delta = delta.max(block((&new.c - &old.c).norm(), old.c.norm()));
    delta = delta.max(block((&new.r_diag - &old.r_diag).norm(), old.r_diag.norm()));
    delta = delta.max(block((&new.pi0 - &old.pi0).norm(), old.pi0.norm()));
    delta
}

/// Full penalized EM with default options.
pub fn fit(y: &ObservationSeries, hp: &Hyperparams) -> Result<FitReport> {
    fit_with_options(y, hp, &FitOptions::default())
}

/// Full penalized EM: initialize, then alternate E-step and M-step until the
/// largest relative parameter change drops below `em_tol` or the iteration
/// budget runs out. Returns canonicalized parameters with matching moments.
pub fn fit_with_options(
    y: &ObservationSeries,
    hp: &Hyperparams,
    opts: &FitOptions,
) -> Result<FitReport> {
    hp.validate()?;
    let t_len = y.len();
    if hp.d > y.obs_dim().min(t_len) {
        return Err(Error::Invalid(format!(
            "d = {} must not exceed min(p, T) = {}",
            hp.d,
            y.obs_dim().min(t_len)
        )));
    }

    let mut params = initialize(y, hp.d)?;
    let mut trace = Vec::with_capacity(hp.max_em_iters);
    let mut converged = false;
    let mut iterations = 0;
    let mut final_moments: Option<SmoothedMoments> = None;

    for iter in 1..=hp.max_em_iters {
        let moments = kalman::smooth(&params, y)?;
        let stats = accumulate_stats(&moments, y);

        let c_new = update_c(&stats, hp.lambda_c, &params.r_diag, opts.c_penalty)?;
        let r_ref = if opts.r_uses_new_c { &c_new } else { &params.c };
        let r_new = update_r(&stats, r_ref, t_len);
        let pi0_new = update_pi0(&moments);
        let a_new = update_a_with_tol(
            &stats,
            hp.lambda_a,
            &params.a,
            hp.max_inner_iters,
            opts.inner_tol,
        )?;

        let new_params = LdsParams {
            a: a_new,
            c: c_new,
            r_diag: r_new,
            pi0: pi0_new,
        };
        let objective = penalized_objective(&new_params, &moments, y, hp)?;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite ({objective}) at EM iteration {iter}"
            )));
        }
        trace.push(objective);
        iterations = iter;

        let delta = relative_change(&params, &new_params);
        params = new_params;
        if delta < hp.em_tol {
            converged = true;
            final_moments = Some(kalman::smooth(&params, y)?);
            break;
        }
        if iter == hp.max_em_iters {
            final_moments = Some(kalman::smooth(&params, y)?);
        }
    }

    let moments = final_moments.expect("loop ran at least once");
    let perm = canonical_permutation(&params.c);
    let params = apply_state_permutation(&params, &perm);
    let moments = moments.permute_states(&perm);

    Ok(FitReport {
        params,
        objective_trace: trace,
        iterations_run: iterations,
        converged,
        moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatentSeries;
    use crate::sim::{generate_params, simulate_series, SimConfig};
    use approx::assert_relative_eq;

    fn point_mass_moments(x: &LatentSeries) -> SmoothedMoments {
        let t = x.len();
        SmoothedMoments {
            x_hat: x.x.clone(),
            p_hat: (0..=t)
                .map(|s| {
                    let col = x.x.column(s).into_owned();
                    &col * col.transpose()
                })
                .collect(),
            p_cross: (1..=t)
                .map(|s| x.x.column(s).into_owned() * x.x.column(s - 1).transpose())
                .collect(),
        }
    }

    #[test]
    fn stats_single_step_and_zero_data() {
        let x = LatentSeries {
            x: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -2.0]),
        };
        let moments = point_mass_moments(&x);
        let y = ObservationSeries::new(DMatrix::zeros(3, 1)).unwrap();
        let stats = accumulate_stats(&moments, &y);
        let x1 = x.x.column(1).into_owned();
        assert_relative_eq!(stats.s_xx, &x1 * x1.transpose(), epsilon = 1e-14);
        assert_eq!(stats.s_yy_diag, DVector::zeros(3));
        assert_eq!(stats.s_yx, DMatrix::zeros(3, 2));
    }

    #[test]
    fn stats_match_dense_oracle() {
        // Naive oracle: loop over t with explicit outer products at p = 10.
        let cfg = SimConfig::new(10, 3, 15, 5);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 15, 6).unwrap();
        let moments = point_mass_moments(&x);
        let stats = accumulate_stats(&moments, &y);

        let mut s_yy = DMatrix::zeros(10, 10);
        let mut s_yx = DMatrix::zeros(10, 3);
        let mut s_xx = DMatrix::zeros(3, 3);
        let mut s_lag = DMatrix::zeros(3, 3);
        let mut s_cross = DMatrix::zeros(3, 3);
        for t in 1..=15usize {
            let yt = y.matrix().column(t - 1).into_owned();
            let xt = x.x.column(t).into_owned();
            let xp = x.x.column(t - 1).into_owned();
            s_yy += &yt * yt.transpose();
            s_yx += &yt * xt.transpose();
            s_xx += &xt * xt.transpose();
            s_lag += &xp * xp.transpose();
            s_cross += &xt * xp.transpose();
        }
        assert_relative_eq!(stats.s_yy_diag, s_yy.diagonal(), epsilon = 1e-12);
        assert_relative_eq!(stats.s_yx, s_yx, epsilon = 1e-12);
        assert_relative_eq!(stats.s_xx, s_xx, epsilon = 1e-12);
        assert_relative_eq!(stats.s_xx_lag, s_lag, epsilon = 1e-12);
        assert_relative_eq!(stats.s_cross, s_cross, epsilon = 1e-12);
    }

    #[test]
    fn noise_update_with_zero_c_is_sample_second_moment() {
        let stats = SufficientStats {
            s_yy_diag: DVector::from_vec(vec![4.0, 9.0]),
            s_yx: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            s_xx: DMatrix::identity(1, 1),
            s_xx_lag: DMatrix::identity(1, 1),
            s_cross: DMatrix::identity(1, 1),
            t_len: 2,
        };
        let r = update_r(&stats, &DMatrix::zeros(2, 1), 2);
        assert_relative_eq!(r, DVector::from_vec(vec![2.0, 4.5]), epsilon = 1e-14);
    }

    #[test]
    fn noise_update_floors_perfect_fit() {
        // y_t = C x_t exactly with point-mass moments drives the residual
        // variance to the floor.
        let x = LatentSeries {
            x: DMatrix::from_row_slice(1, 4, &[0.0, 1.0, -0.5, 2.0]),
        };
        let c = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let y_mat = &c * x.x.columns(1, 3);
        let y = ObservationSeries::new(y_mat).unwrap();
        let moments = point_mass_moments(&x);
        let stats = accumulate_stats(&moments, &y);
        let r = update_r(&stats, &c, 3);
        let scale = stats.s_yy_diag.iter().fold(0.0f64, |a, &v| a.max(v)) / 3.0;
        for i in 0..2 {
            assert_relative_eq!(r[i], 1e-8 * scale, max_relative = 1e-6);
        }
    }

    #[test]
    fn noise_update_matches_dense_bracket_oracle() {
        // Dense oracle: diag{ (1/T) sum (y y' - C x y') } formed explicitly.
        let cfg = SimConfig::new(5, 2, 20, 8);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 20, 9).unwrap();
        let moments = point_mass_moments(&x);
        let stats = accumulate_stats(&moments, &y);
        let c_new = update_c(&stats, 0.3, &params.r_diag, CPenaltyMode::Whitened).unwrap();

        let mut dense = DMatrix::zeros(5, 5);
        for t in 1..=20usize {
            let yt = y.matrix().column(t - 1).into_owned();
            let xt = x.x.column(t).into_owned();
            dense += &yt * yt.transpose() - &c_new * xt * yt.transpose();
        }
        dense /= 20.0;
        let r = update_r(&stats, &c_new, 20);
        assert_relative_eq!(r, dense.diagonal(), epsilon = 1e-12);
    }

    #[test]
    fn pi0_update_returns_smoothed_origin() {
        let x = LatentSeries {
            x: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 2.0, -0.5]),
        };
        let moments = point_mass_moments(&x);
        assert_eq!(update_pi0(&moments), DVector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn c_update_unregularized_is_least_squares() {
        let cfg = SimConfig::new(6, 2, 25, 10);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 25, 11).unwrap();
        let moments = point_mass_moments(&x);
        let stats = accumulate_stats(&moments, &y);
        let c = update_c(&stats, 0.0, &params.r_diag, CPenaltyMode::Whitened).unwrap();
        let expect = &stats.s_yx
            * stats
                .s_xx
                .clone()
                .try_inverse()
                .expect("invertible at this size");
        assert_relative_eq!(c, expect, epsilon = 1e-9);
    }

    #[test]
    fn c_update_full_shrinkage_limit() {
        let cfg = SimConfig::new(4, 2, 10, 12);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 10, 13).unwrap();
        let stats = accumulate_stats(&point_mass_moments(&x), &y);
        let c = update_c(&stats, 1e15, &params.r_diag, CPenaltyMode::Whitened).unwrap();
        assert!(c.abs().max() < 1e-10);
    }

    #[test]
    fn c_update_matches_vectorized_system_oracle() {
        // Build the pd x pd block-diagonal ridge system explicitly and solve
        // it, then compare against the row-wise solve.
        let p = 6;
        let d = 2;
        let t_len = 15;
        let lambda = 0.7;
        let cfg = SimConfig::new(p, d, t_len, 21);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, t_len, 22).unwrap();
        let stats = accumulate_stats(&point_mass_moments(&x), &y);

        let mut system = DMatrix::zeros(p * d, p * d);
        let mut rhs = DVector::zeros(p * d);
        for i in 0..p {
            for r in 0..d {
                for c in 0..d {
                    system[(i * d + r, i * d + c)] = stats.s_xx[(r, c)];
                }
                system[(i * d + r, i * d + r)] += lambda;
                rhs[i * d + r] = stats.s_yx[(i, r)];
            }
        }
        let sol = system.lu().solve(&rhs).unwrap();
        let expect = DMatrix::from_fn(p, d, |i, j| sol[i * d + j]);
        let c_new = update_c(&stats, lambda, &params.r_diag, CPenaltyMode::Whitened).unwrap();
        assert_relative_eq!(c_new, expect, epsilon = 1e-10);
    }

    #[test]
    fn c_update_satisfies_normal_equations_rowwise() {
        let cfg = SimConfig::new(7, 3, 30, 23);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 30, 24).unwrap();
        let stats = accumulate_stats(&point_mass_moments(&x), &y);
        let lambda = 0.3;
        let c = update_c(&stats, lambda, &params.r_diag, CPenaltyMode::Whitened).unwrap();
        let system = &stats.s_xx + DMatrix::from_diagonal_element(3, 3, lambda);
        for i in 0..7 {
            let rhs = stats.s_yx.row(i).transpose();
            let residual = (&system * c.row(i).transpose() - &rhs).norm();
            assert!(
                residual <= 1e-8 * rhs.norm(),
                "row {i}: residual {residual:.3e}"
            );
        }
    }

    #[test]
    fn unwhitened_mode_scales_ridge_by_row_noise() {
        let cfg = SimConfig::new(3, 2, 12, 31);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 12, 32).unwrap();
        let stats = accumulate_stats(&point_mass_moments(&x), &y);
        let r_diag = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        let lambda = 0.4;
        let c = update_c(&stats, lambda, &r_diag, CPenaltyMode::Unwhitened).unwrap();
        for i in 0..3 {
            let system = &stats.s_xx + DMatrix::from_diagonal_element(2, 2, lambda * r_diag[i]);
            let expect = system.lu().solve(&stats.s_yx.row(i).transpose()).unwrap();
            assert_relative_eq!(c.row(i).transpose(), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn a_update_identity_gram_cases() {
        let stats = SufficientStats {
            s_yy_diag: DVector::zeros(1),
            s_yx: DMatrix::zeros(1, 2),
            s_xx: DMatrix::identity(2, 2),
            s_xx_lag: DMatrix::identity(2, 2),
            s_cross: DMatrix::from_row_slice(2, 2, &[0.6, -0.2, 0.1, 0.4]),
            t_len: 1,
        };
        let a = update_a(&stats, 0.0, &DMatrix::zeros(2, 2), 10).unwrap();
        assert_relative_eq!(a, stats.s_cross, epsilon = 1e-12);

        // lambda at least the largest |entry| of the linear term zeroes A.
        let a = update_a(&stats, 0.6, &DMatrix::zeros(2, 2), 200).unwrap();
        assert!(a.abs().max() < 1e-12, "expected full shrinkage, got {a}");
    }

    #[test]
    fn a_update_satisfies_lasso_optimality() {
        // KKT residuals: grad = A S_lag - S_cross must equal -lambda sign(a)
        // on the support and stay within lambda elsewhere. The update stops
        // on relative objective change, so residuals are checked at the
        // structural scale; machine-tight optimality is covered by the
        // solver-level oracle tests.
        let cfg = SimConfig::new(8, 3, 40, 41);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 40, 42).unwrap();
        let stats = accumulate_stats(&point_mass_moments(&x), &y);
        let lambda = 0.2 * stats.s_cross.abs().max();
        let a = update_a(&stats, lambda, &DMatrix::zeros(3, 3), 20_000).unwrap();
        let grad = &a * &stats.s_xx_lag - &stats.s_cross;
        let tol = 1e-3 * lambda;
        for i in 0..3 {
            for j in 0..3 {
                let g = grad[(i, j)];
                if a[(i, j)].abs() > 1e-10 {
                    assert!(
                        (g + lambda * a[(i, j)].signum()).abs() <= tol,
                        "stationarity violated at ({i},{j}): {g}"
                    );
                } else {
                    assert!(g.abs() <= lambda + tol, "KKT violated at ({i},{j}): {g}");
                }
            }
        }
    }

    #[test]
    fn a_update_sparsity_grows_with_penalty() {
        let cfg = SimConfig::new(10, 3, 60, 51);
        let params = generate_params(&cfg).unwrap();
        let (x, y) = simulate_series(&params, 60, 52).unwrap();
        let stats = accumulate_stats(&point_mass_moments(&x), &y);
        let dense = update_a(&stats, 0.0, &DMatrix::zeros(3, 3), 10).unwrap();
        let lambda = 0.5 * stats.s_cross.abs().max();
        let sparse = update_a(&stats, lambda, &DMatrix::zeros(3, 3), 5000).unwrap();
        let nnz = |m: &DMatrix<f64>| m.iter().filter(|v| v.abs() > 1e-10).count();
        assert!(nnz(&sparse) <= nnz(&dense));
    }

    #[test]
    fn initialize_recovers_exact_low_rank_column_space() {
        // Y = C X with orthonormal C: the principal angles between the true
        // and estimated column spaces must vanish.
        let p = 12;
        let d = 3;
        let t_len = 30;
        let q = {
            // Orthonormalize a fixed random-ish matrix by QR.
            let m = DMatrix::from_fn(p, d, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
            let qr = m.qr();
            qr.q()
        };
        let x = DMatrix::from_fn(d, t_len, |i, j| ((i + 2 * j) % 7) as f64 - 3.0);
        let y = ObservationSeries::new(&q * &x).unwrap();
        let init = svd_initialize(&y, d).unwrap();
        // sin of the largest principal angle: |(I - Q Q') U|_2
        let resid = &init.params.c - &q * (q.tr_mul(&init.params.c));
        assert!(
            resid.norm() < 1e-8,
            "principal angle too large: {}",
            resid.norm()
        );
    }

    #[test]
    fn initialize_rejects_rank_deficient_data() {
        let y = ObservationSeries::new(DMatrix::from_fn(5, 8, |i, _| i as f64)).unwrap();
        let err = svd_initialize(&y, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rank"), "unexpected message: {msg}");
    }

    #[test]
    fn initialize_var_recovers_ar_coefficient() {
        // x_{t+1} = 0.9 x_t + noise observed directly: the VAR step must land
        // near 0.9 for a long series.
        let params = LdsParams {
            a: DMatrix::from_element(1, 1, 0.9),
            c: DMatrix::from_element(1, 1, 1.0),
            r_diag: DVector::from_element(1, 1e-12),
            pi0: DVector::zeros(1),
        };
        let (_, y) = simulate_series(&params, 10_000, 61).unwrap();
        let init = svd_initialize(&y, 1).unwrap();
        assert!(
            (init.params.a[(0, 0)].abs() - 0.9).abs() < 0.05,
            "VAR estimate {} too far from 0.9",
            init.params.a[(0, 0)]
        );
    }

    #[test]
    fn initialize_is_invariant_to_column_duplication() {
        let cfg = SimConfig::new(9, 2, 14, 71);
        let params = generate_params(&cfg).unwrap();
        let (_, y) = simulate_series(&params, 14, 72).unwrap();
        let doubled = {
            let m = y.matrix();
            let mut big = DMatrix::zeros(9, 28);
            big.columns_mut(0, 14).copy_from(m);
            big.columns_mut(14, 14).copy_from(m);
            ObservationSeries::new(big).unwrap()
        };
        let a = svd_initialize(&y, 2).unwrap();
        let b = svd_initialize(&doubled, 2).unwrap();
        for j in 0..2 {
            let ca = a.params.c.column(j);
            let cb = b.params.c.column(j);
            let align = ca.dot(&cb).signum();
            assert_relative_eq!(ca.into_owned(), cb.into_owned() * align, epsilon = 1e-8);
        }
    }

    #[test]
    fn noiseless_identity_system_is_an_em_fixed_point() {
        // A = I, C = I, noise at the floor, p = d: with the true parameters
        // the smoothed reconstruction C x_hat reproduces Y almost exactly,
        // and one EM update stays in that regime (low noise, near-identity
        // C, reconstruction still tight). A cold-started fit cannot be held
        // to this bar: EM approaches the zero-noise manifold sublinearly.
        let d = 4;
        let t_len = 40;
        let truth = LdsParams {
            a: DMatrix::identity(d, d),
            c: DMatrix::identity(d, d),
            r_diag: DVector::from_element(d, 1e-6),
            pi0: DVector::zeros(d),
        };
        let (_, y) = simulate_series(&truth, t_len, 81).unwrap();

        let rel_recon = |params: &LdsParams| -> (f64, SmoothedMoments) {
            let moments = kalman::smooth(params, &y).unwrap();
            let recon = &params.c * moments.x_hat.columns(1, t_len);
            ((&recon - y.matrix()).norm() / y.matrix().norm(), moments)
        };

        let (rel0, moments) = rel_recon(&truth);
        assert!(rel0 < 1e-3, "reconstruction at truth: {rel0}");

        // One full M-step from the truth's moments.
        let stats = accumulate_stats(&moments, &y);
        let c_new = update_c(&stats, 0.0, &truth.r_diag, CPenaltyMode::Whitened).unwrap();
        let r_new = update_r(&stats, &c_new, t_len);
        let a_new = update_a(&stats, 0.0, &truth.a, 30).unwrap();
        let updated = LdsParams {
            a: a_new,
            c: c_new,
            r_diag: r_new,
            pi0: update_pi0(&moments),
        };
        assert!(
            updated.r_diag.max() < 1e-4,
            "noise bounced: {}",
            updated.r_diag.max()
        );
        assert!((&updated.c - &truth.c).norm() < 0.05);
        // A moves to the sample VAR solution, truth plus O(1/sqrt(T)).
        assert!((&updated.a - &truth.a).norm() < 0.5);
        assert_relative_eq!(updated.pi0, truth.pi0, epsilon = 1e-9);

        let (rel1, _) = rel_recon(&updated);
        assert!(rel1 < 1e-3, "reconstruction after one update: {rel1}");
    }

    #[test]
    fn fit_objective_trace_is_monotone_on_small_problem() {
        let cfg = SimConfig::new(20, 2, 60, 91);
        let params = generate_params(&cfg).unwrap();
        let (_, y) = simulate_series(&params, 60, 92).unwrap();
        let hp = Hyperparams::with_penalties(2, 1e-3, 1e-3);
        let report = fit(&y, &hp).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()),
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(report.iterations_run >= 1);
        // Canonical ordering: column norms non-increasing.
        let norms: Vec<f64> = (0..2).map(|j| report.params.c.column(j).norm()).collect();
        assert!(norms[0] >= norms[1]);
    }
}
