//! Kalman filter/smoother for the E-step.
//!
//! The forward pass runs the standard filter recursions with the time-1 prior
//! `x_1^0 = A pi0`, `V_1^0 = I` implied by the deterministic start `x_0 = pi0`
//! (zero initial covariance rolled through the state equation). The backward
//! pass is the Rauch smoother plus the lag-one cross-covariance recursion,
//! assembling the smoothed second moments consumed by the M-step.
//!
//! All `p`-dimensional work goes through the Woodbury identity with a
//! diagonal observation-noise covariance, so the inner solves are `d x d` and
//! nothing `p x p` is ever formed: peak memory is `O(pd + Td^2)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::model::{LdsParams, ObservationSeries};

/// Smoothed E-step moments.
///
/// `x_hat` column `t` is `E[x_t | Y]` for `t = 0..T`; `p_hat[t]` is
/// `E[x_t x_t' | Y]`; `p_cross[t-1]` is `E[x_t x_{t-1}' | Y]` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMoments {
    pub x_hat: DMatrix<f64>,
    pub p_hat: Vec<DMatrix<f64>>,
    pub p_cross: Vec<DMatrix<f64>>,
}

impl SmoothedMoments {
    pub fn state_dim(&self) -> usize {
        self.x_hat.nrows()
    }

    /// Number of observed time steps `T`.
    pub fn len(&self) -> usize {
        self.x_hat.ncols().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smoothed covariance `P_t - x_t x_t'` at time `t`.
    pub fn covariance(&self, t: usize) -> DMatrix<f64> {
        let x = self.x_hat.column(t).into_owned();
        &self.p_hat[t] - &x * x.transpose()
    }

    /// Reorders the latent coordinates in place with the same permutation
    /// applied to a parameter bundle.
    pub fn permute_states(&self, perm: &[usize]) -> SmoothedMoments {
        let d = self.state_dim();
        assert_eq!(perm.len(), d);
        let x_hat = DMatrix::from_fn(d, self.x_hat.ncols(), |i, j| self.x_hat[(perm[i], j)]);
        let reindex = |m: &DMatrix<f64>| DMatrix::from_fn(d, d, |i, j| m[(perm[i], perm[j])]);
        SmoothedMoments {
            x_hat,
            p_hat: self.p_hat.iter().map(&reindex).collect(),
            p_cross: self.p_cross.iter().map(&reindex).collect(),
        }
    }
}

/// Forward-pass output. Index `t-1` holds the time-`t` quantities for
/// `t = 1..T` (the time-0 state is deterministic and not stored).
#[derive(Debug, Clone)]
pub struct FilterState {
    /// Predicted means `x_t^{t-1}`, one column per step.
    pub x_pred: DMatrix<f64>,
    /// Filtered means `x_t^t`, one column per step.
    pub x_filt: DMatrix<f64>,
    /// Predicted covariances `V_t^{t-1}`.
    pub v_pred: Vec<DMatrix<f64>>,
    /// Filtered covariances `V_t^t`.
    pub v_filt: Vec<DMatrix<f64>>,
    /// `K_T C` from the last step, seed for the cross-covariance recursion.
    pub kc_last: DMatrix<f64>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Quantities shared by every gain in one E-step: `R^-1` and `C' R^-1 C`.
#[derive(Debug, Clone)]
pub struct GainPrecomp {
    r_inv: DVector<f64>,
    ctr_c: DMatrix<f64>,
}

impl GainPrecomp {
    pub fn new(c: &DMatrix<f64>, r_diag: &DVector<f64>) -> Result<Self> {
        if r_diag.len() != c.nrows() {
            return Err(Error::Dimension(format!(
                "R_diag length {} != C row count {}",
                r_diag.len(),
                c.nrows()
            )));
        }
        if r_diag.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
            return Err(Error::Invalid(
                "R_diag entries must be strictly positive and finite".into(),
            ));
        }
        let r_inv = r_diag.map(|r| 1.0 / r);
        let mut r_inv_c = c.clone();
        for i in 0..c.nrows() {
            let ri = r_inv[i];
            r_inv_c.row_mut(i).scale_mut(ri);
        }
        let ctr_c = c.tr_mul(&r_inv_c);
        Ok(Self { r_inv, ctr_c })
    }

    /// `C' R^-1 z` for a `p`-vector `z`; the only `O(pd)` step per gain
    /// application.
    fn project(&self, c: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_fn(z.len(), |i, _| z[i] * self.r_inv[i]);
        c.tr_mul(&scaled)
    }
}

enum GainForm {
    /// `M = V^-1 + C'R^-1C`, the textbook Woodbury inner matrix (V invertible).
    Classic { m_chol: Cholesky<f64, Dyn> },
    /// `M = I + C'R^-1C V`, a push-through rearrangement that avoids `V^-1`
    /// and therefore also covers singular `V` (including `V = 0`).
    PushThrough { m_lu: LU<f64, Dyn, Dyn> },
}

/// Applies the Kalman gain `K = V C' (C V C' + R)^-1` without forming any
/// `p x p` matrix: one `d x d` factorization up front, `O(pd)` per
/// application.
pub struct WoodburyGain<'a> {
    c: &'a DMatrix<f64>,
    precomp: &'a GainPrecomp,
    v_pred: DMatrix<f64>,
    form: GainForm,
}

/// Builds the gain operator for one time step. `precomp` carries the
/// per-E-step quantities from [`GainPrecomp::new`].
pub fn woodbury_gain<'a>(
    c: &'a DMatrix<f64>,
    precomp: &'a GainPrecomp,
    v_pred: &DMatrix<f64>,
) -> Result<WoodburyGain<'a>> {
    let d = c.ncols();
    if v_pred.nrows() != d || v_pred.ncols() != d {
        return Err(Error::Dimension(format!(
            "V_pred must be {d}x{d}, got {}x{}",
            v_pred.nrows(),
            v_pred.ncols()
        )));
    }
    // The classic inner matrix needs V^-1, which is only trustworthy when
    // V's Cholesky factor is comfortably conditioned; anything borderline
    // falls through to the push-through form, which never inverts V.
    let classic = Cholesky::new(v_pred.clone()).and_then(|v_chol| {
        let diag = v_chol.l_dirty().diagonal();
        let l_min = diag.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        let l_max = diag.iter().fold(0.0f64, |a, &v| a.max(v));
        if !(l_min > 0.0 && l_max / l_min < 1e6) {
            return None;
        }
        let m = v_chol.inverse() + &precomp.ctr_c;
        Cholesky::new(m).map(|m_chol| GainForm::Classic { m_chol })
    });
    let form = match classic {
        Some(form) => form,
        None => push_through(precomp, v_pred)?,
    };
    Ok(WoodburyGain {
        c,
        precomp,
        v_pred: v_pred.clone(),
        form,
    })
}

fn push_through(precomp: &GainPrecomp, v_pred: &DMatrix<f64>) -> Result<GainForm> {
    let d = v_pred.nrows();
    let m = DMatrix::identity(d, d) + &precomp.ctr_c * v_pred;
    let m_lu = m.lu();
    if m_lu.determinant() == 0.0 {
        return Err(Error::Numerical(
            "gain inner matrix I + C'R^-1C V is singular".into(),
        ));
    }
    Ok(GainForm::PushThrough { m_lu })
}

impl WoodburyGain<'_> {
    /// `K z` for a `p`-vector `z`.
    pub fn apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.precomp.project(self.c, z);
        let reduced = match &self.form {
            // K z = V (u - W M^-1 u) with W = C'R^-1C
            GainForm::Classic { m_chol } => &u - &self.precomp.ctr_c * m_chol.solve(&u),
            // K z = V (I + WV)^-1 u
            GainForm::PushThrough { m_lu } => m_lu
                .solve(&u)
                .ok_or_else(|| Error::Numerical("gain solve failed".into()))?,
        };
        Ok(&self.v_pred * reduced)
    }

    /// The `d x d` product `K C`, used for the covariance update.
    pub fn gain_times_c(&self) -> Result<DMatrix<f64>> {
        let w = &self.precomp.ctr_c;
        let reduced = match &self.form {
            GainForm::Classic { m_chol } => w - w * m_chol.solve(w),
            GainForm::PushThrough { m_lu } => m_lu
                .solve(w)
                .ok_or_else(|| Error::Numerical("gain solve failed".into()))?,
        };
        Ok(&self.v_pred * reduced)
    }
}

/// Forward filter recursions over the whole series.
pub fn forward_filter(params: &LdsParams, y: &ObservationSeries) -> Result<FilterState> {
    let p = params.obs_dim();
    let d = params.state_dim();
    let t_len = y.len();
    if y.obs_dim() != p {
        return Err(Error::Dimension(format!(
            "observation dimension {} != C row count {p}",
            y.obs_dim()
        )));
    }
    let finite = params
        .a
        .iter()
        .chain(params.c.iter())
        .all(|v| v.is_finite())
        && params.pi0.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::Invalid(
            "parameters contain non-finite entries".into(),
        ));
    }
    let precomp = GainPrecomp::new(&params.c, &params.r_diag)?;

    let mut x_pred = DMatrix::zeros(d, t_len);
    let mut x_filt = DMatrix::zeros(d, t_len);
    let mut v_pred = Vec::with_capacity(t_len);
    let mut v_filt = Vec::with_capacity(t_len);
    let mut kc_last = DMatrix::zeros(d, d);

    let mut prev_mean = params.pi0.clone();
    let mut prev_cov: Option<DMatrix<f64>> = None; // None encodes V_0^0 = 0

    for step in 0..t_len {
        let xp = &params.a * &prev_mean;
        let mut vp = match &prev_cov {
            Some(v) => &params.a * v * params.a.transpose() + DMatrix::identity(d, d),
            None => DMatrix::identity(d, d),
        };
        symmetrize(&mut vp);

        let gain = woodbury_gain(&params.c, &precomp, &vp).map_err(|e| at_step(e, step + 1))?;
        let innovation = y.matrix().column(step) - &params.c * &xp;
        let xf = &xp + gain.apply(&innovation).map_err(|e| at_step(e, step + 1))?;
        let kc = gain.gain_times_c().map_err(|e| at_step(e, step + 1))?;
        let mut vf = &vp - &kc * &vp;
        symmetrize(&mut vf);

        if xf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "filtered mean became non-finite at time step {}",
                step + 1
            )));
        }

        x_pred.set_column(step, &xp);
        x_filt.set_column(step, &xf);
        v_pred.push(vp);
        v_filt.push(vf.clone());
        if step + 1 == t_len {
            kc_last = kc;
        }
        prev_mean = xf;
        prev_cov = Some(vf);
    }

    Ok(FilterState {
        x_pred,
        x_filt,
        v_pred,
        v_filt,
        kc_last,
    })
}

fn at_step(e: Error, t: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{msg} (time step {t})")),
        other => other,
    }
}

/// Solves `V x = b` by Cholesky, retrying once with a trace-scaled jitter on
/// the diagonal when `V` is (numerically) singular.
fn regularized_solve(v: &DMatrix<f64>, b: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    if let Some(chol) = Cholesky::new(v.clone()) {
        return Ok(chol.solve(b));
    }
    let d = v.nrows();
    let jitter = 1e-10 * v.trace() / d as f64;
    let regularized = v + DMatrix::from_diagonal_element(d, d, jitter);
    Cholesky::new(regularized)
        .map(|chol| chol.solve(b))
        .ok_or_else(|| {
            Error::Numerical(format!(
                "predicted covariance singular in smoother at time step {t}"
            ))
        })
}

/// Backward (Rauch) smoother with the lag-one cross-covariance recursion.
///
/// `fs` must come from [`forward_filter`] on the same params and series.
pub fn backward_smooth(params: &LdsParams, fs: &FilterState) -> Result<SmoothedMoments> {
    let d = params.state_dim();
    let t_len = fs.x_filt.ncols();
    if t_len == 0 {
        return Err(Error::Invalid("filter state is empty".into()));
    }
    if fs.v_pred.len() != t_len || fs.v_filt.len() != t_len {
        return Err(Error::Dimension(
            "filter state arrays have inconsistent lengths".into(),
        ));
    }

    // Smoothed means/covariances indexed by absolute time 0..=T.
    let mut x_smooth = DMatrix::zeros(d, t_len + 1);
    let mut v_smooth: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); t_len + 1];
    let mut js: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); t_len];

    x_smooth.set_column(t_len, &fs.x_filt.column(t_len - 1).into_owned());
    v_smooth[t_len] = fs.v_filt[t_len - 1].clone();

    // Filtered quantities at absolute time t-1; time 0 is the deterministic
    // start (mean pi0, covariance 0), which makes J_0 = 0.
    for t in (1..=t_len).rev() {
        let (xf_prev, vf_prev) = if t >= 2 {
            (
                fs.x_filt.column(t - 2).into_owned(),
                fs.v_filt[t - 2].clone(),
            )
        } else {
            (params.pi0.clone(), DMatrix::zeros(d, d))
        };
        // J_{t-1} = V_{t-1}^{t-1} A' (V_t^{t-1})^-1, via V_p J' = A V_f.
        let jt = regularized_solve(&fs.v_pred[t - 1], &(&params.a * &vf_prev), t)?;
        let j = jt.transpose();

        let x_next = x_smooth.column(t).into_owned();
        let xs = &xf_prev + &j * (&x_next - fs.x_pred.column(t - 1).into_owned());
        let mut vs = &vf_prev + &j * (&v_smooth[t] - &fs.v_pred[t - 1]) * j.transpose();
        symmetrize(&mut vs);

        x_smooth.set_column(t - 1, &xs);
        v_smooth[t - 1] = vs;
        js[t - 1] = j;
    }

    // Lag-one cross covariances V_{t,t-1}^T, index t-1 for the pair (t, t-1).
    let mut v_cross: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); t_len];
    let vf_last_prev = if t_len >= 2 {
        fs.v_filt[t_len - 2].clone()
    } else {
        DMatrix::zeros(d, d)
    };
    v_cross[t_len - 1] = (DMatrix::identity(d, d) - &fs.kc_last) * &params.a * &vf_last_prev;
    for t in (1..t_len).rev() {
        // V_{t,t-1}^T = V_t^t J_{t-1}' + J_t (V_{t+1,t}^T - A V_t^t) J_{t-1}'
        let vf_t = &fs.v_filt[t - 1];
        let term = vf_t * js[t - 1].transpose()
            + &js[t] * (&v_cross[t] - &params.a * vf_t) * js[t - 1].transpose();
        v_cross[t - 1] = term;
    }

    let p_hat = (0..=t_len)
        .map(|t| {
            let x = x_smooth.column(t).into_owned();
            let mut m = &v_smooth[t] + &x * x.transpose();
            symmetrize(&mut m);
            m
        })
        .collect();
    let p_cross = (1..=t_len)
        .map(|t| {
            let xt = x_smooth.column(t).into_owned();
            let xp = x_smooth.column(t - 1).into_owned();
            &v_cross[t - 1] + xt * xp.transpose()
        })
        .collect();

    Ok(SmoothedMoments {
        x_hat: x_smooth,
        p_hat,
        p_cross,
    })
}

/// Convenience: forward filter followed by backward smoothing.
pub fn smooth(params: &LdsParams, y: &ObservationSeries) -> Result<SmoothedMoments> {
    let fs = forward_filter(params, y)?;
    backward_smooth(params, &fs)
}
