//! EM parameter estimation for the revenue state-space model.
//!
//! The E-step is the forward filter plus RTS smoother from [`crate::lds`];
//! the M-step re-estimates `Q`, `R`, `mu`, `Omega` in closed form. Two
//! M-step variants are provided:
//!
//! * [`MStepForm::Residual`] (default): the exact maximizers of the
//!   expected complete-data log-likelihood for the fixed `A` and `c`,
//!   e.g. `R = mean[(y - c x)^2 + c P c']`. Each iteration maximizes the
//!   E-step objective, so the observed (innovation-form) log-likelihood is
//!   non-decreasing up to numerical noise.
//! * [`MStepForm::CrossMoment`]: the cross-moment updates
//!   `R = mean[y (y - c x)]` and `Q = (sum P_t - A sum P_{t-1,t}) / (T-1)`,
//!   which coincide with the exact ones only when the gain matrices are
//!   also re-estimated. With `A` and `c` held fixed they are cheap moment
//!   estimates: usable, but without the monotonicity guarantee, hence not
//!   the default.
//!
//! Both variants floor `R` and project `Q`, `Omega` back onto the PSD cone,
//! since EM on short series tends to collapse the noise estimates.

use crate::lds::{
    backward_smooth, forward_filter, psd_project, symmetrize, FilterPass, LdsError, ModelParams,
    SmoothPass, StateMatrix, SystemConstants,
};

/// Which closed-form M-step update to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MStepForm {
    #[default]
    Residual,
    CrossMoment,
}

/// Sums of smoothed second moments feeding the state-noise terms:
///
/// ```text
/// E = sum_{t=2..T} P_{t-1},  F = sum_{t=2..T} P_{t,t-1},  G = sum_{t=2..T} P_t
/// ```
///
/// All three are empty (zero) when T = 1, which removes the state term
/// from the objective for single-point series.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub e: StateMatrix,
    pub f: StateMatrix,
    pub g: StateMatrix,
}

pub fn sufficient_stats(smooth: &SmoothPass) -> SufficientStats {
    let t_len = smooth.smoothed_mean.len();
    let mut e = StateMatrix::zeros();
    let mut f = StateMatrix::zeros();
    let mut g = StateMatrix::zeros();
    for t in 1..t_len {
        e += smooth.second_moment[t - 1];
        f += smooth.cross_second_moment[t - 1];
        g += smooth.second_moment[t];
    }
    SufficientStats { e, f, g }
}

/// Closed-form parameter re-estimation from a completed smoothing pass.
///
/// `mu` becomes the smoothed initial mean and `Omega` its second moment
/// minus the mean outer product (identically `P_1^T`); `R` and `Q` follow
/// the selected [`MStepForm`]. `R` is floored at the measurement-scale
/// epsilon and `Q`, `Omega` are symmetrized and PSD-projected.
pub fn m_step(
    smooth: &SmoothPass,
    measured: &[f64],
    sys: &SystemConstants,
    form: MStepForm,
) -> ModelParams {
    let t_len = measured.len();
    assert_eq!(t_len, smooth.smoothed_mean.len());
    let stats = sufficient_stats(smooth);

    let r_raw = match form {
        MStepForm::Residual => {
            measured
                .iter()
                .zip(&smooth.smoothed_mean)
                .zip(&smooth.smoothed_cov)
                .map(|((y, x), p)| {
                    let resid = y - x[0];
                    resid * resid + p[(0, 0)]
                })
                .sum::<f64>()
                / t_len as f64
        }
        MStepForm::CrossMoment => {
            measured
                .iter()
                .zip(&smooth.smoothed_mean)
                .map(|(y, x)| y * y - y * x[0])
                .sum::<f64>()
                / t_len as f64
        }
    };
    let r = r_raw.max(ModelParams::r_floor(measured));

    let q = if t_len >= 2 {
        let raw = match form {
            MStepForm::Residual => {
                let a = sys.a();
                (stats.g - stats.f * a.transpose() - a * stats.f.transpose()
                    + a * stats.e * a.transpose())
                    / (t_len - 1) as f64
            }
            MStepForm::CrossMoment => {
                // sum P_{t-1,t} = sum (P_{t,t-1})'.
                let cross: StateMatrix = smooth
                    .cross_second_moment
                    .iter()
                    .map(StateMatrix::transpose)
                    .sum();
                (stats.g - sys.a() * cross) / (t_len - 1) as f64
            }
        };
        psd_project(&symmetrize(&raw))
    } else {
        // T = 1 carries no transition information.
        StateMatrix::identity()
    };

    let mu = smooth.smoothed_mean[0];
    let omega = psd_project(&symmetrize(
        &(smooth.second_moment[0] - mu * mu.transpose()),
    ));

    ModelParams { q, r, mu, omega }
}

/// Expected complete-data log-likelihood of the smoothed posterior under
/// `params`, evaluated term by term: the measurement trace and log-det,
/// the state trace through `E`/`F`/`G`, and the initial-state term.
///
/// For T = 1 the sufficient statistics are empty and only the measurement
/// and initial-state terms remain. Diagnostic only: this objective depends
/// on the latent estimates and is not the quantity EM drives monotonically.
pub fn expected_log_likelihood(
    params: &ModelParams,
    smooth: &SmoothPass,
    measured: &[f64],
    sys: &SystemConstants,
) -> Result<f64, LdsError> {
    let t_len = measured.len();
    assert_eq!(t_len, smooth.smoothed_mean.len());
    if params.r <= 0.0 {
        return Err(LdsError::DegenerateParams("R"));
    }

    let measurement_sum: f64 = measured
        .iter()
        .zip(&smooth.smoothed_mean)
        .zip(&smooth.smoothed_cov)
        .map(|((y, x), p)| {
            let resid = y - x[0];
            resid * resid + p[(0, 0)]
        })
        .sum();
    let mut total = -0.5 * measurement_sum / params.r - 0.5 * t_len as f64 * params.r.ln();

    if t_len >= 2 {
        let stats = sufficient_stats(smooth);
        let a = sys.a();
        let state_term = stats.g - stats.f * a.transpose() - a * stats.f.transpose()
            + a * stats.e * a.transpose();
        let q_chol = symmetrize(&params.q)
            .cholesky()
            .ok_or(LdsError::DegenerateParams("Q"))?;
        let q_inv = q_chol.inverse();
        let q_logdet = 2.0 * (0..5).map(|i| q_chol.l()[(i, i)].ln()).sum::<f64>();
        total += -0.5 * (q_inv * state_term).trace() - 0.5 * (t_len - 1) as f64 * q_logdet;
    }

    let omega_chol = symmetrize(&params.omega)
        .cholesky()
        .ok_or(LdsError::DegenerateParams("Omega"))?;
    let omega_inv = omega_chol.inverse();
    let omega_logdet = 2.0 * (0..5).map(|i| omega_chol.l()[(i, i)].ln()).sum::<f64>();
    let dev = smooth.smoothed_mean[0] - params.mu;
    let initial_term = smooth.smoothed_cov[0] + dev * dev.transpose();
    total += -0.5 * (omega_inv * initial_term).trace() - 0.5 * omega_logdet;

    Ok(total)
}

/// EM driver options. The iteration count follows the fixed 10-sweep loop
/// of the reference procedure; the innovation-form log-likelihood is the
/// convergence diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub iterations: usize,
    pub m_step_form: MStepForm,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            iterations: 10,
            m_step_form: MStepForm::default(),
        }
    }
}

/// A fitted model: final parameters, the filter/smoother passes recomputed
/// under them, and the innovation log-likelihood of every filter run
/// (`iterations + 1` values, the last one under the returned parameters).
#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: ModelParams,
    pub filter: FilterPass,
    pub smooth: SmoothPass,
    pub log_likelihood: Vec<f64>,
}

/// Alternates filtering, smoothing and the M-step for the configured number
/// of iterations. Deterministic: no randomness anywhere in the loop.
pub fn fit_em(
    measured: &[f64],
    init: ModelParams,
    sys: &SystemConstants,
    opts: &EmOptions,
) -> Result<EmFit, LdsError> {
    let mut params = init;
    let mut log_likelihood = Vec::with_capacity(opts.iterations + 1);
    let mut filter = forward_filter(&params, sys, measured)?;
    let mut smooth = backward_smooth(&filter, &params, sys);
    log_likelihood.push(filter.log_likelihood);
    for _ in 0..opts.iterations {
        params = m_step(&smooth, measured, sys, opts.m_step_form);
        filter = forward_filter(&params, sys, measured)?;
        smooth = backward_smooth(&filter, &params, sys);
        log_likelihood.push(filter.log_likelihood);
    }
    Ok(EmFit {
        params,
        filter,
        smooth,
        log_likelihood,
    })
}
