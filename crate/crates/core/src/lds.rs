//! The 5-state linear dynamical system behind the revenue model.
//!
//! State vector (in revenue units; velocity and acceleration per period):
//!
//! ```text
//! x_t = [y_t, x_t, v_t, a_t, d_t]
//!        measured revenue, latent revenue, velocity, acceleration,
//!        unit measurement error
//! ```
//!
//! Transitions come from a second-order Taylor step of the latent revenue
//! with constant acceleration and a static unit measurement error, observed
//! through `c = [1, 0, 0, 0, 0]`. Only the noise covariances `Q`, `R` and
//! the initial state `mu`, `Omega` are free; `A` and `c` are constants.
//!
//! This module holds the constants, parameter container and initialization,
//! the forward Kalman filter with its innovation log-likelihood, and the
//! RTS backward smoother with lag-one cross-covariances. The EM loop lives
//! in [`crate::em`].

use nalgebra::{Matrix5, RowVector5, Vector5};
use serde::{Deserialize, Serialize};

/// State dimension.
pub const STATE_DIM: usize = 5;

/// Index of the latent revenue inside the state vector (the "second
/// element" extracted as the forecast).
pub const LATENT_REVENUE: usize = 1;

pub type StateVector = Vector5<f64>;
pub type StateMatrix = Matrix5<f64>;

/// Absolute floor under the relative measurement-noise floor, for
/// all-zero measurement series.
const EPS_R_ABS: f64 = 1e-12;

/// Relative floor on `R`: `1e-9 * rms(y)^2`.
const EPS_R_REL: f64 = 1e-9;

/// The fixed transition matrix `A` and measurement vector `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConstants {
    a: StateMatrix,
    c: RowVector5<f64>,
}

impl Default for SystemConstants {
    fn default() -> Self {
        SystemConstants::new()
    }
}

impl SystemConstants {
    #[rustfmt::skip]
    pub fn new() -> Self {
        SystemConstants {
            a: Matrix5::new(
                0.0, 1.0, 1.0, 0.5, 1.0,
                0.0, 1.0, 1.0, 0.5, 0.0,
                0.0, 0.0, 1.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 0.0, 1.0,
            ),
            c: RowVector5::new(1.0, 0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn a(&self) -> &StateMatrix {
        &self.a
    }

    pub fn c(&self) -> &RowVector5<f64> {
        &self.c
    }

    /// `c x`, the measured-revenue component of a state.
    pub fn observe(&self, x: &StateVector) -> f64 {
        x[0]
    }
}

/// Optimizable parameters: state noise `Q`, measurement noise `R` (scalar),
/// initial mean `mu` and covariance `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub q: StateMatrix,
    pub r: f64,
    pub mu: StateVector,
    pub omega: StateMatrix,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdsError {
    #[error("insufficient history: need at least {required} booked points, got {got}")]
    InsufficientHistory { required: usize, got: usize },
    #[error("booked ({booked}) and measured ({measured}) series lengths differ")]
    LengthMismatch { booked: usize, measured: usize },
    #[error("numerical degeneracy at step {t}: innovation variance {variance} not positive")]
    NumericalDegeneracy { t: usize, variance: f64 },
    #[error("degenerate parameters: {0} is not invertible")]
    DegenerateParams(&'static str),
    #[error("empty measurement series")]
    EmptySeries,
}

impl ModelParams {
    /// Floor for `R` given the measurement scale.
    pub fn r_floor(measured: &[f64]) -> f64 {
        let n = measured.len().max(1) as f64;
        let ms = measured.iter().map(|y| y * y).sum::<f64>() / n;
        (EPS_R_REL * ms).max(EPS_R_ABS)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ParamsJson::from(self)).expect("params serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let parsed: ParamsJson = serde_json::from_value(value.clone())?;
        Ok(parsed.into())
    }
}

/// Row-major JSON mirror of [`ModelParams`].
#[derive(Serialize, Deserialize)]
struct ParamsJson {
    q: Vec<Vec<f64>>,
    r: f64,
    mu: Vec<f64>,
    omega: Vec<Vec<f64>>,
}

fn matrix_rows(m: &StateMatrix) -> Vec<Vec<f64>> {
    (0..STATE_DIM)
        .map(|i| (0..STATE_DIM).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>]) -> StateMatrix {
    StateMatrix::from_fn(|i, j| rows[i][j])
}

impl From<&ModelParams> for ParamsJson {
    fn from(p: &ModelParams) -> Self {
        ParamsJson {
            q: matrix_rows(&p.q),
            r: p.r,
            mu: p.mu.iter().copied().collect(),
            omega: matrix_rows(&p.omega),
        }
    }
}

impl From<ParamsJson> for ModelParams {
    fn from(j: ParamsJson) -> Self {
        ModelParams {
            q: rows_matrix(&j.q),
            r: j.r,
            mu: StateVector::from_fn(|i, _| j.mu[i]),
            omega: rows_matrix(&j.omega),
        }
    }
}

/// Initial parameters: `Q = Omega = I`, `R = 1`, and `mu` from the first
/// three booked points plus the mean measurement offset.
///
/// `booked` and `measured` are aligned element-wise (`d_t = y_t - u_t`);
/// the mean of `d_t` seeds both the measured-revenue and unit-error
/// components of `mu`. At least three booked points are required for the
/// velocity and acceleration differences.
pub fn init_params(booked: &[f64], measured: &[f64]) -> Result<ModelParams, LdsError> {
    if booked.len() < 3 {
        return Err(LdsError::InsufficientHistory {
            required: 3,
            got: booked.len(),
        });
    }
    if booked.len() != measured.len() {
        return Err(LdsError::LengthMismatch {
            booked: booked.len(),
            measured: measured.len(),
        });
    }
    let d_bar = measured
        .iter()
        .zip(booked)
        .map(|(y, u)| y - u)
        .sum::<f64>()
        / measured.len() as f64;
    let (u0, u1, u2) = (booked[0], booked[1], booked[2]);
    let mu = Vector5::new(
        u0 + d_bar,
        u0,
        u1 - u0,
        ((u2 - u1) - (u1 - u0)) / 2.0,
        d_bar,
    );
    Ok(ModelParams {
        q: StateMatrix::identity(),
        r: 1.0,
        mu,
        omega: StateMatrix::identity(),
    })
}

/// Per-step output of the forward filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPass {
    /// `x_t^{t-1}` for t = 1..T (`mu` at t = 1).
    pub predicted_mean: Vec<StateVector>,
    /// `P_t^{t-1}` for t = 1..T (`Omega` at t = 1).
    pub predicted_cov: Vec<StateMatrix>,
    /// Kalman gain `K_t`.
    pub gain: Vec<StateVector>,
    /// `x_t^t`.
    pub filtered_mean: Vec<StateVector>,
    /// `P_t^t`.
    pub filtered_cov: Vec<StateMatrix>,
    /// Accumulated Gaussian innovation log-likelihood
    /// `sum_t log N(y_t; c x_t^{t-1}, c P_t^{t-1} c' + R)`.
    pub log_likelihood: f64,
}

impl FilterPass {
    pub fn len(&self) -> usize {
        self.filtered_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered_mean.is_empty()
    }
}

pub(crate) fn symmetrize(m: &StateMatrix) -> StateMatrix {
    (m + m.transpose()) * 0.5
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues at zero.
pub fn psd_project(m: &StateMatrix) -> StateMatrix {
    let sym = symmetrize(m);
    let eigen = nalgebra::SymmetricEigen::new(sym);
    if eigen.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = Vector5::from_fn(|i, _| eigen.eigenvalues[i].max(0.0));
    let recomposed =
        eigen.eigenvectors * StateMatrix::from_diagonal(&clipped) * eigen.eigenvectors.transpose();
    symmetrize(&recomposed)
}

/// One Kalman predict/update step from the previous filtered state.
///
/// Returns `(x_t^{t-1}, P_t^{t-1}, K_t, x_t^t, P_t^t, step log-likelihood)`.
pub(crate) fn kalman_step(
    prev_mean: &StateVector,
    prev_cov: &StateMatrix,
    y: f64,
    params: &ModelParams,
    sys: &SystemConstants,
    t: usize,
) -> Result<(StateVector, StateMatrix, StateVector, StateVector, StateMatrix, f64), LdsError> {
    let pred_mean = sys.a() * prev_mean;
    let pred_cov = symmetrize(&(sys.a() * prev_cov * sys.a().transpose() + params.q));
    update_step(&pred_mean, &pred_cov, y, params, t)
}

/// Measurement update given a predicted state.
fn update_step(
    pred_mean: &StateVector,
    pred_cov: &StateMatrix,
    y: f64,
    params: &ModelParams,
    t: usize,
) -> Result<(StateVector, StateMatrix, StateVector, StateVector, StateMatrix, f64), LdsError> {
    // c = e_1', so c P c' is the (0,0) entry and P c' the first column.
    let innovation_var = pred_cov[(0, 0)] + params.r;
    if innovation_var <= 0.0 || !innovation_var.is_finite() {
        return Err(LdsError::NumericalDegeneracy {
            t,
            variance: innovation_var,
        });
    }
    let gain = pred_cov.column(0) / innovation_var;
    let innovation = y - pred_mean[0];
    let filt_mean = pred_mean + gain * innovation;
    let filt_cov = symmetrize(&(pred_cov - gain * pred_cov.row(0)));
    let ll = -0.5
        * ((2.0 * std::f64::consts::PI).ln()
            + innovation_var.ln()
            + innovation * innovation / innovation_var);
    Ok((*pred_mean, *pred_cov, gain, filt_mean, filt_cov, ll))
}

/// Forward Kalman filter over `y_1..y_T` with initial settings
/// `x_1^0 = mu`, `P_1^0 = Omega`.
pub fn forward_filter(
    params: &ModelParams,
    sys: &SystemConstants,
    measured: &[f64],
) -> Result<FilterPass, LdsError> {
    if measured.is_empty() {
        return Err(LdsError::EmptySeries);
    }
    let t_len = measured.len();
    let mut pass = FilterPass {
        predicted_mean: Vec::with_capacity(t_len),
        predicted_cov: Vec::with_capacity(t_len),
        gain: Vec::with_capacity(t_len),
        filtered_mean: Vec::with_capacity(t_len),
        filtered_cov: Vec::with_capacity(t_len),
        log_likelihood: 0.0,
    };
    for (i, &y) in measured.iter().enumerate() {
        let step = if i == 0 {
            update_step(&params.mu, &symmetrize(&params.omega), y, params, 1)?
        } else {
            kalman_step(
                &pass.filtered_mean[i - 1],
                &pass.filtered_cov[i - 1],
                y,
                params,
                sys,
                i + 1,
            )?
        };
        let (pred_mean, pred_cov, gain, filt_mean, filt_cov, ll) = step;
        pass.predicted_mean.push(pred_mean);
        pass.predicted_cov.push(pred_cov);
        pass.gain.push(gain);
        pass.filtered_mean.push(filt_mean);
        pass.filtered_cov.push(filt_cov);
        pass.log_likelihood += ll;
    }
    Ok(pass)
}

/// Output of the backward RTS smoother, including the second moments used
/// by the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothPass {
    /// Smoother gain `J_t` for t = 1..T-1.
    pub gain: Vec<StateMatrix>,
    /// `x_t^T`.
    pub smoothed_mean: Vec<StateVector>,
    /// `P_t^T`.
    pub smoothed_cov: Vec<StateMatrix>,
    /// Lag-one smoothed cross-covariance `P_{t,t-1}^T` for t = 2..T
    /// (index `i` holds t = i + 2).
    pub cross_cov: Vec<StateMatrix>,
    /// Second moment `P_t = P_t^T + x_t^T (x_t^T)'`.
    pub second_moment: Vec<StateMatrix>,
    /// Cross second moment `P_{t,t-1} = P_{t,t-1}^T + x_t^T (x_{t-1}^T)'`
    /// for t = 2..T.
    pub cross_second_moment: Vec<StateMatrix>,
    /// Number of smoother steps where the predicted covariance was singular
    /// and a pseudo-inverse was used for the gain.
    pub pinv_fallbacks: usize,
}

/// Solves `J = B * M^{-1}` for symmetric PSD `M`, preferring a Cholesky
/// solve and falling back to a pseudo-inverse when `M` is singular (the
/// transition matrix has an all-zero first column, so predicted covariances
/// can lose rank when `Q` does). Returns `(J, used_pinv)`.
fn gain_solve(b: &StateMatrix, m: &StateMatrix) -> (StateMatrix, bool) {
    let sym = symmetrize(m);
    if let Some(chol) = sym.cholesky() {
        // J' = M^{-1} B'
        let jt = chol.solve(&b.transpose());
        return (jt.transpose(), false);
    }
    let pinv = sym
        .pseudo_inverse(1e-12)
        .unwrap_or_else(|_| StateMatrix::zeros());
    (b * pinv, true)
}

/// Backward RTS smoothing over a completed filter pass, with lag-one
/// cross-covariances and the second moments needed by the M-step.
pub fn backward_smooth(
    filter: &FilterPass,
    params: &ModelParams,
    sys: &SystemConstants,
) -> SmoothPass {
    let t_len = filter.len();
    assert!(t_len > 0, "smoother needs a non-empty filter pass");
    let _ = params;

    let mut smoothed_mean = vec![StateVector::zeros(); t_len];
    let mut smoothed_cov = vec![StateMatrix::zeros(); t_len];
    let mut gain = vec![StateMatrix::zeros(); t_len.saturating_sub(1)];
    let mut pinv_fallbacks = 0;

    smoothed_mean[t_len - 1] = filter.filtered_mean[t_len - 1];
    smoothed_cov[t_len - 1] = filter.filtered_cov[t_len - 1];

    for t in (1..t_len).rev() {
        // J_{t-1} = P_{t-1}^{t-1} A' (P_t^{t-1})^{-1}
        let b = filter.filtered_cov[t - 1] * sys.a().transpose();
        let (j, used_pinv) = gain_solve(&b, &filter.predicted_cov[t]);
        if used_pinv {
            pinv_fallbacks += 1;
        }
        smoothed_mean[t - 1] = filter.filtered_mean[t - 1]
            + j * (smoothed_mean[t] - sys.a() * filter.filtered_mean[t - 1]);
        smoothed_cov[t - 1] = symmetrize(
            &(filter.filtered_cov[t - 1]
                + j * (smoothed_cov[t] - filter.predicted_cov[t]) * j.transpose()),
        );
        gain[t - 1] = j;
    }

    // Lag-one cross-covariances, seeded at the tail with
    // P_{T,T-1}^T = (I - K_T c) A P_{T-1}^{T-1}.
    let mut cross_cov = vec![StateMatrix::zeros(); t_len.saturating_sub(1)];
    if t_len > 1 {
        let k_last = filter.gain[t_len - 1];
        let i_minus_kc = StateMatrix::identity() - k_last * sys.c();
        cross_cov[t_len - 2] = i_minus_kc * sys.a() * filter.filtered_cov[t_len - 2];
        // P_{t-1,t-2}^T = P_{t-1}^{t-1} J_{t-2}'
        //                 + J_{t-1} (P_{t,t-1}^T - A P_{t-1}^{t-1}) J_{t-2}'
        for t in (2..t_len).rev() {
            cross_cov[t - 2] = filter.filtered_cov[t - 1] * gain[t - 2].transpose()
                + gain[t - 1]
                    * (cross_cov[t - 1] - sys.a() * filter.filtered_cov[t - 1])
                    * gain[t - 2].transpose();
        }
    }

    let second_moment: Vec<StateMatrix> = (0..t_len)
        .map(|t| smoothed_cov[t] + smoothed_mean[t] * smoothed_mean[t].transpose())
        .collect();
    let cross_second_moment: Vec<StateMatrix> = (1..t_len)
        .map(|t| cross_cov[t - 1] + smoothed_mean[t] * smoothed_mean[t - 1].transpose())
        .collect();

    SmoothPass {
        gain,
        smoothed_mean,
        smoothed_cov,
        cross_cov,
        second_moment,
        cross_second_moment,
        pinv_fallbacks,
    }
}
