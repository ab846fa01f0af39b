//! Independent oracles shared by the integration and acceptance tests.
//!
//! Everything here deliberately avoids the recursion-based code paths under
//! test: state posteriors come from dense joint-Gaussian conditioning, the
//! expected log-likelihood from a hand-rolled matrix evaluator, and the
//! measuring sets from literal predicate scans.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sire_core::calendar::CalendarDate;
use sire_core::dataset::{CompanyProfile, Dataset, RevenueTuple};
use sire_core::lds::{ModelParams, StateMatrix, SystemConstants};
use sire_core::MeasureConfig;

pub const DIM: usize = 5;

/// Posterior means/covariances of every state given a prefix of the
/// observations, via dense conditioning of the joint Gaussian.
pub struct JointOracle {
    /// Joint mean of [x_1..x_T] (5T).
    state_mean: DVector<f64>,
    /// Joint covariance of the states (5T x 5T).
    state_cov: DMatrix<f64>,
    /// Observation means (T).
    obs_mean: DVector<f64>,
    /// Cov(y, y) (T x T).
    obs_cov: DMatrix<f64>,
    /// Cov(x, y) (5T x T).
    cross: DMatrix<f64>,
    t_len: usize,
}

impl JointOracle {
    pub fn build(params: &ModelParams, sys: &SystemConstants, t_len: usize) -> Self {
        let a = to_dmatrix(sys.a());
        let q = to_dmatrix(&params.q);
        let omega = to_dmatrix(&params.omega);

        // Marginal means and covariances of x_t.
        let mut means: Vec<DVector<f64>> = Vec::with_capacity(t_len);
        let mut vars: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
        means.push(DVector::from_iterator(DIM, params.mu.iter().copied()));
        vars.push(omega.clone());
        for t in 1..t_len {
            means.push(&a * &means[t - 1]);
            vars.push(&a * &vars[t - 1] * a.transpose() + &q);
        }

        // Cross-covariances Cov(x_t, x_s) = V_t (A^{s-t})' for t <= s.
        let mut state_cov = DMatrix::zeros(DIM * t_len, DIM * t_len);
        for t in 0..t_len {
            let mut right = vars[t].clone();
            for s in t..t_len {
                if s > t {
                    right = &right * a.transpose();
                }
                let block = right.clone();
                state_cov.view_mut((t * DIM, s * DIM), (DIM, DIM)).copy_from(&block);
                state_cov
                    .view_mut((s * DIM, t * DIM), (DIM, DIM))
                    .copy_from(&block.transpose());
            }
        }

        let mut state_mean = DVector::zeros(DIM * t_len);
        for t in 0..t_len {
            state_mean.rows_mut(t * DIM, DIM).copy_from(&means[t]);
        }

        // Observation moments through c = e_1'.
        let mut obs_mean = DVector::zeros(t_len);
        let mut obs_cov = DMatrix::zeros(t_len, t_len);
        let mut cross = DMatrix::zeros(DIM * t_len, t_len);
        for t in 0..t_len {
            obs_mean[t] = means[t][0];
            for s in 0..t_len {
                obs_cov[(t, s)] = state_cov[(t * DIM, s * DIM)];
            }
            obs_cov[(t, t)] += params.r;
            for row in 0..DIM * t_len {
                cross[(row, t)] = state_cov[(row, t * DIM)];
            }
        }

        JointOracle {
            state_mean,
            state_cov,
            obs_mean,
            obs_cov,
            cross,
            t_len,
        }
    }

    /// Posterior of state `t` (0-based) given observations y_1..y_k.
    pub fn condition(&self, y: &[f64], k: usize, t: usize) -> (DVector<f64>, DMatrix<f64>) {
        assert!(k >= 1 && k <= self.t_len && t < self.t_len);
        let obs_cov = self.obs_cov.view((0, 0), (k, k)).into_owned();
        let inv = obs_cov.try_inverse().expect("observation covariance invertible");
        let cross_t = self.cross.view((t * DIM, 0), (DIM, k)).into_owned();
        let resid =
            DVector::from_iterator(k, y[..k].iter().copied()) - self.obs_mean.rows(0, k).into_owned();
        let mean = self.state_mean.rows(t * DIM, DIM).into_owned() + &cross_t * &inv * resid;
        let cov = self.state_cov.view((t * DIM, t * DIM), (DIM, DIM)).into_owned()
            - &cross_t * &inv * cross_t.transpose();
        (mean, cov)
    }

    /// Posterior cross-covariance Cov(x_t, x_{t-1}) (0-based `t >= 1`)
    /// given all observations.
    pub fn condition_cross(&self, t: usize) -> DMatrix<f64> {
        assert!(t >= 1 && t < self.t_len);
        let k = self.t_len;
        let inv = self
            .obs_cov
            .clone()
            .try_inverse()
            .expect("observation covariance invertible");
        let cross_t = self.cross.view((t * DIM, 0), (DIM, k)).into_owned();
        let cross_prev = self.cross.view(((t - 1) * DIM, 0), (DIM, k)).into_owned();
        self.state_cov.view((t * DIM, (t - 1) * DIM), (DIM, DIM)).into_owned()
            - &cross_t * &inv * cross_prev.transpose()
    }
}

pub fn to_dmatrix(m: &StateMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(DIM, DIM, |i, j| m[(i, j)])
}

pub fn rel_err_vec(got: &[f64], want: &DVector<f64>) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / (want.norm() + 1e-12)
}

pub fn rel_err_mat(got: &StateMatrix, want: &DMatrix<f64>) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for i in 0..DIM {
        for j in 0..DIM {
            diff += (got[(i, j)] - want[(i, j)]).powi(2);
            norm += want[(i, j)].powi(2);
        }
    }
    diff.sqrt() / (norm.sqrt() + 1e-12)
}

/// Random positive-definite parameters for oracle comparisons.
pub fn random_params(rng: &mut impl Rng) -> ModelParams {
    let b = StateMatrix::from_fn(|_, _| rng.random_range(-0.5..0.5));
    let q = b * b.transpose() + StateMatrix::identity() * rng.random_range(0.05..0.3);
    let b2 = StateMatrix::from_fn(|_, _| rng.random_range(-0.5..0.5));
    let omega = b2 * b2.transpose() + StateMatrix::identity() * rng.random_range(0.1..0.5);
    ModelParams {
        q,
        r: rng.random_range(0.2..2.0),
        mu: sire_core::StateVector::new(
            rng.random_range(5.0..15.0),
            rng.random_range(5.0..15.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.5..0.5),
        ),
        omega,
    }
}

// ---------------------------------------------------------------------------
// Hand-rolled dense matrix helpers (independent of nalgebra) for the
// objective-function oracle.
// ---------------------------------------------------------------------------

pub type Mat = Vec<Vec<f64>>;

pub fn mat_zeros(n: usize) -> Mat {
    vec![vec![0.0; n]; n]
}

pub fn mat_from(m: &StateMatrix) -> Mat {
    (0..DIM)
        .map(|i| (0..DIM).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut out = mat_zeros(n);
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn mat_transpose(a: &Mat) -> Mat {
    let n = a.len();
    let mut out = mat_zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn mat_add(a: &Mat, b: &Mat, sign: f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + sign * y).collect())
        .collect()
}

pub fn mat_trace(a: &Mat) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Inverse and log-determinant via Gauss-Jordan with partial pivoting.
pub fn mat_inverse_logdet(a: &Mat) -> Option<(Mat, f64)> {
    let n = a.len();
    let mut work: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let mut logdet = 0.0;
    let mut sign = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a_, &b_| {
                work[a_][col]
                    .abs()
                    .partial_cmp(&work[b_][col].abs())
                    .unwrap()
            })
            .unwrap();
        if work[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        if pivot_row != col {
            work.swap(pivot_row, col);
            sign = -sign;
        }
        let pivot = work[col][col];
        logdet += pivot.abs().ln();
        if pivot < 0.0 {
            sign = -sign;
        }
        let inv_pivot = 1.0 / pivot;
        for j in 0..2 * n {
            work[col][j] *= inv_pivot;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = work[i][col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                let v = work[col][j];
                work[i][j] -= factor * v;
            }
        }
    }
    if sign < 0.0 {
        return None; // negative determinant: not a covariance
    }
    let inv = work.iter().map(|row| row[n..].to_vec()).collect();
    Some((inv, logdet))
}

pub fn outer(a: &[f64], b: &[f64]) -> Mat {
    a.iter()
        .map(|x| b.iter().map(|y| x * y).collect())
        .collect()
}

/// Literal term-by-term evaluation of the expected complete-data
/// log-likelihood from the smoothed posterior, written against the
/// hand-rolled matrix helpers above.
pub fn dense_expected_log_likelihood(
    params: &ModelParams,
    smooth: &sire_core::SmoothPass,
    measured: &[f64],
    sys: &SystemConstants,
) -> f64 {
    let t_len = measured.len();
    let a = mat_from(sys.a());

    // Measurement term.
    let mut meas_sum = 0.0;
    for t in 0..t_len {
        let x: Vec<f64> = smooth.smoothed_mean[t].iter().copied().collect();
        let resid = measured[t] - x[0];
        meas_sum += resid * resid + smooth.smoothed_cov[t][(0, 0)];
    }
    let mut total = -0.5 * meas_sum / params.r - 0.5 * t_len as f64 * params.r.ln();

    // State term via E, F, G sums.
    if t_len >= 2 {
        let mut e = mat_zeros(DIM);
        let mut f = mat_zeros(DIM);
        let mut g = mat_zeros(DIM);
        for t in 1..t_len {
            let x_prev: Vec<f64> = smooth.smoothed_mean[t - 1].iter().copied().collect();
            let x_cur: Vec<f64> = smooth.smoothed_mean[t].iter().copied().collect();
            e = mat_add(
                &e,
                &mat_add(&mat_from(&smooth.smoothed_cov[t - 1]), &outer(&x_prev, &x_prev), 1.0),
                1.0,
            );
            f = mat_add(
                &f,
                &mat_add(&mat_from(&smooth.cross_cov[t - 1]), &outer(&x_cur, &x_prev), 1.0),
                1.0,
            );
            g = mat_add(
                &g,
                &mat_add(&mat_from(&smooth.smoothed_cov[t]), &outer(&x_cur, &x_cur), 1.0),
                1.0,
            );
        }
        let at = mat_transpose(&a);
        let term = mat_add(
            &mat_add(&g, &mat_mul(&f, &at), -1.0),
            &mat_add(&mat_mul(&a, &mat_transpose(&f)), &mat_mul(&mat_mul(&a, &e), &at), -1.0),
            -1.0,
        );
        let (q_inv, q_logdet) = mat_inverse_logdet(&mat_from(&params.q)).expect("Q invertible");
        total += -0.5 * mat_trace(&mat_mul(&q_inv, &term))
            - 0.5 * (t_len - 1) as f64 * q_logdet;
    }

    // Initial-state term.
    let x1: Vec<f64> = smooth.smoothed_mean[0].iter().copied().collect();
    let mu: Vec<f64> = params.mu.iter().copied().collect();
    let dev: Vec<f64> = x1.iter().zip(&mu).map(|(a, b)| a - b).collect();
    let init_term = mat_add(&mat_from(&smooth.smoothed_cov[0]), &outer(&dev, &dev), 1.0);
    let (omega_inv, omega_logdet) =
        mat_inverse_logdet(&mat_from(&params.omega)).expect("Omega invertible");
    total += -0.5 * mat_trace(&mat_mul(&omega_inv, &init_term)) - 0.5 * omega_logdet;
    total
}

// ---------------------------------------------------------------------------
// Normal CDF and Kolmogorov-Smirnov distance
// ---------------------------------------------------------------------------

/// Abramowitz-Stegun 7.1.26 erf approximation (|error| < 1.5e-7).
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    0.5 * (1.0 + erf((x - mean) / (std * std::f64::consts::SQRT_2)))
}

/// Equal-weight Normal-mixture CDF centered at the pool values.
pub fn mixture_cdf(x: f64, centers: &[f64], std: f64) -> f64 {
    centers.iter().map(|c| normal_cdf(x, *c, std)).sum::<f64>() / centers.len() as f64
}

/// Two-sided KS statistic of `draws` against a CDF.
pub fn ks_statistic(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in draws.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

// ---------------------------------------------------------------------------
// Brute-force measuring-set oracle: literal predicate scans
// ---------------------------------------------------------------------------

/// Literal candidate predicate: same business key, date at or before the
/// cutoff, revenue inside the band, focus excluded unless configured.
pub fn scan_candidates<'a>(
    dataset: &'a Dataset,
    focus: &CompanyProfile,
    base: f64,
    cutoff: CalendarDate,
    cfg: &MeasureConfig,
) -> Vec<&'a RevenueTuple> {
    let mut out = Vec::new();
    for t in dataset.tuples() {
        if !cfg.include_focus && t.company_id == focus.company_id {
            continue;
        }
        let profile = dataset.profile(&t.company_id).unwrap();
        if profile.business_key() != focus.business_key() {
            continue;
        }
        if t.date > cutoff {
            continue;
        }
        if t.revenue < (1.0 - cfg.relax_r) * base || t.revenue > (1.0 + cfg.relax_r) * base {
            continue;
        }
        out.push(t);
    }
    out
}

/// Independent quantile-bucket scan over the candidate growths: the same
/// positional interpolation convention, coded as a direct walk over the
/// bucket intervals from the top down.
pub fn scan_measuring_set<'a>(
    candidates: &[&'a RevenueTuple],
    z_current: f64,
    n: usize,
) -> Vec<&'a RevenueTuple> {
    assert!(!candidates.is_empty());
    let mut zs: Vec<f64> = candidates.iter().map(|t| t.growth).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        let h = (zs.len() - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        if lo == hi {
            zs[lo]
        } else {
            zs[lo] + (h - lo as f64) * (zs[hi] - zs[lo])
        }
    };
    let bounds: Vec<f64> = (0..=n).map(|j| quantile(j as f64 / n as f64)).collect();
    let bucket = |z: f64| -> usize {
        let mut k = n; // at or above the top boundary
        for j in (1..=n).rev() {
            if z < bounds[j] {
                k = j;
            }
        }
        k
    };
    let target = bucket(z_current);
    candidates
        .iter()
        .filter(|t| bucket(t.growth) == target)
        .copied()
        .collect()
}
