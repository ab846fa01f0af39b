//! Revenue extrapolation: measure history, fit, roll the horizon, smooth
//! globally, and aggregate stochastic trials into mean-and-margin bands.
//!
//! One trial walks the full pipeline for a focus company:
//!
//! 1. measure historical revenues against the peer panel (base = booked),
//! 2. initialize and fit the state-space model by EM,
//! 3. seed the horizon by filtering the already-measured next revenue,
//! 4. alternate measuring (base = filtered latent revenue) and filtering
//!    across the horizon,
//! 5. smooth the whole timeline backwards and extract the latent revenue.
//!
//! Trials are independent given their RNG stream; aggregating `M` of them
//! gives the per-step mean and the margin
//! `beta = z * sqrt(sum (x - mean)^2 / (M (M-1)))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::calendar::CalendarDate;
use crate::dataset::{CompanyId, CompanyProfile, Dataset};
use crate::em::{fit_em, EmOptions};
use crate::lds::{
    backward_smooth, init_params, kalman_step, FilterPass, LdsError, ModelParams, StateMatrix,
    StateVector, SystemConstants, LATENT_REVENUE,
};
use crate::measurement::{
    measure_with_provenance, MeasureConfig, MeasureError, MeasurementDraw, PeerRecord,
    GROWTH_FLOOR,
};

/// Forecast tuning: horizon length, trial count, band width and seed.
#[derive(Debug, Clone)]
pub struct ForecastConfig {
    /// Steps to extrapolate (T').
    pub horizon: usize,
    /// Trial count M; at least 2 (the margin divides by M(M-1)).
    pub trials: usize,
    /// Z value of the band: 1.96 for 95%, 1.645 for 90%.
    pub z_value: f64,
    pub seed: u64,
    pub em: EmOptions,
    pub measure: MeasureConfig,
    /// Refit the model inside every trial (default). When off, history is
    /// measured and the model fitted once; trials only re-randomize the
    /// horizon sampling.
    pub refit_per_trial: bool,
}

impl ForecastConfig {
    pub fn new(horizon: usize, seed: u64, measure: MeasureConfig) -> Self {
        ForecastConfig {
            horizon,
            trials: 10,
            z_value: 1.96,
            seed,
            em: EmOptions::default(),
            measure,
            refit_per_trial: true,
        }
    }

    fn validate(&self, dataset: &Dataset) -> Result<(), ForecastError> {
        if self.horizon < 1 {
            return Err(ForecastError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.trials < 2 {
            return Err(ForecastError::InvalidConfig(
                "at least 2 trials are required for a margin".into(),
            ));
        }
        if self.z_value <= 0.0 {
            return Err(ForecastError::InvalidConfig("z_value must be > 0".into()));
        }
        self.measure
            .validate()
            .map_err(|e| ForecastError::InvalidConfig(e.to_string()))?;
        if self.measure.periodicity != dataset.periodicity() {
            return Err(ForecastError::PeriodicityMismatch {
                dataset: dataset.periodicity(),
                config: self.measure.periodicity,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForecastError {
    #[error("invalid forecast config: {0}")]
    InvalidConfig(String),
    #[error("dataset periodicity {dataset} does not match configured periodicity {config}")]
    PeriodicityMismatch { dataset: u32, config: u32 },
    #[error("focus series and dataset granularity differ")]
    GranularityMismatch,
    #[error("measuring failed at time {time_index} (cutoff {cutoff}): {source}")]
    Measurement {
        time_index: usize,
        cutoff: String,
        source: MeasureError,
    },
    #[error(transparent)]
    Lds(#[from] LdsError),
    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<ForecastError>,
    },
}

/// One measuring event: which timeline position was measured, under which
/// cutoff, and from which peers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementEvent {
    /// 1-based timeline index of the measured revenue.
    pub time_index: usize,
    /// Cutoff date of the peer filters for this draw.
    pub cutoff: CalendarDate,
    pub draw: MeasurementDraw,
}

/// Soft-failure counters accumulated during a trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrialWarnings {
    /// Latent revenue was non-positive when needed as a measuring base.
    pub negative_latent: usize,
    /// Growth denominator predates the timeline; earliest latent used.
    pub growth_fallback: usize,
    /// Smoothed outputs floored to keep the trajectory positive.
    pub floored_outputs: usize,
}

impl TrialWarnings {
    fn absorb(&mut self, other: &TrialWarnings) {
        self.negative_latent += other.negative_latent;
        self.growth_fallback += other.growth_fallback;
        self.floored_outputs += other.floored_outputs;
    }
}

/// One stochastic trajectory with its provenance.
#[derive(Debug, Clone)]
pub struct TrialRun {
    /// Latent revenue at horizon steps 1..T'.
    pub trajectory: Vec<f64>,
    /// Smoothed latent revenue over the historical timeline (imputation
    /// by-product).
    pub smoothed_history: Vec<f64>,
    pub events: Vec<MeasurementEvent>,
    pub warnings: TrialWarnings,
    /// Innovation log-likelihood per EM filter pass of this trial's fit.
    pub fit_log_likelihood: Vec<f64>,
    /// Parameters the trial's horizon was rolled with.
    pub fitted: ModelParams,
    /// The complete measured sequence y_1..y_{T+T'} the trial saw.
    pub measured: Vec<f64>,
}

/// Growth estimate for a horizon index `tau` (1-based, beyond the booked
/// range): latent over booked when the lagged booked point exists, latent
/// over latent otherwise, and the earliest latent value once the lag
/// reaches past the timeline start. Returns the growth and whether that
/// last fallback fired.
pub fn predict_growth(
    latent: &[f64],
    booked: &[f64],
    tau: usize,
    periodicity: u32,
) -> (f64, bool) {
    assert!(tau > booked.len(), "tau must lie beyond the booked range");
    assert!(tau <= latent.len());
    let numerator = latent[tau - 1].max(GROWTH_FLOOR);
    let p = periodicity as usize;
    let (denominator, fallback) = if tau > p {
        let idx = tau - p;
        if idx <= booked.len() {
            (booked[idx - 1], false)
        } else {
            (latent[idx - 1], false)
        }
    } else {
        (latent[0], true)
    };
    (numerator / denominator.max(GROWTH_FLOOR), fallback)
}

struct HistoryMeasures {
    /// y_1..y_T aligned with the booked series.
    measured: Vec<f64>,
    /// y_{T+1}, measured from the last booked point; seeds the horizon.
    seed_measurement: f64,
    events: Vec<MeasurementEvent>,
}

/// Measures y_2..y_{T+1} from booked bases u_1..u_T, then back-fills y_1
/// by reusing the first defined measurement offset (d_1 := d_2).
fn measure_history(
    dataset: &Dataset,
    focus: &CompanyProfile,
    series: &[(CalendarDate, f64)],
    cfg: &ForecastConfig,
    rng: &mut ChaCha8Rng,
) -> Result<HistoryMeasures, ForecastError> {
    let t_len = series.len();
    let p = cfg.measure.periodicity as usize;
    let mut events = Vec::with_capacity(t_len);
    // measured_next[i] = y_{i+2}, drawn with base u_{i+1}.
    let mut measured_next = Vec::with_capacity(t_len);
    for (i, (date, base)) in series.iter().enumerate() {
        let z_current = if i >= p {
            Some(series[i].1 / series[i - p].1)
        } else {
            None
        };
        let draw = measure_with_provenance(
            dataset,
            focus,
            *base,
            z_current,
            *date,
            &cfg.measure,
            rng,
        )
        .map_err(|source| ForecastError::Measurement {
            time_index: i + 2,
            cutoff: date.to_string(),
            source,
        })?;
        events.push(MeasurementEvent {
            time_index: i + 2,
            cutoff: *date,
            draw: draw.clone(),
        });
        measured_next.push(draw.measured_y);
    }
    // d_1 reuses d_2 = y_2 - u_2; with T = 1 there is no u_2 and the
    // offset degenerates to zero.
    let d2 = if t_len >= 2 {
        measured_next[0] - series[1].1
    } else {
        0.0
    };
    let mut measured = Vec::with_capacity(t_len);
    measured.push(series[0].1 + d2);
    measured.extend_from_slice(&measured_next[..t_len - 1]);
    Ok(HistoryMeasures {
        measured,
        seed_measurement: measured_next[t_len - 1],
        events,
    })
}

/// Filter quantities over the unified timeline 1..T+T', grown step by step
/// during the horizon roll-out.
struct Timeline {
    predicted_mean: Vec<StateVector>,
    predicted_cov: Vec<StateMatrix>,
    gain: Vec<StateVector>,
    filtered_mean: Vec<StateVector>,
    filtered_cov: Vec<StateMatrix>,
}

impl Timeline {
    fn from_filter(filter: &FilterPass) -> Self {
        Timeline {
            predicted_mean: filter.predicted_mean.clone(),
            predicted_cov: filter.predicted_cov.clone(),
            gain: filter.gain.clone(),
            filtered_mean: filter.filtered_mean.clone(),
            filtered_cov: filter.filtered_cov.clone(),
        }
    }

    fn push(
        &mut self,
        step: (StateVector, StateMatrix, StateVector, StateVector, StateMatrix, f64),
    ) {
        self.predicted_mean.push(step.0);
        self.predicted_cov.push(step.1);
        self.gain.push(step.2);
        self.filtered_mean.push(step.3);
        self.filtered_cov.push(step.4);
    }

    fn latent(&self) -> Vec<f64> {
        self.filtered_mean.iter().map(|x| x[LATENT_REVENUE]).collect()
    }

    fn into_filter_pass(self) -> FilterPass {
        FilterPass {
            predicted_mean: self.predicted_mean,
            predicted_cov: self.predicted_cov,
            gain: self.gain,
            filtered_mean: self.filtered_mean,
            filtered_cov: self.filtered_cov,
            log_likelihood: 0.0,
        }
    }
}

/// Runs one full trial: measure, fit, roll out, smooth, extract.
pub fn forecast_one_trajectory(
    dataset: &Dataset,
    focus: &CompanyProfile,
    series: &[(CalendarDate, f64)],
    cfg: &ForecastConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrialRun, ForecastError> {
    cfg.validate(dataset)?;
    check_series(dataset, series)?;
    let history = measure_history(dataset, focus, series, cfg, rng)?;
    let booked: Vec<f64> = series.iter().map(|(_, u)| *u).collect();
    let init = init_params(&booked, &history.measured)?;
    let sys = SystemConstants::new();
    let fit = fit_em(&history.measured, init, &sys, &cfg.em)?;
    roll_horizon(dataset, focus, series, cfg, &sys, fit, history, rng)
}

fn check_series(
    dataset: &Dataset,
    series: &[(CalendarDate, f64)],
) -> Result<(), ForecastError> {
    if series.len() < 3 {
        return Err(LdsError::InsufficientHistory {
            required: 3,
            got: series.len(),
        }
        .into());
    }
    if series
        .iter()
        .any(|(d, _)| d.granularity() != dataset.granularity())
    {
        return Err(ForecastError::GranularityMismatch);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn roll_horizon(
    dataset: &Dataset,
    focus: &CompanyProfile,
    series: &[(CalendarDate, f64)],
    cfg: &ForecastConfig,
    sys: &SystemConstants,
    fit: crate::em::EmFit,
    history: HistoryMeasures,
    rng: &mut ChaCha8Rng,
) -> Result<TrialRun, ForecastError> {
    let t_len = series.len();
    let booked: Vec<f64> = series.iter().map(|(_, u)| *u).collect();
    let last_date = series[t_len - 1].0;
    let mut warnings = TrialWarnings::default();
    let mut events = history.events;
    let mut timeline = Timeline::from_filter(&fit.filter);
    let params = fit.params;
    let mut measured_full = history.measured.clone();
    measured_full.push(history.seed_measurement);

    // Seed the horizon: filter the already-measured y_{T+1}.
    let seed_step = kalman_step(
        &timeline.filtered_mean[t_len - 1],
        &timeline.filtered_cov[t_len - 1],
        history.seed_measurement,
        &params,
        sys,
        t_len + 1,
    )?;
    timeline.push(seed_step);

    // Alternate measuring and filtering for the remaining T' - 1 steps.
    for tau in (t_len + 1)..(t_len + cfg.horizon) {
        let latent = timeline.latent();
        let raw_base = latent[tau - 1];
        if raw_base <= 0.0 {
            warnings.negative_latent += 1;
        }
        let base = raw_base.max(GROWTH_FLOOR);
        let (z_tau, fallback) = predict_growth(&latent, &booked, tau, cfg.measure.periodicity);
        if fallback {
            warnings.growth_fallback += 1;
        }
        let cutoff = last_date.plus((tau - t_len) as i64);
        let draw = measure_with_provenance(
            dataset,
            focus,
            base,
            Some(z_tau),
            cutoff,
            &cfg.measure,
            rng,
        )
        .map_err(|source| ForecastError::Measurement {
            time_index: tau + 1,
            cutoff: cutoff.to_string(),
            source,
        })?;
        events.push(MeasurementEvent {
            time_index: tau + 1,
            cutoff,
            draw: draw.clone(),
        });
        measured_full.push(draw.measured_y);
        let step = kalman_step(
            &timeline.filtered_mean[tau - 1],
            &timeline.filtered_cov[tau - 1],
            draw.measured_y,
            &params,
            sys,
            tau + 1,
        )?;
        timeline.push(step);
    }

    // Global smoothing over the unified timeline, then extract the latent
    // revenue components.
    let full_pass = timeline.into_filter_pass();
    let smooth = backward_smooth(&full_pass, &params, sys);
    let mut trajectory = Vec::with_capacity(cfg.horizon);
    for t in t_len..(t_len + cfg.horizon) {
        let value = smooth.smoothed_mean[t][LATENT_REVENUE];
        if value <= 0.0 || !value.is_finite() {
            warnings.floored_outputs += 1;
            trajectory.push(GROWTH_FLOOR);
        } else {
            trajectory.push(value);
        }
    }
    let smoothed_history = (0..t_len)
        .map(|t| smooth.smoothed_mean[t][LATENT_REVENUE])
        .collect();
    Ok(TrialRun {
        trajectory,
        smoothed_history,
        events,
        warnings,
        fit_log_likelihood: fit.log_likelihood,
        fitted: params,
        measured: measured_full,
    })
}

/// One forecast step of the aggregated result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastStep {
    pub date: CalendarDate,
    pub mean: f64,
    pub margin: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Aggregated forecast: the mean-and-margin band plus the underlying
/// trajectory matrix and per-trial provenance.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    pub company_id: CompanyId,
    pub periodicity: u32,
    pub horizon: usize,
    pub trials: usize,
    pub z_value: f64,
    pub seed: u64,
    pub steps: Vec<ForecastStep>,
    /// M x T' matrix of latent revenues, one row per trial.
    pub trajectories: Vec<Vec<f64>>,
    /// Across-trial sample standard deviation per step (unbiased).
    pub sample_std: Vec<f64>,
    /// Mean across trials of the smoothed historical latent series.
    pub smoothed_history: Vec<(CalendarDate, f64)>,
    pub trial_events: Vec<Vec<MeasurementEvent>>,
    pub warnings: TrialWarnings,
}

impl ForecastResult {
    /// Contract JSON: steps always; the trajectory matrix and per-step peer
    /// provenance on request.
    pub fn to_json(&self, include_trials: bool, include_provenance: bool) -> serde_json::Value {
        let mut value = json!({
            "company_id": self.company_id,
            "periodicity": self.periodicity,
            "horizon": self.horizon,
            "steps": self.steps,
        });
        if include_trials {
            value["trials"] = json!(self.trajectories);
        }
        if include_provenance {
            let provenance: Vec<serde_json::Value> = (0..self.horizon)
                .map(|idx| {
                    json!({
                        "step": idx + 1,
                        "date": self.steps[idx].date,
                        "peers": self.step_peers(idx + 1),
                    })
                })
                .collect();
            value["provenance"] = json!(provenance);
        }
        value
    }

    /// Deduplicated peers informing horizon step `step` (1-based), merged
    /// across trials and sorted by (company, date).
    pub fn step_peers(&self, step: usize) -> Vec<PeerRecord> {
        let history_len = self.smoothed_history.len();
        let time_index = history_len + step;
        let mut peers: Vec<PeerRecord> = Vec::new();
        for events in &self.trial_events {
            for event in events.iter().filter(|e| e.time_index == time_index) {
                for peer in &event.draw.peers {
                    if !peers
                        .iter()
                        .any(|p| p.company_id == peer.company_id && p.date == peer.date)
                    {
                        peers.push(peer.clone());
                    }
                }
            }
        }
        peers.sort_by(|a, b| (&a.company_id, a.date).cmp(&(&b.company_id, b.date)));
        peers
    }
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean, margin and sample standard deviation of one trajectory-matrix
/// column: `margin = z * sqrt(sum (x - mean)^2 / (M (M-1)))`.
///
/// The margin is exactly zero iff all trials agree; summation rounding is
/// not allowed to manufacture spurious width.
pub fn band_stats(column: &[f64], z_value: f64) -> (f64, f64, f64) {
    let m = column.len() as f64;
    assert!(column.len() >= 2, "margin needs at least two trials");
    if column.windows(2).all(|w| w[0] == w[1]) {
        return (column[0], 0.0, 0.0);
    }
    let mean = column.iter().sum::<f64>() / m;
    let ss: f64 = column.iter().map(|x| (x - mean).powi(2)).sum();
    let margin = z_value * (ss / (m * (m - 1.0))).sqrt();
    (mean, margin, (ss / (m - 1.0)).sqrt())
}

/// Runs M independent trials and aggregates them into the banded forecast.
/// Trials draw from RNG streams derived from `(seed, trial index)`, so the
/// result does not depend on execution order.
pub fn forecast_with_confidence(
    dataset: &Dataset,
    focus: &CompanyProfile,
    series: &[(CalendarDate, f64)],
    cfg: &ForecastConfig,
) -> Result<ForecastResult, ForecastError> {
    cfg.validate(dataset)?;
    check_series(dataset, series)?;

    let mut runs: Vec<TrialRun> = Vec::with_capacity(cfg.trials);
    if cfg.refit_per_trial {
        for trial in 0..cfg.trials {
            let mut rng = trial_rng(cfg.seed, trial as u64 + 1);
            let run = forecast_one_trajectory(dataset, focus, series, cfg, &mut rng).map_err(
                |source| ForecastError::Trial {
                    trial,
                    source: Box::new(source),
                },
            )?;
            runs.push(run);
        }
    } else {
        // Shared fit: measure history and fit once on stream 0, then let
        // each trial randomize only the horizon sampling.
        let mut base_rng = trial_rng(cfg.seed, 0);
        let history = measure_history(dataset, focus, series, cfg, &mut base_rng)?;
        let booked: Vec<f64> = series.iter().map(|(_, u)| *u).collect();
        let init = init_params(&booked, &history.measured)?;
        let sys = SystemConstants::new();
        let fit = fit_em(&history.measured, init, &sys, &cfg.em)?;
        for trial in 0..cfg.trials {
            let mut rng = trial_rng(cfg.seed, trial as u64 + 1);
            let history_clone = HistoryMeasures {
                measured: history.measured.clone(),
                seed_measurement: history.seed_measurement,
                events: history.events.clone(),
            };
            let run = roll_horizon(
                dataset,
                focus,
                series,
                cfg,
                &sys,
                fit.clone(),
                history_clone,
                &mut rng,
            )
            .map_err(|source| ForecastError::Trial {
                trial,
                source: Box::new(source),
            })?;
            runs.push(run);
        }
    }

    let t_len = series.len();
    let last_date = series[t_len - 1].0;
    let m = cfg.trials as f64;
    let mut steps = Vec::with_capacity(cfg.horizon);
    let mut sample_std = Vec::with_capacity(cfg.horizon);
    for idx in 0..cfg.horizon {
        let column: Vec<f64> = runs.iter().map(|r| r.trajectory[idx]).collect();
        let (mean, margin, std) = band_stats(&column, cfg.z_value);
        sample_std.push(std);
        steps.push(ForecastStep {
            date: last_date.plus(idx as i64 + 1),
            mean,
            margin,
            lower: mean - margin,
            upper: mean + margin,
        });
    }
    let smoothed_history: Vec<(CalendarDate, f64)> = (0..t_len)
        .map(|t| {
            let mean = runs.iter().map(|r| r.smoothed_history[t]).sum::<f64>() / m;
            (series[t].0, mean)
        })
        .collect();
    let mut warnings = TrialWarnings::default();
    for run in &runs {
        warnings.absorb(&run.warnings);
    }
    Ok(ForecastResult {
        company_id: focus.company_id.clone(),
        periodicity: cfg.measure.periodicity,
        horizon: cfg.horizon,
        trials: cfg.trials,
        z_value: cfg.z_value,
        seed: cfg.seed,
        steps,
        trajectories: runs.iter().map(|r| r.trajectory.clone()).collect(),
        sample_std,
        smoothed_history,
        trial_events: runs.into_iter().map(|r| r.events).collect(),
        warnings,
    })
}
