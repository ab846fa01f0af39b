//! Rolling-origin backtesting and the metric set.
//!
//! For every (company, cutoff) cell the panel is truncated to dates at or
//! before the cutoff — focus history and peers alike, so nothing can leak —
//! each method forecasts the horizon, and predictions are aligned with the
//! held-out booked values by calendar date. Methods are only compared on
//! the cells all of them completed (the intersection rule), pooled over
//! companies and cutoffs.
//!
//! Point metrics: RMSE, MAPE, Pearson correlation. Distribution metrics:
//! Gaussian negative log-likelihood of the truth under the per-step
//! across-trial mean and standard deviation, and the fraction of truth
//! inside the serialized confidence band (closed at both edges).
//! Investor metrics: the true positive rate of "grows k-fold within a
//! year window" calls.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use crate::calendar::{CalendarDate, Granularity};
use crate::dataset::{build_dataset, CompanyId, Dataset, RawCompany};
use crate::extrapolation::{forecast_with_confidence, ForecastConfig, ForecastError};

/// Cutoff grid and horizon for a rolling-origin run.
#[derive(Debug, Clone)]
pub struct EvalPlan {
    /// Forecast length at every cutoff, in periods.
    pub horizon: usize,
    /// Minimum booked points that must precede a cutoff.
    pub min_history: usize,
    /// Stride over eligible cutoffs: 1 evaluates every period.
    pub every_k: usize,
    /// Explicit per-company cutoffs; overrides the rule when present.
    pub explicit_cutoffs: Option<BTreeMap<CompanyId, Vec<CalendarDate>>>,
}

impl EvalPlan {
    pub fn new(horizon: usize) -> Self {
        EvalPlan {
            horizon,
            min_history: 3,
            every_k: 1,
            explicit_cutoffs: None,
        }
    }

    /// Eligible cutoffs for one company: dates with at least `min_history`
    /// points at or before them and at least one point after.
    fn cutoffs_for(&self, company: &RawCompany) -> Vec<CalendarDate> {
        if let Some(explicit) = &self.explicit_cutoffs {
            return explicit
                .get(&company.profile.company_id)
                .cloned()
                .unwrap_or_default();
        }
        let n = company.series.len();
        if n <= self.min_history {
            return Vec::new();
        }
        company.series[self.min_history - 1..n - 1]
            .iter()
            .step_by(self.every_k.max(1))
            .map(|(d, _)| *d)
            .collect()
    }

    fn validate(&self, companies: &[RawCompany]) -> Result<(), EvalError> {
        if self.horizon == 0 {
            return Err(EvalError::InvalidPlan("horizon must be >= 1".into()));
        }
        if self.min_history == 0 {
            return Err(EvalError::InvalidPlan("min_history must be >= 1".into()));
        }
        if let Some(explicit) = &self.explicit_cutoffs {
            for (id, cutoffs) in explicit {
                let company = companies
                    .iter()
                    .find(|c| &c.profile.company_id == id)
                    .ok_or_else(|| {
                        EvalError::InvalidPlan(format!("cutoffs given for unknown company {id}"))
                    })?;
                let first = company.series.first().map(|(d, _)| *d);
                let last = company.series.last().map(|(d, _)| *d);
                for cutoff in cutoffs {
                    let inside = matches!((first, last), (Some(f), Some(l)) if *cutoff >= f && *cutoff < l);
                    if !inside {
                        return Err(EvalError::InvalidPlan(format!(
                            "cutoff {cutoff} for {id} leaves no held-out point"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Data(#[from] crate::dataset::DataError),
}

/// One forecast step as seen by the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct StepForecast {
    pub date: CalendarDate,
    pub mean: f64,
    /// Across-trial sample standard deviation, when the method has one.
    pub sample_std: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Forecast plus the peer dates it consumed (for the leakage audit).
#[derive(Debug, Clone, Default)]
pub struct ForecastOutput {
    pub steps: Vec<StepForecast>,
    pub provenance_dates: Vec<CalendarDate>,
}

/// A method under evaluation. The harness hands it an already-truncated
/// panel and focus series.
pub trait Forecaster {
    fn name(&self) -> &str;
    fn forecast(
        &self,
        dataset: &Dataset,
        focus: &RawCompany,
        horizon: usize,
    ) -> Result<ForecastOutput, ForecastError>;
}

/// The full pipeline as a harness method. Per-cell seeds are derived from
/// the base seed, the company id and the cutoff, so runs are reproducible
/// and cells independent.
pub struct SireForecaster {
    pub config: ForecastConfig,
}

fn cell_seed(base: u64, company: &CompanyId, cutoff: CalendarDate) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(company.as_str().as_bytes());
    eat(cutoff.to_string().as_bytes());
    base ^ hash
}

impl Forecaster for SireForecaster {
    fn name(&self) -> &str {
        "sire"
    }

    fn forecast(
        &self,
        dataset: &Dataset,
        focus: &RawCompany,
        horizon: usize,
    ) -> Result<ForecastOutput, ForecastError> {
        let cutoff = focus
            .series
            .last()
            .map(|(d, _)| *d)
            .expect("harness never passes an empty focus series");
        let mut cfg = self.config.clone();
        cfg.horizon = horizon;
        cfg.seed = cell_seed(self.config.seed, &focus.profile.company_id, cutoff);
        let result = forecast_with_confidence(dataset, &focus.profile, &focus.series, &cfg)?;
        let steps = result
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| StepForecast {
                date: s.date,
                mean: s.mean,
                sample_std: Some(result.sample_std[i]),
                lower: Some(s.lower),
                upper: Some(s.upper),
            })
            .collect();
        let provenance_dates = result
            .trial_events
            .iter()
            .flatten()
            .flat_map(|event| event.draw.peers.iter().map(|p| p.date))
            .collect();
        Ok(ForecastOutput {
            steps,
            provenance_dates,
        })
    }
}

/// Baseline: extrapolate the last observed growth forever. The per-period
/// ratio comes from the trailing YoY growth when a full lag is available,
/// else from the last one-period ratio, else 1.
pub struct PersistenceForecaster {
    pub periodicity: u32,
}

impl Forecaster for PersistenceForecaster {
    fn name(&self) -> &str {
        "persistence"
    }

    fn forecast(
        &self,
        _dataset: &Dataset,
        focus: &RawCompany,
        horizon: usize,
    ) -> Result<ForecastOutput, ForecastError> {
        let series = &focus.series;
        let n = series.len();
        let p = self.periodicity as usize;
        let last = series[n - 1].1;
        let ratio = if n > p {
            (last / series[n - 1 - p].1).powf(1.0 / p as f64)
        } else if n >= 2 {
            last / series[n - 2].1
        } else {
            1.0
        };
        let last_date = series[n - 1].0;
        let steps = (1..=horizon)
            .map(|k| StepForecast {
                date: last_date.plus(k as i64),
                mean: last * ratio.powi(k as i32),
                sample_std: None,
                lower: None,
                upper: None,
            })
            .collect();
        Ok(ForecastOutput {
            steps,
            provenance_dates: Vec::new(),
        })
    }
}

/// A prediction aligned with held-out truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedPoint {
    pub date: CalendarDate,
    pub actual: f64,
    pub mean: f64,
    pub std: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// All aligned points of one successful (method, company, cutoff) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellDetail {
    pub method: String,
    pub company_id: CompanyId,
    pub cutoff: CalendarDate,
    /// Booked revenue at the cutoff date.
    pub base_revenue: f64,
    pub points: Vec<AlignedPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub method: String,
    pub company_id: CompanyId,
    pub cutoff: CalendarDate,
    pub error: String,
}

/// Point metrics over pooled (actual, predicted) pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMetrics {
    pub n: usize,
    pub rmse: f64,
    /// Absent when every actual is zero.
    pub mape: Option<f64>,
    /// Pairs dropped from MAPE because the actual is zero.
    pub mape_excluded: usize,
    /// Absent for fewer than two pairs or constant series.
    pub pcc: Option<f64>,
}

/// RMSE, MAPE and Pearson correlation of predictions against actuals.
pub fn point_metrics(pairs: &[(f64, f64)]) -> PointMetrics {
    let n = pairs.len();
    assert!(n >= 1, "point metrics need at least one pair");
    let rmse = (pairs.iter().map(|(u, x)| (x - u).powi(2)).sum::<f64>() / n as f64).sqrt();

    let nonzero: Vec<&(f64, f64)> = pairs.iter().filter(|(u, _)| *u != 0.0).collect();
    let mape_excluded = n - nonzero.len();
    let mape = if nonzero.is_empty() {
        None
    } else {
        Some(nonzero.iter().map(|(u, x)| ((u - x) / u).abs()).sum::<f64>() / nonzero.len() as f64)
    };

    let pcc = if n >= 2 {
        let mean_u = pairs.iter().map(|(u, _)| u).sum::<f64>() / n as f64;
        let mean_x = pairs.iter().map(|(_, x)| x).sum::<f64>() / n as f64;
        let cov: f64 = pairs.iter().map(|(u, x)| (u - mean_u) * (x - mean_x)).sum();
        let var_u: f64 = pairs.iter().map(|(u, _)| (u - mean_u).powi(2)).sum();
        let var_x: f64 = pairs.iter().map(|(_, x)| (x - mean_x).powi(2)).sum();
        if var_u > 0.0 && var_x > 0.0 {
            Some(cov / (var_u * var_x).sqrt())
        } else {
            None
        }
    } else {
        None
    };

    PointMetrics {
        n,
        rmse,
        mape,
        mape_excluded,
        pcc,
    }
}

/// Truth against a per-step predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistPoint {
    pub actual: f64,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistMetrics {
    pub n: usize,
    pub nll: f64,
    pub acc: f64,
}

/// Gaussian negative log-likelihood of the actuals under the per-step mean
/// and standard deviation (std floored at `1e-6` of the mean prediction
/// scale), and the closed-interval band coverage.
pub fn distribution_metrics(points: &[DistPoint]) -> DistMetrics {
    assert!(!points.is_empty(), "distribution metrics need points");
    let n = points.len() as f64;
    let scale = points.iter().map(|p| p.mean.abs()).sum::<f64>() / n;
    let floor = (1e-6 * scale).max(1e-12);
    let nll = points
        .iter()
        .map(|p| {
            let s = p.std.max(floor);
            0.5 * (2.0 * std::f64::consts::PI * s * s).ln()
                + (p.actual - p.mean).powi(2) / (2.0 * s * s)
        })
        .sum::<f64>()
        / n;
    let inside = points
        .iter()
        .filter(|p| p.actual >= p.lower && p.actual <= p.upper)
        .count();
    DistMetrics {
        n: points.len(),
        nll,
        acc: inside as f64 / n,
    }
}

/// Outcome of one investor-style call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvestorOutcome {
    pub multiple: f64,
    pub window_years: (u32, u32),
    /// Cells whose held-out truth covers the whole window.
    pub cases: usize,
    pub actual_positives: usize,
    pub true_positives: usize,
    /// Absent when no case is actually positive.
    pub tpr: Option<f64>,
}

/// True positive rate of "revenue reaches `multiple` times the cutoff value
/// within years `window.0..=window.1`": a case is positive when the maximum
/// over the window of revenue / revenue-at-cutoff reaches the multiple, in
/// truth for actual positives, in forecast means for predictions.
pub fn investor_metrics(
    cells: &[CellDetail],
    multiple: f64,
    window_years: (u32, u32),
    periodicity: u32,
) -> InvestorOutcome {
    let p = periodicity as i64;
    let first_offset = (i64::from(window_years.0) - 1) * p + 1;
    let last_offset = i64::from(window_years.1) * p;
    let mut cases = 0;
    let mut actual_positives = 0;
    let mut true_positives = 0;
    for cell in cells {
        let in_window = |point: &&AlignedPoint| {
            let offset = point.date.periods_since(&cell.cutoff);
            offset >= first_offset && offset <= last_offset
        };
        let window_points: Vec<&AlignedPoint> = cell.points.iter().filter(in_window).collect();
        if window_points.len() != (last_offset - first_offset + 1) as usize {
            continue; // truth does not cover the whole window
        }
        cases += 1;
        let max_actual = window_points
            .iter()
            .map(|pt| pt.actual / cell.base_revenue)
            .fold(f64::NEG_INFINITY, f64::max);
        let max_predicted = window_points
            .iter()
            .map(|pt| pt.mean / cell.base_revenue)
            .fold(f64::NEG_INFINITY, f64::max);
        if max_actual >= multiple {
            actual_positives += 1;
            if max_predicted >= multiple {
                true_positives += 1;
            }
        }
    }
    InvestorOutcome {
        multiple,
        window_years,
        cases,
        actual_positives,
        true_positives,
        tpr: (actual_positives > 0).then(|| true_positives as f64 / actual_positives as f64),
    }
}

/// Pooled metrics of one method over the common cells.
#[derive(Debug, Clone, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    pub cells: usize,
    pub point: PointMetrics,
    /// Absent for methods without a predictive distribution.
    pub dist: Option<DistMetrics>,
    pub investor: Vec<InvestorOutcome>,
}

/// Full harness output.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub horizon: usize,
    pub common_cells: usize,
    pub methods: Vec<MethodMetrics>,
    pub failures: Vec<CellFailure>,
    /// Provenance records dated after their cutoff, over the entire run.
    /// Anything non-zero means future data leaked into a measurement.
    pub leakage_violations: usize,
    pub cells: Vec<CellDetail>,
}

impl EvalReport {
    /// One row per metric per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,value\n");
        let mut push = |method: &str, metric: &str, value: Option<f64>| {
            let rendered = value.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
            out.push_str(&format!("{method},{metric},{rendered}\n"));
        };
        for m in &self.methods {
            push(&m.method, "rmse", Some(m.point.rmse));
            push(&m.method, "mape", m.point.mape);
            push(&m.method, "pcc", m.point.pcc);
            push(&m.method, "nll", m.dist.as_ref().map(|d| d.nll));
            push(&m.method, "acc", m.dist.as_ref().map(|d| d.acc));
            for inv in &m.investor {
                let name = format!(
                    "tpr_gt{}x_in_{}-{}y",
                    inv.multiple, inv.window_years.0, inv.window_years.1
                );
                push(&m.method, &name, inv.tpr);
            }
        }
        out
    }

    pub fn to_json(&self, include_cells: bool) -> serde_json::Value {
        let mut value = json!({
            "horizon": self.horizon,
            "common_cells": self.common_cells,
            "leakage_violations": self.leakage_violations,
            "methods": self.methods,
            "failures": self.failures,
        });
        if include_cells {
            value["cells"] = json!(self.cells);
        }
        value
    }

    /// Fixed-width summary for terminal output.
    pub fn summary_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "      NA".to_string(), |v| format!("{v:>8.4}"));
        let mut out = format!(
            "{:<14} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "method", "cells", "RMSE", "MAPE", "PCC", "NLL", "ACC"
        );
        for m in &self.methods {
            out.push_str(&format!(
                "{:<14} {:>6} {} {} {} {} {}\n",
                m.method,
                m.cells,
                fmt(Some(m.point.rmse)),
                fmt(m.point.mape),
                fmt(m.point.pcc),
                fmt(m.dist.as_ref().map(|d| d.nll)),
                fmt(m.dist.as_ref().map(|d| d.acc)),
            ));
        }
        out
    }
}

/// Investor-call recipe evaluated over harness cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvestorCase {
    pub multiple: f64,
    pub window_years: (u32, u32),
}

/// Runs the rolling-origin protocol over the panel.
///
/// Per cell the raw series are truncated at the cutoff, the tuple panel is
/// rebuilt from the truncation, every method forecasts, and predictions are
/// aligned by date with the held-out booked values. A method failing a cell
/// excludes that cell from the comparison for all methods; the run
/// continues.
pub fn rolling_origin(
    companies: &[RawCompany],
    periodicity: u32,
    granularity: Granularity,
    forecasters: &[&dyn Forecaster],
    plan: &EvalPlan,
    investor_cases: &[InvestorCase],
) -> Result<EvalReport, EvalError> {
    plan.validate(companies)?;
    let mut failures = Vec::new();
    let mut leakage_violations = 0usize;
    // cell key -> per-method detail
    let mut cells: BTreeMap<(CompanyId, CalendarDate), Vec<CellDetail>> = BTreeMap::new();

    for focus in companies {
        for cutoff in plan.cutoffs_for(focus) {
            let truncated: Vec<RawCompany> = companies
                .iter()
                .filter_map(|c| {
                    let series: Vec<(CalendarDate, f64)> = c
                        .series
                        .iter()
                        .filter(|(d, _)| *d <= cutoff)
                        .cloned()
                        .collect();
                    (!series.is_empty()).then(|| RawCompany {
                        profile: c.profile.clone(),
                        series,
                    })
                })
                .collect();
            let dataset = build_dataset(&truncated, periodicity, granularity)?.dataset;
            let focus_restricted = truncated
                .iter()
                .find(|c| c.profile.company_id == focus.profile.company_id)
                .expect("focus survives its own cutoff")
                .clone();
            let base_revenue = focus_restricted.series.last().expect("non-empty").1;
            let holdout: BTreeMap<CalendarDate, f64> = focus
                .series
                .iter()
                .filter(|(d, _)| *d > cutoff)
                .cloned()
                .collect();

            let mut cell_outputs = Vec::new();
            let mut cell_ok = true;
            for forecaster in forecasters {
                match forecaster.forecast(&dataset, &focus_restricted, plan.horizon) {
                    Ok(output) => {
                        leakage_violations += output
                            .provenance_dates
                            .iter()
                            .filter(|d| **d > cutoff)
                            .count();
                        let points: Vec<AlignedPoint> = output
                            .steps
                            .iter()
                            .filter_map(|s| {
                                holdout.get(&s.date).map(|actual| AlignedPoint {
                                    date: s.date,
                                    actual: *actual,
                                    mean: s.mean,
                                    std: s.sample_std,
                                    lower: s.lower,
                                    upper: s.upper,
                                })
                            })
                            .collect();
                        cell_outputs.push(CellDetail {
                            method: forecaster.name().to_string(),
                            company_id: focus.profile.company_id.clone(),
                            cutoff,
                            base_revenue,
                            points,
                        });
                    }
                    Err(err) => {
                        cell_ok = false;
                        failures.push(CellFailure {
                            method: forecaster.name().to_string(),
                            company_id: focus.profile.company_id.clone(),
                            cutoff,
                            error: err.to_string(),
                        });
                    }
                }
            }
            // Intersection rule: keep the cell only when every method
            // produced it and at least one point aligned with truth.
            if cell_ok && cell_outputs.iter().all(|c| !c.points.is_empty()) {
                cells.insert((focus.profile.company_id.clone(), cutoff), cell_outputs);
            }
        }
    }

    let common_cells = cells.len();
    let mut methods = Vec::new();
    for forecaster in forecasters {
        let name = forecaster.name();
        let mine: Vec<&CellDetail> = cells
            .values()
            .flat_map(|v| v.iter().filter(|c| c.method == name))
            .collect();
        let pairs: Vec<(f64, f64)> = mine
            .iter()
            .flat_map(|c| c.points.iter().map(|p| (p.actual, p.mean)))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let dist_points: Vec<DistPoint> = mine
            .iter()
            .flat_map(|c| c.points.iter())
            .filter_map(|p| {
                Some(DistPoint {
                    actual: p.actual,
                    mean: p.mean,
                    std: p.std?,
                    lower: p.lower?,
                    upper: p.upper?,
                })
            })
            .collect();
        let dist = (dist_points.len() == pairs.len() && !dist_points.is_empty())
            .then(|| distribution_metrics(&dist_points));
        let owned_cells: Vec<CellDetail> = mine.iter().map(|c| (*c).clone()).collect();
        let investor = investor_cases
            .iter()
            .map(|case| investor_metrics(&owned_cells, case.multiple, case.window_years, periodicity))
            .collect();
        methods.push(MethodMetrics {
            method: name.to_string(),
            cells: mine.len(),
            point: point_metrics(&pairs),
            dist,
            investor,
        });
    }

    Ok(EvalReport {
        horizon: plan.horizon,
        common_cells,
        methods,
        failures,
        leakage_violations,
        cells: cells.into_values().flatten().collect(),
    })
}
