//! Simulation-informed revenue extrapolation for scaleup companies.
//!
//! Booked revenue histories of a peer panel drive noisy *measurements* of a
//! focus company's revenue: peers in the same business at a comparable
//! stage contribute their observed next growth, one of which is sampled and
//! blurred to produce each measurement. A fixed-structure 5-state linear
//! dynamical system is fitted to those measurements by EM, rolled into the
//! future by alternating measuring and filtering, smoothed globally, and
//! repeated across trials to carry a confidence band.
//!
//! Modules follow the pipeline: [`dataset`] and [`ingest`] build the tuple
//! panel, [`measurement`] samples peer-informed measurements, [`lds`] and
//! [`em`] fit the state-space model, [`extrapolation`] produces banded
//! forecasts, [`evaluation`] backtests them, and [`synthetic`] generates
//! reproducible cohorts.

pub mod calendar;
pub mod dataset;
pub mod em;
pub mod evaluation;
pub mod extrapolation;
pub mod ingest;
pub mod lds;
pub mod measurement;
pub mod synthetic;

pub use calendar::{CalendarDate, Granularity};
pub use dataset::{
    build_dataset, compute_growth_series, CompanyId, CompanyProfile, DataError, Dataset,
    RawCompany, RevenueTuple,
};
pub use em::{expected_log_likelihood, fit_em, m_step, EmFit, EmOptions, MStepForm};
pub use extrapolation::{
    band_stats, forecast_one_trajectory, forecast_with_confidence, ForecastConfig, ForecastError,
    ForecastResult, ForecastStep,
};
pub use ingest::{ingest_csv, write_csv};
pub use lds::{
    backward_smooth, forward_filter, init_params, FilterPass, LdsError, ModelParams, SmoothPass,
    StateMatrix, StateVector, SystemConstants, LATENT_REVENUE,
};
pub use measurement::{
    assemble_candidates, growth_quantile_filter, measure_revenue, measure_with_provenance,
    sample_growth, FallbackPolicy, MeasureConfig, MeasureError, MeasurementDraw, MeasuringContext,
    PeerRecord,
};
pub use synthetic::{generate_cohort, Cohort, CohortSpec, GrowthProfile};
