//! Deterministic synthetic scaleup cohorts for tests and demos.
//!
//! Each company gets a log-uniform initial revenue and a YoY growth path
//! that mean-reverts toward 1.0:
//!
//! ```text
//! g_{t+1} = 1 + decay * (g_t - 1) + noise,   u_{t+1} = u_t * g_{t+1}^(1/p)
//! ```
//!
//! with optional multiplicative measurement noise on the recorded values.
//! Start dates are staggered across the cohort so that later-starting
//! companies always have dated peer tuples available, mirroring how real
//! panels accumulate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calendar::{CalendarDate, Granularity};
use crate::dataset::{
    build_dataset, CompanyProfile, DataError, Dataset, RawCompany, SkippedCompany,
};

/// Sector growth dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthProfile {
    /// Range the initial YoY growth is drawn from, e.g. (1.2, 1.8).
    pub initial_growth: (f64, f64),
    /// Per-period pull of the growth toward 1.0, in (0, 1].
    pub decay: f64,
    /// Standard deviation of the per-period growth shock.
    pub noise_std: f64,
}

/// Full cohort recipe. Deterministic in `seed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSpec {
    pub companies: usize,
    /// (sector, customer_focus) combinations assigned round-robin.
    pub mixes: Vec<(String, String)>,
    pub granularity: Granularity,
    /// YoY lag; 12 for monthly, 1 for yearly.
    pub periodicity: u32,
    /// Inclusive range of series lengths in periods.
    pub series_len: (usize, usize),
    /// Initial revenue range, drawn log-uniformly.
    pub initial_revenue: (f64, f64),
    pub growth: GrowthProfile,
    /// Multiplicative lognormal measurement noise on recorded revenue.
    pub measurement_noise_std: f64,
    /// Earliest possible series start.
    pub start: CalendarDate,
    /// Companies start uniformly within `start .. start + start_spread`.
    pub start_spread: usize,
    pub seed: u64,
}

impl CohortSpec {
    /// A monthly cohort at sensible defaults; callers override fields.
    pub fn monthly(companies: usize, seed: u64) -> Self {
        CohortSpec {
            companies,
            mixes: vec![
                ("Fintech".to_string(), "B2B".to_string()),
                ("Fintech".to_string(), "B2C".to_string()),
                ("Gaming".to_string(), "B2C".to_string()),
            ],
            granularity: Granularity::Monthly,
            periodicity: 12,
            series_len: (30, 48),
            initial_revenue: (1.0, 100.0),
            growth: GrowthProfile {
                initial_growth: (1.3, 1.9),
                decay: 0.92,
                noise_std: 0.03,
            },
            measurement_noise_std: 0.01,
            start: CalendarDate::monthly(2015, 1),
            start_spread: 48,
            seed,
        }
    }

    /// A yearly cohort analogue.
    pub fn yearly(companies: usize, seed: u64) -> Self {
        CohortSpec {
            companies,
            mixes: vec![
                ("SaaS".to_string(), "B2B".to_string()),
                ("Marketplace".to_string(), "B2C".to_string()),
            ],
            granularity: Granularity::Yearly,
            periodicity: 1,
            series_len: (5, 10),
            initial_revenue: (1.0, 100.0),
            growth: GrowthProfile {
                initial_growth: (1.3, 2.2),
                decay: 0.8,
                noise_std: 0.05,
            },
            measurement_noise_std: 0.01,
            start: CalendarDate::yearly(2008),
            start_spread: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidSpec> {
        if self.companies == 0 {
            return Err(InvalidSpec("companies must be >= 1".into()));
        }
        if self.mixes.is_empty() {
            return Err(InvalidSpec("at least one sector mix is required".into()));
        }
        if self.periodicity == 0 {
            return Err(InvalidSpec("periodicity must be >= 1".into()));
        }
        if self.series_len.0 > self.series_len.1 || self.series_len.0 == 0 {
            return Err(InvalidSpec(format!(
                "series length range {:?} is degenerate",
                self.series_len
            )));
        }
        if !(self.initial_revenue.0 > 0.0 && self.initial_revenue.1 >= self.initial_revenue.0) {
            return Err(InvalidSpec(format!(
                "initial revenue range {:?} is degenerate",
                self.initial_revenue
            )));
        }
        if !(self.growth.decay > 0.0 && self.growth.decay <= 1.0) {
            return Err(InvalidSpec(format!(
                "decay {} must lie in (0, 1]",
                self.growth.decay
            )));
        }
        if self.growth.initial_growth.0 > self.growth.initial_growth.1
            || self.growth.initial_growth.0 <= 0.0
        {
            return Err(InvalidSpec(format!(
                "initial growth range {:?} is degenerate",
                self.growth.initial_growth
            )));
        }
        if self.growth.noise_std < 0.0 || self.measurement_noise_std < 0.0 {
            return Err(InvalidSpec("noise standard deviations must be >= 0".into()));
        }
        if self.start.granularity() != self.granularity {
            return Err(InvalidSpec(
                "start date granularity does not match the cohort granularity".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid cohort spec: {0}")]
pub struct InvalidSpec(String);

/// Generated cohort: raw series plus the built tuple panel.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub raw: Vec<RawCompany>,
    pub dataset: Dataset,
    pub skipped: Vec<SkippedCompany>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Spec(#[from] InvalidSpec),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Generates the cohort. Companies use independent RNG substreams, so the
/// output is deterministic in the seed and stable under company count
/// changes.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort, SynthError> {
    spec.validate()?;
    let mut raw = Vec::with_capacity(spec.companies);
    let ln_lo = spec.initial_revenue.0.ln();
    let ln_hi = spec.initial_revenue.1.ln();
    for i in 0..spec.companies {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let mix = &spec.mixes[i % spec.mixes.len()];
        let profile = CompanyProfile::new(format!("synth-{i:04}"), &mix.0, &mix.1);
        let length = rng.random_range(spec.series_len.0..=spec.series_len.1);
        let offset = if spec.start_spread > 0 {
            rng.random_range(0..spec.start_spread)
        } else {
            0
        };
        let start = spec.start.plus(offset as i64);
        let mut latent = (ln_lo + rng.random::<f64>() * (ln_hi - ln_lo)).exp();
        let mut growth = rng.random_range(spec.growth.initial_growth.0..=spec.growth.initial_growth.1);
        let mut series = Vec::with_capacity(length);
        for t in 0..length {
            if t > 0 {
                let shock: f64 = rng.sample(rand_distr::StandardNormal);
                growth = 1.0 + spec.growth.decay * (growth - 1.0) + spec.growth.noise_std * shock;
                growth = growth.max(1e-3);
                latent *= growth.powf(1.0 / f64::from(spec.periodicity));
            }
            let recorded = if spec.measurement_noise_std > 0.0 {
                let shock: f64 = rng.sample(rand_distr::StandardNormal);
                latent * (spec.measurement_noise_std * shock).exp()
            } else {
                latent
            };
            series.push((start.plus(t as i64), recorded));
        }
        raw.push(RawCompany { profile, series });
    }
    let report = build_dataset(&raw, spec.periodicity, spec.granularity)?;
    Ok(Cohort {
        raw,
        dataset: report.dataset,
        skipped: report.skipped,
    })
}
