//! The revenue-tuple panel: per-company booked revenue with year-over-year
//! growth, plus company profiles.
//!
//! A [`RevenueTuple`] carries `(u, b, z, z_next)`: booked revenue, calendar
//! date, the current YoY growth `z_t = u_t / u_{t-p}` and the next one
//! `z_next = u_{t+1} / u_{t+1-p}`, where `p` is the panel periodicity
//! (12 for monthly data, 1 for yearly). Tuples are re-indexed so the first
//! complete tuple of each company has `period_index = 1`; the leading `p`
//! points of a raw series cannot carry a growth value and only ever serve
//! as growth denominators.
//!
//! Values are unit-agnostic positive reals: no currency conversion or scale
//! normalization happens at ingest, so a single panel must stick to one
//! currency and one accounting standard by convention.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarDate, Granularity};

/// Opaque company key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompanyId(pub String);

impl CompanyId {
    pub fn new(id: impl Into<String>) -> Self {
        CompanyId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CompanyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CompanyId {
    fn from(s: &str) -> Self {
        CompanyId(s.to_string())
    }
}

/// Static company descriptors used by the peer filters.
///
/// `sector` and `customer_focus` are assumed constant over the company's
/// lifetime; their concatenation is the business key peers are matched on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyProfile {
    pub company_id: CompanyId,
    pub sector: String,
    pub customer_focus: String,
}

impl CompanyProfile {
    pub fn new(
        company_id: impl Into<String>,
        sector: impl Into<String>,
        customer_focus: impl Into<String>,
    ) -> Self {
        CompanyProfile {
            company_id: CompanyId::new(company_id),
            sector: sector.into(),
            customer_focus: customer_focus.into(),
        }
    }

    /// "sector+customer_focus", e.g. `Fintech+B2C`.
    pub fn business_key(&self) -> String {
        format!("{}+{}", self.sector, self.customer_focus)
    }
}

/// One panel entry: `(u, b, z, z_next)` for a company at period `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueTuple {
    pub company_id: CompanyId,
    /// 1-based index of the tuple within its company; 1 is the first
    /// period where both `z` and `z_next` are computable.
    pub period_index: usize,
    pub date: CalendarDate,
    /// Booked revenue `u`, positive, unit-agnostic.
    pub revenue: f64,
    /// Current YoY growth `z = u_t / u_{t-p}`.
    pub growth: f64,
    /// Next YoY growth `z_next = u_{t+1} / u_{t+1-p}`.
    pub next_growth: f64,
}

/// A raw ingested company: profile plus its booked series sorted by date.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCompany {
    pub profile: CompanyProfile,
    pub series: Vec<(CalendarDate, f64)>,
}

/// Validation and ingestion errors for panel construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("company {company}: non-positive revenue {value} at {date}")]
    NonPositiveRevenue {
        company: String,
        date: String,
        value: f64,
    },
    #[error("company {company}: dates not strictly increasing at uniform spacing ({prev} then {next})")]
    DateSpacing {
        company: String,
        prev: String,
        next: String,
    },
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("line {line}: company {company} changes profile ({field}: {first:?} vs {second:?})")]
    InconsistentProfile {
        line: usize,
        company: String,
        field: &'static str,
        first: String,
        second: String,
    },
    #[error("line {line}: date {date} mixes granularities with earlier rows ({expected})")]
    MixedGranularity {
        line: usize,
        date: String,
        expected: Granularity,
    },
    #[error("line {line}: duplicate date {date} for company {company}")]
    DuplicateDate {
        line: usize,
        company: String,
        date: String,
    },
    #[error("company {company}: duplicate period index {period_index}")]
    DuplicatePeriod {
        company: String,
        period_index: usize,
    },
    #[error("tuple references unknown company {company}")]
    UnknownCompany { company: String },
    #[error("periodicity must be >= 1")]
    InvalidPeriodicity,
    #[error("empty input: no data rows found")]
    EmptyInput,
}

/// A company skipped during panel construction because its series is too
/// short to produce a single complete tuple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCompany {
    pub company_id: CompanyId,
    pub points: usize,
    pub required: usize,
}

/// Output of [`build_dataset`]: the panel plus skip warnings.
#[derive(Debug, Clone)]
pub struct BuildReport {
    pub dataset: Dataset,
    pub skipped: Vec<SkippedCompany>,
}

/// The immutable tuple panel shared by measuring, fitting and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    periodicity: u32,
    granularity: Granularity,
    profiles: BTreeMap<CompanyId, CompanyProfile>,
    tuples: Vec<RevenueTuple>,
}

impl Dataset {
    /// YoY growth lag `p` of this panel.
    pub fn periodicity(&self) -> u32 {
        self.periodicity
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// All tuples, ordered by (company, period_index).
    pub fn tuples(&self) -> &[RevenueTuple] {
        &self.tuples
    }

    pub fn tuples_for(&self, company: &CompanyId) -> impl Iterator<Item = &RevenueTuple> {
        let company = company.clone();
        self.tuples.iter().filter(move |t| t.company_id == company)
    }

    pub fn profile(&self, company: &CompanyId) -> Option<&CompanyProfile> {
        self.profiles.get(company)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &CompanyProfile> {
        self.profiles.values()
    }

    pub fn company_count(&self) -> usize {
        self.profiles.len()
    }

    /// Stable JSON form: companies sorted by id, each with its profile and
    /// ordered tuples.
    pub fn to_json(&self) -> serde_json::Value {
        let companies: Vec<DatasetCompanyJson> = self
            .profiles
            .values()
            .map(|profile| DatasetCompanyJson {
                company_id: profile.company_id.clone(),
                sector: profile.sector.clone(),
                customer_focus: profile.customer_focus.clone(),
                tuples: self
                    .tuples_for(&profile.company_id)
                    .map(|t| TupleJson {
                        t: t.period_index,
                        date: t.date,
                        u: t.revenue,
                        z: t.growth,
                        z_next: t.next_growth,
                    })
                    .collect(),
            })
            .collect();
        serde_json::to_value(DatasetJson {
            periodicity: self.periodicity,
            granularity: self.granularity,
            companies,
        })
        .expect("dataset serialization cannot fail")
    }

    /// Inverse of [`Dataset::to_json`]; re-validates the panel invariants.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, DataError> {
        let parsed: DatasetJson =
            serde_json::from_value(value.clone()).map_err(|e| DataError::MalformedRow {
                line: 0,
                message: e.to_string(),
            })?;
        let mut profiles = BTreeMap::new();
        let mut tuples = Vec::new();
        for company in parsed.companies {
            let profile = CompanyProfile {
                company_id: company.company_id.clone(),
                sector: company.sector,
                customer_focus: company.customer_focus,
            };
            profiles.insert(profile.company_id.clone(), profile);
            for t in company.tuples {
                tuples.push(RevenueTuple {
                    company_id: company.company_id.clone(),
                    period_index: t.t,
                    date: t.date,
                    revenue: t.u,
                    growth: t.z,
                    next_growth: t.z_next,
                });
            }
        }
        Dataset::from_parts(parsed.periodicity, parsed.granularity, profiles, tuples)
    }

    /// Assembles a dataset from parts, enforcing the panel invariants:
    /// every tuple has a profile, no duplicate (company, period) pairs,
    /// all values positive.
    pub fn from_parts(
        periodicity: u32,
        granularity: Granularity,
        profiles: BTreeMap<CompanyId, CompanyProfile>,
        mut tuples: Vec<RevenueTuple>,
    ) -> Result<Self, DataError> {
        if periodicity == 0 {
            return Err(DataError::InvalidPeriodicity);
        }
        tuples.sort_by(|a, b| {
            (&a.company_id, a.period_index).cmp(&(&b.company_id, b.period_index))
        });
        for pair in tuples.windows(2) {
            if pair[0].company_id == pair[1].company_id
                && pair[0].period_index == pair[1].period_index
            {
                return Err(DataError::DuplicatePeriod {
                    company: pair[0].company_id.to_string(),
                    period_index: pair[0].period_index,
                });
            }
        }
        for t in &tuples {
            if !profiles.contains_key(&t.company_id) {
                return Err(DataError::UnknownCompany {
                    company: t.company_id.to_string(),
                });
            }
            if t.revenue <= 0.0 || t.growth <= 0.0 || t.next_growth <= 0.0 {
                return Err(DataError::NonPositiveRevenue {
                    company: t.company_id.to_string(),
                    date: t.date.to_string(),
                    value: t.revenue.min(t.growth).min(t.next_growth),
                });
            }
        }
        Ok(Dataset {
            periodicity,
            granularity,
            profiles,
            tuples,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    periodicity: u32,
    granularity: Granularity,
    companies: Vec<DatasetCompanyJson>,
}

#[derive(Serialize, Deserialize)]
struct DatasetCompanyJson {
    company_id: CompanyId,
    sector: String,
    customer_focus: String,
    tuples: Vec<TupleJson>,
}

#[derive(Serialize, Deserialize)]
struct TupleJson {
    t: usize,
    date: CalendarDate,
    u: f64,
    z: f64,
    z_next: f64,
}

/// YoY growth series of a booked series: `z_t = u_t / u_{t-p}` where the
/// lagged point exists, `None` for the leading `p` positions.
///
/// Requires strictly increasing dates at uniform one-period spacing and
/// positive revenue; gaps are rejected rather than imputed here (the
/// dynamical system itself imputes during filtering).
pub fn compute_growth_series(
    company: &CompanyId,
    booked: &[(CalendarDate, f64)],
    periodicity: u32,
) -> Result<Vec<Option<f64>>, DataError> {
    if periodicity == 0 {
        return Err(DataError::InvalidPeriodicity);
    }
    for (date, value) in booked {
        if *value <= 0.0 || !value.is_finite() {
            return Err(DataError::NonPositiveRevenue {
                company: company.to_string(),
                date: date.to_string(),
                value: *value,
            });
        }
    }
    for pair in booked.windows(2) {
        if pair[1].0.periods_since(&pair[0].0) != 1 {
            return Err(DataError::DateSpacing {
                company: company.to_string(),
                prev: pair[0].0.to_string(),
                next: pair[1].0.to_string(),
            });
        }
    }
    let p = periodicity as usize;
    Ok(booked
        .iter()
        .enumerate()
        .map(|(i, (_, u))| {
            if i >= p {
                Some(u / booked[i - p].1)
            } else {
                None
            }
        })
        .collect())
}

/// Builds the tuple panel from raw series.
///
/// Emits one tuple per position where `u_t`, `z_t` and `z_{t+1}` are all
/// defined, so a gap-free series of length `L` yields `L - p - 1` tuples.
/// Companies too short for a single tuple are skipped with a warning record.
pub fn build_dataset(
    raw: &[RawCompany],
    periodicity: u32,
    granularity: Granularity,
) -> Result<BuildReport, DataError> {
    if periodicity == 0 {
        return Err(DataError::InvalidPeriodicity);
    }
    let p = periodicity as usize;
    let mut profiles = BTreeMap::new();
    let mut tuples = Vec::new();
    let mut skipped = Vec::new();
    for company in raw {
        let growth = compute_growth_series(
            &company.profile.company_id,
            &company.series,
            periodicity,
        )?;
        if company.series.len() < p + 2 {
            skipped.push(SkippedCompany {
                company_id: company.profile.company_id.clone(),
                points: company.series.len(),
                required: p + 2,
            });
            continue;
        }
        profiles.insert(company.profile.company_id.clone(), company.profile.clone());
        // Positions p .. len-2 have both z_t and z_{t+1}; re-index from 1.
        for (offset, i) in (p..company.series.len() - 1).enumerate() {
            let (date, revenue) = company.series[i];
            tuples.push(RevenueTuple {
                company_id: company.profile.company_id.clone(),
                period_index: offset + 1,
                date,
                revenue,
                growth: growth[i].expect("growth defined for i >= p"),
                next_growth: growth[i + 1].expect("growth defined for i+1 > p"),
            });
        }
    }
    let dataset = Dataset::from_parts(periodicity, granularity, profiles, tuples)?;
    Ok(BuildReport { dataset, skipped })
}
