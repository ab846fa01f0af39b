//! Simulation-informed revenue measuring.
//!
//! A noisy measurement of the next revenue is constructed from peers rather
//! than taken from the books: filter the panel down to comparable peer
//! states (same business key, dated at or before the cutoff, revenue within
//! a relative band), keep the growth-quantile bucket containing the focus
//! company's current growth, sample one of the peers' *next* growths, blur
//! it with a Silverman-bandwidth Gaussian, and scale the base revenue by
//! the sampled growth de-annualized to one period:
//!
//! ```text
//! y = base * z_hat^(1/p)
//! ```
//!
//! Every draw carries the peer tuples it was sampled from, which is what
//! makes individual forecast points explainable after the fact.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calendar::CalendarDate;
use crate::dataset::{CompanyId, CompanyProfile, Dataset, RevenueTuple};

/// Floor applied to sampled growth so measured revenue stays positive under
/// extreme Gaussian draws.
pub const GROWTH_FLOOR: f64 = 1e-6;

/// Relaxing term can approach but never reach 1, keeping the lower band
/// edge positive.
const RELAX_CAP: f64 = 0.999;

/// How to proceed when the peer filters leave nothing to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    /// Fail with the first filter stage that emptied the pool.
    Strict,
    /// Widen the revenue band (twice), then drop the growth-quantile
    /// filter, then drop the business filter; fail only if still empty.
    Relax,
}

/// Tuning of the measuring engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    /// Relative half-width `r` of the revenue band, in (0, 1).
    pub relax_r: f64,
    /// Number of growth quantile buckets `n`.
    pub quantile_count: usize,
    /// YoY lag `p`: 12 for monthly panels, 1 for yearly.
    pub periodicity: u32,
    pub fallback: FallbackPolicy,
    /// Keep the focus company's own tuples among the candidates. Off by
    /// default to avoid self-leakage in backtests.
    pub include_focus: bool,
    /// Interpret the Silverman bandwidth as the Normal's standard deviation
    /// instead of its variance.
    pub silverman_as_std: bool,
}

impl MeasureConfig {
    /// Defaults at the operating point used throughout: r = 1/2, n = 4.
    pub fn new(periodicity: u32) -> Self {
        MeasureConfig {
            relax_r: 0.5,
            quantile_count: 4,
            periodicity,
            fallback: FallbackPolicy::Relax,
            include_focus: false,
            silverman_as_std: false,
        }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        if !(self.relax_r > 0.0 && self.relax_r < 1.0) {
            return Err(MeasureError::InvalidConfig(format!(
                "relax_r must lie in (0,1), got {}",
                self.relax_r
            )));
        }
        if self.quantile_count < 1 {
            return Err(MeasureError::InvalidConfig(
                "quantile_count must be >= 1".to_string(),
            ));
        }
        if self.periodicity == 0 {
            return Err(MeasureError::InvalidConfig(
                "periodicity must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Filter stage reported by [`MeasureError::Unavailable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStage {
    Business,
    Date,
    RevenueBand,
    GrowthQuantile,
}

impl std::fmt::Display for FilterStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterStage::Business => write!(f, "business-filter"),
            FilterStage::Date => write!(f, "date-filter"),
            FilterStage::RevenueBand => write!(f, "revenue-band-filter"),
            FilterStage::GrowthQuantile => write!(f, "growth-quantile-filter"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("no measurement available: {stage} left an empty pool")]
    Unavailable { stage: FilterStage },
    #[error("invalid measuring config: {0}")]
    InvalidConfig(String),
    #[error("base revenue must be positive, got {0}")]
    InvalidBase(f64),
}

/// Intermediate state of the growth-quantile filter, exposed for oracle
/// tests and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuringContext {
    /// Peers passing business, date and revenue-band filters.
    pub candidates: Vec<RevenueTuple>,
    /// Quantile boundaries `q_0..q_n` over the candidates' current growth.
    pub quantile_bounds: Vec<f64>,
    /// 1-based bucket holding the focus growth.
    pub selected_bucket: usize,
    /// Candidates whose growth falls in the selected bucket.
    pub measuring_set: Vec<RevenueTuple>,
    /// The measuring set's next-growth values, duplicates preserved.
    pub next_growth_pool: Vec<f64>,
}

/// One peer tuple recorded as provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub company_id: CompanyId,
    pub date: CalendarDate,
    pub u: f64,
    pub z: f64,
    pub z_next: f64,
}

impl From<&RevenueTuple> for PeerRecord {
    fn from(t: &RevenueTuple) -> Self {
        PeerRecord {
            company_id: t.company_id.clone(),
            date: t.date,
            u: t.revenue,
            z: t.growth,
            z_next: t.next_growth,
        }
    }
}

/// A sampled measurement with its provenance.
///
/// `measured_y = base * z_hat^(1/p)` is recomputable from the stored
/// fields; `peers` are the tuples of the measuring set the growth was
/// sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDraw {
    pub measured_y: f64,
    pub z_hat: f64,
    pub z_anchor: f64,
    pub peers: Vec<PeerRecord>,
}

/// Collects the candidate peers: same business key, dated at or before the
/// cutoff, booked revenue within `[(1-r)*base, (1+r)*base]`. The focus
/// company's own tuples are excluded unless `include_focus` is set.
pub fn assemble_candidates(
    dataset: &Dataset,
    focus: &CompanyProfile,
    base_revenue: f64,
    cutoff: CalendarDate,
    cfg: &MeasureConfig,
) -> Vec<RevenueTuple> {
    assemble_with(dataset, focus, base_revenue, cutoff, cfg.relax_r, cfg.include_focus, true)
}

fn assemble_with(
    dataset: &Dataset,
    focus: &CompanyProfile,
    base_revenue: f64,
    cutoff: CalendarDate,
    relax_r: f64,
    include_focus: bool,
    business_filter: bool,
) -> Vec<RevenueTuple> {
    let key = focus.business_key();
    // One key comparison per company, not per tuple.
    let matching: std::collections::BTreeSet<&CompanyId> = dataset
        .profiles()
        .filter(|p| !business_filter || p.business_key() == key)
        .map(|p| &p.company_id)
        .collect();
    let lo = (1.0 - relax_r) * base_revenue;
    let hi = (1.0 + relax_r) * base_revenue;
    dataset
        .tuples()
        .iter()
        .filter(|t| include_focus || t.company_id != focus.company_id)
        .filter(|t| matching.contains(&t.company_id))
        .filter(|t| t.date <= cutoff)
        .filter(|t| t.revenue >= lo && t.revenue <= hi)
        .cloned()
        .collect()
}

/// Empirical quantile with linear interpolation over a sorted slice
/// (the `(n-1)*q` positional convention).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// 1-based bucket index of `z` under bounds `q_0..q_n`: the first `j` with
/// `z < q_j`, clamped so values at or above `q_n` land in bucket `n` and
/// values below `q_0` in bucket 1. For `j < n` this realizes the half-open
/// interval `[q_{j-1}, q_j)`; the top bucket is closed to cover the
/// maximum.
pub fn quantile_bucket(z: f64, bounds: &[f64]) -> usize {
    let n = bounds.len() - 1;
    for (j, q) in bounds.iter().enumerate().skip(1) {
        if z < *q {
            return j;
        }
    }
    n.max(1)
}

/// Buckets `candidates` by current growth and keeps the bucket containing
/// `z_current`, yielding the measuring set and its next-growth pool.
pub fn growth_quantile_filter(
    candidates: Vec<RevenueTuple>,
    z_current: f64,
    quantile_count: usize,
) -> MeasuringContext {
    assert!(!candidates.is_empty(), "candidates must be non-empty");
    assert!(quantile_count >= 1);
    let mut growths: Vec<f64> = candidates.iter().map(|t| t.growth).collect();
    growths.sort_by(|a, b| a.partial_cmp(b).expect("growth values are finite"));
    let bounds: Vec<f64> = (0..=quantile_count)
        .map(|j| empirical_quantile(&growths, j as f64 / quantile_count as f64))
        .collect();
    let selected = quantile_bucket(z_current, &bounds);
    let measuring_set: Vec<RevenueTuple> = candidates
        .iter()
        .filter(|t| quantile_bucket(t.growth, &bounds) == selected)
        .cloned()
        .collect();
    let next_growth_pool = measuring_set.iter().map(|t| t.next_growth).collect();
    MeasuringContext {
        candidates,
        quantile_bounds: bounds,
        selected_bucket: selected,
        measuring_set,
        next_growth_pool,
    }
}

/// Silverman rule-of-thumb bandwidth `[(4/3) * sigma^5 / n]^(1/5)` over the
/// pool, with the population standard deviation.
pub fn silverman_bandwidth(pool: &[f64]) -> f64 {
    assert!(!pool.is_empty());
    let n = pool.len() as f64;
    let mean = pool.iter().sum::<f64>() / n;
    let var = pool.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    ((4.0 / 3.0) * sigma.powi(5) / n).powf(0.2)
}

/// Samples a likely next growth: an anchor `z_anchor` uniform over the pool
/// (duplicates raise their probability), then `z_hat` from a Normal centered
/// at the anchor with the Silverman bandwidth as variance (or as standard
/// deviation when configured). Returns `(z_anchor, z_hat)`; `z_hat` is
/// floored at [`GROWTH_FLOOR`].
pub fn sample_growth<R: Rng + ?Sized>(
    pool: &[f64],
    silverman_as_std: bool,
    rng: &mut R,
) -> (f64, f64) {
    assert!(!pool.is_empty(), "next-growth pool must be non-empty");
    let anchor = pool[rng.random_range(0..pool.len())];
    let bandwidth = silverman_bandwidth(pool);
    let std = if silverman_as_std {
        bandwidth
    } else {
        bandwidth.sqrt()
    };
    let z_hat = if std > 0.0 {
        Normal::new(anchor, std)
            .expect("finite mean and positive std")
            .sample(rng)
    } else {
        anchor
    };
    (anchor, z_hat.max(GROWTH_FLOOR))
}

/// One-period revenue step: `base * z_hat^(1/p)`. For yearly panels
/// (`p = 1`) this is plain `base * z_hat`.
pub fn measure_revenue(base: f64, z_hat: f64, periodicity: u32) -> f64 {
    debug_assert!(base > 0.0 && z_hat > 0.0);
    base * z_hat.powf(1.0 / f64::from(periodicity))
}

/// Full measuring pipeline: assemble candidates, bucket by growth, sample,
/// and scale — recording the peers used.
///
/// `z_current` is the focus company's latest known growth; `None` (possible
/// early in short histories, before a YoY lag has accumulated) skips the
/// growth-quantile filter and samples from all candidates.
///
/// Under [`FallbackPolicy::Relax`] an empty pool walks the ladder: widen the
/// revenue band to `2r` then `4r` (capped below 1), drop the growth-quantile
/// filter, drop the business filter. Under [`FallbackPolicy::Strict`] the
/// first empty pool is an error naming the responsible stage. The no-peeking
/// date filter is never dropped.
pub fn measure_with_provenance(
    dataset: &Dataset,
    focus: &CompanyProfile,
    base_revenue: f64,
    z_current: Option<f64>,
    cutoff: CalendarDate,
    cfg: &MeasureConfig,
    rng: &mut impl Rng,
) -> Result<MeasurementDraw, MeasureError> {
    cfg.validate()?;
    if base_revenue <= 0.0 || !base_revenue.is_finite() {
        return Err(MeasureError::InvalidBase(base_revenue));
    }

    let finish = |peers: Vec<RevenueTuple>, rng: &mut dyn rand::RngCore| {
        let pool: Vec<f64> = peers.iter().map(|t| t.next_growth).collect();
        let (z_anchor, z_hat) = sample_growth(&pool, cfg.silverman_as_std, rng);
        MeasurementDraw {
            measured_y: measure_revenue(base_revenue, z_hat, cfg.periodicity),
            z_hat,
            z_anchor,
            peers: peers.iter().map(PeerRecord::from).collect(),
        }
    };

    let select = |relax_r: f64| -> Vec<RevenueTuple> {
        let candidates =
            assemble_with(dataset, focus, base_revenue, cutoff, relax_r, cfg.include_focus, true);
        if candidates.is_empty() {
            return candidates;
        }
        match z_current {
            Some(z) => growth_quantile_filter(candidates, z, cfg.quantile_count).measuring_set,
            None => candidates,
        }
    };

    let strict_peers = select(cfg.relax_r);
    if !strict_peers.is_empty() {
        return Ok(finish(strict_peers, rng));
    }
    if cfg.fallback == FallbackPolicy::Strict {
        return Err(MeasureError::Unavailable {
            stage: diagnose_stage(dataset, focus, base_revenue, cutoff, cfg),
        });
    }

    // Ladder step 1: widen the revenue band, twice.
    let mut widest = cfg.relax_r;
    for doublings in 1..=2 {
        widest = (cfg.relax_r * f64::powi(2.0, doublings)).min(RELAX_CAP);
        let peers = select(widest);
        if !peers.is_empty() {
            return Ok(finish(peers, rng));
        }
    }
    // Ladder step 2: drop the growth-quantile filter.
    let candidates =
        assemble_with(dataset, focus, base_revenue, cutoff, widest, cfg.include_focus, true);
    if !candidates.is_empty() {
        return Ok(finish(candidates, rng));
    }
    // Ladder step 3: drop the business filter.
    let unscoped =
        assemble_with(dataset, focus, base_revenue, cutoff, widest, cfg.include_focus, false);
    if !unscoped.is_empty() {
        return Ok(finish(unscoped, rng));
    }
    Err(MeasureError::Unavailable {
        stage: diagnose_stage(dataset, focus, base_revenue, cutoff, cfg),
    })
}

/// Replays the filters one at a time to name the first stage that empties
/// the pool, in the order business, date, revenue band, growth quantile.
fn diagnose_stage(
    dataset: &Dataset,
    focus: &CompanyProfile,
    base_revenue: f64,
    cutoff: CalendarDate,
    cfg: &MeasureConfig,
) -> FilterStage {
    let key = focus.business_key();
    let own_excluded = dataset
        .tuples()
        .iter()
        .filter(|t| cfg.include_focus || t.company_id != focus.company_id);
    let business: Vec<&RevenueTuple> = own_excluded
        .filter(|t| {
            dataset
                .profile(&t.company_id)
                .is_some_and(|p| p.business_key() == key)
        })
        .collect();
    if business.is_empty() {
        return FilterStage::Business;
    }
    let dated: Vec<&&RevenueTuple> = business.iter().filter(|t| t.date <= cutoff).collect();
    if dated.is_empty() {
        return FilterStage::Date;
    }
    let lo = (1.0 - cfg.relax_r) * base_revenue;
    let hi = (1.0 + cfg.relax_r) * base_revenue;
    let banded: Vec<_> = dated
        .iter()
        .filter(|t| t.revenue >= lo && t.revenue <= hi)
        .collect();
    if banded.is_empty() {
        return FilterStage::RevenueBand;
    }
    FilterStage::GrowthQuantile
}
