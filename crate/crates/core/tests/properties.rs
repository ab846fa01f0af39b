//! Property tests for the panel and measuring invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use sire_core::calendar::{CalendarDate, Granularity};
use sire_core::dataset::{
    build_dataset, compute_growth_series, CompanyProfile, Dataset, RawCompany, RevenueTuple,
};
use sire_core::extrapolation::band_stats;
use sire_core::measurement::{
    growth_quantile_filter, measure_revenue, measure_with_provenance, quantile_bucket,
    MeasureConfig,
};

fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..1000.0, 3..40)
}

proptest! {
    /// Growth is the definitional ratio wherever the lag exists, absent
    /// exactly on the first p positions.
    #[test]
    fn growth_matches_definition(values in series_strategy(), p in 1u32..14) {
        let start = CalendarDate::monthly(2015, 1);
        let series: Vec<(CalendarDate, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (start.plus(i as i64), *v))
            .collect();
        let growth = compute_growth_series(&"c".into(), &series, p).unwrap();
        for (i, g) in growth.iter().enumerate() {
            if i < p as usize {
                prop_assert!(g.is_none());
            } else {
                let z = g.unwrap();
                prop_assert!((z * values[i - p as usize] - values[i]).abs() < 1e-9 * values[i]);
            }
        }
    }

    /// Panel tuples chain: z_next at t equals z at t+1, and the tuple count
    /// matches the closed form.
    #[test]
    fn panel_growth_chains(values in prop::collection::vec(0.1f64..1000.0, 3..40), p in 1u32..13) {
        let start = CalendarDate::monthly(2015, 1);
        let raw = vec![RawCompany {
            profile: CompanyProfile::new("c", "S", "F"),
            series: values
                .iter()
                .enumerate()
                .map(|(i, v)| (start.plus(i as i64), *v))
                .collect(),
        }];
        let report = build_dataset(&raw, p, Granularity::Monthly).unwrap();
        let tuples = report.dataset.tuples();
        let expected = values.len().saturating_sub(p as usize + 1);
        prop_assert_eq!(tuples.len(), expected);
        for pair in tuples.windows(2) {
            prop_assert!((pair[0].next_growth - pair[1].growth).abs() < 1e-12);
        }
    }

    /// Every growth value lands in exactly one bucket in [1, n], and the
    /// selected measuring set is exactly the candidates sharing the focus
    /// bucket.
    #[test]
    fn quantile_buckets_partition(
        growths in prop::collection::vec(0.5f64..3.0, 1..60),
        z_current in 0.3f64..3.5,
        n in 1usize..8,
    ) {
        let candidates: Vec<RevenueTuple> = growths
            .iter()
            .enumerate()
            .map(|(i, z)| RevenueTuple {
                company_id: format!("c{i}").as_str().into(),
                period_index: 1,
                date: CalendarDate::monthly(2018, 1),
                revenue: 10.0,
                growth: *z,
                next_growth: 1.0,
            })
            .collect();
        let ctx = growth_quantile_filter(candidates.clone(), z_current, n);
        prop_assert_eq!(ctx.quantile_bounds.len(), n + 1);
        prop_assert!(ctx.selected_bucket >= 1 && ctx.selected_bucket <= n);
        for w in ctx.quantile_bounds.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for t in &candidates {
            let b = quantile_bucket(t.growth, &ctx.quantile_bounds);
            prop_assert!(b >= 1 && b <= n);
            let kept = ctx.measuring_set.iter().any(|m| m == t);
            prop_assert_eq!(kept, b == ctx.selected_bucket);
        }
        prop_assert!(ctx.measuring_set.len() <= ctx.candidates.len());
    }

    /// Measuring draws stay recomputable from their own fields and respect
    /// the cutoff, under any seed.
    #[test]
    fn draws_are_recomputable_and_dated(seed in 0u64..1000, z_current in 0.5f64..2.5) {
        let cutoff = CalendarDate::monthly(2019, 6);
        let mut profiles = BTreeMap::new();
        let mut tuples = Vec::new();
        for i in 0..30usize {
            let profile = CompanyProfile::new(format!("p{i}"), "S", "F");
            profiles.insert(profile.company_id.clone(), profile);
            tuples.push(RevenueTuple {
                company_id: format!("p{i}").as_str().into(),
                period_index: 1,
                date: CalendarDate::monthly(2018, 1).plus((i % 24) as i64),
                revenue: 8.0 + i as f64 * 0.2,
                growth: 0.8 + i as f64 * 0.05,
                next_growth: 0.9 + i as f64 * 0.04,
            });
        }
        let dataset = Dataset::from_parts(12, Granularity::Monthly, profiles, tuples).unwrap();
        let focus = CompanyProfile::new("focus", "S", "F");
        let cfg = MeasureConfig::new(12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = measure_with_provenance(
            &dataset, &focus, 10.0, Some(z_current), cutoff, &cfg, &mut rng,
        ).unwrap();
        prop_assert_eq!(draw.measured_y, measure_revenue(10.0, draw.z_hat, 12));
        prop_assert!(!draw.peers.is_empty());
        for peer in &draw.peers {
            prop_assert!(peer.date <= cutoff);
        }
    }

    /// Band construction: symmetric around the mean, linear in the z value,
    /// zero exactly for constant columns.
    #[test]
    fn bands_symmetric_and_linear(
        column in prop::collection::vec(1.0f64..500.0, 2..40),
        z in 0.5f64..3.0,
    ) {
        let (mean, margin, _) = band_stats(&column, z);
        let (mean2, margin2, _) = band_stats(&column, 2.0 * z);
        prop_assert_eq!(mean, mean2);
        prop_assert!((margin2 - 2.0 * margin).abs() <= 1e-12 * margin.max(1.0));
        let constant = vec![column[0]; column.len()];
        let (cmean, cmargin, _) = band_stats(&constant, z);
        prop_assert_eq!(cmean, column[0]);
        prop_assert_eq!(cmargin, 0.0);
    }

    /// Dataset JSON round-trip is the identity on randomly built panels.
    #[test]
    fn dataset_json_round_trip(
        lens in prop::collection::vec(4usize..20, 1..5),
        p in 1u32..3,
    ) {
        let start = CalendarDate::yearly(2000);
        let raw: Vec<RawCompany> = lens
            .iter()
            .enumerate()
            .map(|(i, len)| RawCompany {
                profile: CompanyProfile::new(
                    format!("c{i}"),
                    if i % 2 == 0 { "S" } else { "T" },
                    "F",
                ),
                series: (0..*len)
                    .map(|t| (start.plus(t as i64), 5.0 * 1.3f64.powi(t as i32 + i as i32)))
                    .collect(),
            })
            .collect();
        let dataset = build_dataset(&raw, p, Granularity::Yearly).unwrap().dataset;
        let back = Dataset::from_json(&dataset.to_json()).unwrap();
        prop_assert_eq!(back, dataset);
    }
}
