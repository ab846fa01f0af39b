//! Shared fixtures for the pipeline benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sire_core::lds::{ModelParams, StateMatrix, StateVector, SystemConstants};
use sire_core::synthetic::{generate_cohort, Cohort, CohortSpec};

/// A ~1,500-point monthly cohort (50 companies x 30 months), the scale the
/// efficiency envelope is stated at.
pub fn benchmark_cohort() -> Cohort {
    let mut spec = CohortSpec::monthly(50, 4242);
    spec.series_len = (30, 30);
    generate_cohort(&spec).expect("valid spec")
}

/// The cohort company with the latest start date, whose entire history is
/// covered by dated peers.
pub fn latest_company(cohort: &Cohort) -> usize {
    (0..cohort.raw.len())
        .max_by_key(|&i| cohort.raw[i].series[0].0)
        .expect("non-empty cohort")
}

/// A measured series simulated from the state-space model itself.
pub fn simulated_series(t_len: usize, seed: u64) -> Vec<f64> {
    let sys = SystemConstants::new();
    let params = ModelParams {
        q: StateMatrix::identity() * 0.2,
        r: 0.5,
        mu: StateVector::new(20.0, 20.0, 0.5, 0.0, 0.0),
        omega: StateMatrix::identity(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chol_q = params.q.cholesky().unwrap();
    let mut x = params.mu;
    let mut ys = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            let noise = StateVector::from_fn(|_, _| rng.sample(rand_distr::StandardNormal));
            x = sys.a() * x + chol_q.l() * noise;
        }
        let eps: f64 = rng.sample(rand_distr::StandardNormal);
        ys.push(x[0] + params.r.sqrt() * eps);
    }
    ys
}
