//! Seeded synthetic fleets for experiments, examples, and test corpora.
//!
//! Two generators are provided: [`survey_like_fleet`] mimics the parameter
//! ranges observed in real market bid data (tight `p_min` band, mostly
//! 50-100 MW units with a few large ones, no-load cost above 200 USD/h),
//! and [`random_fleet`] draws broader instances whose demand is always
//! strictly reserve-feasible, for property tests and benchmarks.

use crate::fleet::{Fleet, Generator, DEFAULT_SIGMA_FRACTION};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter ranges for [`random_fleet`].
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub p_min: (f64, f64),
    pub p_max: (f64, f64),
    /// Probability that a unit has a purely linear cost (`a = 0`).
    pub linear_prob: f64,
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub c: (f64, f64),
    /// Demand as a fraction of the largest reserve-feasible demand.
    pub demand_fraction: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            p_min: (5.0, 30.0),
            p_max: (20.0, 300.0),
            linear_prob: 0.2,
            a: (0.001, 0.1),
            b: (5.0, 500.0),
            c: (200.0, 3000.0),
            demand_fraction: (0.3, 0.95),
        }
    }
}

/// Draw a random fleet of `n` units with strictly reserve-feasible demand.
///
/// Demand is placed at a seeded fraction of the largest `D` satisfying
/// `1.06·D + max p_max ≤ 0.98·Σ p_max` (the 1.06 factor accounts for
/// `3·σ_D` at the default `σ_D = 0.02·D`), so every instance admits a
/// feasible commitment with margin.
pub fn random_fleet(n: usize, seed: u64, params: &SynthParams) -> Fleet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generators = Vec::with_capacity(n);
    for i in 0..n {
        let p_min = rng.random_range(params.p_min.0..=params.p_min.1);
        let raw_max = rng.random_range(params.p_max.0..=params.p_max.1);
        let p_max = raw_max.max(p_min + 1.0);
        let a = if rng.random_bool(params.linear_prob) {
            0.0
        } else {
            rng.random_range(params.a.0..=params.a.1)
        };
        let b = rng.random_range(params.b.0..=params.b.1);
        let c = rng.random_range(params.c.0..=params.c.1);
        generators.push(Generator {
            id: format!("g{i}"),
            p_min,
            p_max,
            a,
            b,
            c,
            startup_cost: rng.random_range(0.0..=200.0),
            first_step_price: Some(b),
            max_step_price: Some(2.0 * a * p_max + b),
        });
    }
    let total: f64 = generators.iter().map(|g| g.p_max).sum();
    let largest = generators.iter().fold(0.0_f64, |m, g| m.max(g.p_max));
    let demand_cap = ((0.98 * total - largest) / (1.0 + 3.0 * DEFAULT_SIGMA_FRACTION)).max(1.0);
    let frac = rng.random_range(params.demand_fraction.0..=params.demand_fraction.1);
    let demand = frac * demand_cap;
    Fleet::new(generators, demand, DEFAULT_SIGMA_FRACTION * demand)
        .expect("synthetic fleet is valid by construction")
}

/// Draw a fleet resembling a small-unit market survey: `p_min` 20-24 MW,
/// `p_max` mostly 50-100 MW with a few units up to 300 MW, no-load cost
/// over 200 USD/h, and a minority of expensive "tail" units. Demand follows
/// the default policy (80% of total capacity).
pub fn survey_like_fleet(n: usize, seed: u64) -> Fleet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generators = Vec::with_capacity(n);
    for i in 0..n {
        let p_min = rng.random_range(20.0..=24.0);
        let size_draw: f64 = rng.random();
        let p_max = if size_draw < 0.85 {
            rng.random_range(50.0..=100.0)
        } else if size_draw < 0.95 {
            rng.random_range(100.0..=200.0)
        } else {
            rng.random_range(200.0..=300.0)
        };
        let a = if rng.random_bool(0.25) {
            0.0
        } else {
            rng.random_range(0.002..=0.06)
        };
        let b = if rng.random_bool(0.1) {
            // Strategic tail: very high marginal price.
            rng.random_range(150.0..=800.0)
        } else {
            rng.random_range(15.0..=120.0)
        };
        let c = rng.random_range(200.0..=1500.0);
        let startup_cost = if rng.random_bool(0.7) {
            rng.random_range(0.0..=100.0)
        } else {
            rng.random_range(500.0..=6000.0)
        };
        let g = Generator {
            id: format!("u{i:03}"),
            p_min,
            p_max,
            a,
            b,
            c,
            startup_cost,
            first_step_price: Some(2.0 * a * p_min + b),
            max_step_price: Some(2.0 * a * p_max + b),
        };
        generators.push(g);
    }
    Fleet::with_default_demand(generators).expect("synthetic fleet is valid by construction")
}

/// Draw a committed set plus a demand level for dispatch tests. Demand spans
/// slack (`Σ p_min ≥ D`) through near-capacity regimes.
pub fn random_committed_set(n: usize, seed: u64) -> (Vec<Generator>, f64) {
    let params = SynthParams::default();
    let fleet = random_fleet(n, seed, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let sum_min = fleet.total_p_min();
    let sum_max = fleet.total_p_max();
    let demand = rng.random_range(0.2 * sum_min..=0.98 * sum_max);
    (fleet.generators, demand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{reserve_requirement, ReservePolicy};

    #[test]
    fn random_fleets_are_reserve_feasible() {
        let params = SynthParams::default();
        for seed in 0..50 {
            for n in [4, 8, 12] {
                let fleet = random_fleet(n, seed, &params);
                let req = reserve_requirement(&fleet, ReservePolicy::FleetMax).unwrap();
                assert!(
                    fleet.total_p_max() >= req.value,
                    "seed {seed} n {n}: capacity {} below requirement {}",
                    fleet.total_p_max(),
                    req.value
                );
            }
        }
    }

    #[test]
    fn survey_fleet_matches_advertised_ranges() {
        let fleet = survey_like_fleet(46, 1);
        assert_eq!(fleet.len(), 46);
        for g in &fleet.generators {
            assert!((20.0..=24.0).contains(&g.p_min));
            assert!((50.0..=300.0).contains(&g.p_max));
            assert!(g.c >= 200.0);
            g.validate().unwrap();
        }
    }

    #[test]
    fn same_seed_same_fleet() {
        let a = survey_like_fleet(46, 9);
        let b = survey_like_fleet(46, 9);
        assert_eq!(a, b);
    }
}
