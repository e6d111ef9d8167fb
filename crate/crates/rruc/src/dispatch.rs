//! Exact economic dispatch for a fixed committed set.
//!
//! Minimizes `Σ a_j p_j² + b_j p_j + c_j` subject to `Σ p_j ≥ D` and the
//! generation boxes `p_min,j ≤ p_j ≤ p_max,j`. The demand constraint binds
//! unless `Σ p_min,j ≥ D`, so the optimum is characterized by a single
//! marginal price λ: every unit produces `clamp((λ − b_j)/(2 a_j))`. λ is
//! located by bisection on the monotone aggregate supply curve, then
//! polished with a Newton step on the interior subset.

use crate::error::{Error, Result};
use crate::fleet::{Generator, ReserveRequirement};
use serde::Serialize;

const LAMBDA_MAX_ITER: usize = 200;
const LAMBDA_REL_TOL: f64 = 1e-12;
/// Relative tolerance used both to detect marginal linear units and to
/// classify binding bounds.
const BINDING_REL_TOL: f64 = 1e-9;

/// Which bound (if any) a dispatched unit sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binding {
    Lower,
    Interior,
    Upper,
}

/// Optimal dispatch of a committed set.
#[derive(Debug, Clone, Serialize)]
pub struct DispatchResult {
    /// Power per unit, in the order of the committed slice.
    pub p: Vec<f64>,
    /// Total variable cost `Σ a p² + b p + c` of the committed units.
    pub objective: f64,
    /// Marginal price. `None` when `Σ p_min ≥ D` leaves demand slack.
    pub lambda: Option<f64>,
    pub binding: Vec<Binding>,
}

/// Aggregate supply at price λ. Right-continuous: a linear unit whose
/// marginal cost equals λ contributes its upper bound, so bisection can
/// maintain `S(λ_lo) < D ≤ S(λ_hi)`.
fn supply_at(committed: &[Generator], lambda: f64) -> f64 {
    committed
        .iter()
        .map(|g| {
            if g.a > 0.0 {
                ((lambda - g.b) / (2.0 * g.a)).clamp(g.p_min, g.p_max)
            } else if lambda >= g.b {
                g.p_max
            } else {
                g.p_min
            }
        })
        .sum()
}

/// Solve the economic dispatch of `committed` against `demand`.
///
/// Errors with [`Error::Infeasible`] when `Σ p_max < D`. The committed
/// slice must be non-empty and hold validated generators.
pub fn dispatch(committed: &[Generator], demand: f64) -> Result<DispatchResult> {
    if committed.is_empty() {
        return Err(Error::InvalidParameter {
            name: "committed",
            detail: "committed set must contain at least one unit".into(),
        });
    }
    let sum_min: f64 = committed.iter().map(|g| g.p_min).sum();
    let sum_max: f64 = committed.iter().map(|g| g.p_max).sum();
    if sum_max < demand {
        return Err(Error::Infeasible {
            constraint: "demand",
            needed: demand,
            available: sum_max,
        });
    }
    if sum_min >= demand {
        // Demand slack: every unit rests at its lower bound and no marginal
        // price is defined.
        let p: Vec<f64> = committed.iter().map(|g| g.p_min).collect();
        let objective = committed.iter().map(|g| g.cost(g.p_min)).sum();
        let binding = vec![Binding::Lower; committed.len()];
        return Ok(DispatchResult {
            p,
            objective,
            lambda: None,
            binding,
        });
    }

    // Bracket λ. At λ below every b_j supply is Σ p_min < D; at the largest
    // marginal cost at p_max supply is Σ p_max ≥ D.
    let mut lam_lo = committed.iter().map(|g| g.b).fold(f64::INFINITY, f64::min);
    let mut lam_hi = committed
        .iter()
        .map(|g| g.marginal_cost(g.p_max))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut width = (lam_hi - lam_lo).max(1.0);
    for _ in 0..128 {
        if supply_at(committed, lam_lo) < demand {
            break;
        }
        lam_lo -= width;
        width *= 2.0;
    }
    width = (lam_hi - lam_lo).max(1.0);
    for _ in 0..128 {
        if supply_at(committed, lam_hi) >= demand {
            break;
        }
        lam_hi += width;
        width *= 2.0;
    }

    for _ in 0..LAMBDA_MAX_ITER {
        if lam_hi - lam_lo <= LAMBDA_REL_TOL * lam_hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lam_lo + lam_hi);
        if supply_at(committed, mid) >= demand {
            lam_hi = mid;
        } else {
            lam_lo = mid;
        }
    }
    let mut lambda = lam_hi;

    // Resolve unit set points at λ. Linear units exactly at the margin are
    // fractionally loaded afterwards, lowest id first, to meet demand.
    let marg_tol = BINDING_REL_TOL * lambda.abs().max(1.0);
    let n = committed.len();
    let mut p = vec![0.0; n];
    let mut marginal: Vec<usize> = Vec::new();
    for (j, g) in committed.iter().enumerate() {
        if g.a > 0.0 {
            p[j] = ((lambda - g.b) / (2.0 * g.a)).clamp(g.p_min, g.p_max);
        } else if (g.b - lambda).abs() <= marg_tol {
            p[j] = g.p_min;
            marginal.push(j);
        } else if g.b < lambda {
            p[j] = g.p_max;
        } else {
            p[j] = g.p_min;
        }
    }
    marginal.sort_by(|&x, &y| committed[x].id.cmp(&committed[y].id));
    let mut need = demand - p.iter().sum::<f64>();
    for &j in &marginal {
        if need <= 0.0 {
            break;
        }
        let take = need.min(committed[j].p_max - committed[j].p_min);
        p[j] += take;
        need -= take;
    }

    // Newton polish on the strictly interior quadratic units removes the
    // residual bisection error in one or two steps.
    let demand_tol = BINDING_REL_TOL * demand.abs().max(1.0);
    for _ in 0..5 {
        let residual = demand - p.iter().sum::<f64>();
        if residual.abs() <= demand_tol {
            break;
        }
        let slope: f64 = committed
            .iter()
            .enumerate()
            .filter(|(j, g)| {
                let tiny = 1e-12 * (g.p_max - g.p_min).max(1.0);
                g.a > 0.0 && p[*j] > g.p_min + tiny && p[*j] < g.p_max - tiny
            })
            .map(|(_, g)| 1.0 / (2.0 * g.a))
            .sum();
        if slope <= 0.0 {
            break;
        }
        lambda += residual / slope;
        for (j, g) in committed.iter().enumerate() {
            if g.a > 0.0 {
                p[j] = ((lambda - g.b) / (2.0 * g.a)).clamp(g.p_min, g.p_max);
            }
        }
    }

    let binding = committed
        .iter()
        .zip(&p)
        .map(|(g, &pj)| {
            let tol = BINDING_REL_TOL * (g.p_max - g.p_min).max(1.0);
            if pj <= g.p_min + tol {
                Binding::Lower
            } else if pj >= g.p_max - tol {
                Binding::Upper
            } else {
                Binding::Interior
            }
        })
        .collect();
    let objective = committed.iter().zip(&p).map(|(g, &pj)| g.cost(pj)).sum();
    Ok(DispatchResult {
        p,
        objective,
        lambda: Some(lambda),
        binding,
    })
}

/// Whether the committed set carries the spinning reserve requirement.
pub fn check_reserve(committed: &[Generator], requirement: &ReserveRequirement) -> bool {
    let capacity: f64 = committed.iter().map(|g| g.p_max).sum();
    let largest = committed.iter().fold(0.0_f64, |m, g| m.max(g.p_max));
    capacity >= requirement.for_committed_pmax(largest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_committed_set;
    use proptest::prelude::*;

    fn gen(id: &str, a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Generator {
        Generator {
            id: id.into(),
            p_min: lo,
            p_max: hi,
            a,
            b,
            c,
            startup_cost: 0.0,
            first_step_price: None,
            max_step_price: None,
        }
    }

    /// Brute-force reference for two units: scan p_1 on a fine grid with
    /// p_2 = D − p_1 forced onto the demand constraint.
    fn grid_oracle_two(units: &[Generator], demand: f64, steps: usize) -> (f64, [f64; 2]) {
        let (g1, g2) = (&units[0], &units[1]);
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=steps {
            let p1 = g1.p_min + (g1.p_max - g1.p_min) * i as f64 / steps as f64;
            let p2 = demand - p1;
            if p2 < g2.p_min - 1e-9 || p2 > g2.p_max + 1e-9 {
                continue;
            }
            let cost = g1.cost(p1) + g2.cost(p2.clamp(g2.p_min, g2.p_max));
            if cost < best.0 {
                best = (cost, [p1, p2]);
            }
        }
        best
    }

    /// Cost of the cheapest feasible point among `samples` random draws.
    /// A convex-optimality spot check: no sampled feasible dispatch may
    /// beat the solver.
    fn best_sampled_cost(units: &[Generator], demand: f64, samples: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::INFINITY;
        for _ in 0..samples {
            let p: Vec<f64> = units
                .iter()
                .map(|g| rng.random_range(g.p_min..=g.p_max))
                .collect();
            if p.iter().sum::<f64>() >= demand {
                let cost: f64 = units.iter().zip(&p).map(|(g, &pj)| g.cost(pj)).sum();
                best = best.min(cost);
            }
        }
        best
    }

    fn kkt_ok(units: &[Generator], result: &DispatchResult, demand: f64) -> bool {
        let total: f64 = result.p.iter().sum();
        if total < demand - 1e-6 * demand.abs().max(1.0) {
            return false;
        }
        let Some(lambda) = result.lambda else {
            let slack: f64 = units.iter().map(|g| g.p_min).sum();
            return slack >= demand && units.iter().zip(&result.p).all(|(g, &p)| p == g.p_min);
        };
        let tol = 1e-6 * lambda.abs().max(1.0);
        units.iter().zip(&result.p).all(|(g, &p)| {
            let mc = g.marginal_cost(p);
            let lo_tol = 1e-9 * (g.p_max - g.p_min).max(1.0);
            if p <= g.p_min + lo_tol {
                mc >= lambda - tol
            } else if p >= g.p_max - lo_tol {
                mc <= lambda + tol
            } else {
                (mc - lambda).abs() <= tol
            }
        })
    }

    #[test]
    fn single_linear_unit_meets_demand() {
        let units = vec![gen("g1", 0.0, 10.0, 5.0, 0.0, 100.0)];
        let r = dispatch(&units, 50.0).unwrap();
        assert!((r.p[0] - 50.0).abs() < 1e-9);
        assert!((r.objective - 505.0).abs() < 1e-9);
        assert!((r.lambda.unwrap() - 10.0).abs() < 1e-6);
        assert_eq!(r.binding[0], Binding::Interior);
    }

    #[test]
    fn two_quadratic_units_share_marginal_price() {
        // Worked instance: λ* = 820/75, p = (140/3, 220/3).
        let units = vec![
            gen("g1", 0.01, 10.0, 0.0, 10.0, 100.0),
            gen("g2", 0.02, 8.0, 0.0, 10.0, 100.0),
        ];
        let r = dispatch(&units, 120.0).unwrap();
        let lambda = r.lambda.unwrap();
        assert!((lambda - 820.0 / 75.0).abs() < 1e-6, "lambda {lambda}");
        assert!((r.p[0] - 140.0 / 3.0).abs() < 1e-6);
        assert!((r.p[1] - 220.0 / 3.0).abs() < 1e-6);
        assert_eq!(r.binding, vec![Binding::Interior, Binding::Interior]);

        let (grid_cost, grid_p) = grid_oracle_two(&units, 120.0, 2_000_000);
        assert!(r.objective <= grid_cost + 1e-6);
        for (a, b) in r.p.iter().zip(&grid_p) {
            assert!((a - b).abs() < 1e-3, "dispatch {a} vs grid {b}");
        }
    }

    #[test]
    fn demand_slack_rests_at_lower_bounds() {
        let units = vec![
            gen("g1", 0.01, 10.0, 2.0, 80.0, 100.0),
            gen("g2", 0.02, 8.0, 3.0, 70.0, 100.0),
        ];
        let r = dispatch(&units, 100.0).unwrap();
        assert_eq!(r.lambda, None);
        assert_eq!(r.p, vec![80.0, 70.0]);
        assert_eq!(r.binding, vec![Binding::Lower, Binding::Lower]);
        let expected: f64 = units[0].cost(80.0) + units[1].cost(70.0);
        assert!((r.objective - expected).abs() < 1e-9);
    }

    #[test]
    fn capacity_shortfall_is_infeasible() {
        let units = vec![gen("g1", 0.0, 10.0, 0.0, 0.0, 40.0)];
        let err = dispatch(&units, 50.0).unwrap_err();
        match err {
            Error::Infeasible {
                constraint,
                needed,
                available,
            } => {
                assert_eq!(constraint, "demand");
                assert_eq!(needed, 50.0);
                assert_eq!(available, 40.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tied_linear_units_fill_lowest_id_first() {
        let units = vec![
            gen("b", 0.0, 10.0, 0.0, 0.0, 50.0),
            gen("a", 0.0, 10.0, 0.0, 0.0, 50.0),
        ];
        let r = dispatch(&units, 60.0).unwrap();
        // Unit "a" (index 1) is filled to capacity before "b" takes the rest.
        assert!((r.p[1] - 50.0).abs() < 1e-9, "p = {:?}", r.p);
        assert!((r.p[0] - 10.0).abs() < 1e-9, "p = {:?}", r.p);
        assert!((r.lambda.unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn mixed_fleet_satisfies_kkt_and_dominates_samples() {
        let units = vec![
            gen("g1", 0.0, 12.0, 5.0, 5.0, 60.0),
            gen("g2", 0.015, 9.0, 7.0, 10.0, 90.0),
            gen("g3", 0.004, 11.0, 1.0, 0.0, 120.0),
            gen("g4", 0.0, 25.0, 4.0, 0.0, 80.0),
        ];
        for demand in [30.0, 120.0, 200.0, 310.0] {
            let r = dispatch(&units, demand).unwrap();
            assert!(kkt_ok(&units, &r, demand), "KKT failed at D={demand}");
            let sampled = best_sampled_cost(&units, demand, 20_000, demand as u64);
            assert!(
                r.objective <= sampled + 1e-9,
                "D={demand}: {} beaten by sample {sampled}",
                r.objective
            );
        }
    }

    #[test]
    fn random_sets_satisfy_kkt() {
        for seed in 0..200 {
            let (units, demand) = random_committed_set(1 + (seed as usize % 10), seed);
            let r = dispatch(&units, demand).unwrap();
            assert!(kkt_ok(&units, &r, demand), "seed {seed}");
            for (g, &p) in units.iter().zip(&r.p) {
                assert!(p >= g.p_min - 1e-9 && p <= g.p_max + 1e-9);
            }
        }
    }

    #[test]
    fn reserve_check_uses_largest_committed_unit() {
        let req = ReserveRequirement {
            value: 210.0,
            base: 130.0,
            policy: crate::fleet::ReservePolicy::CommittedMax,
        };
        let small = vec![gen("g1", 0.0, 10.0, 0.0, 0.0, 50.0), gen("g2", 0.0, 9.0, 0.0, 0.0, 50.0)];
        // 100 < 130 + 50: fails even though the fleet-wide largest unit is
        // not committed.
        assert!(!check_reserve(&small, &req));
        let big = vec![
            gen("g1", 0.0, 10.0, 0.0, 0.0, 140.0),
            gen("g2", 0.0, 9.0, 0.0, 0.0, 135.0),
        ];
        // 275 ≥ 130 + 140.
        assert!(check_reserve(&big, &req));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Optimal cost is nondecreasing in demand.
        #[test]
        fn objective_monotone_in_demand(seed in 0u64..500, f1 in 0.1f64..0.9, f2 in 0.1f64..0.9) {
            let (units, _) = random_committed_set(4, seed);
            let lo: f64 = units.iter().map(|g| g.p_min).sum();
            let hi: f64 = units.iter().map(|g| g.p_max).sum();
            let d1 = lo + (hi - lo) * f1.min(f2);
            let d2 = lo + (hi - lo) * f1.max(f2);
            let r1 = dispatch(&units, d1).unwrap();
            let r2 = dispatch(&units, d2).unwrap();
            prop_assert!(r1.objective <= r2.objective + 1e-7 * r2.objective.abs().max(1.0));
        }

        /// Total output equals max(D, Σ p_min) up to tolerance.
        #[test]
        fn supply_matches_effective_demand(seed in 0u64..500) {
            let (units, demand) = random_committed_set(6, seed);
            let r = dispatch(&units, demand).unwrap();
            let lo: f64 = units.iter().map(|g| g.p_min).sum();
            let expected = demand.max(lo);
            let total: f64 = r.p.iter().sum();
            prop_assert!((total - expected).abs() <= 1e-6 * expected.abs().max(1.0),
                "total {total} expected {expected}");
        }
    }
}
