//! Independent feasibility and optimality checks.
//!
//! Everything here recomputes from raw fleet data, on purpose sharing no
//! arithmetic with the solvers it polices. A passing audit certifies the
//! constraint set and the claimed objective; it says nothing about global
//! optimality, which only the exhaustive reference can certify.

use crate::dispatch::{Binding, DispatchResult};
use crate::error::{Error, Result};
use crate::fleet::{reserve_requirement, Fleet, Generator, ReservePolicy};
use crate::rounding::CommitmentSolution;

/// Relative tolerance for feasibility and objective recomputation.
pub const AUDIT_TOL: f64 = 1e-6;

fn violation(unit: String, field: &'static str, detail: String) -> Error {
    Error::Invariant { unit, field, detail }
}

/// Check a binary commitment against the full constraint set: shape,
/// prefix structure, bounds, demand, reserve, recomputed objective, and
/// the lower bound claimed by the relaxation.
pub fn verify_commitment(
    fleet: &Fleet,
    s: &CommitmentSolution,
    policy: ReservePolicy,
) -> Result<()> {
    let n = fleet.len();
    if s.u.len() != n || s.p.len() != n || s.order.len() != n {
        return Err(violation(
            "<solution>".into(),
            "shape",
            format!(
                "fleet has {n} units, solution has u:{} p:{} order:{}",
                s.u.len(),
                s.p.len(),
                s.order.len()
            ),
        ));
    }
    let mut seen = vec![false; n];
    for &i in &s.order {
        if i >= n || seen[i] {
            return Err(violation(
                "<solution>".into(),
                "order",
                "not a permutation of the fleet".into(),
            ));
        }
        seen[i] = true;
    }
    if s.k_star < s.m || s.k_star > n {
        return Err(violation(
            "<solution>".into(),
            "k_star",
            format!("cut {} outside [{}, {n}]", s.k_star, s.m),
        ));
    }
    for (j, &i) in s.order.iter().enumerate() {
        let expected = j < s.k_star;
        if s.u[i] != expected {
            return Err(violation(
                fleet.generators[i].id.clone(),
                "u",
                format!("position {j} of the order contradicts cut {}", s.k_star),
            ));
        }
    }

    let mut served = 0.0;
    let mut capacity = 0.0;
    let mut largest = 0.0f64;
    let mut cost = 0.0;
    for (i, g) in fleet.generators.iter().enumerate() {
        if !s.u[i] {
            if s.p[i] != 0.0 {
                return Err(violation(
                    g.id.clone(),
                    "p",
                    format!("{} MW on an uncommitted unit", s.p[i]),
                ));
            }
            continue;
        }
        let slack = AUDIT_TOL * g.p_max.max(1.0);
        if s.p[i] < g.p_min - slack || s.p[i] > g.p_max + slack {
            return Err(violation(
                g.id.clone(),
                "p",
                format!("{} MW outside [{}, {}]", s.p[i], g.p_min, g.p_max),
            ));
        }
        served += s.p[i];
        capacity += g.p_max;
        largest = largest.max(g.p_max);
        cost += g.cost(s.p[i]);
    }
    if served < fleet.demand - AUDIT_TOL * fleet.demand.max(1.0) {
        return Err(violation(
            "<solution>".into(),
            "demand",
            format!("{served} MW served against {} MW demanded", fleet.demand),
        ));
    }
    let req = reserve_requirement(fleet, policy)?;
    let needed = req.for_committed_pmax(largest);
    if capacity < needed - AUDIT_TOL * needed.max(1.0) {
        return Err(violation(
            "<solution>".into(),
            "reserve",
            format!("{capacity} MW committed against {needed} MW required"),
        ));
    }
    if (cost - s.objective).abs() > AUDIT_TOL * s.objective.abs().max(1.0) {
        return Err(violation(
            "<solution>".into(),
            "objective",
            format!("recomputed {cost}, claimed {}", s.objective),
        ));
    }
    if s.relaxed_objective > s.objective * (1.0 + AUDIT_TOL) + AUDIT_TOL {
        return Err(violation(
            "<solution>".into(),
            "relaxed_objective",
            format!(
                "claimed lower bound {} exceeds objective {}",
                s.relaxed_objective, s.objective
            ),
        ));
    }
    Ok(())
}

/// Check a dispatch result's first-order certificate: interior units share
/// the marginal price, bound-pinned units price consistently with their
/// side, and total output covers demand exactly (or sits at the aggregate
/// floor when minimums overshoot).
pub fn verify_dispatch(
    committed: &[Generator],
    demand: f64,
    r: &DispatchResult,
) -> Result<()> {
    let k = committed.len();
    if r.p.len() != k || r.binding.len() != k {
        return Err(violation(
            "<dispatch>".into(),
            "shape",
            format!("{k} units, p:{} binding:{}", r.p.len(), r.binding.len()),
        ));
    }
    let floor: f64 = committed.iter().map(|g| g.p_min).sum();
    let target = demand.max(floor);
    let served: f64 = r.p.iter().sum();
    if (served - target).abs() > AUDIT_TOL * target.max(1.0) {
        return Err(violation(
            "<dispatch>".into(),
            "balance",
            format!("served {served} MW, target {target} MW"),
        ));
    }
    let mut cost = 0.0;
    for (j, g) in committed.iter().enumerate() {
        let p = r.p[j];
        let slack = AUDIT_TOL * g.p_max.max(1.0);
        if p < g.p_min - slack || p > g.p_max + slack {
            return Err(violation(
                g.id.clone(),
                "p",
                format!("{p} MW outside [{}, {}]", g.p_min, g.p_max),
            ));
        }
        cost += g.cost(p);
        match (r.lambda, r.binding[j]) {
            (Some(lam), Binding::Interior) => {
                if (g.marginal_cost(p) - lam).abs() > AUDIT_TOL * lam.abs().max(1.0) {
                    return Err(violation(
                        g.id.clone(),
                        "lambda",
                        format!("interior marginal cost {} vs price {lam}", g.marginal_cost(p)),
                    ));
                }
            }
            (Some(lam), Binding::Lower) => {
                if p > g.p_min + slack {
                    return Err(violation(g.id.clone(), "binding", "tagged lower, off the bound".into()));
                }
                if g.marginal_cost(g.p_min) < lam - AUDIT_TOL * lam.abs().max(1.0) {
                    return Err(violation(
                        g.id.clone(),
                        "lambda",
                        format!(
                            "floor-pinned unit cheaper than the price: {} < {lam}",
                            g.marginal_cost(g.p_min)
                        ),
                    ));
                }
            }
            (Some(lam), Binding::Upper) => {
                if p < g.p_max - slack {
                    return Err(violation(g.id.clone(), "binding", "tagged upper, off the bound".into()));
                }
                if g.marginal_cost(g.p_max) > lam + AUDIT_TOL * lam.abs().max(1.0) {
                    return Err(violation(
                        g.id.clone(),
                        "lambda",
                        format!(
                            "cap-pinned unit pricier than the price: {} > {lam}",
                            g.marginal_cost(g.p_max)
                        ),
                    ));
                }
            }
            (None, Binding::Lower) => {
                if (p - g.p_min).abs() > slack {
                    return Err(violation(g.id.clone(), "binding", "slack demand but off the floor".into()));
                }
            }
            (None, b) => {
                return Err(violation(
                    g.id.clone(),
                    "binding",
                    format!("no price but binding {b:?}"),
                ));
            }
        }
    }
    if r.lambda.is_none() && floor < demand - AUDIT_TOL * demand.max(1.0) {
        return Err(violation(
            "<dispatch>".into(),
            "lambda",
            "price omitted although demand exceeds the aggregate floor".into(),
        ));
    }
    if (cost - r.objective).abs() > AUDIT_TOL * r.objective.abs().max(1.0) {
        return Err(violation(
            "<dispatch>".into(),
            "objective",
            format!("recomputed {cost}, claimed {}", r.objective),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::dispatch;
    use crate::rounding::{rruc, RrucOptions};
    use crate::synth::{random_committed_set, random_fleet, SynthParams};

    #[test]
    fn random_dispatches_certify() {
        for seed in 0..60 {
            let (committed, demand) = random_committed_set(1 + (seed as usize % 7), seed);
            let Ok(r) = dispatch(&committed, demand) else {
                continue;
            };
            verify_dispatch(&committed, demand, &r).unwrap();
        }
    }

    #[test]
    fn rruc_solutions_certify() {
        for seed in 0..15 {
            let f = random_fleet(4 + (seed as usize % 6), 2000 + seed, &SynthParams::default());
            let Ok(s) = rruc(&f, &RrucOptions::default()) else {
                continue;
            };
            verify_commitment(&f, &s, ReservePolicy::FleetMax).unwrap();
        }
    }

    #[test]
    fn tampering_is_caught() {
        let f = random_fleet(6, 2100, &SynthParams::default());
        let s = rruc(&f, &RrucOptions::default()).unwrap();
        verify_commitment(&f, &s, ReservePolicy::FleetMax).unwrap();

        let mut bad = s.clone();
        bad.objective *= 0.5;
        assert!(verify_commitment(&f, &bad, ReservePolicy::FleetMax).is_err());

        let mut bad = s.clone();
        let on = bad.u.iter().position(|&u| u).unwrap();
        bad.u[on] = false;
        assert!(verify_commitment(&f, &bad, ReservePolicy::FleetMax).is_err());

        let mut bad = s.clone();
        let on = bad.u.iter().position(|&u| u).unwrap();
        bad.p[on] = f.generators[on].p_max * 2.0;
        assert!(verify_commitment(&f, &bad, ReservePolicy::FleetMax).is_err());

        let mut bad = s.clone();
        bad.relaxed_objective = bad.objective * 2.0;
        assert!(verify_commitment(&f, &bad, ReservePolicy::FleetMax).is_err());
    }

    #[test]
    fn tampered_dispatch_is_caught() {
        let (committed, demand) = random_committed_set(5, 31);
        let r = dispatch(&committed, demand).unwrap();
        verify_dispatch(&committed, demand, &r).unwrap();

        let mut bad = r.clone();
        bad.p[0] += 1.0;
        assert!(verify_dispatch(&committed, demand, &bad).is_err());

        let mut bad = r.clone();
        bad.objective += 10.0;
        assert!(verify_dispatch(&committed, demand, &bad).is_err());
    }
}
