//! Exact reference by exhaustive enumeration.
//!
//! Walks every binary commitment, dispatches the feasible ones, and keeps
//! the global minimum. Exponential on purpose: an unarguable ground truth
//! at desk scale for validating the relax-and-round pipeline, not a
//! production path.

use crate::dispatch::{check_reserve, dispatch};
use crate::error::{Error, Result};
use crate::fleet::{reserve_requirement, Fleet, Generator, ReservePolicy};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

/// Hard ceiling on fleet size unless the caller raises it; 2^20 dispatches
/// is the edge of patience.
pub const DEFAULT_N_CAP: usize = 20;

/// Globally optimal commitment and the search statistics behind it.
#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    /// Optimal commitment, indexed like the fleet.
    pub u: Vec<bool>,
    /// Dispatch of the committed units (zero for uncommitted).
    pub p: Vec<f64>,
    /// Total cost of the optimum, USD/h.
    pub objective: f64,
    /// Number of feasible commitments dispatched.
    pub evaluated: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Candidate ordering: exact objective, then fewest committed units, then
/// lexicographically smallest commitment vector. Total, so any merge order
/// of partial results lands on the same winner.
fn better(a: &(f64, u64), b: &(f64, u64)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    let (ca, cb) = (a.1.count_ones(), b.1.count_ones());
    if ca != cb {
        return ca < cb;
    }
    // Lex order on the bool vector compares unit 0 first, so the mask with
    // its low bit clear wins; reversing the bits puts that bit in front.
    a.1.reverse_bits() < b.1.reverse_bits()
}

/// Enumerate all 2^n commitments of a fleet and return the cheapest
/// feasible one. `n_cap` guards against accidental exponential blowups;
/// the reserve policy decides which contingency rule feasibility uses.
pub fn exhaustive_uc(fleet: &Fleet, n_cap: usize, policy: ReservePolicy) -> Result<OracleResult> {
    let started = Instant::now();
    let n = fleet.len();
    if n == 0 {
        return Err(Error::EmptyFleet);
    }
    if n > n_cap {
        return Err(Error::FleetTooLarge { n, cap: n_cap });
    }
    let req = reserve_requirement(fleet, policy)?;
    let total: u64 = 1u64 << n;

    // Gray-code order flips one unit between consecutive masks, so each
    // worker maintains its committed set and capacity sum incrementally
    // across its contiguous index range.
    let chunk: u64 = ((total >> 4) / rayon::current_num_threads().max(1) as u64)
        .clamp(1, 1 << 16);
    let starts: Vec<u64> = (1..total).step_by(chunk as usize).collect();
    let results: Vec<(Option<(f64, u64)>, u64)> = starts
        .par_iter()
        .map(|&s| scan_range(fleet, &req, s, (s + chunk).min(total)))
        .collect();

    let mut evaluated = 0;
    let mut best: Option<(f64, u64)> = None;
    for (candidate, count) in results {
        evaluated += count;
        if let Some(c) = candidate {
            if best.as_ref().is_none_or(|b| better(&c, b)) {
                best = Some(c);
            }
        }
    }
    let (objective, mask) = best.ok_or(Error::NoFeasibleSubset)?;

    let committed: Vec<Generator> = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| fleet.generators[i].clone())
        .collect();
    let r = dispatch(&committed, fleet.demand).expect("winning mask re-dispatches");
    let mut p = vec![0.0; n];
    let mut k = 0;
    let mut u = vec![false; n];
    for i in 0..n {
        if mask & (1 << i) != 0 {
            u[i] = true;
            p[i] = r.p[k];
            k += 1;
        }
    }
    Ok(OracleResult {
        u,
        p,
        objective,
        evaluated,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Enumerate Gray codes of indices `[from, to)`, returning the local best
/// and the count of feasible masks dispatched.
fn scan_range(
    fleet: &Fleet,
    req: &crate::fleet::ReserveRequirement,
    from: u64,
    to: u64,
) -> (Option<(f64, u64)>, u64) {
    let n = fleet.len();
    let mut mask = from ^ (from >> 1);
    let mut cap: f64 = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| fleet.generators[i].p_max)
        .sum();
    let mut committed: Vec<Generator> = Vec::with_capacity(n);
    let mut best: Option<(f64, u64)> = None;
    let mut evaluated = 0;

    for i in from..to {
        // Cheap screens first: capacity must carry demand, and with the
        // fleet-wide contingency rule the requirement is mask-independent.
        let viable = cap >= fleet.demand
            && match req.policy {
                ReservePolicy::FleetMax => cap >= req.value,
                ReservePolicy::CommittedMax => cap >= req.base,
            };
        if viable {
            committed.clear();
            committed.extend(
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| fleet.generators[i].clone()),
            );
            if check_reserve(&committed, req) {
                if let Ok(r) = dispatch(&committed, fleet.demand) {
                    evaluated += 1;
                    let c = (r.objective, mask);
                    if best.as_ref().is_none_or(|b| better(&c, b)) {
                        best = Some(c);
                    }
                }
            }
        }
        if i + 1 < to {
            let flip = (i + 1).trailing_zeros() as usize;
            let bit = 1u64 << flip;
            mask ^= bit;
            if mask & bit != 0 {
                cap += fleet.generators[flip].p_max;
            } else {
                cap -= fleet.generators[flip].p_max;
            }
        }
    }
    (best, evaluated)
}
