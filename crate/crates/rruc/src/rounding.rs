//! Relax-and-round driver.
//!
//! The pipeline: solve the continuous relaxation, order units by their
//! fractional commitment, find the shortest prefix that clears the reserve
//! requirement, then dispatch every prefix length in parallel and keep the
//! cheapest. The sweep is exhaustive by design; the objective is not
//! monotone in the cut point because fixed costs accumulate while marginal
//! costs fall, so early stopping would change the answer.

use crate::dispatch::{dispatch, DispatchResult};
use crate::error::{Error, Result};
use crate::fleet::{reserve_requirement, Fleet, Generator, ReservePolicy};
use crate::relaxed::{solve_relaxed, RelaxedOptions};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Relative slack inside which two cut points count as tied; the smaller
/// cut point wins a tie.
const TIE_REL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct RrucOptions {
    /// Settings forwarded to the relaxed solve; the reserve policy in here
    /// also governs the prefix search.
    pub relaxed: RelaxedOptions,
    /// Evaluate only every `stride`-th cut point (the last one is always
    /// included). 0 is rejected; 1 sweeps everything.
    pub stride: usize,
    /// Cap on sweep workers; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Record the objective of every evaluated cut point.
    pub trace: bool,
}

impl Default for RrucOptions {
    fn default() -> Self {
        RrucOptions {
            relaxed: RelaxedOptions::default(),
            stride: 1,
            threads: None,
            trace: false,
        }
    }
}

/// Objective observed at one cut point; `None` when dispatch failed there.
#[derive(Debug, Clone, Serialize)]
pub struct KObjective {
    pub k: usize,
    pub objective: Option<f64>,
}

/// Binary commitment produced by the sweep, with enough bookkeeping to
/// audit it independently.
#[derive(Debug, Clone, Serialize)]
pub struct CommitmentSolution {
    /// Commitment per unit, fleet order.
    pub u: Vec<bool>,
    /// Dispatch per unit, MW, zero when uncommitted.
    pub p: Vec<f64>,
    /// Total cost, USD/h.
    pub objective: f64,
    /// Winning cut point: the first `k_star` units of `order` commit.
    pub k_star: usize,
    /// Minimal reserve-feasible prefix length.
    pub m: usize,
    /// Unit indices sorted by descending fractional commitment.
    pub order: Vec<usize>,
    /// Objective of the continuous relaxation, a lower bound.
    pub relaxed_objective: f64,
    /// Dispatch subproblems solved during the sweep.
    pub dispatch_solves: u64,
    /// Per-cut-point objectives when tracing was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_k: Option<Vec<KObjective>>,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Permutation of unit indices by descending fractional commitment.
/// Ties prefer the unit that is cheaper at full output, then the lower
/// index, so the order is total and reproducible.
pub fn order_by_y(y: &[f64], fleet: &Fleet) -> Vec<usize> {
    debug_assert_eq!(y.len(), fleet.len());
    let full_cost = |i: usize| {
        let g = &fleet.generators[i];
        g.cost(g.p_max)
    };
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&i, &j| {
        y[j].partial_cmp(&y[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                full_cost(i)
                    .partial_cmp(&full_cost(j))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| i.cmp(&j))
    });
    idx
}

/// Length of the shortest prefix of `order` whose capacity clears the
/// reserve requirement. Capacity grows faster than the committed-max
/// requirement can, so every longer prefix stays feasible too.
pub fn minimal_prefix(fleet: &Fleet, order: &[usize], policy: ReservePolicy) -> Result<usize> {
    let req = reserve_requirement(fleet, policy)?;
    let mut cap = 0.0;
    let mut largest = 0.0f64;
    let mut needed = req.value;
    for (k, &i) in order.iter().enumerate() {
        let g = &fleet.generators[i];
        cap += g.p_max;
        largest = largest.max(g.p_max);
        needed = req.for_committed_pmax(largest);
        if cap >= needed {
            return Ok(k + 1);
        }
    }
    Err(Error::Infeasible {
        constraint: "reserve",
        needed,
        available: cap,
    })
}

/// Full relax-and-round solve: relaxation, ordering, prefix search, and a
/// parallel sweep of every cut point from the minimal prefix to the whole
/// fleet. The returned commitment is the cheapest dispatched prefix; ties
/// go to the shorter one.
pub fn rruc(fleet: &Fleet, options: &RrucOptions) -> Result<CommitmentSolution> {
    let started = Instant::now();
    if options.stride == 0 {
        return Err(Error::InvalidParameter {
            name: "stride",
            detail: "must be at least 1".into(),
        });
    }
    let relaxed = solve_relaxed(fleet, &options.relaxed)?;
    let order = order_by_y(&relaxed.y, fleet);
    let m = minimal_prefix(fleet, &order, options.relaxed.reserve_policy)?;
    let n = fleet.len();

    let mut ks: Vec<usize> = (m..=n).step_by(options.stride).collect();
    if *ks.last().expect("m <= n") != n {
        ks.push(n);
    }

    let solves = AtomicU64::new(0);
    let run = || -> Vec<Option<DispatchResult>> {
        ks.par_iter()
            .map(|&k| {
                let committed: Vec<Generator> = order[..k]
                    .iter()
                    .map(|&i| fleet.generators[i].clone())
                    .collect();
                solves.fetch_add(1, Ordering::Relaxed);
                dispatch(&committed, fleet.demand).ok()
            })
            .collect()
    };
    let results = match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "threads",
                detail: e.to_string(),
            })?
            .install(run),
        None => run(),
    };

    let best = argmin_prefer_first(results.iter().map(|r| r.as_ref().map(|r| r.objective)))
        .ok_or(Error::NoFeasibleSubset)?;
    let k_star = ks[best];
    let win = results[best].as_ref().expect("held a result");

    let mut u = vec![false; n];
    let mut p = vec![0.0; n];
    for (j, &i) in order[..k_star].iter().enumerate() {
        u[i] = true;
        p[i] = win.p[j];
    }
    let per_k = options.trace.then(|| {
        ks.iter()
            .zip(&results)
            .map(|(&k, r)| KObjective {
                k,
                objective: r.as_ref().map(|r| r.objective),
            })
            .collect()
    });
    Ok(CommitmentSolution {
        u,
        p,
        objective: win.objective,
        k_star,
        m,
        order,
        relaxed_objective: relaxed.objective,
        dispatch_solves: solves.into_inner(),
        per_k,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Index of the smallest present objective, scanned in ascending
/// cut-point order regardless of which worker finished first, so the
/// winner is independent of the pool size. Objectives within [`TIE_REL`]
/// of the incumbent count as ties and keep the earlier (smaller) cut.
fn argmin_prefer_first(objectives: impl Iterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, obj) in objectives.enumerate() {
        let Some(obj) = obj else { continue };
        match best {
            None => best = Some((j, obj)),
            Some((_, incumbent)) => {
                if obj < incumbent * (1.0 - TIE_REL) {
                    best = Some((j, obj));
                }
            }
        }
    }
    best.map(|(j, _)| j)
}

/// [`rruc`] with default options and the given sweep stride.
pub fn rruc_with_stride(fleet: &Fleet, stride: usize) -> Result<CommitmentSolution> {
    rruc(
        fleet,
        &RrucOptions {
            stride,
            ..RrucOptions::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::Generator;
    use crate::synth::{random_fleet, SynthParams};
    use rand::Rng;
    use rand::SeedableRng;

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

    fn fleet(demand: f64, gens: Vec<Generator>) -> Fleet {
        Fleet {
            demand,
            sigma_d: 0.0,
            generators: gens,
        }
    }

    fn plain_fleet(n: usize) -> Fleet {
        fleet(
            50.0,
            (0..n)
                .map(|i| gen(&format!("g{i}"), 0.01, 10.0, 100.0, 5.0, 80.0))
                .collect(),
        )
    }

    #[test]
    fn order_matches_worked_example() {
        let f = plain_fleet(3);
        assert_eq!(order_by_y(&[0.2, 0.9, 0.5], &f), vec![1, 2, 0]);
    }

    #[test]
    fn equal_y_breaks_on_cost_at_capacity() {
        // Identical commitments; costs at P_max are 180, 120, 150.
        let f = fleet(
            50.0,
            vec![
                gen("x", 0.0, 1.0, 80.0, 5.0, 100.0),
                gen("y", 0.0, 1.0, 20.0, 5.0, 100.0),
                gen("z", 0.0, 1.0, 50.0, 5.0, 100.0),
            ],
        );
        assert_eq!(order_by_y(&[0.7, 0.7, 0.7], &f), vec![1, 2, 0]);
    }

    #[test]
    fn order_is_a_descending_permutation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..50 {
            let n = 2 + trial % 9;
            let f = plain_fleet(n);
            let y: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 4.0).round() / 4.0).collect();
            let order = order_by_y(&y, &f);
            let mut seen = vec![false; n];
            for &i in &order {
                assert!(!seen[i]);
                seen[i] = true;
            }
            for w in order.windows(2) {
                assert!(y[w[0]] >= y[w[1]]);
            }
        }
    }

    #[test]
    fn prefix_of_one_when_demand_is_zero() {
        // Zero demand shrinks the requirement to the largest unit alone.
        let f = fleet(
            0.0,
            vec![
                gen("a", 0.01, 10.0, 50.0, 5.0, 100.0),
                gen("b", 0.01, 10.0, 50.0, 5.0, 50.0),
            ],
        );
        assert_eq!(
            minimal_prefix(&f, &[0, 1], ReservePolicy::FleetMax).unwrap(),
            1
        );
    }

    #[test]
    fn prefix_spans_fleet_at_exact_capacity() {
        // Requirement equals total capacity: 140 + 100 = 240 = 100+80+60.
        let f = fleet(
            140.0,
            vec![
                gen("a", 0.01, 10.0, 50.0, 5.0, 100.0),
                gen("b", 0.01, 10.0, 50.0, 5.0, 80.0),
                gen("c", 0.01, 10.0, 50.0, 5.0, 60.0),
            ],
        );
        assert_eq!(
            minimal_prefix(&f, &[0, 1, 2], ReservePolicy::FleetMax).unwrap(),
            3
        );
    }

    #[test]
    fn prefix_is_minimal_under_both_policies() {
        use crate::dispatch::check_reserve;
        for seed in 0..20 {
            let f = random_fleet(7, 900 + seed, &SynthParams::default());
            for policy in [ReservePolicy::FleetMax, ReservePolicy::CommittedMax] {
                let order: Vec<usize> = (0..7).collect();
                let Ok(m) = minimal_prefix(&f, &order, policy) else {
                    continue;
                };
                let req = reserve_requirement(&f, policy).unwrap();
                let committed: Vec<Generator> =
                    (0..m).map(|i| f.generators[i].clone()).collect();
                assert!(check_reserve(&committed, &req), "seed {seed} prefix {m}");
                if m > 1 {
                    assert!(
                        !check_reserve(&committed[..m - 1], &req),
                        "seed {seed} prefix {} should fail",
                        m - 1
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_sweep_commits_everything() {
        // Reserve exactly exhausts capacity, so m = n and the sweep has a
        // single candidate.
        let f = fleet(
            140.0,
            vec![
                gen("a", 0.01, 10.0, 50.0, 5.0, 100.0),
                gen("b", 0.012, 11.0, 60.0, 5.0, 80.0),
                gen("c", 0.014, 12.0, 70.0, 5.0, 60.0),
            ],
        );
        let s = rruc(&f, &RrucOptions::default()).unwrap();
        assert_eq!(s.m, 3);
        assert_eq!(s.k_star, 3);
        assert_eq!(s.u, vec![true, true, true]);
        assert_eq!(s.dispatch_solves, 1);
        assert!(s.relaxed_objective <= s.objective * (1.0 + 1e-9));
    }

    #[test]
    fn sweep_work_count_is_prefix_span() {
        for seed in 0..10 {
            let f = random_fleet(9, 1100 + seed, &SynthParams::default());
            let opts = RrucOptions::default();
            let Ok(s) = rruc(&f, &opts) else { continue };
            assert_eq!(s.dispatch_solves, (9 - s.m + 1) as u64, "seed {seed}");
        }
    }

    #[test]
    fn stride_never_beats_the_full_sweep() {
        for seed in 0..8 {
            let f = random_fleet(10, 1200 + seed, &SynthParams::default());
            let Ok(full) = rruc(&f, &RrucOptions::default()) else {
                continue;
            };
            for stride in [2, 3, 5, 64] {
                let coarse = rruc_with_stride(&f, stride).unwrap();
                assert!(
                    full.objective <= coarse.objective * (1.0 + 1e-9),
                    "seed {seed} stride {stride}"
                );
            }
        }
    }

    #[test]
    fn wide_stride_checks_only_endpoints() {
        for seed in 0..10 {
            let f = random_fleet(8, 1300 + seed, &SynthParams::default());
            let opts = RrucOptions {
                stride: 1000,
                trace: true,
                ..RrucOptions::default()
            };
            let Ok(s) = rruc(&f, &opts) else { continue };
            let trace = s.per_k.unwrap();
            let ks: Vec<usize> = trace.iter().map(|t| t.k).collect();
            if s.m == 8 {
                assert_eq!(ks, vec![8]);
            } else {
                assert_eq!(ks, vec![s.m, 8]);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_the_answer() {
        let f = random_fleet(11, 77, &SynthParams::default());
        let base = rruc(&f, &RrucOptions::default()).unwrap();
        for t in [1, 2, 8] {
            let opts = RrucOptions {
                threads: Some(t),
                ..RrucOptions::default()
            };
            let s = rruc(&f, &opts).unwrap();
            assert_eq!(s.u, base.u);
            assert_eq!(s.k_star, base.k_star);
            assert_eq!(s.objective, base.objective);
        }
    }

    #[test]
    fn ties_keep_the_shorter_prefix() {
        // Exact tie and a tie within the relative slack both keep the
        // earliest candidate; a genuine improvement switches.
        assert_eq!(
            argmin_prefer_first([Some(10.0), Some(10.0)].into_iter()),
            Some(0)
        );
        assert_eq!(
            argmin_prefer_first([Some(10.0), Some(10.0 * (1.0 - 1e-12))].into_iter()),
            Some(0)
        );
        assert_eq!(
            argmin_prefer_first([None, Some(10.0), Some(9.0), Some(9.0)].into_iter()),
            Some(2)
        );
        assert_eq!(argmin_prefer_first([None, None].into_iter()), None);
    }

    #[test]
    fn solution_is_feasible_and_sandwiched() {
        use crate::oracle::{exhaustive_uc, DEFAULT_N_CAP};
        for seed in 0..10 {
            let f = random_fleet(7, 1400 + seed, &SynthParams::default());
            let Ok(s) = rruc(&f, &RrucOptions::default()) else {
                continue;
            };
            let oracle =
                exhaustive_uc(&f, DEFAULT_N_CAP, ReservePolicy::FleetMax).unwrap();
            assert!(
                s.relaxed_objective <= oracle.objective * (1.0 + 1e-6),
                "seed {seed}"
            );
            assert!(
                oracle.objective <= s.objective * (1.0 + 1e-9),
                "seed {seed}"
            );
            let committed: f64 = s
                .u
                .iter()
                .zip(&f.generators)
                .filter(|(&u, _)| u)
                .map(|(_, g)| g.p_max)
                .sum();
            let served: f64 = s.p.iter().sum();
            assert!(served >= f.demand - 1e-6 * f.demand.max(1.0));
            let req = reserve_requirement(&f, ReservePolicy::FleetMax).unwrap();
            assert!(committed >= req.value - 1e-9);
        }
    }
}
