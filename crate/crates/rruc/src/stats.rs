//! Experiment harnesses: scaling benchmarks, committed-set capacity
//! deltas, and load-sweep composition statistics.
//!
//! These produce flat records meant for CSV export and external plotting;
//! no analysis happens here beyond medians and unweighted means.

use crate::error::{Error, Result};
use crate::fleet::{replicate_fleet, Fleet, DEFAULT_DEVIATION, DEFAULT_SIGMA_FRACTION};
use crate::oracle::{exhaustive_uc, DEFAULT_N_CAP};
use crate::rounding::{rruc, CommitmentSolution, RrucOptions};
use serde::Serialize;

/// Solver under measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rruc,
    Oracle,
}

/// One timing measurement: a fleet size, a method, and what it achieved.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub n_units: usize,
    pub method: Method,
    /// Median wall time over the configured trials, seconds.
    pub wall_time: f64,
    /// Objective of the (deterministic) solve, USD/h.
    pub objective: f64,
    /// (rruc − oracle) / oracle, present on rruc records when the oracle
    /// also ran at this size.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Seed for the replication jitter.
    pub seed: u64,
    /// Timed repetitions per (size, method); one untimed warmup precedes
    /// them and the median is reported.
    pub trials: usize,
    /// Relative parameter jitter applied when replicating.
    pub deviation: f64,
    /// Solver settings for the rruc runs.
    pub rruc: RrucOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            seed: 42,
            trials: 5,
            deviation: DEFAULT_DEVIATION,
            rruc: RrucOptions::default(),
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}

/// Replicate `base` by each multiplier and time each requested method on
/// the result. Oracle timings are refused outright above the exhaustive
/// cap rather than silently skipped.
pub fn bench_scaling(
    base: &Fleet,
    multipliers: &[u32],
    methods: &[Method],
    options: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    if options.trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            detail: "must be at least 1".into(),
        });
    }
    let mut records = Vec::new();
    for &mult in multipliers {
        let fleet = replicate_fleet(base, mult, options.deviation, options.seed)?;
        let n = fleet.len();
        if methods.contains(&Method::Oracle) && n > DEFAULT_N_CAP {
            return Err(Error::FleetTooLarge { n, cap: DEFAULT_N_CAP });
        }
        let mut oracle_obj = None;
        if methods.contains(&Method::Oracle) {
            let policy = options.rruc.relaxed.reserve_policy;
            let mut times = Vec::with_capacity(options.trials);
            let mut result = exhaustive_uc(&fleet, DEFAULT_N_CAP, policy)?;
            for _ in 0..options.trials {
                result = exhaustive_uc(&fleet, DEFAULT_N_CAP, policy)?;
                times.push(result.wall_time);
            }
            oracle_obj = Some(result.objective);
            records.push(BenchRecord {
                n_units: n,
                method: Method::Oracle,
                wall_time: median(times),
                objective: result.objective,
                deviation: None,
            });
        }
        if methods.contains(&Method::Rruc) {
            let mut times = Vec::with_capacity(options.trials);
            let mut result = rruc(&fleet, &options.rruc)?;
            for _ in 0..options.trials {
                result = rruc(&fleet, &options.rruc)?;
                times.push(result.wall_time);
            }
            records.push(BenchRecord {
                n_units: n,
                method: Method::Rruc,
                wall_time: median(times),
                objective: result.objective,
                deviation: oracle_obj.map(|o| (result.objective - o) / o),
            });
        }
    }
    Ok(records)
}

/// Relative committed-capacity differences between two commitments over
/// the same fleet: `((Σ P_min_a − Σ P_min_b)/Σ P_min_b, same for P_max)`.
pub fn capacity_delta_u(a: &[bool], b: &[bool], fleet: &Fleet) -> Result<(f64, f64)> {
    let sums = |u: &[bool]| {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (g, &on) in fleet.generators.iter().zip(u) {
            if on {
                lo += g.p_min;
                hi += g.p_max;
            }
        }
        (lo, hi)
    };
    if a.len() != fleet.len() || b.len() != fleet.len() {
        return Err(Error::InvalidParameter {
            name: "commitment",
            detail: "length does not match the fleet".into(),
        });
    }
    let (a_lo, a_hi) = sums(a);
    let (b_lo, b_hi) = sums(b);
    if b_lo == 0.0 || b_hi == 0.0 {
        return Err(Error::InvalidParameter {
            name: "baseline",
            detail: "baseline commitment has zero capacity".into(),
        });
    }
    Ok(((a_lo - b_lo) / b_lo, (a_hi - b_hi) / b_hi))
}

/// [`capacity_delta_u`] over two solutions.
pub fn capacity_delta(
    a: &CommitmentSolution,
    b: &CommitmentSolution,
    fleet: &Fleet,
) -> Result<(f64, f64)> {
    capacity_delta_u(&a.u, &b.u, fleet)
}

/// Composition of the committed versus remaining units at one load level.
/// Averages are unweighted means over the units carrying the metadata in
/// question; a side with no such units reports an empty value.
#[derive(Debug, Clone, Serialize)]
pub struct CompositionRecord {
    /// Load level, MW.
    pub load_step: f64,
    pub committed_avg_first_step_price: Option<f64>,
    pub remaining_avg_first_step_price: Option<f64>,
    pub committed_avg_max_price: Option<f64>,
    pub remaining_avg_max_price: Option<f64>,
    pub committed_total_startup: f64,
    pub remaining_total_startup: f64,
    pub committed_p_min_total: f64,
    pub committed_p_max_total: f64,
}

/// Load-sweep output; `truncated_at` names the first load level the
/// solver could not serve, when the sweep stopped early.
#[derive(Debug, Clone, Serialize)]
pub struct LoadSweep {
    pub records: Vec<CompositionRecord>,
    pub truncated_at: Option<f64>,
}

fn mean_of<'a>(
    gens: impl Iterator<Item = &'a crate::fleet::Generator>,
    pick: impl Fn(&crate::fleet::Generator) -> Option<f64>,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for g in gens {
        if let Some(v) = pick(g) {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn composition(fleet: &Fleet, u: &[bool], load: f64) -> CompositionRecord {
    let side = |on: bool| {
        fleet
            .generators
            .iter()
            .zip(u)
            .filter(move |(_, &c)| c == on)
            .map(|(g, _)| g)
    };
    CompositionRecord {
        load_step: load,
        committed_avg_first_step_price: mean_of(side(true), |g| g.first_step_price),
        remaining_avg_first_step_price: mean_of(side(false), |g| g.first_step_price),
        committed_avg_max_price: mean_of(side(true), |g| g.max_step_price),
        remaining_avg_max_price: mean_of(side(false), |g| g.max_step_price),
        committed_total_startup: side(true).map(|g| g.startup_cost).sum(),
        remaining_total_startup: side(false).map(|g| g.startup_cost).sum(),
        committed_p_min_total: side(true).map(|g| g.p_min).sum(),
        committed_p_max_total: side(true).map(|g| g.p_max).sum(),
    }
}

/// Solve the fleet at every load level in `[load_start, load_end]` with
/// the given spacing and report who commits. Demand uncertainty scales
/// with load at the default fraction. Stops at the first infeasible level
/// and reports it instead of failing the whole sweep.
pub fn load_sweep(
    fleet: &Fleet,
    load_start: f64,
    load_step: f64,
    load_end: f64,
    options: &RrucOptions,
) -> Result<LoadSweep> {
    if !(load_step > 0.0) || !load_start.is_finite() || !load_end.is_finite() {
        return Err(Error::InvalidParameter {
            name: "load_step",
            detail: format!("need finite bounds and a positive step, got {load_start}..{load_end} by {load_step}"),
        });
    }
    if load_start > load_end {
        return Err(Error::InvalidParameter {
            name: "load_start",
            detail: format!("start {load_start} exceeds end {load_end}"),
        });
    }
    let mut records = Vec::new();
    let mut truncated_at = None;
    let mut load = load_start;
    while load <= load_end * (1.0 + 1e-12) {
        let leveled = fleet.with_demand(load, load * DEFAULT_SIGMA_FRACTION)?;
        match rruc(&leveled, options) {
            Ok(s) => records.push(composition(&leveled, &s.u, load)),
            Err(e) => {
                log::warn!("load sweep stops at {load} MW: {e}");
                truncated_at = Some(load);
                break;
            }
        }
        load += load_step;
    }
    Ok(LoadSweep {
        records,
        truncated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::Generator;
    use crate::synth::{random_fleet, survey_like_fleet, SynthParams};

    fn unit(id: &str, lo: f64, hi: f64, first: f64, max: f64, startup: f64) -> Generator {
        Generator {
            id: id.into(),
            p_min: lo,
            p_max: hi,
            a: 0.002,
            b: 12.0,
            c: 250.0,
            startup_cost: startup,
            first_step_price: Some(first),
            max_step_price: Some(max),
        }
    }

    #[test]
    fn capacity_delta_matches_quoted_percentages() {
        // Committed minima 1601 vs 1558 MW and maxima 3675 vs 3611 MW
        // give +2.76% and +1.77%.
        let f = Fleet {
            demand: 100.0,
            sigma_d: 0.0,
            generators: vec![
                unit("x", 1601.0, 3675.0, 20.0, 40.0, 0.0),
                unit("y", 1558.0, 3611.0, 20.0, 40.0, 0.0),
            ],
        };
        let (d_min, d_max) =
            capacity_delta_u(&[true, false], &[false, true], &f).unwrap();
        assert!((d_min - 0.0276).abs() < 5e-5, "d_min {d_min}");
        assert!((d_max - 0.0177).abs() < 5e-5, "d_max {d_max}");
    }

    #[test]
    fn identical_commitments_have_zero_delta() {
        let f = random_fleet(5, 3, &SynthParams::default());
        let u = vec![true, false, true, true, false];
        assert_eq!(capacity_delta_u(&u, &u, &f).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn empty_baseline_is_an_error() {
        let f = random_fleet(3, 4, &SynthParams::default());
        assert!(capacity_delta_u(&[true, true, true], &[false, false, false], &f).is_err());
    }

    #[test]
    fn delta_matches_hand_sums_on_disjoint_sets() {
        let f = random_fleet(6, 5, &SynthParams::default());
        let a = [true, true, true, false, false, false];
        let b = [false, false, false, true, true, true];
        let sum = |u: &[bool], pick: fn(&Generator) -> f64| -> f64 {
            f.generators
                .iter()
                .zip(u)
                .filter(|(_, &on)| on)
                .map(|(g, _)| pick(g))
                .sum()
        };
        let (d_min, d_max) = capacity_delta_u(&a, &b, &f).unwrap();
        let want_min =
            (sum(&a, |g| g.p_min) - sum(&b, |g| g.p_min)) / sum(&b, |g| g.p_min);
        let want_max =
            (sum(&a, |g| g.p_max) - sum(&b, |g| g.p_max)) / sum(&b, |g| g.p_max);
        assert!((d_min - want_min).abs() < 1e-12);
        assert!((d_max - want_max).abs() < 1e-12);
    }

    #[test]
    fn identical_units_split_symmetrically() {
        let gens: Vec<Generator> = (0..6)
            .map(|i| unit(&format!("u{i}"), 10.0, 100.0, 18.0, 35.0, 900.0))
            .collect();
        let f = Fleet {
            demand: 200.0,
            sigma_d: 0.0,
            generators: gens,
        };
        let u = [true, true, true, false, false, false];
        let rec = composition(&f, &u, 200.0);
        assert_eq!(
            rec.committed_avg_first_step_price,
            rec.remaining_avg_first_step_price
        );
        assert_eq!(rec.committed_avg_max_price, rec.remaining_avg_max_price);
        assert_eq!(rec.committed_total_startup, rec.remaining_total_startup);
        assert_eq!(rec.committed_p_min_total, 30.0);
        assert_eq!(rec.committed_p_max_total, 300.0);
    }

    #[test]
    fn union_average_recovers_fleet_average() {
        let f = survey_like_fleet(12, 6);
        let u: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
        let rec = composition(&f, &u, f.demand);
        let n_c = u.iter().filter(|&&x| x).count() as f64;
        let n_r = 12.0 - n_c;
        let whole: f64 = f
            .generators
            .iter()
            .filter_map(|g| g.first_step_price)
            .sum::<f64>()
            / 12.0;
        let merged = (rec.committed_avg_first_step_price.unwrap() * n_c
            + rec.remaining_avg_first_step_price.unwrap() * n_r)
            / 12.0;
        assert!((merged - whole).abs() < 1e-9);
    }

    #[test]
    fn bench_single_multiplier_has_sandwiched_deviation() {
        // Replication re-derives demand at the default fraction, so the
        // base must be balanced enough that no single unit dominates.
        let params = SynthParams {
            p_max: (90.0, 110.0),
            ..SynthParams::default()
        };
        let base = random_fleet(8, 2200, &params);
        let opts = BenchOptions {
            trials: 1,
            ..BenchOptions::default()
        };
        let records = bench_scaling(
            &base,
            &[1],
            &[Method::Rruc, Method::Oracle],
            &opts,
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        let dev = records
            .iter()
            .find(|r| r.method == Method::Rruc)
            .unwrap()
            .deviation
            .unwrap();
        assert!(dev >= -1e-6, "rruc beat the oracle: {dev}");
        assert!(records.iter().all(|r| r.wall_time >= 0.0));
    }

    #[test]
    fn bench_refuses_oracle_beyond_cap() {
        let base = random_fleet(8, 2300, &SynthParams::default());
        let err = bench_scaling(
            &base,
            &[4],
            &[Method::Oracle],
            &BenchOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::FleetTooLarge { n: 32, .. }));
    }

    #[test]
    fn load_sweep_truncates_past_capacity() {
        let f = survey_like_fleet(10, 7);
        let cap = f.total_p_max();
        // Levels beyond total capacity cannot be served; the sweep must
        // stop there and say so rather than erroring.
        let sweep = load_sweep(
            &f,
            cap * 0.3,
            cap * 0.3,
            cap * 1.2,
            &RrucOptions::default(),
        )
        .unwrap();
        assert!(!sweep.records.is_empty());
        assert!(sweep.truncated_at.is_some());
        for w in sweep.records.windows(2) {
            assert!(w[1].committed_p_max_total >= w[0].committed_p_max_total - 1e-9);
        }
    }

    #[test]
    fn load_sweep_rejects_bad_grid() {
        let f = survey_like_fleet(4, 8);
        assert!(load_sweep(&f, 100.0, 0.0, 200.0, &RrucOptions::default()).is_err());
        assert!(load_sweep(&f, 300.0, 50.0, 200.0, &RrucOptions::default()).is_err());
    }
}
