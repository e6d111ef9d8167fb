//! Fractional relaxation of the commitment problem.
//!
//! The binary decision u_i is relaxed to y_i ∈ [0, 1] and the resulting
//! continuous program is solved with a log-barrier interior-point method
//! paired with a crossover finisher that rebuilds the exact active-set
//! solution from the two coupling prices; the better KKT certificate is
//! the one reported. The default formulation substitutes q_i = y_i·P_i
//! (the perspective of the quadratic cost), which is convex, so the
//! reported objective is a true lower bound on the binary optimum. The
//! literal bilinear form y_i·(a P² + b P + c) is available behind
//! [`Relaxation::Bilinear`]; it shares the convex reformulation through
//! the substitution, so in practice both land on the same point and the
//! bilinear objective is reported in its literal form.

mod barrier;
mod crossover;

use crate::error::{Error, Result};
use crate::fleet::{reserve_requirement, Fleet, ReservePolicy};
use serde::{Deserialize, Serialize};

/// Smoothing term in the perspective denominator `y + ε`.
pub const EPS_Y: f64 = 1e-8;
/// Units with fractional commitment below this report `p = p_min`.
pub const Y_ZERO: f64 = 1e-6;
/// Relative pullback applied to the coupling right-hand sides so the
/// barrier has a strict interior. Only ever relaxes the problem.
const INTERIOR_MARGIN: f64 = 1e-9;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Continuous-relaxation formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relaxation {
    Perspective,
    Bilinear,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxedOptions {
    /// Scaled KKT residual required for `converged`.
    pub tol: f64,
    /// Total Newton step budget.
    pub max_iter: usize,
    pub relaxation: Relaxation,
    pub reserve_policy: ReservePolicy,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        RelaxedOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            relaxation: Relaxation::Perspective,
            reserve_policy: ReservePolicy::FleetMax,
        }
    }
}

/// Multipliers of the relaxed problem, one per constraint group, in the
/// unit order of the fleet.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxedDuals {
    /// `q − y·p_min ≥ 0` (perspective) or `p − p_min ≥ 0` (bilinear).
    pub box_lower: Vec<f64>,
    /// `y·p_max − q ≥ 0` (perspective) or `p_max − p ≥ 0` (bilinear).
    pub box_upper: Vec<f64>,
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub demand: f64,
    pub reserve: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxedSolution {
    /// Fractional commitment per unit.
    pub y: Vec<f64>,
    /// Recovered dispatch: `q_i / max(y_i, ε)` clamped into the generation
    /// box; units with `y_i <` [`Y_ZERO`] report `p_min` by convention.
    pub p: Vec<f64>,
    /// `Σ y_i (a_i p_i² + b_i p_i + c_i)` evaluated literally. Within 1e-8
    /// relative of the internal formulation objective.
    pub objective: f64,
    /// Scaled KKT residual, recomputed by [`kkt_residual`] after the solve.
    pub kkt_residual: f64,
    /// Newton steps taken.
    pub iterations: usize,
    pub converged: bool,
    pub relaxation: Relaxation,
    /// Reserve requirement the solve enforced (`Σ y_i p_max,i ≥ reserve`).
    pub reserve: f64,
    /// Internal variable: `q = y·p` under the perspective form, the raw
    /// power variable under the bilinear form.
    pub q: Vec<f64>,
    pub duals: RelaxedDuals,
    #[serde(skip)]
    pub(crate) y_lb: f64,
}

/// Solve the fractional commitment problem for `fleet`.
pub fn solve_relaxed(fleet: &Fleet, options: &RelaxedOptions) -> Result<RelaxedSolution> {
    solve_impl(fleet, options, 0.0)
}

/// Test hook: solve with the commitment variables pinned to `[y_lb, 1]`.
/// With `y_lb` near one this must reproduce the plain economic dispatch.
#[cfg(test)]
fn solve_relaxed_pinned(
    fleet: &Fleet,
    options: &RelaxedOptions,
    y_lb: f64,
) -> Result<RelaxedSolution> {
    solve_impl(fleet, options, y_lb)
}

fn solve_impl(fleet: &Fleet, options: &RelaxedOptions, y_lb: f64) -> Result<RelaxedSolution> {
    if options.tol <= 0.0 || !options.tol.is_finite() {
        return Err(Error::InvalidParameter {
            name: "tol",
            detail: "tolerance must be a positive finite number".into(),
        });
    }
    let req = reserve_requirement(fleet, options.reserve_policy)?;
    let total_pmax = fleet.total_p_max();
    // Committing everything maximizes reserve slack under both policies,
    // so this check settles feasibility of the binary problem too.
    let full_requirement = req.for_committed_pmax(fleet.max_p_max());
    if total_pmax < full_requirement {
        return Err(Error::Infeasible {
            constraint: "reserve",
            needed: full_requirement,
            available: total_pmax,
        });
    }
    // Under the committed-max policy the largest-unit term depends on the
    // (unknown) committed set; dropping it keeps the relaxation valid.
    let reserve = match options.reserve_policy {
        ReservePolicy::FleetMax => req.value,
        ReservePolicy::CommittedMax => req.base,
    };

    let lo: Vec<f64> = fleet.generators.iter().map(|g| g.p_min).collect();
    let pmax: Vec<f64> = fleet.generators.iter().map(|g| g.p_max).collect();
    // Degenerate boxes (p_min = p_max) get a hair of width so the barrier
    // has an interior; widening only enlarges the feasible set.
    let hi: Vec<f64> = fleet
        .generators
        .iter()
        .map(|g| {
            let widen = 1e-9 * g.p_min.abs().max(1.0);
            g.p_max.max(g.p_min + widen)
        })
        .collect();
    let demand = fleet.demand;
    let problem = barrier::Problem {
        lo,
        hi,
        pmax,
        a: fleet.generators.iter().map(|g| g.a).collect(),
        b: fleet.generators.iter().map(|g| g.b).collect(),
        c: fleet.generators.iter().map(|g| g.c).collect(),
        demand: demand - INTERIOR_MARGIN * demand.abs().max(1.0),
        reserve: reserve - INTERIOR_MARGIN * reserve.abs().max(1.0),
        y_lb,
        form: options.relaxation,
        eps: EPS_Y,
    };

    let mut state = starting_point(&problem).ok_or(Error::Infeasible {
        constraint: "interior",
        needed: reserve,
        available: total_pmax,
    })?;

    let m = problem.constraint_count() as f64;
    let f0 = problem.objective(&state);
    let mut t = m / f0.abs().max(1.0);
    let mut iterations = 0;
    // The KKT residual is not monotone in t: past a point, iterate
    // quantization makes larger t strictly worse. Refine in small t steps
    // once the duality-gap target is reached and keep the best iterate.
    let mut best: Option<(barrier::State, f64, f64)> = None;
    for _ in 0..40 {
        let out = barrier::solve_barrier(
            &problem,
            &mut state,
            t,
            options.max_iter.saturating_sub(iterations),
        );
        t = out.t;
        iterations += out.iterations;
        let candidate = assemble(fleet, options, &problem, &state, t, reserve, iterations, false);
        log::debug!("round t={t:.3e} kkt={:.3e}", candidate.kkt_residual);
        if best
            .as_ref()
            .is_none_or(|(_, _, k)| candidate.kkt_residual < *k)
        {
            best = Some((state.clone(), t, candidate.kkt_residual));
        }
        if candidate.kkt_residual <= options.tol
            || out.exhausted
            || iterations >= options.max_iter
            || t >= 1e16
        {
            break;
        }
        t *= 2.5;
    }
    let (state, t, _) = best.expect("at least one barrier round runs");
    let mut solution = assemble(fleet, options, &problem, &state, t, reserve, iterations, false);
    for point in crossover::crossover(fleet, options.relaxation, reserve, y_lb, &solution) {
        let candidate = finish(
            fleet, options, point.y, point.q, point.duals, reserve, y_lb, iterations,
        );
        log::debug!("crossover candidate kkt={:.3e}", candidate.kkt_residual);
        if candidate.kkt_residual < solution.kkt_residual {
            solution = candidate;
        }
    }
    solution.converged = solution.kkt_residual <= options.tol;
    Ok(solution)
}

/// Strictly interior start: y just below one, dispatch variables at the
/// box fraction that centers the demand slack. Retries with smaller gaps
/// to one when coupling slacks are razor thin.
fn starting_point(p: &barrier::Problem) -> Option<barrier::State> {
    let total_pmax: f64 = p.pmax.iter().sum();
    let slack_ratio = ((total_pmax - p.reserve) / total_pmax.max(1e-12)).max(0.0);
    for attempt in 0..40 {
        let shrink = 0.25_f64.powi(attempt);
        let dy = (1e-3 * shrink).min(0.5 * slack_ratio).min(0.5 * (1.0 - p.y_lb));
        let dy = dy.max(1e-306);
        let y0 = if p.frozen() { 1.0 } else { 1.0 - dy };
        let sum_lo: f64 = p.lo.iter().map(|l| y0 * l).sum();
        let sum_hi: f64 = p.hi.iter().map(|h| y0 * h).sum();
        let target = 0.5 * (p.demand + sum_hi);
        let f = if sum_hi > sum_lo {
            ((target - sum_lo) / (sum_hi - sum_lo)).clamp(1e-6, 1.0 - 1e-6)
        } else {
            0.5
        };
        let state = barrier::State {
            y: vec![y0; p.n()],
            w: (0..p.n())
                .map(|i| {
                    let interior = p.lo[i] + f * (p.hi[i] - p.lo[i]);
                    match p.form {
                        Relaxation::Perspective => y0 * interior,
                        Relaxation::Bilinear => interior,
                    }
                })
                .collect(),
        };
        if p.slacks(&state).is_some() {
            return Some(state);
        }
    }
    None
}

/// Extract duals from the barrier point, then finish the solution.
#[allow(clippy::too_many_arguments)]
fn assemble(
    fleet: &Fleet,
    options: &RelaxedOptions,
    problem: &barrier::Problem,
    state: &barrier::State,
    t: f64,
    reserve: f64,
    iterations: usize,
    _converged: bool,
) -> RelaxedSolution {
    let sl = problem
        .slacks(state)
        .expect("barrier iterates stay strictly interior");
    let lam = |s: f64| 1.0 / (t * s);
    let mut duals = RelaxedDuals {
        box_lower: sl.s1.iter().map(|&s| lam(s)).collect(),
        box_upper: sl.s2.iter().map(|&s| lam(s)).collect(),
        y_lower: sl.s3.iter().map(|&s| lam(s)).collect(),
        y_upper: sl.s4.iter().map(|&s| lam(s)).collect(),
        demand: lam(sl.s5),
        reserve: lam(sl.s6),
    };
    if problem.frozen() {
        // The width-zero y box acts as an equality whose free multiplier
        // is y_upper − y_lower; recover it from y-stationarity and split
        // by sign so both parts stay nonnegative. Complementarity is
        // untouched: both slacks are exactly zero.
        for (i, g) in fleet.generators.iter().enumerate() {
            let w = state.w[i];
            let c = match options.relaxation {
                Relaxation::Perspective => {
                    let den = state.y[i] + EPS_Y;
                    g.c - g.a * w * w / (den * den) + duals.box_lower[i] * g.p_min
                        - duals.box_upper[i] * g.p_max
                        - duals.reserve * g.p_max
                }
                Relaxation::Bilinear => {
                    g.cost(w) - duals.demand * w - duals.reserve * g.p_max
                }
            };
            duals.y_lower[i] = c.max(0.0);
            duals.y_upper[i] = (-c).max(0.0);
        }
    }
    finish(
        fleet,
        options,
        state.y.clone(),
        state.w.clone(),
        duals,
        reserve,
        problem.y_lb,
        iterations,
    )
}

/// Recover dispatch, evaluate the literal objective, and score the KKT
/// residual with the public evaluator.
#[allow(clippy::too_many_arguments)]
fn finish(
    fleet: &Fleet,
    options: &RelaxedOptions,
    y: Vec<f64>,
    w: Vec<f64>,
    duals: RelaxedDuals,
    reserve: f64,
    y_lb: f64,
    iterations: usize,
) -> RelaxedSolution {
    let n = fleet.len();
    let mut p = vec![0.0; n];
    for (i, g) in fleet.generators.iter().enumerate() {
        p[i] = if y[i] < Y_ZERO {
            g.p_min
        } else {
            let raw = match options.relaxation {
                Relaxation::Perspective => w[i] / y[i].max(EPS_Y),
                Relaxation::Bilinear => w[i],
            };
            raw.clamp(g.p_min, g.p_max)
        };
    }
    let objective = fleet
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| y[i] * g.cost(p[i]))
        .sum();

    let mut solution = RelaxedSolution {
        y,
        p,
        objective,
        kkt_residual: f64::INFINITY,
        iterations,
        converged: false,
        relaxation: options.relaxation,
        reserve,
        q: w,
        duals,
        y_lb,
    };
    solution.kkt_residual = kkt_residual(fleet, &solution);
    solution
}

/// Scaled KKT residual of a relaxed solution, measured against the
/// original (unrelaxed) problem data: the maximum of the stationarity
/// residual (relative to the objective gradient scale), the worst
/// complementarity product (relative to the objective), and the worst
/// constraint violation (relative to each constraint's natural scale).
/// Independent of the solver internals; tests call it directly.
pub fn kkt_residual(fleet: &Fleet, solution: &RelaxedSolution) -> f64 {
    let (y, w, d) = (&solution.y, &solution.q, &solution.duals);
    let demand = fleet.demand;
    let reserve = solution.reserve;

    let mut f = 0.0;
    let mut grad_scale: f64 = 1.0;
    let mut r_stat: f64 = 0.0;
    let mut r_comp: f64 = 0.0;
    let mut r_feas: f64 = 0.0;
    let mut s5 = -demand;
    let mut s6 = -reserve;

    for (i, g) in fleet.generators.iter().enumerate() {
        let (lo, hi) = (g.p_min, g.p_max);
        let (dfdy, dfdw, s1, s2);
        match solution.relaxation {
            Relaxation::Perspective => {
                let den = y[i] + EPS_Y;
                f += g.a * w[i] * w[i] / den + g.b * w[i] + g.c * y[i];
                dfdy = g.c - g.a * w[i] * w[i] / (den * den);
                dfdw = 2.0 * g.a * w[i] / den + g.b;
                s1 = w[i] - y[i] * lo;
                s2 = y[i] * hi - w[i];
                s5 += w[i];
            }
            Relaxation::Bilinear => {
                f += y[i] * g.cost(w[i]);
                dfdy = g.cost(w[i]);
                dfdw = y[i] * g.marginal_cost(w[i]);
                s1 = w[i] - lo;
                s2 = hi - w[i];
                s5 += y[i] * w[i];
            }
        }
        let s3 = y[i] - solution.y_lb;
        let s4 = 1.0 - y[i];
        s6 += y[i] * g.p_max;

        grad_scale = grad_scale.max(dfdy.abs()).max(dfdw.abs());
        let (ry, rw) = match solution.relaxation {
            Relaxation::Perspective => (
                dfdy + d.box_lower[i] * lo - d.box_upper[i] * hi - d.y_lower[i] + d.y_upper[i]
                    - d.reserve * g.p_max,
                dfdw - d.box_lower[i] + d.box_upper[i] - d.demand,
            ),
            Relaxation::Bilinear => (
                dfdy - d.y_lower[i] + d.y_upper[i] - d.demand * w[i] - d.reserve * g.p_max,
                dfdw - d.box_lower[i] + d.box_upper[i] - d.demand * y[i],
            ),
        };
        r_stat = r_stat.max(ry.abs()).max(rw.abs());

        let box_scale = hi.abs().max(1.0);
        r_comp = r_comp
            .max((d.box_lower[i] * s1).abs())
            .max((d.box_upper[i] * s2).abs())
            .max((d.y_lower[i] * s3).abs())
            .max((d.y_upper[i] * s4).abs());
        r_feas = r_feas
            .max((-s1).max(0.0) / box_scale)
            .max((-s2).max(0.0) / box_scale)
            .max((-s3).max(0.0))
            .max((-s4).max(0.0));
    }
    r_comp = r_comp.max((d.demand * s5).abs()).max((d.reserve * s6).abs());
    r_feas = r_feas
        .max((-s5).max(0.0) / demand.abs().max(1.0))
        .max((-s6).max(0.0) / reserve.abs().max(1.0));

    let f_scale = f.abs().max(1.0);
    log::debug!(
        "kkt parts: stat={:.3e} comp={:.3e} feas={:.3e}",
        r_stat / grad_scale,
        r_comp / f_scale,
        r_feas
    );
    (r_stat / grad_scale).max(r_comp / f_scale).max(r_feas)
}
