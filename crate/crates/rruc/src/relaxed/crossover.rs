//! Crossover finisher for the relaxed solve.
//!
//! The barrier iterate tracks the central path and bottoms out at a
//! residual floor set by the conditioning of its Newton systems; fleets
//! whose reserve requirement equals total capacity have no strict interior
//! at all. This pass rebuilds the solution from structure instead: bisect
//! the two coupling prices (demand and reserve), classify every unit by
//! the sign of its reduced commitment cost, size the fractional units from
//! the reserve balance, dispatch the surviving units exactly, and close
//! the remaining multipliers in closed form. The solver keeps whichever
//! certificate scores better.

use super::{Relaxation, RelaxedDuals, RelaxedSolution, EPS_Y};
use crate::dispatch::dispatch;
use crate::fleet::{Fleet, Generator};

/// Primal-dual candidate produced by the crossover pass. `q` follows the
/// solver's internal convention: `y·p` under the perspective form, the
/// raw power variable under the bilinear form.
pub(super) struct CrossPoint {
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub duals: RelaxedDuals,
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Committed,
    Marginal,
    Off,
}

/// Cheapest output for a unit priced at `lam` and the reduced dispatch
/// value `min_p a p² + (b − λ) p` it attains there.
fn best_output(g: &Generator, lam: f64) -> (f64, f64) {
    let p = if g.a > 0.0 {
        ((lam - g.b) / (2.0 * g.a)).clamp(g.p_min, g.p_max)
    } else if lam >= g.b {
        g.p_max
    } else {
        g.p_min
    };
    (p, g.a * p * p + (g.b - lam) * p)
}

/// Reduced commitment cost at prices `(lam, mu)`: negative means the unit
/// pays for itself at full commitment, zero makes it marginal.
fn reduced_cost(g: &Generator, lam: f64, mu: f64) -> f64 {
    best_output(g, lam).1 + g.c - mu * g.p_max
}

/// Natural magnitude of a unit's reduced cost, used to scale the marginal
/// classification band.
fn unit_scale(g: &Generator, lam: f64, mu: f64) -> f64 {
    (best_output(g, lam).1.abs() + g.c.abs() + mu * g.p_max).max(1.0)
}

/// Smallest λ ≥ 0 whose committed supply covers demand. Committed supply
/// is right-continuous and nondecreasing in λ, so bisection brackets the
/// clearing price even across commitment jumps.
fn clearing_price(fleet: &Fleet, mu: f64) -> f64 {
    let supply = |lam: f64| -> f64 {
        fleet
            .generators
            .iter()
            .filter(|g| reduced_cost(g, lam, mu) <= 0.0)
            .map(|g| best_output(g, lam).0)
            .sum()
    };
    let d = fleet.demand;
    if supply(0.0) >= d {
        return 0.0;
    }
    let mut hi = fleet
        .generators
        .iter()
        .map(|g| g.marginal_cost(g.p_max))
        .fold(1.0, f64::max);
    let mut width = hi.max(1.0);
    for _ in 0..200 {
        if supply(hi) >= d {
            break;
        }
        hi += width;
        width *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if supply(mid) >= d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Committed capacity at the clearing point for `mu`, counting units
/// within the marginal band as committed so bisection lands on the price
/// where the crossing unit turns marginal.
fn committed_capacity(fleet: &Fleet, mu: f64) -> f64 {
    let lam = clearing_price(fleet, mu);
    fleet
        .generators
        .iter()
        .filter(|g| reduced_cost(g, lam, mu) <= 1e-9 * unit_scale(g, lam, mu))
        .map(|g| g.p_max)
        .sum()
}

/// Run the crossover pass. Returns a handful of candidates built from
/// several price pairs and successively wider marginal bands; the caller
/// scores each against the KKT evaluator. The free relaxation and the
/// fully pinned one are supported; partial pins fall back to the barrier
/// iterate alone.
pub(super) fn crossover(
    fleet: &Fleet,
    form: Relaxation,
    reserve: f64,
    y_lb: f64,
    hint: &RelaxedSolution,
) -> Vec<CrossPoint> {
    if y_lb >= 1.0 {
        return pinned(fleet, form).into_iter().collect();
    }
    if y_lb > 0.0 {
        return Vec::new();
    }
    let mut mu = 0.0;
    if committed_capacity(fleet, 0.0) < reserve * (1.0 - 1e-12) {
        // Reserve needs a positive capacity price. Committed capacity is
        // nondecreasing in μ and reaches Σ p_max, which feasibility
        // guarantees is enough.
        let mut hi = 1.0;
        for _ in 0..200 {
            if committed_capacity(fleet, hi) >= reserve {
                break;
            }
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            if hi - lo <= 1e-13 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if committed_capacity(fleet, mid) >= reserve {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        mu = hi;
    }
    // Candidate price pairs. The bisected μ lands exactly on a commitment
    // threshold, so the unit entering there reads as marginal even when
    // the optimal price range extends well past the edge; a probe just
    // inside reclassifies it. The iterate-derived pairs cover vertices the
    // full-output supply model cannot see, such as fractional units pinned
    // to their scaled lower bounds below the clearing price.
    let mut pairs = vec![(clearing_price(fleet, mu), mu)];
    if mu > 0.0 {
        let probed = mu * (1.0 + 1e-4);
        pairs.push((clearing_price(fleet, probed), probed));
    }
    pairs.extend(hint_prices(fleet, form, hint));
    pairs.push((hint.duals.demand, hint.duals.reserve));
    let mut points = Vec::new();
    for (lam, m) in pairs {
        for band in [1e-7, 1e-4, 1e-10] {
            points.extend(assemble(fleet, form, reserve, lam, m, band));
        }
    }
    points
}

/// Capacity-price curve θ(λ) of a fractional unit, as coefficients of a
/// polynomial in λ. The regime is read off the iterate: a unit parked on a
/// box edge trades at the edge rate, an interior one at the price-tracking
/// rate, and in both cases the unit's reduced cost vanishes identically at
/// any pair (λ, θ(λ)).
fn theta_poly(g: &Generator, rate: f64) -> (f64, f64, f64) {
    let span = (g.p_max - g.p_min).max(1e-12);
    if rate <= g.p_min + 1e-3 * span {
        (0.0, -g.p_min / g.p_max, g.cost(g.p_min) / g.p_max)
    } else if rate >= g.p_max - 1e-3 * span {
        (0.0, -1.0, g.cost(g.p_max) / g.p_max)
    } else if g.a > 0.0 {
        let k = 4.0 * g.a * g.p_max;
        (-1.0 / k, 2.0 * g.b / k, (g.c - g.b * g.b / (4.0 * g.a)) / g.p_max)
    } else {
        (0.0, 0.0, g.c / g.p_max)
    }
}

/// Price pairs implied by the iterate's fractional units. One fractional
/// unit pins μ given the iterate's λ; two pin both prices through the
/// equal-θ condition, solved here as a polynomial root nearest the
/// iterate's λ.
fn hint_prices(fleet: &Fleet, form: Relaxation, hint: &RelaxedSolution) -> Vec<(f64, f64)> {
    let frac: Vec<usize> = hint
        .y
        .iter()
        .enumerate()
        .filter(|(_, &y)| y > 1e-3 && y < 1.0 - 1e-3)
        .map(|(i, _)| i)
        .collect();
    let rate = |i: usize| match form {
        Relaxation::Perspective => hint.q[i] / (hint.y[i] + EPS_Y),
        Relaxation::Bilinear => hint.q[i],
    };
    let lam_bar = hint.duals.demand;
    let eval = |(k2, k1, k0): (f64, f64, f64), lam: f64| k2 * lam * lam + k1 * lam + k0;
    match frac.len() {
        1 => {
            let g = &fleet.generators[frac[0]];
            let mu = eval(theta_poly(g, rate(frac[0])), lam_bar);
            if mu >= 0.0 {
                vec![(lam_bar, mu)]
            } else {
                Vec::new()
            }
        }
        2 => {
            let (g1, g2) = (&fleet.generators[frac[0]], &fleet.generators[frac[1]]);
            let p1 = theta_poly(g1, rate(frac[0]));
            let p2 = theta_poly(g2, rate(frac[1]));
            let (d2, d1, d0) = (p1.0 - p2.0, p1.1 - p2.1, p1.2 - p2.2);
            let mut roots = Vec::new();
            if d2.abs() > 1e-16 {
                let disc = d1 * d1 - 4.0 * d2 * d0;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    roots.push((-d1 - s) / (2.0 * d2));
                    roots.push((-d1 + s) / (2.0 * d2));
                }
            } else if d1.abs() > 1e-12 * d0.abs().max(1.0) {
                roots.push(-d0 / d1);
            }
            roots
                .into_iter()
                .filter(|l| l.is_finite() && *l >= 0.0)
                .min_by(|x, z| {
                    (x - lam_bar)
                        .abs()
                        .partial_cmp(&(z - lam_bar).abs())
                        .unwrap()
                })
                .map(|lam| (lam, eval(p1, lam)))
                .filter(|&(_, mu)| mu >= 0.0)
                .into_iter()
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Build one candidate from the price pair and a marginal band width.
fn assemble(
    fleet: &Fleet,
    form: Relaxation,
    reserve: f64,
    lam: f64,
    mu: f64,
    band: f64,
) -> Option<CrossPoint> {
    let n = fleet.len();
    let demand = fleet.demand;
    let mut class = vec![Class::Off; n];
    for (i, g) in fleet.generators.iter().enumerate() {
        let w = reduced_cost(g, lam, mu);
        let eta = band * unit_scale(g, lam, mu);
        class[i] = if w < -eta {
            Class::Committed
        } else if w <= eta {
            Class::Marginal
        } else {
            Class::Off
        };
    }

    let marg: Vec<usize> = (0..n).filter(|&i| class[i] == Class::Marginal).collect();
    let cap_c: f64 = (0..n)
        .filter(|&i| class[i] == Class::Committed)
        .map(|i| fleet.generators[i].p_max)
        .sum();
    let cap_m: f64 = marg.iter().map(|&i| fleet.generators[i].p_max).sum();
    let supplied: f64 = (0..n)
        .filter(|&i| class[i] == Class::Committed)
        .map(|i| best_output(&fleet.generators[i], lam).0)
        .sum();

    // Marginal commitment fractions. With a priced reserve and exactly two
    // marginal units, both couplings bind and the pair solves a 2×2
    // balance. Otherwise fill the reserve in merit order, cheapest reduced
    // cost per MW of capacity first: near-duplicate units land in the band
    // together, but a vertex keeps only the boundary one fractional.
    let mut frac = vec![0.0; marg.len()];
    let mut solved_pair = false;
    let reserve_active = mu > 1e-11 * lam.max(1.0);
    if reserve_active {
        let need_r = (reserve - cap_c).max(0.0);
        if marg.len() == 2 {
            let (gi, gj) = (&fleet.generators[marg[0]], &fleet.generators[marg[1]]);
            let (ri, rj) = (best_output(gi, lam).0, best_output(gj, lam).0);
            let (ci, cj) = (gi.p_max, gj.p_max);
            let need_d = demand - supplied;
            let det = ri * cj - rj * ci;
            if det.abs() > 1e-9 * (ri * cj).abs().max((rj * ci).abs()).max(1.0) {
                let yi = (need_d * cj - rj * need_r) / det;
                let yj = (ri * need_r - need_d * ci) / det;
                let ok = |v: f64| (-1e-9..=1.0 + 1e-9).contains(&v);
                if ok(yi) && ok(yj) {
                    frac[0] = yi.clamp(0.0, 1.0);
                    frac[1] = yj.clamp(0.0, 1.0);
                    solved_pair = true;
                }
            }
        }
        if !solved_pair {
            let mut order: Vec<usize> = (0..marg.len()).collect();
            order.sort_by(|&x, &z| {
                let gx = &fleet.generators[marg[x]];
                let gz = &fleet.generators[marg[z]];
                let wx = reduced_cost(gx, lam, mu) / gx.p_max;
                let wz = reduced_cost(gz, lam, mu) / gz.p_max;
                wx.partial_cmp(&wz).unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut left = need_r;
            for &k in &order {
                let cap = fleet.generators[marg[k]].p_max;
                frac[k] = (left / cap).min(1.0);
                left = (left - cap).max(0.0);
            }
        }
    } else {
        let marginal_rate: f64 = marg
            .iter()
            .map(|&i| best_output(&fleet.generators[i], lam).0)
            .sum();
        let shared = if marginal_rate > 0.0 {
            ((demand - supplied) / marginal_rate).clamp(0.0, 1.0)
        } else {
            0.0
        };
        frac.fill(shared);
        // Shared fractions must still leave enough headroom for demand.
        if !marg.is_empty() && cap_c < demand && cap_m > 0.0 {
            let floor = ((demand * (1.0 + 1e-12) - cap_c) / cap_m).clamp(0.0, 1.0);
            for v in &mut frac {
                *v = v.max(floor);
            }
        }
    }

    let mut y = vec![0.0; n];
    for i in 0..n {
        if class[i] == Class::Committed {
            y[i] = 1.0;
        }
    }
    for (k, &i) in marg.iter().enumerate() {
        y[i] = frac[k];
        if frac[k] >= 1.0 - 1e-12 {
            class[i] = Class::Committed;
            y[i] = 1.0;
        } else if frac[k] <= 1e-12 {
            class[i] = Class::Off;
            y[i] = 0.0;
        }
    }

    // Exact dispatch of the surviving units in q-space: the per-unit cost
    // a q²/(y+ε) + b q matches the evaluator's gradient when the quadratic
    // coefficient is scaled by the same denominator.
    let active: Vec<usize> = (0..n).filter(|&i| y[i] > 0.0).collect();
    let mut q = vec![0.0; n];
    let mut lam_x = 0.0;
    if !active.is_empty() {
        let units: Vec<Generator> = active
            .iter()
            .map(|&i| {
                let g = &fleet.generators[i];
                let den = match form {
                    Relaxation::Perspective => y[i] + EPS_Y,
                    Relaxation::Bilinear => y[i],
                };
                Generator {
                    id: g.id.clone(),
                    p_min: y[i] * g.p_min,
                    p_max: y[i] * g.p_max,
                    a: g.a / den,
                    b: g.b,
                    c: g.c,
                    startup_cost: 0.0,
                    first_step_price: None,
                    max_step_price: None,
                }
            })
            .collect();
        let r = dispatch(&units, demand).ok()?;
        // The closing price: with a strictly interior unit the dispatch
        // price is exact. When every active unit sits on a bound the
        // dispatch only pins a plateau edge and the bisected price, fixed
        // by the marginal units' stationarity, is the right one.
        let interior = r.binding.iter().any(|b| *b == crate::dispatch::Binding::Interior);
        lam_x = match (interior, r.lambda) {
            (true, Some(l)) => l,
            (_, Some(_)) => lam,
            (_, None) => 0.0,
        };
        // The dispatch variable is y-scaled; the bilinear convention keeps
        // the raw power.
        for (k, &i) in active.iter().enumerate() {
            q[i] = match form {
                Relaxation::Perspective => r.p[k],
                Relaxation::Bilinear => r.p[k] / y[i],
            };
        }
    } else if demand > 0.0 {
        return None;
    }

    // Box multipliers by binding side, and the capacity-price candidate
    // θ_i each unit's y-stationarity implies.
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    let mut l3 = vec![0.0; n];
    let mut l4 = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for &i in &active {
        let g = &fleet.generators[i];
        match form {
            Relaxation::Perspective => {
                let den = y[i] + EPS_Y;
                let dfdw = 2.0 * g.a * q[i] / den + g.b;
                let tb = 1e-7 * (y[i] * g.p_max).max(1.0);
                if q[i] <= y[i] * g.p_min + tb {
                    l1[i] = (dfdw - lam_x).max(0.0);
                } else if q[i] >= y[i] * g.p_max - tb {
                    l2[i] = (lam_x - dfdw).max(0.0);
                }
                let dfdy = g.c - g.a * q[i] * q[i] / (den * den);
                theta[i] = (dfdy + l1[i] * g.p_min - l2[i] * g.p_max) / g.p_max;
            }
            Relaxation::Bilinear => {
                let w = q[i];
                let mc = g.marginal_cost(w);
                let tb = 1e-7 * g.p_max.max(1.0);
                if w <= g.p_min + tb {
                    l1[i] = (y[i] * (mc - lam_x)).max(0.0);
                } else if w >= g.p_max - tb {
                    l2[i] = (y[i] * (lam_x - mc)).max(0.0);
                }
                theta[i] = (g.cost(w) - lam_x * w) / g.p_max;
            }
        }
    }

    // The capacity price: pinned by any fractional unit's stationarity,
    // otherwise the smallest value that keeps every committed unit's
    // upper-bound multiplier nonnegative when the reserve is tight.
    let fractional: Vec<usize> = active.iter().copied().filter(|&i| y[i] < 1.0).collect();
    let carried: f64 = (0..n).map(|i| y[i] * fleet.generators[i].p_max).sum();
    let mu_x = if !fractional.is_empty() {
        let s: f64 = fractional.iter().map(|&i| theta[i]).sum();
        (s / fractional.len() as f64).max(0.0)
    } else if carried - reserve <= 1e-9 * reserve.max(1.0) {
        active
            .iter()
            .map(|&i| theta[i])
            .fold(0.0_f64, f64::max)
    } else {
        0.0
    };

    for &i in &active {
        if y[i] >= 1.0 {
            l4[i] = ((mu_x - theta[i]) * fleet.generators[i].p_max).max(0.0);
        }
    }

    // Off units: either genuinely at y = 0 with a nonnegative bound
    // multiplier, or parked at the interior commitment the smoothing term
    // admits, which zeroes the stationarity rows exactly.
    for i in 0..n {
        if class[i] != Class::Off {
            continue;
        }
        let g = &fleet.generators[i];
        match form {
            Relaxation::Bilinear => {
                // With y exactly zero the power row vanishes, so q may sit
                // anywhere in the box; a root of the reduced profit zeroes
                // the commitment row without any bound multiplier.
                let (p, v) = best_output(g, lam_x);
                let prof = |w: f64| g.cost(w) - lam_x * w - mu_x * g.p_max;
                q[i] = p;
                if prof(p) >= 0.0 {
                    l3[i] = prof(p);
                } else if g.a > 0.0 {
                    let disc = (g.b - lam_x) * (g.b - lam_x)
                        - 4.0 * g.a * (g.c - mu_x * g.p_max);
                    if disc >= 0.0 {
                        let mid = (lam_x - g.b) / (2.0 * g.a);
                        let half = disc.sqrt() / (2.0 * g.a);
                        for root in [mid - half, mid + half] {
                            if root >= g.p_min && root <= g.p_max {
                                q[i] = root;
                                break;
                            }
                        }
                    }
                } else {
                    let _ = v;
                    if (g.b - lam_x).abs() > 0.0 {
                        let root = (mu_x * g.p_max - g.c) / (g.b - lam_x);
                        if root >= g.p_min && root <= g.p_max {
                            q[i] = root;
                        }
                    }
                }
            }
            Relaxation::Perspective => {
                let l1z = (g.b - lam_x).max(0.0);
                let l2z = (lam_x - g.b).max(0.0);
                let l3z = g.c + l1z * g.p_min - l2z * g.p_max - mu_x * g.p_max;
                if l3z >= 0.0 {
                    l1[i] = l1z;
                    l2[i] = l2z;
                    l3[i] = l3z;
                    continue;
                }
                // The smoothing term admits an interior commitment that
                // zeroes both stationarity rows exactly. Each box edge has
                // its own curvature equation and multiplier sign condition;
                // try both.
                let mut closed = false;
                for edge in [g.p_min, g.p_max] {
                    let curv = g.a * edge * edge;
                    if curv <= 0.0 {
                        continue;
                    }
                    let rho = (mu_x * g.p_max - g.c - (g.b - lam_x) * edge) / curv;
                    if rho <= 0.0 || rho >= 1.0 {
                        continue;
                    }
                    let sigma = 1.0 - (1.0 - rho).sqrt();
                    let mult = 2.0 * g.a * edge * sigma + g.b - lam_x;
                    let valid = if edge == g.p_min {
                        mult >= 0.0
                    } else {
                        mult <= 0.0
                    };
                    if !valid {
                        continue;
                    }
                    let delta = EPS_Y * sigma / (1.0 - sigma);
                    y[i] = delta;
                    q[i] = delta * edge;
                    if edge == g.p_min {
                        l1[i] = mult;
                    } else {
                        l2[i] = -mult;
                    }
                    closed = true;
                    break;
                }
                if !closed {
                    // Misclassified unit; leave a clamped multiplier and
                    // let the evaluator score the damage.
                    l1[i] = l1z;
                    l2[i] = l2z;
                }
            }
        }
    }

    Some(CrossPoint {
        y,
        q,
        duals: RelaxedDuals {
            box_lower: l1,
            box_upper: l2,
            y_lower: l3,
            y_upper: l4,
            demand: lam_x,
            reserve: mu_x,
        },
    })
}

/// Fully pinned commitment: every y is one, so only the dispatch moves.
/// The width-zero commitment box turns both y-bound constraints into one
/// equality with a free multiplier; it is recovered from y-stationarity
/// and split by sign.
fn pinned(fleet: &Fleet, form: Relaxation) -> Option<CrossPoint> {
    let n = fleet.len();
    let units: Vec<Generator> = fleet
        .generators
        .iter()
        .map(|g| {
            let den = match form {
                Relaxation::Perspective => 1.0 + EPS_Y,
                Relaxation::Bilinear => 1.0,
            };
            Generator {
                a: g.a / den,
                ..g.clone()
            }
        })
        .collect();
    let r = dispatch(&units, fleet.demand).ok()?;
    let lam_x = r.lambda.unwrap_or(0.0);
    let q = r.p;

    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    let mut l3 = vec![0.0; n];
    let mut l4 = vec![0.0; n];
    for (i, g) in fleet.generators.iter().enumerate() {
        let free = match form {
            Relaxation::Perspective => {
                let den = 1.0 + EPS_Y;
                let dfdw = 2.0 * g.a * q[i] / den + g.b;
                let tb = 1e-7 * g.p_max.max(1.0);
                if q[i] <= g.p_min + tb {
                    l1[i] = (dfdw - lam_x).max(0.0);
                } else if q[i] >= g.p_max - tb {
                    l2[i] = (lam_x - dfdw).max(0.0);
                }
                let dfdy = g.c - g.a * q[i] * q[i] / (den * den);
                dfdy + l1[i] * g.p_min - l2[i] * g.p_max
            }
            Relaxation::Bilinear => {
                let mc = g.marginal_cost(q[i]);
                let tb = 1e-7 * g.p_max.max(1.0);
                if q[i] <= g.p_min + tb {
                    l1[i] = (mc - lam_x).max(0.0);
                } else if q[i] >= g.p_max - tb {
                    l2[i] = (lam_x - mc).max(0.0);
                }
                g.cost(q[i]) - lam_x * q[i]
            }
        };
        l3[i] = free.max(0.0);
        l4[i] = (-free).max(0.0);
    }

    Some(CrossPoint {
        y: vec![1.0; n],
        q,
        duals: RelaxedDuals {
            box_lower: l1,
            box_upper: l2,
            y_lower: l3,
            y_upper: l4,
            demand: lam_x,
            reserve: 0.0,
        },
    })
}
