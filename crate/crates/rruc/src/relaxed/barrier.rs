//! Log-barrier Newton engine for the fractional commitment problem.
//!
//! Variables are per-unit pairs `(y_i, w_i)`. The Hessian of the barrier
//! is block-diagonal in those pairs plus two rank-one terms from the
//! demand and reserve coupling constraints, so each Newton direction is
//! recovered in O(n) with the Sherman-Morrison-Woodbury identity.

use super::Relaxation;

/// Barrier stage multiplier.
pub(super) const MU: f64 = 20.0;
/// Relative duality-gap target per barrier run.
pub(super) const GAP_REL: f64 = 1e-8;
/// Newton decrement threshold below which a centering pass stops.
const DELTA_TOL: f64 = 1e-6;
/// A pure-phase plateau at or below this decrement still counts as
/// centered: rounding noise in ill-conditioned corners floors the
/// decrement just above DELTA_TOL, and the stage schedule must keep
/// advancing t there for the duals to balance. The independently
/// evaluated residual remains the arbiter of solution quality.
const DELTA_SOFT: f64 = 1e-3;
/// Newton decrement threshold separating damped steps (Armijo on the
/// barrier value) from pure steps (quadratic phase, no merit check).
const DELTA_DAMPED: f64 = 0.2;
const ARMIJO_C: f64 = 0.1;
const MAX_PURE_STEPS: usize = 12;
const T_CAP: f64 = 1e16;

/// Problem data with strictly interior geometry: degenerate boxes are
/// widened and the coupling right-hand sides pulled back so slacks can be
/// strictly positive. Widening only relaxes, so lower bounds survive.
pub(super) struct Problem {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub pmax: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub demand: f64,
    pub reserve: f64,
    pub y_lb: f64,
    pub form: Relaxation,
    pub eps: f64,
}

#[derive(Clone)]
pub(super) struct State {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

pub(super) struct Slacks {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
    pub s4: Vec<f64>,
    pub s5: f64,
    pub s6: f64,
}

pub(super) struct Outcome {
    pub t: f64,
    pub iterations: usize,
    pub exhausted: bool,
}

impl Problem {
    pub(super) fn n(&self) -> usize {
        self.lo.len()
    }

    /// A width-zero commitment box [1, 1] freezes every y at one: the y
    /// bounds become equalities with free multipliers, their barrier terms
    /// drop, and only the dispatch variables move.
    pub(super) fn frozen(&self) -> bool {
        self.y_lb >= 1.0
    }

    pub(super) fn constraint_count(&self) -> usize {
        if self.frozen() {
            2 * self.n() + 2
        } else {
            4 * self.n() + 2
        }
    }

    pub(super) fn objective(&self, s: &State) -> f64 {
        match self.form {
            Relaxation::Perspective => (0..self.n())
                .map(|i| {
                    let d = s.y[i] + self.eps;
                    self.a[i] * s.w[i] * s.w[i] / d + self.b[i] * s.w[i] + self.c[i] * s.y[i]
                })
                .sum(),
            Relaxation::Bilinear => (0..self.n())
                .map(|i| {
                    s.y[i] * (self.a[i] * s.w[i] * s.w[i] + self.b[i] * s.w[i] + self.c[i])
                })
                .sum(),
        }
    }

    pub(super) fn slacks(&self, s: &State) -> Option<Slacks> {
        let n = self.n();
        let mut out = Slacks {
            s1: vec![0.0; n],
            s2: vec![0.0; n],
            s3: vec![0.0; n],
            s4: vec![0.0; n],
            s5: -self.demand,
            s6: -self.reserve,
        };
        for i in 0..n {
            let (y, w) = (s.y[i], s.w[i]);
            match self.form {
                Relaxation::Perspective => {
                    out.s1[i] = w - y * self.lo[i];
                    out.s2[i] = y * self.hi[i] - w;
                    out.s5 += w;
                }
                Relaxation::Bilinear => {
                    out.s1[i] = w - self.lo[i];
                    out.s2[i] = self.hi[i] - w;
                    out.s5 += y * w;
                }
            }
            if self.frozen() {
                // Placeholder slacks with zero barrier contribution.
                out.s3[i] = 1.0;
                out.s4[i] = 1.0;
            } else {
                out.s3[i] = y - self.y_lb;
                out.s4[i] = 1.0 - y;
            }
            out.s6 += y * self.pmax[i];
            if out.s1[i] <= 0.0 || out.s2[i] <= 0.0 || out.s3[i] <= 0.0 || out.s4[i] <= 0.0 {
                return None;
            }
        }
        if out.s5 <= 0.0 || out.s6 <= 0.0 {
            return None;
        }
        Some(out)
    }

    fn barrier_value(&self, s: &State, t: f64) -> Option<f64> {
        let sl = self.slacks(s)?;
        let mut v = t * self.objective(s);
        for i in 0..self.n() {
            v -= sl.s1[i].ln() + sl.s2[i].ln() + sl.s3[i].ln() + sl.s4[i].ln();
        }
        v -= sl.s5.ln() + sl.s6.ln();
        Some(v)
    }
}

/// Gradient, block Hessian, and coupling vectors of the barrier at `s`.
struct Derivatives {
    gy: Vec<f64>,
    gw: Vec<f64>,
    /// Symmetric 2x2 blocks stored as [d²/dy², d²/dydw, d²/dw²].
    blocks: Vec<[f64; 3]>,
    /// Demand coupling rank-one vector, split into y and w components.
    uy: Vec<f64>,
    uw: Vec<f64>,
    /// Reserve coupling rank-one vector (w components are zero).
    vy: Vec<f64>,
}

fn derivatives(p: &Problem, s: &State, sl: &Slacks, t: f64) -> Derivatives {
    let n = p.n();
    let mut d = Derivatives {
        gy: vec![0.0; n],
        gw: vec![0.0; n],
        blocks: vec![[0.0; 3]; n],
        uy: vec![0.0; n],
        uw: vec![0.0; n],
        vy: vec![0.0; n],
    };
    for i in 0..n {
        let (y, w) = (s.y[i], s.w[i]);
        let (a, b, c) = (p.a[i], p.b[i], p.c[i]);
        let (lo, hi) = (p.lo[i], p.hi[i]);

        // Objective part, times t.
        let (mut gy, mut gw, mut hyy, mut hyw, mut hww);
        match p.form {
            Relaxation::Perspective => {
                let den = y + p.eps;
                gy = t * (c - a * w * w / (den * den));
                gw = t * (2.0 * a * w / den + b);
                hyy = t * 2.0 * a * w * w / (den * den * den);
                hyw = t * (-2.0 * a * w / (den * den));
                hww = t * 2.0 * a / den;
            }
            Relaxation::Bilinear => {
                gy = t * (a * w * w + b * w + c);
                gw = t * y * (2.0 * a * w + b);
                hyy = 0.0;
                hyw = t * (2.0 * a * w + b);
                hww = t * 2.0 * a * y;
            }
        }

        // Per-unit barrier terms: gradient -∇s/s, Hessian ∇s∇sᵀ/s².
        let (s1, s2, s3, s4) = (sl.s1[i], sl.s2[i], sl.s3[i], sl.s4[i]);
        match p.form {
            Relaxation::Perspective => {
                // s1 = w − y·lo, ∇ = (−lo, 1); s2 = y·hi − w, ∇ = (hi, −1).
                gy += lo / s1 - hi / s2;
                gw += -1.0 / s1 + 1.0 / s2;
                hyy += lo * lo / (s1 * s1) + hi * hi / (s2 * s2);
                hyw += -lo / (s1 * s1) - hi / (s2 * s2);
                hww += 1.0 / (s1 * s1) + 1.0 / (s2 * s2);
            }
            Relaxation::Bilinear => {
                // s1 = w − lo, s2 = hi − w: w-only.
                gw += -1.0 / s1 + 1.0 / s2;
                hww += 1.0 / (s1 * s1) + 1.0 / (s2 * s2);
            }
        }
        // s3 = y − y_lb, s4 = 1 − y.
        gy += -1.0 / s3 + 1.0 / s4;
        hyy += 1.0 / (s3 * s3) + 1.0 / (s4 * s4);

        // Coupling gradients enter both the gradient and the rank-one
        // Hessian terms; for the bilinear demand constraint the curvature
        // −∇²s5/s5 also lands in the block.
        match p.form {
            Relaxation::Perspective => {
                gw += -1.0 / sl.s5;
                d.uy[i] = 0.0;
                d.uw[i] = 1.0 / sl.s5;
            }
            Relaxation::Bilinear => {
                gy += -w / sl.s5;
                gw += -y / sl.s5;
                d.uy[i] = w / sl.s5;
                d.uw[i] = y / sl.s5;
                hyw += -1.0 / sl.s5;
            }
        }
        gy += -p.pmax[i] / sl.s6;
        d.vy[i] = p.pmax[i] / sl.s6;

        if p.frozen() {
            // y is constant: kill its gradient row and couplings, leave a
            // unit diagonal so the 2x2 solves stay regular.
            gy = 0.0;
            hyy = 1.0;
            hyw = 0.0;
            d.uy[i] = 0.0;
            d.vy[i] = 0.0;
        }

        // Shift genuinely indefinite blocks (bilinear form only; the
        // perspective blocks are sums of PSD terms plus strictly positive
        // barrier diagonals) just past positive definite. Blocks with a
        // tiny but positive smallest eigenvalue are left alone: they are
        // exact curvature, often with wildly different y and w scales.
        let mean = 0.5 * (hyy + hww);
        let rad = (0.25 * (hyy - hww) * (hyy - hww) + hyw * hyw).sqrt();
        let lam_min = mean - rad;
        if lam_min <= 0.0 {
            let shift = -lam_min + 1e-8 * (mean + rad).abs().max(1.0);
            hyy += shift;
            hww += shift;
        }

        d.gy[i] = gy;
        d.gw[i] = gw;
        d.blocks[i] = [hyy, hyw, hww];
    }
    d
}

/// Solve the 2x2 block system G·(zy, zw) = (ry, rw) for every unit.
fn block_solve(blocks: &[[f64; 3]], ry: &[f64], rw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = blocks.len();
    let mut zy = vec![0.0; n];
    let mut zw = vec![0.0; n];
    for i in 0..n {
        let [p, q, r] = blocks[i];
        let det = p * r - q * q;
        zy[i] = (r * ry[i] - q * rw[i]) / det;
        zw[i] = (p * rw[i] - q * ry[i]) / det;
    }
    (zy, zw)
}

fn dot(ay: &[f64], aw: &[f64], by: &[f64], bw: &[f64]) -> f64 {
    ay.iter().zip(by).map(|(x, y)| x * y).sum::<f64>()
        + aw.iter().zip(bw).map(|(x, y)| x * y).sum::<f64>()
}

/// H·x with H = blkdiag(G) + u·uᵀ + v·vᵀ, applied exactly. v has no w
/// component.
fn apply_h(d: &Derivatives, xy: &[f64], xw: &[f64], hy: &mut [f64], hw: &mut [f64]) {
    let ux = dot(&d.uy, &d.uw, xy, xw);
    let vx: f64 = d.vy.iter().zip(xy).map(|(v, x)| v * x).sum();
    for i in 0..xy.len() {
        let [p, q, r] = d.blocks[i];
        hy[i] = p * xy[i] + q * xw[i] + d.uy[i] * ux + d.vy[i] * vx;
        hw[i] = q * xy[i] + r * xw[i] + d.uw[i] * ux;
    }
}

enum NewtonDir {
    /// Refined solve left a small residual; the decrement is meaningful.
    Trusted {
        dy: Vec<f64>,
        dw: Vec<f64>,
        delta2: f64,
    },
    /// The system is past f64: fall back to a plain descent direction
    /// (the refined one if it descends, else the block-preconditioned
    /// gradient) with its slope g·d < 0. No centering claims from these.
    Descent {
        dy: Vec<f64>,
        dw: Vec<f64>,
        slope: f64,
    },
}

/// Newton direction for H = blkdiag(G) + u·uᵀ + v·vᵀ via Woodbury.
///
/// Near the boundary the rank-one terms dwarf the block diagonal and the
/// Woodbury correction cancels against the block solve, so the raw
/// direction can lose most of its digits. Refining against the exactly
/// applied Hessian wins them back while the factorization is usable.
fn newton_direction(d: &Derivatives) -> NewtonDir {
    let n = d.gy.len();
    let zeros = vec![0.0; n];
    let (zuy, zuw) = block_solve(&d.blocks, &d.uy, &d.uw);
    let (zvy, zvw) = block_solve(&d.blocks, &d.vy, &zeros);
    let m11 = 1.0 + dot(&d.uy, &d.uw, &zuy, &zuw);
    let m12 = dot(&d.uy, &d.uw, &zvy, &zvw);
    let m21 = dot(&d.vy, &zeros, &zuy, &zuw);
    let m22 = 1.0 + dot(&d.vy, &zeros, &zvy, &zvw);
    let det = m11 * m22 - m12 * m21;

    let solve = |ry: &[f64], rw: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let (zy, zw) = block_solve(&d.blocks, ry, rw);
        let r1 = dot(&d.uy, &d.uw, &zy, &zw);
        let r2 = dot(&d.vy, &zeros, &zy, &zw);
        let alpha = (m22 * r1 - m12 * r2) / det;
        let beta = (m11 * r2 - m21 * r1) / det;
        let mut xy = zy;
        let mut xw = zw;
        for i in 0..n {
            xy[i] -= alpha * zuy[i] + beta * zvy[i];
            xw[i] -= alpha * zuw[i] + beta * zvw[i];
        }
        (xy, xw)
    };

    let neg_gy: Vec<f64> = d.gy.iter().map(|g| -g).collect();
    let neg_gw: Vec<f64> = d.gw.iter().map(|g| -g).collect();
    let gnorm = neg_gy
        .iter()
        .chain(&neg_gw)
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let (mut dy, mut dw) = solve(&neg_gy, &neg_gw);

    let mut hy = vec![0.0; n];
    let mut hw = vec![0.0; n];
    let mut ry = vec![0.0; n];
    let mut rw = vec![0.0; n];
    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut best_rel = f64::INFINITY;
    for _ in 0..4 {
        apply_h(d, &dy, &dw, &mut hy, &mut hw);
        let mut res = 0.0f64;
        for i in 0..n {
            ry[i] = neg_gy[i] - hy[i];
            rw[i] = neg_gw[i] - hw[i];
            res = res.max(ry[i].abs()).max(rw[i].abs());
        }
        let rel = res / gnorm.max(f64::MIN_POSITIVE);
        log::trace!("refine rel_res={rel:.3e}");
        if !(rel < best_rel) {
            break;
        }
        best_rel = rel;
        best = Some((dy.clone(), dw.clone()));
        if rel <= 1e-13 {
            break;
        }
        let (cy, cw) = solve(&ry, &rw);
        for i in 0..n {
            dy[i] += cy[i];
            dw[i] += cw[i];
        }
    }
    let (dy, dw) = best.unwrap_or((dy, dw));
    if best_rel <= 1e-2 {
        let delta2 = -(dot(&d.gy, &d.gw, &dy, &dw));
        return NewtonDir::Trusted { dy, dw, delta2 };
    }
    let slope = dot(&d.gy, &d.gw, &dy, &dw);
    if slope < 0.0 {
        return NewtonDir::Descent { dy, dw, slope };
    }
    let (zy, zw) = block_solve(&d.blocks, &neg_gy, &neg_gw);
    let slope = dot(&d.gy, &d.gw, &zy, &zw);
    NewtonDir::Descent {
        dy: zy,
        dw: zw,
        slope,
    }
}

/// Largest step keeping every explicitly linear slack positive, shrunk by
/// the usual fraction-to-boundary factor. The bilinear demand slack is
/// quadratic in the step and is bounded by its positive root.
fn max_step(p: &Problem, s: &State, sl: &Slacks, dy: &[f64], dw: &[f64]) -> f64 {
    let mut bound = f64::INFINITY;
    let mut cut = |slack: f64, dslack: f64| {
        if dslack < 0.0 {
            bound = bound.min(slack / -dslack);
        }
    };
    let mut ds5_lin = 0.0;
    let mut ds5_quad = 0.0;
    let mut ds6 = 0.0;
    for i in 0..p.n() {
        match p.form {
            Relaxation::Perspective => {
                cut(sl.s1[i], dw[i] - p.lo[i] * dy[i]);
                cut(sl.s2[i], p.hi[i] * dy[i] - dw[i]);
                ds5_lin += dw[i];
            }
            Relaxation::Bilinear => {
                cut(sl.s1[i], dw[i]);
                cut(sl.s2[i], -dw[i]);
                ds5_lin += s.y[i] * dw[i] + s.w[i] * dy[i];
                ds5_quad += dy[i] * dw[i];
            }
        }
        cut(sl.s3[i], dy[i]);
        cut(sl.s4[i], -dy[i]);
        ds6 += p.pmax[i] * dy[i];
    }
    cut(sl.s6, ds6);
    match p.form {
        Relaxation::Perspective => cut(sl.s5, ds5_lin),
        Relaxation::Bilinear => {
            // s5(α) = s5 + α·lin + α²·quad > 0: bound by the smallest
            // positive root.
            let (c0, c1, c2) = (sl.s5, ds5_lin, ds5_quad);
            if c2.abs() < 1e-300 {
                cut(c0, c1);
            } else {
                let disc = c1 * c1 - 4.0 * c2 * c0;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for root in [(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)] {
                        if root > 0.0 {
                            bound = bound.min(root);
                        }
                    }
                }
            }
        }
    }
    0.995 * bound
}

#[derive(Debug)]
enum CenterEnd {
    Centered,
    Stalled,
    Budget,
}

/// Newton centering at fixed t. Damped (Armijo) steps while the decrement
/// is large, then pure Newton steps in the quadratic phase where barrier
/// value comparisons drown in rounding noise. Returns the steps taken,
/// how the pass ended, and the last Newton decrement.
fn center(p: &Problem, s: &mut State, t: f64, budget: usize) -> (usize, CenterEnd, f64) {
    let mut steps = 0;
    let mut pure_steps = 0;
    let mut delta = f64::INFINITY;
    loop {
        if steps >= budget {
            return (steps, CenterEnd::Budget, delta);
        }
        let Some(sl) = p.slacks(s) else {
            // Interior lost to rounding; treat as a stall, the caller
            // keeps the previous iterate semantics via small steps.
            return (steps, CenterEnd::Stalled, delta);
        };
        let d = derivatives(p, s, &sl, t);
        let (dy, dw, slope, trusted) = match newton_direction(&d) {
            NewtonDir::Trusted { dy, dw, delta2 } => {
                if delta2 <= 0.0 {
                    // The refined residual was sound, so a nonpositive
                    // decrement means the gradient is zero to working
                    // precision here.
                    return (steps, CenterEnd::Centered, 0.0);
                }
                delta = delta2.sqrt();
                log::trace!("t={t:.3e} step={steps} delta={delta:.3e}");
                if delta <= DELTA_TOL {
                    return (steps, CenterEnd::Centered, delta);
                }
                (dy, dw, -delta2, true)
            }
            NewtonDir::Descent { dy, dw, slope } => {
                log::trace!("t={t:.3e} step={steps} descent slope={slope:.3e}");
                (dy, dw, slope, false)
            }
        };
        let alpha_cap = max_step(p, s, &sl, &dy, &dw).min(1.0);
        if alpha_cap <= 1e-14 {
            return (steps, CenterEnd::Stalled, delta);
        }

        let take = |s: &State, alpha: f64| -> State {
            State {
                y: s.y.iter().zip(&dy).map(|(y, d)| y + alpha * d).collect(),
                w: s.w.iter().zip(&dw).map(|(w, d)| w + alpha * d).collect(),
            }
        };

        if trusted && delta <= DELTA_DAMPED {
            pure_steps += 1;
            if pure_steps > MAX_PURE_STEPS || alpha_cap <= 1e-10 {
                // The step cap is so small the iterate cannot move
                // measurably, or the quadratic phase refuses to close;
                // more passes at this t are wasted. A plateau close to
                // the target is the f64 floor, not a failure.
                let end = if delta <= DELTA_SOFT {
                    CenterEnd::Centered
                } else {
                    CenterEnd::Stalled
                };
                return (steps, end, delta);
            }
            let next = take(s, alpha_cap);
            if p.slacks(&next).is_none() {
                return (steps, CenterEnd::Stalled, delta);
            }
            *s = next;
            steps += 1;
            continue;
        }

        let b0 = p
            .barrier_value(s, t)
            .expect("current iterate is strictly interior");
        let mut alpha = alpha_cap;
        let mut accepted = false;
        for _ in 0..60 {
            let next = take(s, alpha);
            if let Some(b1) = p.barrier_value(&next, t) {
                if b1 <= b0 + ARMIJO_C * alpha * slope {
                    *s = next;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return (steps, CenterEnd::Stalled, delta);
        }
        steps += 1;
    }
}

/// Run barrier stages from `t` until the relative duality gap target is
/// met or the Newton budget is exhausted. Resumable: pass the returned t
/// back in with a larger budget to refine further. The duals 1/(t·s) are
/// only meaningful at a centered pair, so a stage that stalls rolls the
/// state and t back to the last clean center instead of racing t ahead
/// of a frozen iterate.
pub(super) fn solve_barrier(p: &Problem, s: &mut State, t0: f64, budget: usize) -> Outcome {
    let m = p.constraint_count() as f64;
    let mut t = t0;
    let mut used = 0;
    let mut good: Option<(State, f64)> = None;
    // Degenerate optima (huge multipliers) put the centered slacks near
    // the f64 floor at moderate t; when a stage jump stalls, retry the
    // jump from the last good center at a gentler multiplier to creep up
    // on the highest t that still centers cleanly.
    let mut mult = MU;
    loop {
        let (steps, end, delta) = center(p, s, t, budget.saturating_sub(used));
        used += steps;
        let gap = m / t;
        let f = p.objective(s);
        log::debug!(
            "stage t={t:.3e} end={end:?} steps={steps} delta={delta:.3e} f={f:.6e} gap={gap:.3e}"
        );
        match end {
            CenterEnd::Centered => {
                if gap <= GAP_REL * f.abs().max(1.0) {
                    return Outcome {
                        t,
                        iterations: used,
                        exhausted: false,
                    };
                }
                if t >= T_CAP {
                    return Outcome {
                        t,
                        iterations: used,
                        exhausted: false,
                    };
                }
                good = Some((s.clone(), t));
                t *= mult;
            }
            CenterEnd::Stalled => {
                let Some((state, tg)) = &good else {
                    return Outcome {
                        t,
                        iterations: used,
                        exhausted: false,
                    };
                };
                *s = state.clone();
                if mult <= 1.31 {
                    t = *tg;
                    return Outcome {
                        t,
                        iterations: used,
                        exhausted: false,
                    };
                }
                mult = (0.25 * mult).max(1.3);
                t = tg * mult;
            }
            CenterEnd::Budget => {
                return Outcome {
                    t,
                    iterations: used,
                    exhausted: true,
                };
            }
        }
    }
}
