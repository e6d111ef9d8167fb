//! Bid-curve cost fitting.
//!
//! Market bids arrive as step functions of marginal price against
//! cumulative output, plus a no-load cost and a startup charge. Dispatch
//! wants smooth quadratics, so this module integrates each step curve into
//! an exact piecewise-linear total cost, samples it, and fits
//! `a·P² + b·P + c` by least squares with the convexity clamps `a ≥ 0`,
//! `b ≥ 0`.

use crate::error::{Error, Result};
use crate::fleet::Generator;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One step of a supply curve: `price` applies to output between the
/// previous breakpoint (or zero) and `mw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidStep {
    pub mw: f64,
    pub price_usd_per_mwh: f64,
}

/// A piecewise-step marginal-price supply curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub id: String,
    pub no_load_cost_usd_per_h: f64,
    pub startup_usd: f64,
    pub eco_min_mw: f64,
    pub eco_max_mw: f64,
    pub steps: Vec<BidStep>,
}

impl BidCurve {
    /// Check structural invariants. Non-monotone step prices are rejected
    /// unless `allow_nonmonotone` is set; the total cost integral stays
    /// well defined either way, but convexity is lost.
    pub fn validate(&self, allow_nonmonotone: bool) -> Result<()> {
        let err = |field: &'static str, detail: String| Error::Invariant {
            unit: self.id.clone(),
            field,
            detail,
        };
        if self.steps.is_empty() {
            return Err(err("steps", "must be non-empty".into()));
        }
        for (k, s) in self.steps.iter().enumerate() {
            if !s.mw.is_finite() || !s.price_usd_per_mwh.is_finite() {
                return Err(err("steps", format!("step {k} has non-finite fields")));
            }
        }
        if self.steps[0].mw <= 0.0 {
            return Err(err(
                "steps",
                format!("first breakpoint must be > 0, got {}", self.steps[0].mw),
            ));
        }
        for k in 1..self.steps.len() {
            if self.steps[k].mw <= self.steps[k - 1].mw {
                return Err(err(
                    "steps",
                    format!(
                        "breakpoints must be strictly increasing, step {k} has {} after {}",
                        self.steps[k].mw,
                        self.steps[k - 1].mw
                    ),
                ));
            }
        }
        let last = self.steps.last().expect("non-empty").mw;
        if (last - self.eco_max_mw).abs() > 1e-9 * self.eco_max_mw.abs().max(1.0) {
            return Err(err(
                "eco_max_mw",
                format!("last breakpoint {last} must equal eco_max {}", self.eco_max_mw),
            ));
        }
        if !(0.0..=self.eco_max_mw).contains(&self.eco_min_mw) {
            return Err(err(
                "eco_min_mw",
                format!(
                    "must lie in [0, {}], got {}",
                    self.eco_max_mw, self.eco_min_mw
                ),
            ));
        }
        if self.no_load_cost_usd_per_h < 0.0 || self.startup_usd < 0.0 {
            return Err(err("costs", "no-load and startup costs must be >= 0".into()));
        }
        if !allow_nonmonotone {
            for k in 1..self.steps.len() {
                let (prev, cur) = (
                    self.steps[k - 1].price_usd_per_mwh,
                    self.steps[k].price_usd_per_mwh,
                );
                if cur < prev {
                    return Err(Error::NonMonotoneCurve {
                        id: self.id.clone(),
                        step: k,
                        price: cur,
                        previous: prev,
                    });
                }
            }
        }
        Ok(())
    }

    /// Exact total cost at output `p`: no-load plus the step integral of
    /// the marginal price from zero to `p`.
    pub fn total_cost(&self, p: f64) -> f64 {
        let mut cost = self.no_load_cost_usd_per_h;
        let mut prev = 0.0;
        for s in &self.steps {
            let take = (p.min(s.mw) - prev).max(0.0);
            cost += take * s.price_usd_per_mwh;
            prev = s.mw;
        }
        cost
    }
}

/// Sampling and amortization choices for the fit pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Accept curves whose step prices dip.
    pub allow_nonmonotone: bool,
    /// Fold the startup charge into the constant coefficient. Off by
    /// default: the commitment problem is single-period and startup money
    /// is carried as metadata instead.
    pub amortize_startup: bool,
}

/// Least-squares result over the basis `{P², P, 1}` after the
/// nonnegativity clamps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r_squared: f64,
}

/// Sample the exact total cost on a grid of the given spacing in MW, from
/// `eco_min` to `eco_max` inclusive, plus every step breakpoint in range.
pub fn integrate_bid_curve(
    curve: &BidCurve,
    grid: f64,
    options: &FitOptions,
) -> Result<Vec<(f64, f64)>> {
    curve.validate(options.allow_nonmonotone)?;
    if !(grid > 0.0) {
        return Err(Error::InvalidParameter {
            name: "grid",
            detail: format!("sample spacing must be > 0 MW, got {grid}"),
        });
    }
    let (lo, hi) = (curve.eco_min_mw, curve.eco_max_mw);
    let mut points: Vec<f64> = Vec::new();
    let mut p = lo;
    while p < hi {
        points.push(p);
        p += grid;
    }
    points.push(hi);
    points.extend(
        curve
            .steps
            .iter()
            .map(|s| s.mw)
            .filter(|&m| m >= lo && m <= hi),
    );
    points.sort_by(|x, z| x.partial_cmp(z).expect("finite breakpoints"));
    points.dedup_by(|x, z| (*x - *z).abs() <= 1e-12 * hi.max(1.0));
    let extra = if options.amortize_startup {
        curve.startup_usd
    } else {
        0.0
    };
    Ok(points
        .into_iter()
        .map(|p| (p, curve.total_cost(p) + extra))
        .collect())
}

/// Ordinary least squares of `cost ≈ a·P² + b·P + c`, with `a` clamped to
/// zero and the remaining basis refit if the curvature comes out negative,
/// then the same for `b`. `r_squared` is measured against the final model.
pub fn fit_quadratic(samples: &[(f64, f64)]) -> Result<QuadraticFit> {
    let distinct = {
        let mut ps: Vec<f64> = samples.iter().map(|s| s.0).collect();
        ps.sort_by(|x, z| x.partial_cmp(z).expect("finite samples"));
        ps.dedup_by(|x, z| *x == *z);
        ps.len()
    };
    if samples.len() < 3 || distinct < 3 {
        return Err(Error::RankDeficient {
            detail: format!(
                "need at least 3 samples with distinct outputs, got {} ({} distinct)",
                samples.len(),
                distinct
            ),
        });
    }

    // Normalize the output axis so the Gram matrix stays well conditioned
    // for megawatt-scale inputs.
    let scale = samples
        .iter()
        .map(|s| s.0.abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let solve = |use_sq: bool, use_lin: bool| -> (f64, f64, f64) {
        let cols = 1 + usize::from(use_sq) + usize::from(use_lin);
        let mut a = DMatrix::zeros(samples.len(), cols);
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
        for (r, s) in samples.iter().enumerate() {
            let t = s.0 / scale;
            let mut col = 0;
            if use_sq {
                a[(r, col)] = t * t;
                col += 1;
            }
            if use_lin {
                a[(r, col)] = t;
                col += 1;
            }
            a[(r, col)] = 1.0;
        }
        let x = a
            .svd(true, true)
            .solve(&y, 1e-12)
            .expect("svd of a finite design matrix");
        let mut it = x.iter().copied();
        let qa = if use_sq { it.next().unwrap() } else { 0.0 };
        let qb = if use_lin { it.next().unwrap() } else { 0.0 };
        let qc = it.next().unwrap();
        (qa / (scale * scale), qb / scale, qc)
    };

    // Coefficients whose contribution over the sampled range is below
    // machine noise are genuinely zero; snapping them keeps degenerate
    // curvature (linear or constant costs) exact.
    let cost_scale = samples
        .iter()
        .map(|s| s.1.abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let negligible_sq = |a: f64| a.abs() * scale * scale <= 1e-12 * cost_scale;
    let negligible_lin = |b: f64| b.abs() * scale <= 1e-12 * cost_scale;

    // An excluded basis column comes back as a literal zero coefficient,
    // so each refit below snaps the offending term exactly.
    let (mut a, mut b, mut c) = solve(true, true);
    if a < 0.0 || negligible_sq(a) {
        (a, b, c) = solve(false, true);
    }
    if b < 0.0 || negligible_lin(b) {
        let keep_sq = a > 0.0;
        (a, b, c) = solve(keep_sq, false);
        if a < 0.0 || negligible_sq(a) {
            (a, b, c) = solve(false, false);
        }
    }

    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let ss_tot: f64 = samples.iter().map(|s| (s.1 - mean).powi(2)).sum();
    let ss_res: f64 = samples
        .iter()
        .map(|s| (s.1 - (a * s.0 * s.0 + b * s.0 + c)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res <= 1e-18 {
        1.0
    } else {
        0.0
    };
    Ok(QuadraticFit { a, b, c, r_squared })
}

/// Number of uniform samples over the economic range used by
/// [`bid_curve_to_generator`], in addition to the step breakpoints.
pub const FIT_GRID_POINTS: usize = 20;

/// The full pipeline: integrate, sample at the breakpoints plus a uniform
/// 20-point grid, fit, and carry the bid metadata onto the generator.
pub fn bid_curve_to_generator(curve: &BidCurve, options: &FitOptions) -> Result<Generator> {
    let span = curve.eco_max_mw - curve.eco_min_mw;
    let grid = if span > 0.0 {
        span / (FIT_GRID_POINTS - 1) as f64
    } else {
        1.0
    };
    let samples = integrate_bid_curve(curve, grid, options)?;
    let fit = fit_quadratic(&samples)?;
    let g = Generator {
        id: curve.id.clone(),
        p_min: curve.eco_min_mw,
        p_max: curve.eco_max_mw,
        a: fit.a,
        b: fit.b,
        c: fit.c,
        startup_cost: curve.startup_usd,
        first_step_price: Some(curve.steps[0].price_usd_per_mwh),
        max_step_price: Some(curve.steps.last().expect("validated").price_usd_per_mwh),
    };
    g.validate()?;
    Ok(g)
}

/// Fit every curve in order. Each generator keeps its curve's id, so
/// failures name the offending unit.
pub fn fit_curves(curves: &[BidCurve], options: &FitOptions) -> Result<Vec<Generator>> {
    curves
        .iter()
        .map(|c| bid_curve_to_generator(c, options))
        .collect()
}

/// Read a JSON array of bid curves.
pub fn load_bid_curves(path: &Path) -> Result<Vec<BidCurve>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        row: None,
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(id: &str, no_load: f64, steps: &[(f64, f64)]) -> BidCurve {
        BidCurve {
            id: id.into(),
            no_load_cost_usd_per_h: no_load,
            startup_usd: 0.0,
            eco_min_mw: 0.0,
            eco_max_mw: steps.last().unwrap().0,
            steps: steps
                .iter()
                .map(|&(mw, price)| BidStep {
                    mw,
                    price_usd_per_mwh: price,
                })
                .collect(),
        }
    }

    /// Midpoint-rule reference for the step integral, fine enough that
    /// only discretization at the breakpoints is visible.
    fn numeric_total_cost(c: &BidCurve, p: f64, slices: usize) -> f64 {
        let price_at = |q: f64| -> f64 {
            for s in &c.steps {
                if q <= s.mw {
                    return s.price_usd_per_mwh;
                }
            }
            c.steps.last().unwrap().price_usd_per_mwh
        };
        let h = p / slices as f64;
        let integral: f64 = (0..slices)
            .map(|k| price_at((k as f64 + 0.5) * h) * h)
            .sum();
        c.no_load_cost_usd_per_h + integral
    }

    #[test]
    fn single_step_integral() {
        let c = curve("u", 50.0, &[(100.0, 20.0)]);
        assert_eq!(c.total_cost(50.0), 1050.0);
    }

    #[test]
    fn two_step_integral() {
        let c = curve("u", 120.0, &[(50.0, 10.0), (100.0, 30.0)]);
        assert_eq!(c.total_cost(75.0), 120.0 + 10.0 * 50.0 + 30.0 * 25.0);
    }

    #[test]
    fn matches_numeric_integration() {
        let c = curve(
            "u",
            200.0,
            &[(30.0, 12.0), (55.0, 19.5), (80.0, 26.0), (120.0, 41.0)],
        );
        for &p in &[7.0, 30.0, 42.5, 79.9, 101.3, 120.0] {
            let exact = c.total_cost(p);
            let approx = numeric_total_cost(&c, p, 200_000);
            assert!(
                (exact - approx).abs() <= 1e-3 * exact.abs(),
                "p={p}: exact {exact} vs numeric {approx}"
            );
        }
    }

    #[test]
    fn sampled_cost_is_convex_for_monotone_prices() {
        let c = curve("u", 75.0, &[(25.0, 8.0), (60.0, 14.0), (90.0, 14.0), (140.0, 33.0)]);
        let samples = integrate_bid_curve(&c, 3.7, &FitOptions::default()).unwrap();
        for w in samples.windows(3) {
            let [(p0, c0), (p1, c1), (p2, c2)] = [w[0], w[1], w[2]];
            // Convexity of a piecewise-linear function: chord slopes
            // nondecreasing.
            let s01 = (c1 - c0) / (p1 - p0);
            let s12 = (c2 - c1) / (p2 - p1);
            assert!(s12 >= s01 - 1e-9, "slopes {s01} then {s12}");
        }
        let (first, last) = (samples.first().unwrap(), samples.last().unwrap());
        assert_eq!(first.0, 0.0);
        assert_eq!(last.0, 140.0);
    }

    #[test]
    fn exact_quadratic_recovery() {
        let (a, b, c) = (0.02, 5.0, 300.0);
        let samples: Vec<(f64, f64)> = (0..25)
            .map(|k| {
                let p = 10.0 + 4.0 * k as f64;
                (p, a * p * p + b * p + c)
            })
            .collect();
        let fit = fit_quadratic(&samples).unwrap();
        assert!((fit.a - a).abs() <= 1e-9 * a);
        assert!((fit.b - b).abs() <= 1e-9 * b);
        assert!((fit.c - c).abs() <= 1e-9 * c);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn linear_cost_clamps_curvature() {
        let samples: Vec<(f64, f64)> = (0..12)
            .map(|k| {
                let p = 5.0 + 10.0 * k as f64;
                (p, 22.0 * p + 410.0)
            })
            .collect();
        let fit = fit_quadratic(&samples).unwrap();
        assert_eq!(fit.a, 0.0);
        assert!((fit.b - 22.0).abs() <= 1e-9 * 22.0);
        assert!((fit.c - 410.0).abs() <= 1e-9 * 410.0);
    }

    #[test]
    fn decreasing_cost_clamps_slope() {
        // Falling samples force b through zero; the refit keeps the best
        // constant.
        let samples = [(10.0, 100.0), (20.0, 60.0), (30.0, 20.0)];
        let fit = fit_quadratic(&samples).unwrap();
        assert!(fit.a >= 0.0);
        assert_eq!(fit.b, 0.0);
        assert!(fit.r_squared >= 0.0 && fit.r_squared <= 1.0);
    }

    #[test]
    fn rank_deficient_rejected() {
        let same = [(50.0, 10.0), (50.0, 12.0), (50.0, 14.0)];
        assert!(matches!(
            fit_quadratic(&same),
            Err(Error::RankDeficient { .. })
        ));
        assert!(matches!(
            fit_quadratic(&[(1.0, 2.0), (2.0, 3.0)]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn non_monotone_needs_override() {
        let c = curve("dip", 10.0, &[(40.0, 30.0), (80.0, 25.0)]);
        assert!(matches!(
            c.validate(false),
            Err(Error::NonMonotoneCurve { step: 1, .. })
        ));
        assert!(c.validate(true).is_ok());
        let opts = FitOptions {
            allow_nonmonotone: true,
            ..FitOptions::default()
        };
        let g = bid_curve_to_generator(&c, &opts).unwrap();
        assert!(g.a >= 0.0 && g.b >= 0.0);
    }

    #[test]
    fn constant_price_curve_maps_to_linear_generator() {
        let mut c = curve("flat", 50.0, &[(100.0, 20.0)]);
        c.eco_min_mw = 10.0;
        let g = bid_curve_to_generator(&c, &FitOptions::default()).unwrap();
        assert!(g.a.abs() <= 1e-12);
        assert!((g.b - 20.0).abs() <= 1e-9 * 20.0);
        assert!((g.c - 50.0).abs() <= 1e-7 * 50.0);
        assert_eq!(g.p_min, 10.0);
        assert_eq!(g.p_max, 100.0);
        assert_eq!(g.first_step_price, Some(20.0));
        assert_eq!(g.max_step_price, Some(20.0));
    }

    #[test]
    fn startup_amortization_shifts_constant() {
        let mut c = curve("peak", 75.0, &[(60.0, 35.0), (90.0, 55.0)]);
        c.startup_usd = 500.0;
        let plain = bid_curve_to_generator(&c, &FitOptions::default()).unwrap();
        let amortized = bid_curve_to_generator(
            &c,
            &FitOptions {
                amortize_startup: true,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!((amortized.c - plain.c - 500.0).abs() <= 1e-7 * plain.c.max(1.0));
        assert!((amortized.a - plain.a).abs() <= 1e-9 * plain.a.max(1.0));
        assert!((amortized.b - plain.b).abs() <= 1e-9 * plain.b.max(1.0));
        assert_eq!(plain.startup_cost, 500.0);
    }

    #[test]
    fn curve_json_round_trip() {
        let text = r#"[{"id":"g1","no_load_cost_usd_per_h":100.0,"startup_usd":227.0,
            "eco_min_mw":7.0,"eco_max_mw":20.0,
            "steps":[{"mw":20.0,"price_usd_per_mwh":768.0}]}]"#;
        let curves: Vec<BidCurve> = serde_json::from_str(text).unwrap();
        assert_eq!(curves.len(), 1);
        let g = bid_curve_to_generator(&curves[0], &FitOptions::default()).unwrap();
        assert_eq!(g.p_min, 7.0);
        assert_eq!(g.p_max, 20.0);
        assert_eq!(g.first_step_price, Some(768.0));
        assert_eq!(g.startup_cost, 227.0);
        let back = serde_json::to_string(&curves).unwrap();
        let again: Vec<BidCurve> = serde_json::from_str(&back).unwrap();
        assert_eq!(again, curves);
    }

    proptest::proptest! {
        #[test]
        fn fit_is_convex_and_bounded(
            seedp in 0.001f64..0.1,
            seedb in 0.0f64..50.0,
            seedc in 0.0f64..1000.0,
            n in 5usize..40,
            noise in 0.0f64..0.05,
        ) {
            let samples: Vec<(f64, f64)> = (0..n)
                .map(|k| {
                    let p = 10.0 + 7.0 * k as f64;
                    let wobble = 1.0 + noise * ((k * 2654435761) % 1000) as f64 / 1000.0;
                    (p, (seedp * p * p + seedb * p + seedc + 1.0) * wobble)
                })
                .collect();
            let fit = fit_quadratic(&samples).unwrap();
            proptest::prop_assert!(fit.a >= 0.0);
            proptest::prop_assert!(fit.b >= 0.0);
            proptest::prop_assert!((0.0..=1.0).contains(&fit.r_squared));
        }
    }
}
