//! Adaptive Gauss–Kronrod quadrature and bracketed root finding.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod nodes (nonnegative half) and weights; the 7-point Gauss
// rule uses the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
}

/// Tolerances and subdivision budget for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl QuadConfig {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

/// One application of the G7/K15 pair on [a, b].
fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive integration of `f` over [a, b].
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, config: QuadConfig) -> Result<Integral> {
    integrate_with_breaks(f, &[a, b], config)
}

/// Adaptive integration over consecutive panels `breaks[0] < breaks[1] < ...`.
///
/// Supplying breakpoints lets the integrator see narrow peaks that a single
/// initial panel could step over.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], config: QuadConfig) -> Result<Integral> {
    if breaks.len() < 2 {
        return Err(Error::InvalidConfig("quadrature needs at least two breakpoints".into()));
    }
    let mut heap = BinaryHeap::with_capacity(breaks.len() + 64);
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite integration limits [{a}, {b}]"
            )));
        }
        if a == b {
            continue;
        }
        let (value, err) = kronrod15(&mut f, a, b);
        total += value;
        total_err += err;
        heap.push(Segment { a, b, value, err });
    }
    let tol = |total: f64| config.abs_tol.max(config.rel_tol * total.abs());
    let mut intervals = heap.len();
    while total_err > tol(total) {
        let Some(worst) = heap.pop() else { break };
        if intervals >= config.max_intervals {
            heap.push(worst);
            break;
        }
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1) = kronrod15(&mut f, worst.a, mid);
        let (v2, e2) = kronrod15(&mut f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
        intervals += 1;
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let abs_error: f64 = heap.iter().map(|s| s.err).sum();
    if !value.is_finite() {
        return Err(Error::QuadratureNonConvergence {
            value,
            achieved_error: abs_error,
            requested: tol(value),
        });
    }
    if abs_error > tol(value) {
        return Err(Error::QuadratureNonConvergence {
            value,
            achieved_error: abs_error,
            requested: tol(value),
        });
    }
    Ok(Integral { value, abs_error })
}

/// ∫_a^∞ f via the map x = a + t/(1 − t), t ∈ [0, 1).
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, config: QuadConfig) -> Result<Integral> {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let one_minus = 1.0 - t;
            let x = a + t / one_minus;
            let v = f(x) / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        config,
    )
}

/// ∫_{−∞}^{∞} f via the map x = t/(1 − t²), t ∈ (−1, 1).
pub fn integrate_real_line<F: FnMut(f64) -> f64>(mut f: F, config: QuadConfig) -> Result<Integral> {
    integrate_with_breaks(
        |t| {
            let d = 1.0 - t * t;
            if d <= 0.0 {
                return 0.0;
            }
            let x = t / d;
            let v = f(x) * (1.0 + t * t) / (d * d);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        &[-1.0, -0.5, 0.0, 0.5, 1.0],
        config,
    )
}

/// Integrates f over [lo, hi] where f behaves like (x − lo)^{lo_exp} near the
/// lower end and (hi − x)^{hi_exp} near the upper end, both exponents > −1.
///
/// `f` receives `(x, x − lo, hi − x)` with both gaps computed without
/// cancellation, so the integrand can evaluate its singular factors from the
/// gaps directly. Negative exponents are removed by power substitutions on
/// the matching half of the interval.
pub fn integrate_endpoint_powers<F: FnMut(f64, f64, f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    lo_exp: f64,
    hi_exp: f64,
    config: QuadConfig,
) -> Result<Integral> {
    if !(lo_exp > -1.0 && hi_exp > -1.0) {
        return Err(Error::InvalidConfig(format!(
            "endpoint exponents ({lo_exp}, {hi_exp}) must exceed -1"
        )));
    }
    let width = hi - lo;
    let half = 0.5 * width;
    let mid = lo + half;
    let split = QuadConfig {
        abs_tol: 0.5 * config.abs_tol,
        ..config
    };
    let lower = if lo_exp < 0.0 {
        let p = 1.0 / (1.0 + lo_exp);
        integrate(
            |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let gap = half * t.powf(p);
                f(lo + gap, gap, width - gap) * half * p * t.powf(p - 1.0)
            },
            0.0,
            1.0,
            split,
        )?
    } else {
        integrate(|x| f(x, x - lo, hi - x), lo, mid, split)?
    };
    let upper = if hi_exp < 0.0 {
        let p = 1.0 / (1.0 + hi_exp);
        integrate(
            |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let gap = half * t.powf(p);
                f(hi - gap, width - gap, gap) * half * p * t.powf(p - 1.0)
            },
            0.0,
            1.0,
            split,
        )?
    } else {
        integrate(|x| f(x, x - lo, hi - x), mid, hi, split)?
    };
    Ok(Integral {
        value: lower.value + upper.value,
        abs_error: lower.abs_error + upper.abs_error,
    })
}

/// Bisection for a root of a monotone function `f` on [lo, hi].
///
/// Stops once |f(x)| ≤ `f_tol` or the bracket is narrower than `x_tol`.
pub fn bisect<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, f_tol: f64, x_tol: f64) -> Result<f64> {
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::RootFinding(format!(
            "no sign change on [{lo}, {hi}]: f = ({f_lo}, {f_hi})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() <= f_tol || (hi - lo) <= x_tol {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Cumulative trapezoid integral of `values` over `points`, starting at 0.
pub fn cumulative_trapezoid(points: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..points.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (points[i] - points[i - 1]);
        out.push(acc);
    }
    out
}

/// Trapezoid integral of `values` over `points`.
pub fn trapezoid(points: &[f64], values: &[f64]) -> f64 {
    points
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}
