//! Root finding, the lower real branch of Lambert W, and adaptive quadrature
//! used by the allocator and its closed-form bounds.

use crate::error::{Error, Result};

const INV_E: f64 = 0.367_879_441_171_442_33;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootSolveConfig {
    /// Target on `|f(lambda) - 1|`.
    pub abs_tol: f64,
    pub max_iter: u32,
}

impl Default for RootSolveConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-12, max_iter: 200 }
    }
}

/// `f(x) = sum_{k=1..p} (1/p + mu x / k) exp(-mu (x p / k - alpha))` and its
/// derivative `-mu^2 x p sum_k exp(...) / k^2`.
pub fn lambda_equation(mu: f64, alpha: f64, p: u32, x: f64) -> (f64, f64) {
    let pf = f64::from(p);
    let inv_p = 1.0 / pf;
    let mut value = 0.0;
    let mut comp = 0.0;
    let mut slope = 0.0;
    for k in 1..=p {
        let kf = f64::from(k);
        let e = (-mu * (x * pf / kf - alpha)).exp();
        let term = (inv_p + mu * x / kf) * e;
        // Neumaier summation keeps the residual test meaningful for large p.
        let t = value + term;
        if value.abs() >= term.abs() {
            comp += (value - t) + term;
        } else {
            comp += (term - t) + value;
        }
        value = t;
        slope += e / (kf * kf);
    }
    (value + comp, -mu * mu * x * pf * slope)
}

/// Positive root of `lambda_equation(..) = 1`.
///
/// Bisection on `[alpha, sup_lambda]`, where `f` is strictly decreasing,
/// followed by Newton steps that are kept inside the final bracket.
pub fn solve_lambda(mu: f64, alpha: f64, p: u32, cfg: &RootSolveConfig) -> Result<f64> {
    if !(mu > 0.0 && alpha > 0.0 && mu.is_finite() && alpha.is_finite()) || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "solve_lambda needs mu, alpha > 0 and p >= 1 (mu={mu}, alpha={alpha}, p={p})"
        )));
    }
    let residual = |x: f64| lambda_equation(mu, alpha, p, x).0 - 1.0;

    let sup = sup_lambda(mu, alpha);
    let mut lo = alpha;
    let mut hi = sup;
    let mut grow = 0;
    while residual(hi) > 0.0 {
        hi *= 1.0 + 1e-6 * 2f64.powi(grow);
        grow += 1;
        if grow > 60 {
            return Err(Error::Numeric(format!("no upper bracket for mu={mu}, alpha={alpha}, p={p}")));
        }
    }

    let mut best = (hi, residual(hi).abs());
    let mut iter = 0;
    let mut bisect = |lo: &mut f64, hi: &mut f64, best: &mut (f64, f64), width: f64| {
        while iter < cfg.max_iter {
            let mid = 0.5 * (*lo + *hi);
            if mid <= *lo || mid >= *hi || *hi - *lo <= width * *hi {
                return;
            }
            iter += 1;
            let r = residual(mid);
            if r.abs() < best.1 {
                *best = (mid, r.abs());
            }
            if r > 0.0 {
                *lo = mid;
            } else {
                *hi = mid;
            }
        }
    };
    bisect(&mut lo, &mut hi, &mut best, 1e-9);

    let mut x = best.0;
    for _ in 0..8 {
        let (f, df) = lambda_equation(mu, alpha, p, x);
        if df == 0.0 {
            break;
        }
        let next = (x - (f - 1.0) / df).clamp(lo, hi);
        let r = residual(next).abs();
        if r < best.1 {
            best = (next, r);
        }
        if next == x {
            break;
        }
        x = next;
    }
    // the root never exceeds sup; the bracket only grows past it by rounding
    best.0 = best.0.min(sup);
    if best.1 <= cfg.abs_tol {
        return Ok(best.0);
    }

    // Residual is above target; finish the bisection down to adjacent floats.
    bisect(&mut lo, &mut hi, &mut best, 0.0);
    let mid = 0.5 * (lo + hi);
    if best.1 <= cfg.abs_tol || mid <= lo || mid >= hi {
        Ok(best.0.min(sup))
    } else {
        Err(Error::Numeric(format!(
            "lambda did not converge for mu={mu}, alpha={alpha}, p={p}: residual {}",
            best.1
        )))
    }
}

/// The `W_{-1}` branch of Lambert W on `(-1/e, 0)`.
pub fn lambert_w_branch_minus1(x: f64) -> Result<f64> {
    if !(x > -INV_E && x < 0.0) {
        return Err(Error::Domain { x, domain: "(-1/e, 0)" });
    }
    let mut w = if x < -0.25 {
        // series about the branch point
        let p = -(2.0 * (1.0 + std::f64::consts::E * x)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 || w == -1.0 {
            break;
        }
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).min(-1.0);
        if (next - w).abs() <= 1e-16 * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

/// `W_{-1}(-exp(-b))` for `b > 1`, computed without forming the argument.
///
/// With `w = -(1 + s)` the defining identity becomes `s - ln(1 + s) = b - 1`.
pub fn lambert_w_minus1_of_neg_exp(b: f64) -> f64 {
    -(1.0 + solve_log_excess(b - 1.0))
}

/// Root `s >= 0` of `s - ln(1 + s) = c`.
fn solve_log_excess(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let mut s = if c < 1.0 {
        // s^2/2 - s^3/3 ~ c
        let s0 = (2.0 * c).sqrt();
        s0 + s0 * s0 / 3.0
    } else {
        c + (1.0 + c).ln() + 1.0
    };
    for _ in 0..100 {
        let h = s - s.ln_1p() - c;
        let dh = s / (1.0 + s);
        let next = (s - h / dh).max(0.5 * s);
        if (next - s).abs() <= 1e-16 * s {
            return next;
        }
        s = next;
    }
    s
}

/// Largest solution of the per-worker root equation, reached at `p = 1`:
/// `-(W_{-1}(-exp(-mu alpha - 1)) + 1) / mu`.
pub fn sup_lambda(mu: f64, alpha: f64) -> f64 {
    let w = lambert_w_minus1_of_neg_exp(mu * alpha + 1.0);
    -(w + 1.0) / mu
}

// Gauss-Kronrod 7/15 nodes on [-1, 1].
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

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gauss_kronrod(f, a, b);
        if err <= tol || depth >= 48 || (b - a) <= 1e-15 * (a.abs() + b.abs()) {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1) + recurse(f, mid, b, 0.5 * tol, depth + 1)
    }
    recurse(&f, a, b, abs_tol, 0)
}

/// `exp(c) * integral_0^1 exp(-c / x) dx`, well scaled for large `c`.
pub fn exp_integral_01_scaled(c: f64) -> f64 {
    if c == 0.0 {
        return 1.0;
    }
    // exp(c - c/x) = exp(-c (1 - x) / x); the integrand decays to 0 at x = 0
    // together with all its derivatives.
    let scaled = |x: f64| if x <= 0.0 { 0.0 } else { (-c * (1.0 - x) / x).exp() };
    let rough = integrate(scaled, 0.0, 1.0, 1e-8);
    integrate(scaled, 0.0, 1.0, (1e-13 * rough).max(1e-300))
}

/// `integral_0^1 exp(-c / x) dx` for `c >= 0`.
pub fn exp_integral_01(c: f64) -> f64 {
    (-c).exp() * exp_integral_01_scaled(c)
}
