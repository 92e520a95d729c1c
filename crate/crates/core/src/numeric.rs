//! Log-domain arithmetic, normal tails, scalar root finding and small
//! statistics helpers shared by the analytic and Monte Carlo layers.

use libm::erfc;
use statrs::function::factorial::ln_binomial as statrs_ln_binomial;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `log(sum(exp(x)))` with the largest term factored out and the remaining
/// terms accumulated with compensation. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut acc = CompensatedSum::default();
    for &x in xs {
        acc.add((x - max).exp());
    }
    max + acc.value().ln()
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(a) - exp(b))` for `a >= b`; `-inf` when they are equal.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    statrs_ln_binomial(n, k)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Mills ratio `Q(z)/phi(z)` for `z > 0` by the Laplace continued fraction
/// `1/(z + 1/(z + 2/(z + 3/(z + ...))))`, evaluated with modified Lentz.
fn mills_ratio(z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = z + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = z + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Threshold above which the normal upper tail switches from `erfc` to the
/// continued-fraction representation.
pub const NORMAL_TAIL_SWITCH: f64 = 8.0;

/// Natural log of the standard normal upper tail `Q(z) = P[Z > z]`.
///
/// Representable for any finite `z`; at `z = 1400` this is about `-1e6`.
pub fn log_norm_sf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z > NORMAL_TAIL_SWITCH {
        -0.5 * z * z - LN_SQRT_2PI + mills_ratio(z).ln()
    } else if z > -NORMAL_TAIL_SWITCH {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        (-(-0.5 * z * z - LN_SQRT_2PI + mills_ratio(-z).ln()).exp()).ln_1p()
    }
}

/// Brent's method on `[lo, hi]` with `f(lo)` and `f(hi)` of opposite sign.
///
/// Bisection safeguards the inverse-quadratic and secant steps. Stops when the
/// bracket is below `xtol` (absolute) or `f` hits zero exactly.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > xtol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Central difference with one level of Richardson extrapolation.
pub fn richardson_derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// Wilson score interval for `hits` successes out of `trials` at normal quantile `z`.
pub fn wilson_interval(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut acc = CompensatedSum::default();
    xs.iter().for_each(|&x| acc.add(x));
    let mean = acc.value() / n;
    let mut sq = CompensatedSum::default();
    xs.iter().for_each(|&x| sq.add((x - mean) * (x - mean)));
    let var = sq.value() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_basics() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sub_exp(2f64.ln(), 0.0)).abs() < 1e-15);
        assert_eq!(log_sub_exp(1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn normal_tail_matches_erfc_and_is_continuous() {
        assert!((log_norm_sf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        // Reference values from 40-digit arithmetic.
        let reference = [
            (1.0, -1.8410216450092635),
            (3.0, -6.6077262215103495),
            (5.0, -15.064998393988726),
            (7.9, -34.206228170981716),
            (8.5, -39.197396428217669),
            (20.0, -203.91715537109726),
        ];
        for (z, want) in reference {
            let got = log_norm_sf(z);
            assert!((got - want).abs() < 1e-12 * want.abs(), "z={z}: {got} vs {want}");
        }
        let below = (0.5 * erfc(8.0 / std::f64::consts::SQRT_2)).ln();
        let above = -32.0 - LN_SQRT_2PI + mills_ratio(8.0).ln();
        assert!((below - above).abs() < 1e-12);
        // Q(40) = 3.655893540915e-350 is subnormal-free only in log domain.
        assert!((log_norm_sf(40.0) - (-804.608442013754)).abs() < 1e-9);
        assert!(log_norm_sf(1414.0) < -999_000.0);
        assert!((log_norm_sf(-10.0)).abs() < 1e-20);
    }

    #[test]
    fn mills_ratio_asymptotics() {
        // R(z) = 1/z - 1/z^3 + 3/z^5 - ... for large z.
        let z: f64 = 50.0;
        let series = 1.0 / z - 1.0 / z.powi(3) + 3.0 / z.powi(5) - 15.0 / z.powi(7) + 105.0 / z.powi(9);
        assert!((mills_ratio(z) / series - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brent_finds_roots() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(brent(|x| x * x + 1.0, 0.0, 2.0, 1e-15).is_none());
    }

    #[test]
    fn golden_finds_minimum() {
        let x = golden_min(|x| (x - 0.3) * (x - 0.3), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn wilson_brackets_point_estimate() {
        let (lo, hi) = wilson_interval(50, 1000, Z95);
        assert!(lo < 0.05 && 0.05 < hi);
        assert_eq!(wilson_interval(0, 10, Z95).0, 0.0);
        assert_eq!(wilson_interval(10, 10, Z95).1, 1.0);
    }
}
