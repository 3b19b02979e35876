//! Log-gamma, log-beta and the regularized incomplete beta function.

use crate::error::{Error, Result};
use crate::num::Scalar;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma<T: Scalar>(x: T) -> Result<T> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(Error::invalid(format!("ln_gamma needs a finite positive argument, got {x}")));
    }
    if x < T::lit(0.5) {
        // reflection keeps the series in its accurate range
        let pi = T::PI();
        return Ok((pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x)?);
    }
    let x = x - T::one();
    let mut sum = T::lit(LANCZOS[0]);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += T::lit(c) / (x + T::from_usize_lossy(k));
    }
    let t = x + T::lit(LANCZOS_G + 0.5);
    Ok(T::lit(0.5) * (T::lit(2.0) * T::PI()).ln() + (x + T::lit(0.5)) * t.ln() - t + sum.ln())
}

/// `ln B(a, b)`.
pub fn ln_beta<T: Scalar>(a: T, b: T) -> Result<T> {
    Ok(ln_gamma(a)? + ln_gamma(b)? - ln_gamma(a + b)?)
}

/// `ln C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::invalid(format!("cannot choose {k} of {n}")));
    }
    Ok(ln_gamma(n as f64 + 1.0)? - ln_gamma(k as f64 + 1.0)? - ln_gamma((n - k) as f64 + 1.0)?)
}

const CF_MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf<T: Scalar>(a: T, b: T, x: T) -> Result<T> {
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();
    let one = T::one();
    let (qab, qap, qam) = (a + b, a + one, a - one);
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = T::from_usize_lossy(m);
        let m2 = m + m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h *= del;
        if (del - one).abs() <= eps {
            return Ok(h);
        }
    }
    Err(Error::Convergence(format!(
        "incomplete beta continued fraction (a={a}, b={b}, x={x})"
    )))
}

/// Regularized incomplete beta `I_x(a, b)`, the Beta(a, b) CDF.
pub fn inc_beta<T: Scalar>(a: T, b: T, x: T) -> Result<T> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::invalid("incomplete beta needs a, b > 0"));
    }
    if x.is_nan() {
        return Err(Error::invalid("incomplete beta at NaN"));
    }
    if x <= T::zero() {
        return Ok(T::zero());
    }
    if x >= T::one() {
        return Ok(T::one());
    }
    let ln_front = a * x.ln() + b * (T::one() - x).ln() - ln_beta(a, b)?;
    let front = ln_front.exp();
    if x < (a + T::one()) / (a + b + T::lit(2.0)) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(T::one() - front * beta_cf(b, a, T::one() - x)? / b)
    }
}
