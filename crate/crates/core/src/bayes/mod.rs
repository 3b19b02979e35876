//! Beta-Bernoulli comparison of success rates.

pub mod quad;
pub mod special;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::EvalRecord;
use crate::num::Scalar;
use crate::types::FailureMode;

pub use quad::{integrate, integrate_with_breaks, Quadrature};
pub use special::{inc_beta, ln_beta, ln_choose, ln_gamma};

/// Absolute tolerance requested from the quadrature routes.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaDist<T = f64> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> BetaDist<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha > T::zero() && beta > T::zero() && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(format!("Beta parameters must be positive, got ({alpha}, {beta})")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> T {
        self.alpha / (self.alpha + self.beta)
    }

    /// Log density; `-inf` outside the open unit interval.
    pub fn log_pdf(&self, x: T) -> Result<T> {
        if !(x > T::zero() && x < T::one()) {
            return Ok(T::neg_infinity());
        }
        let one = T::one();
        Ok((self.alpha - one) * x.ln() + (self.beta - one) * (one - x).ln() - ln_beta(self.alpha, self.beta)?)
    }

    pub fn pdf(&self, x: T) -> Result<T> {
        Ok(self.log_pdf(x)?.exp())
    }

    pub fn cdf(&self, x: T) -> Result<T> {
        inc_beta(self.alpha, self.beta, x)
    }

    /// Smallest `x` with `cdf(x) >= p`, by bisection.
    pub fn quantile(&self, p: T) -> Result<T> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::invalid(format!("quantile level {p} outside [0, 1]")));
        }
        let (mut lo, mut hi) = (T::zero(), T::one());
        for _ in 0..200 {
            let mid = T::lit(0.5) * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(T::lit(0.5) * (lo + hi))
    }

    /// Points splitting the mass so quadrature can see narrow peaks.
    fn breaks(&self) -> Vec<T> {
        let sd = (self.alpha * self.beta / ((self.alpha + self.beta).powi(2) * (self.alpha + self.beta + T::one()))).sqrt();
        let m = self.mean();
        let mut pts = vec![T::zero()];
        for k in [-6.0, -2.0, 0.0, 2.0, 6.0] {
            let p = m + T::lit(k) * sd;
            if p > *pts.last().expect("nonempty") && p < T::one() {
                pts.push(p);
            }
        }
        pts.push(T::one());
        pts
    }
}

/// Posterior over a success rate after `s` successes in `n` trials under a uniform prior.
pub fn posterior(s: u64, n: u64) -> Result<BetaDist<f64>> {
    if s > n {
        return Err(Error::invalid(format!("{s} successes out of {n} trials")));
    }
    BetaDist::new(s as f64 + 1.0, (n - s) as f64 + 1.0)
}

pub fn beta_log_pdf(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    BetaDist::new(alpha, beta)?.log_pdf(x)
}

/// `|integral of C(n, s) p^s (1 - p)^(n - s) dp - 1 / (n + 1)|`, by quadrature.
pub fn marginal_likelihood_check(s: u64, n: u64) -> Result<f64> {
    if s > n {
        return Err(Error::invalid(format!("{s} successes out of {n} trials")));
    }
    let ln_c = ln_choose(n, s)?;
    let (sf, ff) = (s as f64, (n - s) as f64);
    let f = |p: f64| {
        if p <= 0.0 || p >= 1.0 {
            return 0.0;
        }
        (ln_c + sf * p.ln() + ff * (1.0 - p).ln()).exp()
    };
    let q = integrate_with_breaks(f, &posterior(s, n)?.breaks(), 1e-12)?;
    Ok((q.value - 1.0 / (n as f64 + 1.0)).abs())
}

/// `P(theta_a > theta_b)` by Monte Carlo with `draws` samples, using
/// `X / (X + Y)` with `X ~ Gamma(alpha)`, `Y ~ Gamma(beta)`.
pub fn prob_greater_mc<R: Rng + ?Sized>(a: &BetaDist<f64>, b: &BetaDist<f64>, draws: usize, rng: &mut R) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one draw"));
    }
    let g = |shape: f64| Gamma::new(shape, 1.0).map_err(|e| Error::invalid(e.to_string()));
    let (ga, gb, gc, gd) = (g(a.alpha)?, g(a.beta)?, g(b.alpha)?, g(b.beta)?);
    let mut wins = 0usize;
    for _ in 0..draws {
        let (x, y) = (ga.sample(rng), gb.sample(rng));
        let (u, v) = (gc.sample(rng), gd.sample(rng));
        if x / (x + y) > u / (u + v) {
            wins += 1;
        }
    }
    Ok(wins as f64 / draws as f64)
}

/// `P(theta_a > theta_b)` as `integral f_a(x) F_b(x) dx`.
pub fn prob_greater_quadrature<T: Scalar>(a: &BetaDist<T>, b: &BetaDist<T>) -> Result<Quadrature<T>> {
    let mut pts = a.breaks();
    pts.extend(b.breaks());
    pts.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    pts.dedup();
    let ln_norm = ln_beta(a.alpha, a.beta)?;
    let one = T::one();
    let f = |x: T| {
        if !(x > T::zero() && x < one) {
            return T::zero();
        }
        let dens = ((a.alpha - one) * x.ln() + (a.beta - one) * (one - x).ln() - ln_norm).exp();
        // inc_beta only fails on invalid parameters, which were checked above
        dens * inc_beta(b.alpha, b.beta, x).unwrap_or(T::nan())
    };
    let tol = T::lit(QUAD_TOL).max(T::epsilon() * T::lit(100.0));
    integrate_with_breaks(f, &pts, tol)
}

/// Equal-tailed interval holding `mass` of the distribution.
pub fn credible_interval<T: Scalar>(d: &BetaDist<T>, mass: T) -> Result<(T, T)> {
    if !(mass > T::zero() && mass < T::one()) {
        return Err(Error::invalid(format!("credible mass {mass} outside (0, 1)")));
    }
    let tail = (T::one() - mass) / T::lit(2.0);
    Ok((d.quantile(tail)?, d.quantile(T::one() - tail)?))
}

/// Both routes to `P(theta_a > theta_b)` for two evaluation outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: BetaDist<f64>,
    pub b: BetaDist<f64>,
    pub mc: f64,
    pub mc_draws: usize,
    pub quadrature: f64,
    pub quadrature_error: f64,
    pub abs_difference: f64,
    /// `3 sqrt(q (1 - q) / n) + 1e-6`.
    pub mc_tolerance: f64,
    pub interval_mass: f64,
    pub interval_a: (f64, f64),
    pub interval_b: (f64, f64),
}

impl Comparison {
    pub fn agrees(&self) -> bool {
        self.abs_difference <= self.mc_tolerance
    }
}

pub fn compare<R: Rng + ?Sized>(
    (sa, na): (u64, u64),
    (sb, nb): (u64, u64),
    draws: usize,
    mass: f64,
    rng: &mut R,
) -> Result<Comparison> {
    let a = posterior(sa, na)?;
    let b = posterior(sb, nb)?;
    let mc = prob_greater_mc(&a, &b, draws, rng)?;
    let q = prob_greater_quadrature(&a, &b)?;
    let p = q.value;
    Ok(Comparison {
        a,
        b,
        mc,
        mc_draws: draws,
        quadrature: p,
        quadrature_error: q.error,
        abs_difference: (mc - p).abs(),
        mc_tolerance: 3.0 * (p * (1.0 - p) / draws as f64).sqrt() + 1e-6,
        interval_mass: mass,
        interval_a: credible_interval(&a, mass)?,
        interval_b: credible_interval(&b, mass)?,
    })
}

/// One row of a failure breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub policy_tag: String,
    pub n: usize,
    pub s: usize,
    pub failures: usize,
    /// Per-mode share of this row's failures, in [`FailureMode::ALL`] order.
    pub shares: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Failure modes per policy, each row normalized by its own failure total
/// (all shares are zero when a policy never failed).
pub fn failure_table(records: &[EvalRecord]) -> Result<Vec<FailureRow>> {
    records
        .iter()
        .map(|r| {
            r.check()?;
            let counts: Vec<usize> = FailureMode::ALL.iter().map(|&m| r.count(m)).collect();
            let total = r.failure_total();
            let shares = counts
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect();
            Ok(FailureRow {
                policy_tag: r.policy_tag.clone(),
                n: r.n,
                s: r.s,
                failures: total,
                shares,
                counts,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn posterior_parameters() {
        assert_eq!(posterior(7, 20).unwrap(), BetaDist { alpha: 8.0, beta: 14.0 });
        assert_eq!(posterior(0, 0).unwrap(), BetaDist { alpha: 1.0, beta: 1.0 });
        assert!(posterior(3, 2).is_err());
    }

    #[test]
    fn log_pdf_endpoints_and_value() {
        let d = BetaDist::new(2.0, 3.0).unwrap();
        assert_eq!(d.log_pdf(0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(d.log_pdf(1.0).unwrap(), f64::NEG_INFINITY);
        // 12 x (1 - x)^2
        let x = 0.3;
        assert!((d.pdf(x).unwrap() - 12.0 * x * 0.49).abs() < 1e-13);
        assert!(beta_log_pdf(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn marginal_likelihood_is_uniform() {
        for n in [1u64, 5, 20, 30, 40] {
            for s in 0..=n {
                let dev = marginal_likelihood_check(s, n).unwrap();
                assert!(dev <= 1e-8, "s={s} n={n} dev={dev}");
            }
        }
    }

    #[test]
    fn uniform_interval() {
        let (lo, hi): (f64, f64) = credible_interval(&BetaDist::new(1.0, 1.0).unwrap(), 0.95).unwrap();
        assert!((lo - 0.025).abs() < 1e-9 && (hi - 0.975).abs() < 1e-9);
    }

    #[test]
    fn interval_mass() {
        let d = BetaDist::<f64>::new(24.0, 8.0).unwrap();
        let (lo, hi) = credible_interval(&d, 0.9).unwrap();
        assert!((d.cdf(hi).unwrap() - d.cdf(lo).unwrap() - 0.9).abs() < 1e-6);
        let wide = BetaDist::new(1000.0, 1000.0).unwrap();
        let (lo, hi) = credible_interval(&wide, 0.95).unwrap();
        assert!(lo < 0.5 && 0.5 < hi);
    }

    #[test]
    fn identical_posteriors_are_even() {
        let d = posterior(5, 12).unwrap();
        let q = prob_greater_quadrature(&d, &d).unwrap();
        assert!((q.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn mc_and_quadrature_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let c = compare((23, 30), (19, 30), 200_000, 0.95, &mut rng).unwrap();
        assert!(c.agrees(), "{c:?}");
    }

    #[test]
    fn failure_rows_normalize_per_row() {
        let a = EvalRecord::from_counts("a", 20, 7, &[(FailureMode::StuckFirst, 9), (FailureMode::DropSecond, 4)]).unwrap();
        let b = EvalRecord::from_counts("b", 10, 10, &[]).unwrap();
        let rows = failure_table(&[a, b]).unwrap();
        assert_eq!(rows[0].failures, 13);
        assert!((rows[0].shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((rows[0].shares[FailureMode::StuckFirst.index()] - 9.0 / 13.0).abs() < 1e-15);
        assert!(rows[1].shares.iter().all(|&v| v == 0.0));
    }
}
