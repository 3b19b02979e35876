//! Squared-cosine noise schedule and forward noising.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// Per-step noise levels for `t = 1..=steps`, stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule<T> {
    pub steps: usize,
    pub betas: Vec<T>,
    pub alphas: Vec<T>,
    pub alpha_bars: Vec<T>,
}

/// `f(t) = cos^2(((t / T) + s) / (1 + s) * pi / 2)`.
pub fn cosine_level<T: Scalar>(t: usize, steps: usize) -> T {
    let s = T::lit(COSINE_OFFSET);
    let u = (T::from_usize_lossy(t) / T::from_usize_lossy(steps) + s) / (T::one() + s);
    let c = (u * T::FRAC_PI_2()).cos();
    c * c
}

impl<T: Scalar> NoiseSchedule<T> {
    /// `beta_t = min(1 - f(t) / f(t - 1), 0.999)` and `alpha_bar_t = prod (1 - beta_i)`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("diffusion needs at least one step"));
        }
        let mut betas = Vec::with_capacity(steps);
        let mut alphas = Vec::with_capacity(steps);
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = T::one();
        for t in 1..=steps {
            let ratio = cosine_level::<T>(t, steps) / cosine_level::<T>(t - 1, steps);
            let beta = (T::one() - ratio).min(T::lit(MAX_BETA)).max(T::zero());
            let alpha = T::one() - beta;
            prod *= alpha;
            betas.push(beta);
            alphas.push(alpha);
            alpha_bars.push(prod);
        }
        Ok(Self {
            steps,
            betas,
            alphas,
            alpha_bars,
        })
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> T {
        self.alphas[t - 1]
    }

    /// `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Whether step `t` hit the beta ceiling.
    pub fn clamped(&self, t: usize) -> bool {
        self.betas[t - 1] >= T::lit(MAX_BETA)
    }

    /// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
    pub fn q_sample(&self, x0: &[T], t: usize, eps: &[T]) -> Result<Vec<T>> {
        self.check(t)?;
        if x0.len() != eps.len() {
            return Err(Error::shape(format!(
                "x0 has length {}, noise has length {}",
                x0.len(),
                eps.len()
            )));
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
    }

    /// One ancestral step from `x_t` given a noise prediction; `z` is ignored at `t = 1`.
    ///
    /// The implied clean sample is clipped to `[-1, 1]` before forming the
    /// posterior mean.
    pub fn reverse_step(&self, xt: &[T], t: usize, eps_hat: &[T], z: &[T]) -> Result<Vec<T>> {
        self.check(t)?;
        if xt.len() != eps_hat.len() || xt.len() != z.len() {
            return Err(Error::shape("reverse step vectors differ in length"));
        }
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let alpha = self.alpha(t);
        let one = T::one();
        let c0 = ab_prev.sqrt() * beta / (one - ab);
        let ct = alpha.sqrt() * (one - ab_prev) / (one - ab);
        let sigma = if t > 1 {
            ((one - ab_prev) / (one - ab) * beta).sqrt()
        } else {
            T::zero()
        };
        Ok(xt
            .iter()
            .zip(eps_hat)
            .zip(z)
            .map(|((&x, &e), &n)| {
                let x0 = ((x - (one - ab).sqrt() * e) / ab.sqrt()).max(-one).min(one);
                c0 * x0 + ct * x + sigma * n
            })
            .collect())
    }
}
