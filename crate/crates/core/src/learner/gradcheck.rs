//! Central-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::learner::mlp::{Gradients, Mlp};
use crate::learner::policy::{DiffusionPolicy, NoiseDraw, TrainBatch};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_COORDS: usize = 200;
/// Below this magnitude errors are measured in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|)`, or `|a - n|` when both are below [`ABS_FLOOR`].
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compares backprop gradients of `loss` against central differences on
/// `coords` distinct parameters picked with `seed` (all of them if fewer).
///
/// `loss(net, grads)` must return the loss and accumulate its gradient into
/// `grads` when given. `mutate` may alter the analytic gradient before the
/// comparison, which is how the check itself is tested.
pub fn finite_diff_check<F>(
    net: &Mlp<f64>,
    loss: F,
    coords: usize,
    h: f64,
    seed: u64,
    mutate: Option<&dyn Fn(&mut Gradients<f64>)>,
) -> Result<GradCheckReport>
where
    F: Fn(&Mlp<f64>, Option<&mut Gradients<f64>>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut grads = Gradients::zeros_like(net);
    loss(net, Some(&mut grads))?;
    if let Some(m) = mutate {
        m(&mut grads);
    }
    let total = net.param_count();
    let picked: Vec<usize> = if coords >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, total, coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        coords: picked.len(),
        max_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &i in &picked {
        let p = net.param(i);
        probe.set_param(i, p + h);
        let up = loss(&probe, None)?;
        probe.set_param(i, p - h);
        let down = loss(&probe, None)?;
        probe.set_param(i, p);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(i);
        let err = gradient_error(analytic, numeric);
        if err > report.max_error || !err.is_finite() {
            report = GradCheckReport {
                max_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic,
                numeric,
                ..report
            };
        }
    }
    Ok(report)
}

impl DiffusionPolicy<f64> {
    /// Gradient check of the training loss with the noise draws held fixed.
    pub fn finite_diff_check(
        &self,
        batch: &TrainBatch,
        noise: &[NoiseDraw],
        coords: usize,
        seed: u64,
        mutate: Option<&dyn Fn(&mut Gradients<f64>)>,
    ) -> Result<GradCheckReport> {
        let loss = |net: &Mlp<f64>, g: Option<&mut Gradients<f64>>| {
            let mut p = self.clone();
            p.net = net.clone();
            p.loss(batch, noise, g)
        };
        finite_diff_check(&self.net, loss, coords, DEFAULT_STEP, seed, mutate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::mlp::Activation;
    use rand::Rng;

    fn regression(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> impl Fn(&Mlp<f64>, Option<&mut Gradients<f64>>) -> Result<f64> {
        move |net, mut g| {
            let mut total = 0.0;
            for (x, y) in inputs.iter().zip(&targets) {
                let (out, cache) = net.forward(x)?;
                let d: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
                total += d.iter().map(|v| 0.5 * v * v).sum::<f64>();
                if let Some(g) = g.as_deref_mut() {
                    net.backward(&cache, &d, g)?;
                }
            }
            Ok(total)
        }
    }

    fn problem(seed: u64, act: Activation) -> (Mlp<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let net = Mlp::random(&[6, 12, 10, 3], act, 1.0, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (net, xs, ys)
    }

    #[test]
    fn backprop_matches_differences() {
        for act in [Activation::Relu, Activation::Tanh] {
            let (net, xs, ys) = problem(1, act);
            let r = finite_diff_check(&net, regression(xs, ys), 200, DEFAULT_STEP, 0, None).unwrap();
            assert!(r.coords == 200);
            assert!(r.max_error <= 1e-5, "{act:?}: {r:?}");
        }
    }

    #[test]
    fn mutated_gradient_is_caught() {
        let (net, xs, ys) = problem(2, Activation::Tanh);
        let bump = |g: &mut Gradients<f64>| g.scale(1.05);
        let r = finite_diff_check(&net, regression(xs, ys), 500, DEFAULT_STEP, 0, Some(&bump)).unwrap();
        assert!(r.max_error > 1e-2, "{r:?}");
    }

    #[test]
    fn stationary_point_uses_absolute_error() {
        let (net, xs, _) = problem(3, Activation::Relu);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| net.predict(x).unwrap()).collect();
        let r = finite_diff_check(&net, regression(xs, ys), 300, DEFAULT_STEP, 0, None).unwrap();
        assert!(r.max_error <= 1e-5, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let (net, xs, ys) = problem(4, Activation::Relu);
        assert!(finite_diff_check(&net, regression(xs, ys), 10, 0.0, 0, None).is_err());
    }
}
