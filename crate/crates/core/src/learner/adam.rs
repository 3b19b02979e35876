//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::kernels;
use crate::learner::mlp::{Gradients, Mlp};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Mlp<T>, beta1: T, beta2: T, eps: T) -> Result<Self> {
        let unit = T::zero()..T::one();
        if !unit.contains(&beta1) || !unit.contains(&beta2) || eps <= T::zero() {
            return Err(Error::invalid("Adam needs betas in [0, 1) and eps > 0"));
        }
        let z = Gradients::zeros_like(net);
        let m: Vec<Vec<T>> = z.w.iter().zip(&z.b).flat_map(|(w, b)| [w.clone(), b.clone()]).collect();
        Ok(Self {
            beta1,
            beta2,
            eps,
            t: 0,
            v: m.clone(),
            m,
        })
    }

    pub fn with_defaults(net: &Mlp<T>) -> Self {
        Self::new(net, T::lit(0.9), T::lit(0.999), T::lit(1e-8)).expect("default Adam parameters are valid")
    }

    /// Applies one update. Non-finite gradients are rejected before anything changes.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.w.len() != net.layers.len() || self.m.len() != 2 * net.layers.len() {
            return Err(Error::shape("optimizer state does not match the network"));
        }
        if !grads.all_finite() {
            return Err(Error::Divergence(format!("non-finite gradient at update {}", self.t + 1)));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        // bias corrections folded into the step size and epsilon
        let step = lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let tensors = [
                (&mut layer.w, &grads.w[k], 2 * k),
                (&mut layer.b, &grads.b[k], 2 * k + 1),
            ];
            for (p, g, s) in tensors {
                if p.len() != g.len() || self.m[s].len() != p.len() {
                    return Err(Error::shape("gradient tensor length mismatch"));
                }
                kernels::adam(p, g, &mut self.m[s], &mut self.v[s], self.beta1, self.beta2, step, eps);
            }
        }
        net.touch();
        Ok(())
    }
}
