//! Fully connected network with manual reverse-mode gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::kernels::{self, axpy};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the activation `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

/// Affine layer. `w[i * outputs + j]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![T::zero(); inputs * outputs],
            b: vec![T::zero(); outputs],
        }
    }

    /// Accumulates `x^T W` into `out` (which should hold the bias), skipping zero inputs.
    pub fn accumulate(&self, x: &[T], out: &mut [T]) {
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            axpy(xi, &self.w[i * self.outputs..(i + 1) * self.outputs], out);
        }
    }

    /// Pre-activations for `batch` inputs stored back to back.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            out.extend_from_slice(&self.b);
        }
        kernels::matmul_acc(x, &self.w, batch, self.inputs, self.outputs, &mut out);
        out
    }

    /// Same as [`Dense::accumulate`] for inputs occupying rows `offset..offset + x.len()`.
    pub fn accumulate_rows(&self, offset: usize, x: &[T], out: &mut [T]) {
        for (k, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let i = offset + k;
            axpy(xi, &self.w[i * self.outputs..(i + 1) * self.outputs], out);
        }
    }
}

/// Stack of dense layers; the activation follows every layer but the last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub activation: Activation,
    /// Bumped on every parameter update so old caches can be detected.
    #[serde(skip)]
    version: u64,
}

// equality ignores the cache version counter
impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activation == other.activation
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    version: u64,
    batch: usize,
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<T>>,
}

/// Gradients shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub w: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            w: net.layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Value at a flat parameter index: layer 0 weights, layer 0 biases, layer 1 weights, ...
    pub fn get(&self, mut index: usize) -> T {
        for (w, b) in self.w.iter().zip(&self.b) {
            if index < w.len() {
                return w[index];
            }
            index -= w.len();
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get_mut(&mut self, mut index: usize) -> &mut T {
        for (w, b) in self.w.iter_mut().zip(self.b.iter_mut()) {
            if index < w.len() {
                return &mut w[index];
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn from_layers(layers: Vec<Dense<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::shape(format!(
                    "layer widths disagree: {} outputs feed {} inputs",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        for l in &layers {
            if l.w.len() != l.inputs * l.outputs || l.b.len() != l.outputs {
                return Err(Error::shape("layer parameter lengths do not match its shape"));
            }
        }
        Ok(Self {
            layers,
            activation,
            version: 0,
        })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape("need at least input and output sizes"));
        }
        Self::from_layers(
            sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            activation,
        )
    }

    /// He-normal weights, zero biases; the last layer is scaled by `out_scale`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, out_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let n = net.layers.len();
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let mut std = (2.0 / layer.inputs as f64).sqrt();
            if k + 1 == n {
                std *= out_scale;
            }
            let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            for w in layer.w.iter_mut() {
                *w = T::lit(dist.sample(rng));
            }
        }
        Ok(net)
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_len()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks the parameters as changed.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.w.len() {
                return (l, true, index);
            }
            index -= layer.w.len();
            if index < layer.b.len() {
                return (l, false, index);
            }
            index -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> T {
        let (l, is_w, k) = self.locate(index);
        if is_w {
            self.layers[l].w[k]
        } else {
            self.layers[l].b[k]
        }
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        let (l, is_w, k) = self.locate(index);
        if is_w {
            self.layers[l].w[k] = value;
        } else {
            self.layers[l].b[k] = value;
        }
        self.touch();
    }

    /// Output only, without keeping intermediates.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.input_len() {
            return Err(Error::shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_len()
            )));
        }
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.b.clone();
            layer.accumulate(&x, &mut z);
            if k + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            x = z;
        }
        Ok(x)
    }

    /// Continues a forward pass whose first-layer pre-activation is already known.
    pub fn predict_from_first(&self, mut z: Vec<T>) -> Vec<T> {
        for layer in self.layers.iter().skip(1) {
            z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            let mut next = layer.b.clone();
            layer.accumulate(&z, &mut next);
            z = next;
        }
        z
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, Cache<T>)> {
        self.forward_batch(input, 1)
    }

    /// Forward pass over `batch` inputs stored back to back in `inputs`.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<(Vec<T>, Cache<T>)> {
        if batch == 0 || inputs.len() != batch * self.input_len() {
            return Err(Error::shape(format!(
                "input has length {}, network expects {} x {}",
                inputs.len(),
                batch,
                self.input_len()
            )));
        }
        let n = self.layers.len();
        let mut saved = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut x = inputs.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward_batch(&x, batch);
            saved.push(x);
            if k + 1 < n {
                let a = z.iter().map(|v| self.activation.apply(*v)).collect();
                pre.push(z);
                x = a;
            } else {
                x = z;
            }
        }
        Ok((
            x,
            Cache {
                version: self.version,
                batch,
                inputs: saved,
                pre,
            },
        ))
    }

    /// Adds the parameter gradients of `dout . output` to `grads`, with
    /// `dout` laid out like the batched output.
    pub fn backward(&self, cache: &Cache<T>, dout: &[T], grads: &mut Gradients<T>) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                params: self.version,
            });
        }
        let batch = cache.batch;
        if dout.len() != batch * self.output_len() {
            return Err(Error::shape(format!(
                "output gradient has length {}, network output is {} x {}",
                dout.len(),
                batch,
                self.output_len()
            )));
        }
        if grads.w.len() != self.layers.len() {
            return Err(Error::shape("gradient buffer does not match the network"));
        }
        let mut delta = dout.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &cache.inputs[k];
            let (m, o) = (layer.inputs, layer.outputs);
            kernels::weight_grad(x, &delta, batch, m, o, &mut grads.w[k]);
            let gb = &mut grads.b[k];
            for d in delta.chunks_exact(o) {
                for (g, &v) in gb.iter_mut().zip(d) {
                    *g += v;
                }
            }
            if k == 0 {
                break;
            }
            let mut dx = vec![T::zero(); batch * m];
            kernels::input_grad(&layer.w, &delta, batch, m, o, &mut dx);
            let pre = &cache.pre[k - 1];
            for (idx, v) in dx.iter_mut().enumerate() {
                *v *= self.activation.derivative(pre[idx], x[idx]);
            }
            delta = dx;
        }
        Ok(())
    }
}
