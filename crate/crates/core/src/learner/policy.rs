//! Noise-prediction network over action chunks, its training loop and sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::Dataset;
use crate::harness::RolloutPolicy;
use crate::learner::adam::Adam;
use crate::learner::mlp::{Activation, Gradients, Mlp};
use crate::learner::schedule::NoiseSchedule;
use crate::num::Scalar;
use crate::sim::{derive_seed, SimState};
use crate::types::{normalize_observation, normalize_row, ActionChunk, Observation, SimConfig, ACTION_DIM, CHUNK_LEN};

/// Flattened chunk length.
pub const CHUNK_DIM: usize = CHUNK_LEN * ACTION_DIM;

/// Seed-derivation tag for the sampling stream of a rollout.
const SAMPLE_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub instrumented: bool,
    pub hidden: Vec<usize>,
    pub diffusion_steps: usize,
    pub time_embed_dim: usize,
    /// Scale of the output layer at initialisation.
    pub out_scale: f64,
    pub seed: u64,
}

impl PolicyConfig {
    pub fn new(instrumented: bool) -> Self {
        Self {
            instrumented,
            hidden: vec![512, 512],
            diffusion_steps: 50,
            time_embed_dim: 16,
            out_scale: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.diffusion_steps == 0 {
            return Err(Error::invalid("diffusion_steps must be positive"));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::invalid("time_embed_dim must be positive and even"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(self.out_scale > 0.0 && self.out_scale.is_finite()) {
            return Err(Error::invalid("out_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the last step (cosine decay after warm-up).
    pub lr_final: f64,
    pub warmup: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 32,
            lr: 3e-4,
            lr_final: 3e-5,
            warmup: 500,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr_final >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rates must be finite and positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let p = ((step - self.warmup) as f64 / span).min(1.0);
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    out
}

/// One supervised example: an observation and the normalized chunk that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub obs: Observation,
    pub target: [f64; CHUNK_DIM],
}

/// Every frame of a dataset paired with its future chunk. Chunks running past
/// the end of an episode repeat the final action.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub instrumented: bool,
    pub samples: Vec<TrainSample>,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset, cfg: &SimConfig, instrumented: bool) -> Result<Self> {
        let mut samples = Vec::new();
        for ep in &dataset.episodes {
            if ep.frames.is_empty() {
                continue;
            }
            if instrumented && !ep.instrumented() {
                return Err(Error::Modality {
                    policy: true,
                    observation: false,
                });
            }
            let rows: Vec<[f64; 4]> = ep.frames.iter().map(|f| normalize_row(&f.action, cfg)).collect();
            for (i, frame) in ep.frames.iter().enumerate() {
                let mut target = [0.0; CHUNK_DIM];
                for k in 0..CHUNK_LEN {
                    let r = rows[(i + k).min(rows.len() - 1)];
                    target[k * ACTION_DIM..(k + 1) * ACTION_DIM].copy_from_slice(&r);
                }
                let obs = if instrumented {
                    frame.obs.clone()
                } else {
                    frame.obs.without_instr()
                };
                samples.push(TrainSample { obs, target });
            }
        }
        if samples.is_empty() {
            return Err(Error::invalid("dataset has no frames to train on"));
        }
        Ok(Self { instrumented, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch(&self, indices: &[usize], cfg: &SimConfig) -> Result<TrainBatch> {
        let mut features = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            features.push(normalize_observation(&s.obs, cfg).values);
            targets.push(s.target.to_vec());
        }
        Ok(TrainBatch { features, targets })
    }
}

/// Normalized observation features and flattened target chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Diffusion step and noise drawn for each batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

pub fn draw_noise<R: Rng + ?Sized>(batch_len: usize, steps: usize, rng: &mut R) -> Vec<NoiseDraw> {
    (0..batch_len)
        .map(|_| NoiseDraw {
            t: rng.random_range(1..=steps),
            eps: (0..CHUNK_DIM).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect()
}

/// Conditional noise predictor, generic over the network scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy<T = f32> {
    pub config: PolicyConfig,
    pub obs_len: usize,
    pub net: Mlp<T>,
    pub schedule: NoiseSchedule<T>,
    sample_rng: ChaCha20Rng,
}

fn cast<T: Scalar>(v: &[f64]) -> impl Iterator<Item = T> + '_ {
    v.iter().map(|&x| T::lit(x))
}

impl<T: Scalar> DiffusionPolicy<T> {
    pub fn new(config: PolicyConfig, cfg: &SimConfig) -> Result<Self> {
        config.validate()?;
        let obs_len = cfg.feature_len(config.instrumented);
        let mut sizes = vec![obs_len + CHUNK_DIM + config.time_embed_dim];
        sizes.extend(&config.hidden);
        sizes.push(CHUNK_DIM);
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let net = Mlp::random(&sizes, Activation::Relu, config.out_scale, &mut rng)?;
        Self::from_parts(config, obs_len, net)
    }

    /// Reassembles a policy from stored parameters.
    pub fn from_parts(config: PolicyConfig, obs_len: usize, net: Mlp<T>) -> Result<Self> {
        config.validate()?;
        let expected = obs_len + CHUNK_DIM + config.time_embed_dim;
        if net.input_len() != expected || net.output_len() != CHUNK_DIM {
            return Err(Error::shape(format!(
                "network maps {} -> {}, policy needs {} -> {}",
                net.input_len(),
                net.output_len(),
                expected,
                CHUNK_DIM
            )));
        }
        if config.hidden != net.sizes()[1..net.layers.len()] {
            return Err(Error::shape("network hidden widths differ from the policy config"));
        }
        let schedule = NoiseSchedule::cosine(config.diffusion_steps)?;
        Ok(Self {
            sample_rng: ChaCha20Rng::seed_from_u64(config.seed),
            config,
            obs_len,
            net,
            schedule,
        })
    }

    /// Network input: features, noisy chunk, step embedding.
    pub fn input(&self, features: &[f64], xt: &[T], t: usize, out: &mut Vec<T>) -> Result<()> {
        if features.len() != self.obs_len {
            return Err(Error::shape(format!(
                "observation features have length {}, policy expects {}",
                features.len(),
                self.obs_len
            )));
        }
        out.extend(cast::<T>(features));
        out.extend_from_slice(xt);
        out.extend(cast::<T>(&time_embedding(t, self.config.time_embed_dim)));
        Ok(())
    }

    /// Factor from network output to predicted noise at step `t`,
    /// `1 / sqrt(1 - alpha_bar_t)`. The raw output is a scaled noise estimate,
    /// which keeps its size comparable across steps.
    pub fn eps_gain(&self, t: usize) -> T {
        T::one() / (T::one() - self.schedule.alpha_bar(t)).sqrt()
    }

    /// Mean squared noise-prediction error over the batch; gradients are
    /// accumulated into `grads` when given.
    pub fn loss(&self, batch: &TrainBatch, noise: &[NoiseDraw], grads: Option<&mut Gradients<T>>) -> Result<f64> {
        if batch.features.len() != batch.targets.len() || batch.features.len() != noise.len() {
            return Err(Error::shape("batch features, targets and noise differ in length"));
        }
        if batch.features.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let n = batch.features.len();
        let denom = T::from_usize_lossy(n * CHUNK_DIM);
        let mut inputs = Vec::with_capacity(n * self.net.input_len());
        for ((f, x0), d) in batch.features.iter().zip(&batch.targets).zip(noise) {
            if x0.len() != CHUNK_DIM || d.eps.len() != CHUNK_DIM {
                return Err(Error::shape("target or noise has the wrong length"));
            }
            let x0: Vec<T> = cast(x0).collect();
            let eps: Vec<T> = cast(&d.eps).collect();
            let xt = self.schedule.q_sample(&x0, d.t, &eps)?;
            self.input(f, &xt, d.t, &mut inputs)?;
        }
        let (pred, cache) = self.net.forward_batch(&inputs, n)?;
        let mut total = 0.0;
        let mut dout = Vec::with_capacity(pred.len());
        let two = T::lit(2.0);
        for (row, d) in pred.chunks(CHUNK_DIM).zip(noise) {
            let g = self.eps_gain(d.t);
            for (&p, &e) in row.iter().zip(&d.eps) {
                let r = g * p - T::lit(e);
                let rf = r.to_f64_lossy();
                total += rf * rf;
                dout.push(two * g * r / denom);
            }
        }
        if let Some(g) = grads {
            self.net.backward(&cache, &dout, g)?;
        }
        Ok(total / (n * CHUNK_DIM) as f64)
    }

    /// Draws a chunk by ancestral sampling from pure noise.
    pub fn sample_chunk<R: Rng + ?Sized>(&self, obs: &Observation, cfg: &SimConfig, rng: &mut R) -> Result<ActionChunk> {
        if obs.instrumented() != self.config.instrumented {
            return Err(Error::Modality {
                policy: self.config.instrumented,
                observation: obs.instrumented(),
            });
        }
        let features: Vec<T> = cast(&normalize_observation(obs, cfg).values).collect();
        if features.len() != self.obs_len {
            return Err(Error::shape("observation does not match the policy input"));
        }
        // the observation part of the first layer is shared by all steps
        let first = &self.net.layers[0];
        let mut z_obs = first.b.clone();
        first.accumulate(&features, &mut z_obs);
        let mut gauss = || T::lit(rng.sample::<f64, _>(StandardNormal));
        let mut x: Vec<T> = (0..CHUNK_DIM).map(|_| gauss()).collect();
        let zero = vec![T::zero(); CHUNK_DIM];
        for t in (1..=self.schedule.steps).rev() {
            let mut z = z_obs.clone();
            first.accumulate_rows(self.obs_len, &x, &mut z);
            let emb: Vec<T> = cast(&time_embedding(t, self.config.time_embed_dim)).collect();
            first.accumulate_rows(self.obs_len + CHUNK_DIM, &emb, &mut z);
            let mut eps_hat = self.net.predict_from_first(z);
            let g = self.eps_gain(t);
            eps_hat.iter_mut().for_each(|v| *v = *v * g);
            x = if t > 1 {
                let noise: Vec<T> = (0..CHUNK_DIM).map(|_| gauss()).collect();
                self.schedule.reverse_step(&x, t, &eps_hat, &noise)?
            } else {
                self.schedule.reverse_step(&x, t, &eps_hat, &zero)?
            };
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("sampled chunk is not finite".into()));
        }
        let rows = x
            .chunks(ACTION_DIM)
            .map(|r| std::array::from_fn(|k| r[k].to_f64_lossy().clamp(-1.0, 1.0)))
            .collect();
        ActionChunk::new(rows)
    }
}

impl<T: Scalar> RolloutPolicy for DiffusionPolicy<T> {
    fn instrumented(&self) -> bool {
        self.config.instrumented
    }

    fn begin_episode(&mut self, cfg: &SimConfig, seed: u64) {
        self.sample_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, seed, SAMPLE_TAG));
    }

    fn plan(&mut self, obs: &Observation, _state: &SimState, cfg: &SimConfig) -> Result<ActionChunk> {
        let mut rng = self.sample_rng.clone();
        let chunk = self.sample_chunk(obs, cfg, &mut rng);
        self.sample_rng = rng;
        chunk
    }
}

/// One optimisation step on `batch`; returns the loss before the update.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    policy: &mut DiffusionPolicy<T>,
    adam: &mut Adam<T>,
    batch: &TrainBatch,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut grads = Gradients::zeros_like(&policy.net);
    train_step_into(policy, adam, batch, lr, rng, &mut grads)
}

fn train_step_into<T: Scalar, R: Rng + ?Sized>(
    policy: &mut DiffusionPolicy<T>,
    adam: &mut Adam<T>,
    batch: &TrainBatch,
    lr: f64,
    rng: &mut R,
    grads: &mut Gradients<T>,
) -> Result<f64> {
    let noise = draw_noise(batch.features.len(), policy.schedule.steps, rng);
    grads.clear();
    let loss = policy.loss(batch, &noise, Some(grads))?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss}")));
    }
    adam.step(&mut policy.net, grads, T::lit(lr))?;
    Ok(loss)
}

/// Optimiser state, data stream and step counter of a training run.
#[derive(Debug, Clone)]
pub struct Trainer<T = f32> {
    pub policy: DiffusionPolicy<T>,
    pub adam: Adam<T>,
    pub train: TrainConfig,
    pub rng: ChaCha20Rng,
    pub step: u64,
    grads: Gradients<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(policy: DiffusionPolicy<T>, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let adam = Adam::new(&policy.net, T::lit(train.beta1), T::lit(train.beta2), T::lit(train.eps))?;
        let rng = ChaCha20Rng::seed_from_u64(train.seed);
        Self::resume(policy, adam, train, rng, 0)
    }

    /// Rebuilds a run from saved state.
    pub fn resume(policy: DiffusionPolicy<T>, adam: Adam<T>, train: TrainConfig, rng: ChaCha20Rng, step: u64) -> Result<Self> {
        train.validate()?;
        if adam.m.len() != 2 * policy.net.layers.len() {
            return Err(Error::shape("optimizer state does not match the network"));
        }
        Ok(Self {
            grads: Gradients::zeros_like(&policy.net),
            policy,
            adam,
            train,
            rng,
            step,
        })
    }

    /// Samples a batch (with replacement) and applies one update.
    pub fn step(&mut self, set: &TrainingSet, cfg: &SimConfig) -> Result<f64> {
        if set.instrumented != self.policy.config.instrumented {
            return Err(Error::Modality {
                policy: self.policy.config.instrumented,
                observation: set.instrumented,
            });
        }
        let indices: Vec<usize> = (0..self.train.batch_size)
            .map(|_| self.rng.random_range(0..set.len()))
            .collect();
        let batch = set.batch(&indices, cfg)?;
        let lr = self.train.lr_at(self.step);
        let loss = train_step_into(&mut self.policy, &mut self.adam, &batch, lr, &mut self.rng, &mut self.grads)?;
        self.step += 1;
        Ok(loss)
    }

    /// Trains until `train.steps`, calling `on_step` after each update.
    pub fn run(
        &mut self,
        set: &TrainingSet,
        cfg: &SimConfig,
        mut on_step: impl FnMut(&Trainer<T>, f64) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.train.steps {
            let loss = self.step(set, cfg)?;
            on_step(self, loss)?;
        }
        Ok(())
    }
}
