//! Diffusion policy over action chunks: network, optimizer, noise schedule,
//! training and sampling.

pub mod adam;
pub mod gradcheck;
mod kernels;
pub mod mlp;
pub mod policy;
pub mod schedule;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use mlp::{Activation, Cache, Dense, Gradients, Mlp};
pub use policy::{
    draw_noise, time_embedding, train_step, DiffusionPolicy, NoiseDraw, PolicyConfig, TrainBatch, TrainConfig,
    TrainSample, Trainer, TrainingSet, CHUNK_DIM,
};
pub use schedule::NoiseSchedule;
