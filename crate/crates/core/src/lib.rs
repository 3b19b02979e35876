//! Simulated instrumented hanger insertion with diffusion-policy learning.

pub mod bayes;
pub mod error;
pub mod expert;
pub mod geometry;
pub mod harness;
pub mod learner;
pub mod num;
pub mod persist;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use num::Scalar;
pub use types::*;

pub type Mlp64 = learner::Mlp<f64>;
pub type Mlp32 = learner::Mlp<f32>;
pub type Adam64 = learner::Adam<f64>;
pub type Adam32 = learner::Adam<f32>;
pub type Schedule64 = learner::NoiseSchedule<f64>;
pub type Policy32 = learner::DiffusionPolicy<f32>;
pub type Policy64 = learner::DiffusionPolicy<f64>;
