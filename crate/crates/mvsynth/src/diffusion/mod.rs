//! Noise schedules, masked diffusion losses, low-rank adaptation, a small
//! conditional denoiser and its training loop, plus the plain DDPM and
//! flow-SDE samplers the guidance layer builds on.

mod denoiser;
mod loss;
mod lora;
mod sampler;
mod schedule;
mod train;

pub use denoiser::*;
pub use loss::*;
pub use lora::*;
pub use sampler::*;
pub use schedule::*;
pub use train::*;
