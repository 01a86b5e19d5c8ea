//! Desk-scale machinery for turning one monocular video into multi-view
//! training data and multi-view consistent completions.
//!
//! The crate covers four layers:
//!
//! * [`geometry`] — pinhole camera model, trajectory synthesis and z-buffered
//!   point splatting with visibility masks.
//! * [`warp`] / [`latent_mask`] — warped-video training-set construction and
//!   spatio-temporal visibility-mask downsampling.
//! * [`diffusion`] — noise schedules, masked diffusion losses, low-rank
//!   adaptation and a small conditional denoiser with its training loop.
//! * [`guidance`] / [`scoring`] — best-of-S stochastic control guidance for
//!   sequential multi-view inpainting, plus geometry-oracle and epipolar
//!   consistency metrics.
//!
//! Everything is deterministic under a single `u64` seed; see [`rng`] for the
//! keyed stream contract.

pub mod codec;
pub mod diffusion;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod guidance;
pub mod latent_mask;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
