//! Desk-scale, fully deterministic building blocks for audio-conditioned
//! video generation: a hand-rolled reverse-mode autodiff core, a DDPM noise
//! loop over patch-packed video latents, multi-stream audio conditioning
//! injected into a small transformer denoiser, dataset curation rules, and
//! audio-video alignment metrics. Everything runs on synthetic data in
//! seconds and reproduces bit-for-bit under a fixed seed.

pub mod audio;
pub mod backbone;
pub mod config;
pub mod controlnet;
pub mod curation;
pub mod diffusion;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod numerics;
pub mod params;
pub mod training;
pub mod vae;

pub use error::{Error, Result};
pub use numerics::DenseArray;
