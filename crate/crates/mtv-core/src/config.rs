//! Model configuration: one JSON document that fixes every dimension of the
//! denoiser, its conditioning streams, the video/latent geometry, and the
//! noise schedule. Checkpoints only load into a model built from the same
//! configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controlnet::MstConfig;
use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};

/// Frozen-by-default parameter groups: conditioning streams and attention
/// stay trainable, the backbone's feed-forward stacks, heads, and text
/// positions do not.
pub fn default_freeze_mask() -> Vec<String> {
    vec![
        "backbone.b*.ffn.*".to_string(),
        "backbone.in_head.*".to_string(),
        "backbone.out_head.*".to_string(),
        "backbone.text_pos".to_string(),
    ]
}

fn d1() -> usize { 1 }
fn d2() -> usize { 2 }
fn d3() -> usize { 3 }
fn d4() -> usize { 4 }
fn d8() -> usize { 8 }
fn d16() -> usize { 16 }
fn default_sample_rate() -> u32 { 1600 }
fn default_beta_start() -> f64 { 1e-4 }
fn default_beta_end() -> f64 { 0.02 }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Denoiser blocks.
    #[serde(rename = "B")]
    pub blocks: usize,
    pub d_model: usize,
    /// Heads of the joint text/video attention.
    pub heads: usize,
    /// Latent intervals per clip.
    #[serde(rename = "M")]
    pub intervals: usize,
    /// Latent tokens per interval.
    #[serde(rename = "S")]
    pub latent_tokens: usize,
    /// Audio feature width.
    pub d_a: usize,
    /// Audio feature tokens per interval.
    pub k: usize,
    /// Interval interaction blocks in the conditioning stream.
    #[serde(rename = "N")]
    pub mst_blocks: usize,
    /// Diffusion steps.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Wildcard patterns naming frozen parameters; an explicit empty list
    /// trains everything.
    #[serde(default = "default_freeze_mask")]
    pub freeze_mask: Vec<String>,

    /// Timestep embedding width.
    #[serde(default = "d16")]
    pub d_t: usize,
    /// Holistic context width.
    #[serde(default = "d16")]
    pub d_h: usize,
    /// Heads of the joint track self-attention.
    #[serde(default = "d2")]
    pub mst_heads: usize,
    /// Backbone FFN hidden width as a multiple of d_model.
    #[serde(default = "d4")]
    pub ffn_expansion: usize,
    /// Holistic conv kernel width.
    #[serde(default = "d3")]
    pub conv_width: usize,
    /// Replace-instead-of-add injection (drops the safe-start identity).
    #[serde(default)]
    pub literal_injection: bool,
    /// Learned text position table length; texts longer than this are
    /// rejected.
    #[serde(default = "d8")]
    pub max_text_tokens: usize,
    /// Seed of the frozen text embedding table.
    #[serde(default)]
    pub text_seed: u64,

    /// Frames packed into one latent interval.
    #[serde(default = "d4")]
    pub patch_t: usize,
    /// Pixels packed per latent token along each spatial axis.
    #[serde(default = "d4")]
    pub patch_s: usize,
    #[serde(default = "d8")]
    pub frame_height: usize,
    #[serde(default = "d8")]
    pub frame_width: usize,
    #[serde(default = "d1")]
    pub frame_channels: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    /// Video frames per second; with `sample_rate` this fixes samples per
    /// frame.
    #[serde(default = "d16")]
    pub fps: usize,

    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

impl ModelConfig {
    /// Small but fully wired defaults: every component active at sizes a
    /// desk machine trains in seconds.
    pub fn desk_default() -> Self {
        ModelConfig {
            blocks: 2,
            d_model: 16,
            heads: 2,
            intervals: 4,
            latent_tokens: 4,
            d_a: 8,
            k: 2,
            mst_blocks: 2,
            steps: 50,
            freeze_mask: default_freeze_mask(),
            d_t: 16,
            d_h: 16,
            mst_heads: 2,
            ffn_expansion: 4,
            conv_width: 3,
            literal_injection: false,
            max_text_tokens: 8,
            text_seed: 0,
            patch_t: 4,
            patch_s: 4,
            frame_height: 8,
            frame_width: 8,
            frame_channels: 1,
            sample_rate: 1600,
            fps: 16,
            beta_start: 1e-4,
            beta_end: 0.02,
            schedule: ScheduleKind::Linear,
        }
    }

    /// Desk config shrunk to two intervals: the shape the exhaustive
    /// gradient checker sweeps in its time budget.
    pub fn gradcheck_default() -> Self {
        let mut cfg = Self::desk_default();
        cfg.intervals = 2;
        cfg
    }

    /// Preset sized so the toy model can genuinely overfit a handful of
    /// synthetic clips: latent channels fit inside `d_model` (the noise
    /// prediction needs a full-rank path from input to output), and the
    /// short, coarse schedule keeps the amplification factor on the
    /// low-noise targets small enough to learn in a few thousand steps.
    pub fn overfit_demo() -> Self {
        let mut cfg = Self::desk_default();
        cfg.patch_s = 2;
        cfg.frame_height = 4;
        cfg.frame_width = 4;
        cfg.d_model = 32;
        cfg.d_h = 16;
        cfg.steps = 10;
        cfg.beta_start = 0.05;
        cfg.beta_end = 0.5;
        cfg
    }

    /// Latent channels produced by the space-to-depth packer.
    pub fn latent_channels(&self) -> usize {
        self.frame_channels * self.patch_t * self.patch_s * self.patch_s
    }

    /// Video frames per clip.
    pub fn frames(&self) -> usize {
        self.intervals * self.patch_t
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid("ModelConfig", msg));
        if self.blocks == 0 || self.mst_blocks == 0 || self.intervals == 0 || self.latent_tokens == 0 {
            return fail("B, N, M, and S must all be at least 1".into());
        }
        if self.steps == 0 {
            return fail("T must be at least 1".into());
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.d_a < 2 || self.mst_heads == 0 || self.d_a % self.mst_heads != 0 {
            return fail(format!(
                "d_a {} must be >= 2 and a multiple of mst_heads {}",
                self.d_a, self.mst_heads
            ));
        }
        if self.k == 0 || self.d_t == 0 || self.d_h == 0 || self.ffn_expansion == 0 {
            return fail("k, d_t, d_h, and ffn_expansion must be positive".into());
        }
        if self.conv_width == 0 || self.conv_width % 2 == 0 {
            return fail(format!("conv_width {} must be odd", self.conv_width));
        }
        if self.max_text_tokens == 0 {
            return fail("max_text_tokens must be at least 1".into());
        }
        if self.patch_t == 0 || self.patch_s == 0 {
            return fail("patch_t and patch_s must be positive".into());
        }
        if self.frame_height % self.patch_s != 0 || self.frame_width % self.patch_s != 0 {
            return fail(format!(
                "frame {}x{} not divisible by patch_s {}",
                self.frame_height, self.frame_width, self.patch_s
            ));
        }
        let spatial = (self.frame_height / self.patch_s) * (self.frame_width / self.patch_s);
        if spatial != self.latent_tokens {
            return fail(format!(
                "S {} disagrees with frame geometry ({} spatial patches)",
                self.latent_tokens, spatial
            ));
        }
        if self.sample_rate == 0 || self.fps == 0 {
            return fail("sample_rate and fps must be positive".into());
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return fail(format!(
                "need 0 < beta_start <= beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            ));
        }
        Ok(())
    }

    /// The conditioning-stream view of this configuration.
    pub fn mst_config(&self) -> MstConfig {
        MstConfig {
            intervals: self.intervals,
            latent_tokens: self.latent_tokens,
            d_model: self.d_model,
            d_a: self.d_a,
            tokens_per_interval: self.k,
            d_h: self.d_h,
            d_t: self.d_t,
            heads: self.mst_heads,
            blocks: self.mst_blocks,
            ffn_hidden: 2 * self.d_a,
            conv_width: self.conv_width,
            literal_injection: self.literal_injection,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }
}
