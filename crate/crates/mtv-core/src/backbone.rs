//! The denoising transformer: text and video tokens run as one sequence
//! through joint full attention, while segment-specific timestep modulation
//! keeps the two segments specialized and per-block audio injections steer
//! the video segment.
//!
//! Block layout: expert-modulated normalization per segment, joint
//! self-attention over `[text ‖ video]` with gated residuals, per-interval
//! audio cross-attention plus the global music modulation on the video
//! segment only, then a shared feed-forward with residuals on both segments.
//! Conditioned audio features and the music γ/β pair are computed once per
//! forward pass and reused by every block; each block owns its injection
//! projections.

use crate::config::ModelConfig;
use crate::controlnet::{
    audio_stream_forward, holistic_context_encode, holistic_style_vectors,
    interval_feature_injection, HolisticStreamParams, InitStyle, InjectionParams,
    IntervalStreamParams,
};
use crate::diffusion::LatentVideo;
use crate::error::{Error, Result};
use crate::layers::{Attention, AttentionDims, Ffn, Linear, LN_EPS};
use crate::numerics::{mix64, DenseArray, Rng, Tape, ValueId};
use crate::params::ParamSet;

/// Everything the denoiser is conditioned on for one clip.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    /// `[L_y, d_model]`, at least one row (empty text becomes one pad token).
    pub text_tokens: DenseArray,
    /// Raw per-track features, each `[M·k, d_a]` row-major by interval.
    pub speech: DenseArray,
    pub effects: DenseArray,
    pub music: DenseArray,
    /// Raw sinusoidal timestep embedding `[1, d_t]`.
    pub t_embed: DenseArray,
}

/// Sinusoidal position code of `pos` at width `d`: even channels sine, odd
/// cosine, geometric frequency ladder from 1 down to 1/10000.
fn sinusoid(pos: f64, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let pair = (i / 2) as f64;
        let denom = 10000f64.powf(2.0 * pair / d as f64);
        let angle = pos / denom;
        out.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
    out
}

/// Timestep embedding `[1, d_t]` for step index `t`.
pub fn timestep_embedding(t: usize, d_t: usize) -> DenseArray {
    DenseArray::new(vec![1, d_t], sinusoid(t as f64, d_t)).expect("nonempty")
}

/// Fixed sinusoidal positions over the flattened (interval, spatial) token
/// index: `[M·S, d_model]`.
pub fn video_positions(intervals: usize, latent_tokens: usize, d_model: usize) -> DenseArray {
    let n = intervals * latent_tokens;
    let mut data = Vec::with_capacity(n * d_model);
    for pos in 0..n {
        data.extend(sinusoid(pos as f64, d_model));
    }
    DenseArray::new(vec![n, d_model], data).expect("nonempty")
}

/// 64-bit FNV-1a over the token's bytes; the hash keys that token's frozen
/// embedding row.
pub fn token_hash(token: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in token.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Whitespace-tokenized text through a frozen seeded embedding: each token's
/// row is drawn from a generator keyed by (table_seed, token hash), so equal
/// strings embed equally with no stored table. Empty text yields the single
/// pad token (the empty string's row).
pub fn embed_text(description: &str, table_seed: u64, d_model: usize) -> DenseArray {
    let mut tokens: Vec<&str> = description.split_whitespace().collect();
    if tokens.is_empty() {
        tokens.push("");
    }
    let scale = 1.0 / (d_model as f64).sqrt();
    let mut data = Vec::with_capacity(tokens.len() * d_model);
    for token in &tokens {
        let mut rng = Rng::new(mix64(table_seed ^ mix64(token_hash(token))));
        for _ in 0..d_model {
            data.push(rng.next_normal() * scale);
        }
    }
    DenseArray::new(vec![tokens.len(), d_model], data).expect("at least the pad token")
}

/// One segment's timestep modulation: scale, shift, and the residual gate,
/// each projected from the timestep feature.
#[derive(Debug, Clone, Copy)]
pub struct ExpertTriple {
    pub scale: Linear,
    pub shift: Linear,
    pub gate: Linear,
}

impl ExpertTriple {
    fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        d_t: usize,
        d_model: usize,
        randomized: bool,
    ) -> Self {
        if randomized {
            ExpertTriple {
                scale: Linear::random(ps, rng, &format!("{prefix}.scale"), d_t, d_model),
                shift: Linear::random(ps, rng, &format!("{prefix}.shift"), d_t, d_model),
                gate: Linear::random(ps, rng, &format!("{prefix}.gate"), d_t, d_model),
            }
        } else {
            // Zero projections: modulation starts as plain normalization and
            // the gated branch starts closed.
            ExpertTriple {
                scale: Linear::zeros(ps, &format!("{prefix}.scale"), d_t, d_model),
                shift: Linear::zeros(ps, &format!("{prefix}.shift"), d_t, d_model),
                gate: Linear::zeros(ps, &format!("{prefix}.gate"), d_t, d_model),
            }
        }
    }

    /// The three `[d_model]` vectors for this timestep feature.
    pub fn vectors(
        &self,
        tape: &mut Tape,
        p: &[ValueId],
        t_feat: ValueId,
    ) -> Result<(ValueId, ValueId, ValueId)> {
        let s = self.scale.forward(tape, p, t_feat)?;
        let d = tape.value(s).numel();
        let s = tape.reshape(s, &[d])?;
        let h = self.shift.forward(tape, p, t_feat)?;
        let h = tape.reshape(h, &[d])?;
        let g = self.gate.forward(tape, p, t_feat)?;
        let g = tape.reshape(g, &[d])?;
        Ok((s, h, g))
    }
}

/// Normalize and modulate: `LN(x) ⊙ (1 + scale) + shift` with unit-gain,
/// zero-bias normalization.
fn modulate(tape: &mut Tape, x: ValueId, scale: ValueId, shift: ValueId) -> Result<ValueId> {
    let width = tape.value(x).last_dim();
    let gain = tape.constant(DenseArray::full(&[width], 1.0));
    let bias = tape.constant(DenseArray::zeros(&[width]));
    let normed = tape.layer_norm(x, gain, bias, LN_EPS)?;
    let s1 = tape.add_scalar(scale, 1.0);
    let scaled = tape.mul_last(normed, s1)?;
    tape.add_last(scaled, shift)
}

/// Segment-wise timestep modulation: each segment normalized and modulated
/// with its own projections; neither output reads the other segment's tokens
/// or parameters.
pub fn expert_adaln(
    tape: &mut Tape,
    p: &[ValueId],
    text_mod: &ExpertTriple,
    video_mod: &ExpertTriple,
    text: ValueId,
    video: ValueId,
    t_feat: ValueId,
) -> Result<(ValueId, ValueId)> {
    let (ts, th, _) = text_mod.vectors(tape, p, t_feat)?;
    let (vs, vh, _) = video_mod.vectors(tape, p, t_feat)?;
    Ok((modulate(tape, text, ts, th)?, modulate(tape, video, vs, vh)?))
}

#[derive(Debug, Clone)]
pub struct DitBlockParams {
    pub text_mod: ExpertTriple,
    pub video_mod: ExpertTriple,
    pub attn: Attention,
    pub inject: InjectionParams,
    pub ffn: Ffn,
}

/// How fresh backbone parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneInit {
    /// Weight-bearing paths random, every conditioning branch gated closed
    /// (modulation projections, injection outputs, γ/β at zero). The model
    /// starts conditioning-free but not trivial.
    SafeStart,
    /// Additionally zeroes attention output projections and FFN second
    /// layers: the denoiser collapses to the input/output head composition.
    Identity,
    /// Everything random and nonzero, for gradient verification.
    Randomized,
}

#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub in_head: Linear,
    pub out_head: Linear,
    pub text_pos: usize,
    pub t_mlp: Ffn,
    pub stream: IntervalStreamParams,
    pub holistic: HolisticStreamParams,
    pub blocks: Vec<DitBlockParams>,
}

impl DenoiserParams {
    /// Registers every model tensor (conditioning stream under `mst.*`, the
    /// rest under `backbone.*`) and returns the index structure.
    pub fn build(ps: &mut ParamSet, rng: &mut Rng, cfg: &ModelConfig, init: BackboneInit) -> Self {
        let mst_cfg = cfg.mst_config();
        let mst_init = match init {
            BackboneInit::Randomized => InitStyle::Randomized,
            _ => InitStyle::SafeStart,
        };
        let randomized = init == BackboneInit::Randomized;
        let zero_heavy = init == BackboneInit::Identity;

        let stream = IntervalStreamParams::build(ps, rng, "mst", &mst_cfg, mst_init);
        let holistic = HolisticStreamParams::build(ps, rng, "mst.holistic", &mst_cfg, mst_init);

        let c_z = cfg.latent_channels();
        let in_head = Linear::random(ps, rng, "backbone.in_head", c_z, cfg.d_model);
        let out_head = if zero_heavy {
            Linear::zeros(ps, "backbone.out_head", cfg.d_model, c_z)
        } else {
            Linear::random(ps, rng, "backbone.out_head", cfg.d_model, c_z)
        };
        let text_pos = ps.register(
            "backbone.text_pos",
            {
                let t = rng.normal_array(&[cfg.max_text_tokens, cfg.d_model]);
                let scale = 1.0 / (cfg.d_model as f64).sqrt();
                let data: Vec<f64> = t.data().iter().map(|&v| v * scale).collect();
                DenseArray::new(vec![cfg.max_text_tokens, cfg.d_model], data).expect("same shape")
            },
        );
        let t_mlp = Ffn::random(ps, rng, "backbone.t_mlp", cfg.d_t, 2 * cfg.d_t);

        let blocks = (0..cfg.blocks)
            .map(|i| {
                let prefix = format!("backbone.b{i}");
                let text_mod = ExpertTriple::build(
                    ps,
                    rng,
                    &format!("{prefix}.text_mod"),
                    cfg.d_t,
                    cfg.d_model,
                    randomized,
                );
                let video_mod = ExpertTriple::build(
                    ps,
                    rng,
                    &format!("{prefix}.video_mod"),
                    cfg.d_t,
                    cfg.d_model,
                    randomized,
                );
                let attn = Attention::random(
                    ps,
                    rng,
                    &format!("{prefix}.attn"),
                    &AttentionDims {
                        d_query_in: cfg.d_model,
                        d_kv_in: cfg.d_model,
                        d_attn: cfg.d_model,
                        d_out: cfg.d_model,
                        heads: cfg.heads,
                    },
                    zero_heavy,
                );
                let inject =
                    InjectionParams::build(ps, rng, &format!("{prefix}.inject"), &mst_cfg, mst_init);
                let ffn = if zero_heavy {
                    Ffn::random_zero_out(
                        ps,
                        rng,
                        &format!("{prefix}.ffn"),
                        cfg.d_model,
                        cfg.ffn_expansion * cfg.d_model,
                    )
                } else {
                    Ffn::random(
                        ps,
                        rng,
                        &format!("{prefix}.ffn"),
                        cfg.d_model,
                        cfg.ffn_expansion * cfg.d_model,
                    )
                };
                DitBlockParams { text_mod, video_mod, attn, inject, ffn }
            })
            .collect();

        DenoiserParams {
            in_head,
            out_head,
            text_pos,
            t_mlp,
            stream,
            holistic,
            blocks,
        }
    }
}

/// Precomputed per-forward conditioning: the conditioned track features, the
/// music style pair, and the timestep feature, shared by every block.
struct SharedConditioning {
    f_speech: ValueId,
    f_effects: ValueId,
    gamma: ValueId,
    beta: ValueId,
    t_feat: ValueId,
}

/// One denoiser block over `(text, video)` token matrices. Returns the
/// updated pair, plus the joint attention probability nodes for inspection.
#[allow(clippy::too_many_arguments)]
fn dit_block_inner(
    tape: &mut Tape,
    p: &[ValueId],
    block: &DitBlockParams,
    cfg: &ModelConfig,
    text: ValueId,
    video: ValueId,
    shared: &SharedConditioning,
) -> Result<(ValueId, ValueId, Vec<ValueId>)> {
    let l_text = tape.value(text).dims2("dit_block")?.0;
    let n_video = tape.value(video).dims2("dit_block")?.0;

    // Attention stage: expert modulation, joint attention, gated residuals.
    let (ts, th, tg) = block.text_mod.vectors(tape, p, shared.t_feat)?;
    let (vs, vh, vg) = block.video_mod.vectors(tape, p, shared.t_feat)?;
    let text_n = modulate(tape, text, ts, th)?;
    let video_n = modulate(tape, video, vs, vh)?;
    let joint = tape.concat_rows(&[text_n, video_n])?;

    let q = block.attn.q.forward(tape, p, joint)?;
    let k = tape.matmul(joint, p[block.attn.k_w])?;
    let v = block.attn.v.forward(tape, p, joint)?;
    let (attended, probs) = tape.attention_with_probs(q, k, v, block.attn.heads)?;
    let attended = block.attn.o.forward(tape, p, attended)?;

    let att_text = tape.slice_rows(attended, 0, l_text)?;
    let att_video = tape.slice_rows(attended, l_text, n_video)?;
    let att_text = tape.mul_last(att_text, tg)?;
    let att_video = tape.mul_last(att_video, vg)?;
    let text1 = tape.add(text, att_text)?;
    let video1 = tape.add(video, att_video)?;

    // Audio enters the video segment only.
    let mst_cfg = cfg.mst_config();
    let video2 = interval_feature_injection(
        tape,
        p,
        &block.inject,
        video1,
        shared.f_speech,
        shared.f_effects,
        &mst_cfg,
    )?;
    let g1 = tape.add_scalar(shared.gamma, 1.0);
    let video2 = tape.mul_last(video2, g1)?;
    let video2 = tape.add_last(video2, shared.beta)?;

    // Shared feed-forward with residuals on both segments.
    let joint2 = tape.concat_rows(&[text1, video2])?;
    let width = tape.value(joint2).last_dim();
    let gain = tape.constant(DenseArray::full(&[width], 1.0));
    let bias = tape.constant(DenseArray::zeros(&[width]));
    let normed = tape.layer_norm(joint2, gain, bias, LN_EPS)?;
    let f = block.ffn.forward(tape, p, normed)?;
    let out = tape.add(joint2, f)?;

    Ok((
        tape.slice_rows(out, 0, l_text)?,
        tape.slice_rows(out, l_text, n_video)?,
        probs,
    ))
}

/// One denoiser block; see [`denoiser_forward`] for the full pass.
#[allow(clippy::too_many_arguments)]
pub fn dit_block(
    tape: &mut Tape,
    p: &[ValueId],
    block: &DitBlockParams,
    cfg: &ModelConfig,
    text: ValueId,
    video: ValueId,
    f_speech: ValueId,
    f_effects: ValueId,
    gamma: ValueId,
    beta: ValueId,
    t_feat: ValueId,
) -> Result<(ValueId, ValueId)> {
    let shared = SharedConditioning { f_speech, f_effects, gamma, beta, t_feat };
    let (t, v, _) = dit_block_inner(tape, p, block, cfg, text, video, &shared)?;
    Ok((t, v))
}

fn bundle_checks(cfg: &ModelConfig, z_t: &LatentVideo, cond: &ConditioningBundle) -> Result<()> {
    let op = "denoiser_forward";
    if z_t.intervals() != cfg.intervals
        || z_t.spatial() != cfg.latent_tokens
        || z_t.channels() != cfg.latent_channels()
    {
        return Err(Error::invalid(
            op,
            format!(
                "latent shape {:?} disagrees with config [{}, {}, {}]",
                z_t.tokens().shape(),
                cfg.intervals,
                cfg.latent_tokens,
                cfg.latent_channels()
            ),
        ));
    }
    let feat_rows = cfg.intervals * cfg.k;
    for (name, f) in [("speech", &cond.speech), ("effects", &cond.effects), ("music", &cond.music)] {
        if f.shape() != [feat_rows, cfg.d_a] {
            return Err(Error::invalid(
                op,
                format!(
                    "{name} features have shape {:?}, expected [{feat_rows}, {}]",
                    f.shape(),
                    cfg.d_a
                ),
            ));
        }
    }
    let (l_text, d) = cond.text_tokens.dims2(op)?;
    if d != cfg.d_model {
        return Err(Error::invalid(
            op,
            format!("text tokens are {d} wide, expected {}", cfg.d_model),
        ));
    }
    if l_text == 0 || l_text > cfg.max_text_tokens {
        return Err(Error::invalid(
            op,
            format!(
                "text length {l_text} outside 1..={} (empty text must arrive as one pad token)",
                cfg.max_text_tokens
            ),
        ));
    }
    if cond.t_embed.shape() != [1, cfg.d_t] {
        return Err(Error::invalid(
            op,
            format!("t_embed shape {:?}, expected [1, {}]", cond.t_embed.shape(), cfg.d_t),
        ));
    }
    Ok(())
}

/// Tape-level denoiser pass returning the predicted noise as a
/// `[M·S, c_z]` matrix node, plus every block's attention probability nodes.
pub fn denoiser_forward_on_tape(
    tape: &mut Tape,
    p: &[ValueId],
    params: &DenoiserParams,
    cfg: &ModelConfig,
    z_t: &LatentVideo,
    cond: &ConditioningBundle,
) -> Result<(ValueId, Vec<Vec<ValueId>>)> {
    bundle_checks(cfg, z_t, cond)?;

    let z_in = tape.constant(z_t.as_matrix());
    let mut video = params.in_head.forward(tape, p, z_in)?;
    let pos = tape.constant(video_positions(cfg.intervals, cfg.latent_tokens, cfg.d_model));
    video = tape.add(video, pos)?;

    let l_text = cond.text_tokens.shape()[0];
    let text_in = tape.constant(cond.text_tokens.clone());
    let pos_rows = tape.slice_rows(p[params.text_pos], 0, l_text)?;
    let mut text = tape.add(text_in, pos_rows)?;

    let t_raw = tape.constant(cond.t_embed.clone());
    let t_feat = params.t_mlp.forward(tape, p, t_raw)?;

    let speech = tape.constant(cond.speech.clone());
    let effects = tape.constant(cond.effects.clone());
    let music = tape.constant(cond.music.clone());
    let (f_speech, f_effects) = audio_stream_forward(
        tape,
        p,
        &params.stream,
        speech,
        effects,
        t_feat,
        cfg.intervals,
        cfg.k,
    )?;
    let context = holistic_context_encode(tape, p, &params.holistic, music)?;
    let (gamma, beta) = holistic_style_vectors(tape, p, &params.holistic, context)?;

    let shared = SharedConditioning { f_speech, f_effects, gamma, beta, t_feat };
    let mut all_probs = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (t, v, probs) = dit_block_inner(tape, p, block, cfg, text, video, &shared)?;
        text = t;
        video = v;
        all_probs.push(probs);
    }

    let out = params.out_head.forward(tape, p, video)?;
    Ok((out, all_probs))
}

/// Full noise prediction `ε(z_t, conditioning)`: input head plus positions,
/// every block, output head over the video segment; text tokens are dropped
/// at the end.
pub fn denoiser_forward(
    ps: &ParamSet,
    params: &DenoiserParams,
    cfg: &ModelConfig,
    z_t: &LatentVideo,
    cond: &ConditioningBundle,
) -> Result<LatentVideo> {
    let mut tape = Tape::new();
    let p = ps.lift_all(&mut tape);
    let (out, _) = denoiser_forward_on_tape(&mut tape, &p, params, cfg, z_t, cond)?;
    LatentVideo::from_matrix(tape.value(out), cfg.intervals, cfg.latent_tokens)
}
