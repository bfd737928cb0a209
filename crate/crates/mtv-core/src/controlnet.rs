//! Multi-stream temporal conditioning: an interval stream that lets speech
//! and effects features steer individual latent intervals, and a holistic
//! stream that distills the music track into one global style modulation.
//!
//! The interval stream runs per-track input linears, then interaction blocks
//! in which each track is refined independently (timestep-modulated
//! normalization, gated feed-forward) before the two tracks' tokens of each
//! interval meet in one joint self-attention. No token ever attends across
//! intervals, which is what makes conditioning interval-local. Conditioned
//! features enter the latent through per-interval cross-attention (latent
//! queries, audio keys/values); the music context enters as a per-channel
//! affine `h ⊙ (1 + γ) + β` shared by every token.
//!
//! With all residual-branch output projections and the γ/β projections at
//! zero (the default init), the whole stack is the identity on the latent,
//! so training starts from the unconditioned model it wraps.

use crate::error::{Error, Result};
use crate::layers::{AdaLn, Attention, AttentionDims, Ffn, Linear};
use crate::numerics::{DenseArray, Rng, Tape, ValueId};
use crate::params::ParamSet;

/// Dimensions of the conditioning stack. `intervals`, `latent_tokens`, and
/// `d_model` must agree with the latent this stack conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MstConfig {
    pub intervals: usize,
    pub latent_tokens: usize,
    pub d_model: usize,
    pub d_a: usize,
    pub tokens_per_interval: usize,
    pub d_h: usize,
    pub d_t: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub conv_width: usize,
    /// Replace the latent with the injected sum instead of adding to it.
    /// Discards the zero-init identity; kept for fidelity experiments.
    pub literal_injection: bool,
}

/// How fresh parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStyle {
    /// Residual-branch outputs, gates, and γ/β projections start at zero:
    /// the stack is exactly the identity on the latent.
    SafeStart,
    /// Everything random; used where every parameter must carry gradient.
    Randomized,
}

#[derive(Debug, Clone, Copy)]
pub struct TrackBlock {
    pub adaln: AdaLn,
    pub gate: usize,
    pub ffn: Ffn,
}

impl TrackBlock {
    fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: &MstConfig,
        init: InitStyle,
    ) -> Self {
        let adaln = AdaLn::random(ps, rng, &format!("{prefix}.adaln"), cfg.d_t, cfg.d_a);
        let gate = match init {
            InitStyle::SafeStart => ps.register(format!("{prefix}.gate"), DenseArray::zeros(&[cfg.d_a])),
            InitStyle::Randomized => {
                ps.register(format!("{prefix}.gate"), rng.uniform_array(&[cfg.d_a], 0.2, 1.0))
            }
        };
        let ffn = Ffn::random(ps, rng, &format!("{prefix}.ffn"), cfg.d_a, cfg.ffn_hidden);
        TrackBlock { adaln, gate, ffn }
    }

    /// `x ← x + gate ⊙ FFN(AdaLN(x, t))`, row-local.
    fn forward(
        &self,
        tape: &mut Tape,
        p: &[ValueId],
        x: ValueId,
        t_embed: ValueId,
    ) -> Result<ValueId> {
        let normed = self.adaln.forward(tape, p, x, t_embed)?;
        let f = self.ffn.forward(tape, p, normed)?;
        let gated = tape.mul_last(f, p[self.gate])?;
        tape.add(x, gated)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InteractionBlock {
    pub speech: TrackBlock,
    pub effects: TrackBlock,
    pub joint: Attention,
}

impl InteractionBlock {
    fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: &MstConfig,
        init: InitStyle,
    ) -> Self {
        let speech = TrackBlock::build(ps, rng, &format!("{prefix}.speech"), cfg, init);
        let effects = TrackBlock::build(ps, rng, &format!("{prefix}.effects"), cfg, init);
        let dims = AttentionDims {
            d_query_in: cfg.d_a,
            d_kv_in: cfg.d_a,
            d_attn: cfg.d_a,
            d_out: cfg.d_a,
            heads: cfg.heads,
        };
        let joint = Attention::random(
            ps,
            rng,
            &format!("{prefix}.joint"),
            &dims,
            init == InitStyle::SafeStart,
        );
        InteractionBlock { speech, effects, joint }
    }
}

#[derive(Debug, Clone)]
pub struct IntervalStreamParams {
    pub speech_in: (Linear, Linear),
    pub effects_in: (Linear, Linear),
    pub blocks: Vec<InteractionBlock>,
}

impl IntervalStreamParams {
    pub fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: &MstConfig,
        init: InitStyle,
    ) -> Self {
        let speech_in = (
            Linear::random(ps, rng, &format!("{prefix}.speech_in.l1"), cfg.d_a, cfg.d_a),
            Linear::random(ps, rng, &format!("{prefix}.speech_in.l2"), cfg.d_a, cfg.d_a),
        );
        let effects_in = (
            Linear::random(ps, rng, &format!("{prefix}.effects_in.l1"), cfg.d_a, cfg.d_a),
            Linear::random(ps, rng, &format!("{prefix}.effects_in.l2"), cfg.d_a, cfg.d_a),
        );
        let blocks = (0..cfg.blocks)
            .map(|i| InteractionBlock::build(ps, rng, &format!("{prefix}.b{i}"), cfg, init))
            .collect();
        IntervalStreamParams { speech_in, effects_in, blocks }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HolisticStreamParams {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
    pub conv_w: usize,
    pub conv_b: usize,
    pub gamma: Linear,
    pub beta: Linear,
}

impl HolisticStreamParams {
    pub fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: &MstConfig,
        init: InitStyle,
    ) -> Self {
        let conv_kernel = {
            let k = rng.normal_array(&[cfg.conv_width, cfg.d_h, cfg.d_h]);
            let scale = 1.0 / ((cfg.conv_width * cfg.d_h) as f64).sqrt();
            let data: Vec<f64> = k.data().iter().map(|&v| v * scale).collect();
            DenseArray::new(vec![cfg.conv_width, cfg.d_h, cfg.d_h], data).expect("same shape")
        };
        HolisticStreamParams {
            l1: Linear::random(ps, rng, &format!("{prefix}.l1"), cfg.d_a, cfg.d_h),
            l2: Linear::random(ps, rng, &format!("{prefix}.l2"), cfg.d_h, cfg.d_h),
            l3: Linear::random(ps, rng, &format!("{prefix}.l3"), cfg.d_h, cfg.d_h),
            conv_w: ps.register(format!("{prefix}.conv.w"), conv_kernel),
            conv_b: ps.register(format!("{prefix}.conv.b"), DenseArray::zeros(&[cfg.d_h])),
            gamma: match init {
                InitStyle::SafeStart => Linear::zeros(ps, &format!("{prefix}.gamma"), cfg.d_h, cfg.d_model),
                InitStyle::Randomized => {
                    Linear::random(ps, rng, &format!("{prefix}.gamma"), cfg.d_h, cfg.d_model)
                }
            },
            beta: match init {
                InitStyle::SafeStart => Linear::zeros(ps, &format!("{prefix}.beta"), cfg.d_h, cfg.d_model),
                InitStyle::Randomized => {
                    Linear::random(ps, rng, &format!("{prefix}.beta"), cfg.d_h, cfg.d_model)
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InjectionParams {
    pub speech: Attention,
    pub effects: Attention,
}

impl InjectionParams {
    pub fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: &MstConfig,
        init: InitStyle,
    ) -> Self {
        let dims = AttentionDims {
            d_query_in: cfg.d_model,
            d_kv_in: cfg.d_a,
            d_attn: cfg.d_model,
            d_out: cfg.d_model,
            heads: 1,
        };
        let zero_out = init == InitStyle::SafeStart;
        InjectionParams {
            speech: Attention::random(ps, rng, &format!("{prefix}.speech"), &dims, zero_out),
            effects: Attention::random(ps, rng, &format!("{prefix}.effects"), &dims, zero_out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MstParams {
    pub interval: IntervalStreamParams,
    pub holistic: HolisticStreamParams,
    pub inject: InjectionParams,
}

impl MstParams {
    pub fn build(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: &MstConfig,
        init: InitStyle,
    ) -> Self {
        MstParams {
            interval: IntervalStreamParams::build(ps, rng, prefix, cfg, init),
            holistic: HolisticStreamParams::build(ps, rng, &format!("{prefix}.holistic"), cfg, init),
            inject: InjectionParams::build(ps, rng, &format!("{prefix}.inject"), cfg, init),
        }
    }
}

fn check_track_rows(op: &'static str, tape: &Tape, id: ValueId, rows: usize) -> Result<()> {
    let (r, _) = tape.value(id).dims2(op)?;
    if r != rows {
        return Err(Error::invalid(
            op,
            format!("expected {rows} feature rows, got {r} (interval count mismatch)"),
        ));
    }
    Ok(())
}

/// Applies one track's two input linears with a GELU between.
pub fn track_input_stack(
    tape: &mut Tape,
    p: &[ValueId],
    stack: &(Linear, Linear),
    x: ValueId,
) -> Result<ValueId> {
    let h = stack.0.forward(tape, p, x)?;
    let h = tape.gelu(h);
    stack.1.forward(tape, p, h)
}

/// One interaction block over both tracks, `[M·k, d_a]` each: per-track gated
/// feed-forward first, then for every interval independently the `2k` tokens
/// of `[speech_i ‖ effects_i]` pass through the shared joint self-attention
/// with a residual. Tokens never attend across intervals.
pub fn interval_interaction_block(
    tape: &mut Tape,
    p: &[ValueId],
    block: &InteractionBlock,
    f_speech: ValueId,
    f_effects: ValueId,
    t_embed: ValueId,
    intervals: usize,
    tokens_per_interval: usize,
) -> Result<(ValueId, ValueId)> {
    let op = "interval_interaction_block";
    let rows = intervals * tokens_per_interval;
    check_track_rows(op, tape, f_speech, rows)?;
    check_track_rows(op, tape, f_effects, rows)?;

    let s = block.speech.forward(tape, p, f_speech, t_embed)?;
    let e = block.effects.forward(tape, p, f_effects, t_embed)?;

    let k = tokens_per_interval;
    let mut s_parts = Vec::with_capacity(intervals);
    let mut e_parts = Vec::with_capacity(intervals);
    for i in 0..intervals {
        let si = tape.slice_rows(s, i * k, k)?;
        let ei = tape.slice_rows(e, i * k, k)?;
        let joint = tape.concat_rows(&[si, ei])?;
        let attended = block.joint.self_forward(tape, p, joint)?;
        let updated = tape.add(joint, attended)?;
        s_parts.push(tape.slice_rows(updated, 0, k)?);
        e_parts.push(tape.slice_rows(updated, k, k)?);
    }
    Ok((tape.concat_rows(&s_parts)?, tape.concat_rows(&e_parts)?))
}

/// Injects conditioned track features into the latent, one interval at a
/// time: the interval's `latent_tokens` rows query each track's `k` feature
/// tokens through cross-attention. Residual mode adds both attention outputs
/// to the latent; literal mode replaces it with their sum.
#[allow(clippy::too_many_arguments)]
pub fn interval_feature_injection(
    tape: &mut Tape,
    p: &[ValueId],
    inject: &InjectionParams,
    h: ValueId,
    f_speech: ValueId,
    f_effects: ValueId,
    cfg: &MstConfig,
) -> Result<ValueId> {
    let op = "interval_feature_injection";
    let m = cfg.intervals;
    check_track_rows(op, tape, h, m * cfg.latent_tokens)?;
    check_track_rows(op, tape, f_speech, m * cfg.tokens_per_interval)?;
    check_track_rows(op, tape, f_effects, m * cfg.tokens_per_interval)?;

    let (s_tok, k) = (cfg.latent_tokens, cfg.tokens_per_interval);
    let mut parts = Vec::with_capacity(m);
    for i in 0..m {
        let hi = tape.slice_rows(h, i * s_tok, s_tok)?;
        let fsi = tape.slice_rows(f_speech, i * k, k)?;
        let fei = tape.slice_rows(f_effects, i * k, k)?;
        let hs = inject.speech.forward(tape, p, hi, fsi)?;
        let he = inject.effects.forward(tape, p, hi, fei)?;
        let sum = tape.add(hs, he)?;
        parts.push(if cfg.literal_injection {
            sum
        } else {
            tape.add(hi, sum)?
        });
    }
    tape.concat_rows(&parts)
}

/// Distills the music track `[M·k, d_a]` into one context vector `[d_h]`:
/// three linears with GELUs, a same-padded width-`conv_width` convolution
/// over the token sequence, then a mean over all tokens.
pub fn holistic_context_encode(
    tape: &mut Tape,
    p: &[ValueId],
    holistic: &HolisticStreamParams,
    f_music: ValueId,
) -> Result<ValueId> {
    let x = holistic.l1.forward(tape, p, f_music)?;
    let x = tape.gelu(x);
    let x = holistic.l2.forward(tape, p, x)?;
    let x = tape.gelu(x);
    let x = holistic.l3.forward(tape, p, x)?;
    let x = tape.gelu(x);
    let x = tape.conv1d_same(x, p[holistic.conv_w])?;
    let x = tape.add_last(x, p[holistic.conv_b])?;
    tape.mean_rows(x)
}

/// The γ and β vectors (each `[d_model]`) derived from the context vector.
pub fn holistic_style_vectors(
    tape: &mut Tape,
    p: &[ValueId],
    holistic: &HolisticStreamParams,
    context: ValueId,
) -> Result<(ValueId, ValueId)> {
    let d_h = tape.value(context).numel();
    let row = tape.reshape(context, &[1, d_h])?;
    let gamma = holistic.gamma.forward(tape, p, row)?;
    let beta = holistic.beta.forward(tape, p, row)?;
    let d_model = tape.value(gamma).numel();
    Ok((
        tape.reshape(gamma, &[d_model])?,
        tape.reshape(beta, &[d_model])?,
    ))
}

/// `h ⊙ (1 + γ) + β` with one γ/β pair broadcast over every token.
pub fn holistic_style_injection(
    tape: &mut Tape,
    p: &[ValueId],
    holistic: &HolisticStreamParams,
    h: ValueId,
    context: ValueId,
) -> Result<ValueId> {
    let (gamma, beta) = holistic_style_vectors(tape, p, holistic, context)?;
    let g1 = tape.add_scalar(gamma, 1.0);
    let scaled = tape.mul_last(h, g1)?;
    tape.add_last(scaled, beta)
}

/// Runs the interval stream end to end: per-track input linears, then every
/// interaction block, returning the conditioned `(speech, effects)` features
/// ready for injection.
pub fn audio_stream_forward(
    tape: &mut Tape,
    p: &[ValueId],
    stream: &IntervalStreamParams,
    f_speech: ValueId,
    f_effects: ValueId,
    t_embed: ValueId,
    intervals: usize,
    tokens_per_interval: usize,
) -> Result<(ValueId, ValueId)> {
    let mut fs = track_input_stack(tape, p, &stream.speech_in, f_speech)?;
    let mut fe = track_input_stack(tape, p, &stream.effects_in, f_effects)?;
    for block in &stream.blocks {
        let (ns, ne) = interval_interaction_block(
            tape,
            p,
            block,
            fs,
            fe,
            t_embed,
            intervals,
            tokens_per_interval,
        )?;
        fs = ns;
        fe = ne;
    }
    Ok((fs, fe))
}

/// The full conditioning stack over a latent `h: [M·latent_tokens, d_model]`
/// and raw track features (each `[M·k, d_a]`): input linears, `blocks`
/// interaction blocks, per-interval injection, then the music-derived style
/// modulation.
#[allow(clippy::too_many_arguments)]
pub fn mst_forward(
    tape: &mut Tape,
    p: &[ValueId],
    mst: &MstParams,
    cfg: &MstConfig,
    h: ValueId,
    f_speech: ValueId,
    f_effects: ValueId,
    f_music: ValueId,
    t_embed: ValueId,
) -> Result<ValueId> {
    let (fs, fe) = audio_stream_forward(
        tape,
        p,
        &mst.interval,
        f_speech,
        f_effects,
        t_embed,
        cfg.intervals,
        cfg.tokens_per_interval,
    )?;
    let h1 = interval_feature_injection(tape, p, &mst.inject, h, fs, fe, cfg)?;
    let context = holistic_context_encode(tape, p, &mst.holistic, f_music)?;
    holistic_style_injection(tape, p, &mst.holistic, h1, context)
}
