//! Synthetic clip generation, the single-stage training loop, and the
//! five-stage curriculum that folds stages over filtered data.
//!
//! Every random choice is forked from the caller's seed by step index, so a
//! trace replays bit-for-bit and clip generation can run in any order.

use crate::audio::{extract_features, DemixedAudio};
use crate::backbone::{
    denoiser_forward_on_tape, embed_text, timestep_embedding, ConditioningBundle, DenoiserParams,
};
use crate::config::ModelConfig;
use crate::curation::SubsetLabel;
use crate::diffusion::{forward_noise, LatentVideo, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{mix64, DenseArray, Rng, Tape};
use crate::params::ParamSet;
use crate::vae::VaeStub;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Event layout of one synthetic clip: which intervals speak, which carry a
/// sound effect, and an optional global music style.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClipSpec {
    pub speech_intervals: Vec<usize>,
    pub effect_intervals: Vec<usize>,
    pub music_style: Option<usize>,
}

/// A fully materialized synthetic clip with its ground-truth event markers.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    /// `[F, H, W, C]` pixel video.
    pub frames: DenseArray,
    pub audio: DemixedAudio,
    pub description: String,
    pub speech_intervals: Vec<usize>,
    pub effect_intervals: Vec<usize>,
    pub music_style: Option<usize>,
    /// Frame index of each effect's brightness spike and click, aligned
    /// with `effect_intervals`.
    pub effect_frames: Vec<usize>,
}

/// Deterministic toy clip. The static background depends only on the seed,
/// so clips sharing a seed differ exactly where their specs differ: speech
/// intervals get a 220 Hz burst and an oscillating bright "mouth" patch,
/// effect intervals a mid-interval click plus a one-frame brightness spike,
/// and a music style adds a full-length tone and a constant frame tint.
pub fn make_synthetic_clip(cfg: &ModelConfig, seed: u64, spec: &ClipSpec) -> Result<SyntheticClip> {
    let m = cfg.intervals;
    for &i in spec.speech_intervals.iter().chain(&spec.effect_intervals) {
        if i >= m {
            return Err(Error::invalid(
                "make_synthetic_clip",
                format!("interval {i} out of range for {m} intervals"),
            ));
        }
    }
    if cfg.sample_rate as usize % cfg.fps != 0 {
        return Err(Error::invalid(
            "make_synthetic_clip",
            format!("sample rate {} not divisible by fps {}", cfg.sample_rate, cfg.fps),
        ));
    }
    let f = cfg.frames();
    let (h, w, c) = (cfg.frame_height, cfg.frame_width, cfg.frame_channels);
    let spf = cfg.sample_rate as usize / cfg.fps;
    let samples = f * spf;
    let sr = cfg.sample_rate as f64;

    // Static per-pixel background in a narrow band, plus the style tint.
    let mut base_rng = Rng::new(mix64(seed ^ mix64(1)));
    let tint = spec.music_style.map_or(0.0, |s| 0.04 * (s as f64 + 1.0));
    let base: Vec<f64> =
        (0..h * w * c).map(|_| 0.25 + 0.2 * base_rng.next_f64() + tint).collect();
    let mut frames = Vec::with_capacity(f * base.len());
    for _ in 0..f {
        frames.extend_from_slice(&base);
    }
    let frame_stride = h * w * c;

    let mut speech = vec![0.0; samples];
    let mut effects = vec![0.0; samples];
    let mut music = vec![0.0; samples];

    for &iv in &spec.speech_intervals {
        let f0 = iv * cfg.patch_t;
        for ft in f0..f0 + cfg.patch_t {
            for n in ft * spf..(ft + 1) * spf {
                speech[n] = 0.3 * (2.0 * std::f64::consts::PI * 220.0 * n as f64 / sr).sin();
            }
            // The "mouth": a 2x2 patch near the frame center whose row
            // hops with frame parity, giving visible per-frame motion.
            let cy = h / 2 + (ft % 2);
            let cx = w / 2;
            for dy in 0..2usize.min(h) {
                for dx in 0..2usize.min(w) {
                    let (y, x) = ((cy + dy) % h, (cx + dx) % w);
                    for ch in 0..c {
                        frames[ft * frame_stride + (y * w + x) * c + ch] = 0.9;
                    }
                }
            }
        }
    }

    let mut effect_frames = Vec::with_capacity(spec.effect_intervals.len());
    for &iv in &spec.effect_intervals {
        let spike_frame = iv * cfg.patch_t + cfg.patch_t / 2;
        effect_frames.push(spike_frame);
        for v in &mut frames[spike_frame * frame_stride..(spike_frame + 1) * frame_stride] {
            *v += 0.5;
        }
        let click_at = spike_frame * spf + spf / 2;
        for (n, sample) in effects.iter_mut().enumerate().skip(click_at).take(12) {
            let fade = 1.0 - (n - click_at) as f64 / 12.0;
            *sample = if n % 2 == 0 { 0.8 } else { -0.8 } * fade;
        }
    }

    if let Some(style) = spec.music_style {
        let freq = 55.0 * (style as f64 + 1.0);
        for (n, sample) in music.iter_mut().enumerate() {
            *sample = 0.15 * (2.0 * std::f64::consts::PI * freq * n as f64 / sr).sin();
        }
    }

    let description = match spec.music_style {
        Some(style) => format!("a synthetic scene with music style {style}"),
        None => "a synthetic scene".to_string(),
    };

    Ok(SyntheticClip {
        frames: DenseArray::new(vec![f, h, w, c], frames)?,
        audio: DemixedAudio::new(speech, effects, music, cfg.sample_rate)?,
        description,
        speech_intervals: spec.speech_intervals.clone(),
        effect_intervals: spec.effect_intervals.clone(),
        music_style: spec.music_style,
        effect_frames,
    })
}

/// A clip reduced to exactly what one training step consumes: the clean
/// latents and the timestep-independent conditioning pieces.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub z0: LatentVideo,
    pub text: DenseArray,
    /// Per-track features, `[M·k, d_a]`.
    pub speech: DenseArray,
    pub effects: DenseArray,
    pub music: DenseArray,
}

fn track_features(cfg: &ModelConfig, track: &[f64]) -> Result<DenseArray> {
    let feats = extract_features(track, cfg.sample_rate, cfg.intervals, cfg.k, cfg.d_a)?;
    feats.values().reshaped(&[cfg.intervals * cfg.k, cfg.d_a])
}

/// Encodes frames and extracts every conditioning feature once per clip.
pub fn prepare_example(cfg: &ModelConfig, clip: &SyntheticClip) -> Result<TrainingExample> {
    let vae = VaeStub::new(cfg.patch_t, cfg.patch_s)?;
    Ok(TrainingExample {
        z0: vae.encode(&clip.frames)?,
        text: embed_text(&clip.description, cfg.text_seed, cfg.d_model),
        speech: track_features(cfg, &clip.audio.speech)?,
        effects: track_features(cfg, &clip.audio.effects)?,
        music: track_features(cfg, &clip.audio.music)?,
    })
}

impl TrainingExample {
    /// The conditioning bundle for one timestep.
    pub fn conditioning(&self, cfg: &ModelConfig, t: usize) -> ConditioningBundle {
        ConditioningBundle {
            text_tokens: self.text.clone(),
            speech: self.speech.clone(),
            effects: self.effects.clone(),
            music: self.music.clone(),
            t_embed: timestep_embedding(t, cfg.d_t),
        }
    }
}

/// Desk optimizers. Adam keeps per-parameter first and second moments with
/// bias correction; SGD is the default because its golden traces are the
/// simplest to reason about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd
    }
}

struct Optimizer {
    kind: OptimizerKind,
    moments: Vec<Option<(DenseArray, DenseArray)>>,
    step: usize,
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: usize) -> Self {
        Optimizer { kind, moments: (0..params).map(|_| None).collect(), step: 0 }
    }

    fn apply(&mut self, ps: &mut ParamSet, idx: usize, grad: &DenseArray, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                let value = ps.value_mut(idx);
                for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
                    *v -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let slot = &mut self.moments[idx];
                if slot.is_none() {
                    let shape = grad.shape();
                    *slot = Some((DenseArray::zeros(shape), DenseArray::zeros(shape)));
                }
                let (m, v) = slot.as_mut().expect("just filled");
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let value = ps.value_mut(idx);
                for (((p, g), m), v) in value
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// One curriculum stage: which subset it trains on and for how long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: SubsetLabel,
    pub steps: usize,
    pub learning_rate: f64,
}

impl StageConfig {
    /// The stage's data filter: a clip is eligible iff it carries the
    /// stage's subset label.
    pub fn accepts(&self, subsets: &BTreeSet<SubsetLabel>) -> bool {
        subsets.contains(&self.name)
    }
}

/// Warnings for a stage list that departs from the canonical curriculum
/// order; out-of-order schedules run anyway.
pub fn schedule_warnings(stages: &[StageConfig]) -> Vec<String> {
    let mut warnings = Vec::new();
    for pair in stages.windows(2) {
        if pair[0].name.rank() > pair[1].name.rank() {
            warnings.push(format!(
                "stage {} listed after {}, out of curriculum order",
                pair[1].name, pair[0].name
            ));
        }
    }
    warnings
}

/// Loads a JSON stage list and reports ordering warnings alongside it.
pub fn load_schedule(path: &Path) -> Result<(Vec<StageConfig>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stages: Vec<StageConfig> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    for stage in &stages {
        if stage.learning_rate <= 0.0 || !stage.learning_rate.is_finite() {
            return Err(Error::format(
                path,
                format!("stage {} has non-positive learning rate", stage.name),
            ));
        }
    }
    let warnings = schedule_warnings(&stages);
    Ok((stages, warnings))
}

/// The clips a stage may draw from. `replay` holds clips eligible only for
/// earlier stages; each step revisits one of those with probability
/// `replay_ratio`.
pub struct StagePool<'a> {
    pub primary: Vec<&'a TrainingExample>,
    pub replay: Vec<&'a TrainingExample>,
    pub replay_ratio: f64,
}

impl<'a> StagePool<'a> {
    pub fn simple(examples: &'a [TrainingExample]) -> Self {
        StagePool { primary: examples.iter().collect(), replay: Vec::new(), replay_ratio: 0.0 }
    }
}

/// Training options shared by every stage of a run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub freeze_mask: Vec<String>,
    pub optimizer: OptimizerKind,
}

/// One training stage: per step, draw a clip, a timestep, and a noise
/// sample from a fork of `seed`, take one gradient step on the unfrozen
/// parameters, and record the loss. Returns the full loss trace.
pub fn train_stage(
    ps: &mut ParamSet,
    model: &DenoiserParams,
    cfg: &ModelConfig,
    schedule: &NoiseSchedule,
    stage: &StageConfig,
    pool: &StagePool,
    seed: u64,
    opts: &TrainOptions,
) -> Result<Vec<f64>> {
    if stage.steps > 0 && pool.primary.is_empty() {
        return Err(Error::invalid(
            "train_stage",
            format!("stage {} has no eligible clips", stage.name),
        ));
    }
    let mut optimizer = Optimizer::new(opts.optimizer, ps.len());
    let mut trace = Vec::with_capacity(stage.steps);
    let latent_shape =
        [cfg.intervals, cfg.latent_tokens, cfg.latent_channels()];

    for step in 0..stage.steps {
        let mut rng = Rng::new(mix64(seed ^ mix64(step as u64)));
        let from_replay = {
            let u = rng.next_f64();
            u < pool.replay_ratio && !pool.replay.is_empty()
        };
        let source = if from_replay { &pool.replay } else { &pool.primary };
        let example = source[rng.next_below(source.len() as u64) as usize];
        let t = rng.next_below(schedule.steps() as u64) as usize;
        let eps = rng.normal_array(&latent_shape);

        let z_t = forward_noise(&example.z0, t, schedule, &eps)?;
        let cond = example.conditioning(cfg, t);

        let mut tape = Tape::new();
        let p = ps.lift(&mut tape, &opts.freeze_mask);
        let (pred, _) = denoiser_forward_on_tape(&mut tape, &p, model, cfg, &z_t, &cond)?;
        let target = tape.constant(eps.reshaped(&[
            cfg.intervals * cfg.latent_tokens,
            cfg.latent_channels(),
        ])?);
        let loss = tape.mse(pred, target)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::invalid(
                "train_stage",
                format!("non-finite loss {loss_value} at step {step} of stage {}", stage.name),
            ));
        }
        trace.push(loss_value);

        let grads = tape.backward(loss)?;
        optimizer.step += 1;
        for (idx, &pid) in p.iter().enumerate() {
            if let Some(grad) = grads.get(pid) {
                let grad = grad.clone();
                optimizer.apply(ps, idx, &grad, stage.learning_rate);
            }
        }
    }
    Ok(trace)
}

/// A curated clip ready for stage filtering: its subset labels plus the
/// prepared example.
pub struct DataItem {
    pub subsets: BTreeSet<SubsetLabel>,
    pub example: TrainingExample,
}

pub struct ScheduleOutcome {
    pub traces: Vec<(SubsetLabel, Vec<f64>)>,
    pub warnings: Vec<String>,
}

/// Folds [`train_stage`] over the stage list. Stage `i` trains on the items
/// carrying its label (seeded by `fork(seed, i)`), optionally revisiting
/// earlier stages' items at `replay_ratio`, and checkpoints after each
/// stage when a directory is given.
#[allow(clippy::too_many_arguments)]
pub fn run_schedule(
    ps: &mut ParamSet,
    model: &DenoiserParams,
    cfg: &ModelConfig,
    schedule: &NoiseSchedule,
    stages: &[StageConfig],
    data: &[DataItem],
    seed: u64,
    opts: &TrainOptions,
    replay_ratio: f64,
    checkpoint_dir: Option<&Path>,
) -> Result<ScheduleOutcome> {
    let warnings = schedule_warnings(stages);
    let mut traces = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        let primary: Vec<&TrainingExample> = data
            .iter()
            .filter(|item| stage.accepts(&item.subsets))
            .map(|item| &item.example)
            .collect();
        let replay: Vec<&TrainingExample> = data
            .iter()
            .filter(|item| {
                !stage.accepts(&item.subsets)
                    && stages[..i].iter().any(|s| s.accepts(&item.subsets))
            })
            .map(|item| &item.example)
            .collect();
        let pool = StagePool { primary, replay, replay_ratio };
        let trace = train_stage(
            ps,
            model,
            cfg,
            schedule,
            stage,
            &pool,
            mix64(seed ^ mix64(i as u64)),
            opts,
        )?;
        traces.push((stage.name, trace));
        if let Some(dir) = checkpoint_dir {
            ps.save(&dir.join(format!("stage_{i}_{}", stage.name)))?;
        }
    }
    Ok(ScheduleOutcome { traces, warnings })
}

/// Built-in six-clip dataset for the command-line demo: every curriculum
/// stage has at least one eligible clip, tagged with the subsets a
/// curation pass would assign.
pub fn demo_dataset(cfg: &ModelConfig, seed: u64) -> Result<Vec<DataItem>> {
    use SubsetLabel::*;
    let mid = cfg.intervals / 2;
    let last = cfg.intervals - 1;
    let entries: Vec<(ClipSpec, Vec<SubsetLabel>)> = vec![
        (ClipSpec { speech_intervals: vec![0], ..Default::default() }, vec![BasicFace]),
        (
            ClipSpec {
                speech_intervals: vec![0],
                effect_intervals: vec![mid],
                ..Default::default()
            },
            vec![SingleCharacter, SoundEvent],
        ),
        (
            ClipSpec { speech_intervals: vec![0, last], ..Default::default() },
            vec![MultipleCharacters],
        ),
        (ClipSpec { effect_intervals: vec![last], ..Default::default() }, vec![SoundEvent]),
        (ClipSpec { music_style: Some(0), ..Default::default() }, vec![VisualMood]),
        (
            ClipSpec { effect_intervals: vec![0], music_style: Some(1), ..Default::default() },
            vec![VisualMood, SoundEvent],
        ),
    ];
    entries
        .into_iter()
        .enumerate()
        .map(|(i, (spec, labels))| {
            let clip = make_synthetic_clip(cfg, mix64(seed ^ mix64(i as u64)), &spec)?;
            Ok(DataItem {
                subsets: labels.into_iter().collect(),
                example: prepare_example(cfg, &clip)?,
            })
        })
        .collect()
}

/// Five-stage curriculum in canonical order with uniform step counts.
pub fn default_schedule(steps_per_stage: usize, learning_rate: f64) -> Vec<StageConfig> {
    SubsetLabel::ALL
        .iter()
        .map(|&name| StageConfig { name, steps: steps_per_stage, learning_rate })
        .collect()
}

/// Loss traces as `step,loss` CSV with one global step counter across
/// stages.
pub fn write_loss_csv(path: &Path, traces: &[(SubsetLabel, Vec<f64>)]) -> Result<()> {
    let mut text = String::from("step,loss\n");
    let mut step = 0usize;
    for (_, trace) in traces {
        for loss in trace {
            text.push_str(&format!("{step},{loss}\n"));
            step += 1;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
