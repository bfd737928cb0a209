//! Command-line front end: gradient checking, toy training and sampling,
//! dataset curation, alignment metrics, and text-template rendering.
//!
//! Exit codes: 0 success, 1 bad input or I/O failure, 2 a requested check
//! ran and failed.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mtv_core::audio::{read_pcm, write_pcm};
use mtv_core::backbone::{
    denoiser_forward, denoiser_forward_on_tape, embed_text, timestep_embedding, BackboneInit,
    ConditioningBundle, DenoiserParams,
};
use mtv_core::config::ModelConfig;
use mtv_core::curation::{
    build_demo_manifest, curate_manifest_file, load_manifest, render_text_template,
    CurationConfig, SubsetLabel,
};
use mtv_core::diffusion::{make_schedule, sample, LatentVideo};
use mtv_core::metrics::{
    av_align, energy_peaks, motion_peaks, temp_c_default, AV_ALIGN_WINDOW, PEAK_REL_THRESHOLD,
};
use mtv_core::numerics::{grad_check, read_tensor, write_tensor, Rng};
use mtv_core::params::ParamSet;
use mtv_core::training::{
    default_schedule, demo_dataset, load_schedule, make_synthetic_clip, prepare_example,
    run_schedule, write_loss_csv, ClipSpec, OptimizerKind, TrainOptions,
};
use mtv_core::vae::VaeStub;

#[derive(Parser)]
#[command(name = "mtv", version, about = "Audio-synced toy video diffusion workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every analytic gradient of the denoiser against central
    /// differences.
    Gradcheck(GradcheckArgs),
    /// Train the toy model on the built-in synthetic dataset.
    Train(TrainArgs),
    /// Draw a video from a (optionally trained) model conditioned on a
    /// synthetic effects track.
    Sample(SampleArgs),
    /// Filter and annotate a clip manifest.
    Curate(CurateArgs),
    /// Score a video file against an audio track.
    Metrics(MetricsArgs),
    /// Render the text conditioning template for one manifest record.
    Template(TemplateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Default desk-scale shape.
    Desk,
    /// Two-interval shape the exhaustive gradient check runs at.
    Gradcheck,
    /// Shape tuned so the toy model can overfit the synthetic clips.
    Overfit,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON model config; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<ModelConfig> {
        let cfg = match &self.config {
            Some(path) => ModelConfig::load_json(path)?,
            None => match self.preset {
                Preset::Desk => ModelConfig::desk_default(),
                Preset::Gradcheck => ModelConfig::gradcheck_default(),
                Preset::Overfit => ModelConfig::overfit_demo(),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seed for parameters, latents, and conditioning. The default was
    /// scanned so every gradient entry sits well above the
    /// finite-difference noise floor; see --eps.
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Maximum tolerated relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Central-difference step size. The default is a few times coarser
    /// than the per-op checks use: across a full forward pass the
    /// finite-difference noise floor dominates truncation, and a larger
    /// step pushes that floor below the smallest healthy gradients.
    #[arg(long, default_value_t = 3e-5)]
    eps: f64,
    /// Scale the first loss evaluation by 1.001 so the check must fail;
    /// proves the comparison has teeth.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON stage schedule; defaults to all five stages.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for checkpoints and the loss trace.
    #[arg(long, default_value = "train_out")]
    out: PathBuf,
    /// Force this step count on every stage.
    #[arg(long)]
    steps_override: Option<usize>,
    /// Run only the named stage.
    #[arg(long)]
    stage: Option<String>,
    /// Learning rate for the default schedule.
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    /// Steps per stage for the default schedule.
    #[arg(long, default_value_t = 20)]
    steps_per_stage: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    /// Probability of drawing a replay clip from earlier stages.
    #[arg(long, default_value_t = 0.0)]
    replay_ratio: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(arg: OptimizerArg) -> Self {
        match arg {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::adam_default(),
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint directory produced by `mtv train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Seed for the sampling chain (and the fresh model when no
    /// checkpoint is given).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sample_out")]
    out: PathBuf,
    /// Interval whose synthetic effects click conditions the draw.
    #[arg(long, default_value_t = 0)]
    effects_interval: usize,
}

#[derive(Args)]
struct CurateArgs {
    /// JSONL clip manifest; omit with --demo to generate one.
    #[arg(long, required_unless_present = "demo")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "curated")]
    out: PathBuf,
    /// Write the built-in twelve-clip demo manifest and curate that.
    #[arg(long)]
    demo: bool,
    #[arg(long, default_value_t = 0.05)]
    l1_threshold: f64,
    #[arg(long, default_value_t = -45.0)]
    silence_db: f64,
}

#[derive(Args)]
struct MetricsArgs {
    /// Video tensor file, shaped [frames, height, width, channels].
    #[arg(long)]
    video: PathBuf,
    /// Mono PCM audio track.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long, default_value_t = 1600)]
    sample_rate: usize,
    #[arg(long, default_value_t = 16)]
    fps: usize,
    /// Identifier echoed into the report; defaults to the video filename.
    #[arg(long)]
    clip_id: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TemplateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Clip id to render.
    #[arg(long)]
    id: String,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Curate(args) => cmd_curate(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Template(args) => cmd_template(args),
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let cfg = match (&args.config.config, args.config.preset) {
        (None, Preset::Desk) => {
            let cfg = ModelConfig::gradcheck_default();
            cfg.validate()?;
            cfg
        }
        _ => args.config.load()?,
    };
    let mut ps = ParamSet::new();
    let mut rng = Rng::new(args.seed);
    let params = DenoiserParams::build(&mut ps, &mut rng, &cfg, BackboneInit::Randomized);
    let z = LatentVideo::new(Rng::new(args.seed.wrapping_add(1)).normal_array(&[
        cfg.intervals,
        cfg.latent_tokens,
        cfg.latent_channels(),
    ]))?;
    let cond = random_bundle(&cfg, args.seed.wrapping_add(2), cfg.steps / 2);
    let target = Rng::new(args.seed.wrapping_add(3))
        .normal_array(&[cfg.intervals * cfg.latent_tokens, cfg.latent_channels()]);

    let mut calls = 0usize;
    let corrupt = args.corrupt_gradient;
    let report = grad_check(
        |tape, p| {
            let (pred, _) = denoiser_forward_on_tape(tape, p, &params, &cfg, &z, &cond)?;
            let t = tape.constant(target.clone());
            let mut loss = tape.mse(pred, t)?;
            if corrupt && calls == 0 {
                loss = tape.scale(loss, 1.001);
            }
            calls += 1;
            Ok(loss)
        },
        ps.arrays(),
        args.eps,
    )?;

    println!(
        "checked {} entries across {} parameters",
        report.entries_checked,
        ps.len()
    );
    println!("max relative error {:.3e}", report.max_rel_err);
    if let Some(w) = &report.worst {
        println!(
            "worst: {}[{}] analytic {:.6e} numeric {:.6e}",
            ps.name(w.param),
            w.index,
            w.analytic,
            w.numeric
        );
    }
    if report.passes(args.tolerance) {
        println!("PASS (tolerance {:.1e})", args.tolerance);
        Ok(0)
    } else {
        println!("FAIL (tolerance {:.1e})", args.tolerance);
        Ok(2)
    }
}

fn random_bundle(cfg: &ModelConfig, seed: u64, t: usize) -> ConditioningBundle {
    let mut rng = Rng::new(seed);
    let rows = cfg.intervals * cfg.k;
    ConditioningBundle {
        text_tokens: embed_text("a toy clip", cfg.text_seed, cfg.d_model),
        speech: rng.normal_array(&[rows, cfg.d_a]),
        effects: rng.normal_array(&[rows, cfg.d_a]),
        music: rng.normal_array(&[rows, cfg.d_a]),
        t_embed: timestep_embedding(t, cfg.d_t),
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let cfg = args.config.load()?;
    // Ordering warnings come from run_schedule, which sees the stages
    // actually executed after --stage filtering.
    let (mut stages, _) = match &args.schedule {
        Some(path) => load_schedule(path)?,
        None => (default_schedule(args.steps_per_stage, args.lr), Vec::new()),
    };
    if let Some(steps) = args.steps_override {
        for stage in &mut stages {
            stage.steps = steps;
        }
    }
    if let Some(name) = &args.stage {
        let label = SubsetLabel::parse(name)
            .ok_or_else(|| anyhow!("unknown stage {name:?}; see `mtv train --help`"))?;
        stages.retain(|s| s.name == label);
        if stages.is_empty() {
            bail!("stage {name} not present in the schedule");
        }
    }

    let data = demo_dataset(&cfg, args.seed)?;
    let mut ps = ParamSet::new();
    let mut rng = Rng::new(args.seed);
    let model = DenoiserParams::build(&mut ps, &mut rng, &cfg, BackboneInit::SafeStart);
    let schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end, cfg.schedule)?;
    let opts = TrainOptions {
        freeze_mask: cfg.freeze_mask.clone(),
        optimizer: args.optimizer.into(),
    };

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let outcome = run_schedule(
        &mut ps,
        &model,
        &cfg,
        &schedule,
        &stages,
        &data,
        args.seed,
        &opts,
        args.replay_ratio,
        Some(&args.out),
    )?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    write_loss_csv(&args.out.join("loss.csv"), &outcome.traces)?;
    cfg.save_json(&args.out.join("config.json"))?;
    ps.save(&args.out.join("final"))?;

    for (name, trace) in &outcome.traces {
        match (trace.first(), trace.last()) {
            (Some(first), Some(last)) => {
                println!("stage {name}: {} steps, loss {first:.4} -> {last:.4}", trace.len())
            }
            _ => println!("stage {name}: 0 steps"),
        }
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_sample(args: SampleArgs) -> Result<i32> {
    let cfg = args.config.load()?;
    if args.effects_interval >= cfg.intervals {
        bail!(
            "effects interval {} out of range for {} intervals",
            args.effects_interval,
            cfg.intervals
        );
    }
    let mut ps = ParamSet::new();
    let mut rng = Rng::new(args.seed);
    let model = DenoiserParams::build(&mut ps, &mut rng, &cfg, BackboneInit::SafeStart);
    if let Some(dir) = &args.checkpoint {
        ps.load_into(dir)
            .with_context(|| format!("loading checkpoint {}", dir.display()))?;
    }

    // The conditioning clip is fixed; the seed steers only the chain.
    let spec = ClipSpec { effect_intervals: vec![args.effects_interval], ..Default::default() };
    let clip = make_synthetic_clip(&cfg, 500, &spec)?;
    let example = prepare_example(&cfg, &clip)?;
    let schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end, cfg.schedule)?;

    let latent = sample(
        |z, t| denoiser_forward(&ps, &model, &cfg, z, &example.conditioning(&cfg, t)),
        &schedule,
        args.seed,
        (cfg.intervals, cfg.latent_tokens, cfg.latent_channels()),
    )?;
    let vae = VaeStub::new(cfg.patch_t, cfg.patch_s)?;
    let frames = vae.decode(&latent, cfg.frame_height, cfg.frame_width, cfg.frame_channels)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_tensor(&args.out.join("latent.mtvt"), latent.tokens())?;
    write_tensor(&args.out.join("video.mtvt"), &frames)?;
    write_pcm(&args.out.join("effects.pcm"), &clip.audio.effects)?;

    let video_peaks = motion_peaks(&frames, PEAK_REL_THRESHOLD)?;
    let audio_peaks = energy_peaks(
        &clip.audio.effects,
        cfg.sample_rate as usize,
        cfg.fps,
        PEAK_REL_THRESHOLD,
    )?;
    let alignment = av_align(&audio_peaks, &video_peaks, AV_ALIGN_WINDOW)?;
    let sidecar = serde_json::json!({
        "seed": args.seed,
        "effects_interval": args.effects_interval,
        "frames": frames.shape(),
        "latent": latent.tokens().shape(),
        "av_align": alignment,
        "video_peaks": video_peaks.indices(),
        "audio_peaks": audio_peaks.indices(),
    });
    std::fs::write(
        args.out.join("sample.json"),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    println!(
        "sampled {} frames; av_align {alignment:.3}; wrote {}",
        frames.shape()[0],
        args.out.display()
    );
    Ok(0)
}

fn cmd_curate(args: CurateArgs) -> Result<i32> {
    let manifest = match (&args.manifest, args.demo) {
        (Some(path), false) => path.clone(),
        (None, true) => {
            let dir = args.out.join("demo");
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            build_demo_manifest(&dir)?
        }
        (Some(_), true) => bail!("pass either --manifest or --demo, not both"),
        (None, false) => unreachable!("clap enforces one of --manifest/--demo"),
    };
    let cfg = CurationConfig { l1_threshold: args.l1_threshold, silence_db: args.silence_db };
    let curated = curate_manifest_file(&manifest, &args.out, &cfg)?;
    let kept = curated.iter().filter(|r| r.kept()).count();
    println!("curated {} clips: {} kept, {} discarded", curated.len(), kept, curated.len() - kept);
    for r in curated.iter().filter(|r| !r.kept()) {
        println!(
            "  discarded {}: {}",
            r.record.id,
            r.discard_reason.as_deref().unwrap_or("unknown")
        );
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_metrics(args: MetricsArgs) -> Result<i32> {
    let frames = read_tensor(&args.video)?;
    if frames.shape().len() != 4 {
        bail!("video tensor must be [frames, height, width, channels], got {:?}", frames.shape());
    }
    let track = read_pcm(&args.audio)?;
    let video_peaks = motion_peaks(&frames, PEAK_REL_THRESHOLD)?;
    let audio_peaks = energy_peaks(&track, args.sample_rate, args.fps, PEAK_REL_THRESHOLD)?;
    let alignment = av_align(&audio_peaks, &video_peaks, AV_ALIGN_WINDOW)?;
    let consistency = temp_c_default(&frames)?;
    let clip_id = args.clip_id.clone().unwrap_or_else(|| {
        args.video.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let report = serde_json::json!({
        "clip_id": clip_id,
        "av_align": alignment,
        "temp_c": consistency.score,
        "n_audio_peaks": audio_peaks.indices().len(),
        "n_video_peaks": video_peaks.indices().len(),
        "skipped_pairs": consistency.skipped_pairs,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_template(args: TemplateArgs) -> Result<i32> {
    let records = load_manifest(&args.manifest)?;
    let record = records
        .iter()
        .find(|r| r.id == args.id)
        .ok_or_else(|| anyhow!("no record with id {:?} in {}", args.id, args.manifest.display()))?;
    println!("{}", render_text_template(record)?);
    Ok(0)
}
