//! Demixed-track audio: silence measurement, windowed feature extraction, and
//! the sample-window partition that lines audio up with latent intervals.
//!
//! A clip's audio arrives as three equal-length tracks (speech, effects,
//! music). Features are extracted per window so every feature token depends
//! only on its own slice of samples; the default extractor is deterministic
//! and dependency-free, and anything heavier can sit behind the same
//! `[intervals, tokens, width]` output contract.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// Tracks quieter than this (strictly) count as silent.
pub const SILENCE_THRESHOLD_DB: f64 = -45.0;

/// Levels are clamped here to keep zero-RMS tracks out of -inf.
pub const SILENCE_FLOOR_DB: f64 = -120.0;

/// Three source-separated tracks of one clip, equal length, mono, in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DemixedAudio {
    pub speech: Vec<f64>,
    pub effects: Vec<f64>,
    pub music: Vec<f64>,
    pub sample_rate: u32,
}

impl DemixedAudio {
    pub fn new(
        speech: Vec<f64>,
        effects: Vec<f64>,
        music: Vec<f64>,
        sample_rate: u32,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("DemixedAudio::new", "sample_rate must be positive"));
        }
        if speech.len() != effects.len() || speech.len() != music.len() {
            return Err(Error::invalid(
                "DemixedAudio::new",
                format!(
                    "track lengths disagree: speech {}, effects {}, music {}",
                    speech.len(),
                    effects.len(),
                    music.len()
                ),
            ));
        }
        for (name, track) in [("speech", &speech), ("effects", &effects), ("music", &music)] {
            for (i, &v) in track.iter().enumerate() {
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(Error::invalid(
                        "DemixedAudio::new",
                        format!("{name}[{i}] = {v} outside [-1, 1]"),
                    ));
                }
            }
        }
        Ok(DemixedAudio { speech, effects, music, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    /// Tracks in their canonical order: speech, effects, music.
    pub fn tracks(&self) -> [&[f64]; 3] {
        [&self.speech, &self.effects, &self.music]
    }

    /// Writes `speech.pcm`, `effects.pcm`, `music.pcm`, and `meta.json` into
    /// `dir` (created if absent).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_pcm(&dir.join("speech.pcm"), &self.speech)?;
        write_pcm(&dir.join("effects.pcm"), &self.effects)?;
        write_pcm(&dir.join("music.pcm"), &self.music)?;
        let meta = PcmMeta { sample_rate: self.sample_rate, channels: 1 };
        let path = dir.join("meta.json");
        let text =
            serde_json::to_string_pretty(&meta).map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: PcmMeta =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if meta.channels != 1 {
            return Err(Error::format(
                &path,
                format!("expected mono audio, got {} channels", meta.channels),
            ));
        }
        DemixedAudio::new(
            read_pcm(&dir.join("speech.pcm"))?,
            read_pcm(&dir.join("effects.pcm"))?,
            read_pcm(&dir.join("music.pcm"))?,
            meta.sample_rate,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PcmMeta {
    sample_rate: u32,
    channels: u32,
}

/// Raw little-endian f32 samples, no header; the sidecar carries the rate.
pub fn write_pcm(path: &Path, samples: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for &s in samples {
        bytes.extend_from_slice(&(s as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pcm(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a whole number of f32 samples", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Level of a track in dBFS relative to full scale 1.0: `20 log10(RMS)`,
/// clamped at the -120 floor so silence stays comparable.
pub fn silence_level(track: &[f64]) -> Result<f64> {
    if track.is_empty() {
        return Err(Error::invalid("silence_level", "track is empty"));
    }
    let mean_sq: f64 = track.iter().map(|&s| s * s).sum::<f64>() / track.len() as f64;
    let rms = mean_sq.sqrt();
    if rms <= 0.0 {
        return Ok(SILENCE_FLOOR_DB);
    }
    Ok((20.0 * rms.log10()).max(SILENCE_FLOOR_DB))
}

/// Strictly below the -45 dBFS threshold counts as silent; a track sitting
/// exactly on the threshold does not.
pub fn is_silent(track: &[f64]) -> Result<bool> {
    Ok(silence_level(track)? < SILENCE_THRESHOLD_DB)
}

/// Splits `audio_len` samples into `intervals * tokens_per_interval`
/// contiguous half-open windows, in order, lengths equal up to one sample
/// with any deficit landing in the last windows. Window `(m, j)` of the
/// result sits at index `m * tokens_per_interval + j`.
pub fn align_intervals(
    audio_len: usize,
    sample_rate: u32,
    intervals: usize,
    tokens_per_interval: usize,
) -> Result<Vec<(usize, usize)>> {
    if sample_rate == 0 {
        return Err(Error::invalid("align_intervals", "sample_rate must be positive"));
    }
    let n = intervals * tokens_per_interval;
    if n == 0 {
        return Err(Error::invalid("align_intervals", "need at least one window"));
    }
    if audio_len < n {
        return Err(Error::invalid(
            "align_intervals",
            format!("{audio_len} samples cannot fill {n} windows; need at least {n}"),
        ));
    }
    let base = audio_len / n;
    let rem = audio_len % n;
    let mut windows = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < rem);
        windows.push((start, start + len));
        start += len;
    }
    Ok(windows)
}

/// Default per-window feature vector of width `d_a`:
/// `[log(1 + RMS), zero-crossing rate, (d_a - 2) DFT band log-magnitudes]`.
///
/// The DFT bands partition bins `1..len/2` of the window's naive transform
/// contiguously; each band contributes `log(1 + sum |X_j| / len)`. An
/// all-zero window therefore maps to the all-zero vector. Every feature reads
/// only its own window, so equal windows give bitwise-equal tokens.
pub fn window_features(window: &[f64], d_a: usize) -> Vec<f64> {
    let len = window.len();
    let mut out = Vec::with_capacity(d_a);

    let mean_sq: f64 = window.iter().map(|&s| s * s).sum::<f64>() / len.max(1) as f64;
    out.push((1.0 + mean_sq.sqrt()).ln());

    let crossings = window
        .windows(2)
        .filter(|pair| pair[0] * pair[1] < 0.0)
        .count();
    out.push(if len > 1 { crossings as f64 / (len - 1) as f64 } else { 0.0 });

    let bands = d_a - 2;
    if bands > 0 {
        let half = len / 2;
        // Bins 1..half, split into contiguous bands; a band left empty by a
        // short window contributes log(1 + 0) = 0.
        let bins = half.saturating_sub(1);
        let mut magnitudes = Vec::with_capacity(bins);
        for j in 1..half {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &s) in window.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (j * i) as f64 / len as f64;
                re += s * phase.cos();
                im += s * phase.sin();
            }
            magnitudes.push((re * re + im * im).sqrt());
        }
        for b in 0..bands {
            let lo = b * bins / bands;
            let hi = (b + 1) * bins / bands;
            let sum: f64 = magnitudes[lo..hi].iter().sum();
            out.push((1.0 + sum / len as f64).ln());
        }
    }
    out
}

/// Per-interval feature tokens for one track: `[intervals, tokens, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFeatures {
    values: DenseArray,
}

impl TrackFeatures {
    pub fn new(values: DenseArray) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::invalid(
                "TrackFeatures::new",
                format!("expected [intervals, tokens, width], got shape {:?}", values.shape()),
            ));
        }
        if let Some(bad) = values.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "TrackFeatures::new",
                format!("non-finite feature value {bad}"),
            ));
        }
        Ok(TrackFeatures { values })
    }

    pub fn values(&self) -> &DenseArray {
        &self.values
    }

    pub fn intervals(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn tokens_per_interval(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    /// One interval's tokens as a `[tokens, width]` matrix.
    pub fn interval(&self, m: usize) -> DenseArray {
        let (k, d) = (self.tokens_per_interval(), self.width());
        let start = m * k * d;
        DenseArray::new(vec![k, d], self.values.data()[start..start + k * d].to_vec())
            .expect("contiguous interval slice")
    }
}

/// Windows one track per `align_intervals` and stacks the per-window feature
/// vectors into `[intervals, tokens_per_interval, d_a]`.
pub fn extract_features(
    track: &[f64],
    sample_rate: u32,
    intervals: usize,
    tokens_per_interval: usize,
    d_a: usize,
) -> Result<TrackFeatures> {
    if d_a < 2 {
        return Err(Error::invalid(
            "extract_features",
            "feature width must be at least 2 (level and crossing rate)",
        ));
    }
    let windows = align_intervals(track.len(), sample_rate, intervals, tokens_per_interval)?;
    let mut data = Vec::with_capacity(windows.len() * d_a);
    for &(start, end) in &windows {
        data.extend(window_features(&track[start..end], d_a));
    }
    TrackFeatures::new(DenseArray::new(
        vec![intervals, tokens_per_interval, d_a],
        data,
    )?)
}
