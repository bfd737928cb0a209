//! Audio-video alignment metrics over detector-agnostic peak trains, plus a
//! temporal-consistency score from consecutive frame embeddings.
//!
//! The built-in detectors are deliberately simple: audio peaks come from
//! per-frame RMS energy, motion peaks from mean absolute frame difference.
//! Both feed the same plateau-aware local-maximum rule, so real detectors
//! can replace them behind the [`PeakTrain`] interface without touching the
//! scoring code.

use crate::error::{Error, Result};
use crate::numerics::DenseArray;
use serde::Serialize;

/// Matching window (in frames) for audio-video peak alignment.
pub const AV_ALIGN_WINDOW: usize = 3;

/// Fraction of the maximum signal value a local maximum must reach to count
/// as a peak.
pub const PEAK_REL_THRESHOLD: f64 = 0.5;

/// Detected event frames of one modality over a clip of `frame_count`
/// frames. Indices are strictly increasing and all below `frame_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeakTrain {
    frame_indices: Vec<usize>,
    frame_count: usize,
}

impl PeakTrain {
    pub fn new(frame_indices: Vec<usize>, frame_count: usize) -> Result<Self> {
        for pair in frame_indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::invalid(
                    "PeakTrain",
                    format!("indices not strictly increasing at {} .. {}", pair[0], pair[1]),
                ));
            }
        }
        if let Some(&last) = frame_indices.last() {
            if last >= frame_count {
                return Err(Error::invalid(
                    "PeakTrain",
                    format!("index {last} outside frame count {frame_count}"),
                ));
            }
        }
        Ok(PeakTrain { frame_indices, frame_count })
    }

    pub fn indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }
}

/// Shared peak rule: a maximal run of equal values is a peak run iff it is
/// bounded by strictly smaller values (or the signal edge), does not span
/// the whole signal, and reaches `rel_threshold` times the maximum. Every
/// index of a peak run is emitted, so a two-frame plateau (the rise and fall
/// of a one-frame event) reports both boundary frames.
fn signal_peaks(signal: &[f64], rel_threshold: f64, index_offset: usize) -> Vec<usize> {
    let n = signal.len();
    if n < 2 {
        return Vec::new();
    }
    let max = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = rel_threshold * max;
    let mut peaks = Vec::new();
    let mut run_start = 0;
    for i in 1..=n {
        if i < n && signal[i] == signal[run_start] {
            continue;
        }
        let run_end = i - 1;
        let whole = run_start == 0 && run_end == n - 1;
        let left_ok = run_start == 0 || signal[run_start - 1] < signal[run_start];
        let right_ok = run_end == n - 1 || signal[run_end + 1] < signal[run_start];
        if !whole && left_ok && right_ok && signal[run_start] >= floor {
            peaks.extend((run_start..=run_end).map(|j| j + index_offset));
        }
        run_start = i;
    }
    peaks
}

/// Per-frame RMS energy of `track` at the given rates; the final frame may
/// cover fewer samples.
pub fn frame_energy(track: &[f64], sample_rate: usize, fps: usize) -> Result<Vec<f64>> {
    if track.is_empty() {
        return Err(Error::invalid("frame_energy", "empty track"));
    }
    if fps == 0 || sample_rate == 0 {
        return Err(Error::invalid("frame_energy", "rates must be positive"));
    }
    let frame_count = ((track.len() - 1) * fps) / sample_rate + 1;
    let mut energy = vec![0.0; frame_count];
    let mut counts = vec![0usize; frame_count];
    for (i, &s) in track.iter().enumerate() {
        let f = i * fps / sample_rate;
        energy[f] += s * s;
        counts[f] += 1;
    }
    for (e, &c) in energy.iter_mut().zip(&counts) {
        *e = (*e / c as f64).sqrt();
    }
    Ok(energy)
}

/// Audio event frames: peaks of the per-frame RMS energy.
pub fn energy_peaks(
    track: &[f64],
    sample_rate: usize,
    fps: usize,
    rel_threshold: f64,
) -> Result<PeakTrain> {
    let energy = frame_energy(track, sample_rate, fps)?;
    let n = energy.len();
    PeakTrain::new(signal_peaks(&energy, rel_threshold, 0), n)
}

/// Motion signal of a `[F, H, W, C]` video: `m_t = mean |frame_t −
/// frame_{t−1}|` for `t ≥ 1`.
pub fn motion_signal(frames: &DenseArray) -> Result<Vec<f64>> {
    let (f, stride) = frame_geometry(frames, "motion_signal")?;
    if f < 3 {
        return Err(Error::invalid("motion_signal", "need at least 3 frames"));
    }
    let data = frames.data();
    Ok((1..f)
        .map(|t| {
            let prev = &data[(t - 1) * stride..t * stride];
            let cur = &data[t * stride..(t + 1) * stride];
            cur.iter().zip(prev).map(|(a, b)| (a - b).abs()).sum::<f64>() / stride as f64
        })
        .collect())
}

/// Video event frames: peaks of the motion signal, indexed by the frame the
/// difference lands on (signal entry `t` compares frames `t−1` and `t`).
pub fn motion_peaks(frames: &DenseArray, rel_threshold: f64) -> Result<PeakTrain> {
    let signal = motion_signal(frames)?;
    let f = frames.shape()[0];
    PeakTrain::new(signal_peaks(&signal, rel_threshold, 1), f)
}

fn frame_geometry(frames: &DenseArray, op: &'static str) -> Result<(usize, usize)> {
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::invalid(op, format!("expected [F,H,W,C] video, got {shape:?}")));
    }
    Ok((shape[0], shape[1] * shape[2] * shape[3]))
}

/// Two-sided peak matching: the fraction of peaks in either train that have
/// a counterpart in the other within `window` frames. Both trains empty is
/// vacuous alignment (1.0); exactly one empty is total misalignment (0.0).
pub fn av_align(pa: &PeakTrain, pv: &PeakTrain, window: usize) -> Result<f64> {
    if pa.frame_count() != pv.frame_count() {
        return Err(Error::invalid(
            "av_align",
            format!("frame counts differ: {} vs {}", pa.frame_count(), pv.frame_count()),
        ));
    }
    match (pa.is_empty(), pv.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let matched = |p: usize, q: &PeakTrain| {
        q.indices().iter().any(|&i| p.abs_diff(i) <= window)
    };
    let hits = pa.indices().iter().filter(|&&p| matched(p, pv)).count()
        + pv.indices().iter().filter(|&&p| matched(p, pa)).count();
    Ok(hits as f64 / (pa.len() + pv.len()) as f64)
}

/// Temporal-consistency result: the mean cosine over scored pairs, plus any
/// pairs skipped for a zero-norm embedding.
#[derive(Debug, Clone, Serialize)]
pub struct TempC {
    pub score: f64,
    pub skipped_pairs: Vec<usize>,
}

/// Mean cosine similarity between consecutive frame embeddings. A pair with
/// a zero-norm embedding is skipped and reported; if no pair remains the
/// score is undefined and rejected.
pub fn temp_c<E>(frames: &DenseArray, mut embed: E) -> Result<TempC>
where
    E: FnMut(&[f64]) -> Vec<f64>,
{
    let (f, stride) = frame_geometry(frames, "temp_c")?;
    if f < 2 {
        return Err(Error::invalid("temp_c", "need at least 2 frames"));
    }
    let data = frames.data();
    let embeddings: Vec<Vec<f64>> =
        (0..f).map(|t| embed(&data[t * stride..(t + 1) * stride])).collect();
    let mut total = 0.0;
    let mut scored = 0usize;
    let mut skipped = Vec::new();
    for t in 0..f - 1 {
        let a = &embeddings[t];
        let b = &embeddings[t + 1];
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            skipped.push(t);
            continue;
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        total += dot / (na * nb);
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::invalid("temp_c", "every frame pair had a zero-norm embedding"));
    }
    Ok(TempC { score: total / scored as f64, skipped_pairs: skipped })
}

/// Default frame embedder: 4×4 average-pooled grayscale, flattened. The
/// cosine in [`temp_c`] normalizes, so the embedding is left unnormalized
/// here to keep zero frames detectable.
pub fn pooled_grayscale(height: usize, width: usize, channels: usize) -> impl FnMut(&[f64]) -> Vec<f64> {
    move |frame: &[f64]| {
        let mut cells = vec![0.0; 16];
        let mut counts = vec![0usize; 16];
        for y in 0..height {
            for x in 0..width {
                let mut gray = 0.0;
                for c in 0..channels {
                    gray += frame[(y * width + x) * channels + c];
                }
                gray /= channels as f64;
                let cell = (y * 4 / height) * 4 + x * 4 / width;
                cells[cell] += gray;
                counts[cell] += 1;
            }
        }
        for (v, &c) in cells.iter_mut().zip(&counts) {
            if c > 0 {
                *v /= c as f64;
            }
        }
        cells
    }
}

/// [`temp_c`] with the default pooled-grayscale embedder.
pub fn temp_c_default(frames: &DenseArray) -> Result<TempC> {
    let shape = frames.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::invalid("temp_c", format!("expected [F,H,W,C] video, got {shape:?}")));
    }
    temp_c(frames, pooled_grayscale(shape[1], shape[2], shape[3]))
}
