//! Dataset curation as a deterministic rule engine over annotated clip
//! manifests: a dual-demixing consistency filter, a voice-over filter,
//! overlapping subset assignment, the participant-count text template, and
//! manifest statistics.
//!
//! Records arrive as JSON lines with audio track references relative to the
//! manifest's directory. The pipeline is a pure function of the manifest and
//! its thresholds; output lines are ordered by clip id so reruns are
//! byte-identical.

use crate::audio::{read_pcm, silence_level, write_pcm, SILENCE_THRESHOLD_DB};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

/// Default ceiling on the mean absolute sample difference between demixer
/// outputs before a clip is considered inconsistent.
pub const L1_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    TalkingHead,
    Cinematic,
    FilmRelated,
}

/// The five overlapping training subsets, in curriculum order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetLabel {
    BasicFace,
    SingleCharacter,
    MultipleCharacters,
    SoundEvent,
    VisualMood,
}

impl SubsetLabel {
    pub const ALL: [SubsetLabel; 5] = [
        SubsetLabel::BasicFace,
        SubsetLabel::SingleCharacter,
        SubsetLabel::MultipleCharacters,
        SubsetLabel::SoundEvent,
        SubsetLabel::VisualMood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubsetLabel::BasicFace => "basic_face",
            SubsetLabel::SingleCharacter => "single_character",
            SubsetLabel::MultipleCharacters => "multiple_characters",
            SubsetLabel::SoundEvent => "sound_event",
            SubsetLabel::VisualMood => "visual_mood",
        }
    }

    pub fn parse(name: &str) -> Option<SubsetLabel> {
        SubsetLabel::ALL.iter().copied().find(|l| l.name() == name)
    }

    /// Position in the canonical curriculum order.
    pub fn rank(self) -> usize {
        SubsetLabel::ALL.iter().position(|&l| l == self).expect("closed enumeration")
    }
}

impl fmt::Display for SubsetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Track references from the three-stem demixer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemixA {
    pub speech: String,
    pub effects: String,
    pub music: String,
}

/// Track references from the two-stem demixer ("others" bundles everything
/// that is not speech).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemixB {
    pub speech: String,
    pub others: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotations {
    pub person_present: bool,
    pub human_count: usize,
    pub speaker_count: usize,
    pub active_speaker_frames: Vec<usize>,
    pub speech_present: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RosterEntry {
    pub identifier: String,
    pub appearance: String,
}

/// One annotated clip. Field order is the serialization order, which golden
/// manifests depend on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub duration_s: f64,
    pub source: SourceKind,
    pub demix_a: DemixA,
    pub demix_b: DemixB,
    pub annotations: Annotations,
    pub roster: Vec<RosterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_speaker_id: Option<String>,
    pub scene_description: String,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(active) = &self.active_speaker_id {
            if !self.roster.iter().any(|r| &r.identifier == active) {
                return Err(Error::invalid(
                    "ClipRecord",
                    format!("active speaker {active:?} is not in the roster of {}", self.id),
                ));
            }
        }
        Ok(())
    }
}

/// Which secondary comparison the consistency filter ran, with its L1.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondaryCheck {
    /// Music was silent: tool B's "others" must match tool A's effects.
    OthersVsEffects(f64),
    /// Effects were silent (music was not): "others" must match music.
    OthersVsMusic(f64),
    /// Neither stem silent: only the speech comparison applies.
    Uncompared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub keep: bool,
    /// Mean absolute difference of the two speech stems; absent when the
    /// tracks were incomparable.
    pub speech_l1: Option<f64>,
    pub secondary: SecondaryCheck,
    /// Populated exactly when `keep` is false.
    pub reason: Option<&'static str>,
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn load_track(base: &Path, rel: &str) -> Result<Vec<f64>> {
    read_pcm(&base.join(rel))
}

/// Dual-demixing consistency: the two speech stems must agree, and when
/// music (or failing that, effects) is silent, tool B's "others" stem must
/// agree with the remaining tool A stem. Any compared pair with mean
/// absolute difference above `l1_threshold` discards the clip; tracks of
/// unequal length are incomparable and also discard it.
pub fn demix_consistency_filter(
    record: &ClipRecord,
    base: &Path,
    l1_threshold: f64,
) -> Result<ConsistencyReport> {
    let speech_a = load_track(base, &record.demix_a.speech)?;
    let effects_a = load_track(base, &record.demix_a.effects)?;
    let music_a = load_track(base, &record.demix_a.music)?;
    let speech_b = load_track(base, &record.demix_b.speech)?;
    let others_b = load_track(base, &record.demix_b.others)?;

    let lens = [
        speech_a.len(),
        effects_a.len(),
        music_a.len(),
        speech_b.len(),
        others_b.len(),
    ];
    if lens.iter().any(|&l| l != lens[0]) {
        return Ok(ConsistencyReport {
            keep: false,
            speech_l1: None,
            secondary: SecondaryCheck::Uncompared,
            reason: Some("incomparable"),
        });
    }

    let speech_l1 = l1_distance(&speech_a, &speech_b);
    let secondary = if silence_level(&music_a)? < SILENCE_THRESHOLD_DB {
        SecondaryCheck::OthersVsEffects(l1_distance(&others_b, &effects_a))
    } else if silence_level(&effects_a)? < SILENCE_THRESHOLD_DB {
        SecondaryCheck::OthersVsMusic(l1_distance(&others_b, &music_a))
    } else {
        SecondaryCheck::Uncompared
    };

    let (keep, reason) = if speech_l1 > l1_threshold {
        (false, Some("speech_l1"))
    } else {
        match secondary {
            SecondaryCheck::OthersVsEffects(l1) | SecondaryCheck::OthersVsMusic(l1)
                if l1 > l1_threshold =>
            {
                (false, Some("secondary_l1"))
            }
            _ => (true, None),
        }
    };
    Ok(ConsistencyReport { keep, speech_l1: Some(speech_l1), secondary, reason })
}

/// Discard exactly the clips whose audio contains speech while the video
/// shows neither a visible person nor any active-speaker frame.
pub fn voiceover_filter(record: &ClipRecord) -> bool {
    let a = &record.annotations;
    !(a.speech_present && !a.person_present && a.active_speaker_frames.is_empty())
}

/// Overlapping subset assignment: talking-head sources form the basic-face
/// subset; other sources split by human count; audible effects and music
/// add the sound-event and visual-mood subsets independently.
pub fn assign_subsets(
    record: &ClipRecord,
    base: &Path,
    silence_db: f64,
) -> Result<BTreeSet<SubsetLabel>> {
    let mut subsets = BTreeSet::new();
    match record.source {
        SourceKind::TalkingHead => {
            subsets.insert(SubsetLabel::BasicFace);
        }
        _ => match record.annotations.human_count {
            0 => {}
            1 => {
                subsets.insert(SubsetLabel::SingleCharacter);
            }
            _ => {
                subsets.insert(SubsetLabel::MultipleCharacters);
            }
        },
    }
    let effects = load_track(base, &record.demix_a.effects)?;
    if silence_level(&effects)? >= silence_db {
        subsets.insert(SubsetLabel::SoundEvent);
    }
    let music = load_track(base, &record.demix_a.music)?;
    if silence_level(&music)? >= silence_db {
        subsets.insert(SubsetLabel::VisualMood);
    }
    Ok(subsets)
}

/// English numeral for small participant counts; larger counts fall back to
/// digits.
pub fn count_numeral(n: usize) -> String {
    const SMALL: [&str; 10] =
        ["One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten"];
    if (1..=10).contains(&n) {
        SMALL[n - 1].to_string()
    } else {
        n.to_string()
    }
}

/// The training-text grammar. With an active speaker: participant count
/// sentence, one sentence per roster entry, the active speaker, then the
/// scene description. Without one, the scene description stands alone.
pub fn render_text_template(record: &ClipRecord) -> Result<String> {
    match &record.active_speaker_id {
        None => Ok(record.scene_description.clone()),
        Some(active) => {
            if !record.roster.iter().any(|r| &r.identifier == active) {
                return Err(Error::invalid(
                    "render_text_template",
                    format!("active speaker {active:?} is not in the roster of {}", record.id),
                ));
            }
            let mut parts = vec![format!(
                "{} person conversation.",
                count_numeral(record.annotations.speaker_count)
            )];
            for entry in &record.roster {
                parts.push(format!("{}: {}.", entry.identifier, entry.appearance));
            }
            parts.push(format!("Active speaker: {active}."));
            parts.push(record.scene_description.clone());
            Ok(parts.join(" "))
        }
    }
}

/// One output line of the curated manifest: the record plus the pipeline's
/// verdict. Kept clips carry subsets and rendered text; discarded clips
/// carry the reason instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuratedRecord {
    #[serde(flatten)]
    pub record: ClipRecord,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_text: Option<String>,
}

impl CuratedRecord {
    pub fn kept(&self) -> bool {
        self.discard_reason.is_none()
    }

    pub fn subset_labels(&self) -> BTreeSet<SubsetLabel> {
        self.subsets.iter().filter_map(|s| SubsetLabel::parse(s)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub per_subset: Vec<(String, usize)>,
    pub total_clips: usize,
    pub total_hours: f64,
}

/// Subset counts and total footage over the kept portion of a curated
/// manifest. Every clip counts once toward the totals regardless of how
/// many subsets it holds.
pub fn dataset_stats(records: &[CuratedRecord]) -> DatasetStats {
    let mut per_subset: Vec<(String, usize)> =
        SubsetLabel::ALL.iter().map(|l| (l.name().to_string(), 0)).collect();
    let mut total_clips = 0usize;
    let mut total_seconds = 0.0;
    for r in records.iter().filter(|r| r.kept()) {
        total_clips += 1;
        total_seconds += r.record.duration_s;
        for label in r.subset_labels() {
            per_subset[label.rank()].1 += 1;
        }
    }
    DatasetStats { per_subset, total_clips, total_hours: total_seconds / 3600.0 }
}

#[derive(Debug, Clone, Copy)]
pub struct CurationConfig {
    pub l1_threshold: f64,
    pub silence_db: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig { l1_threshold: L1_THRESHOLD, silence_db: SILENCE_THRESHOLD_DB }
    }
}

/// Runs the full pipeline over parsed records: consistency filter first,
/// voice-over filter second, then subsets and text for the survivors.
/// Output is ordered by clip id.
pub fn curate(
    records: &[ClipRecord],
    base: &Path,
    cfg: &CurationConfig,
) -> Result<Vec<CuratedRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        record.validate()?;
        let consistency = demix_consistency_filter(record, base, cfg.l1_threshold)?;
        let verdict = if !consistency.keep {
            Err(consistency.reason.expect("discard carries a reason"))
        } else if !voiceover_filter(record) {
            Err("voice_over")
        } else {
            Ok(())
        };
        out.push(match verdict {
            Err(reason) => CuratedRecord {
                record: record.clone(),
                subsets: Vec::new(),
                discard_reason: Some(reason.to_string()),
                rendered_text: None,
            },
            Ok(()) => {
                let subsets = assign_subsets(record, base, cfg.silence_db)?;
                CuratedRecord {
                    record: record.clone(),
                    subsets: subsets.iter().map(|l| l.name().to_string()).collect(),
                    discard_reason: None,
                    rendered_text: Some(render_text_template(record)?),
                }
            }
        });
    }
    out.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    Ok(out)
}

/// Parses a JSON-lines manifest; blank lines are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ClipRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// Serializes curated records as JSON lines, one record per line, with a
/// trailing newline.
pub fn manifest_to_string(records: &[CuratedRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r)
                .map_err(|e| Error::invalid("manifest_to_string", e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// End-to-end convenience: load, curate, and write `curated.jsonl` and
/// `stats.json` under `out_dir`. Returns the curated records.
pub fn curate_manifest_file(
    manifest: &Path,
    out_dir: &Path,
    cfg: &CurationConfig,
) -> Result<Vec<CuratedRecord>> {
    let records = load_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let curated = curate(&records, base, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join("curated.jsonl");
    std::fs::write(&manifest_path, manifest_to_string(&curated)?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    let stats = dataset_stats(&curated);
    let stats_path = out_dir.join("stats.json");
    let stats_text = serde_json::to_string_pretty(&stats)
        .map_err(|e| Error::invalid("curate_manifest_file", e.to_string()))?;
    std::fs::write(&stats_path, stats_text).map_err(|e| Error::io(&stats_path, e))?;
    Ok(curated)
}

/// Writes the twelve-clip demo manifest and its PCM tracks under `dir` and
/// returns the manifest path. The records cover every pipeline branch:
/// consistent and inconsistent demixes, each silence combination, the
/// voice-over discard, incomparable track lengths, and all five subsets.
pub fn build_demo_manifest(dir: &Path) -> Result<PathBuf> {
    let tracks = dir.join("tracks");
    std::fs::create_dir_all(&tracks).map_err(|e| Error::io(&tracks, e))?;
    let n = 800usize;

    let silent = vec![0.0; n];
    let tone = |freq: f64, amp: f64| -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 1600.0).sin()).collect()
    };
    let speech = tone(220.0, 0.3);
    let effects = tone(880.0, 0.25);
    let music = tone(110.0, 0.2);
    let offset = |t: &[f64], by: f64| -> Vec<f64> { t.iter().map(|v| v + by).collect() };

    let write = |name: &str, samples: &[f64]| -> Result<String> {
        let path = tracks.join(name);
        write_pcm(&path, samples)?;
        Ok(format!("tracks/{name}"))
    };

    let mut lines = Vec::new();
    let mut push = |record: ClipRecord| {
        lines.push(serde_json::to_string(&record).expect("record serializes"));
    };

    let no_speaker = |id: &str,
                      duration: f64,
                      source: SourceKind,
                      demix_a: DemixA,
                      demix_b: DemixB,
                      human_count: usize,
                      speech_present: bool,
                      scene: &str| ClipRecord {
        id: id.to_string(),
        duration_s: duration,
        source,
        demix_a,
        demix_b,
        annotations: Annotations {
            person_present: human_count > 0,
            human_count,
            speaker_count: 0,
            active_speaker_frames: Vec::new(),
            speech_present,
        },
        roster: Vec::new(),
        active_speaker_id: None,
        scene_description: scene.to_string(),
    };

    // clip01: talking head, effects audible, music silent, fully consistent.
    push({
        let mut r = no_speaker(
            "clip01",
            30.0,
            SourceKind::TalkingHead,
            DemixA {
                speech: write("c01_speech_a.pcm", &speech)?,
                effects: write("c01_effects_a.pcm", &effects)?,
                music: write("c01_music_a.pcm", &silent)?,
            },
            DemixB {
                speech: write("c01_speech_b.pcm", &speech)?,
                others: write("c01_others_b.pcm", &effects)?,
            },
            1,
            true,
            "A person explains the day's plan.",
        );
        r.annotations.speaker_count = 1;
        r.annotations.active_speaker_frames = vec![3, 4, 5];
        r.roster = vec![RosterEntry {
            identifier: "Person1".to_string(),
            appearance: "a presenter at a desk".to_string(),
        }];
        r.active_speaker_id = Some("Person1".to_string());
        r
    });

    // clip02: talking head, music audible, effects silent; secondary check
    // compares others against music.
    push({
        let mut r = no_speaker(
            "clip02",
            45.0,
            SourceKind::TalkingHead,
            DemixA {
                speech: write("c02_speech_a.pcm", &speech)?,
                effects: write("c02_effects_a.pcm", &silent)?,
                music: write("c02_music_a.pcm", &music)?,
            },
            DemixB {
                speech: write("c02_speech_b.pcm", &speech)?,
                others: write("c02_others_b.pcm", &music)?,
            },
            1,
            true,
            "A host hums along with the background score.",
        );
        r.annotations.speaker_count = 1;
        r.annotations.active_speaker_frames = vec![10];
        r.roster = vec![RosterEntry {
            identifier: "Person1".to_string(),
            appearance: "a radio host with headphones".to_string(),
        }];
        r.active_speaker_id = Some("Person1".to_string());
        r
    });

    // clip03: cinematic single character, music silent, others==effects.
    push(no_speaker(
        "clip03",
        60.0,
        SourceKind::Cinematic,
        DemixA {
            speech: write("c03_speech_a.pcm", &silent)?,
            effects: write("c03_effects_a.pcm", &effects)?,
            music: write("c03_music_a.pcm", &silent)?,
        },
        DemixB {
            speech: write("c03_speech_b.pcm", &silent)?,
            others: write("c03_others_b.pcm", &effects)?,
        },
        1,
        false,
        "A lone hiker kicks stones down a slope.",
    ));

    // clip04: cinematic two characters, effects silent, music audible.
    push(no_speaker(
        "clip04",
        50.0,
        SourceKind::Cinematic,
        DemixA {
            speech: write("c04_speech_a.pcm", &speech)?,
            effects: write("c04_effects_a.pcm", &silent)?,
            music: write("c04_music_a.pcm", &music)?,
        },
        DemixB {
            speech: write("c04_speech_b.pcm", &speech)?,
            others: write("c04_others_b.pcm", &music)?,
        },
        2,
        true,
        "Two dancers rehearse under stage lights.",
    ));

    // clip05: film-related empty scene, both stems audible; only the speech
    // stems are comparable.
    push(no_speaker(
        "clip05",
        25.0,
        SourceKind::FilmRelated,
        DemixA {
            speech: write("c05_speech_a.pcm", &silent)?,
            effects: write("c05_effects_a.pcm", &effects)?,
            music: write("c05_music_a.pcm", &music)?,
        },
        DemixB {
            speech: write("c05_speech_b.pcm", &silent)?,
            others: write("c05_others_b.pcm", &offset(&effects, 0.0))?,
        },
        0,
        false,
        "A storm rolls over an empty harbor.",
    ));

    // clip06: speech stems disagree by a constant 0.2, far over threshold.
    push(no_speaker(
        "clip06",
        40.0,
        SourceKind::Cinematic,
        DemixA {
            speech: write("c06_speech_a.pcm", &speech)?,
            effects: write("c06_effects_a.pcm", &effects)?,
            music: write("c06_music_a.pcm", &silent)?,
        },
        DemixB {
            speech: write("c06_speech_b.pcm", &offset(&speech, 0.2))?,
            others: write("c06_others_b.pcm", &effects)?,
        },
        1,
        true,
        "A narrator describes a chase scene.",
    ));

    // clip07: speech consistent but the secondary comparison fails (music
    // silent, others far from effects).
    push(no_speaker(
        "clip07",
        35.0,
        SourceKind::FilmRelated,
        DemixA {
            speech: write("c07_speech_a.pcm", &speech)?,
            effects: write("c07_effects_a.pcm", &effects)?,
            music: write("c07_music_a.pcm", &silent)?,
        },
        DemixB {
            speech: write("c07_speech_b.pcm", &speech)?,
            others: write("c07_others_b.pcm", &offset(&effects, 0.3))?,
        },
        1,
        true,
        "Footsteps echo through a parking garage.",
    ));

    // clip08: voice-over - speech without any visible person or active
    // speaker frame.
    push(no_speaker(
        "clip08",
        20.0,
        SourceKind::FilmRelated,
        DemixA {
            speech: write("c08_speech_a.pcm", &speech)?,
            effects: write("c08_effects_a.pcm", &silent)?,
            music: write("c08_music_a.pcm", &music)?,
        },
        DemixB {
            speech: write("c08_speech_b.pcm", &speech)?,
            others: write("c08_others_b.pcm", &music)?,
        },
        0,
        true,
        "Aerial footage of a city at dawn.",
    ));

    // clip09: incomparable - tool B tracks are shorter.
    push(no_speaker(
        "clip09",
        15.0,
        SourceKind::Cinematic,
        DemixA {
            speech: write("c09_speech_a.pcm", &speech)?,
            effects: write("c09_effects_a.pcm", &effects)?,
            music: write("c09_music_a.pcm", &silent)?,
        },
        DemixB {
            speech: write("c09_speech_b.pcm", &speech[..n / 2])?,
            others: write("c09_others_b.pcm", &effects[..n / 2])?,
        },
        1,
        true,
        "A train crosses a viaduct.",
    ));

    // clip10: two-person talking head with an active speaker, for the full
    // template sentence.
    push({
        let mut r = no_speaker(
            "clip10",
            55.0,
            SourceKind::TalkingHead,
            DemixA {
                speech: write("c10_speech_a.pcm", &speech)?,
                effects: write("c10_effects_a.pcm", &silent)?,
                music: write("c10_music_a.pcm", &silent)?,
            },
            DemixB {
                speech: write("c10_speech_b.pcm", &speech)?,
                others: write("c10_others_b.pcm", &silent)?,
            },
            2,
            true,
            "They argue in a kitchen.",
        );
        r.annotations.speaker_count = 2;
        r.annotations.active_speaker_frames = vec![0, 1, 2];
        r.roster = vec![
            RosterEntry {
                identifier: "Person1".to_string(),
                appearance: "a man in a suit".to_string(),
            },
            RosterEntry {
                identifier: "Person2".to_string(),
                appearance: "a woman in red".to_string(),
            },
        ];
        r.active_speaker_id = Some("Person1".to_string());
        r
    });

    // clip11: cinematic single character with every stem silent.
    push(no_speaker(
        "clip11",
        70.0,
        SourceKind::Cinematic,
        DemixA {
            speech: write("c11_speech_a.pcm", &silent)?,
            effects: write("c11_effects_a.pcm", &silent)?,
            music: write("c11_music_a.pcm", &silent)?,
        },
        DemixB {
            speech: write("c11_speech_b.pcm", &silent)?,
            others: write("c11_others_b.pcm", &silent)?,
        },
        1,
        false,
        "A mime performs in total silence.",
    ));

    // clip12: film-related crowd, effects audible, music silent, no speech.
    push(no_speaker(
        "clip12",
        65.0,
        SourceKind::FilmRelated,
        DemixA {
            speech: write("c12_speech_a.pcm", &silent)?,
            effects: write("c12_effects_a.pcm", &effects)?,
            music: write("c12_music_a.pcm", &silent)?,
        },
        DemixB {
            speech: write("c12_speech_b.pcm", &silent)?,
            others: write("c12_others_b.pcm", &effects)?,
        },
        3,
        false,
        "A crowd scatters as fireworks misfire.",
    ));

    let manifest = dir.join("manifest.jsonl");
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
