//! Corpus data model: line-delimited utterance manifests, validation, dev
//! subsampling, and real/synthetic mixing.
//!
//! A manifest file is UTF-8 JSON, one record per line, so large corpora can
//! be streamed without whole-file parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use adaptasr_core::mathutil;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Etiology {
    Parkinson,
    Als,
    CerebralPalsy,
    DownSyndrome,
    Stroke,
    Unknown,
}

impl fmt::Display for Etiology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Etiology::Parkinson => "parkinson",
            Etiology::Als => "als",
            Etiology::CerebralPalsy => "cerebral_palsy",
            Etiology::DownSyndrome => "down_syndrome",
            Etiology::Stroke => "stroke",
            Etiology::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Command,
    NovelSentence,
    Spontaneous,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

/// One audio+transcript record. `audio` is a waveform resource reference,
/// interpreted relative to the manifest's directory when relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub audio: String,
    pub transcript: String,
    pub speaker_id: String,
    pub etiology: Etiology,
    pub category: Category,
    pub split: Split,
    pub duration_s: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_wer: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Utterance>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown field '{field}'")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("manifest has no dev records")]
    EmptyDevSplit,
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("synthetic pool too small: need {need}, have {have}")]
    PoolTooSmall { need: usize, have: usize },
}

const KNOWN_FIELDS: &[&str] = &[
    "id",
    "audio",
    "transcript",
    "speaker_id",
    "etiology",
    "category",
    "split",
    "duration_s",
    "provenance",
    "gender",
    "filter_wer",
];

fn validate_record(u: &Utterance, line: usize) -> Result<(), ManifestError> {
    if u.duration_s < 0.0 || !u.duration_s.is_finite() {
        return Err(ManifestError::Invalid {
            line,
            message: format!("duration_s {} must be finite and >= 0", u.duration_s),
        });
    }
    if matches!(u.split, Split::Train | Split::Dev) && u.transcript.trim().is_empty() {
        return Err(ManifestError::Invalid {
            line,
            message: "transcript empty for a train/dev record".into(),
        });
    }
    if u.filter_wer.is_some() && u.provenance != Provenance::Synthetic {
        return Err(ManifestError::Invalid {
            line,
            message: "filter_wer present on a non-synthetic record".into(),
        });
    }
    Ok(())
}

/// Loads a line-delimited manifest. In strict mode unknown keys are errors;
/// otherwise they are dropped with a warning on stderr.
pub fn load_manifest(path: &Path, strict: bool) -> Result<Manifest, ManifestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut seen = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(obj) = value.as_object() {
            for key in obj.keys() {
                if !KNOWN_FIELDS.contains(&key.as_str()) {
                    if strict {
                        return Err(ManifestError::UnknownField {
                            line: line_no,
                            field: key.clone(),
                        });
                    }
                    eprintln!("warning: {}:{line_no}: ignoring unknown field '{key}'", path.display());
                }
            }
        }
        let record: Utterance =
            serde_json::from_value(value).map_err(|e| ManifestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(_first) = seen.insert(record.id.clone(), line_no) {
            return Err(ManifestError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        validate_record(&record, line_no)?;
        records.push(record);
    }
    Ok(Manifest {
        records,
        metadata: BTreeMap::new(),
    })
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<(), ManifestError> {
    let mut file = File::create(path)?;
    for record in &manifest.records {
        let line = serde_json::to_string(record).expect("utterance serializes");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.records.iter().filter(move |u| u.split == split)
    }
}

/// Draws ceil(fraction * |dev|) dev records with a seeded shuffle. Original
/// manifest order is preserved in the output. `by_speaker` samples whole
/// speakers instead of individual utterances.
pub fn subsample_dev(
    manifest: &Manifest,
    fraction: f64,
    seed: u64,
    by_speaker: bool,
) -> Result<Manifest, ManifestError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ManifestError::BadFraction(fraction));
    }
    let dev: Vec<&Utterance> = manifest.split(Split::Dev).collect();
    if dev.is_empty() {
        return Err(ManifestError::EmptyDevSplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen_ids: std::collections::BTreeSet<String> = if by_speaker {
        let mut speakers: Vec<&str> = dev.iter().map(|u| u.speaker_id.as_str()).collect();
        speakers.sort_unstable();
        speakers.dedup();
        let n = (fraction * speakers.len() as f64).ceil() as usize;
        speakers.shuffle(&mut rng);
        let kept: std::collections::BTreeSet<&str> = speakers.into_iter().take(n).collect();
        dev.iter()
            .filter(|u| kept.contains(u.speaker_id.as_str()))
            .map(|u| u.id.clone())
            .collect()
    } else {
        let n = (fraction * dev.len() as f64).ceil() as usize;
        let mut indices: Vec<usize> = (0..dev.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(n);
        indices.into_iter().map(|i| dev[i].id.clone()).collect()
    };
    Ok(Manifest {
        records: manifest
            .records
            .iter()
            .filter(|u| u.split == Split::Dev && chosen_ids.contains(&u.id))
            .cloned()
            .collect(),
        metadata: manifest.metadata.clone(),
    })
}

/// All real train records plus exactly round(ratio * |real train|) synthetic
/// train records drawn without replacement (seeded, half-away-from-zero
/// rounding).
pub fn mix_synthetic(
    real: &Manifest,
    synthetic: &Manifest,
    ratio: f64,
    seed: u64,
) -> Result<Manifest, ManifestError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(ManifestError::BadRatio(ratio));
    }
    let real_train: Vec<&Utterance> = real.split(Split::Train).collect();
    let need = mathutil::round_half_away(ratio * real_train.len() as f64) as usize;
    let pool: Vec<&Utterance> = synthetic.split(Split::Train).collect();
    if pool.len() < need {
        return Err(ManifestError::PoolTooSmall {
            need,
            have: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(need);
    indices.sort_unstable();
    let mut records: Vec<Utterance> = real_train.into_iter().cloned().collect();
    records.extend(indices.into_iter().map(|i| pool[i].clone()));
    Ok(Manifest {
        records,
        metadata: real.metadata.clone(),
    })
}

#[cfg(test)]
pub(crate) fn test_utterance(id: &str, split: Split, provenance: Provenance) -> Utterance {
    Utterance {
        id: id.into(),
        audio: format!("{id}.wav"),
        transcript: format!("say the phrase {id}"),
        speaker_id: format!("spk{}", id.len() % 4),
        etiology: Etiology::Parkinson,
        category: Category::Command,
        split,
        duration_s: 1.0,
        provenance,
        gender: None,
        filter_wer: if provenance == Provenance::Synthetic {
            Some(10.0)
        } else {
            None
        },
    }
}
