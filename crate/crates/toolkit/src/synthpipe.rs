//! Synthetic-data pipeline: prompt seeding, transcript generation, voice
//! attribute sampling, TTS synthesis, intelligibility filtering, and pool
//! export. With all-stub clients the whole pipeline is deterministic under
//! fixed seeds; client calls run sequentially in input order for that reason.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use adaptasr_core::metrics::{edit_counts, wer};
use adaptasr_core::text::{normalize_joined, normalize_text};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::write_wav;
use crate::clients::{AsrClient, ClientError, TextGenClient, TtsClient};
use crate::manifests::{
    save_manifest, Category, Etiology, Gender, Manifest, Provenance, Split, Utterance,
};

/// Per-slot regeneration budget when the generator returns a transcript that
/// duplicates a seed example or an earlier output.
pub const RETRY_BOUND: usize = 5;
pub const DEFAULT_PROMPT_K: usize = 10;
pub const DEFAULT_FILTER_THRESHOLD: f64 = 35.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("train split has {have} records, need {need} for prompt seeding")]
    InsufficientRecords { need: usize, have: usize },
    #[error("requested {0} transcripts, need at least 1")]
    BadCount(usize),
    #[error("retry budget ({bound}) exhausted generating transcript {index}")]
    RetriesExhausted { index: usize, bound: usize },
    #[error("no gender-labeled records to sample attributes from")]
    NoLabeledRecords,
    #[error("synthesizer returned empty audio for transcript '{0}'")]
    EmptyAudio(String),
    #[error("nothing to export")]
    EmptyPool,
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Manifest(#[from] crate::manifests::ManifestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSeed {
    /// Exactly k transcripts drawn from the train split without replacement.
    pub examples: Vec<String>,
    pub template_id: String,
}

pub fn sample_prompt_seed(
    train: &Manifest,
    k: usize,
    seed: u64,
) -> Result<PromptSeed, SynthError> {
    // The draw is over distinct transcripts, not records; corpora repeat
    // command phrases across speakers.
    let mut transcripts: Vec<&str> = Vec::new();
    for u in train.records.iter().filter(|u| u.split == Split::Train) {
        if !transcripts.contains(&u.transcript.as_str()) {
            transcripts.push(&u.transcript);
        }
    }
    if transcripts.len() < k {
        return Err(SynthError::InsufficientRecords {
            need: k,
            have: transcripts.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..transcripts.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(k);
    Ok(PromptSeed {
        examples: indices
            .into_iter()
            .map(|i| transcripts[i].to_string())
            .collect(),
        template_id: "recombine-v1".into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTranscripts {
    pub transcripts: Vec<String>,
    /// Total regeneration attempts spent on duplicates or empty outputs.
    pub retries: usize,
}

/// Asks the generator for `n` transcripts. Any output that normalizes to a
/// seed example, to an already accepted output, or to the empty string is
/// rejected and regenerated with a fresh index, up to [`RETRY_BOUND`] retries
/// per slot.
pub fn generate_transcripts(
    client: &dyn TextGenClient,
    seed: &PromptSeed,
    n: usize,
) -> Result<GeneratedTranscripts, SynthError> {
    if n == 0 {
        return Err(SynthError::BadCount(0));
    }
    let seed_norms: BTreeSet<String> = seed
        .examples
        .iter()
        .map(|e| normalize_joined(e))
        .collect();
    let mut accepted_norms = BTreeSet::new();
    let mut transcripts = Vec::with_capacity(n);
    let mut retries = 0usize;
    let mut next_index = 0usize;
    for slot in 0..n {
        let mut attempt = 0usize;
        loop {
            let candidate = client.generate(&seed.examples, next_index)?;
            next_index += 1;
            let norm = normalize_joined(&candidate);
            if !norm.is_empty()
                && !seed_norms.contains(&norm)
                && !accepted_norms.contains(&norm)
            {
                accepted_norms.insert(norm);
                transcripts.push(candidate);
                break;
            }
            retries += 1;
            attempt += 1;
            if attempt >= RETRY_BOUND {
                return Err(SynthError::RetriesExhausted {
                    index: slot,
                    bound: RETRY_BOUND,
                });
            }
        }
    }
    Ok(GeneratedTranscripts {
        transcripts,
        retries,
    })
}

/// Qualitative bins rendered into the voice description. These are config
/// data; the defaults match common TTS description conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBins {
    pub speaking_rates: Vec<String>,
    pub pitches: Vec<String>,
    pub noise_levels: Vec<String>,
}

impl Default for AttributeBins {
    fn default() -> Self {
        AttributeBins {
            speaking_rates: ["very slow", "slow", "moderate", "fast"]
                .map(String::from)
                .to_vec(),
            pitches: ["low", "moderate", "high"].map(String::from).to_vec(),
            noise_levels: ["quiet", "moderate", "noisy"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceAttributes {
    pub gender: Gender,
    pub speaking_rate: String,
    pub pitch: String,
    pub noise_level: String,
    /// Mentions every attribute above.
    pub rendered_description: String,
}

fn gender_word(g: Gender) -> &'static str {
    match g {
        Gender::Male => "male",
        Gender::Female => "female",
    }
}

/// Gender follows the empirical distribution of labeled train records; the
/// qualitative bins are drawn uniformly.
pub fn sample_attributes(
    train: &Manifest,
    bins: &AttributeBins,
    seed: u64,
) -> Result<VoiceAttributes, SynthError> {
    let labels: Vec<Gender> = train
        .records
        .iter()
        .filter(|u| u.split == Split::Train)
        .filter_map(|u| u.gender)
        .collect();
    if labels.is_empty() {
        return Err(SynthError::NoLabeledRecords);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gender = labels[rng.random_range(0..labels.len())];
    let speaking_rate = bins.speaking_rates[rng.random_range(0..bins.speaking_rates.len())].clone();
    let pitch = bins.pitches[rng.random_range(0..bins.pitches.len())].clone();
    let noise_level = bins.noise_levels[rng.random_range(0..bins.noise_levels.len())].clone();
    let rendered_description = format!(
        "a {} speaker with a {} speaking rate and {} pitch, recorded in a {} environment",
        gender_word(gender),
        speaking_rate,
        pitch,
        noise_level
    );
    Ok(VoiceAttributes {
        gender,
        speaking_rate,
        pitch,
        noise_level,
        rendered_description,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCandidate {
    pub prompt: String,
    pub attributes: VoiceAttributes,
    pub audio: Vec<f64>,
    pub sample_rate: u32,
    pub filter_wer: Option<f64>,
}

pub fn synthesize(
    client: &dyn TtsClient,
    transcript: &str,
    attributes: VoiceAttributes,
) -> Result<SynthCandidate, SynthError> {
    let audio = client.synthesize(transcript, &attributes.rendered_description)?;
    if audio.is_empty() {
        return Err(SynthError::EmptyAudio(transcript.to_string()));
    }
    Ok(SynthCandidate {
        prompt: transcript.to_string(),
        attributes,
        audio,
        sample_rate: client.sample_rate(),
        filter_wer: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedCandidate {
    pub candidate: SynthCandidate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub accepted: Vec<SynthCandidate>,
    pub rejected: Vec<RejectedCandidate>,
}

/// Transcribes each candidate and keeps it iff its WER against the prompt is
/// strictly below the threshold ("35 or higher" is discarded). A failing ASR
/// call rejects the candidate and the pipeline continues. The filtering WER
/// reuses the evaluation normalization.
pub fn filter_intelligibility(
    candidates: Vec<SynthCandidate>,
    asr: &dyn AsrClient,
    threshold: f64,
) -> FilterOutcome {
    let mut outcome = FilterOutcome::default();
    for mut candidate in candidates {
        let reference = normalize_text(&candidate.prompt);
        let hypothesis = match asr.transcribe(&candidate.audio) {
            Ok(text) => normalize_text(&text),
            Err(e) => {
                outcome.rejected.push(RejectedCandidate {
                    candidate,
                    reason: format!("asr failure: {e}"),
                });
                continue;
            }
        };
        let counts = edit_counts(&reference, &hypothesis);
        let candidate_wer = match wer(&counts) {
            Ok(w) => w,
            Err(e) => {
                outcome.rejected.push(RejectedCandidate {
                    candidate,
                    reason: format!("unscorable prompt: {e}"),
                });
                continue;
            }
        };
        candidate.filter_wer = Some(candidate_wer);
        if candidate_wer < threshold {
            outcome.accepted.push(candidate);
        } else {
            outcome.rejected.push(RejectedCandidate {
                candidate,
                reason: format!("filter_wer {candidate_wer:.2} >= {threshold}"),
            });
        }
    }
    outcome
}

/// Picks `base` if it holds no manifest yet, otherwise the first free
/// `base-v2`, `base-v3`, ... so re-exports never clobber an earlier pool.
pub fn versioned_dir(base: &Path) -> PathBuf {
    if !base.join("manifest.jsonl").exists() {
        return base.to_path_buf();
    }
    for v in 2.. {
        let candidate = PathBuf::from(format!("{}-v{}", base.display(), v));
        if !candidate.join("manifest.jsonl").exists() {
            return candidate;
        }
    }
    unreachable!()
}

/// Writes wav files plus `manifest.jsonl` into a fresh (possibly versioned)
/// directory. Ids stay unique even when transcripts repeat.
pub fn export_pool(accepted: &[SynthCandidate], out: &Path) -> Result<(PathBuf, Manifest), SynthError> {
    if accepted.is_empty() {
        return Err(SynthError::EmptyPool);
    }
    let dir = versioned_dir(out);
    fs::create_dir_all(&dir)?;
    let mut manifest = Manifest::default();
    for (i, candidate) in accepted.iter().enumerate() {
        let id = format!("synth-{i:04}");
        let file = format!("{id}.wav");
        write_wav(&dir.join(&file), &candidate.audio, candidate.sample_rate)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        manifest.records.push(Utterance {
            id,
            audio: file,
            transcript: candidate.prompt.clone(),
            speaker_id: "synthetic".into(),
            etiology: Etiology::Unknown,
            category: Category::Unknown,
            split: Split::Train,
            duration_s: candidate.audio.len() as f64 / candidate.sample_rate as f64,
            provenance: Provenance::Synthetic,
            gender: Some(candidate.attributes.gender),
            filter_wer: candidate.filter_wer,
        });
    }
    let path = dir.join("manifest.jsonl");
    save_manifest(&path, &manifest)?;
    Ok((dir, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRunConfig {
    pub prompt_k: usize,
    pub n: usize,
    pub threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub bins: AttributeBins,
}

impl Default for SynthRunConfig {
    fn default() -> Self {
        SynthRunConfig {
            prompt_k: DEFAULT_PROMPT_K,
            n: 16,
            threshold: DEFAULT_FILTER_THRESHOLD,
            seed: 0,
            bins: AttributeBins::default(),
        }
    }
}

/// Seed -> generate -> synthesize -> filter, returning both partitions.
/// Attribute sampling fans out one sub-seed per candidate so inserting or
/// removing a candidate does not reshuffle the others.
pub fn run_generation(
    train: &Manifest,
    llm: &dyn TextGenClient,
    tts: &dyn TtsClient,
    asr: &dyn AsrClient,
    config: &SynthRunConfig,
) -> Result<FilterOutcome, SynthError> {
    let prompt = sample_prompt_seed(train, config.prompt_k, config.seed)?;
    let generated = generate_transcripts(llm, &prompt, config.n)?;
    let mut candidates = Vec::with_capacity(generated.transcripts.len());
    for (i, transcript) in generated.transcripts.iter().enumerate() {
        let attrs = sample_attributes(
            train,
            &config.bins,
            config.seed ^ (i as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15),
        )?;
        candidates.push(synthesize(tts, transcript, attrs)?);
    }
    Ok(filter_intelligibility(candidates, asr, config.threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{CharToneCodec, EchoSeedLlm, GarblingAsr, StubAsr, StubLlm, StubTts};
    use crate::manifests::test_utterance;

    fn train_manifest(n: usize) -> Manifest {
        let mut m = Manifest::default();
        for i in 0..n {
            let mut u = test_utterance(&format!("u{i:03}"), Split::Train, Provenance::Real);
            // letter-only words so the tone-codec stubs can encode every char
            let words = [
                "please", "kindly", "now", "later", "today", "soon",
                "run", "start", "stop", "pause", "resume", "check",
            ];
            u.transcript = format!(
                "{} {} the routine {}",
                words[i % 12],
                words[(i * 5 + 3) % 12],
                words[(i * 7 + 1) % 12]
            );
            u.gender = Some(if i % 10 < 7 {
                Gender::Female
            } else {
                Gender::Male
            });
            m.records.push(u);
        }
        m
    }

    #[test]
    fn prompt_seed_draws_k_distinct_train_transcripts() {
        let m = train_manifest(350);
        let seed = sample_prompt_seed(&m, 10, 7).unwrap();
        assert_eq!(seed.examples.len(), 10);
        let set: BTreeSet<&String> = seed.examples.iter().collect();
        assert_eq!(set.len(), 10);
        assert_eq!(seed, sample_prompt_seed(&m, 10, 7).unwrap());
        assert_ne!(seed, sample_prompt_seed(&m, 10, 8).unwrap());
    }

    #[test]
    fn prompt_seed_exhausts_whole_split_when_k_equals_size() {
        let m = train_manifest(10);
        let seed = sample_prompt_seed(&m, 10, 1).unwrap();
        let drawn: BTreeSet<&String> = seed.examples.iter().collect();
        assert_eq!(drawn.len(), 10);
        assert!(matches!(
            sample_prompt_seed(&m, 11, 1),
            Err(SynthError::InsufficientRecords { need: 11, have: 10 })
        ));
    }

    #[test]
    fn prompt_seed_ignores_dev_records() {
        let mut m = train_manifest(10);
        for u in m.records.iter_mut().take(5) {
            u.split = Split::Dev;
        }
        assert!(matches!(
            sample_prompt_seed(&m, 6, 1),
            Err(SynthError::InsufficientRecords { need: 6, have: 5 })
        ));
    }

    #[test]
    fn generated_transcripts_avoid_seed_examples() {
        let m = train_manifest(40);
        let prompt = sample_prompt_seed(&m, 10, 3).unwrap();
        let out = generate_transcripts(&StubLlm, &prompt, 12).unwrap();
        assert_eq!(out.transcripts.len(), 12);
        let seed_norms: BTreeSet<String> =
            prompt.examples.iter().map(|e| normalize_joined(e)).collect();
        let out_norms: BTreeSet<String> = out
            .transcripts
            .iter()
            .map(|t| normalize_joined(t))
            .collect();
        assert_eq!(out_norms.len(), 12, "outputs must be mutually distinct");
        assert!(out_norms.is_disjoint(&seed_norms));
    }

    #[test]
    fn zero_requested_transcripts_is_an_error() {
        let m = train_manifest(20);
        let prompt = sample_prompt_seed(&m, 10, 3).unwrap();
        assert!(matches!(
            generate_transcripts(&StubLlm, &prompt, 0),
            Err(SynthError::BadCount(0))
        ));
    }

    #[test]
    fn seed_echo_exhausts_retry_budget() {
        let m = train_manifest(20);
        let prompt = sample_prompt_seed(&m, 10, 3).unwrap();
        assert!(matches!(
            generate_transcripts(&EchoSeedLlm, &prompt, 1),
            Err(SynthError::RetriesExhausted { index: 0, bound }) if bound == RETRY_BOUND
        ));
    }

    /// Echoes a seed example on the first call, then behaves.
    struct OneBadThenGood;
    impl TextGenClient for OneBadThenGood {
        fn generate(&self, seed_examples: &[String], index: usize) -> Result<String, ClientError> {
            if index == 0 {
                Ok(seed_examples[0].clone())
            } else {
                Ok(format!("fresh sentence number {index}"))
            }
        }
    }

    #[test]
    fn duplicate_output_is_retried_and_counted() {
        let m = train_manifest(20);
        let prompt = sample_prompt_seed(&m, 10, 3).unwrap();
        let out = generate_transcripts(&OneBadThenGood, &prompt, 2).unwrap();
        assert_eq!(out.retries, 1);
        assert_eq!(out.transcripts.len(), 2);
    }

    #[test]
    fn degenerate_gender_distribution_always_sampled() {
        let mut m = train_manifest(30);
        for u in &mut m.records {
            u.gender = Some(Gender::Female);
        }
        for s in 0..20 {
            let a = sample_attributes(&m, &AttributeBins::default(), s).unwrap();
            assert_eq!(a.gender, Gender::Female);
        }
    }

    #[test]
    fn gender_sampling_tracks_empirical_distribution() {
        // 70/30 female/male labels; 10k draws land within two points.
        let m = train_manifest(100);
        let females = (0..10_000)
            .filter(|&s| {
                sample_attributes(&m, &AttributeBins::default(), s)
                    .unwrap()
                    .gender
                    == Gender::Female
            })
            .count();
        let freq = females as f64 / 10_000.0;
        assert!((freq - 0.7).abs() < 0.02, "female frequency {freq}");
    }

    #[test]
    fn unlabeled_manifest_cannot_seed_attributes() {
        let mut m = train_manifest(10);
        for u in &mut m.records {
            u.gender = None;
        }
        assert!(matches!(
            sample_attributes(&m, &AttributeBins::default(), 0),
            Err(SynthError::NoLabeledRecords)
        ));
    }

    #[test]
    fn rendered_description_mentions_every_attribute() {
        let m = train_manifest(50);
        let a = sample_attributes(&m, &AttributeBins::default(), 4).unwrap();
        for phrase in [
            gender_word(a.gender),
            a.speaking_rate.as_str(),
            a.pitch.as_str(),
            a.noise_level.as_str(),
        ] {
            assert!(
                a.rendered_description.contains(phrase),
                "description '{}' missing '{phrase}'",
                a.rendered_description
            );
        }
    }

    fn attrs() -> VoiceAttributes {
        VoiceAttributes {
            gender: Gender::Female,
            speaking_rate: "slow".into(),
            pitch: "low".into(),
            noise_level: "quiet".into(),
            rendered_description: "a female speaker, slow, low pitch, quiet".into(),
        }
    }

    #[test]
    fn synthesis_records_inputs_verbatim_and_is_stable() {
        let tts = StubTts {
            codec: CharToneCodec::default(),
        };
        let c1 = synthesize(&tts, "hello there", attrs()).unwrap();
        let c2 = synthesize(&tts, "hello there", attrs()).unwrap();
        assert_eq!(c1.prompt, "hello there");
        assert_eq!(c1.attributes, attrs());
        assert!(!c1.audio.is_empty());
        assert_eq!(c1.audio, c2.audio);
        assert!(synthesize(&tts, "", attrs()).is_err());
    }

    #[test]
    fn exact_asr_accepts_everything_at_zero_wer() {
        let codec = CharToneCodec::default();
        let tts = StubTts { codec };
        let asr = StubAsr { codec };
        let candidates: Vec<_> = ["open the door", "water please", "call my sister"]
            .iter()
            .map(|t| synthesize(&tts, t, attrs()).unwrap())
            .collect();
        let outcome = filter_intelligibility(candidates, &asr, DEFAULT_FILTER_THRESHOLD);
        assert_eq!(outcome.accepted.len(), 3);
        assert!(outcome.rejected.is_empty());
        for c in &outcome.accepted {
            assert_eq!(c.filter_wer, Some(0.0));
        }
    }

    #[test]
    fn threshold_boundary_is_strict() {
        // Five words, garble every 2nd: 2/5 = 40% rejected at threshold 40,
        // accepted at 40.01. Exact-boundary rejection is the contract.
        let codec = CharToneCodec::default();
        let tts = StubTts { codec };
        let asr = GarblingAsr {
            codec,
            garble_every: 2,
        };
        let candidate = synthesize(&tts, "one two three four five", attrs()).unwrap();
        let at = filter_intelligibility(vec![candidate.clone()], &asr, 40.0);
        assert!(at.accepted.is_empty());
        assert_eq!(at.rejected[0].candidate.filter_wer, Some(40.0));
        let above = filter_intelligibility(vec![candidate], &asr, 40.01);
        assert_eq!(above.accepted.len(), 1);
    }

    struct FailingAsr;
    impl AsrClient for FailingAsr {
        fn transcribe(&self, _waveform: &[f64]) -> Result<String, ClientError> {
            Err(ClientError::Failed {
                client: "failing-asr".into(),
                message: "boom".into(),
            })
        }
    }

    #[test]
    fn asr_failure_rejects_candidate_and_continues() {
        let tts = StubTts {
            codec: CharToneCodec::default(),
        };
        let candidates = vec![
            synthesize(&tts, "first", attrs()).unwrap(),
            synthesize(&tts, "second", attrs()).unwrap(),
        ];
        let outcome = filter_intelligibility(candidates, &FailingAsr, 35.0);
        assert_eq!(outcome.rejected.len(), 2);
        assert!(outcome.rejected[0].reason.contains("asr failure"));
    }

    #[test]
    fn filter_partitions_the_input() {
        let codec = CharToneCodec::default();
        let tts = StubTts { codec };
        let asr = GarblingAsr {
            codec,
            garble_every: 3,
        };
        let prompts = [
            "a b c d e f",
            "one two",
            "some longer sentence with many words inside it",
            "x",
        ];
        let candidates: Vec<_> = prompts
            .iter()
            .map(|t| synthesize(&tts, t, attrs()).unwrap())
            .collect();
        let outcome = filter_intelligibility(candidates.clone(), &asr, 35.0);
        assert_eq!(
            outcome.accepted.len() + outcome.rejected.len(),
            candidates.len()
        );
        for c in &outcome.accepted {
            assert!(c.filter_wer.unwrap() < 35.0);
        }
        for r in &outcome.rejected {
            assert!(r.candidate.filter_wer.unwrap() >= 35.0);
        }
    }

    #[test]
    fn export_writes_loadable_synthetic_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("pool");
        let codec = CharToneCodec::default();
        let tts = StubTts { codec };
        let asr = StubAsr { codec };
        let candidates: Vec<_> = ["same words", "same words", "different words"]
            .iter()
            .map(|t| synthesize(&tts, t, attrs()).unwrap())
            .collect();
        let outcome = filter_intelligibility(candidates, &asr, 35.0);
        let (dir1, manifest) = export_pool(&outcome.accepted, &out).unwrap();
        assert_eq!(dir1, out);
        assert_eq!(manifest.records.len(), 3);
        let ids: BTreeSet<&String> = manifest.records.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), 3, "duplicate transcripts still get unique ids");
        let loaded = crate::manifests::load_manifest(&dir1.join("manifest.jsonl"), true).unwrap();
        for r in &loaded.records {
            assert_eq!(r.provenance, Provenance::Synthetic);
            assert_eq!(r.etiology, Etiology::Unknown);
            assert_eq!(r.split, Split::Train);
            assert!(r.filter_wer.is_some());
            assert!(dir1.join(&r.audio).exists());
        }

        let (dir2, _) = export_pool(&outcome.accepted, &out).unwrap();
        assert_ne!(dir1, dir2);
        assert!(dir2.to_string_lossy().ends_with("-v2"));
        assert!(dir1.join("manifest.jsonl").exists());
    }

    #[test]
    fn empty_pool_export_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_pool(&[], &dir.path().join("pool")),
            Err(SynthError::EmptyPool)
        ));
    }

    #[test]
    fn stub_pipeline_is_byte_identical_across_runs() {
        let m = train_manifest(60);
        let codec = CharToneCodec::default();
        let tts = StubTts { codec };
        let asr = StubAsr { codec };
        let config = SynthRunConfig {
            n: 8,
            seed: 42,
            ..SynthRunConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut manifests = Vec::new();
        for run in 0..2 {
            let outcome = run_generation(&m, &StubLlm, &tts, &asr, &config).unwrap();
            assert!(!outcome.accepted.is_empty());
            let out = dir.path().join(format!("run{run}"));
            let (d, _) = export_pool(&outcome.accepted, &out).unwrap();
            manifests.push(fs::read(d.join("manifest.jsonl")).unwrap());
        }
        assert_eq!(manifests[0], manifests[1]);
    }
}
