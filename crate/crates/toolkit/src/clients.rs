//! Model clients behind uniform traits: text generation, TTS, filtering ASR,
//! semantic/NLI scorers, and speaker-embedding extractors.
//!
//! Every trait ships a deterministic stub so the whole pipeline runs without
//! any pretrained model. Stubs exist for plumbing and reproducibility tests
//! only; they make no quality claims. The external-command kind wraps any
//! executable speaking line-delimited JSON over standard streams.

use std::io::Write;
use std::process::{Command, Stdio};

use adaptasr_core::conditioning::{EmbeddingExtractor, ExtractorOutput};
use adaptasr_core::text::normalize_joined;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("client '{client}' failed: {message}")]
    Failed { client: String, message: String },
    #[error("client '{client}' returned an out-of-range score {value}")]
    ScoreOutOfRange { client: String, value: f64 },
}

pub trait TextGenClient: Send + Sync {
    /// One candidate transcript for the given seed examples. `index` makes
    /// repeated requests distinguishable and replayable.
    fn generate(&self, seed_examples: &[String], index: usize) -> Result<String, ClientError>;
}

pub trait TtsClient: Send + Sync {
    fn sample_rate(&self) -> u32;
    fn synthesize(&self, transcript: &str, description: &str) -> Result<Vec<f64>, ClientError>;
}

pub trait AsrClient: Send + Sync {
    fn transcribe(&self, waveform: &[f64]) -> Result<String, ClientError>;
}

/// Semantic similarity in [0, 1] between a reference and a hypothesis.
pub trait SemanticClient: Send + Sync {
    fn score(&self, reference: &str, hypothesis: &str) -> Result<f64, ClientError>;
}

/// Entailment probability in [0, 1].
pub trait NliClient: Send + Sync {
    fn entailment(&self, reference: &str, hypothesis: &str) -> Result<f64, ClientError>;
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic transcript generator: recombines the vocabulary of the seed
/// examples into new word sequences, seeded by the examples and the index.
pub struct StubLlm;

impl TextGenClient for StubLlm {
    fn generate(&self, seed_examples: &[String], index: usize) -> Result<String, ClientError> {
        if seed_examples.is_empty() {
            return Err(ClientError::Failed {
                client: "stub-llm".into(),
                message: "no seed examples".into(),
            });
        }
        let mut bank: Vec<String> = Vec::new();
        for ex in seed_examples {
            for w in normalize_joined(ex).split_whitespace() {
                if !bank.iter().any(|b| b == w) {
                    bank.push(w.to_string());
                }
            }
        }
        if bank.is_empty() {
            return Err(ClientError::Failed {
                client: "stub-llm".into(),
                message: "seed examples contain no words".into(),
            });
        }
        let refs: Vec<&str> = seed_examples.iter().map(|s| s.as_str()).collect();
        let seed = fnv1a(&refs) ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_words = rng.random_range(3..=6.min(bank.len().max(3)));
        let words: Vec<&str> = (0..n_words)
            .map(|_| bank[rng.random_range(0..bank.len())].as_str())
            .collect();
        Ok(words.join(" "))
    }
}

/// Fault-injection generator: always returns a seed example verbatim, so the
/// duplicate-rejection path can be exercised.
pub struct EchoSeedLlm;

impl TextGenClient for EchoSeedLlm {
    fn generate(&self, seed_examples: &[String], index: usize) -> Result<String, ClientError> {
        seed_examples
            .get(index % seed_examples.len().max(1))
            .cloned()
            .ok_or_else(|| ClientError::Failed {
                client: "echo-llm".into(),
                message: "no seed examples".into(),
            })
    }
}

/// Shared character/tone mapping used by the stub TTS and stub ASR so that a
/// synthesis-then-transcription round trip is exact.
#[derive(Debug, Clone, Copy)]
pub struct CharToneCodec {
    pub sample_rate: u32,
    pub tone_ms: u32,
    pub base_hz: f64,
    pub step_hz: f64,
}

impl Default for CharToneCodec {
    fn default() -> Self {
        CharToneCodec {
            sample_rate: 8_000,
            tone_ms: 60,
            base_hz: 300.0,
            step_hz: 40.0,
        }
    }
}

pub const TONE_CHARSET: &str = " abcdefghijklmnopqrstuvwxyz'";

impl CharToneCodec {
    fn tone_samples(&self) -> usize {
        (self.sample_rate as u64 * self.tone_ms as u64 / 1000) as usize
    }

    fn char_freq(&self, c: char) -> Option<f64> {
        TONE_CHARSET
            .chars()
            .position(|t| t == c)
            .map(|i| self.base_hz + self.step_hz * i as f64)
    }

    /// Highest tone frequency; must stay below Nyquist.
    pub fn max_freq(&self) -> f64 {
        self.base_hz + self.step_hz * (TONE_CHARSET.len() - 1) as f64
    }

    pub fn encode(&self, text: &str, amplitude: f64) -> Vec<f64> {
        let text = normalize_joined(text);
        let n = self.tone_samples();
        let mut out = Vec::with_capacity(text.chars().count() * n);
        for c in text.chars() {
            let Some(freq) = self.char_freq(c) else { continue };
            for i in 0..n {
                let t = i as f64 / self.sample_rate as f64;
                out.push(amplitude * (2.0 * std::f64::consts::PI * freq * t).sin());
            }
        }
        out
    }

    pub fn decode(&self, waveform: &[f64]) -> String {
        let n = self.tone_samples();
        let mut out = String::new();
        for chunk in waveform.chunks(n) {
            if chunk.len() < n / 2 {
                break;
            }
            // Goertzel energy at each candidate tone frequency.
            let mut best = (' ', f64::NEG_INFINITY);
            for c in TONE_CHARSET.chars() {
                let freq = self.char_freq(c).unwrap();
                let w = 2.0 * std::f64::consts::PI * freq / self.sample_rate as f64;
                let coeff = 2.0 * w.cos();
                let (mut s1, mut s2) = (0.0, 0.0);
                for &x in chunk {
                    let s0 = x + coeff * s1 - s2;
                    s2 = s1;
                    s1 = s0;
                }
                let power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
                if power > best.1 {
                    best = (c, power);
                }
            }
            out.push(best.0);
        }
        normalize_joined(&out)
    }
}

/// Stub TTS: one pure tone per character. The attribute description only
/// modulates amplitude (quiet/noisy renditions), keeping the codec exact.
pub struct StubTts {
    pub codec: CharToneCodec,
}

impl TtsClient for StubTts {
    fn sample_rate(&self) -> u32 {
        self.codec.sample_rate
    }

    fn synthesize(&self, transcript: &str, description: &str) -> Result<Vec<f64>, ClientError> {
        if normalize_joined(transcript).is_empty() {
            return Err(ClientError::Failed {
                client: "stub-tts".into(),
                message: "empty transcript".into(),
            });
        }
        let amplitude = if description.contains("quiet") {
            0.4
        } else if description.contains("noisy") {
            0.9
        } else {
            0.7
        };
        Ok(self.codec.encode(transcript, amplitude))
    }
}

/// Stub ASR: inverse of [`StubTts`] over the shared codec.
pub struct StubAsr {
    pub codec: CharToneCodec,
}

impl AsrClient for StubAsr {
    fn transcribe(&self, waveform: &[f64]) -> Result<String, ClientError> {
        Ok(self.codec.decode(waveform))
    }
}

/// Lossy stub ASR for filter tests: garbles every k-th word.
pub struct GarblingAsr {
    pub codec: CharToneCodec,
    pub garble_every: usize,
}

impl AsrClient for GarblingAsr {
    fn transcribe(&self, waveform: &[f64]) -> Result<String, ClientError> {
        let text = self.codec.decode(waveform);
        let words: Vec<String> = text
            .split_whitespace()
            .enumerate()
            .map(|(i, w)| {
                if self.garble_every > 0 && (i + 1) % self.garble_every == 0 {
                    format!("{w}x")
                } else {
                    w.to_string()
                }
            })
            .collect();
        Ok(words.join(" "))
    }
}

fn token_sets(reference: &str, hypothesis: &str) -> (Vec<String>, Vec<String>) {
    let r: Vec<String> = normalize_joined(reference)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let h: Vec<String> = normalize_joined(hypothesis)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    (r, h)
}

/// Deterministic semantic stub: word-set Jaccard similarity.
pub struct StubSemantic;

impl SemanticClient for StubSemantic {
    fn score(&self, reference: &str, hypothesis: &str) -> Result<f64, ClientError> {
        let (r, h) = token_sets(reference, hypothesis);
        if r.is_empty() && h.is_empty() {
            return Ok(1.0);
        }
        let rs: std::collections::BTreeSet<&str> = r.iter().map(|s| s.as_str()).collect();
        let hs: std::collections::BTreeSet<&str> = h.iter().map(|s| s.as_str()).collect();
        let inter = rs.intersection(&hs).count() as f64;
        let union = rs.union(&hs).count() as f64;
        Ok(if union == 0.0 { 1.0 } else { inter / union })
    }
}

/// Deterministic entailment stub: fraction of reference words present in the
/// hypothesis.
pub struct StubNli;

impl NliClient for StubNli {
    fn entailment(&self, reference: &str, hypothesis: &str) -> Result<f64, ClientError> {
        let (r, h) = token_sets(reference, hypothesis);
        if r.is_empty() {
            return Ok(1.0);
        }
        let hs: std::collections::BTreeSet<&str> = h.iter().map(|s| s.as_str()).collect();
        let covered = r.iter().filter(|w| hs.contains(w.as_str())).count();
        Ok(covered as f64 / r.len() as f64)
    }
}

/// Deterministic speaker-embedding stub: per-chunk signal statistics squashed
/// into a fixed-dimensional vector. Similar waveforms map to similar vectors.
pub struct StubXVector {
    pub source_tag: String,
    pub dim: usize,
}

impl StubXVector {
    pub fn new(dim: usize) -> Self {
        StubXVector {
            source_tag: "xvector-stub".into(),
            dim,
        }
    }
}

impl EmbeddingExtractor for StubXVector {
    fn source(&self) -> &str {
        &self.source_tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, waveform: &[f64]) -> Result<ExtractorOutput, String> {
        if waveform.is_empty() {
            return Err("empty waveform".into());
        }
        let chunk = waveform.len().div_ceil(self.dim);
        let mut v = vec![0.0; self.dim];
        for (i, c) in waveform.chunks(chunk).enumerate().take(self.dim) {
            let rms = (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt();
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            v[i] = (rms + 0.5 * mean).tanh();
        }
        Ok(ExtractorOutput::Vector(v))
    }
}

/// Request/response envelope for external-command clients. One JSON object
/// per line on stdin, one per line on stdout.
#[derive(Debug, Serialize)]
pub struct ExternalRequest<'a> {
    pub op: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<&'a [f64]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExternalResponse {
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub samples: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Wraps an executable as a client: writes one request line to stdin, reads
/// one response line from stdout. A fresh process per request keeps the
/// protocol stateless and concurrent-safe.
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalCommand {
    pub fn call(&self, request: &ExternalRequest<'_>) -> Result<ExternalResponse, ClientError> {
        let fail = |message: String| ClientError::Failed {
            client: format!("command:{}", self.program),
            message,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        let line = serde_json::to_string(request).expect("request serializes");
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(format!("{line}\n").as_bytes())
            .map_err(|e| fail(e.to_string()))?;
        let out = child
            .wait_with_output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exit status {}", out.status)));
        }
        let first = String::from_utf8_lossy(&out.stdout);
        let first = first.lines().next().unwrap_or("");
        let resp: ExternalResponse =
            serde_json::from_str(first).map_err(|e| fail(format!("bad response: {e}")))?;
        if let Some(err) = resp.error {
            return Err(fail(err));
        }
        Ok(resp)
    }

    fn score_op(&self, op: &str, reference: &str, hypothesis: &str) -> Result<f64, ClientError> {
        let resp = self.call(&ExternalRequest {
            op,
            reference: Some(reference),
            hypothesis: Some(hypothesis),
            text: None,
            samples: None,
        })?;
        let value = resp.score.ok_or_else(|| ClientError::Failed {
            client: format!("command:{}", self.program),
            message: "response missing 'score'".into(),
        })?;
        if !(0.0..=1.0).contains(&value) {
            return Err(ClientError::ScoreOutOfRange {
                client: format!("command:{}", self.program),
                value,
            });
        }
        Ok(value)
    }
}

impl SemanticClient for ExternalCommand {
    fn score(&self, reference: &str, hypothesis: &str) -> Result<f64, ClientError> {
        self.score_op("semantic", reference, hypothesis)
    }
}

impl NliClient for ExternalCommand {
    fn entailment(&self, reference: &str, hypothesis: &str) -> Result<f64, ClientError> {
        self.score_op("nli", reference, hypothesis)
    }
}

impl AsrClient for ExternalCommand {
    fn transcribe(&self, waveform: &[f64]) -> Result<String, ClientError> {
        let resp = self.call(&ExternalRequest {
            op: "transcribe",
            reference: None,
            hypothesis: None,
            text: None,
            samples: Some(waveform),
        })?;
        resp.text.ok_or_else(|| ClientError::Failed {
            client: format!("command:{}", self.program),
            message: "response missing 'text'".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codec_round_trips_normalized_text() {
        let codec = CharToneCodec::default();
        assert!(codec.max_freq() < codec.sample_rate as f64 / 2.0);
        for text in ["turn on the lights", "don't stop", "hello world again"] {
            let audio = codec.encode(text, 0.7);
            assert_eq!(codec.decode(&audio), normalize_joined(text));
        }
    }

    #[test]
    fn tts_then_asr_is_exact() {
        let codec = CharToneCodec::default();
        let tts = StubTts { codec };
        let asr = StubAsr { codec };
        let audio = tts.synthesize("Please play some Music", "a quiet room").unwrap();
        assert_eq!(asr.transcribe(&audio).unwrap(), "please play some music");
    }

    #[test]
    fn tts_rejects_empty_transcripts() {
        let tts = StubTts {
            codec: CharToneCodec::default(),
        };
        assert!(tts.synthesize("  ,,  ", "x").is_err());
    }

    #[test]
    fn stub_llm_is_deterministic_and_index_sensitive() {
        let seeds = vec![
            "turn on the kitchen lights".to_string(),
            "play my favorite song".to_string(),
        ];
        let a = StubLlm.generate(&seeds, 0).unwrap();
        let b = StubLlm.generate(&seeds, 0).unwrap();
        assert_eq!(a, b);
        let c = StubLlm.generate(&seeds, 1).unwrap();
        assert_ne!(a, c);
        // Vocabulary is drawn from the seed examples.
        let bank: std::collections::BTreeSet<&str> = seeds
            .iter()
            .flat_map(|s| s.split_whitespace())
            .collect();
        for w in a.split_whitespace() {
            assert!(bank.contains(w), "unexpected word {w}");
        }
    }

    #[test]
    fn echo_llm_returns_a_seed_verbatim() {
        let seeds = vec!["alpha beta".to_string(), "gamma delta".to_string()];
        assert_eq!(EchoSeedLlm.generate(&seeds, 0).unwrap(), "alpha beta");
        assert_eq!(EchoSeedLlm.generate(&seeds, 1).unwrap(), "gamma delta");
    }

    #[test]
    fn semantic_and_nli_stubs_are_bounded_and_exact_on_identity() {
        assert_eq!(StubSemantic.score("a b c", "a b c").unwrap(), 1.0);
        assert_eq!(StubNli.entailment("a b", "b a").unwrap(), 1.0);
        assert_eq!(StubSemantic.score("a b", "c d").unwrap(), 0.0);
        let s = StubSemantic.score("a b c d", "a b").unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn xvector_stub_has_declared_dimension_and_is_deterministic() {
        let x = StubXVector::new(8);
        let wave: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin()).collect();
        let a = adaptasr_core::conditioning::extract_embedding(&x, &wave).unwrap();
        let b = adaptasr_core::conditioning::extract_embedding(&x, &wave).unwrap();
        assert_eq!(a.vector.len(), 8);
        assert_eq!(a.vector, b.vector);
        assert!(adaptasr_core::conditioning::extract_embedding(&x, &[]).is_err());
    }

    #[test]
    fn external_command_round_trip_via_shell() {
        // A tiny shell "model" that always scores 0.5.
        let cmd = ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), "read _line; echo '{\"score\": 0.5}'".into()],
        };
        assert_eq!(cmd.score("a", "b").unwrap(), 0.5);
        let bad = ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), "read _line; echo '{\"score\": 1.5}'".into()],
        };
        assert!(matches!(
            bad.score("a", "b"),
            Err(ClientError::ScoreOutOfRange { .. })
        ));
        let failing = ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), "exit 3".into()],
        };
        assert!(failing.score("a", "b").is_err());
    }
}
