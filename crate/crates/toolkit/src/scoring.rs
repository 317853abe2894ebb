//! Evaluation scoring: per-utterance composite scores, pooled reports
//! grouped by etiology, and line-delimited hypothesis files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use adaptasr_core::metrics::{edit_counts, wer, EditCounts, MetricsError};
use adaptasr_core::phonetics::{phonetic_distance, G2pError, RuleG2p};
use adaptasr_core::semscore::{combine, SemScoreError, SemScoreWeights};
use adaptasr_core::text::normalize_text;
use serde::{Deserialize, Serialize};

use crate::clients::{ClientError, NliClient, SemanticClient};
use crate::manifests::{Etiology, Utterance};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sem(#[from] SemScoreError),
    #[error(transparent)]
    G2p(#[from] G2pError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("hypothesis file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate hypothesis id {0}")]
    DuplicateHypothesis(String),
    #[error("no hypothesis for utterance {0}")]
    MissingHypothesis(String),
    #[error("nothing to score")]
    Empty,
}

/// Composes the three judge clients into one composite score in `[0, 100]`.
pub struct Scorer<'a> {
    pub semantic: &'a dyn SemanticClient,
    pub nli: &'a dyn NliClient,
    pub weights: SemScoreWeights,
}

impl Scorer<'_> {
    pub fn semscore(&self, reference: &str, hypothesis: &str) -> Result<f64, ScoreError> {
        let sem = self.semantic.score(reference, hypothesis)?;
        let phon = phonetic_distance(reference, hypothesis, &RuleG2p)?;
        let nli = self.nli.entailment(reference, hypothesis)?;
        Ok(combine(sem, phon, nli, &self.weights)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub etiology: Etiology,
    pub counts: EditCounts,
    pub semscore: f64,
}

pub fn score_utterance(
    utt: &Utterance,
    hypothesis: &str,
    scorer: &Scorer<'_>,
) -> Result<UtteranceScore, ScoreError> {
    let ref_words = normalize_text(&utt.transcript);
    let hyp_words = normalize_text(hypothesis);
    Ok(UtteranceScore {
        id: utt.id.clone(),
        etiology: utt.etiology,
        counts: edit_counts(&ref_words, &hyp_words),
        semscore: scorer.semscore(&utt.transcript, hypothesis)?,
    })
}

/// Scores each utterance against its hypothesis, erroring on any utterance
/// with no hypothesis line.
pub fn score_all(
    utterances: &[&Utterance],
    hypotheses: &BTreeMap<String, String>,
    scorer: &Scorer<'_>,
) -> Result<Vec<UtteranceScore>, ScoreError> {
    utterances
        .iter()
        .map(|utt| {
            let hyp = hypotheses
                .get(&utt.id)
                .ok_or_else(|| ScoreError::MissingHypothesis(utt.id.clone()))?;
            score_utterance(utt, hyp, scorer)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtiologyRow {
    pub etiology: Etiology,
    /// Pooled over the group's edit counts, not averaged per utterance.
    pub wer: f64,
    pub semscore: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub overall_wer: f64,
    pub overall_semscore: f64,
    pub utterance_count: usize,
    pub per_etiology: Vec<EtiologyRow>,
}

pub fn build_report(scores: &[UtteranceScore]) -> Result<ScoreReport, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::Empty);
    }
    let pooled = EditCounts::pool_all(scores.iter().map(|s| &s.counts));
    let overall_wer = wer(&pooled)?;
    let overall_semscore =
        scores.iter().map(|s| s.semscore).sum::<f64>() / scores.len() as f64;

    let mut groups: BTreeMap<Etiology, Vec<&UtteranceScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.etiology).or_default().push(s);
    }
    let per_etiology = groups
        .into_iter()
        .map(|(etiology, members)| {
            let pooled = EditCounts::pool_all(members.iter().map(|s| &s.counts));
            Ok(EtiologyRow {
                etiology,
                wer: wer(&pooled)?,
                semscore: members.iter().map(|s| s.semscore).sum::<f64>()
                    / members.len() as f64,
                count: members.len(),
            })
        })
        .collect::<Result<Vec<_>, ScoreError>>()?;

    Ok(ScoreReport {
        overall_wer,
        overall_semscore,
        utterance_count: scores.len(),
        per_etiology,
    })
}

/// Fixed-width table, two decimals on both metrics.
pub fn render_table(report: &ScoreReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>10} {:>7}\n",
        "etiology", "WER", "SemScore", "count"
    ));
    for row in &report.per_etiology {
        out.push_str(&format!(
            "{:<24} {:>8.2} {:>10.2} {:>7}\n",
            row.etiology.to_string(),
            row.wer,
            row.semscore,
            row.count
        ));
    }
    out.push_str(&format!(
        "{:<24} {:>8.2} {:>10.2} {:>7}\n",
        "overall", report.overall_wer, report.overall_semscore, report.utterance_count
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub text: String,
}

/// One JSON object per line, `{"id": ..., "text": ...}`.
pub fn save_hypotheses(path: &Path, hypotheses: &[Hypothesis]) -> Result<(), ScoreError> {
    let mut file = fs::File::create(path)?;
    for h in hypotheses {
        serde_json::to_writer(&mut file, h).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_hypotheses(path: &Path) -> Result<BTreeMap<String, String>, ScoreError> {
    let file = fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let h: Hypothesis = serde_json::from_str(&line).map_err(|e| ScoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(h.id.clone(), h.text).is_some() {
            return Err(ScoreError::DuplicateHypothesis(h.id));
        }
    }
    Ok(out)
}
