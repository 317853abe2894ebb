//! Grapheme-to-phoneme interface and normalized phoneme edit distance.
//!
//! The bundled [`RuleG2p`] is a deterministic rule table, good enough for
//! plumbing and scoring tests. Real systems plug in an external client
//! through the same trait.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::metrics::edit_counts;
use crate::text::normalize_text;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum G2pError {
    #[error("g2p client failed: {0}")]
    Client(String),
}

pub trait GraphemeToPhoneme {
    /// Phoneme sequence for normalized text; word boundaries are the
    /// implementation's business (the bundled rules emit a `_` marker).
    fn phonemes(&self, text: &str) -> Result<Vec<String>, G2pError>;
}

/// Rule-based English-ish G2P: digraphs first, then single letters.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleG2p;

const DIGRAPHS: &[(&str, &str)] = &[
    ("th", "TH"),
    ("sh", "SH"),
    ("ch", "CH"),
    ("ph", "F"),
    ("wh", "W"),
    ("ck", "K"),
    ("qu", "KW"),
    ("ng", "NG"),
    ("ee", "IY"),
    ("oo", "UW"),
    ("ea", "IY"),
    ("ou", "AW"),
    ("ai", "EY"),
];

fn letter_phone(c: char) -> Option<&'static str> {
    Some(match c {
        'a' => "AE",
        'b' => "B",
        'c' => "K",
        'd' => "D",
        'e' => "EH",
        'f' => "F",
        'g' => "G",
        'h' => "HH",
        'i' => "IH",
        'j' => "JH",
        'k' => "K",
        'l' => "L",
        'm' => "M",
        'n' => "N",
        'o' => "AO",
        'p' => "P",
        'q' => "K",
        'r' => "R",
        's' => "S",
        't' => "T",
        'u' => "AH",
        'v' => "V",
        'w' => "W",
        'x' => "KS",
        'y' => "Y",
        'z' => "Z",
        '0'..='9' => "NUM",
        _ => return None,
    })
}

impl GraphemeToPhoneme for RuleG2p {
    fn phonemes(&self, text: &str) -> Result<Vec<String>, G2pError> {
        let mut out = Vec::new();
        for (wi, word) in normalize_text(text).iter().enumerate() {
            if wi > 0 {
                out.push("_".to_string());
            }
            let chars: Vec<char> = word.chars().collect();
            let mut i = 0;
            while i < chars.len() {
                if i + 1 < chars.len() {
                    let pair: String = chars[i..i + 2].iter().collect();
                    if let Some((_, p)) = DIGRAPHS.iter().find(|(d, _)| *d == pair) {
                        out.push((*p).to_string());
                        i += 2;
                        continue;
                    }
                }
                if let Some(p) = letter_phone(chars[i]) {
                    out.push(p.to_string());
                }
                i += 1;
            }
        }
        Ok(out)
    }
}

/// Normalized phoneme-level edit distance in `[0, 1]`:
/// `edit(ph_ref, ph_hyp) / max(|ph_ref|, |ph_hyp|)`, 0 when both are empty.
pub fn phonetic_distance(
    reference: &str,
    hypothesis: &str,
    g2p: &dyn GraphemeToPhoneme,
) -> Result<f64, G2pError> {
    let r = g2p.phonemes(reference)?;
    let h = g2p.phonemes(hypothesis)?;
    let denom = r.len().max(h.len());
    if denom == 0 {
        return Ok(0.0);
    }
    let edits = edit_counts(&r, &h).total_errors();
    Ok(edits as f64 / denom as f64)
}
