//! Text normalization and the character tokenizer used by the reference
//! backbone.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Normalizes raw text into scoring tokens: lowercase, strip punctuation
/// except intra-word apostrophes, collapse whitespace, split on spaces.
/// Idempotent.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let lower: Vec<char> = raw.chars().flat_map(char::to_lowercase).collect();
    let mut cleaned = String::with_capacity(lower.len());
    for (i, &c) in lower.iter().enumerate() {
        if c.is_alphanumeric() {
            cleaned.push(c);
        } else if c == '\''
            && i > 0
            && i + 1 < lower.len()
            && lower[i - 1].is_alphanumeric()
            && lower[i + 1].is_alphanumeric()
        {
            cleaned.push(c);
        } else {
            cleaned.push(' ');
        }
    }
    cleaned
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// Joined normalized form, convenient for equality checks.
pub fn normalize_joined(raw: &str) -> String {
    normalize_text(raw).join(" ")
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Character-level tokenizer over a fixed charset, with PAD/BOS/EOS/UNK
/// reserved at ids 0..=3.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharTokenizer {
    charset: Vec<char>,
}

impl Default for CharTokenizer {
    fn default() -> Self {
        CharTokenizer {
            charset: " abcdefghijklmnopqrstuvwxyz'".chars().collect(),
        }
    }
}

impl CharTokenizer {
    pub fn new(charset: &str) -> Self {
        CharTokenizer {
            charset: charset.chars().collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        4 + self.charset.len()
    }

    /// Token ids for the normalized text, without BOS/EOS.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        normalize_joined(text)
            .chars()
            .map(|c| {
                self.charset
                    .iter()
                    .position(|&x| x == c)
                    .map_or(UNK, |i| i + 4)
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        for &t in tokens {
            if t == EOS {
                break;
            }
            if t >= 4 && t - 4 < self.charset.len() {
                out.push(self.charset[t - 4]);
            }
        }
        out
    }
}
