//! Token edit distance and word error rate.
//!
//! Alignment uses unit costs. Where minimal-cost alignments differ, the
//! reported counts come from the alignment with the fewest insertions and
//! deletions, i.e. substitutions are preferred over insertion which is
//! preferred over deletion.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn total_errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn pool(&self, other: &EditCounts) -> EditCounts {
        EditCounts {
            substitutions: self.substitutions + other.substitutions,
            deletions: self.deletions + other.deletions,
            insertions: self.insertions + other.insertions,
            ref_len: self.ref_len + other.ref_len,
        }
    }

    pub fn pool_all<'a>(counts: impl IntoIterator<Item = &'a EditCounts>) -> EditCounts {
        counts
            .into_iter()
            .fold(EditCounts::default(), |acc, c| acc.pool(c))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("pooled reference length is zero")]
    EmptyReference,
}

/// Minimal-cost Levenshtein alignment counts between token sequences.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let n = reference.len();
    let m = hypothesis.len();

    // DP state per cell: (cost, insertions), minimized lexicographically.
    // Within a cell, deletions - insertions = i - j is fixed, so minimizing
    // insertions determines the whole (S, D, I) split.
    let mut prev: alloc::vec::Vec<(usize, usize)> = (0..=m).map(|j| (j, j)).collect();
    let mut curr = prev.clone();
    for i in 1..=n {
        curr[0] = (i, 0);
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = (prev[j - 1].0 + sub_cost, prev[j - 1].1);
            let ins = (curr[j - 1].0 + 1, curr[j - 1].1 + 1);
            let del = (prev[j].0 + 1, prev[j].1);
            // Preference order on ties: substitution, insertion, deletion.
            let mut best = diag;
            if ins < best {
                best = ins;
            }
            if del < best {
                best = del;
            }
            curr[j] = best;
        }
        core::mem::swap(&mut prev, &mut curr);
    }

    let (cost, insertions) = prev[m];
    // Along any alignment, deletions - insertions = n - m.
    let deletions = (insertions as isize + n as isize - m as isize) as usize;
    let substitutions = cost - insertions - deletions;
    EditCounts {
        substitutions,
        deletions,
        insertions,
        ref_len: n,
    }
}

/// Pooled WER in percent: `100 * (S + D + I) / Nref`.
pub fn wer(counts: &EditCounts) -> Result<f64, MetricsError> {
    if counts.ref_len == 0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok(100.0 * counts.total_errors() as f64 / counts.ref_len as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec::Vec;

    /// Brute-force oracle: enumerate every alignment path, take the minimal
    /// cost, and among minimal-cost paths the minimal insertion count.
    fn brute_force(reference: &[u8], hypothesis: &[u8]) -> EditCounts {
        fn walk(
            r: &[u8],
            h: &[u8],
            i: usize,
            j: usize,
            s: usize,
            d: usize,
            ins: usize,
            best: &mut Option<(usize, usize)>,
        ) {
            if i == r.len() && j == h.len() {
                let cand = (s + d + ins, ins);
                if best.is_none() || cand < best.unwrap() {
                    *best = Some(cand);
                }
                return;
            }
            if i < r.len() && j < h.len() {
                let sc = usize::from(r[i] != h[j]);
                walk(r, h, i + 1, j + 1, s + sc, d, ins, best);
            }
            if i < r.len() {
                walk(r, h, i + 1, j, s, d + 1, ins, best);
            }
            if j < h.len() {
                walk(r, h, i, j + 1, s, d, ins + 1, best);
            }
        }
        let mut best = None;
        walk(reference, hypothesis, 0, 0, 0, 0, 0, &mut best);
        let (cost, insertions) = best.unwrap();
        let deletions =
            (insertions as isize + reference.len() as isize - hypothesis.len() as isize) as usize;
        EditCounts {
            substitutions: cost - insertions - deletions,
            deletions,
            insertions,
            ref_len: reference.len(),
        }
    }

    #[test]
    fn identical_sequences() {
        let c = edit_counts(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!(c.total_errors(), 0);
        assert_eq!(wer(&c).unwrap(), 0.0);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let c = edit_counts::<u8>(&[1, 2, 3, 4], &[]);
        assert_eq!(
            c,
            EditCounts {
                substitutions: 0,
                deletions: 4,
                insertions: 0,
                ref_len: 4
            }
        );
        assert_eq!(wer(&c).unwrap(), 100.0);
    }

    #[test]
    fn swap_prefers_substitutions() {
        // "ab" vs "ba": cost 2 via two substitutions, not del+ins.
        let c = edit_counts(b"ab", b"ba");
        assert_eq!(c.substitutions, 2);
        assert_eq!(c.deletions, 0);
        assert_eq!(c.insertions, 0);
    }

    #[test]
    fn wer_arithmetic() {
        let c = EditCounts {
            substitutions: 1,
            deletions: 0,
            insertions: 0,
            ref_len: 3,
        };
        assert!((wer(&c).unwrap() - 33.333333).abs() < 1e-4);
    }

    #[test]
    fn pooled_wer_differs_from_naive_mean() {
        let a = EditCounts {
            substitutions: 1,
            deletions: 0,
            insertions: 0,
            ref_len: 10,
        };
        let b = EditCounts {
            substitutions: 3,
            deletions: 0,
            insertions: 0,
            ref_len: 5,
        };
        let pooled = wer(&a.pool(&b)).unwrap();
        assert!((pooled - 26.666667).abs() < 1e-4);
        let naive = (wer(&a).unwrap() + wer(&b).unwrap()) / 2.0;
        assert!((naive - 35.0).abs() < 1e-9);
        assert!((pooled - naive).abs() > 1.0);
    }

    #[test]
    fn zero_reference_is_an_error() {
        assert_eq!(
            wer(&EditCounts::default()).unwrap_err(),
            MetricsError::EmptyReference
        );
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..500 {
            let nl = (next() % 7) as usize;
            let ml = (next() % 7) as usize;
            let r: Vec<u8> = (0..nl).map(|_| (next() % 3) as u8).collect();
            let h: Vec<u8> = (0..ml).map(|_| (next() % 3) as u8).collect();
            assert_eq!(edit_counts(&r, &h), brute_force(&r, &h), "r={r:?} h={h:?}");
        }
    }

    proptest! {
        /// Triangle inequality on total edit distance.
        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
            c in proptest::collection::vec(0u8..3, 0..6),
        ) {
            let ab = edit_counts(&a, &b).total_errors();
            let bc = edit_counts(&b, &c).total_errors();
            let ac = edit_counts(&a, &c).total_errors();
            prop_assert!(ac <= ab + bc);
        }

        /// Duplicating every utterance leaves pooled WER unchanged.
        #[test]
        fn pooled_wer_is_scale_free(
            counts in proptest::collection::vec((0usize..5, 0usize..5, 0usize..5, 1usize..20), 1..8)
        ) {
            let parts: Vec<EditCounts> = counts.iter().map(|&(s, d, i, n)| EditCounts {
                substitutions: s.min(n),
                deletions: d.min(n.saturating_sub(s.min(n))),
                insertions: i,
                ref_len: n,
            }).collect();
            let once = wer(&EditCounts::pool_all(&parts)).unwrap();
            let doubled: Vec<EditCounts> = parts.iter().chain(parts.iter()).copied().collect();
            let twice = wer(&EditCounts::pool_all(&doubled)).unwrap();
            prop_assert!((once - twice).abs() < 1e-12);
        }
    }
}
