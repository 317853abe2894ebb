//! SemScore composite: weighted sum of a semantic similarity score, phonetic
//! similarity (one minus phonetic distance), and an entailment probability,
//! scaled to `[0, 100]`.
//!
//! The default equal weights are a stand-in; the challenge's true weights are
//! not published. Override them in the metrics config block.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemScoreWeights {
    pub w_semantic: f64,
    pub w_phonetic: f64,
    pub w_nli: f64,
}

impl Default for SemScoreWeights {
    fn default() -> Self {
        SemScoreWeights {
            w_semantic: 1.0 / 3.0,
            w_phonetic: 1.0 / 3.0,
            w_nli: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SemScoreError {
    #[error("weights must be non-negative and sum to 1 (got sum {0})")]
    NotASimplex(f64),
    #[error("component score {name} = {value} outside [0, 1]")]
    ComponentOutOfRange { name: &'static str, value: f64 },
}

impl SemScoreWeights {
    pub fn validate(&self) -> Result<(), SemScoreError> {
        let sum = self.w_semantic + self.w_phonetic + self.w_nli;
        if self.w_semantic < 0.0
            || self.w_phonetic < 0.0
            || self.w_nli < 0.0
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(SemScoreError::NotASimplex(sum));
        }
        Ok(())
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), SemScoreError> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(SemScoreError::ComponentOutOfRange { name, value });
    }
    Ok(())
}

/// `100 * (w_sem * s_sem + w_phon * (1 - d_phon) + w_nli * s_nli)`.
pub fn combine(
    semantic_score: f64,
    phonetic_distance: f64,
    nli_probability: f64,
    weights: &SemScoreWeights,
) -> Result<f64, SemScoreError> {
    weights.validate()?;
    check_unit("semantic", semantic_score)?;
    check_unit("phonetic_distance", phonetic_distance)?;
    check_unit("nli", nli_probability)?;
    Ok(100.0
        * (weights.w_semantic * semantic_score
            + weights.w_phonetic * (1.0 - phonetic_distance)
            + weights.w_nli * nli_probability))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_components_score_100() {
        let s = combine(1.0, 0.0, 1.0, &SemScoreWeights::default()).unwrap();
        assert!((s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn projection_weights() {
        let w = SemScoreWeights {
            w_semantic: 1.0,
            w_phonetic: 0.0,
            w_nli: 0.0,
        };
        assert!((combine(0.5, 0.9, 0.1, &w).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_weights_rejected() {
        let w = SemScoreWeights {
            w_semantic: 0.9,
            w_phonetic: 0.9,
            w_nli: -0.8,
        };
        assert!(matches!(
            combine(0.5, 0.5, 0.5, &w),
            Err(SemScoreError::NotASimplex(_))
        ));
    }

    #[test]
    fn out_of_range_component_rejected() {
        assert!(matches!(
            combine(1.5, 0.0, 0.5, &SemScoreWeights::default()),
            Err(SemScoreError::ComponentOutOfRange { name: "semantic", .. })
        ));
    }

    proptest! {
        #[test]
        fn result_in_unit_range(
            s in 0.0f64..=1.0,
            d in 0.0f64..=1.0,
            n in 0.0f64..=1.0,
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            // Random simplex point.
            let (mut lo, mut hi) = (a.min(b), a.max(b));
            if hi - lo < 0.0 { core::mem::swap(&mut lo, &mut hi); }
            let w = SemScoreWeights { w_semantic: lo, w_phonetic: hi - lo, w_nli: 1.0 - hi };
            let v = combine(s, d, n, &w).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
        }

        /// Monotone non-increasing in phonetic distance, other inputs fixed.
        #[test]
        fn monotone_in_phonetic_distance(
            s in 0.0f64..=1.0,
            n in 0.0f64..=1.0,
            d1 in 0.0f64..=1.0,
            d2 in 0.0f64..=1.0,
        ) {
            let w = SemScoreWeights::default();
            let (lo, hi) = (d1.min(d2), d1.max(d2));
            let v_lo = combine(s, lo, n, &w).unwrap();
            let v_hi = combine(s, hi, n, &w).unwrap();
            prop_assert!(v_hi <= v_lo + 1e-9);
        }
    }
}
