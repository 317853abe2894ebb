//! Waveform-to-feature conversion and SpecAugment-style masking.
//!
//! Features are log mel-filterbank energies on the HTK mel scale
//! (`mel = 2595 * log10(1 + f/700)`), computed with a Hann window and a
//! naive real DFT (desk-scale inputs only). Energies are floored at
//! [`FrontendConfig::energy_floor`] before the natural log, so an all-zero
//! waveform maps to a constant `ln(energy_floor)` matrix and scaling a
//! waveform by `c > 0` shifts every un-floored entry by `2*ln(c)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mathutil;
use crate::tensor::Mat;

pub const DEFAULT_ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    #[serde(default = "default_energy_floor")]
    pub energy_floor: f64,
}

fn default_energy_floor() -> f64 {
    DEFAULT_ENERGY_FLOOR
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            n_mels: 80,
            window_ms: 25.0,
            hop_ms: 10.0,
            energy_floor: DEFAULT_ENERGY_FLOOR,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0) as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0) as usize
    }
}

/// `T x F` log-mel frames (rows are time steps, columns are mel bins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub frames: Mat,
    pub frame_shift_ms: f64,
    pub sample_rate: u32,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    Zero,
    PerUtteranceMean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecAugmentPolicy {
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub fill: MaskFill,
}

impl Default for SpecAugmentPolicy {
    /// LibriSpeech-style defaults: 2 frequency masks of width <= 27 bins and
    /// 2 time masks of width <= 100 frames, zero fill.
    fn default() -> Self {
        SpecAugmentPolicy {
            num_freq_masks: 2,
            max_freq_width: 27,
            num_time_masks: 2,
            max_time_width: 100,
            fill: MaskFill::Zero,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FrontendError {
    #[error("waveform has {got} samples, shorter than one {window}-sample analysis window")]
    WaveformTooShort { got: usize, window: usize },
    #[error("empty waveform")]
    EmptyWaveform,
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * mathutil::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (mathutil::powf(10.0, mel / 2595.0) - 1.0)
}

/// Center frequency in Hz of mel bin `m` (0-based) for the given config.
/// Exposed so tests can place a sine exactly on a bin center.
pub fn mel_bin_center_hz(config: &FrontendConfig, bin: usize) -> f64 {
    let max_mel = hz_to_mel(config.sample_rate as f64 / 2.0);
    let step = max_mel / (config.n_mels + 1) as f64;
    mel_to_hz(step * (bin + 1) as f64)
}

/// Triangular mel filterbank over the one-sided power spectrum.
fn mel_filterbank(config: &FrontendConfig, n_fft_bins: usize) -> Vec<Vec<f64>> {
    let nyquist = config.sample_rate as f64 / 2.0;
    let max_mel = hz_to_mel(nyquist);
    let step = max_mel / (config.n_mels + 1) as f64;
    let edges_hz: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(step * i as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * nyquist / (n_fft_bins - 1) as f64;

    let mut filters = vec![vec![0.0; n_fft_bins]; config.n_mels];
    for m in 0..config.n_mels {
        let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        for k in 0..n_fft_bins {
            let f = bin_hz(k);
            if f > lo && f < mid {
                filters[m][k] = (f - lo) / (mid - lo);
            } else if f >= mid && f < hi {
                filters[m][k] = (hi - f) / (hi - mid);
            }
        }
    }
    filters
}

/// Converts a mono waveform into log-mel features.
///
/// Frame count follows `T = 1 + floor((len - window) / hop)`.
pub fn log_mel(waveform: &[f64], config: &FrontendConfig) -> Result<FeatureMatrix, FrontendError> {
    if waveform.is_empty() {
        return Err(FrontendError::EmptyWaveform);
    }
    let window = config.window_samples();
    let hop = config.hop_samples();
    if waveform.len() < window {
        return Err(FrontendError::WaveformTooShort {
            got: waveform.len(),
            window,
        });
    }
    let num_frames = 1 + (waveform.len() - window) / hop;
    let n_fft_bins = window / 2 + 1;
    let filters = mel_filterbank(config, n_fft_bins);

    let hann: Vec<f64> = (0..window)
        .map(|n| 0.5 - 0.5 * mathutil::cos(2.0 * core::f64::consts::PI * n as f64 / window as f64))
        .collect();

    let mut frames = Mat::zeros(num_frames, config.n_mels);
    let mut windowed = vec![0.0; window];
    for t in 0..num_frames {
        let start = t * hop;
        for n in 0..window {
            windowed[n] = waveform[start + n] * hann[n];
        }
        // Naive real DFT; window sizes here are a few hundred samples.
        let mut power = vec![0.0; n_fft_bins];
        for k in 0..n_fft_bins {
            let (mut re, mut im) = (0.0, 0.0);
            let w = 2.0 * core::f64::consts::PI * k as f64 / window as f64;
            for n in 0..window {
                let phase = w * n as f64;
                re += windowed[n] * mathutil::cos(phase);
                im -= windowed[n] * mathutil::sin(phase);
            }
            power[k] = re * re + im * im;
        }
        for m in 0..config.n_mels {
            let energy: f64 = filters[m]
                .iter()
                .zip(&power)
                .map(|(f, p)| f * p)
                .sum();
            frames.set(t, m, mathutil::ln(energy.max(config.energy_floor)));
        }
    }

    Ok(FeatureMatrix {
        frames,
        frame_shift_ms: config.hop_ms,
        sample_rate: config.sample_rate,
    })
}

/// Applies time and frequency masking. For each mask, the width is drawn
/// uniformly from `{0, ..., max_width}` (clamped to the matrix dimension) and
/// the start uniformly from `{0, ..., dim - width}`. Deterministic per seed.
pub fn spec_augment(
    features: &FeatureMatrix,
    policy: &SpecAugmentPolicy,
    seed: u64,
) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = features.frames.rows();
    let f = features.frames.cols();
    let fill = match policy.fill {
        MaskFill::Zero => 0.0,
        MaskFill::PerUtteranceMean => {
            features.frames.data().iter().sum::<f64>() / (t * f) as f64
        }
    };

    let mut out = features.clone();
    for _ in 0..policy.num_freq_masks {
        let max_w = policy.max_freq_width.min(f);
        let w = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=f - w);
        for row in 0..t {
            for col in start..start + w {
                out.frames.set(row, col, fill);
            }
        }
    }
    for _ in 0..policy.num_time_masks {
        let max_w = policy.max_time_width.min(t);
        let w = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=t - w);
        for row in start..start + w {
            for col in 0..f {
                out.frames.set(row, col, fill);
            }
        }
    }
    out
}
