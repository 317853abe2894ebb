//! 16-bit PCM mono WAV IO. Samples are f64 in [-1, 1] in memory.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("{path}: expected mono audio, got {channels} channels")]
    NotMono { path: String, channels: u16 },
    #[error("{path}: sample rate {got} does not match expected {expected}")]
    SampleRateMismatch {
        path: String,
        expected: u32,
        got: u32,
    },
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    // Scale by 32768 on both paths so a round trip only loses the rounding
    // half-step.
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round();
        writer.write_sample(q.clamp(i16::MIN as f64, i16::MAX as f64) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::NotMono {
            path: path.display().to_string(),
            channels: spec.channels,
        });
    }
    let samples: Result<Vec<f64>, _> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let denom = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / denom))
                .collect()
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect(),
    };
    Ok((samples?, spec.sample_rate))
}

/// Reads a wav and checks the sample rate against the pipeline's.
pub fn read_wav_expecting(path: &Path, sample_rate: u32) -> Result<Vec<f64>, AudioError> {
    let (samples, sr) = read_wav(path)?;
    if sr != sample_rate {
        return Err(AudioError::SampleRateMismatch {
            path: path.display().to_string(),
            expected: sample_rate,
            got: sr,
        });
    }
    Ok(samples)
}
