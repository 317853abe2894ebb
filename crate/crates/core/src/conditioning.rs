//! Personalization: pooled audio embeddings, per-source two-layer mapping
//! networks (tanh hidden layer, dropout 0.1 during training), and prefix
//! concatenation into the decoder's cross-attention memory.
//!
//! Conditioning rows are prepended to the encoder-output memory in registry
//! order and carry no positional encoding. They are computed once per
//! utterance, not per decode step.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{TRef, Tape};
use crate::backbone::{LatentSequence, PassState};
use crate::mathutil;
use crate::tensor::Mat;

pub const DEFAULT_MAPPING_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioEmbedding {
    pub vector: Vec<f64>,
    pub source: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConditioningError {
    #[error("cannot pool an empty frame sequence")]
    EmptyFrames,
    #[error("embedding from '{provider}' has {got} dims, expected {expected}")]
    DimensionMismatch {
        provider: String,
        expected: usize,
        got: usize,
    },
    #[error("conditioning vector has width {got}, memory width is {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("extractor client '{provider}' failed: {message}")]
    Client { provider: String, message: String },
}

/// Arithmetic mean over the rows of a `U x a` frame matrix.
pub fn pool_embedding(frames: &Mat) -> Result<Vec<f64>, ConditioningError> {
    if frames.rows() == 0 {
        return Err(ConditioningError::EmptyFrames);
    }
    let mut mean = alloc::vec![0.0; frames.cols()];
    for r in 0..frames.rows() {
        for (m, &v) in mean.iter_mut().zip(frames.row(r)) {
            *m += v;
        }
    }
    let n = frames.rows() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// Two-layer projection into the backbone width:
/// `e' = W2 * tanh(W1 * e + b1) + b2`, dropout on the hidden activation
/// during training only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingNetwork {
    /// `h x a`
    pub w1: Mat,
    /// `1 x h`
    pub b1: Mat,
    /// `b x h`
    pub w2: Mat,
    /// `1 x b`
    pub b2: Mat,
    pub dropout_p: f64,
}

impl MappingNetwork {
    pub fn new(input_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |r: usize, c: usize| {
            let limit = mathutil::sqrt(6.0 / (r + c) as f64);
            Mat::from_fn(r, c, |_, _| rng.random_range(-limit..limit))
        };
        MappingNetwork {
            w1: init(hidden, input_dim),
            b1: Mat::zeros(1, hidden),
            w2: init(output_dim, hidden),
            b2: Mat::zeros(1, output_dim),
            dropout_p: DEFAULT_MAPPING_DROPOUT,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        MappingNetwork {
            w1: Mat::zeros(hidden, input_dim),
            b1: Mat::zeros(1, hidden),
            w2: Mat::zeros(output_dim, hidden),
            b2: Mat::zeros(1, output_dim),
            dropout_p: DEFAULT_MAPPING_DROPOUT,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn param_names(source: &str) -> [String; 4] {
        [
            format!("mapping.{source}.w1"),
            format!("mapping.{source}.b1"),
            format!("mapping.{source}.w2"),
            format!("mapping.{source}.b2"),
        ]
    }

    pub fn param(&self, field: &str) -> Option<&Mat> {
        match field {
            "w1" => Some(&self.w1),
            "b1" => Some(&self.b1),
            "w2" => Some(&self.w2),
            "b2" => Some(&self.b2),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, field: &str) -> Option<&mut Mat> {
        match field {
            "w1" => Some(&mut self.w1),
            "b1" => Some(&mut self.b1),
            "w2" => Some(&mut self.w2),
            "b2" => Some(&mut self.b2),
            _ => None,
        }
    }

    /// Binds the four parameter tensors through the pass's named-leaf cache
    /// under `mapping.{source}.*`.
    pub fn bind(&self, ps: &mut PassState, source: &str, trainable: bool) -> BoundMapping {
        let [n1, n2, n3, n4] = Self::param_names(source);
        BoundMapping {
            w1: ps.bind_named(&n1, &self.w1, trainable),
            b1: ps.bind_named(&n2, &self.b1, trainable),
            w2: ps.bind_named(&n3, &self.w2, trainable),
            b2: ps.bind_named(&n4, &self.b2, trainable),
            dropout_p: self.dropout_p,
        }
    }
}

/// Tape-bound mapping network.
#[derive(Debug, Clone, Copy)]
pub struct BoundMapping {
    pub w1: TRef,
    pub b1: TRef,
    pub w2: TRef,
    pub b2: TRef,
    dropout_p: f64,
}

impl BoundMapping {
    /// Forward on the tape. `embedding` must be a `1 x a` node.
    pub fn forward(&self, ps: &mut PassState, embedding: TRef) -> TRef {
        let h = ps.tape.matmul_transb(embedding, self.w1);
        let h = ps.tape.add_row_broadcast(h, self.b1);
        let mut h = ps.tape.tanh(h);
        if ps.training && self.dropout_p > 0.0 {
            let p = self.dropout_p;
            let rows = ps.tape.value(h).rows() * ps.tape.value(h).cols();
            let draws: Vec<bool> = (0..rows).map(|_| ps.dropout_keep(p)).collect();
            let mut it = draws.into_iter();
            h = ps.tape.dropout(h, p, move || it.next().unwrap());
        }
        let o = ps.tape.matmul_transb(h, self.w2);
        ps.tape.add_row_broadcast(o, self.b2)
    }
}

/// Plain (non-tape) evaluation of the mapping network.
pub fn map_embedding(
    embedding: &AudioEmbedding,
    net: &MappingNetwork,
    training: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>, ConditioningError> {
    if embedding.vector.len() != net.input_dim() {
        return Err(ConditioningError::DimensionMismatch {
            provider: embedding.source.clone(),
            expected: net.input_dim(),
            got: embedding.vector.len(),
        });
    }
    let h = net.w1.rows();
    let mut hidden = alloc::vec![0.0; h];
    for i in 0..h {
        let mut acc = net.b1.get(0, i);
        for j in 0..net.input_dim() {
            acc += net.w1.get(i, j) * embedding.vector[j];
        }
        hidden[i] = mathutil::tanh(acc);
    }
    if training && net.dropout_p > 0.0 {
        let rng = dropout_rng.expect("training-mode mapping needs a dropout rng");
        let scale = 1.0 / (1.0 - net.dropout_p);
        for v in &mut hidden {
            if rng.random::<f64>() < net.dropout_p {
                *v = 0.0;
            } else {
                *v *= scale;
            }
        }
    }
    let b = net.output_dim();
    let mut out = alloc::vec![0.0; b];
    for i in 0..b {
        let mut acc = net.b2.get(0, i);
        for j in 0..h {
            acc += net.w2.get(i, j) * hidden[j];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Prepends mapped vectors (registry order) to the memory rows.
pub fn condition(
    memory: &LatentSequence,
    embeddings: &[Vec<f64>],
) -> Result<LatentSequence, ConditioningError> {
    let b = memory.vectors.cols();
    let n = embeddings.len();
    let m = memory.vectors.rows();
    let mut out = Mat::zeros(n + m, b);
    for (i, e) in embeddings.iter().enumerate() {
        if e.len() != b {
            return Err(ConditioningError::WidthMismatch {
                expected: b,
                got: e.len(),
            });
        }
        for (c, &v) in e.iter().enumerate() {
            out.set(i, c, v);
        }
    }
    for r in 0..m {
        for c in 0..b {
            out.set(n + r, c, memory.vectors.get(r, c));
        }
    }
    Ok(LatentSequence { vectors: out })
}

/// Tape-side conditioning used during training: concat mapped `1 x b` nodes
/// ahead of the memory node.
pub fn condition_refs(tape: &mut Tape, memory: TRef, mapped: &[TRef]) -> TRef {
    if mapped.is_empty() {
        return memory;
    }
    let mut parts: Vec<TRef> = mapped.to_vec();
    parts.push(memory);
    tape.concat_rows(&parts)
}

/// What an extractor client returns: either an already-pooled vector or a
/// frame sequence that still needs pooling.
pub enum ExtractorOutput {
    Vector(Vec<f64>),
    Frames(Mat),
}

/// A pretrained embedding model behind a uniform interface (x-vector
/// extractor, representation-layer dump, or a deterministic stub).
pub trait EmbeddingExtractor: Send + Sync {
    fn source(&self) -> &str;
    /// Declared output dimension `a_i`.
    fn dim(&self) -> usize;
    fn extract(&self, waveform: &[f64]) -> Result<ExtractorOutput, String>;
    /// Whether concurrent calls are safe, or callers must serialize.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Runs the client, pools frame outputs, and validates the dimension.
pub fn extract_embedding(
    client: &dyn EmbeddingExtractor,
    waveform: &[f64],
) -> Result<AudioEmbedding, ConditioningError> {
    let out = client
        .extract(waveform)
        .map_err(|message| ConditioningError::Client {
            provider: client.source().into(),
            message,
        })?;
    let vector = match out {
        ExtractorOutput::Vector(v) => v,
        ExtractorOutput::Frames(frames) => pool_embedding(&frames)?,
    };
    if vector.len() != client.dim() {
        return Err(ConditioningError::DimensionMismatch {
            provider: client.source().into(),
            expected: client.dim(),
            got: vector.len(),
        });
    }
    Ok(AudioEmbedding {
        vector,
        source: client.source().into(),
    })
}

/// Ordered providers; the order defines the concatenation order of the
/// conditioning rows and is recorded in checkpoints.
pub struct EmbeddingProviderRegistry {
    pub providers: Vec<Provider>,
}

pub struct Provider {
    pub extractor: Box<dyn EmbeddingExtractor>,
    pub mapping: MappingNetwork,
}

impl EmbeddingProviderRegistry {
    pub fn empty() -> Self {
        EmbeddingProviderRegistry {
            providers: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.providers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.providers.is_empty()
    }

    pub fn sources(&self) -> Vec<String> {
        self.providers
            .iter()
            .map(|p| p.extractor.source().into())
            .collect()
    }

    /// Extract + pool + map every source for one waveform (inference mode).
    pub fn mapped_embeddings(&self, waveform: &[f64]) -> Result<Vec<Vec<f64>>, ConditioningError> {
        self.providers
            .iter()
            .map(|p| {
                let e = extract_embedding(p.extractor.as_ref(), waveform)?;
                map_embedding(&e, &p.mapping, false, None)
            })
            .collect()
    }
}
