//! Reference encoder-decoder transformer, small enough to train on a laptop
//! yet shaped like the real thing: log-mel frames in, factor-2 subsampling,
//! pre-LN self/cross attention, teacher-forced decoding.
//!
//! Subsampling is a kernel-3 stride-2 strided convolution over time with the
//! last frame repeated once, which yields exactly `M = floor(T/2)` output
//! rows for every `T >= 2`.
//!
//! Attention query/value projections are named sites
//! (`encoder.{i}.attn.query`, `decoder.{i}.self_attn.value`, ...) so the
//! adapter machinery can attach deltas without knowing layer internals.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{TRef, Tape};
use crate::frontend::FeatureMatrix;
use crate::mathutil;
use crate::tensor::Mat;
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Model width `b`.
    pub width: usize,
    /// Encoder input feature count (mel bins).
    pub n_mels: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub ffn_hidden: usize,
    pub max_decode_len: usize,
    #[serde(default = "default_bos")]
    pub bos_id: usize,
    #[serde(default = "default_eos")]
    pub eos_id: usize,
    #[serde(default = "default_pad")]
    pub pad_id: usize,
}

fn default_bos() -> usize {
    text::BOS
}
fn default_eos() -> usize {
    text::EOS
}
fn default_pad() -> usize {
    text::PAD
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(BackboneError::WidthNotDivisibleByHeads {
                width: self.width,
                heads: self.heads,
            });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BackboneError {
    #[error("model width {width} not divisible by head count {heads}")]
    WidthNotDivisibleByHeads { width: usize, heads: usize },
    #[error("feature matrix has {got} bins, model expects {expected}")]
    FeatureBinMismatch { got: usize, expected: usize },
    #[error("need at least 2 input frames, got {0}")]
    TooFewFrames(usize),
    #[error("prefix must begin with BOS")]
    PrefixMissingBos,
    #[error("prefix length {got} exceeds max decode length {max}")]
    PrefixTooLong { got: usize, max: usize },
    #[error("memory must be non-empty")]
    EmptyMemory,
}

/// Encoder output (possibly with conditioning rows prepended): `M x b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    pub vectors: Mat,
}

/// Next-token distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probabilities: Vec<f64>,
}

impl TokenDistribution {
    /// Argmax token id, ties broken by lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-forward state: the tape, bound parameter leaves, and dropout plumbing.
pub struct PassState {
    pub tape: Tape,
    leaves: BTreeMap<String, TRef>,
    /// FFT mode: backbone parameters become trainable leaves.
    pub train_backbone: bool,
    pub training: bool,
    pub rng: Option<ChaCha8Rng>,
}

impl PassState {
    pub fn inference() -> Self {
        PassState {
            tape: Tape::new(),
            leaves: BTreeMap::new(),
            train_backbone: false,
            training: false,
            rng: None,
        }
    }

    pub fn training(train_backbone: bool, dropout_seed: u64) -> Self {
        PassState {
            tape: Tape::new(),
            leaves: BTreeMap::new(),
            train_backbone,
            training: true,
            rng: Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        }
    }

    /// Draws one keep/drop decision for inverted dropout.
    pub fn dropout_keep(&mut self, p: f64) -> bool {
        match &mut self.rng {
            Some(rng) => rng.random::<f64>() >= p,
            None => true,
        }
    }

    /// Binds a named tensor onto the tape exactly once per pass. Repeated
    /// binds return the cached node, so gradients for a parameter always
    /// accumulate into a single leaf.
    pub fn bind_named(&mut self, name: &str, value: &Mat, trainable: bool) -> TRef {
        if let Some(&r) = self.leaves.get(name) {
            return r;
        }
        let r = if trainable {
            self.tape.leaf(value.clone())
        } else {
            self.tape.constant(value.clone())
        };
        self.leaves.insert(name.into(), r);
        r
    }

    /// The tape leaf bound to a named backbone parameter, if it was touched
    /// during the forward pass.
    pub fn bound_leaf(&self, name: &str) -> Option<TRef> {
        self.leaves.get(name).copied()
    }

    pub fn bound_names(&self) -> impl Iterator<Item = (&String, TRef)> {
        self.leaves.iter().map(|(n, r)| (n, *r))
    }
}

/// Adapter attachment point. `x` is the projection input (already
/// layer-normed), `base` the frozen projection output.
pub trait ProjectionHook {
    fn apply(&self, site: &str, x: TRef, base: TRef, ps: &mut PassState) -> TRef;
}

/// No adapters: every site returns the base projection.
pub struct NoHook;

impl ProjectionHook for NoHook {
    fn apply(&self, _site: &str, _x: TRef, base: TRef, _ps: &mut PassState) -> TRef {
        base
    }
}

/// Weights are stored `(in x out)` so projections are plain `x * W + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyBackbone {
    pub config: BackboneConfig,
    pub params: BTreeMap<String, Mat>,
}

fn linear_shapes(prefix: &str, d_in: usize, d_out: usize, out: &mut Vec<(String, usize, usize)>) {
    out.push((format!("{prefix}.weight"), d_in, d_out));
    out.push((format!("{prefix}.bias"), 1, d_out));
}

fn ln_shapes(prefix: &str, d: usize, out: &mut Vec<(String, usize, usize)>) {
    out.push((format!("{prefix}.gain"), 1, d));
    out.push((format!("{prefix}.bias"), 1, d));
}

impl ToyBackbone {
    /// Canonical parameter names and shapes, in deterministic order.
    pub fn param_shapes(config: &BackboneConfig) -> Vec<(String, usize, usize)> {
        let b = config.width;
        let mut v = Vec::new();
        linear_shapes("encoder.subsample", 3 * config.n_mels, b, &mut v);
        for i in 0..config.encoder_layers {
            ln_shapes(&format!("encoder.{i}.ln1"), b, &mut v);
            for proj in ["query", "key", "value", "out"] {
                linear_shapes(&format!("encoder.{i}.attn.{proj}"), b, b, &mut v);
            }
            ln_shapes(&format!("encoder.{i}.ln2"), b, &mut v);
            linear_shapes(&format!("encoder.{i}.ffn.w1"), b, config.ffn_hidden, &mut v);
            linear_shapes(&format!("encoder.{i}.ffn.w2"), config.ffn_hidden, b, &mut v);
        }
        ln_shapes("encoder.ln_final", b, &mut v);
        v.push(("decoder.embed.weight".into(), config.vocab_size, b));
        for i in 0..config.decoder_layers {
            ln_shapes(&format!("decoder.{i}.ln1"), b, &mut v);
            for proj in ["query", "key", "value", "out"] {
                linear_shapes(&format!("decoder.{i}.self_attn.{proj}"), b, b, &mut v);
            }
            ln_shapes(&format!("decoder.{i}.ln2"), b, &mut v);
            for proj in ["query", "key", "value", "out"] {
                linear_shapes(&format!("decoder.{i}.cross_attn.{proj}"), b, b, &mut v);
            }
            ln_shapes(&format!("decoder.{i}.ln3"), b, &mut v);
            linear_shapes(&format!("decoder.{i}.ffn.w1"), b, config.ffn_hidden, &mut v);
            linear_shapes(&format!("decoder.{i}.ffn.w2"), config.ffn_hidden, b, &mut v);
        }
        ln_shapes("decoder.ln_final", b, &mut v);
        linear_shapes("decoder.output", b, config.vocab_size, &mut v);
        v
    }

    /// Names of adapter attachment sites (self-attention query/value
    /// projections of every block).
    pub fn site_names(config: &BackboneConfig) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..config.encoder_layers {
            v.push(format!("encoder.{i}.attn.query"));
            v.push(format!("encoder.{i}.attn.value"));
        }
        for i in 0..config.decoder_layers {
            v.push(format!("decoder.{i}.self_attn.query"));
            v.push(format!("decoder.{i}.self_attn.value"));
        }
        v
    }

    /// Seeded Xavier-uniform initialization; LN gains start at 1.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self, BackboneError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, r, c) in Self::param_shapes(&config) {
            let mat = if name.ends_with(".gain") {
                Mat::from_fn(r, c, |_, _| 1.0)
            } else if name.ends_with(".bias") {
                Mat::zeros(r, c)
            } else {
                let limit = mathutil::sqrt(6.0 / (r + c) as f64);
                Mat::from_fn(r, c, |_, _| rng.random_range(-limit..limit))
            };
            params.insert(name, mat);
        }
        Ok(ToyBackbone { config, params })
    }

    /// Every parameter zero, including LN gains. With this model all logits
    /// are zero, so every token distribution is uniform.
    pub fn zeros(config: BackboneConfig) -> Result<Self, BackboneError> {
        config.validate()?;
        let params = Self::param_shapes(&config)
            .into_iter()
            .map(|(name, r, c)| (name, Mat::zeros(r, c)))
            .collect();
        Ok(ToyBackbone { config, params })
    }

    fn param(&self, ps: &mut PassState, name: &str) -> TRef {
        let mat = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let trainable = ps.train_backbone;
        ps.bind_named(name, mat, trainable)
    }

    fn linear(&self, ps: &mut PassState, x: TRef, prefix: &str) -> TRef {
        let w = self.param(ps, &format!("{prefix}.weight"));
        let b = self.param(ps, &format!("{prefix}.bias"));
        let y = ps.tape.matmul(x, w);
        ps.tape.add_row_broadcast(y, b)
    }

    fn layer_norm(&self, ps: &mut PassState, x: TRef, prefix: &str) -> TRef {
        let g = self.param(ps, &format!("{prefix}.gain"));
        let b = self.param(ps, &format!("{prefix}.bias"));
        ps.tape.layer_norm_rows(x, g, b, 1e-5)
    }

    /// Multi-head attention. `site_prefix` hosts the hookable query/value
    /// sites; `kv` supplies keys and values (equal to `q_src` for self
    /// attention).
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        ps: &mut PassState,
        hook: &dyn ProjectionHook,
        q_src: TRef,
        kv: TRef,
        site_prefix: &str,
        causal: bool,
    ) -> TRef {
        let heads = self.config.heads;
        let dh = self.config.width / heads;

        let q_base = self.linear(ps, q_src, &format!("{site_prefix}.query"));
        let q = hook.apply(&format!("{site_prefix}.query"), q_src, q_base, ps);
        let k = self.linear(ps, kv, &format!("{site_prefix}.key"));
        let v_base = self.linear(ps, kv, &format!("{site_prefix}.value"));
        let v = hook.apply(&format!("{site_prefix}.value"), kv, v_base, ps);

        let scale = 1.0 / mathutil::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = ps.tape.slice_cols(q, h * dh, dh);
            let kh = ps.tape.slice_cols(k, h * dh, dh);
            let vh = ps.tape.slice_cols(v, h * dh, dh);
            let s = ps.tape.matmul_transb(qh, kh);
            let s = ps.tape.scale(s, scale);
            let p = ps.tape.softmax_rows(s, causal);
            outs.push(ps.tape.matmul(p, vh));
        }
        let merged = ps.tape.concat_cols(&outs);
        self.linear(ps, merged, &format!("{site_prefix}.out"))
    }

    fn ffn(&self, ps: &mut PassState, x: TRef, prefix: &str) -> TRef {
        let h = self.linear(ps, x, &format!("{prefix}.w1"));
        let h = ps.tape.tanh(h);
        self.linear(ps, h, &format!("{prefix}.w2"))
    }

    fn positional(&self, rows: usize) -> Mat {
        let b = self.config.width;
        Mat::from_fn(rows, b, |p, i| {
            let pair = (i / 2) as f64;
            let angle = p as f64 / mathutil::powf(10_000.0, 2.0 * pair / b as f64);
            if i % 2 == 0 {
                mathutil::sin(angle)
            } else {
                mathutil::cos(angle)
            }
        })
    }

    /// Encoder forward on the tape. Returns the `floor(T/2) x b` memory node.
    pub fn forward_encoder(
        &self,
        ps: &mut PassState,
        hook: &dyn ProjectionHook,
        features: &Mat,
    ) -> Result<TRef, BackboneError> {
        if features.cols() != self.config.n_mels {
            return Err(BackboneError::FeatureBinMismatch {
                got: features.cols(),
                expected: self.config.n_mels,
            });
        }
        let t = features.rows();
        if t < 2 {
            return Err(BackboneError::TooFewFrames(t));
        }
        let m = t / 2;

        let x = ps.tape.constant(features.clone());
        // Repeat the last frame once, then take kernel-3 stride-2 windows:
        // exactly floor(T/2) of them for every T >= 2.
        let last = ps.tape.gather(x, &[t - 1]);
        let padded = ps.tape.concat_rows(&[x, last]);
        let idx = |off: usize| -> Vec<usize> { (0..m).map(|i| 2 * i + off).collect() };
        let w0 = ps.tape.gather(padded, &idx(0));
        let w1 = ps.tape.gather(padded, &idx(1));
        let w2 = ps.tape.gather(padded, &idx(2));
        let windows = ps.tape.concat_cols(&[w0, w1, w2]);
        let mut h = self.linear(ps, windows, "encoder.subsample");

        let pos = self.positional(m);
        let pos = ps.tape.constant(pos);
        h = ps.tape.add(h, pos);

        for i in 0..self.config.encoder_layers {
            let normed = self.layer_norm(ps, h, &format!("encoder.{i}.ln1"));
            let att = self.attention(ps, hook, normed, normed, &format!("encoder.{i}.attn"), false);
            h = ps.tape.add(h, att);
            let normed = self.layer_norm(ps, h, &format!("encoder.{i}.ln2"));
            let f = self.ffn(ps, normed, &format!("encoder.{i}.ffn"));
            h = ps.tape.add(h, f);
        }
        Ok(self.layer_norm(ps, h, "encoder.ln_final"))
    }

    /// Decoder forward: token prefix plus memory node, returns logits
    /// (`len(tokens) x V`). Self attention is causal, so position `i`'s
    /// logits depend only on `tokens[..=i]` and the memory.
    pub fn forward_decoder(
        &self,
        ps: &mut PassState,
        hook: &dyn ProjectionHook,
        memory: TRef,
        tokens: &[usize],
    ) -> Result<TRef, BackboneError> {
        if ps.tape.value(memory).rows() == 0 {
            return Err(BackboneError::EmptyMemory);
        }
        let embed = self.param(ps, "decoder.embed.weight");
        let mut h = ps.tape.gather(embed, tokens);
        let pos = self.positional(tokens.len());
        let pos = ps.tape.constant(pos);
        h = ps.tape.add(h, pos);

        for i in 0..self.config.decoder_layers {
            let normed = self.layer_norm(ps, h, &format!("decoder.{i}.ln1"));
            let att = self.attention(
                ps,
                hook,
                normed,
                normed,
                &format!("decoder.{i}.self_attn"),
                true,
            );
            h = ps.tape.add(h, att);
            let normed = self.layer_norm(ps, h, &format!("decoder.{i}.ln2"));
            let att = self.attention(
                ps,
                hook,
                normed,
                memory,
                &format!("decoder.{i}.cross_attn"),
                false,
            );
            h = ps.tape.add(h, att);
            let normed = self.layer_norm(ps, h, &format!("decoder.{i}.ln3"));
            let f = self.ffn(ps, normed, &format!("decoder.{i}.ffn"));
            h = ps.tape.add(h, f);
        }
        let h = self.layer_norm(ps, h, "decoder.ln_final");
        Ok(self.linear(ps, h, "decoder.output"))
    }

    /// Inference-mode encoding of a feature matrix.
    pub fn encode(&self, features: &FeatureMatrix) -> Result<LatentSequence, BackboneError> {
        self.encode_hooked(features, &NoHook)
    }

    pub fn encode_hooked(
        &self,
        features: &FeatureMatrix,
        hook: &dyn ProjectionHook,
    ) -> Result<LatentSequence, BackboneError> {
        let mut ps = PassState::inference();
        let mem = self.forward_encoder(&mut ps, hook, &features.frames)?;
        Ok(LatentSequence {
            vectors: ps.tape.value(mem).clone(),
        })
    }

    /// Next-token distribution for a BOS-prefixed token sequence.
    pub fn decode_step(
        &self,
        prefix: &[usize],
        memory: &LatentSequence,
    ) -> Result<TokenDistribution, BackboneError> {
        self.decode_step_hooked(prefix, memory, &NoHook)
    }

    pub fn decode_step_hooked(
        &self,
        prefix: &[usize],
        memory: &LatentSequence,
        hook: &dyn ProjectionHook,
    ) -> Result<TokenDistribution, BackboneError> {
        if prefix.first() != Some(&self.config.bos_id) {
            return Err(BackboneError::PrefixMissingBos);
        }
        if prefix.len() > self.config.max_decode_len {
            return Err(BackboneError::PrefixTooLong {
                got: prefix.len(),
                max: self.config.max_decode_len,
            });
        }
        let mut ps = PassState::inference();
        let mem = ps.tape.constant(memory.vectors.clone());
        let logits = self.forward_decoder(&mut ps, hook, mem, prefix)?;
        let lv = ps.tape.value(logits);
        let last = lv.row(lv.rows() - 1);
        let m = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = last.iter().map(|&x| mathutil::exp(x - m)).collect();
        let z: f64 = exps.iter().sum();
        Ok(TokenDistribution {
            probabilities: exps.iter().map(|&e| e / z).collect(),
        })
    }

    /// Greedy decoding: argmax each step (lowest id on ties) until EOS or
    /// `max_len` emitted tokens. Returns emitted tokens without BOS/EOS.
    pub fn greedy_decode(
        &self,
        memory: &LatentSequence,
        max_len: usize,
    ) -> Result<Vec<usize>, BackboneError> {
        self.greedy_decode_hooked(memory, max_len, &NoHook)
    }

    pub fn greedy_decode_hooked(
        &self,
        memory: &LatentSequence,
        max_len: usize,
        hook: &dyn ProjectionHook,
    ) -> Result<Vec<usize>, BackboneError> {
        let mut prefix = alloc::vec![self.config.bos_id];
        let mut out = Vec::new();
        while out.len() < max_len && prefix.len() < self.config.max_decode_len {
            let dist = self.decode_step_hooked(&prefix, memory, hook)?;
            let next = dist.argmax();
            if next == self.config.eos_id {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    pub(crate) fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            width: 8,
            n_mels: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            vocab_size: 8,
            ffn_hidden: 12,
            max_decode_len: 16,
            bos_id: 1,
            eos_id: 2,
            pad_id: 0,
        }
    }

    fn features(t: usize, f: usize) -> FeatureMatrix {
        FeatureMatrix {
            frames: Mat::from_fn(t, f, |r, c| mathutil::sin((r * f + c) as f64 * 0.37)),
            frame_shift_ms: 10.0,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn shape_law_m_is_floor_t_over_2() {
        let model = ToyBackbone::new(tiny_config(), 11).unwrap();
        for t in [2usize, 3, 10, 99, 100, 101] {
            let mem = model.encode(&features(t, 4)).unwrap();
            assert_eq!(mem.vectors.rows(), t / 2, "T = {t}");
            assert_eq!(mem.vectors.cols(), 8);
            assert!(mem.vectors.is_finite());
        }
    }

    #[test]
    fn encode_rejects_bad_shapes() {
        let model = ToyBackbone::new(tiny_config(), 11).unwrap();
        assert!(matches!(
            model.encode(&features(10, 5)),
            Err(BackboneError::FeatureBinMismatch { .. })
        ));
        assert!(matches!(
            model.encode(&features(1, 4)),
            Err(BackboneError::TooFewFrames(1))
        ));
    }

    #[test]
    fn encode_is_deterministic() {
        let model = ToyBackbone::new(tiny_config(), 5).unwrap();
        let a = model.encode(&features(20, 4)).unwrap();
        let b = model.encode(&features(20, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_step_is_a_distribution() {
        let model = ToyBackbone::new(tiny_config(), 5).unwrap();
        let mem = model.encode(&features(12, 4)).unwrap();
        let dist = model.decode_step(&[1, 4, 5], &mem).unwrap();
        let sum: f64 = dist.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(dist.probabilities.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn decode_step_requires_bos_and_length_bound() {
        let model = ToyBackbone::new(tiny_config(), 5).unwrap();
        let mem = model.encode(&features(12, 4)).unwrap();
        assert_eq!(
            model.decode_step(&[4, 5], &mem).unwrap_err(),
            BackboneError::PrefixMissingBos
        );
        let long = vec![1; 17];
        assert!(matches!(
            model.decode_step(&long, &mem).unwrap_err(),
            BackboneError::PrefixTooLong { .. }
        ));
    }

    #[test]
    fn decoder_is_causal() {
        let model = ToyBackbone::new(tiny_config(), 9).unwrap();
        let mem = model.encode(&features(16, 4)).unwrap();
        // Distribution after prefix p must be unchanged when recomputed as
        // the step-|p| distribution under a longer prefix.
        let prefix = vec![1usize, 5, 6];
        let dist_short = model.decode_step(&prefix, &mem).unwrap();

        let mut ps = PassState::inference();
        let m = ps.tape.constant(mem.vectors.clone());
        let longer = vec![1usize, 5, 6, 7, 4];
        let logits = model.forward_decoder(&mut ps, &NoHook, m, &longer).unwrap();
        let lv = ps.tape.value(logits);
        let row = lv.row(prefix.len() - 1);
        let mmax = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| mathutil::exp(x - mmax)).collect();
        let z: f64 = exps.iter().sum();
        for (a, b) in dist_short.probabilities.iter().zip(exps.iter().map(|e| e / z)) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_parameter_model_is_uniform() {
        let model = ToyBackbone::zeros(tiny_config()).unwrap();
        let mem = model.encode(&features(10, 4)).unwrap();
        let dist = model.decode_step(&[1, 3], &mem).unwrap();
        for &p in &dist.probabilities {
            assert!((p - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_decode_stops_and_is_deterministic() {
        let model = ToyBackbone::new(tiny_config(), 21).unwrap();
        let mem = model.encode(&features(14, 4)).unwrap();
        let a = model.greedy_decode(&mem, 10).unwrap();
        let b = model.greedy_decode(&mem, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 10);
        assert!(!a.contains(&2));
    }

    #[test]
    fn greedy_decode_immediate_eos_gives_empty_output() {
        // Craft logits: zero model except an output bias pushing EOS.
        let mut model = ToyBackbone::zeros(tiny_config()).unwrap();
        let mut bias = Mat::zeros(1, 8);
        bias.set(0, 2, 5.0);
        model.params.insert("decoder.output.bias".into(), bias);
        let mem = model.encode(&features(10, 4)).unwrap();
        assert!(model.greedy_decode(&mem, 10).unwrap().is_empty());
    }

    #[test]
    fn uniform_logits_tie_break_to_lowest_id() {
        let model = ToyBackbone::zeros(tiny_config()).unwrap();
        // All logits zero: lowest token id (PAD = 0) wins every step, EOS is
        // never emitted, so decoding runs to max_len.
        let mem = model.encode(&features(10, 4)).unwrap();
        assert_eq!(model.greedy_decode(&mem, 4).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn greedy_follows_a_crafted_argmax_chain() {
        // Zero model except: near-one-hot token embeddings survive the final
        // layer norm, and the output weight maps the previous token to the
        // next one: BOS(1) -> 4 -> 5 -> EOS(2).
        let mut model = ToyBackbone::zeros(tiny_config()).unwrap();
        model.params.insert(
            "decoder.embed.weight".into(),
            Mat::from_fn(8, 8, |r, c| if r == c { 50.0 } else { 0.0 }),
        );
        model
            .params
            .insert("decoder.ln_final.gain".into(), Mat::from_fn(1, 8, |_, _| 1.0));
        let mut w = Mat::zeros(8, 8);
        w.set(1, 4, 1.0);
        w.set(4, 5, 1.0);
        w.set(5, 2, 1.0);
        model.params.insert("decoder.output.weight".into(), w);

        let mem = model.encode(&features(10, 4)).unwrap();
        assert_eq!(model.greedy_decode(&mem, 10).unwrap(), vec![4, 5]);
    }

    #[test]
    fn greedy_is_invariant_under_monotone_logit_transforms() {
        // Scaling output weight+bias by a positive constant is a strictly
        // monotone transform of the logits; argmax must not change.
        let config = tiny_config();
        let base = ToyBackbone::new(config.clone(), 33).unwrap();
        let mut scaled = base.clone();
        for name in ["decoder.output.weight", "decoder.output.bias"] {
            let m = scaled.params.get(name).unwrap().scale(3.5);
            scaled.params.insert(name.into(), m);
        }
        let feats = features(18, 4);
        let mem = base.encode(&feats).unwrap();
        let mem2 = scaled.encode(&feats).unwrap();
        assert_eq!(mem, mem2);
        assert_eq!(
            base.greedy_decode(&mem, 8).unwrap(),
            scaled.greedy_decode(&mem2, 8).unwrap()
        );
    }

    #[test]
    fn full_fine_tune_gradients_match_finite_differences() {
        let config = tiny_config();
        let model = ToyBackbone::new(config, 77).unwrap();
        let feats = features(6, 4);
        let tokens = [1usize, 4, 5];
        let targets = [4usize, 5, 2];
        let mask = [true, true, true];

        let run = |m: &ToyBackbone| -> f64 {
            let mut ps = PassState::inference();
            ps.train_backbone = true;
            let mem = m.forward_encoder(&mut ps, &NoHook, &feats.frames).unwrap();
            let logits = m.forward_decoder(&mut ps, &NoHook, mem, &tokens).unwrap();
            let loss = ps.tape.cross_entropy(logits, &targets, &mask);
            ps.tape.value(loss).get(0, 0)
        };

        let mut ps = PassState::inference();
        ps.train_backbone = true;
        let mem = model
            .forward_encoder(&mut ps, &NoHook, &feats.frames)
            .unwrap();
        let logits = model.forward_decoder(&mut ps, &NoHook, mem, &tokens).unwrap();
        let loss = ps.tape.cross_entropy(logits, &targets, &mask);
        let grads = ps.tape.backward(loss);

        let eps = 1e-5;
        for (name, leaf) in ps.bound_names() {
            let g = grads.get(leaf);
            let mat = model.params.get(name).unwrap();
            // Check a handful of entries per tensor.
            let count = mat.data().len().min(4);
            for e in 0..count {
                let (r, c) = (e / mat.cols(), e % mat.cols());
                let mut plus = model.clone();
                plus.params.get_mut(name).unwrap().set(r, c, mat.get(r, c) + eps);
                let mut minus = model.clone();
                minus.params.get_mut(name).unwrap().set(r, c, mat.get(r, c) - eps);
                let fd = (run(&plus) - run(&minus)) / (2.0 * eps);
                let got = g.map_or(0.0, |gm| gm.get(r, c));
                let denom = fd.abs().max(got.abs()).max(1e-6);
                assert!(
                    (fd - got).abs() / denom <= 1e-4,
                    "{name}[{r},{c}]: fd={fd} tape={got}"
                );
            }
        }
    }
}
