//! Parameter-efficient fine-tuning of the frozen backbone.
//!
//! LoRA attaches rank-r factors `B * A` to a projection; the adapted output
//! is `base + (alpha / r) * x * A^T * B^T`. The rank-adaptive variant stores
//! `P * diag(lambda) * Q` instead, prunes singular values against a cubic
//! budget schedule, and keeps an EMA of sensitivity per triplet. Full
//! fine-tuning and the no-adapter baseline are represented too so the
//! trainable-parameter set is always explicit.
//!
//! Attachment sites are the self-attention query/value projections of every
//! encoder and decoder block (cross-attention is left alone), so a 2+2 layer
//! backbone exposes exactly 8 sites.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::TRef;
use crate::backbone::{PassState, ProjectionHook, ToyBackbone};
use crate::conditioning::EmbeddingProviderRegistry;
use crate::mathutil;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMethod {
    None,
    Lora,
    Adalora,
    Fft,
}

/// Steps bracketing the cubic budget decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub warmup_steps: usize,
    pub end_step: usize,
}

impl Default for BudgetSchedule {
    fn default() -> Self {
        BudgetSchedule {
            warmup_steps: 500,
            end_step: 5_000,
        }
    }
}

fn default_targets() -> Vec<String> {
    alloc::vec!["query".into(), "value".into()]
}

fn default_dropout() -> f64 {
    0.1
}

fn default_reallocate_every() -> usize {
    100
}

fn default_ortho_weight() -> f64 {
    1e-4
}

fn default_ema_decay() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub method: AdapterMethod,
    /// Projection kinds to adapt, matched against the last path segment of
    /// each site name.
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
    /// LoRA rank.
    #[serde(default)]
    pub rank: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    /// Rank-adaptive start/end ranks per site.
    #[serde(default)]
    pub rank_initial: usize,
    #[serde(default)]
    pub rank_target: usize,
    #[serde(default)]
    pub budget_schedule: BudgetSchedule,
    #[serde(default = "default_reallocate_every")]
    pub reallocate_every: usize,
    #[serde(default = "default_ortho_weight")]
    pub ortho_weight: f64,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
}

impl AdapterSpec {
    pub fn lora(rank: usize, alpha: f64) -> Self {
        AdapterSpec {
            method: AdapterMethod::Lora,
            targets: default_targets(),
            rank,
            alpha,
            dropout_p: default_dropout(),
            rank_initial: 0,
            rank_target: 0,
            budget_schedule: BudgetSchedule::default(),
            reallocate_every: default_reallocate_every(),
            ortho_weight: default_ortho_weight(),
            ema_decay: default_ema_decay(),
        }
    }

    pub fn adalora(rank_initial: usize, rank_target: usize, alpha: f64) -> Self {
        AdapterSpec {
            method: AdapterMethod::Adalora,
            targets: default_targets(),
            rank: 0,
            alpha,
            dropout_p: default_dropout(),
            rank_initial,
            rank_target,
            budget_schedule: BudgetSchedule::default(),
            reallocate_every: default_reallocate_every(),
            ortho_weight: default_ortho_weight(),
            ema_decay: default_ema_decay(),
        }
    }

    pub fn fft() -> Self {
        AdapterSpec {
            method: AdapterMethod::Fft,
            targets: Vec::new(),
            rank: 0,
            alpha: 0.0,
            dropout_p: 0.0,
            rank_initial: 0,
            rank_target: 0,
            budget_schedule: BudgetSchedule::default(),
            reallocate_every: default_reallocate_every(),
            ortho_weight: 0.0,
            ema_decay: default_ema_decay(),
        }
    }

    pub fn none() -> Self {
        let mut s = AdapterSpec::fft();
        s.method = AdapterMethod::None;
        s
    }

    /// Effective delta scale: alpha over the (initial) rank.
    pub fn scale(&self) -> f64 {
        match self.method {
            AdapterMethod::Lora => self.alpha / self.rank as f64,
            AdapterMethod::Adalora => self.alpha / self.rank_initial as f64,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        match self.method {
            AdapterMethod::None | AdapterMethod::Fft => Ok(()),
            AdapterMethod::Lora => {
                if self.rank == 0 {
                    return Err(AdapterError::InvalidRank("rank must be at least 1".into()));
                }
                if self.alpha <= 0.0 {
                    return Err(AdapterError::InvalidAlpha(self.alpha));
                }
                Ok(())
            }
            AdapterMethod::Adalora => {
                if self.rank_target == 0 || self.rank_initial < self.rank_target {
                    return Err(AdapterError::InvalidRank(format!(
                        "need rank_initial >= rank_target >= 1, got {} and {}",
                        self.rank_initial, self.rank_target
                    )));
                }
                if self.alpha <= 0.0 {
                    return Err(AdapterError::InvalidAlpha(self.alpha));
                }
                if self.budget_schedule.end_step <= self.budget_schedule.warmup_steps {
                    return Err(AdapterError::InvalidSchedule {
                        warmup: self.budget_schedule.warmup_steps,
                        end: self.budget_schedule.end_step,
                    });
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdapterError {
    #[error("invalid adapter rank: {0}")]
    InvalidRank(String),
    #[error("adapter alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("budget schedule end ({end}) must exceed warmup ({warmup})")]
    InvalidSchedule { warmup: usize, end: usize },
    #[error("target '{0}' matches no attachment site")]
    UnknownTarget(String),
    #[error("method {0:?} has no factored delta to merge")]
    NotMergeable(AdapterMethod),
}

/// Factors at one attachment site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SiteState {
    Lora {
        /// `r x d_in`, small uniform init.
        a: Mat,
        /// `d_out x r`, zero init so the delta starts at zero.
        b: Mat,
    },
    Adalora {
        /// `d_out x r`
        p: Mat,
        /// `1 x r` singular values, zero init.
        lambda: Mat,
        /// `r x d_in`
        q: Mat,
        /// `1 x r` EMA of `|lambda * dL/dlambda|`.
        importance: Mat,
        /// Pruned triplets stay pruned.
        pruned: Vec<bool>,
    },
}

impl SiteState {
    pub fn retained_rank(&self) -> usize {
        match self {
            SiteState::Lora { a, .. } => a.rows(),
            SiteState::Adalora { pruned, .. } => pruned.iter().filter(|&&x| !x).count(),
        }
    }

    fn field(&self, name: &str) -> Option<&Mat> {
        match (self, name) {
            (SiteState::Lora { a, .. }, "a") => Some(a),
            (SiteState::Lora { b, .. }, "b") => Some(b),
            (SiteState::Adalora { p, .. }, "p") => Some(p),
            (SiteState::Adalora { lambda, .. }, "lambda") => Some(lambda),
            (SiteState::Adalora { q, .. }, "q") => Some(q),
            _ => None,
        }
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut Mat> {
        match (self, name) {
            (SiteState::Lora { a, .. }, "a") => Some(a),
            (SiteState::Lora { b, .. }, "b") => Some(b),
            (SiteState::Adalora { p, .. }, "p") => Some(p),
            (SiteState::Adalora { lambda, .. }, "lambda") => Some(lambda),
            (SiteState::Adalora { q, .. }, "q") => Some(q),
            _ => None,
        }
    }

    fn field_names(&self) -> &'static [&'static str] {
        match self {
            SiteState::Lora { .. } => &["a", "b"],
            SiteState::Adalora { .. } => &["p", "lambda", "q"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdapterState {
    pub sites: BTreeMap<String, SiteState>,
}

impl AdapterState {
    /// Flat view keyed `adapter.{site}.{field}`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (site, state) in &self.sites {
            for field in state.field_names() {
                out.push(format!("adapter.{site}.{field}"));
            }
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Mat> {
        let rest = name.strip_prefix("adapter.")?;
        let (site, field) = rest.rsplit_once('.')?;
        self.sites.get(site)?.field(field)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Mat> {
        let rest = name.strip_prefix("adapter.")?;
        let (site, field) = rest.rsplit_once('.')?;
        self.sites.get_mut(site)?.field_mut(field)
    }

    pub fn total_retained_rank(&self) -> usize {
        self.sites.values().map(|s| s.retained_rank()).sum()
    }
}

/// A frozen backbone plus adapter factors.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    pub backbone: ToyBackbone,
    pub spec: AdapterSpec,
    pub state: AdapterState,
}

/// Attaches freshly initialized factors at every site whose projection kind
/// is in `spec.targets`. The delta starts at exactly zero for both factored
/// methods, so injection never changes model behavior.
pub fn inject(
    backbone: ToyBackbone,
    spec: AdapterSpec,
    seed: u64,
) -> Result<AdaptedModel, AdapterError> {
    spec.validate()?;
    let mut state = AdapterState::default();
    if matches!(spec.method, AdapterMethod::Lora | AdapterMethod::Adalora) {
        let sites = ToyBackbone::site_names(&backbone.config);
        for target in &spec.targets {
            if !sites
                .iter()
                .any(|s| s.rsplit('.').next() == Some(target.as_str()))
            {
                return Err(AdapterError::UnknownTarget(target.clone()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = backbone.config.width;
        for site in sites {
            let kind = site.rsplit('.').next().unwrap();
            if !spec.targets.iter().any(|t| t == kind) {
                continue;
            }
            let small = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
                let limit = mathutil::sqrt(6.0 / (r + c) as f64);
                Mat::from_fn(r, c, |_, _| rng.random_range(-limit..limit))
            };
            let entry = match spec.method {
                AdapterMethod::Lora => SiteState::Lora {
                    a: small(&mut rng, spec.rank, d),
                    b: Mat::zeros(d, spec.rank),
                },
                AdapterMethod::Adalora => SiteState::Adalora {
                    p: small(&mut rng, d, spec.rank_initial),
                    lambda: Mat::zeros(1, spec.rank_initial),
                    q: small(&mut rng, spec.rank_initial, d),
                    importance: Mat::zeros(1, spec.rank_initial),
                    pruned: alloc::vec![false; spec.rank_initial],
                },
                _ => unreachable!(),
            };
            state.sites.insert(site, entry);
        }
    }
    Ok(AdaptedModel {
        backbone,
        spec,
        state,
    })
}

impl AdaptedModel {
    /// Projection hook over this model's factors. Factors bind lazily
    /// through the pass's named-leaf cache (`adapter.{site}.{field}`), as
    /// trainable leaves in training mode and constants otherwise.
    pub fn hook(&self) -> AdapterHook<'_> {
        AdapterHook {
            spec: &self.spec,
            state: &self.state,
        }
    }

    /// Folds the factored deltas into the backbone weights. Only the two
    /// factored methods carry a delta; merging anything else (including a
    /// model that is already dense) is an error.
    pub fn merge(&self) -> Result<ToyBackbone, AdapterError> {
        if !matches!(
            self.spec.method,
            AdapterMethod::Lora | AdapterMethod::Adalora
        ) {
            return Err(AdapterError::NotMergeable(self.spec.method));
        }
        let mut merged = self.backbone.clone();
        let scale = self.spec.scale();
        for (site, state) in &self.state.sites {
            // Stored weights are (d_in x d_out); the delta of y = x * W.
            let delta = match state {
                SiteState::Lora { a, b } => b.matmul(a).transpose().scale(scale),
                SiteState::Adalora { p, lambda, q, .. } => {
                    let mut pl = p.clone();
                    for r in 0..pl.rows() {
                        for c in 0..pl.cols() {
                            pl.set(r, c, pl.get(r, c) * lambda.get(0, c));
                        }
                    }
                    pl.matmul(q).transpose().scale(scale)
                }
            };
            let w = merged
                .params
                .get_mut(&format!("{site}.weight"))
                .expect("site weight exists");
            w.add_assign(&delta);
        }
        Ok(merged)
    }
}

pub struct AdapterHook<'a> {
    spec: &'a AdapterSpec,
    state: &'a AdapterState,
}

impl AdapterHook<'_> {
    fn bind(&self, ps: &mut PassState, site: &str, field: &str, m: &Mat) -> TRef {
        let trainable = ps.training;
        ps.bind_named(&format!("adapter.{site}.{field}"), m, trainable)
    }

    /// Orthogonality penalty summed over rank-adaptive sites:
    /// `w * (|P^T P - I|^2 + |Q Q^T - I|^2)`. `None` when nothing applies.
    pub fn ortho_penalty(&self, ps: &mut PassState) -> Option<TRef> {
        if self.spec.ortho_weight == 0.0 {
            return None;
        }
        let mut total: Option<TRef> = None;
        for (site, state) in &self.state.sites {
            let SiteState::Adalora { p, q, .. } = state else {
                continue;
            };
            let pr = self.bind(ps, site, "p", p);
            let qr = self.bind(ps, site, "q", q);
            let r = q.rows();
            let neg_eye = ps
                .tape
                .constant(Mat::from_fn(r, r, |i, j| if i == j { -1.0 } else { 0.0 }));
            let pt = ps.tape.transpose(pr);
            let ptp = ps.tape.matmul(pt, pr);
            let ptp = ps.tape.add(ptp, neg_eye);
            let qqt = ps.tape.matmul_transb(qr, qr);
            let qqt = ps.tape.add(qqt, neg_eye);
            let sp = ps.tape.sum_squares(ptp);
            let sq = ps.tape.sum_squares(qqt);
            let site_sum = ps.tape.add(sp, sq);
            total = Some(match total {
                Some(t) => ps.tape.add(t, site_sum),
                None => site_sum,
            });
        }
        total.map(|t| ps.tape.scale(t, self.spec.ortho_weight))
    }
}

impl ProjectionHook for AdapterHook<'_> {
    fn apply(&self, site: &str, x: TRef, base: TRef, ps: &mut PassState) -> TRef {
        let Some(state) = self.state.sites.get(site) else {
            return base;
        };
        let mut xin = x;
        if ps.training && self.spec.dropout_p > 0.0 {
            let p = self.spec.dropout_p;
            let n = {
                let v = ps.tape.value(x);
                v.rows() * v.cols()
            };
            let draws: Vec<bool> = (0..n).map(|_| ps.dropout_keep(p)).collect();
            let mut it = draws.into_iter();
            xin = ps.tape.dropout(x, p, move || it.next().unwrap());
        }
        let delta = match state {
            SiteState::Lora { a, b } => {
                let ar = self.bind(ps, site, "a", a);
                let br = self.bind(ps, site, "b", b);
                let t = ps.tape.matmul_transb(xin, ar);
                ps.tape.matmul_transb(t, br)
            }
            SiteState::Adalora { p, lambda, q, .. } => {
                let pr = self.bind(ps, site, "p", p);
                let lr = self.bind(ps, site, "lambda", lambda);
                let qr = self.bind(ps, site, "q", q);
                let t = ps.tape.matmul_transb(xin, qr);
                let t = ps.tape.mul_row_broadcast(t, lr);
                ps.tape.matmul_transb(t, pr)
            }
        };
        let delta = ps.tape.scale(delta, self.spec.scale());
        ps.tape.add(base, delta)
    }
}

/// Plain (non-tape) LoRA-style delta for one input row.
pub fn lora_delta(x: &[f64], a: &Mat, b: &Mat, scale: f64) -> Vec<f64> {
    assert_eq!(x.len(), a.cols());
    let r = a.rows();
    let mut t = alloc::vec![0.0; r];
    for i in 0..r {
        for (j, &xv) in x.iter().enumerate() {
            t[i] += a.get(i, j) * xv;
        }
    }
    let mut out = alloc::vec![0.0; b.rows()];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, &tv) in t.iter().enumerate() {
            *o += b.get(i, j) * tv;
        }
        *o *= scale;
    }
    out
}

/// Global rank budget at `step`: the per-site target total, plus the excess
/// initial mass decayed cubically between the schedule's warmup and end.
/// Floor-rounded; constant outside the bracket.
pub fn adalora_budget(step: usize, spec: &AdapterSpec, n_sites: usize) -> usize {
    let initial = (spec.rank_initial * n_sites) as f64;
    let target = (spec.rank_target * n_sites) as f64;
    let sched = spec.budget_schedule;
    if step <= sched.warmup_steps {
        return initial as usize;
    }
    if step >= sched.end_step {
        return target as usize;
    }
    let frac = (step - sched.warmup_steps) as f64 / (sched.end_step - sched.warmup_steps) as f64;
    let keep = 1.0 - frac;
    mathutil::floor(target + (initial - target) * keep * keep * keep) as usize
}

/// Decayed sensitivity accumulator for one site:
/// `imp <- decay * imp + (1 - decay) * |lambda * dL/dlambda|`.
pub fn update_importance(state: &mut SiteState, lambda_grad: &Mat, decay: f64) {
    let SiteState::Adalora {
        lambda, importance, ..
    } = state
    else {
        return;
    };
    assert_eq!(lambda_grad.cols(), lambda.cols());
    for c in 0..lambda.cols() {
        let sens = (lambda.get(0, c) * lambda_grad.get(0, c)).abs();
        let v = decay * importance.get(0, c) + (1.0 - decay) * sens;
        importance.set(0, c, v);
    }
}

/// Keeps the `budget` most important unpruned triplets across all sites and
/// zeroes the rest. Pruned triplets are never candidates, so nothing is
/// revived. Ties break deterministically by site name, then index.
pub fn adalora_reallocate(state: &mut AdapterState, budget: usize) {
    let mut candidates: Vec<(f64, String, usize)> = Vec::new();
    for (site, s) in &state.sites {
        let SiteState::Adalora {
            importance, pruned, ..
        } = s
        else {
            continue;
        };
        for (idx, &gone) in pruned.iter().enumerate() {
            if !gone {
                candidates.push((importance.get(0, idx), site.clone(), idx));
            }
        }
    }
    if candidates.len() <= budget {
        return;
    }
    candidates.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then_with(|| x.1.cmp(&y.1))
            .then_with(|| x.2.cmp(&y.2))
    });
    for (_, site, idx) in candidates.into_iter().skip(budget) {
        let Some(SiteState::Adalora { lambda, pruned, .. }) = state.sites.get_mut(&site) else {
            unreachable!()
        };
        lambda.set(0, idx, 0.0);
        pruned[idx] = true;
    }
}

/// Names of everything the optimizer may touch, in deterministic order.
/// Factored methods train only adapter factors plus the mapping networks;
/// full fine-tuning trains the whole backbone plus the mapping networks; the
/// baseline trains mapping networks alone.
pub fn trainable_parameters(
    model: &AdaptedModel,
    registry: &EmbeddingProviderRegistry,
) -> Vec<String> {
    let mut out = Vec::new();
    match model.spec.method {
        AdapterMethod::Lora | AdapterMethod::Adalora => {
            out.extend(model.state.param_names());
        }
        AdapterMethod::Fft => {
            out.extend(
                ToyBackbone::param_shapes(&model.backbone.config)
                    .into_iter()
                    .map(|(name, _, _)| name),
            );
        }
        AdapterMethod::None => {}
    }
    for provider in &registry.providers {
        out.extend(crate::conditioning::MappingNetwork::param_names(
            provider.extractor.source(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::conditioning::{EmbeddingExtractor, ExtractorOutput, MappingNetwork, Provider};
    use crate::frontend::FeatureMatrix;
    use std::string::ToString;
    use std::vec;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            width: 8,
            n_mels: 6,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 2,
            vocab_size: 12,
            ffn_hidden: 8,
            max_decode_len: 6,
            bos_id: 1,
            eos_id: 2,
            pad_id: 0,
        }
    }

    fn features(t: usize, n_mels: usize) -> FeatureMatrix {
        FeatureMatrix {
            frames: Mat::from_fn(t, n_mels, |r, c| mathutil::sin((r * n_mels + c) as f64 * 0.7)),
            frame_shift_ms: 10.0,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn two_plus_two_layers_give_eight_sites() {
        let model = inject(
            ToyBackbone::new(tiny_config(), 5).unwrap(),
            AdapterSpec::lora(2, 16.0),
            7,
        )
        .unwrap();
        assert_eq!(model.state.sites.len(), 8);
        for name in model.state.sites.keys() {
            assert!(name.ends_with(".query") || name.ends_with(".value"));
            assert!(!name.contains("cross_attn"));
        }
    }

    #[test]
    fn unknown_target_is_rejected() {
        let err = inject(
            ToyBackbone::new(tiny_config(), 5).unwrap(),
            AdapterSpec {
                // "key" projections exist but are not attachment sites.
                targets: vec!["query".into(), "key".into()],
                ..AdapterSpec::lora(2, 16.0)
            },
            7,
        )
        .unwrap_err();
        assert_eq!(err, AdapterError::UnknownTarget("key".to_string()));
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(AdapterSpec::lora(0, 16.0).validate().is_err());
        assert!(AdapterSpec::lora(4, 0.0).validate().is_err());
        assert!(AdapterSpec::adalora(8, 12, 32.0).validate().is_err());
        let mut s = AdapterSpec::adalora(12, 8, 32.0);
        s.budget_schedule = BudgetSchedule {
            warmup_steps: 100,
            end_step: 100,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn freshly_injected_adapters_change_nothing() {
        let backbone = ToyBackbone::new(tiny_config(), 11).unwrap();
        let f = features(12, 6);
        let plain = backbone.encode(&f).unwrap();
        for spec in [AdapterSpec::lora(4, 32.0), AdapterSpec::adalora(6, 4, 32.0)] {
            let model = inject(backbone.clone(), spec, 3).unwrap();
            let hooked = model.backbone.encode_hooked(&f, &model.hook()).unwrap();
            assert!(plain.vectors.max_abs_diff(&hooked.vectors) < 1e-12);
        }
    }

    fn randomize_factors(model: &mut AdaptedModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in model.state.param_names() {
            let m = model.state.param_mut(&name).unwrap();
            for v in m.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn hooked_forward_matches_merged_dense_model() {
        let backbone = ToyBackbone::new(tiny_config(), 11).unwrap();
        let f = features(14, 6);
        for spec in [AdapterSpec::lora(3, 24.0), AdapterSpec::adalora(5, 3, 32.0)] {
            let mut model = inject(backbone.clone(), spec, 3).unwrap();
            randomize_factors(&mut model, 41);
            let hooked = model.backbone.encode_hooked(&f, &model.hook()).unwrap();
            let merged = model.merge().unwrap();
            let dense = merged.encode(&f).unwrap();
            assert!(
                hooked.vectors.max_abs_diff(&dense.vectors) < 1e-9,
                "merge disagrees with hooked forward"
            );
            // And through decoding too.
            let d_hooked = model
                .backbone
                .decode_step_hooked(&[1, 4, 5], &hooked, &model.hook())
                .unwrap();
            let d_dense = merged.decode_step(&[1, 4, 5], &hooked).unwrap();
            for (a, b) in d_hooked
                .probabilities
                .iter()
                .zip(d_dense.probabilities.iter())
            {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hooked_delta_matches_plain_lora_delta() {
        // Isolate one projection: with a zero base, the hook output on a
        // crafted input equals the standalone delta function.
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Mat::from_fn(3, d, |_, _| rng.random_range(-0.5..0.5));
        let b = Mat::from_fn(d, 3, |_, _| rng.random_range(-0.5..0.5));
        let x: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 - 0.3).collect();

        let spec = AdapterSpec::lora(3, 16.0);
        let mut state = AdapterState::default();
        state.sites.insert(
            "encoder.0.attn.query".to_string(),
            SiteState::Lora {
                a: a.clone(),
                b: b.clone(),
            },
        );
        let hook = AdapterHook {
            spec: &spec,
            state: &state,
        };

        let mut ps = PassState::inference();
        let xr = ps.tape.constant(Mat::from_vec(1, d, x.clone()));
        let base = ps.tape.constant(Mat::zeros(1, d));
        let y = hook.apply("encoder.0.attn.query", xr, base, &mut ps);
        let expect = lora_delta(&x, &a, &b, spec.scale());
        for (c, &e) in expect.iter().enumerate() {
            assert!((ps.tape.value(y).get(0, c) - e).abs() < 1e-12);
        }
        // A site without adapters passes the base through untouched.
        let other = hook.apply("encoder.1.attn.query", xr, base, &mut ps);
        assert_eq!(other, base);
    }

    #[test]
    fn merge_refuses_non_factored_methods() {
        let backbone = ToyBackbone::new(tiny_config(), 1).unwrap();
        for spec in [AdapterSpec::none(), AdapterSpec::fft()] {
            let model = inject(backbone.clone(), spec, 0).unwrap();
            assert!(matches!(model.merge(), Err(AdapterError::NotMergeable(_))));
        }
    }

    #[test]
    fn budget_schedule_matches_closed_form() {
        let mut spec = AdapterSpec::adalora(16, 8, 32.0);
        spec.budget_schedule = BudgetSchedule {
            warmup_steps: 100,
            end_step: 1_100,
        };
        let n = 8;
        assert_eq!(adalora_budget(0, &spec, n), 16 * n);
        assert_eq!(adalora_budget(100, &spec, n), 16 * n);
        assert_eq!(adalora_budget(1_100, &spec, n), 8 * n);
        assert_eq!(adalora_budget(10_000, &spec, n), 8 * n);
        // Closed-form oracle at interior points.
        for step in [101usize, 350, 600, 850, 1_099] {
            let keep = 1.0 - (step - 100) as f64 / 1_000.0;
            let oracle =
                ((8 * n) as f64 + ((16 * n) as f64 - (8 * n) as f64) * keep.powi(3)).floor();
            assert_eq!(adalora_budget(step, &spec, n), oracle as usize, "step {step}");
        }
        // Monotone non-increasing over the whole bracket.
        let mut prev = usize::MAX;
        for step in 0..=1_200 {
            let b = adalora_budget(step, &spec, n);
            assert!(b <= prev);
            prev = b;
        }
    }

    fn adalora_model() -> AdaptedModel {
        inject(
            ToyBackbone::new(tiny_config(), 2).unwrap(),
            AdapterSpec::adalora(4, 2, 32.0),
            6,
        )
        .unwrap()
    }

    #[test]
    fn reallocate_keeps_the_most_important_triplets() {
        let mut model = adalora_model();
        // 8 sites x rank 4 = 32 triplets with a global importance ordering.
        let names: Vec<String> = model.state.sites.keys().cloned().collect();
        for (si, name) in names.iter().enumerate() {
            let SiteState::Adalora {
                importance, lambda, ..
            } = model.state.sites.get_mut(name).unwrap()
            else {
                unreachable!()
            };
            for c in 0..4 {
                importance.set(0, c, (si * 4 + c) as f64);
                lambda.set(0, c, 1.0);
            }
        }
        adalora_reallocate(&mut model.state, 5);
        assert_eq!(model.state.total_retained_rank(), 5);
        // The survivors are the 5 globally largest importances (27..=31).
        for name in &names {
            let SiteState::Adalora {
                importance,
                lambda,
                pruned,
                ..
            } = &model.state.sites[name]
            else {
                unreachable!()
            };
            for c in 0..4 {
                let kept = !pruned[c];
                assert_eq!(kept, importance.get(0, c) >= 27.0);
                assert_eq!(lambda.get(0, c) != 0.0, kept);
            }
        }
    }

    #[test]
    fn reallocate_with_full_budget_changes_nothing() {
        let mut model = adalora_model();
        let before = model.state.clone();
        adalora_reallocate(&mut model.state, 32);
        assert_eq!(model.state, before);
    }

    #[test]
    fn pruned_triplets_are_never_revived() {
        let mut model = adalora_model();
        let first = model.state.sites.keys().next().unwrap().clone();
        {
            let SiteState::Adalora {
                importance, pruned, ..
            } = model.state.sites.get_mut(&first).unwrap()
            else {
                unreachable!()
            };
            pruned[0] = true;
            importance.set(0, 0, 1e9);
        }
        adalora_reallocate(&mut model.state, 1_000);
        let SiteState::Adalora { pruned, .. } = &model.state.sites[&first] else {
            unreachable!()
        };
        assert!(pruned[0]);
    }

    #[test]
    fn importance_is_a_decayed_sensitivity_average() {
        let mut state = SiteState::Adalora {
            p: Mat::zeros(4, 2),
            lambda: Mat::from_vec(1, 2, vec![0.5, -2.0]),
            q: Mat::zeros(2, 4),
            importance: Mat::from_vec(1, 2, vec![1.0, 1.0]),
            pruned: vec![false, false],
        };
        let grad = Mat::from_vec(1, 2, vec![0.2, -0.3]);
        update_importance(&mut state, &grad, 0.85);
        let SiteState::Adalora { importance, .. } = &state else {
            unreachable!()
        };
        assert!((importance.get(0, 0) - (0.85 + 0.15 * 0.1)).abs() < 1e-12);
        assert!((importance.get(0, 1) - (0.85 + 0.15 * 0.6)).abs() < 1e-12);
    }

    #[test]
    fn ortho_penalty_is_zero_for_orthonormal_factors() {
        let mut model = adalora_model();
        for name in model.state.param_names() {
            let m = model.state.param_mut(&name).unwrap();
            if name.ends_with(".p") {
                // Columns of the 8x4 identity slice are orthonormal.
                *m = Mat::from_fn(8, 4, |r, c| if r == c { 1.0 } else { 0.0 });
            } else if name.ends_with(".q") {
                *m = Mat::from_fn(4, 8, |r, c| if r == c { 1.0 } else { 0.0 });
            }
        }
        let mut ps = PassState::inference();
        let pen = model.hook().ortho_penalty(&mut ps).unwrap();
        assert!(ps.tape.value(pen).get(0, 0).abs() < 1e-12);

        // Breaking orthogonality makes it strictly positive.
        let pname = model.state.param_names()[0].clone();
        let site = pname
            .trim_start_matches("adapter.")
            .rsplit_once('.')
            .unwrap()
            .0
            .to_string();
        model
            .state
            .param_mut(&format!("adapter.{site}.p"))
            .unwrap()
            .set(0, 1, 1.0);
        let mut ps2 = PassState::inference();
        let pen2 = model.hook().ortho_penalty(&mut ps2).unwrap();
        assert!(ps2.tape.value(pen2).get(0, 0) > 1e-6);
    }

    #[test]
    fn training_adapters_leaves_the_backbone_frozen() {
        let model = inject(
            ToyBackbone::new(tiny_config(), 11).unwrap(),
            AdapterSpec::lora(2, 16.0),
            3,
        )
        .unwrap();
        let f = features(10, 6);
        let mut ps = PassState::training(false, 42);
        let hook = model.hook();
        let mem = model
            .backbone
            .forward_encoder(&mut ps, &hook, &f.frames)
            .unwrap();
        let loss = ps.tape.sum_squares(mem);
        let grads = ps.tape.backward(loss);
        let mut adapter_grads = 0;
        let mut backbone_grads = 0;
        for (name, leaf) in ps.bound_names() {
            if grads.get(leaf).is_some() {
                if name.starts_with("adapter.") {
                    adapter_grads += 1;
                } else {
                    backbone_grads += 1;
                }
            }
        }
        assert!(adapter_grads > 0, "adapter factors should receive gradients");
        assert_eq!(backbone_grads, 0, "frozen backbone must stay gradient-free");
    }

    #[test]
    fn lora_gradients_match_finite_differences() {
        let mut model = inject(
            ToyBackbone::new(tiny_config(), 13).unwrap(),
            AdapterSpec {
                dropout_p: 0.0,
                ..AdapterSpec::lora(2, 8.0)
            },
            3,
        )
        .unwrap();
        randomize_factors(&mut model, 77);
        let f = features(8, 6);

        let eval = |m: &AdaptedModel| -> f64 {
            let mut ps = PassState::inference();
            let hook = m.hook();
            let mem = m
                .backbone
                .forward_encoder(&mut ps, &hook, &f.frames)
                .unwrap();
            let loss = ps.tape.sum_squares(mem);
            ps.tape.value(loss).get(0, 0)
        };

        // Dropout is zeroed in the spec; training mode only makes the
        // factors trainable leaves.
        let mut ps = PassState::training(false, 0);
        let hook = model.hook();
        let mem = model
            .backbone
            .forward_encoder(&mut ps, &hook, &f.frames)
            .unwrap();
        let loss = ps.tape.sum_squares(mem);
        let grads = ps.tape.backward(loss);

        let eps = 1e-5;
        let mut checked = 0;
        for pname in model.state.param_names() {
            if !pname.starts_with("adapter.encoder.") {
                continue;
            }
            let leaf = ps.bound_leaf(&pname).expect("bound factor");
            let g = grads.get(leaf).expect("factor gradient");
            let base = model.state.param(&pname).unwrap().clone();
            for &(r, c) in &[(0usize, 0usize), (base.rows() - 1, base.cols() - 1)] {
                let mut plus = model.clone();
                plus.state
                    .param_mut(&pname)
                    .unwrap()
                    .set(r, c, base.get(r, c) + eps);
                let mut minus = model.clone();
                minus
                    .state
                    .param_mut(&pname)
                    .unwrap()
                    .set(r, c, base.get(r, c) - eps);
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let got = g.get(r, c);
                let denom = fd.abs().max(got.abs()).max(1e-6);
                assert!(
                    (fd - got).abs() / denom <= 1e-3,
                    "{pname}[{r},{c}]: fd={fd} got={got}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 8);
    }

    struct NullExtractor;

    impl EmbeddingExtractor for NullExtractor {
        fn source(&self) -> &str {
            "xvec"
        }
        fn dim(&self) -> usize {
            4
        }
        fn extract(&self, _w: &[f64]) -> Result<ExtractorOutput, String> {
            Ok(ExtractorOutput::Vector(vec![0.0; 4]))
        }
    }

    #[test]
    fn trainable_sets_per_method() {
        let backbone = ToyBackbone::new(tiny_config(), 1).unwrap();
        let registry = EmbeddingProviderRegistry {
            providers: vec![Provider {
                extractor: alloc::boxed::Box::new(NullExtractor),
                mapping: MappingNetwork::new(4, 4, 8, 0),
            }],
        };

        let lora = inject(backbone.clone(), AdapterSpec::lora(2, 16.0), 0).unwrap();
        let names = trainable_parameters(&lora, &registry);
        assert_eq!(names.len(), 8 * 2 + 4);
        assert!(names
            .iter()
            .all(|n| n.starts_with("adapter.") || n.starts_with("mapping.")));

        let ada = inject(backbone.clone(), AdapterSpec::adalora(4, 2, 32.0), 0).unwrap();
        let names = trainable_parameters(&ada, &registry);
        assert_eq!(names.len(), 8 * 3 + 4);

        let fft = inject(backbone.clone(), AdapterSpec::fft(), 0).unwrap();
        let names = trainable_parameters(&fft, &registry);
        let backbone_count = ToyBackbone::param_shapes(&backbone.config).len();
        assert_eq!(names.len(), backbone_count + 4);
        assert!(names.iter().any(|n| n == "decoder.output.weight"));

        let none = inject(backbone, AdapterSpec::none(), 0).unwrap();
        assert_eq!(trainable_parameters(&none, &registry).len(), 4);
    }
}
