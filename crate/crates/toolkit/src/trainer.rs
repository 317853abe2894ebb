//! Teacher-forced training loop: AdamW over the trainable-parameter set,
//! linear warmup/decay schedule, periodic dev-subsample evaluation, best
//! checkpoint selection, and greedy-decoding transcription.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use adaptasr_core::adapters::{
    adalora_budget, adalora_reallocate, trainable_parameters, update_importance, AdaptedModel,
    AdapterMethod, AdapterSpec,
};
use adaptasr_core::backbone::{BackboneError, PassState};
use adaptasr_core::conditioning::{
    condition, condition_refs, extract_embedding, ConditioningError, EmbeddingProviderRegistry,
};
use adaptasr_core::frontend::{
    log_mel, spec_augment, FeatureMatrix, FrontendConfig, FrontendError, SpecAugmentPolicy,
};
use adaptasr_core::metrics::{edit_counts, wer, EditCounts};
use adaptasr_core::optim::{AdamW, AdamWConfig};
use adaptasr_core::schedule::{lr_at, ScheduleError};
use adaptasr_core::text::{normalize_joined, normalize_text, CharTokenizer};
use adaptasr_core::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    adapter_checkpoint, full_checkpoint, save_checkpoint, Checkpoint, MappingRecord,
};
use crate::scoring::{ScoreError, Scorer};

pub const DEFAULT_EPOCHS: usize = 15;
pub const DEFAULT_WARMUP_STEPS: usize = 500;
pub const DEFAULT_EVAL_EVERY: usize = 2_000;
pub const DEFAULT_DEV_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adapter: AdapterSpec,
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every_steps: usize,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_dev_fraction")]
    pub dev_subsample_fraction: f64,
    #[serde(default)]
    pub use_specaugment: bool,
    #[serde(default)]
    pub use_personalization: bool,
    #[serde(default)]
    pub synthetic_ratio: f64,
    /// Caps the run below epochs x steps-per-epoch; mainly for smoke runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Stop as soon as an evaluation reaches this WER or better.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_wer: Option<f64>,
}

fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_warmup() -> usize {
    DEFAULT_WARMUP_STEPS
}
fn default_eval_every() -> usize {
    DEFAULT_EVAL_EVERY
}
fn default_dev_fraction() -> f64 {
    DEFAULT_DEV_FRACTION
}

impl TrainConfig {
    pub fn smoke(adapter: AdapterSpec, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            adapter,
            learning_rate,
            epochs: DEFAULT_EPOCHS,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            eval_every_steps: DEFAULT_EVAL_EVERY,
            optimizer: AdamWConfig::default(),
            batch_size: 8,
            seed,
            dev_subsample_fraction: 1.0,
            use_specaugment: false,
            use_personalization: false,
            synthetic_ratio: 0.0,
            max_steps: None,
            early_stop_wer: None,
        }
    }

    pub fn validate(&self, total_steps: usize) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(self.dev_subsample_fraction > 0.0 && self.dev_subsample_fraction <= 1.0) {
            return Err(TrainError::Config(
                "dev_subsample_fraction must be in (0, 1]".into(),
            ));
        }
        if total_steps <= self.warmup_steps {
            return Err(TrainError::Config(format!(
                "warmup_steps ({}) must be below total steps ({total_steps})",
                self.warmup_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training examples")]
    NoExamples,
    #[error("loss diverged to {loss} at step {step}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// One ready-to-train utterance: features, the raw waveform (kept for the
/// embedding extractors), and the tokenized transcript.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub features: FeatureMatrix,
    pub waveform: Vec<f64>,
    pub transcript: String,
    pub tokens: Vec<usize>,
}

pub fn prepare_example(
    id: &str,
    waveform: Vec<f64>,
    transcript: &str,
    frontend: &FrontendConfig,
    tokenizer: &CharTokenizer,
) -> Result<TrainExample, TrainError> {
    let features = log_mel(&waveform, frontend)?;
    let tokens = tokenizer.encode(&normalize_joined(transcript));
    Ok(TrainExample {
        id: id.to_string(),
        features,
        waveform,
        transcript: transcript.to_string(),
        tokens,
    })
}

fn sub_seed(root: u64, label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ root.wrapping_mul(0x100000001b3);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Pooled embedding per (example, provider), computed once.
struct EmbeddingCache {
    cache: BTreeMap<(usize, usize), Vec<f64>>,
}

impl EmbeddingCache {
    fn new() -> Self {
        EmbeddingCache {
            cache: BTreeMap::new(),
        }
    }

    fn get(
        &mut self,
        example_idx: usize,
        provider_idx: usize,
        registry: &EmbeddingProviderRegistry,
        waveform: &[f64],
    ) -> Result<Vec<f64>, ConditioningError> {
        if let Some(v) = self.cache.get(&(example_idx, provider_idx)) {
            return Ok(v.clone());
        }
        let extractor = registry.providers[provider_idx].extractor.as_ref();
        let e = extract_embedding(extractor, waveform)?;
        self.cache
            .insert((example_idx, provider_idx), e.vector.clone());
        Ok(e.vector)
    }
}

/// Teacher-forced batch loss on the tape: per-position mean cross entropy
/// pooled over the whole batch, plus the rank-adaptive orthogonality penalty
/// when active. Returns the loss node.
fn forward_batch(
    ps: &mut PassState,
    model: &AdaptedModel,
    registry: &EmbeddingProviderRegistry,
    examples: &[(usize, &TrainExample)],
    cache: &mut EmbeddingCache,
    use_personalization: bool,
    use_specaugment: bool,
    step: usize,
) -> Result<adaptasr_core::autodiff::TRef, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let hook = model.hook();
    let bos = model.backbone.config.bos_id;
    let eos = model.backbone.config.eos_id;

    let bound_mappings: Vec<_> = registry
        .providers
        .iter()
        .map(|p| p.mapping.bind(ps, p.extractor.source(), true))
        .collect();

    let total_positions: usize = examples.iter().map(|(_, e)| e.tokens.len() + 1).sum();
    let mut loss: Option<adaptasr_core::autodiff::TRef> = None;
    for &(example_idx, example) in examples {
        let features = if use_specaugment {
            spec_augment(
                &example.features,
                &SpecAugmentPolicy::default(),
                sub_seed(step as u64, &example.id),
            )
        } else {
            example.features.clone()
        };
        let mut memory = model
            .backbone
            .forward_encoder(ps, &hook, &features.frames)?;
        if use_personalization {
            let mut mapped = Vec::with_capacity(bound_mappings.len());
            for (provider_idx, bm) in bound_mappings.iter().enumerate() {
                let vector = cache.get(example_idx, provider_idx, registry, &example.waveform)?;
                let e = ps.tape.constant(Mat::row_vec(vector));
                mapped.push(bm.forward(ps, e));
            }
            memory = condition_refs(&mut ps.tape, memory, &mapped);
        }
        let mut input = vec![bos];
        input.extend_from_slice(&example.tokens);
        let mut targets = example.tokens.clone();
        targets.push(eos);
        let logits = model.backbone.forward_decoder(ps, &hook, memory, &input)?;
        let mask = vec![true; targets.len()];
        let ce = ps.tape.cross_entropy(logits, &targets, &mask);
        // cross_entropy averages within the utterance; reweight so the batch
        // loss is the mean over all positions.
        let weighted = ps
            .tape
            .scale(ce, targets.len() as f64 / total_positions as f64);
        loss = Some(match loss {
            Some(acc) => ps.tape.add(acc, weighted),
            None => weighted,
        });
    }
    let mut loss = loss.expect("batch checked non-empty");
    if let Some(penalty) = model.hook().ortho_penalty(ps) {
        loss = ps.tape.add(loss, penalty);
    }
    Ok(loss)
}

/// Inference-mode batch loss (no dropout, no gradients).
pub fn batch_loss(
    model: &AdaptedModel,
    registry: &EmbeddingProviderRegistry,
    examples: &[&TrainExample],
    use_personalization: bool,
) -> Result<f64, TrainError> {
    let mut ps = PassState::inference();
    let mut cache = EmbeddingCache::new();
    let indexed: Vec<(usize, &TrainExample)> =
        examples.iter().enumerate().map(|(i, e)| (i, *e)).collect();
    let loss = forward_batch(
        &mut ps,
        model,
        registry,
        &indexed,
        &mut cache,
        use_personalization,
        false,
        0,
    )?;
    Ok(ps.tape.value(loss).get(0, 0))
}

/// Greedy transcription of one waveform through the personalized pipeline.
pub fn transcribe(
    model: &AdaptedModel,
    registry: &EmbeddingProviderRegistry,
    waveform: &[f64],
    frontend: &FrontendConfig,
    tokenizer: &CharTokenizer,
) -> Result<String, TrainError> {
    let features = log_mel(waveform, frontend)?;
    let hook = model.hook();
    let memory = model.backbone.encode_hooked(&features, &hook)?;
    let memory = if registry.is_empty() {
        memory
    } else {
        let mapped = registry.mapped_embeddings(waveform)?;
        condition(&memory, &mapped)?
    };
    let tokens =
        model
            .backbone
            .greedy_decode_hooked(&memory, model.backbone.config.max_decode_len, &hook)?;
    Ok(tokenizer.decode(&tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub wer: f64,
    pub semscore: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub wer: f64,
    pub semscore: f64,
    pub file: String,
    pub is_best: bool,
}

/// Index of the record with minimal WER, earliest step on ties.
pub fn select_best(records: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(step, w)) in records.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let (bs, bw) = records[b];
                if w < bw || (w == bw && step < bs) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub checkpoints: Vec<CheckpointRecord>,
    pub evals: Vec<EvalRecord>,
    pub losses: Vec<f64>,
    pub steps_run: usize,
}

fn evaluate(
    model: &AdaptedModel,
    registry: &EmbeddingProviderRegistry,
    dev: &[&TrainExample],
    use_personalization: bool,
    frontendless_tokenizer: &CharTokenizer,
    scorer: &Scorer<'_>,
) -> Result<(f64, f64), TrainError> {
    let mut pooled = EditCounts::default();
    let mut sem_total = 0.0;
    let hook = model.hook();
    for example in dev {
        let memory = model.backbone.encode_hooked(&example.features, &hook)?;
        let memory = if use_personalization && !registry.is_empty() {
            let mapped = registry.mapped_embeddings(&example.waveform)?;
            condition(&memory, &mapped)?
        } else {
            memory
        };
        let tokens = model.backbone.greedy_decode_hooked(
            &memory,
            model.backbone.config.max_decode_len,
            &hook,
        )?;
        let hypothesis = frontendless_tokenizer.decode(&tokens);
        let counts = edit_counts(
            &normalize_text(&example.transcript),
            &normalize_text(&hypothesis),
        );
        pooled = pooled.pool(&counts);
        sem_total += scorer.semscore(&example.transcript, &hypothesis)?;
    }
    Ok((
        wer(&pooled).map_err(ScoreError::from)?,
        sem_total / dev.len() as f64,
    ))
}

/// Seeded, order-preserving ceil-fraction subsample.
fn subsample(examples: &[TrainExample], fraction: f64, seed: u64) -> Vec<&TrainExample> {
    let n = examples.len();
    let keep = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(keep);
    indices.sort_unstable();
    indices.iter().map(|&i| &examples[i]).collect()
}

/// Length-bucketed batches: sort by frame count, chunk, then shuffle the
/// batch order per epoch so padding waste stays bounded without fixing the
/// visit order.
fn epoch_batches(examples: &[TrainExample], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].features.num_frames(), i));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    batches
}

fn collect_grads(
    ps: &PassState,
    grads: &adaptasr_core::autodiff::Grads,
    names: &[String],
) -> Vec<Option<Mat>> {
    names
        .iter()
        .map(|name| {
            ps.bound_leaf(name)
                .and_then(|leaf| grads.get(leaf).cloned())
        })
        .collect()
}

fn write_params(
    model: &mut AdaptedModel,
    registry: &mut EmbeddingProviderRegistry,
    names: &[String],
    optimizer: &mut AdamW,
    lr: f64,
    grads: &[Option<Mat>],
) {
    // Borrow every trainable tensor at once so AdamW can step them together
    // (its bias-correction clock ticks once per call).
    let mut slots: BTreeMap<&str, &mut Mat> = BTreeMap::new();
    if model.spec.method == AdapterMethod::Fft {
        for (name, m) in model.backbone.params.iter_mut() {
            slots.insert(name.as_str(), m);
        }
    }
    let mut adapter_slots: Vec<(String, &mut Mat)> = Vec::new();
    for (site, state) in model.state.sites.iter_mut() {
        match state {
            adaptasr_core::adapters::SiteState::Lora { a, b } => {
                adapter_slots.push((format!("adapter.{site}.a"), a));
                adapter_slots.push((format!("adapter.{site}.b"), b));
            }
            adaptasr_core::adapters::SiteState::Adalora { p, lambda, q, .. } => {
                adapter_slots.push((format!("adapter.{site}.p"), p));
                adapter_slots.push((format!("adapter.{site}.lambda"), lambda));
                adapter_slots.push((format!("adapter.{site}.q"), q));
            }
        }
    }
    for (name, m) in adapter_slots.iter_mut() {
        slots.insert(name.as_str(), m);
    }
    let mut mapping_slots: Vec<(String, &mut Mat)> = Vec::new();
    for p in registry.providers.iter_mut() {
        let source = p.extractor.source().to_string();
        mapping_slots.push((format!("mapping.{source}.w1"), &mut p.mapping.w1));
        mapping_slots.push((format!("mapping.{source}.b1"), &mut p.mapping.b1));
        mapping_slots.push((format!("mapping.{source}.w2"), &mut p.mapping.w2));
        mapping_slots.push((format!("mapping.{source}.b2"), &mut p.mapping.b2));
    }
    for (name, m) in mapping_slots.iter_mut() {
        slots.insert(name.as_str(), m);
    }

    let mut params: Vec<&mut Mat> = Vec::with_capacity(names.len());
    for name in names {
        params.push(
            slots
                .remove(name.as_str())
                .expect("trainable name must have a parameter slot"),
        );
    }
    let grad_refs: Vec<Option<&Mat>> = grads.iter().map(|g| g.as_ref()).collect();
    optimizer.step(lr, &mut params, &grad_refs);
}

fn make_checkpoint(model: &AdaptedModel, registry: &EmbeddingProviderRegistry) -> Checkpoint {
    let mappings: Vec<MappingRecord> = registry
        .providers
        .iter()
        .map(|p| MappingRecord {
            source: p.extractor.source().to_string(),
            network: p.mapping.clone(),
        })
        .collect();
    if model.spec.method == AdapterMethod::Fft {
        full_checkpoint(model, mappings)
    } else {
        adapter_checkpoint(model, mappings)
    }
}

/// Runs the training loop. When `out_dir` is given the run directory gains
/// `config.snapshot`, `records.log` (one `step, WER, SemScore, lr` line per
/// evaluation), and `checkpoints/`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut AdaptedModel,
    registry: &mut EmbeddingProviderRegistry,
    train_examples: &[TrainExample],
    dev_examples: &[TrainExample],
    config: &TrainConfig,
    scorer: &Scorer<'_>,
    tokenizer: &CharTokenizer,
    out_dir: Option<&Path>,
) -> Result<RunArtifacts, TrainError> {
    if train_examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let steps_per_epoch = train_examples.len().div_ceil(config.batch_size);
    let mut total_steps = config.epochs * steps_per_epoch;
    if let Some(cap) = config.max_steps {
        total_steps = total_steps.min(cap);
    }
    config.validate(total_steps)?;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::write(
            dir.join("config.snapshot"),
            serde_json::to_string_pretty(config).map_err(std::io::Error::other)?,
        )?;
    }

    let names = trainable_parameters(model, registry);
    let shapes: Vec<(usize, usize)> = names
        .iter()
        .map(|name| {
            let m = lookup_param(model, registry, name);
            (m.rows(), m.cols())
        })
        .collect();
    let mut optimizer = AdamW::new(config.optimizer, &shapes);
    let mut cache = EmbeddingCache::new();

    let dev_subset = subsample(
        dev_examples,
        config.dev_subsample_fraction,
        sub_seed(config.seed, "dev-subsample"),
    );

    let mut losses = Vec::with_capacity(total_steps);
    let mut evals: Vec<EvalRecord> = Vec::new();
    let mut eval_checkpoints: Vec<(usize, f64, f64, String, Checkpoint)> = Vec::new();
    let n_sites = model.state.sites.len();
    let mut step = 0usize;
    let mut stopped_early = false;

    'epochs: for epoch in 0..config.epochs {
        let batches = epoch_batches(
            train_examples,
            config.batch_size,
            sub_seed(config.seed, "shuffle") ^ epoch as u64,
        );
        for batch in batches {
            step += 1;
            let lr = lr_at(
                step.min(total_steps),
                config.learning_rate,
                config.warmup_steps,
                total_steps,
            )?;

            let mut ps = PassState::training(
                config.adapter.method == AdapterMethod::Fft,
                sub_seed(config.seed, "dropout") ^ step as u64,
            );
            let indexed: Vec<(usize, &TrainExample)> =
                batch.iter().map(|&i| (i, &train_examples[i])).collect();
            let loss = forward_batch(
                &mut ps,
                model,
                registry,
                &indexed,
                &mut cache,
                config.use_personalization,
                config.use_specaugment,
                step,
            )?;
            let loss_value = ps.tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged {
                    step,
                    loss: loss_value,
                });
            }
            losses.push(loss_value);
            let grads = ps.tape.backward(loss);
            let grad_mats = collect_grads(&ps, &grads, &names);

            if config.adapter.method == AdapterMethod::Adalora {
                for (site, state) in model.state.sites.iter_mut() {
                    let name = format!("adapter.{site}.lambda");
                    if let Some(leaf) = ps.bound_leaf(&name) {
                        if let Some(g) = grads.get(leaf) {
                            update_importance(state, g, config.adapter.ema_decay);
                        }
                    }
                }
            }
            drop(ps);

            write_params(model, registry, &names, &mut optimizer, lr, &grad_mats);

            if config.adapter.method == AdapterMethod::Adalora
                && config.adapter.reallocate_every > 0
                && step % config.adapter.reallocate_every == 0
            {
                let budget = adalora_budget(step, &config.adapter, n_sites);
                adalora_reallocate(&mut model.state, budget);
            }

            let at_end = step == total_steps;
            if step % config.eval_every_steps == 0 || at_end {
                let (dev_wer, dev_sem) = evaluate(
                    model,
                    registry,
                    &dev_subset,
                    config.use_personalization,
                    tokenizer,
                    scorer,
                )?;
                evals.push(EvalRecord {
                    step,
                    wer: dev_wer,
                    semscore: dev_sem,
                    lr,
                });
                let file = format!("checkpoints/step-{step:06}.json");
                eval_checkpoints.push((step, dev_wer, dev_sem, file, make_checkpoint(model, registry)));
                if config.early_stop_wer.is_some_and(|target| dev_wer <= target) {
                    stopped_early = true;
                    break 'epochs;
                }
            }
            if at_end {
                break 'epochs;
            }
        }
    }

    // Short runs (or early stops) may end between scheduled evaluations;
    // always finish with one so a best checkpoint exists.
    if eval_checkpoints.last().map(|c| c.0) != Some(step) && !stopped_early {
        let lr = lr_at(
            step.min(total_steps),
            config.learning_rate,
            config.warmup_steps,
            total_steps,
        )?;
        let (dev_wer, dev_sem) = evaluate(
            model,
            registry,
            &dev_subset,
            config.use_personalization,
            tokenizer,
            scorer,
        )?;
        evals.push(EvalRecord {
            step,
            wer: dev_wer,
            semscore: dev_sem,
            lr,
        });
        let file = format!("checkpoints/step-{step:06}.json");
        eval_checkpoints.push((step, dev_wer, dev_sem, file, make_checkpoint(model, registry)));
    }

    let best = select_best(
        &eval_checkpoints
            .iter()
            .map(|c| (c.0, c.1))
            .collect::<Vec<_>>(),
    )
    .expect("at least one evaluation ran");

    let mut checkpoints = Vec::with_capacity(eval_checkpoints.len());
    for (i, (ckpt_step, ckpt_wer, ckpt_sem, file, ckpt)) in eval_checkpoints.into_iter().enumerate()
    {
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join(&file), &ckpt)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        }
        checkpoints.push(CheckpointRecord {
            step: ckpt_step,
            wer: ckpt_wer,
            semscore: ckpt_sem,
            file,
            is_best: i == best,
        });
    }

    if let Some(dir) = out_dir {
        let mut log = fs::File::create(dir.join("records.log"))?;
        for e in &evals {
            writeln!(log, "{}, {:.4}, {:.4}, {:.8}", e.step, e.wer, e.semscore, e.lr)?;
        }
    }

    Ok(RunArtifacts {
        checkpoints,
        evals,
        losses,
        steps_run: step,
    })
}

fn lookup_param<'a>(
    model: &'a AdaptedModel,
    registry: &'a EmbeddingProviderRegistry,
    name: &str,
) -> &'a Mat {
    if let Some(m) = model.state.param(name) {
        return m;
    }
    if let Some(rest) = name.strip_prefix("mapping.") {
        let (source, field) = rest.rsplit_once('.').expect("mapping.{source}.{field}");
        let p = registry
            .providers
            .iter()
            .find(|p| p.extractor.source() == source)
            .expect("mapping name must match a provider");
        return p.mapping.param(field).expect("known mapping field");
    }
    model
        .backbone
        .params
        .get(name)
        .expect("name must be adapter, mapping, or backbone parameter")
}
