//! Layered TOML experiment configuration: one file describes the frontend,
//! backbone, conditioning registry, adapter, training, metrics, and synth
//! blocks. `extends = "name-or-path"` deep-merges over a parent (bundled
//! preset name or a path relative to the child file). All randomness fans
//! out from the single root `seed`.

use std::path::Path;

use adaptasr_core::adapters::AdapterSpec;
use adaptasr_core::backbone::BackboneConfig;
use adaptasr_core::conditioning::{EmbeddingProviderRegistry, MappingNetwork, Provider};
use adaptasr_core::frontend::FrontendConfig;
use adaptasr_core::semscore::SemScoreWeights;
use adaptasr_core::text::CharTokenizer;
use serde::{Deserialize, Serialize};

use crate::clients::{
    AsrClient, ExternalCommand, NliClient, SemanticClient, StubAsr, StubLlm, StubNli,
    StubSemantic, StubTts, StubXVector, TextGenClient, TtsClient, TONE_CHARSET,
};
use crate::synthpipe::AttributeBins;
use crate::trainer::TrainConfig;

pub const BUNDLED_PRESETS: &[(&str, &str)] = &[
    ("toy-smoke", include_str!("../presets/toy-smoke.toml")),
    ("lora-grid", include_str!("../presets/lora-grid.toml")),
    ("adalora-grid", include_str!("../presets/adalora-grid.toml")),
    ("fft-grid", include_str!("../presets/fft-grid.toml")),
];

const MAX_EXTENDS_DEPTH: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown preset or missing file: {0}")]
    UnknownParent(String),
    #[error("extends chain deeper than {MAX_EXTENDS_DEPTH} (cycle?)")]
    TooDeep,
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// One model-backed dependency. `stub` needs no parameters;
/// `external-command` runs `program args...` per request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ClientSpec {
    Stub,
    ExternalCommand {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    HttpEndpoint {
        url: String,
    },
}

impl Default for ClientSpec {
    fn default() -> Self {
        ClientSpec::Stub
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub source: String,
    #[serde(default)]
    pub client: ClientSpec,
    /// Embedding dimension `a`.
    pub dim: usize,
    /// Mapping hidden width; defaults to `dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistryConfig {
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default)]
    pub weights: SemScoreWeights,
    #[serde(default)]
    pub semantic_client: ClientSpec,
    #[serde(default)]
    pub nli_client: ClientSpec,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            weights: SemScoreWeights::default(),
            semantic_client: ClientSpec::Stub,
            nli_client: ClientSpec::Stub,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_prompt_k")]
    pub prompt_k: usize,
    #[serde(default = "default_synth_n")]
    pub n: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub bins: AttributeBins,
    #[serde(default)]
    pub llm_client: ClientSpec,
    #[serde(default)]
    pub tts_client: ClientSpec,
    #[serde(default)]
    pub asr_client: ClientSpec,
}

fn default_prompt_k() -> usize {
    crate::synthpipe::DEFAULT_PROMPT_K
}
fn default_synth_n() -> usize {
    16
}
fn default_threshold() -> f64 {
    crate::synthpipe::DEFAULT_FILTER_THRESHOLD
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            prompt_k: default_prompt_k(),
            n: default_synth_n(),
            threshold: default_threshold(),
            bins: AttributeBins::default(),
            llm_client: ClientSpec::Stub,
            tts_client: ClientSpec::Stub,
            asr_client: ClientSpec::Stub,
        }
    }
}

/// The `[train]` block: everything in [`TrainConfig`] except the adapter
/// (which has its own block) and the seed (fanned out from the root seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBlock {
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every_steps: usize,
    #[serde(default)]
    pub optimizer: adaptasr_core::optim::AdamWConfig,
    pub batch_size: usize,
    #[serde(default = "default_dev_fraction")]
    pub dev_subsample_fraction: f64,
    #[serde(default)]
    pub use_specaugment: bool,
    #[serde(default)]
    pub use_personalization: bool,
    #[serde(default)]
    pub synthetic_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_wer: Option<f64>,
}

fn default_epochs() -> usize {
    crate::trainer::DEFAULT_EPOCHS
}
fn default_warmup() -> usize {
    crate::trainer::DEFAULT_WARMUP_STEPS
}
fn default_eval_every() -> usize {
    crate::trainer::DEFAULT_EVAL_EVERY
}
fn default_dev_fraction() -> f64 {
    crate::trainer::DEFAULT_DEV_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub frontend: FrontendConfig,
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub registry: RegistryConfig,
    pub adapter: AdapterSpec,
    pub train: TrainBlock,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn sub_seed(root: u64, label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ root.wrapping_mul(0x100000001b3);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ExperimentConfig {
    pub fn tokenizer(&self) -> CharTokenizer {
        CharTokenizer::new(TONE_CHARSET)
    }

    pub fn seed_for(&self, label: &str) -> u64 {
        sub_seed(self.seed, label)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adapter: self.adapter.clone(),
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            warmup_steps: self.train.warmup_steps,
            eval_every_steps: self.train.eval_every_steps,
            optimizer: self.train.optimizer,
            batch_size: self.train.batch_size,
            seed: self.seed_for("train"),
            dev_subsample_fraction: self.train.dev_subsample_fraction,
            use_specaugment: self.train.use_specaugment,
            use_personalization: self.train.use_personalization,
            synthetic_ratio: self.train.synthetic_ratio,
            max_steps: self.train.max_steps,
            early_stop_wer: self.train.early_stop_wer,
        }
    }

    pub fn build_registry(&self) -> Result<EmbeddingProviderRegistry, ConfigError> {
        let mut providers = Vec::new();
        for (i, p) in self.registry.providers.iter().enumerate() {
            let extractor = match &p.client {
                ClientSpec::Stub => {
                    let mut stub = StubXVector::new(p.dim);
                    stub.source_tag = p.source.clone();
                    Box::new(stub)
                }
                other => {
                    return Err(ConfigError::Invalid(vec![format!(
                        "registry.providers[{i}]: only stub embedding extractors are supported, got {other:?}"
                    )]))
                }
            };
            let hidden = p.hidden.unwrap_or(p.dim);
            providers.push(Provider {
                extractor,
                mapping: MappingNetwork::new(
                    p.dim,
                    hidden,
                    self.backbone.width,
                    self.seed_for(&format!("mapping.{}", p.source)),
                ),
            });
        }
        Ok(EmbeddingProviderRegistry { providers })
    }

    pub fn build_semantic(&self) -> Result<Box<dyn SemanticClient>, ConfigError> {
        build_scored_client(&self.metrics.semantic_client, "semantic").map(|c| match c {
            Built::Stub => Box::new(StubSemantic) as Box<dyn SemanticClient>,
            Built::External(e) => Box::new(e),
        })
    }

    pub fn build_nli(&self) -> Result<Box<dyn NliClient>, ConfigError> {
        build_scored_client(&self.metrics.nli_client, "nli").map(|c| match c {
            Built::Stub => Box::new(StubNli) as Box<dyn NliClient>,
            Built::External(e) => Box::new(e),
        })
    }

    pub fn build_llm(&self) -> Result<Box<dyn TextGenClient>, ConfigError> {
        match &self.synth.llm_client {
            ClientSpec::Stub => Ok(Box::new(StubLlm)),
            other => Err(unsupported("synth.llm_client", other)),
        }
    }

    pub fn build_tts(&self) -> Result<Box<dyn TtsClient>, ConfigError> {
        match &self.synth.tts_client {
            ClientSpec::Stub => Ok(Box::new(StubTts {
                codec: crate::clients::CharToneCodec {
                    sample_rate: self.frontend.sample_rate,
                    ..Default::default()
                },
            })),
            other => Err(unsupported("synth.tts_client", other)),
        }
    }

    pub fn build_asr(&self) -> Result<Box<dyn AsrClient>, ConfigError> {
        match &self.synth.asr_client {
            ClientSpec::Stub => Ok(Box::new(StubAsr {
                codec: crate::clients::CharToneCodec {
                    sample_rate: self.frontend.sample_rate,
                    ..Default::default()
                },
            })),
            ClientSpec::ExternalCommand { program, args } => Ok(Box::new(ExternalCommand {
                program: program.clone(),
                args: args.clone(),
            })),
            other => Err(unsupported("synth.asr_client", other)),
        }
    }
}

enum Built {
    Stub,
    External(ExternalCommand),
}

fn build_scored_client(spec: &ClientSpec, which: &str) -> Result<Built, ConfigError> {
    match spec {
        ClientSpec::Stub => Ok(Built::Stub),
        ClientSpec::ExternalCommand { program, args } => Ok(Built::External(ExternalCommand {
            program: program.clone(),
            args: args.clone(),
        })),
        other => Err(unsupported(&format!("metrics.{which}_client"), other)),
    }
}

fn unsupported(field: &str, spec: &ClientSpec) -> ConfigError {
    ConfigError::Invalid(vec![format!(
        "{field}: client kind {spec:?} is not supported (use stub or external-command)"
    )])
}

/// Child values win; tables merge recursively; arrays and scalars replace.
fn deep_merge(parent: toml::Value, child: toml::Value) -> toml::Value {
    match (parent, child) {
        (toml::Value::Table(mut p), toml::Value::Table(c)) => {
            for (k, cv) in c {
                let merged = match p.remove(&k) {
                    Some(pv) => deep_merge(pv, cv),
                    None => cv,
                };
                p.insert(k, merged);
            }
            toml::Value::Table(p)
        }
        (_, child) => child,
    }
}

fn parse_toml(text: &str, path: &str) -> Result<toml::Value, ConfigError> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })
}

fn resolve_value(text: &str, origin: &str, base_dir: &Path, depth: usize) -> Result<toml::Value, ConfigError> {
    if depth > MAX_EXTENDS_DEPTH {
        return Err(ConfigError::TooDeep);
    }
    let mut value = parse_toml(text, origin)?;
    let parent_name = value
        .as_table_mut()
        .and_then(|t| t.remove("extends"))
        .and_then(|v| v.as_str().map(String::from));
    let Some(parent_name) = parent_name else {
        return Ok(value);
    };
    let parent = if let Some((_, preset)) = BUNDLED_PRESETS.iter().find(|(n, _)| *n == parent_name)
    {
        resolve_value(preset, &parent_name, base_dir, depth + 1)?
    } else {
        let parent_path = base_dir.join(&parent_name);
        let text = std::fs::read_to_string(&parent_path).map_err(|_| {
            ConfigError::UnknownParent(parent_name.clone())
        })?;
        let parent_dir = parent_path.parent().unwrap_or(base_dir).to_path_buf();
        resolve_value(&text, &parent_name, &parent_dir, depth + 1)?
    };
    Ok(deep_merge(parent, value))
}

/// Loads a config file (or bundled preset name), resolving `extends` chains.
pub fn load_config(path_or_preset: &str) -> Result<ExperimentConfig, ConfigError> {
    let (text, origin, base_dir) = if let Some((_, preset)) =
        BUNDLED_PRESETS.iter().find(|(n, _)| *n == path_or_preset)
    {
        (
            preset.to_string(),
            path_or_preset.to_string(),
            std::path::PathBuf::from("."),
        )
    } else {
        let path = Path::new(path_or_preset);
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path_or_preset.to_string(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        (text, path_or_preset.to_string(), dir)
    };
    let value = resolve_value(&text, &origin, &base_dir, 0)?;
    let config: ExperimentConfig = value.try_into().map_err(|e| ConfigError::Parse {
        path: origin,
        message: e.to_string(),
    })?;
    Ok(config)
}

/// Checks every cross-block constraint, collecting all violations rather
/// than stopping at the first.
pub fn validate_config(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let mut violations = Vec::new();

    if let Err(e) = config.backbone.validate() {
        violations.push(format!("backbone: {e}"));
    }
    if let Err(e) = config.adapter.validate() {
        violations.push(format!("adapter: {e}"));
    }
    if let Err(e) = config.metrics.weights.validate() {
        violations.push(format!("metrics.weights: {e}"));
    }
    if config.frontend.n_mels != config.backbone.n_mels {
        violations.push(format!(
            "frontend.n_mels ({}) must equal backbone.n_mels ({})",
            config.frontend.n_mels, config.backbone.n_mels
        ));
    }
    let vocab = config.tokenizer().vocab_size();
    if config.backbone.vocab_size != vocab {
        violations.push(format!(
            "backbone.vocab_size ({}) must equal tokenizer vocabulary ({vocab})",
            config.backbone.vocab_size
        ));
    }
    for (i, p) in config.registry.providers.iter().enumerate() {
        if p.dim == 0 {
            violations.push(format!("registry.providers[{i}]: dim must be positive"));
        }
        if p.hidden == Some(0) {
            violations.push(format!("registry.providers[{i}]: hidden must be positive"));
        }
        if p.source.is_empty() {
            violations.push(format!("registry.providers[{i}]: source must be non-empty"));
        }
    }
    let sources: Vec<&String> = config.registry.providers.iter().map(|p| &p.source).collect();
    for (i, s) in sources.iter().enumerate() {
        if sources[..i].contains(s) {
            violations.push(format!("registry: duplicate provider source '{s}'"));
        }
    }
    if !(config.train.learning_rate > 0.0) {
        violations.push("train.learning_rate must be positive".into());
    }
    if config.train.batch_size == 0 {
        violations.push("train.batch_size must be at least 1".into());
    }
    if !(config.train.dev_subsample_fraction > 0.0 && config.train.dev_subsample_fraction <= 1.0) {
        violations.push("train.dev_subsample_fraction must be in (0, 1]".into());
    }
    if !(0.0..=1.0).contains(&config.train.synthetic_ratio) {
        violations.push("train.synthetic_ratio must be in [0, 1]".into());
    }
    if config.synth.prompt_k == 0 {
        violations.push("synth.prompt_k must be at least 1".into());
    }
    if config.synth.n == 0 {
        violations.push("synth.n must be at least 1".into());
    }
    if !(config.synth.threshold > 0.0) {
        violations.push("synth.threshold must be positive".into());
    }
    for (field, spec) in [
        ("metrics.semantic_client", &config.metrics.semantic_client),
        ("metrics.nli_client", &config.metrics.nli_client),
        ("synth.llm_client", &config.synth.llm_client),
        ("synth.tts_client", &config.synth.tts_client),
        ("synth.asr_client", &config.synth.asr_client),
    ] {
        if matches!(spec, ClientSpec::HttpEndpoint { .. }) {
            violations.push(format!(
                "{field}: http-endpoint clients are not supported in this build"
            ));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(violations))
    }
}
