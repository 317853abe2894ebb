//! Command-line entry points. Every command that writes a run directory
//! claims a fresh one first: a directory holding a `run.complete` marker is
//! never reused, the command moves to `-v2`, `-v3`, ... instead.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use adaptasr_core::adapters::{inject, AdapterMethod, AdaptedModel};
use adaptasr_core::backbone::ToyBackbone;
use adaptasr_core::conditioning::EmbeddingProviderRegistry;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::audio::read_wav_expecting;
use crate::checkpoint::{apply_adapter, load_checkpoint, restore_full, CheckpointKind};
use crate::config::{load_config, validate_config, ExperimentConfig};
use crate::manifests::{
    load_manifest, mix_synthetic, save_manifest, Gender, Manifest, Split, Utterance,
};
use crate::scoring::{
    build_report, load_hypotheses, render_table, save_hypotheses, score_all, Hypothesis, Scorer,
};
use crate::synthpipe::{
    export_pool, filter_intelligibility, run_generation, SynthCandidate, SynthRunConfig,
    VoiceAttributes,
};
use crate::trainer::{prepare_example, train, transcribe, TrainExample};

pub const RUN_COMPLETE_MARKER: &str = "run.complete";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Manifest(#[from] crate::manifests::ManifestError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Score(#[from] crate::scoring::ScoreError),
    #[error(transparent)]
    Synth(#[from] crate::synthpipe::SynthError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("backbone error: {0}")]
    Backbone(#[from] adaptasr_core::backbone::BackboneError),
    #[error("adapter error: {0}")]
    Adapter(#[from] adaptasr_core::adapters::AdapterError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "adaptasr",
    about = "Personalized adapter fine-tuning, synthetic data, and evaluation for a toy speech recognizer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train adapters (and mapping networks) on a manifest.
    Train(TrainArgs),
    /// Transcribe a manifest split with a checkpoint and score it.
    Evaluate(EvaluateArgs),
    /// Transcribe a single wav file.
    Transcribe(TranscribeArgs),
    /// Synthetic-data pipeline.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Mix real and synthetic training manifests at a ratio.
    Mix(MixArgs),
    /// Score an existing hypotheses file against a manifest.
    Report(ReportArgs),
    /// Run a method x personalization grid and summarize it.
    Matrix(MatrixArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Seed prompts, generate transcripts, synthesize, filter, export.
    Generate(SynthGenerateArgs),
    /// Re-filter an exported pool at a threshold.
    Filter(SynthFilterArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file path or bundled preset name.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub train_manifest: PathBuf,
    #[arg(long)]
    pub dev_manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Which split to evaluate.
    #[arg(long, default_value = "dev")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TranscribeArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input wav (mono, at the configured sample rate).
    #[arg(long)]
    pub audio: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthGenerateArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Override the configured candidate count.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthFilterArgs {
    #[arg(long)]
    pub config: String,
    /// Directory holding a pool `manifest.jsonl` plus wav files.
    #[arg(long)]
    pub pool: PathBuf,
    /// Override the configured WER threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output manifest file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hypotheses file, one `{"id", "text"}` JSON object per line.
    #[arg(long)]
    pub hypotheses: PathBuf,
    /// Which split the hypotheses cover.
    #[arg(long, default_value = "dev")]
    pub split: String,
    /// Optional JSON report destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub train_manifest: PathBuf,
    #[arg(long)]
    pub dev_manifest: PathBuf,
    /// Comma-separated adapter methods to sweep.
    #[arg(long, default_value = "lora,fft")]
    pub methods: String,
    /// Sweep personalization on and off (otherwise keep the config value).
    #[arg(long, default_value_t = true)]
    pub vary_personalization: bool,
    /// Also sweep the feature-masking flag.
    #[arg(long, default_value_t = false)]
    pub vary_specaugment: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// First directory in `base`, `base-v2`, `base-v3`, ... without a completed
/// run inside. Partially written directories (no marker) are reused.
pub fn claim_run_dir(base: &Path) -> PathBuf {
    if !base.join(RUN_COMPLETE_MARKER).exists() {
        return base.to_path_buf();
    }
    for v in 2.. {
        let candidate = PathBuf::from(format!("{}-v{}", base.display(), v));
        if !candidate.join(RUN_COMPLETE_MARKER).exists() {
            return candidate;
        }
    }
    unreachable!()
}

/// Non-clobbering file name: `name.ext`, `name-v2.ext`, ...
pub fn claim_file(path: &Path) -> PathBuf {
    if !path.exists() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str());
    for v in 2.. {
        let name = match ext {
            Some(e) => format!("{stem}-v{v}.{e}"),
            None => format!("{stem}-v{v}"),
        };
        let candidate = path.with_file_name(name);
        if !candidate.exists() {
            return candidate;
        }
    }
    unreachable!()
}

fn mark_complete(dir: &Path) -> Result<(), CliError> {
    fs::write(dir.join(RUN_COMPLETE_MARKER), "ok\n")?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!(
            "unknown split '{other}' (use train, dev, or test)"
        ))),
    }
}

fn load_validated(config: &str) -> Result<ExperimentConfig, CliError> {
    let config = load_config(config)?;
    validate_config(&config)?;
    Ok(config)
}

/// Reads each record's wav (relative paths resolve against the manifest's
/// directory) and builds training examples.
pub fn load_examples(
    manifest_path: &Path,
    manifest: &Manifest,
    split: Split,
    config: &ExperimentConfig,
) -> Result<Vec<TrainExample>, CliError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let tokenizer = config.tokenizer();
    let mut out = Vec::new();
    for record in manifest.records.iter().filter(|r| r.split == split) {
        let audio_path = {
            let p = Path::new(&record.audio);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let waveform = read_wav_expecting(&audio_path, config.frontend.sample_rate)?;
        out.push(prepare_example(
            &record.id,
            waveform,
            &record.transcript,
            &config.frontend,
            &tokenizer,
        )?);
    }
    Ok(out)
}

fn build_model(config: &ExperimentConfig) -> Result<AdaptedModel, CliError> {
    let backbone = ToyBackbone::new(config.backbone.clone(), config.seed_for("backbone"))?;
    Ok(inject(
        backbone,
        config.adapter.clone(),
        config.seed_for("adapter"),
    )?)
}

/// Rebuilds a model + registry from a checkpoint. Adapter-only checkpoints
/// are applied onto the config's seeded base backbone; mapping networks come
/// from the checkpoint for every source the registry knows.
fn restore_model(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<(AdaptedModel, EmbeddingProviderRegistry), CliError> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let model = match ckpt.kind {
        CheckpointKind::Full => restore_full(&ckpt)?,
        CheckpointKind::Adapter => {
            let base = ToyBackbone::new(config.backbone.clone(), config.seed_for("backbone"))?;
            apply_adapter(base, &ckpt)?
        }
    };
    let mut registry = config.build_registry()?;
    for provider in registry.providers.iter_mut() {
        if let Some(record) = ckpt
            .mappings
            .iter()
            .find(|m| m.source == provider.extractor.source())
        {
            provider.mapping = record.network.clone();
        }
    }
    Ok((model, registry))
}

fn run_train(args: &TrainArgs) -> Result<PathBuf, CliError> {
    let config = load_validated(&args.config)?;
    let train_manifest = load_manifest(&args.train_manifest, false)?;
    let dev_manifest = load_manifest(&args.dev_manifest, false)?;
    let train_examples = load_examples(&args.train_manifest, &train_manifest, Split::Train, &config)?;
    let mut dev_examples = load_examples(&args.dev_manifest, &dev_manifest, Split::Dev, &config)?;
    if dev_examples.is_empty() {
        // smoke-style manifests carry a train split only
        dev_examples = load_examples(&args.dev_manifest, &dev_manifest, Split::Train, &config)?;
    }

    let dir = claim_run_dir(&args.out);
    fs::create_dir_all(&dir)?;

    let mut model = build_model(&config)?;
    let mut registry = config.build_registry()?;
    let semantic = config.build_semantic()?;
    let nli = config.build_nli()?;
    let scorer = Scorer {
        semantic: semantic.as_ref(),
        nli: nli.as_ref(),
        weights: config.metrics.weights,
    };
    let tokenizer = config.tokenizer();
    let run = train(
        &mut model,
        &mut registry,
        &train_examples,
        &dev_examples,
        &config.train_config(),
        &scorer,
        &tokenizer,
        Some(&dir),
    )?;
    let best = run
        .checkpoints
        .iter()
        .find(|c| c.is_best)
        .expect("trainer marks exactly one best checkpoint");
    println!(
        "run complete: {} steps, best step {} (WER {:.2}, SemScore {:.2}) -> {}",
        run.steps_run,
        best.step,
        best.wer,
        best.semscore,
        dir.join(&best.file).display()
    );
    mark_complete(&dir)?;
    Ok(dir)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<PathBuf, CliError> {
    let config = load_validated(&args.config)?;
    let split = parse_split(&args.split)?;
    let manifest = load_manifest(&args.manifest, false)?;
    let examples = load_examples(&args.manifest, &manifest, split, &config)?;
    if examples.is_empty() {
        return Err(CliError::Usage(format!(
            "manifest has no records in split '{}'",
            args.split
        )));
    }
    let (model, registry) = restore_model(&config, &args.checkpoint)?;
    let tokenizer = config.tokenizer();

    let dir = claim_run_dir(&args.out);
    fs::create_dir_all(&dir)?;

    let mut hypotheses = Vec::with_capacity(examples.len());
    for example in &examples {
        let text = transcribe(
            &model,
            &registry,
            &example.waveform,
            &config.frontend,
            &tokenizer,
        )?;
        hypotheses.push(Hypothesis {
            id: example.id.clone(),
            text,
        });
    }
    save_hypotheses(&dir.join("hypotheses.jsonl"), &hypotheses)?;

    let by_id: BTreeMap<String, String> = hypotheses
        .into_iter()
        .map(|h| (h.id, h.text))
        .collect();
    let records: Vec<&Utterance> = manifest
        .records
        .iter()
        .filter(|r| r.split == split)
        .collect();
    let semantic = config.build_semantic()?;
    let nli = config.build_nli()?;
    let scorer = Scorer {
        semantic: semantic.as_ref(),
        nli: nli.as_ref(),
        weights: config.metrics.weights,
    };
    let scores = score_all(&records, &by_id, &scorer)?;
    let report = build_report(&scores)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?,
    )?;
    print!("{}", render_table(&report));
    mark_complete(&dir)?;
    Ok(dir)
}

fn run_transcribe(args: &TranscribeArgs) -> Result<String, CliError> {
    let config = load_validated(&args.config)?;
    let (model, registry) = restore_model(&config, &args.checkpoint)?;
    let waveform = read_wav_expecting(&args.audio, config.frontend.sample_rate)?;
    let text = transcribe(
        &model,
        &registry,
        &waveform,
        &config.frontend,
        &config.tokenizer(),
    )?;
    println!("{text}");
    Ok(text)
}

fn run_synth_generate(args: &SynthGenerateArgs) -> Result<PathBuf, CliError> {
    let config = load_validated(&args.config)?;
    let train = load_manifest(&args.train_manifest, false)?;
    let llm = config.build_llm()?;
    let tts = config.build_tts()?;
    let asr = config.build_asr()?;
    let run_config = SynthRunConfig {
        prompt_k: config.synth.prompt_k,
        n: args.n.unwrap_or(config.synth.n),
        threshold: config.synth.threshold,
        seed: config.seed_for("synth"),
        bins: config.synth.bins.clone(),
    };
    let outcome = run_generation(&train, llm.as_ref(), tts.as_ref(), asr.as_ref(), &run_config)?;
    let (dir, manifest) = export_pool(&outcome.accepted, &args.out)?;
    println!(
        "generated {} candidates: {} accepted, {} rejected -> {}",
        outcome.accepted.len() + outcome.rejected.len(),
        manifest.records.len(),
        outcome.rejected.len(),
        dir.display()
    );
    Ok(dir)
}

fn run_synth_filter(args: &SynthFilterArgs) -> Result<PathBuf, CliError> {
    let config = load_validated(&args.config)?;
    let pool = load_manifest(&args.pool.join("manifest.jsonl"), false)?;
    let tts_rate = config.frontend.sample_rate;
    let mut candidates = Vec::with_capacity(pool.records.len());
    for record in &pool.records {
        let waveform = read_wav_expecting(&args.pool.join(&record.audio), tts_rate)?;
        candidates.push(SynthCandidate {
            prompt: record.transcript.clone(),
            attributes: attributes_from_record(record),
            audio: waveform,
            sample_rate: tts_rate,
            filter_wer: None,
        });
    }
    let asr = config.build_asr()?;
    let threshold = args.threshold.unwrap_or(config.synth.threshold);
    let outcome = filter_intelligibility(candidates, asr.as_ref(), threshold);
    let (dir, manifest) = export_pool(&outcome.accepted, &args.out)?;
    println!(
        "filtered {} candidates at WER < {threshold}: {} kept -> {}",
        manifest.records.len() + outcome.rejected.len(),
        manifest.records.len(),
        dir.display()
    );
    Ok(dir)
}

/// A pool manifest records gender but not the qualitative attributes, so a
/// re-filtered export falls back to neutral bins.
fn attributes_from_record(record: &Utterance) -> VoiceAttributes {
    let gender = record.gender.unwrap_or(Gender::Female);
    let gender_word = match gender {
        Gender::Male => "male",
        Gender::Female => "female",
    };
    VoiceAttributes {
        gender,
        speaking_rate: "moderate".into(),
        pitch: "moderate".into(),
        noise_level: "moderate".into(),
        rendered_description: format!(
            "a {gender_word} speaker with a moderate speaking rate and moderate pitch, recorded in a moderate environment"
        ),
    }
}

fn run_mix(args: &MixArgs) -> Result<PathBuf, CliError> {
    let real = load_manifest(&args.real, false)?;
    let synthetic = load_manifest(&args.synthetic, false)?;
    let mixed = mix_synthetic(&real, &synthetic, args.ratio, args.seed)?;
    let out = claim_file(&args.out);
    save_manifest(&out, &mixed)?;
    println!(
        "mixed {} real + {} synthetic records -> {}",
        real.records.iter().filter(|r| r.split == Split::Train).count(),
        mixed.records.len()
            - real
                .records
                .iter()
                .filter(|r| r.split == Split::Train)
                .count(),
        out.display()
    );
    Ok(out)
}

fn run_report(args: &ReportArgs) -> Result<(), CliError> {
    let config = load_validated(&args.config)?;
    let split = parse_split(&args.split)?;
    let manifest = load_manifest(&args.manifest, false)?;
    let hypotheses = load_hypotheses(&args.hypotheses)?;
    let records: Vec<&Utterance> = manifest
        .records
        .iter()
        .filter(|r| r.split == split)
        .collect();
    let semantic = config.build_semantic()?;
    let nli = config.build_nli()?;
    let scorer = Scorer {
        semantic: semantic.as_ref(),
        nli: nli.as_ref(),
        weights: config.metrics.weights,
    };
    let scores = score_all(&records, &hypotheses, &scorer)?;
    let report = build_report(&scores)?;
    print!("{}", render_table(&report));
    if let Some(out) = &args.out {
        let out = claim_file(out);
        fs::write(
            &out,
            serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?,
        )?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixRow {
    pub method: String,
    pub personalization: bool,
    pub specaugment: bool,
    pub status: String,
    pub wer: Option<f64>,
    pub semscore: Option<f64>,
    pub best_step: Option<usize>,
    pub run_dir: String,
}

fn parse_method(s: &str) -> Result<AdapterMethod, CliError> {
    match s {
        "none" => Ok(AdapterMethod::None),
        "lora" => Ok(AdapterMethod::Lora),
        "adalora" => Ok(AdapterMethod::Adalora),
        "fft" => Ok(AdapterMethod::Fft),
        other => Err(CliError::Usage(format!("unknown adapter method '{other}'"))),
    }
}

fn run_matrix(args: &MatrixArgs) -> Result<Vec<MatrixRow>, CliError> {
    let base = load_validated(&args.config)?;
    let methods: Vec<AdapterMethod> = args
        .methods
        .split(',')
        .map(|m| parse_method(m.trim()))
        .collect::<Result<_, _>>()?;
    let personalization: &[bool] = if args.vary_personalization {
        &[true, false]
    } else {
        &[base.train.use_personalization]
    };
    let specaugment: &[bool] = if args.vary_specaugment {
        &[true, false]
    } else {
        &[base.train.use_specaugment]
    };

    let dir = claim_run_dir(&args.out);
    fs::create_dir_all(&dir)?;

    let mut rows = Vec::new();
    for &method in &methods {
        for &pers in personalization {
            for &spec in specaugment {
                let method_name = format!("{method:?}").to_lowercase();
                let run_name = format!(
                    "run-{method_name}-pers{}-spec{}",
                    pers as u8, spec as u8
                );
                let run_dir = dir.join(&run_name);
                let mut config = base.clone();
                config.adapter = match method {
                    AdapterMethod::Lora => adaptasr_core::adapters::AdapterSpec::lora(
                        base.adapter.rank.max(2),
                        base.adapter.alpha.max(1.0),
                    ),
                    AdapterMethod::Adalora => adaptasr_core::adapters::AdapterSpec::adalora(
                        base.adapter.rank_initial.max(4),
                        base.adapter.rank_target.max(2),
                        base.adapter.alpha.max(1.0),
                    ),
                    AdapterMethod::Fft => adaptasr_core::adapters::AdapterSpec::fft(),
                    AdapterMethod::None => adaptasr_core::adapters::AdapterSpec::none(),
                };
                config.train.use_personalization = pers;
                config.train.use_specaugment = spec;

                // one failing cell must not sink the matrix
                let row = match run_matrix_cell(&config, args, &run_dir) {
                    Ok((wer, semscore, best_step)) => MatrixRow {
                        method: method_name,
                        personalization: pers,
                        specaugment: spec,
                        status: "ok".into(),
                        wer: Some(wer),
                        semscore: Some(semscore),
                        best_step: Some(best_step),
                        run_dir: run_dir.display().to_string(),
                    },
                    Err(e) => MatrixRow {
                        method: method_name,
                        personalization: pers,
                        specaugment: spec,
                        status: format!("failed: {e}"),
                        wer: None,
                        semscore: None,
                        best_step: None,
                        run_dir: run_dir.display().to_string(),
                    },
                };
                rows.push(row);
            }
        }
    }

    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&rows).map_err(std::io::Error::other)?,
    )?;
    println!(
        "{:<10} {:>6} {:>6} {:>8} {:>10}  status",
        "method", "pers", "spec", "WER", "SemScore"
    );
    for r in &rows {
        println!(
            "{:<10} {:>6} {:>6} {:>8} {:>10}  {}",
            r.method,
            r.personalization,
            r.specaugment,
            r.wer.map_or("-".into(), |w| format!("{w:.2}")),
            r.semscore.map_or("-".into(), |s| format!("{s:.2}")),
            r.status
        );
    }
    mark_complete(&dir)?;
    Ok(rows)
}

fn run_matrix_cell(
    config: &ExperimentConfig,
    args: &MatrixArgs,
    run_dir: &Path,
) -> Result<(f64, f64, usize), CliError> {
    fs::create_dir_all(run_dir)?;
    let train_manifest = load_manifest(&args.train_manifest, false)?;
    let dev_manifest = load_manifest(&args.dev_manifest, false)?;
    let train_examples =
        load_examples(&args.train_manifest, &train_manifest, Split::Train, config)?;
    let mut dev_examples = load_examples(&args.dev_manifest, &dev_manifest, Split::Dev, config)?;
    if dev_examples.is_empty() {
        dev_examples = load_examples(&args.dev_manifest, &dev_manifest, Split::Train, config)?;
    }
    let mut model = build_model(config)?;
    let mut registry = config.build_registry()?;
    let semantic = config.build_semantic()?;
    let nli = config.build_nli()?;
    let scorer = Scorer {
        semantic: semantic.as_ref(),
        nli: nli.as_ref(),
        weights: config.metrics.weights,
    };
    let tokenizer = config.tokenizer();
    let run = train(
        &mut model,
        &mut registry,
        &train_examples,
        &dev_examples,
        &config.train_config(),
        &scorer,
        &tokenizer,
        Some(run_dir),
    )?;
    mark_complete(run_dir)?;
    let best = run
        .checkpoints
        .iter()
        .find(|c| c.is_best)
        .expect("trainer marks exactly one best checkpoint");
    Ok((best.wer, best.semscore, best.step))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => run_train(args).map(|_| ()),
        Command::Evaluate(args) => run_evaluate(args).map(|_| ()),
        Command::Transcribe(args) => run_transcribe(args).map(|_| ()),
        Command::Synth(SynthCommand::Generate(args)) => run_synth_generate(args).map(|_| ()),
        Command::Synth(SynthCommand::Filter(args)) => run_synth_filter(args).map(|_| ()),
        Command::Mix(args) => run_mix(args).map(|_| ()),
        Command::Report(args) => run_report(args),
        Command::Matrix(args) => run_matrix(args).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_versioning_skips_completed_runs() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("run");
        assert_eq!(claim_run_dir(&base), base);
        fs::create_dir_all(&base).unwrap();
        // not complete yet: reused
        assert_eq!(claim_run_dir(&base), base);
        mark_complete(&base).unwrap();
        let v2 = PathBuf::from(format!("{}-v2", base.display()));
        assert_eq!(claim_run_dir(&base), v2);
        fs::create_dir_all(&v2).unwrap();
        mark_complete(&v2).unwrap();
        assert_eq!(
            claim_run_dir(&base),
            PathBuf::from(format!("{}-v3", base.display()))
        );
    }

    #[test]
    fn file_versioning_never_clobbers() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("mixed.jsonl");
        assert_eq!(claim_file(&f), f);
        fs::write(&f, "x").unwrap();
        let v2 = dir.path().join("mixed-v2.jsonl");
        assert_eq!(claim_file(&f), v2);
        fs::write(&v2, "x").unwrap();
        assert_eq!(claim_file(&f), dir.path().join("mixed-v3.jsonl"));
    }

    #[test]
    fn cli_parses_every_command() {
        let cases: &[&[&str]] = &[
            &[
                "adaptasr", "train", "--config", "toy-smoke", "--train-manifest", "t.jsonl",
                "--dev-manifest", "d.jsonl", "--out", "run",
            ],
            &[
                "adaptasr", "evaluate", "--config", "toy-smoke", "--checkpoint", "c.json",
                "--manifest", "m.jsonl", "--out", "eval",
            ],
            &[
                "adaptasr", "transcribe", "--config", "toy-smoke", "--checkpoint", "c.json",
                "--audio", "a.wav",
            ],
            &[
                "adaptasr", "synth", "generate", "--config", "toy-smoke", "--train-manifest",
                "t.jsonl", "--n", "8", "--out", "pool",
            ],
            &[
                "adaptasr", "synth", "filter", "--config", "toy-smoke", "--pool", "pool",
                "--threshold", "35", "--out", "kept",
            ],
            &[
                "adaptasr", "mix", "--real", "r.jsonl", "--synthetic", "s.jsonl", "--ratio",
                "0.5", "--out", "mixed.jsonl",
            ],
            &[
                "adaptasr", "report", "--config", "toy-smoke", "--manifest", "m.jsonl",
                "--hypotheses", "h.jsonl",
            ],
            &[
                "adaptasr", "matrix", "--config", "toy-smoke", "--train-manifest", "t.jsonl",
                "--dev-manifest", "d.jsonl", "--methods", "lora,adalora", "--out", "grid",
            ],
        ];
        for case in cases {
            Cli::try_parse_from(*case).unwrap_or_else(|e| panic!("{case:?}: {e}"));
        }
    }

    #[test]
    fn split_and_method_parsing() {
        assert_eq!(parse_split("train").unwrap(), Split::Train);
        assert!(parse_split("validation").is_err());
        assert_eq!(parse_method("adalora").unwrap(), AdapterMethod::Adalora);
        assert!(parse_method("prefix").is_err());
    }
}
