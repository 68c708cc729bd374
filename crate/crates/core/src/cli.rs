//! Command-line entry points: `fit-features`, `train`, `sweep`, `predict`,
//! `evaluate`, `compare` and `synth`.
//!
//! Settings come from an optional versioned TOML run file and are overridden
//! by flags.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::corpus::{label_for, parse_dataset, write_dataset_csv, Dataset, TokenizedPost};
use crate::encoder::{load_precomputed, read_sidecar, EncodedSequence, EncoderConfig, TrainableConfig};
use crate::error::{Error, Result};
use crate::eval::{
    filtered_pairwise_comparison, format_score, macro_f1, render_comparison_jsonl, render_comparison_text,
    render_f1_jsonl, render_f1_text, DEFAULT_DISAGREEMENT_CAP,
};
use crate::features::{fit_tfidf, load_word_list, AugmentMode, WordList};
use crate::model::bundle::fingerprint;
use crate::model::train::span_f1_on;
use crate::model::{seed_sweep, train, HeadKind, ModelBundle, Resources, SweepResult, TrainConfig};
use crate::par::Execution;
use crate::spans::{read_predictions, write_predictions, SpanSet};
use crate::synth::{generate, SynthConfig};

pub const RUN_CONFIG_VERSION: u32 = 1;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Parser)]
#[command(name = "toxspan", version, about = "Toxic span detection: train, sweep, predict, evaluate, compare")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the TF-IDF model on a training CSV and write it as JSON.
    FitFeatures(FitFeaturesArgs),
    /// Train one model and write its bundle.
    Train(ModelArgs),
    /// Train once per seed and keep the best model on validation F1.
    Sweep(SweepArgs),
    /// Write predicted spans for every post of a CSV.
    Predict(PredictArgs),
    /// Score a prediction file against a gold CSV.
    Evaluate(EvaluateArgs),
    /// Compare two prediction files token by token against gold.
    Compare(CompareArgs),
    /// Write the synthetic lexicon corpus (train/validation/test CSVs and lexicon).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EncoderKind {
    Trainable,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Text,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct FitFeaturesArgs {
    /// Training CSV the TF-IDF statistics are fitted on.
    #[arg(long)]
    pub train: PathBuf,
    /// Output path of the fitted TF-IDF model.
    #[arg(long)]
    pub out: PathBuf,
    /// Word list to validate and summarize alongside.
    #[arg(long)]
    pub word_list: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ModelArgs {
    /// Versioned TOML run file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training CSV (`spans`, `text`, optional `id` columns).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation CSV used for best-epoch and best-seed selection.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Optional held-out CSV scored with the selected model.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Word list for the lexicon feature, one term per line (default: bundled list).
    #[arg(long)]
    pub word_list: Option<PathBuf>,
    /// Subword embedding sidecar (required for the precomputed encoder).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Bundle output path (default: <output-dir>/model.bundle).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the default bundle path.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Extra token features appended to each vector [default: none].
    #[arg(long, value_enum)]
    pub mode: Option<AugmentMode>,
    /// Classification head [default: softmax].
    #[arg(long, value_enum)]
    pub head: Option<HeadKind>,
    /// Token encoder [default: precomputed when --embeddings is given, else trainable].
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderKind>,
    /// Hashed embedding rows of the trainable encoder [default: 65536].
    #[arg(long)]
    pub table_size: Option<usize>,
    /// Embedding width of the trainable encoder [default: 32].
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Context tokens on each side [default: 2].
    #[arg(long)]
    pub window: Option<usize>,
    /// Encoder output width [default: 64; must match the sidecar when precomputed].
    #[arg(long)]
    pub output_dim: Option<usize>,
    /// Seed for initialization and shuffling [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training epochs [default: 8].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD step size [default: 0.5].
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Posts per mini-batch [default: 8].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Per-post scheduling; results are identical either way [default: parallel].
    #[arg(long, value_enum)]
    pub execution: Option<Execution>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated seeds (default 1,2,3,4,5).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model bundle written by `train` or `sweep`.
    #[arg(long)]
    pub bundle: PathBuf,
    /// CSV of posts to label (`spans` column optional).
    #[arg(long)]
    pub input: PathBuf,
    /// Prediction file to write (`id<TAB>[offsets]` per line).
    #[arg(long)]
    pub output: PathBuf,
    /// Subword embedding sidecar for precomputed-encoder bundles.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Run file whose model section must match the bundle.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Expected feature mode; a mismatch with the bundle exits with code 3.
    #[arg(long, value_enum)]
    pub mode: Option<AugmentMode>,
    /// Expected head; a mismatch with the bundle exits with code 3.
    #[arg(long, value_enum)]
    pub head: Option<HeadKind>,
    /// Per-post scheduling [default: parallel].
    #[arg(long, value_enum)]
    pub execution: Option<Execution>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold CSV.
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction file covering every gold post id.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Include one line per post.
    #[arg(long)]
    pub per_post: bool,
    /// Report layout.
    #[arg(long, value_enum, default_value_t)]
    pub format: ReportFormat,
    /// Model name shown in the report.
    #[arg(long, default_value = "model")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Gold CSV.
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction file of the reference model.
    #[arg(long)]
    pub a: PathBuf,
    /// Prediction file of the compared model; deltas are B minus A.
    #[arg(long)]
    pub b: PathBuf,
    /// Display name of model A.
    #[arg(long, default_value = "A")]
    pub name_a: String,
    /// Display name of model B.
    #[arg(long, default_value = "B")]
    pub name_b: String,
    /// Maximum number of listed error tokens.
    #[arg(long, default_value_t = DEFAULT_DISAGREEMENT_CAP)]
    pub cap: usize,
    /// Report layout.
    #[arg(long, value_enum, default_value_t)]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for train.csv, validation.csv, test.csv and lexicon.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Generator seed [default: 2021].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total posts, split 70/15/15 [default: 2000].
    #[arg(long)]
    pub posts: Option<usize>,
    /// Distinct words including the lexicon [default: 500].
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Toxic lexicon size [default: 30].
    #[arg(long)]
    pub lexicon: Option<usize>,
}

/// Versioned run file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub word_list: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mode: Option<AugmentMode>,
    pub head: Option<HeadKind>,
    pub encoder: Option<String>,
    pub table_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub window: Option<usize>,
    pub output_dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub step_size: Option<f64>,
    pub batch_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("run file: {e}")))?;
        if config.version != RUN_CONFIG_VERSION {
            return Err(Error::Invalid(format!(
                "run file version {} (expected {RUN_CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }
}

fn encoder_kind(name: &str) -> Result<EncoderKind> {
    match name {
        "trainable" => Ok(EncoderKind::Trainable),
        "precomputed" => Ok(EncoderKind::Precomputed),
        other => Err(Error::Invalid(format!("unknown encoder kind {other:?}"))),
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

/// Fully resolved settings for `train` and `sweep`.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: TrainConfig,
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: Option<PathBuf>,
    pub word_list: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
}

pub fn resolve(args: &ModelArgs, seeds: Option<&[u64]>) -> Result<ResolvedRun> {
    let file = match &args.config {
        Some(path) => {
            require_exists(path)?;
            RunConfig::load(path)?
        }
        None => RunConfig {
            version: RUN_CONFIG_VERSION,
            ..Default::default()
        },
    };
    let pick = |flag: &Option<PathBuf>, from_file: &Option<PathBuf>| flag.clone().or_else(|| from_file.clone());
    let train = pick(&args.train, &file.paths.train)
        .ok_or_else(|| Error::Invalid("no training CSV given (--train)".into()))?;
    let validation = pick(&args.validation, &file.paths.validation)
        .ok_or_else(|| Error::Invalid("no validation CSV given (--validation)".into()))?;
    let test = pick(&args.test, &file.paths.test);
    let word_list = pick(&args.word_list, &file.paths.word_list);
    let embeddings = pick(&args.embeddings, &file.paths.embeddings);
    let output_dir = pick(&args.output_dir, &file.paths.output_dir).unwrap_or_else(|| PathBuf::from("."));
    let out = args.out.clone().unwrap_or_else(|| output_dir.join("model.bundle"));
    for path in [Some(&train), Some(&validation), test.as_ref(), word_list.as_ref(), embeddings.as_ref()]
        .into_iter()
        .flatten()
    {
        require_exists(path)?;
    }

    let kind = match args.encoder {
        Some(kind) => kind,
        None => match &file.model.encoder {
            Some(name) => encoder_kind(name)?,
            None if embeddings.is_some() => EncoderKind::Precomputed,
            None => EncoderKind::Trainable,
        },
    };
    let m = &file.model;
    let defaults = TrainableConfig::default();
    let encoder = match kind {
        EncoderKind::Trainable => EncoderConfig::Trainable(TrainableConfig {
            table_size: args.table_size.or(m.table_size).unwrap_or(defaults.table_size),
            embed_dim: args.embed_dim.or(m.embed_dim).unwrap_or(defaults.embed_dim),
            window: args.window.or(m.window).unwrap_or(defaults.window),
            output_dim: args.output_dim.or(m.output_dim).unwrap_or(defaults.output_dim),
        }),
        EncoderKind::Precomputed => {
            let path = embeddings
                .as_ref()
                .ok_or_else(|| Error::Invalid("the precomputed encoder needs --embeddings".into()))?;
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let (dim, _) = read_sidecar(file)?;
            if let Some(declared) = args.output_dim.or(m.output_dim) {
                if declared != dim {
                    return Err(Error::Dimension { expected: declared, found: dim });
                }
            }
            EncoderConfig::Precomputed { dim }
        }
    };
    let t = &file.training;
    let base = TrainConfig::default();
    let config = TrainConfig {
        seed: args.seed.or(t.seed).unwrap_or(base.seed),
        epochs: args.epochs.or(t.epochs).unwrap_or(base.epochs),
        step_size: args.step_size.or(t.step_size).unwrap_or(base.step_size),
        batch_size: args.batch_size.or(t.batch_size).unwrap_or(base.batch_size),
        mode: args.mode.or(m.mode).unwrap_or_default(),
        head: args.head.or(m.head).unwrap_or_default(),
        encoder,
        execution: args.execution.unwrap_or_default(),
    };
    config.validate()?;
    let seeds = seeds
        .map(<[u64]>::to_vec)
        .or_else(|| t.seeds.clone())
        .unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    Ok(ResolvedRun {
        config,
        train,
        validation,
        test,
        word_list,
        embeddings,
        out,
        seeds,
    })
}

/// Human-readable variant name, e.g. `Base+TF-IDF+CRF`.
pub fn variant_name(mode: AugmentMode, head: HeadKind) -> String {
    let mut name = String::from("Base");
    if mode.uses_tfidf() {
        name.push_str("+TF-IDF");
    }
    if mode.uses_word_list() {
        name.push_str("+Word List");
    }
    if head == HeadKind::Crf {
        name.push_str("+CRF");
    }
    name
}

struct LoadedRun {
    train: Dataset,
    validation: Dataset,
    test: Option<Dataset>,
    resources: Resources,
}

fn load_run(run: &ResolvedRun) -> Result<LoadedRun> {
    let train = parse_dataset(&run.train, true)?;
    let validation = parse_dataset(&run.validation, true)?;
    let test = run.test.as_deref().map(|p| parse_dataset(p, true)).transpose()?;
    let word_list = run.word_list.as_deref().map(load_word_list).transpose()?;
    let embeddings = match &run.embeddings {
        Some(path) if matches!(run.config.encoder, EncoderConfig::Precomputed { .. }) => {
            let mut all = load_precomputed(path, &train)?;
            all.extend(load_precomputed(path, &validation)?);
            if let Some(test) = &test {
                all.extend(load_precomputed(path, test)?);
            }
            Some(all)
        }
        _ => None,
    };
    Ok(LoadedRun {
        train,
        validation,
        test,
        resources: Resources { word_list, embeddings },
    })
}

fn report_test(out: &mut dyn Write, bundle: &ModelBundle, loaded: &LoadedRun) -> Result<()> {
    if let Some(test) = &loaded.test {
        let inputs = test
            .posts
            .iter()
            .map(|p| bundle.prepare(p, loaded.resources.embeddings.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let f1 = span_f1_on(&bundle.network, &inputs, test, bundle.config.execution)?;
        writeln!(out, "test macro F1 {}", format_score(f1)).map_err(io_err)?;
    }
    Ok(())
}

pub fn cmd_train(args: &ModelArgs, out: &mut dyn Write) -> Result<ModelBundle> {
    let run = resolve(args, None)?;
    let loaded = load_run(&run)?;
    let bundle = train(&run.config, &loaded.train, &loaded.validation, &loaded.resources)?;
    writeln!(
        out,
        "model {} fingerprint {}",
        variant_name(run.config.mode, run.config.head),
        bundle.fingerprint
    )
    .map_err(io_err)?;
    for (epoch, f1) in bundle.epoch_f1.iter().enumerate() {
        writeln!(out, "epoch {:>3} validation F1 {}", epoch + 1, format_score(*f1)).map_err(io_err)?;
    }
    writeln!(out, "best epoch {}", bundle.best_epoch + 1).map_err(io_err)?;
    writeln!(out, "validation macro F1 {}", format_score(bundle.validation_f1)).map_err(io_err)?;
    report_test(out, &bundle, &loaded)?;
    bundle.save(&run.out)?;
    writeln!(out, "bundle written to {}", run.out.display()).map_err(io_err)?;
    Ok(bundle)
}

/// Per-seed table followed by min, max, range and the selected seed.
pub fn render_sweep(result: &SweepResult) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<12} {:>13}\n", "seed", "validation F1"));
    for run in &result.runs {
        s.push_str(&format!("{:<12} {:>13}\n", run.seed, format_score(run.validation_f1)));
    }
    s.push_str(&format!("min {}\n", format_score(result.min())));
    s.push_str(&format!("max {}\n", format_score(result.max())));
    s.push_str(&format!("range {}\n", format_score(result.range())));
    s.push_str(&format!("best seed {}\n", result.runs[result.best_index].seed));
    s
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<SweepResult> {
    let run = resolve(&args.model, args.seeds.as_deref())?;
    let loaded = load_run(&run)?;
    let result = seed_sweep(&run.config, &run.seeds, &loaded.train, &loaded.validation, &loaded.resources)?;
    writeln!(
        out,
        "model {} fingerprint {}",
        variant_name(run.config.mode, run.config.head),
        result.best.fingerprint
    )
    .map_err(io_err)?;
    out.write_all(render_sweep(&result).as_bytes()).map_err(io_err)?;
    report_test(out, &result.best, &loaded)?;
    result.best.save(&run.out)?;
    writeln!(out, "bundle written to {}", run.out.display()).map_err(io_err)?;
    Ok(result)
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    for path in [Some(&args.bundle), Some(&args.input), args.embeddings.as_ref(), args.config.as_ref()]
        .into_iter()
        .flatten()
    {
        require_exists(path)?;
    }
    let bundle = ModelBundle::load(&args.bundle)?;
    let file = args.config.as_deref().map(RunConfig::load).transpose()?;
    let model = file.as_ref().map(|f| &f.model);
    let mode = args.mode.or(model.and_then(|m| m.mode)).unwrap_or(bundle.config.mode);
    let head = args.head.or(model.and_then(|m| m.head)).unwrap_or(bundle.config.head);
    let encoder = match model {
        Some(m) if m.encoder.is_some() || m.table_size.is_some() || m.embed_dim.is_some()
            || m.window.is_some() || m.output_dim.is_some() =>
        {
            let kind = m.encoder.as_deref().map(encoder_kind).transpose()?;
            match (kind, bundle.config.encoder) {
                (Some(EncoderKind::Precomputed), EncoderConfig::Trainable(_)) => EncoderConfig::Precomputed {
                    dim: m.output_dim.unwrap_or(0),
                },
                (Some(EncoderKind::Trainable), EncoderConfig::Precomputed { .. }) => {
                    let d = TrainableConfig::default();
                    EncoderConfig::Trainable(TrainableConfig {
                        table_size: m.table_size.unwrap_or(d.table_size),
                        embed_dim: m.embed_dim.unwrap_or(d.embed_dim),
                        window: m.window.unwrap_or(d.window),
                        output_dim: m.output_dim.unwrap_or(d.output_dim),
                    })
                }
                (_, EncoderConfig::Trainable(c)) => EncoderConfig::Trainable(TrainableConfig {
                    table_size: m.table_size.unwrap_or(c.table_size),
                    embed_dim: m.embed_dim.unwrap_or(c.embed_dim),
                    window: m.window.unwrap_or(c.window),
                    output_dim: m.output_dim.unwrap_or(c.output_dim),
                }),
                (_, EncoderConfig::Precomputed { dim }) => EncoderConfig::Precomputed {
                    dim: m.output_dim.unwrap_or(dim),
                },
            }
        }
        _ => bundle.config.encoder,
    };
    bundle.check_fingerprint(&fingerprint(mode, head, &encoder))?;

    let dataset = parse_dataset(&args.input, false)?;
    let embeddings: Option<HashMap<String, EncodedSequence>> = match &args.embeddings {
        Some(path) => Some(load_precomputed(path, &dataset)?),
        None => None,
    };
    let exec = args.execution.unwrap_or_default();
    let predictions = bundle.predict_dataset(&dataset, embeddings.as_ref(), exec)?;
    let file = File::create(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let mut writer = BufWriter::new(file);
    write_predictions(predictions.iter().map(|(id, s)| (id.as_str(), s)), &mut writer)?;
    writer.flush().map_err(|e| Error::io(&args.output, e))?;
    let toxic = predictions.iter().filter(|(_, s)| !s.is_empty()).count();
    writeln!(
        out,
        "wrote {} predictions ({} with toxic spans) to {}",
        predictions.len(),
        toxic,
        args.output.display()
    )
    .map_err(io_err)?;
    Ok(())
}

fn load_prediction_map(path: &Path) -> Result<HashMap<String, SpanSet>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_predictions(file)?.into_iter().collect())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<f64> {
    require_exists(&args.gold)?;
    require_exists(&args.predictions)?;
    let gold = parse_dataset(&args.gold, true)?;
    let predictions = load_prediction_map(&args.predictions)?;
    let result = macro_f1(&gold, &predictions)?;
    let report = match args.format {
        ReportFormat::Text => render_f1_text(&args.name, &result, args.per_post),
        ReportFormat::Jsonl => render_f1_jsonl(&args.name, &result, args.per_post),
    };
    out.write_all(report.as_bytes()).map_err(io_err)?;
    Ok(result.macro_f1)
}

/// Token labels of `predictions` over `posts` under the any-overlap rule.
fn project_predictions(posts: &[TokenizedPost], predictions: &HashMap<String, SpanSet>) -> Result<Vec<Vec<usize>>> {
    let missing: Vec<String> = posts
        .iter()
        .filter(|p| !predictions.contains_key(&p.post.id))
        .map(|p| p.post.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    Ok(posts
        .iter()
        .map(|p| {
            let offsets = predictions[&p.post.id].offsets();
            p.tokens.iter().map(|t| label_for(offsets, t).index()).collect()
        })
        .collect())
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<crate::eval::ModelComparison> {
    for path in [&args.gold, &args.a, &args.b] {
        require_exists(path)?;
    }
    let gold = parse_dataset(&args.gold, true)?;
    let posts = gold.tokenized();
    let gold_labels: Vec<Vec<usize>> = posts
        .iter()
        .map(|p| p.gold_indices().expect("gold CSV is labeled"))
        .collect();
    let a = project_predictions(&posts, &load_prediction_map(&args.a)?)?;
    let b = project_predictions(&posts, &load_prediction_map(&args.b)?)?;
    let cmp = filtered_pairwise_comparison(&posts, &gold_labels, &a, &b, args.cap)?;
    let report = match args.format {
        ReportFormat::Text => render_comparison_text(&args.name_a, &args.name_b, &cmp),
        ReportFormat::Jsonl => render_comparison_jsonl(&args.name_a, &args.name_b, &cmp),
    };
    out.write_all(report.as_bytes()).map_err(io_err)?;
    Ok(cmp)
}

pub fn cmd_fit_features(args: &FitFeaturesArgs, out: &mut dyn Write) -> Result<()> {
    require_exists(&args.train)?;
    if let Some(p) = &args.word_list {
        require_exists(p)?;
    }
    let train = parse_dataset(&args.train, true)?;
    let model = fit_tfidf(&train)?;
    fs::write(&args.out, model.to_json()).map_err(|e| Error::io(&args.out, e))?;
    writeln!(
        out,
        "tf-idf: {} documents, {} terms -> {}",
        model.n_docs,
        model.document_frequency.len(),
        args.out.display()
    )
    .map_err(io_err)?;
    if let Some(p) = &args.word_list {
        let list: WordList = load_word_list(p)?;
        writeln!(out, "word list: {} terms", list.terms.len()).map_err(io_err)?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        seed: args.seed.unwrap_or(defaults.seed),
        posts: args.posts.unwrap_or(defaults.posts),
        vocab: args.vocab.unwrap_or(defaults.vocab),
        lexicon: args.lexicon.unwrap_or(defaults.lexicon),
        ..defaults
    };
    if config.lexicon == 0 || config.lexicon > config.vocab {
        return Err(Error::Invalid("lexicon size must be in [1, vocab]".into()));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let corpus = generate(&config);
    for ds in [&corpus.train, &corpus.validation, &corpus.test] {
        let path = args.out_dir.join(format!("{}.csv", ds.split_name));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_dataset_csv(ds, BufWriter::new(file))?;
    }
    let lexicon_path = args.out_dir.join("lexicon.txt");
    let mut lexicon = corpus.lexicon.join("\n");
    lexicon.push('\n');
    fs::write(&lexicon_path, lexicon).map_err(|e| Error::io(&lexicon_path, e))?;
    writeln!(
        out,
        "wrote {} train, {} validation, {} test posts and a {}-term lexicon to {}",
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len(),
        corpus.lexicon.len(),
        args.out_dir.display()
    )
    .map_err(io_err)?;
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::FitFeatures(a) => cmd_fit_features(&a, out),
        Command::Train(a) => cmd_train(&a, out).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(&a, out).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a, out).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_file_parsing() {
        let config = RunConfig::parse(
            "version = 1\n[model]\nmode = \"tfidf\"\nhead = \"crf\"\n[training]\nseeds = [1, 2]\n",
        )
        .unwrap();
        assert_eq!(config.model.mode, Some(AugmentMode::TfIdf));
        assert_eq!(config.model.head, Some(HeadKind::Crf));
        assert_eq!(config.training.seeds, Some(vec![1, 2]));
        assert!(RunConfig::parse("version = 2\n").is_err());
        assert!(RunConfig::parse("version = 1\nbogus = 3\n").is_err());
    }

    #[test]
    fn all_variants_expressible() {
        let names: Vec<String> = [
            (AugmentMode::None, HeadKind::Softmax),
            (AugmentMode::TfIdf, HeadKind::Softmax),
            (AugmentMode::WordList, HeadKind::Softmax),
            (AugmentMode::Both, HeadKind::Softmax),
            (AugmentMode::None, HeadKind::Crf),
        ]
        .into_iter()
        .map(|(m, h)| variant_name(m, h))
        .collect();
        assert_eq!(
            names,
            ["Base", "Base+TF-IDF", "Base+Word List", "Base+TF-IDF+Word List", "Base+CRF"]
        );
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.csv");
        fs::write(&train, "spans,text\n[],hi\n").unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(
            &cfg,
            format!(
                "version = 1\n[paths]\ntrain = {:?}\nvalidation = {:?}\n[model]\nmode = \"both\"\n[training]\nepochs = 3\n",
                train, train
            ),
        )
        .unwrap();
        let args = ModelArgs {
            config: Some(cfg),
            epochs: Some(5),
            ..Default::default()
        };
        let run = resolve(&args, None).unwrap();
        assert_eq!(run.config.epochs, 5);
        assert_eq!(run.config.mode, AugmentMode::Both);
        assert_eq!(run.seeds, DEFAULT_SEEDS.to_vec());

        let missing = ModelArgs {
            train: Some(dir.path().join("nope.csv")),
            validation: Some(train),
            ..Default::default()
        };
        assert!(matches!(resolve(&missing, None), Err(Error::MissingPath(_))));
    }
}
