//! The `ecstfl` command-line interface.
//!
//! Commands: `gen-data`, `train`, `eval`, `kappa`, `sweep`, `report`.
//! Global flags `--seed`, `--out`, `--jobs`, and `--config <file>` apply to
//! every command; the config file is TOML whose keys mirror the long flag
//! names (dashes as underscores), and explicit flags always win.
//!
//! Every command writes one run directory under `--out` containing its
//! artifacts and a `manifest.json` with input/output digests. Exit codes:
//! 0 success, 1 validation or usage error, 2 numerical failure.

mod manifest;

pub use manifest::{read_manifest, sha256_file, FileDigest, RunManifest};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    kappa_report, read_annotation_csv, single_label, SingleLabelDecision, CATEGORY_COUNT,
    DEFAULT_THRESHOLD,
};
use crate::data::{
    kfold_split, kfold_split_stratified, preprocess, read_dataset_csv, read_folds_csv,
    synth_generate, write_dataset_csv, write_dataset_meta, write_folds_csv, ClipSequence,
    DatasetMeta, DatasetSpec, FoldAssignment, DEFAULT_MIN_USABLE_RATE,
};
use crate::error::{Error, Result};
use crate::eval::{
    cv_aggregate, metrics, project_2d, write_confusion_csv, write_projection_csv, confusion,
    ConfusionMatrix, MetricReport, Prediction,
};
use crate::losses::write_loss_trace;
use crate::model::{
    lr_grid_search, predict, train, write_history_csv, batch_forward, Checkpoint, LossMode,
    TrainConfig,
};
use crate::validation;
use manifest::{create_run_dir, ManifestBuilder};

/// The paper-reported trade-off grid swept in `sweep --axis lambda`.
pub const LAMBDA_GRID: [f64; 10] = [1.0, 3.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0, 80.0, 100.0];

/// The batch-size grid swept in `sweep --axis batch`.
pub const BATCH_GRID: [usize; 6] = [18, 24, 30, 36, 42, 48];

#[derive(Parser, Debug)]
#[command(
    name = "ecstfl",
    version,
    about = "Expression-clustered feature learning lab: synthetic data, \
             EC-STFL training, agreement statistics, and UAR/WAR evaluation"
)]
pub struct Cli {
    /// Master seed; all randomness derives from it through named sub-streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Root directory for run outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for sweep cells.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// TOML config file mirroring the flags; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic imbalanced dataset, preprocess it, and split folds.
    GenData(GenDataArgs),
    /// Train the reference model on one fold's training split.
    Train(TrainArgs),
    /// Evaluate checkpoints on their test folds; pool metrics when all folds are covered.
    Eval(EvalArgs),
    /// Fleiss's kappa and threshold single-labeling of an annotation file.
    Kappa(KappaArgs),
    /// Train/evaluate one run per grid cell over lambda or batch size.
    Sweep(SweepArgs),
    /// Summarize a run directory.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
pub struct GenDataArgs {
    /// Number of clips to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Per-frame feature dimension.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Cluster separation scale.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Per-frame noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub t_min: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Probability that a frame is unusable.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Seven comma-separated class proportions summing to 1.
    #[arg(long, value_delimiter = ',')]
    pub proportions: Option<Vec<f64>>,
    /// Minimum usable-frame rate; clips below it are eliminated.
    #[arg(long)]
    pub min_usable_rate: Option<f64>,
    /// Number of folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Class-stratified fold assignment.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratify: Option<bool>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Dataset CSV written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fold file written by gen-data.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// 1-based fold whose complement is the training split.
    #[arg(long)]
    pub fold: Option<usize>,
    /// softmax, softmax+ecstfl, or softmax+center.
    #[arg(long)]
    pub loss: Option<String>,
    /// EC-STFL trade-off coefficient.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Center-loss trade-off coefficient.
    #[arg(long)]
    pub center_coef: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Fixed learning rate (ignored when --lr-grid is given).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated rates; the best one is picked by a short grid search.
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Option<Vec<f64>>,
    /// Epoch budget of each grid-search candidate.
    #[arg(long)]
    pub grid_epochs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without improvement before the 10x learning-rate decay.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Minimum epoch-loss improvement that counts as progress.
    #[arg(long)]
    pub min_improvement: Option<f64>,
    /// Width of the per-frame hidden layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Dimension of the hidden feature layer.
    #[arg(long)]
    pub model_dim: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    /// Checkpoint file; repeat to evaluate several folds.
    #[arg(long = "checkpoint")]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct KappaArgs {
    /// Annotation CSV: clip_id,c1..c7 (counts) or clip_id,v1..v10 (votes).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Single-label threshold; a category needs strictly more than r votes.
    #[arg(long)]
    pub r: Option<u32>,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    /// lambda or batch.
    #[arg(long)]
    pub axis: Option<String>,
    /// Grid values; defaults to the published grid of the chosen axis.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Default)]
pub struct ReportArgs {
    /// Run directory (or its manifest.json).
    #[arg(long)]
    pub run: Option<PathBuf>,
}

/// TOML config file contents; any subset of the flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCfg {
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    n: Option<usize>,
    feature_dim: Option<usize>,
    separation: Option<f64>,
    noise: Option<f64>,
    t_min: Option<usize>,
    t_max: Option<usize>,
    dropout: Option<f64>,
    proportions: Option<Vec<f64>>,
    min_usable_rate: Option<f64>,
    folds: Option<toml::Value>,
    stratify: Option<bool>,
    data: Option<PathBuf>,
    fold: Option<usize>,
    loss: Option<String>,
    lambda: Option<f64>,
    center_coef: Option<f64>,
    batch: Option<usize>,
    lr: Option<f64>,
    lr_grid: Option<Vec<f64>>,
    grid_epochs: Option<usize>,
    epochs: Option<usize>,
    patience: Option<usize>,
    min_improvement: Option<f64>,
    hidden: Option<usize>,
    model_dim: Option<usize>,
    checkpoint: Option<Vec<PathBuf>>,
    input: Option<PathBuf>,
    r: Option<u32>,
    axis: Option<String>,
    grid: Option<Vec<f64>>,
    run: Option<PathBuf>,
}

impl FileCfg {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| validation!("config file {}: {e}", path.display()))
    }

    /// `folds` is a path for train/eval and a count for gen-data.
    fn folds_path(&self) -> Result<Option<PathBuf>> {
        match &self.folds {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(other) => Err(validation!("config key folds: expected a path, got {other}")),
        }
    }

    fn folds_count(&self) -> Result<Option<usize>> {
        match &self.folds {
            None => Ok(None),
            Some(toml::Value::Integer(k)) if *k > 0 => Ok(Some(*k as usize)),
            Some(other) => Err(validation!("config key folds: expected a count, got {other}")),
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run one parsed command; returns its run directory.
pub fn execute(cli: Cli) -> Result<PathBuf> {
    let file = match &cli.config {
        Some(path) => FileCfg::load(path)?,
        None => FileCfg::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let jobs = cli.jobs.or(file.jobs).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });

    match cli.command {
        Command::GenData(args) => cmd_gen_data(args, &file, seed, &out),
        Command::Train(args) => cmd_train(args, &file, seed, &out),
        Command::Eval(args) => cmd_eval(args, &file, seed, &out),
        Command::Kappa(args) => cmd_kappa(args, &file, seed, &out),
        Command::Sweep(args) => cmd_sweep(args, &file, seed, &out, jobs),
        Command::Report(args) => cmd_report(args, &file, seed, &out),
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct ResolvedGenData {
    spec: DatasetSpec,
    min_usable_rate: f64,
    folds: usize,
    stratify: bool,
}

fn cmd_gen_data(args: GenDataArgs, file: &FileCfg, seed: u64, out: &Path) -> Result<PathBuf> {
    let defaults = DatasetSpec::default();
    let proportions = match args.proportions.or_else(|| file.proportions.clone()) {
        Some(values) => {
            let array: [f64; CATEGORY_COUNT] = values.clone().try_into().map_err(|_| {
                validation!("--proportions needs exactly 7 values, got {}", values.len())
            })?;
            array
        }
        None => defaults.class_proportions,
    };
    let resolved = ResolvedGenData {
        spec: DatasetSpec {
            class_proportions: proportions,
            n_clips: args.n.or(file.n).unwrap_or(defaults.n_clips),
            feature_dim: args
                .feature_dim
                .or(file.feature_dim)
                .unwrap_or(defaults.feature_dim),
            cluster_separation: args
                .separation
                .or(file.separation)
                .unwrap_or(defaults.cluster_separation),
            noise_scale: args.noise.or(file.noise).unwrap_or(defaults.noise_scale),
            length_range: (
                args.t_min.or(file.t_min).unwrap_or(defaults.length_range.0),
                args.t_max.or(file.t_max).unwrap_or(defaults.length_range.1),
            ),
            dropout_rate: args
                .dropout
                .or(file.dropout)
                .unwrap_or(defaults.dropout_rate),
            seed,
        },
        min_usable_rate: args
            .min_usable_rate
            .or(file.min_usable_rate)
            .unwrap_or(DEFAULT_MIN_USABLE_RATE),
        folds: args.folds.or(file.folds_count()?).unwrap_or(5),
        stratify: args.stratify.or(file.stratify).unwrap_or(false),
    };

    let raw = synth_generate(&resolved.spec)?;
    let n_generated = raw.len();
    let mut class_counts = [0usize; CATEGORY_COUNT];
    for clip in &raw {
        class_counts[clip.label.expect("generated clips are labeled").slot()] += 1;
    }
    let (clips, filter) = preprocess(raw, resolved.min_usable_rate)?;

    let folds = if resolved.stratify {
        let labeled: Vec<(String, crate::annotation::EmotionCategory)> = clips
            .iter()
            .map(|c| (c.clip_id.clone(), c.label.expect("labeled")))
            .collect();
        kfold_split_stratified(&labeled, resolved.folds, seed)?
    } else {
        let ids: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
        kfold_split(&ids, resolved.folds, seed)?
    };

    let run_dir = create_run_dir(out, "gen-data")?;
    let mut builder = ManifestBuilder::new("gen-data", seed, serde_json::to_value(&resolved)?);

    let dataset_path = run_dir.join("dataset.csv");
    write_dataset_csv(&dataset_path, &clips)?;
    builder.output(&dataset_path)?;

    let meta_path = run_dir.join("dataset_meta.json");
    write_dataset_meta(
        &meta_path,
        &DatasetMeta {
            spec: resolved.spec.clone(),
            class_counts,
            n_generated,
            n_retained: clips.len(),
            target_frames: crate::data::TARGET_FRAMES,
            min_usable_rate: resolved.min_usable_rate,
            filter,
        },
    )?;
    builder.output(&meta_path)?;

    let folds_path = run_dir.join("folds.csv");
    write_folds_csv(&folds_path, &folds)?;
    builder.output(&folds_path)?;

    builder.write(&run_dir)?;
    println!(
        "generated {n_generated} clips (per class {class_counts:?}), retained {} after the \
         usable-rate filter, {} folds -> {}",
        clips.len(),
        resolved.folds,
        run_dir.display()
    );
    Ok(run_dir)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct ResolvedTrain {
    data: PathBuf,
    folds: PathBuf,
    fold: usize,
    config: TrainConfig,
    lr_grid: Option<Vec<f64>>,
    grid_epochs: usize,
}

fn resolve_train(args: &TrainArgs, file: &FileCfg, seed: u64) -> Result<ResolvedTrain> {
    let defaults = TrainConfig::default();
    let data = args
        .data
        .clone()
        .or_else(|| file.data.clone())
        .ok_or_else(|| validation!("--data is required"))?;
    let folds = args
        .folds
        .clone()
        .or(file.folds_path()?)
        .ok_or_else(|| validation!("--folds is required"))?;
    let loss_mode = match args.loss.clone().or_else(|| file.loss.clone()) {
        Some(name) => name.parse::<LossMode>()?,
        None => defaults.loss_mode,
    };
    let epochs = args.epochs.or(file.epochs).unwrap_or(defaults.epochs);
    Ok(ResolvedTrain {
        data,
        folds,
        fold: args.fold.or(file.fold).unwrap_or(1),
        config: TrainConfig {
            learning_rate: args.lr.or(file.lr).unwrap_or(defaults.learning_rate),
            patience_epochs: args
                .patience
                .or(file.patience)
                .unwrap_or(defaults.patience_epochs),
            min_improvement: args
                .min_improvement
                .or(file.min_improvement)
                .unwrap_or(defaults.min_improvement),
            batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
            lambda: args.lambda.or(file.lambda).unwrap_or(defaults.lambda),
            center_coef: args
                .center_coef
                .or(file.center_coef)
                .unwrap_or(defaults.center_coef),
            epochs,
            seed,
            loss_mode,
            frame_hidden: args.hidden.or(file.hidden).unwrap_or(defaults.frame_hidden),
            feature_dim: args
                .model_dim
                .or(file.model_dim)
                .unwrap_or(defaults.feature_dim),
        },
        lr_grid: args.lr_grid.clone().or_else(|| file.lr_grid.clone()),
        grid_epochs: args
            .grid_epochs
            .or(file.grid_epochs)
            .unwrap_or_else(|| (epochs / 5).max(2)),
    })
}

/// Dataset clips indexed by id, checked against the fold assignment: the
/// fold file and the dataset must name exactly the same clips.
fn index_clips<'c>(
    clips: &'c [ClipSequence],
    folds: &FoldAssignment,
) -> Result<HashMap<&'c str, &'c ClipSequence>> {
    let mut by_id: HashMap<&str, &ClipSequence> = HashMap::with_capacity(clips.len());
    for clip in clips {
        if by_id.insert(clip.clip_id.as_str(), clip).is_some() {
            return Err(validation!("dataset has duplicate clip {:?}", clip.clip_id));
        }
        if folds.fold_of(&clip.clip_id).is_none() {
            return Err(validation!(
                "clip {:?} is missing from the fold file",
                clip.clip_id
            ));
        }
    }
    if by_id.len() != folds.len() {
        for id in folds.clip_ids() {
            if !by_id.contains_key(id.as_str()) {
                return Err(validation!("fold file names unknown clip {id:?}"));
            }
        }
    }
    Ok(by_id)
}

/// Grid-search the rate if requested, train, and write checkpoint.json,
/// history.csv, and trace.csv into `dir`. Shared by `train` and `sweep`.
fn run_training(
    dir: &Path,
    train_clips: &[ClipSequence],
    mut config: TrainConfig,
    fold: usize,
    lr_grid: Option<&[f64]>,
    grid_epochs: usize,
) -> Result<Checkpoint> {
    if let Some(grid) = lr_grid {
        let short = TrainConfig {
            epochs: grid_epochs,
            ..config.clone()
        };
        config.learning_rate = lr_grid_search(train_clips, grid, &short)?;
    }
    let (params, history) = train(train_clips, &config)?;
    let checkpoint = Checkpoint::new(params, config, Some(fold));
    checkpoint.save(&dir.join("checkpoint.json"))?;
    write_history_csv(&dir.join("history.csv"), &history)?;
    write_loss_trace(&dir.join("trace.csv"), &history.steps)?;
    Ok(checkpoint)
}

fn training_split(
    by_id: &HashMap<&str, &ClipSequence>,
    folds: &FoldAssignment,
    fold: usize,
) -> Result<Vec<ClipSequence>> {
    if fold == 0 || fold > folds.k() {
        return Err(validation!("fold {fold} outside 1..={}", folds.k()));
    }
    Ok(folds
        .train_ids(fold)
        .iter()
        .map(|id| (*by_id.get(id.as_str()).expect("checked by index_clips")).clone())
        .collect())
}

fn cmd_train(args: TrainArgs, file: &FileCfg, seed: u64, out: &Path) -> Result<PathBuf> {
    let resolved = resolve_train(&args, file, seed)?;
    let clips = read_dataset_csv(&resolved.data)?;
    let folds = read_folds_csv(&resolved.folds)?;
    let by_id = index_clips(&clips, &folds)?;
    let train_clips = training_split(&by_id, &folds, resolved.fold)?;

    let run_dir = create_run_dir(out, "train")?;
    let mut builder = ManifestBuilder::new("train", seed, serde_json::to_value(&resolved)?);
    builder.input(&resolved.data)?;
    builder.input(&resolved.folds)?;

    let checkpoint = run_training(
        &run_dir,
        &train_clips,
        resolved.config.clone(),
        resolved.fold,
        resolved.lr_grid.as_deref(),
        resolved.grid_epochs,
    )?;
    builder.output(&run_dir.join("checkpoint.json"))?;
    builder.output(&run_dir.join("history.csv"))?;
    builder.output(&run_dir.join("trace.csv"))?;
    builder.write(&run_dir)?;

    println!(
        "trained {} on fold {} complement ({} clips, {} epochs, lr {}) -> {}",
        checkpoint.config.loss_mode,
        resolved.fold,
        train_clips.len(),
        checkpoint.config.epochs,
        checkpoint.config.learning_rate,
        run_dir.display()
    );
    Ok(run_dir)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_clips: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_fold: Vec<FoldMetrics>,
    /// Pooled metrics over all predictions; present only when the
    /// checkpoints cover every fold exactly once.
    pub pooled: Option<MetricReport>,
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedEval {
    checkpoints: Vec<PathBuf>,
    data: PathBuf,
    folds: PathBuf,
}

/// Evaluate each checkpoint on its own test fold; write metrics.json,
/// confusion.csv, and projection.csv into `dir`.
fn run_eval(
    dir: &Path,
    checkpoints: &[Checkpoint],
    clips: &[ClipSequence],
    folds: &FoldAssignment,
) -> Result<EvalSummary> {
    let by_id = index_clips(clips, folds)?;

    let mut covered = std::collections::BTreeSet::new();
    let mut per_fold = Vec::new();
    let mut fold_predictions: Vec<Vec<Prediction>> = Vec::new();
    let mut merged = ConfusionMatrix::default();
    let mut projected_ids = Vec::new();
    let mut projected_labels = Vec::new();
    let mut feature_blocks: Vec<Array2<f64>> = Vec::new();

    for checkpoint in checkpoints {
        let fold = checkpoint
            .fold
            .ok_or_else(|| validation!("checkpoint does not record its fold"))?;
        if fold == 0 || fold > folds.k() {
            return Err(validation!("checkpoint fold {fold} outside 1..={}", folds.k()));
        }
        if !covered.insert(fold) {
            return Err(validation!("fold {fold} is covered by two checkpoints"));
        }
        let test_ids = folds.test_ids(fold);
        let test_clips: Vec<&ClipSequence> = test_ids
            .iter()
            .map(|id| *by_id.get(id.as_str()).expect("checked by index_clips"))
            .collect();
        let truth: Vec<_> = test_clips
            .iter()
            .map(|clip| {
                clip.label
                    .ok_or_else(|| validation!("clip {:?} has no label", clip.clip_id))
            })
            .collect::<Result<_>>()?;
        let predictions = predict(&checkpoint.params, &test_clips)?;
        let (features, _) = batch_forward(&checkpoint.params, &test_clips)?;

        let cm = confusion(&truth, &predictions)?;
        merged.merge(&cm);
        per_fold.push(FoldMetrics {
            fold,
            n_clips: test_clips.len(),
            report: metrics(&cm)?,
        });
        fold_predictions.push(
            test_ids
                .iter()
                .cloned()
                .zip(truth.iter().copied())
                .zip(predictions.iter().copied())
                .map(|((id, t), p)| (id, t, p))
                .collect(),
        );
        projected_ids.extend(test_ids);
        projected_labels.extend(truth);
        feature_blocks.push(features);
    }

    let pooled = if covered.len() == folds.k() {
        let expected = folds.clip_ids();
        let (_, report) = cv_aggregate(&fold_predictions, &expected)?;
        Some(report)
    } else {
        None
    };

    let summary = EvalSummary { per_fold, pooled };
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write_confusion_csv(&dir.join("confusion.csv"), &merged)?;

    let total_rows: usize = feature_blocks.iter().map(|b| b.nrows()).sum();
    let dim = feature_blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let mut features = Array2::zeros((total_rows, dim));
    let mut row = 0;
    for block in &feature_blocks {
        features
            .slice_mut(ndarray::s![row..row + block.nrows(), ..])
            .assign(block);
        row += block.nrows();
    }
    let coords = project_2d(&features)?;
    write_projection_csv(
        &dir.join("projection.csv"),
        &projected_ids,
        &projected_labels,
        &coords,
    )?;
    Ok(summary)
}

fn cmd_eval(args: EvalArgs, file: &FileCfg, seed: u64, out: &Path) -> Result<PathBuf> {
    let checkpoint_paths = if args.checkpoint.is_empty() {
        file.checkpoint.clone().unwrap_or_default()
    } else {
        args.checkpoint.clone()
    };
    if checkpoint_paths.is_empty() {
        return Err(validation!("at least one --checkpoint is required"));
    }
    let resolved = ResolvedEval {
        checkpoints: checkpoint_paths,
        data: args
            .data
            .or_else(|| file.data.clone())
            .ok_or_else(|| validation!("--data is required"))?,
        folds: args
            .folds
            .or(file.folds_path()?)
            .ok_or_else(|| validation!("--folds is required"))?,
    };

    let clips = read_dataset_csv(&resolved.data)?;
    let folds = read_folds_csv(&resolved.folds)?;
    let checkpoints: Vec<Checkpoint> = resolved
        .checkpoints
        .iter()
        .map(|path| Checkpoint::load(path))
        .collect::<Result<_>>()?;

    let run_dir = create_run_dir(out, "eval")?;
    let mut builder = ManifestBuilder::new("eval", seed, serde_json::to_value(&resolved)?);
    builder.input(&resolved.data)?;
    builder.input(&resolved.folds)?;
    for path in &resolved.checkpoints {
        builder.input(path)?;
    }

    let summary = run_eval(&run_dir, &checkpoints, &clips, &folds)?;
    builder.output(&run_dir.join("metrics.json"))?;
    builder.output(&run_dir.join("confusion.csv"))?;
    builder.output(&run_dir.join("projection.csv"))?;
    builder.write(&run_dir)?;

    for fold in &summary.per_fold {
        println!(
            "fold {}: UAR {:.2}%  WAR {:.2}%  ({} clips)",
            fold.fold,
            fold.report.uar_percent(),
            fold.report.war_percent(),
            fold.n_clips
        );
    }
    match &summary.pooled {
        Some(report) => println!(
            "pooled: UAR {:.2}%  WAR {:.2}%  -> {}",
            report.uar_percent(),
            report.war_percent(),
            run_dir.display()
        ),
        None => println!(
            "pooled metrics skipped (folds not fully covered) -> {}",
            run_dir.display()
        ),
    }
    Ok(run_dir)
}

// ---------------------------------------------------------------------------
// kappa
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct ResolvedKappa {
    input: PathBuf,
    r: u32,
}

fn cmd_kappa(args: KappaArgs, file: &FileCfg, seed: u64, out: &Path) -> Result<PathBuf> {
    let resolved = ResolvedKappa {
        input: args
            .input
            .or_else(|| file.input.clone())
            .ok_or_else(|| validation!("--input is required"))?,
        r: args.r.or(file.r).unwrap_or(DEFAULT_THRESHOLD),
    };
    let dataset = read_annotation_csv(&resolved.input)?;
    let report = kappa_report(&dataset)?;

    let run_dir = create_run_dir(out, "kappa")?;
    let mut builder = ManifestBuilder::new("kappa", seed, serde_json::to_value(&resolved)?);
    builder.input(&resolved.input)?;

    let kappa_path = run_dir.join("kappa.json");
    std::fs::write(&kappa_path, serde_json::to_string_pretty(&report)? + "\n")?;
    builder.output(&kappa_path)?;

    let labels_path = run_dir.join("single_labels.csv");
    let mut writer = csv::Writer::from_path(&labels_path)?;
    writer.write_record(["clip_id", "label"])?;
    let mut labeled = 0usize;
    for (clip_id, dist) in dataset.items() {
        if let SingleLabelDecision::Labeled(category) = single_label(dist, resolved.r)? {
            writer.write_record([clip_id.as_str(), &category.index().to_string()])?;
            labeled += 1;
        }
    }
    writer.flush()?;
    drop(writer);
    builder.output(&labels_path)?;
    builder.write(&run_dir)?;

    println!(
        "kappa = {:.4} ({}); {labeled} of {} clips single-labeled at r={} -> {}",
        report.kappa,
        report.band,
        dataset.len(),
        resolved.r,
        run_dir.display()
    );
    Ok(run_dir)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
enum SweepAxis {
    Lambda,
    Batch,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "batch" => Ok(SweepAxis::Batch),
            other => Err(validation!("unknown sweep axis {other:?}; expected lambda or batch")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedSweep {
    axis: SweepAxis,
    grid: Vec<f64>,
    #[serde(flatten)]
    train: ResolvedTrain,
}

fn cmd_sweep(
    args: SweepArgs,
    file: &FileCfg,
    seed: u64,
    out: &Path,
    jobs: usize,
) -> Result<PathBuf> {
    let axis: SweepAxis = args
        .axis
        .or_else(|| file.axis.clone())
        .ok_or_else(|| validation!("--axis is required (lambda or batch)"))?
        .parse()?;
    let grid = match args.grid.or_else(|| file.grid.clone()) {
        Some(values) if values.is_empty() => {
            return Err(validation!("--grid must not be empty"))
        }
        Some(values) => values,
        None => match axis {
            SweepAxis::Lambda => LAMBDA_GRID.to_vec(),
            SweepAxis::Batch => BATCH_GRID.iter().map(|&b| b as f64).collect(),
        },
    };
    if axis == SweepAxis::Batch {
        for &value in &grid {
            if value <= 0.0 || value.fract() != 0.0 {
                return Err(validation!("batch grid value {value} is not a positive integer"));
            }
        }
    }
    let resolved = ResolvedSweep {
        axis,
        grid: grid.clone(),
        train: resolve_train(&args.train, file, seed)?,
    };

    let clips = read_dataset_csv(&resolved.train.data)?;
    let folds = read_folds_csv(&resolved.train.folds)?;
    let by_id = index_clips(&clips, &folds)?;
    let train_clips = training_split(&by_id, &folds, resolved.train.fold)?;

    let run_dir = create_run_dir(out, "sweep")?;
    let mut builder = ManifestBuilder::new("sweep", seed, serde_json::to_value(&resolved)?);
    builder.input(&resolved.train.data)?;
    builder.input(&resolved.train.folds)?;

    struct Cell {
        label: String,
        config: TrainConfig,
    }
    let cells: Vec<Cell> = grid
        .iter()
        .map(|&value| {
            let mut config = resolved.train.config.clone();
            let label = match axis {
                SweepAxis::Lambda => {
                    config.lambda = value;
                    format!("lambda-{value}")
                }
                SweepAxis::Batch => {
                    config.batch_size = value as usize;
                    format!("batch-{value}")
                }
            };
            Cell { label, config }
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| validation!("thread pool: {e}"))?;
    let outcomes: Vec<(String, Result<FoldMetrics>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let result = (|| -> Result<FoldMetrics> {
                    let cell_dir = run_dir.join(format!("cell-{}", cell.label));
                    std::fs::create_dir(&cell_dir)?;
                    let checkpoint = run_training(
                        &cell_dir,
                        &train_clips,
                        cell.config.clone(),
                        resolved.train.fold,
                        resolved.train.lr_grid.as_deref(),
                        resolved.train.grid_epochs,
                    )?;
                    let summary = run_eval(&cell_dir, &[checkpoint], &clips, &folds)?;
                    Ok(summary.per_fold.into_iter().next().expect("one fold"))
                })();
                (cell.label.clone(), result)
            })
            .collect()
    });

    let summary_path = run_dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&summary_path)?;
    writer.write_record(["cell", "uar", "war"])?;
    let mut diverged = Vec::new();
    for ((label, outcome), &value) in outcomes.iter().zip(grid.iter()) {
        let cell_name = value.to_string();
        match outcome {
            Ok(fold_metrics) => {
                writer.write_record([
                    cell_name,
                    format!("{:.2}", fold_metrics.report.uar_percent()),
                    format!("{:.2}", fold_metrics.report.war_percent()),
                ])?;
            }
            Err(Error::Divergence { epoch, batch, detail }) => {
                writer.write_record([cell_name, String::new(), String::new()])?;
                diverged.push(format!(
                    "cell {label} diverged at epoch {epoch}, batch {batch}: {detail}"
                ));
            }
            Err(other) => {
                return Err(validation!("cell {label} failed: {other}"));
            }
        }
    }
    writer.flush()?;
    drop(writer);
    builder.output(&summary_path)?;
    for note in &diverged {
        builder.note(note.clone());
    }
    builder.write(&run_dir)?;

    println!(
        "swept {} over {} cells on fold {} ({} diverged) -> {}",
        match axis {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Batch => "batch size",
        },
        grid.len(),
        resolved.train.fold,
        diverged.len(),
        run_dir.display()
    );
    Ok(run_dir)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct ResolvedReport {
    run: PathBuf,
}

fn cmd_report(args: ReportArgs, file: &FileCfg, seed: u64, out: &Path) -> Result<PathBuf> {
    let run = args
        .run
        .or_else(|| file.run.clone())
        .ok_or_else(|| validation!("--run is required"))?;
    let (dir, manifest_path) = if run.is_dir() {
        (run.clone(), run.join("manifest.json"))
    } else {
        (
            run.parent().unwrap_or(Path::new(".")).to_path_buf(),
            run.clone(),
        )
    };
    let manifest = read_manifest(&manifest_path)?;
    let resolved = ResolvedReport { run: run.clone() };

    println!(
        "run {} ({}), seed {}, {:.2}s, {} outputs",
        manifest.command,
        manifest.created_utc,
        manifest.seed,
        manifest.duration_secs,
        manifest.outputs.len()
    );
    for note in &manifest.notes {
        println!("  note: {note}");
    }

    let metrics_path = dir.join("metrics.json");
    if metrics_path.exists() {
        let summary: EvalSummary =
            serde_json::from_str(&std::fs::read_to_string(&metrics_path)?)?;
        for fold in &summary.per_fold {
            println!(
                "  fold {}: UAR {:.2}%  WAR {:.2}%",
                fold.fold,
                fold.report.uar_percent(),
                fold.report.war_percent()
            );
        }
        if let Some(pooled) = &summary.pooled {
            println!(
                "  pooled: UAR {:.2}%  WAR {:.2}%",
                pooled.uar_percent(),
                pooled.war_percent()
            );
        }
    }

    let kappa_path = dir.join("kappa.json");
    if kappa_path.exists() {
        let report: crate::annotation::KappaReport =
            serde_json::from_str(&std::fs::read_to_string(&kappa_path)?)?;
        println!(
            "  kappa {:.4} ({}) over {} items x {} annotators",
            report.kappa, report.band, report.n_items, report.n_annotators
        );
    }

    let summary_path = dir.join("summary.csv");
    if summary_path.exists() {
        let mut reader = csv::Reader::from_path(&summary_path)?;
        for record in reader.records() {
            let record = record?;
            println!(
                "  cell {}: UAR {}%  WAR {}%",
                &record[0],
                if record[1].is_empty() { "-" } else { &record[1] },
                if record[2].is_empty() { "-" } else { &record[2] }
            );
        }
    }

    let history_path = dir.join("history.csv");
    if history_path.exists() {
        let mut reader = csv::Reader::from_path(&history_path)?;
        if let Some(last) = reader.records().last() {
            let last = last?;
            println!(
                "  final epoch {}: lr {}, L_s {}, L_ecstfl {}, L_total {}",
                &last[0], &last[1], &last[2], &last[3], &last[4]
            );
        }
    }

    let run_dir = create_run_dir(out, "report")?;
    let mut builder = ManifestBuilder::new("report", seed, serde_json::to_value(&resolved)?);
    builder.input(&manifest_path)?;
    builder.write(&run_dir)?;
    Ok(run_dir)
}
