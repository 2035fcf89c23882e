//! The `tempseg` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (divergence or a failed gradient check).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_synthetic, load_dataset, load_features, read_mapping, save_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::loss::{LossConfig, Smoothing};
use crate::metrics::timeline;
use crate::model::{architecture_report, build_model, group_thousands, ModelConfig, Variant};
use crate::tensor::Precision;
use crate::trainer::{evaluate, fit_with, load_checkpoint, predict_all, save_checkpoint, Checkpoint, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tempseg", version, about = "Multi-stage temporal convolutional action segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic segmentation dataset.
    Generate(GenerateArgs),
    /// Train a model on one split and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Label the frames of one feature file.
    Predict(PredictArgs),
    /// Print the parameter count and dilation / receptive-field table.
    Inspect(InspectArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Kv,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 38)]
    pub videos: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long = "min-seg", default_value_t = 30)]
    pub min_seg: usize,
    #[arg(long = "max-seg", default_value_t = 120)]
    pub max_seg: usize,
    /// Mean number of segments per video.
    #[arg(long, default_value_t = 13)]
    pub segments: usize,
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
    /// Norm of each class prototype vector.
    #[arg(long = "prototype-norm", default_value_t = 0.3)]
    pub prototype_norm: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Allow a segment to repeat the previous segment's class.
    #[arg(long)]
    pub self_transitions: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, default_value = "mstcn")]
    pub arch: Variant,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    #[arg(long = "layers-gen", default_value_t = 11)]
    pub layers_gen: usize,
    #[arg(long = "layers-ref", default_value_t = 10)]
    pub layers_ref: usize,
    #[arg(long, default_value_t = 64)]
    pub filters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.0005)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.15)]
    pub lambda: f64,
    #[arg(long, default_value_t = 4.0)]
    pub tau: f64,
    #[arg(long, default_value = "tmse")]
    pub smoothing: Smoothing,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the video order fixed across epochs.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Omit the timestamp from the training log.
    #[arg(long)]
    pub no_timestamp: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated class names excluded from Edit and F1.
    #[arg(long, default_value = "")]
    pub background: String,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Print a predicted / ground-truth strip per video.
    #[arg(long)]
    pub timeline: bool,
    #[arg(long, default_value_t = 80)]
    pub width: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long, default_value = "mstcn")]
    pub arch: Variant,
    #[arg(long = "input-dim", default_value_t = 2048)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 19)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Evaluate analytic gradients in f64 instead of f32.
    #[arg(long)]
    pub double: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() {
        EXIT_DATA
    } else if matches!(e, Error::Divergence { .. } | Error::Domain(_)) {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = SyntheticSpec {
        num_videos: a.videos,
        num_classes: a.classes,
        feature_dim: a.dim,
        min_segment: a.min_seg,
        max_segment: a.max_seg,
        mean_segments: a.segments,
        noise: a.noise,
        prototype_norm: a.prototype_norm,
        no_self_transitions: !a.self_transitions,
        seed: a.seed,
    };
    let bundle = generate_synthetic(&spec)?;
    save_dataset(&a.out, &bundle)?;
    let mut s = String::new();
    let _ = writeln!(s, "wrote {} videos to {}", bundle.samples.len(), a.out.display());
    for (name, ids) in &bundle.splits {
        let _ = writeln!(s, "  split {name}: {} videos", ids.len());
    }
    if let Some(m) = &bundle.manifest {
        let _ = writeln!(s, "  frames: {}", m.total_frames);
        let _ = writeln!(s, "  nearest-prototype accuracy: {:.1}%", m.nearest_prototype_acc);
    }
    emit(out, &s)?;
    Ok(EXIT_OK)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let bundle = load_dataset(&a.data, &a.split)?;
    let input_dim = bundle
        .samples
        .first()
        .map(|s| s.features.channels())
        .ok_or(Error::Empty("training split has no videos"))?;
    let model_cfg = ModelConfig {
        num_stages: a.stages,
        num_refinements: a.stages.saturating_sub(1),
        layers_per_stage: a.layers,
        layers_generation: a.layers_gen,
        layers_refinement: a.layers_ref,
        filters: a.filters,
        dropout: a.dropout,
        ..ModelConfig::new(a.arch, input_dim, bundle.num_classes())
    };
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        loss: LossConfig {
            lambda: a.lambda,
            tau: a.tau,
            smoothing: a.smoothing,
        },
        seed: a.seed,
        shuffle: !a.no_shuffle,
        eval_split: None,
    };
    let mut model = build_model(&model_cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let mut log = String::new();
    let history = fit_with(&mut model, &bundle, &a.split, &train_cfg, |r| {
        let line = match a.format {
            Format::Table => format!("epoch {:>4}  loss {:.6}\n", r.epoch, r.loss),
            Format::Kv => format!("epoch{}.loss = {}\n", r.epoch, r.loss),
        };
        let _ = out.write_all(line.as_bytes());
        let _ = writeln!(log, "epoch{}.loss = {}", r.epoch, r.loss);
    })?;
    let ckpt = Checkpoint {
        model,
        optimizer: Some(history.optimizer),
        seed: a.seed,
        epoch: a.epochs,
    };
    save_checkpoint(&a.out, &ckpt)?;

    let mut doc = String::new();
    if !a.no_timestamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(doc, "timestamp = {secs}");
    }
    let _ = writeln!(doc, "architecture = \"{}\"", a.arch.name());
    let _ = writeln!(doc, "parameters = {}", ckpt.model.count_parameters());
    let _ = writeln!(doc, "seed = {}", a.seed);
    let _ = writeln!(doc, "epochs = {}", a.epochs);
    doc.push_str(&log);
    let log_path = a.out.with_extension("log");
    std::fs::write(&log_path, doc).map_err(|e| Error::io(&log_path, e))?;

    emit(
        out,
        &format!(
            "wrote {} ({} parameters)\n",
            a.out.display(),
            group_thousands(ckpt.model.count_parameters())
        ),
    )?;
    Ok(EXIT_OK)
}

fn background_set(names: &str, classes: &[String]) -> Result<HashSet<usize>> {
    names
        .split(',')
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| {
            classes
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown background class `{n}`")))
        })
        .collect()
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let bundle = load_dataset(&a.data, &a.split)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let background = background_set(&a.background, &bundle.classes)?;
    let report = evaluate(&ckpt.model, &bundle, &a.split, &background, a.jobs)?;
    let mut s = match a.format {
        Format::Table => report.to_table(),
        Format::Kv => report.to_kv(),
    };
    if a.timeline {
        let videos = bundle.split(&a.split)?;
        let preds = predict_all(&ckpt.model, &videos, a.jobs)?;
        for (v, p) in videos.iter().zip(&preds) {
            let _ = writeln!(s, "\n{}", v.id);
            let _ = writeln!(s, "  pred {}", timeline(p, a.width));
            let _ = writeln!(s, "  gt   {}", timeline(&v.labels, a.width));
        }
    }
    emit(out, &s)?;
    Ok(EXIT_OK)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let classes = read_mapping(&a.mapping)?;
    if classes.len() != ckpt.model.config.num_classes {
        return Err(Error::ClassMismatch {
            model: ckpt.model.config.num_classes,
            dataset: classes.len(),
        });
    }
    let features = load_features(&a.features)?;
    let labels = ckpt.model.predict_labels(&features).map_err(|e| match e {
        Error::Dimension { expected, actual, .. } => Error::Format {
            path: a.features.clone(),
            detail: format!("feature dimension {actual}, checkpoint expects {expected}"),
        },
        other => other,
    })?;
    crate::data::write_labels(&a.out, &labels, &classes)?;
    emit(out, &format!("wrote {} frame labels to {}\n", labels.len(), a.out.display()))?;
    Ok(EXIT_OK)
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<i32> {
    let report = architecture_report(&ModelConfig::new(a.arch, a.input_dim, a.classes))?;
    let text = match a.format {
        Format::Table => report.to_table(),
        Format::Kv => report.to_kv(),
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let precision = if a.double { Precision::Double } else { Precision::Single };
    let results = run_suite(a.seed, precision)?;
    let mut s = String::new();
    match a.format {
        Format::Table => {
            let _ = writeln!(s, "{:<18} {:>12} {:>10}  status", "primitive", "max rel err", "tolerance");
            for r in &results {
                let _ = writeln!(
                    s,
                    "{:<18} {:>12.3e} {:>10.0e}  {}",
                    r.primitive,
                    r.max_rel_error,
                    r.tolerance,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
        }
        Format::Kv => {
            for r in &results {
                let _ = writeln!(s, "{}.max_rel_error = {}", r.primitive, r.max_rel_error);
                let _ = writeln!(s, "{}.passed = {}", r.primitive, r.passed);
            }
        }
    }
    emit(out, &s)?;
    Ok(if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    })
}
