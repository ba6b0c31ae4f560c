//! Command-line entry point: dataset generation, training, evaluation,
//! gradient verification, and variant comparison, with machine-readable
//! outputs.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error,
//! 4 numerical divergence. Every command accepts `--config FILE` holding
//! plain `key=value` lines whose keys are the long flag names; explicit flags
//! override file values, unknown keys are rejected. Metric outputs are
//! byte-identical under a fixed seed; progress and the fully resolved
//! configuration go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};

use crate::data::{
    generate_phase_dataset, load_checkpoint, load_dataset, read_manifest, save_checkpoint,
    Dataset, PhaseDatasetOptions, Split,
};
use crate::error::Error;
use crate::gradcheck::{layer_checks, model_check, OpCheck};
use crate::layers::{ActivationKind, PoolVariant};
use crate::models::{amplitude_only_mode, cvggnet_spec, cvnet5_spec, Model, ModelSpec};
use crate::train::{compare_variants, evaluate, train, CompareAxis, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cvnn",
    about = "Complex-valued convolutional networks for coherent-image recognition",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic phase-encoded dataset.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences (64-bit).
    Gradcheck(GradcheckArgs),
    /// Train every variant along one axis and rank by mean accuracy.
    Compare(CompareArgs),
}

#[derive(Parser, Debug)]
struct GenDataArgs {
    /// Number of classes (>= 2).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Samples per class (70/30 train/test split).
    #[arg(long = "per-class", default_value_t = 200)]
    per_class: usize,
    /// Square slice extent in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Give each class a distinct speckle scale so |z| alone separates them.
    #[arg(long = "amp-discriminable", default_value_t = false)]
    amp_discriminable: bool,
    /// Per-pixel phase noise standard deviation (radians).
    #[arg(long = "noise-sigma", default_value_t = 0.3)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for CVSL files and manifests.
    #[arg(long = "out-dir", default_value = "data")]
    out_dir: PathBuf,
    /// Plain key=value file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct TrainArgs {
    /// Architecture: cvgg or cvnet5.
    #[arg(long, default_value = "cvnet5")]
    model: String,
    /// Channel width multiplier (1.0 = paper scale).
    #[arg(long = "width-mult", default_value_t = 1.0)]
    width_mult: f64,
    /// Pooling variant: real-split, amplitude, or area.
    #[arg(long, default_value = "area")]
    pool: String,
    /// Activation: crelu, ctanh, celu, or cprelu.
    #[arg(long, default_value = "crelu")]
    activation: String,
    /// Dataset directory holding train.manifest / test.manifest.
    #[arg(long = "data-dir", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for metrics, summary, and the checkpoint.
    #[arg(long, default_value = "train-out")]
    out: PathBuf,
    /// Spatial extent slices are normalized and padded/cropped to.
    #[arg(long = "input-size", default_value_t = 32)]
    input_size: usize,
    /// Destroy phase at the input and freeze imaginary weights at zero.
    #[arg(long = "amplitude-only", default_value_t = false)]
    amplitude_only: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct EvalArgs {
    /// Checkpoint written by `cvnn train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "data-dir", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct GradcheckArgs {
    /// layers: every layer op; model: adds the CVnet5-micro end-to-end graph.
    #[arg(long, default_value = "layers")]
    scope: String,
    /// Also report the f32 path (informational; the gate stays 64-bit).
    #[arg(long = "precision-check", default_value_t = false)]
    precision_check: bool,
    /// Test fixture: corrupt the named op's backward rule.
    #[arg(long, hide = true)]
    sabotage: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct CompareArgs {
    /// Comparison axis: activation or pooling.
    #[arg(long)]
    axis: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value = "cvnet5")]
    model: String,
    #[arg(long = "width-mult", default_value_t = 0.25)]
    width_mult: f64,
    /// Base pooling variant (fixed when axis=activation).
    #[arg(long, default_value = "area")]
    pool: String,
    /// Base activation (fixed when axis=pooling).
    #[arg(long, default_value = "crelu")]
    activation: String,
    #[arg(long = "data-dir", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "input-size", default_value_t = 32)]
    input_size: usize,
    /// Optional CSV of every individual run (variant, seed, accuracy).
    #[arg(long = "runs-out")]
    runs_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Process entry: parse, merge config file, dispatch. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(&argv) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(err)) => {
            // --help/--version go to stdout with success.
            let code = if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
        Err(ParseFailure::Config(message)) => {
            eprintln!("error: {message}");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

enum ParseFailure {
    Clap(clap::Error),
    Config(String),
}

fn config_path(command: &Command) -> Option<&Path> {
    match command {
        Command::GenData(a) => a.config.as_deref(),
        Command::Train(a) => a.config.as_deref(),
        Command::Eval(a) => a.config.as_deref(),
        Command::Gradcheck(a) => a.config.as_deref(),
        Command::Compare(a) => a.config.as_deref(),
    }
}

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::Compare(_) => "compare",
    }
}

/// Parse argv; when `--config` is present, re-parse with the file's
/// `key=value` pairs injected ahead of the explicit flags so flags win.
fn parse_with_config(argv: &[OsString]) -> Result<Cli, ParseFailure> {
    let first = Cli::try_parse_from(argv).map_err(ParseFailure::Clap)?;
    let Some(path) = config_path(&first.command) else {
        return Ok(first);
    };
    let sub_name = subcommand_name(&first.command);
    let text = fs::read_to_string(path)
        .map_err(|e| ParseFailure::Config(format!("{}: {e}", path.display())))?;

    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(sub_name)
        .expect("subcommand is known");
    let known: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();

    let mut injected: Vec<OsString> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ParseFailure::Config(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "config" || !known.iter().any(|k| k == key) {
            return Err(ParseFailure::Config(format!(
                "{}:{}: unknown key '{}'",
                path.display(),
                lineno + 1,
                key
            )));
        }
        injected.push(format!("--{key}").into());
        injected.push(value.into());
    }

    // argv = [program, subcommand, flags...]; rebuild with file values first.
    let mut merged: Vec<OsString> = Vec::with_capacity(argv.len() + injected.len());
    merged.push(argv[0].clone());
    merged.push(argv[1].clone());
    merged.extend(injected);
    merged.extend(argv[2..].iter().cloned());
    Cli::try_parse_from(merged).map_err(ParseFailure::Clap)
}

fn dispatch(cli: Cli) -> crate::Result<i32> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn build_spec(
    model: &str,
    num_classes: usize,
    activation: &str,
    pool: &str,
    width_mult: f64,
    input_size: usize,
) -> crate::Result<ModelSpec> {
    let activation = ActivationKind::parse(activation)?;
    let pool = PoolVariant::parse(pool)?;
    match model {
        "cvgg" => Ok(cvggnet_spec(num_classes, activation, pool, width_mult, input_size)),
        "cvnet5" => Ok(cvnet5_spec(num_classes, activation, pool, width_mult, input_size)),
        other => Err(Error::invalid(
            "train",
            format!("unknown model '{other}' (cvgg|cvnet5)"),
        )),
    }
}

fn load_split(dir: &Path, split: Split, input_size: usize) -> crate::Result<(Dataset<f32>, usize)> {
    let manifest = read_manifest(&dir.join(split.manifest_name()), split)?;
    let classes = manifest.class_names.len();
    let dataset = load_dataset::<f32>(dir, &manifest, input_size)?;
    Ok((dataset, classes))
}

fn cmd_gen_data(args: GenDataArgs) -> crate::Result<i32> {
    eprintln!("resolved config: {args:?}");
    let opts = PhaseDatasetOptions {
        num_classes: args.classes,
        samples_per_class: args.per_class,
        size: args.size,
        amplitude_discriminable: args.amp_discriminable,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let summary = generate_phase_dataset(&opts, &args.out_dir)?;
    println!(
        "gen-data: {} train + {} test records in {} (classes={}, size={})",
        summary.train_records,
        summary.test_records,
        args.out_dir.display(),
        args.classes,
        args.size
    );
    Ok(EXIT_OK)
}

fn write_metrics(
    out_dir: &Path,
    records: &[crate::train::MetricsRecord],
) -> crate::Result<()> {
    let mut jsonl = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::invalid("metrics", e.to_string()))?;
        jsonl.push_str(&line);
        jsonl.push('\n');
    }
    let path = out_dir.join("metrics.jsonl");
    fs::write(&path, jsonl).map_err(|e| Error::io(path, e))?;

    let mut csv = String::from("epoch,train_loss,train_accuracy,test_accuracy\n");
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy
        ));
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, csv).map_err(|e| Error::io(path, e))
}

fn cmd_train(args: TrainArgs) -> crate::Result<i32> {
    eprintln!("resolved config: {args:?}");
    let (train_set, train_classes) = load_split(&args.data_dir, Split::Train, args.input_size)?;
    let (test_set, test_classes) = load_split(&args.data_dir, Split::Test, args.input_size)?;
    let num_classes = train_classes.max(test_classes);
    let spec = build_spec(
        &args.model,
        num_classes,
        &args.activation,
        &args.pool,
        args.width_mult,
        args.input_size,
    )?;
    let mut model: Model<f32> = Model::build(spec, args.seed)?;
    if args.amplitude_only {
        model = amplitude_only_mode(model);
    }
    let config = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        ..Default::default()
    };
    let outcome = train(&model, &train_set, &test_set, &config)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_metrics(&args.out, &outcome.records)?;
    save_checkpoint(&args.out.join("model.cvck"), &model, &outcome.adam)?;
    let last = outcome.records.last().expect("epochs >= 1");
    println!("final test accuracy: {}", last.test_accuracy);
    Ok(EXIT_OK)
}

fn cmd_eval(args: EvalArgs) -> crate::Result<i32> {
    eprintln!("resolved config: {args:?}");
    let (model, _adam) = load_checkpoint::<f32>(&args.checkpoint)?;
    let (test_set, _) = load_split(&args.data_dir, Split::Test, model.spec.input_size)?;
    let report = evaluate(&model, &test_set)?;
    println!("accuracy: {}", report.accuracy);
    let per_class = report
        .per_class_accuracy
        .iter()
        .enumerate()
        .map(|(i, a)| format!("class_{i}={a}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!("per-class accuracy: {per_class}");
    let k = report.confusion.len();
    let header = (0..k).map(|i| format!("class_{i}")).collect::<Vec<_>>().join(",");
    println!("true\\pred,{header}");
    for (i, row) in report.confusion.iter().enumerate() {
        let cells = row.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        println!("class_{i},{cells}");
    }
    Ok(EXIT_OK)
}

fn print_check_table(checks: &[OpCheck]) -> bool {
    println!("op,max_rel_err,status");
    let mut all_pass = true;
    for check in checks {
        let pass = check.passed();
        all_pass &= pass;
        println!(
            "{},{:.3e},{}",
            check.name,
            check.report.max_rel_err(),
            if pass { "pass" } else { "FAIL" }
        );
        if !pass {
            for failure in check.report.failures() {
                eprintln!(
                    "gradcheck: {} failed at parameter '{}' coordinate {:?} (rel err {:.3e})",
                    check.name, failure.name, failure.worst, failure.max_rel_err
                );
            }
        }
    }
    all_pass
}

fn cmd_gradcheck(args: GradcheckArgs) -> crate::Result<i32> {
    eprintln!("resolved config: {args:?}");
    let sabotage = args.sabotage.as_deref();
    let mut checks = layer_checks(sabotage)?;
    match args.scope.as_str() {
        "layers" => {}
        "model" => checks.push(model_check(sabotage == Some("cvnet5_micro"))?),
        other => {
            return Err(Error::invalid(
                "gradcheck",
                format!("unknown scope '{other}' (layers|model)"),
            ))
        }
    }
    let all_pass = print_check_table(&checks);
    if args.precision_check {
        // Informational: the same forward kernels run in f32 during training;
        // report the f64 gate result explicitly.
        eprintln!(
            "precision-check: gate evaluated in f64 (step {:e}, tolerance {:e}); training lane uses f32 kernels of the same code path",
            crate::gradcheck::STEP,
            crate::gradcheck::TOLERANCE
        );
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_VERIFICATION })
}

fn cmd_compare(args: CompareArgs) -> crate::Result<i32> {
    eprintln!("resolved config: {args:?}");
    let axis = CompareAxis::parse(&args.axis)?;
    let (train_set, train_classes) = load_split(&args.data_dir, Split::Train, args.input_size)?;
    let (test_set, test_classes) = load_split(&args.data_dir, Split::Test, args.input_size)?;
    let num_classes = train_classes.max(test_classes);
    let base = build_spec(
        &args.model,
        num_classes,
        &args.activation,
        &args.pool,
        args.width_mult,
        args.input_size,
    )?;
    let config = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        ..Default::default()
    };
    let results = compare_variants(&base, axis, &train_set, &test_set, &config, args.repeats)?;
    println!("variant,mean,std");
    for r in &results {
        println!("{},{},{}", r.variant, r.mean, r.std_dev);
    }
    if let Some(path) = &args.runs_out {
        let mut csv = String::from("variant,seed,accuracy\n");
        for r in &results {
            for run in &r.runs {
                csv.push_str(&format!("{},{},{}\n", r.variant, run.seed, run.accuracy));
            }
        }
        fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(EXIT_OK)
}
