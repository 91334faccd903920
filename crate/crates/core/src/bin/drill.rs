//! Command-line experiment runner.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when
//! training diverges.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drill::data::{LabelColumn, SyntheticFamily};
use drill::experiment::{self, DatasetSpec, DumpInput, ExperimentReport, ExperimentSpec, Summary, SweepParam};
use drill::{Error, Result, Variant};

const OUT_ENV: &str = "DRILL_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "drill", version, about = "Semi-supervised regression experiments with bucketed distribution alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate every (variant, seed) pair.
    Run(ExperimentArgs),
    /// Repeat the experiment for several labeled-set sizes.
    SweepLabeled(SweepArgs),
    /// Repeat the experiment for several values of beta.
    SweepBeta(SweepArgs),
    /// Repeat the experiment for several bucket counts.
    SweepBuckets(SweepArgs),
    /// Run the ablation variants (DRILL, SDE, DRILL_KL, DRILL_LOGITS).
    Ablate(ExperimentArgs),
    /// Print the bucket distribution a checkpoint assigns to one input.
    DumpDist(DumpArgs),
    /// Score a checkpoint on a delimited file.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
#[command(allow_negative_numbers = true)]
struct ExperimentArgs {
    /// JSON experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variants to train, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<Variant>,
    /// Seeds, as a comma-separated list or a half-open range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    /// Number of labeled training samples.
    #[arg(long)]
    labeled: Option<usize>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Skip writing checkpoints.
    #[arg(long)]
    no_checkpoints: bool,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug, Clone)]
#[command(allow_negative_numbers = true)]
struct SweepArgs {
    /// Values to sweep, comma separated; defaults depend on the sweep.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Synthetic family: sine, piecewise or friedman.
    #[arg(long)]
    family: Option<SyntheticFamily>,
    /// Synthetic training pool size (labeled plus unlabeled).
    #[arg(long)]
    n_train: Option<usize>,
    /// Test samples held out.
    #[arg(long)]
    n_test: Option<usize>,
    /// Label noise standard deviation for synthetic data.
    #[arg(long)]
    noise: Option<f64>,
    /// Delimited data file instead of a synthetic family.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column of the data file, by index or header name.
    #[arg(long)]
    label_column: Option<LabelColumn>,
    #[arg(long)]
    delimiter: Option<char>,
}

/// One flag per training hyperparameter.
#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    #[arg(long)]
    beta: Option<f64>,
    /// Number of buckets.
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    labeled_batch: Option<usize>,
    #[arg(long)]
    unlabeled_ratio: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    mask_fraction: Option<f64>,
    #[arg(long)]
    strong_rounds: Option<usize>,
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long)]
    mask_value: Option<f64>,
    /// Fixed bucket range `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    label_range: Option<Vec<f64>>,
    #[arg(long)]
    label_margin: Option<f64>,
    #[arg(long)]
    teacher_alignment_grad: bool,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw feature vector, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "data")]
    input: Option<Vec<f64>>,
    /// Data file holding the input row.
    #[arg(long, requires = "row")]
    data: Option<PathBuf>,
    /// Zero-based data row (header excluded).
    #[arg(long)]
    row: Option<usize>,
    #[arg(long, default_value = "y")]
    label_column: LabelColumn,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    label_column: LabelColumn,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::config("seeds", format!("cannot parse `{s}`; use `0,1,2` or `0..5`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::config("delimiter", format!("`{c}` is not a single ASCII character")))
}

fn apply_data(spec: &mut ExperimentSpec, d: &DataArgs) -> Result<()> {
    if let Some(path) = &d.data {
        let n_test = d.n_test.unwrap_or(match &spec.dataset {
            DatasetSpec::Synthetic { n_test, .. } | DatasetSpec::File { n_test, .. } => *n_test,
        });
        let (label_column, delimiter) = match &spec.dataset {
            DatasetSpec::File {
                label_column, delimiter, ..
            } => (label_column.clone(), *delimiter),
            _ => (LabelColumn::Name("y".into()), ','),
        };
        spec.dataset = DatasetSpec::File {
            path: path.clone(),
            label_column: d.label_column.clone().unwrap_or(label_column),
            delimiter: d.delimiter.unwrap_or(delimiter),
            n_test,
        };
        return Ok(());
    }
    match &mut spec.dataset {
        DatasetSpec::Synthetic {
            family,
            n_train,
            n_test,
            noise_std,
        } => {
            if let Some(f) = d.family {
                *family = f;
            }
            if let Some(n) = d.n_train {
                *n_train = n;
            }
            if let Some(n) = d.n_test {
                *n_test = n;
            }
            if let Some(s) = d.noise {
                *noise_std = s;
            }
        }
        DatasetSpec::File {
            label_column,
            delimiter,
            n_test,
            ..
        } => {
            if d.family.is_some() || d.n_train.is_some() || d.noise.is_some() {
                return Err(Error::config("dataset", "synthetic flags given but the config names a data file"));
            }
            if let Some(c) = &d.label_column {
                *label_column = c.clone();
            }
            if let Some(c) = d.delimiter {
                *delimiter = c;
            }
            if let Some(n) = d.n_test {
                *n_test = n;
            }
        }
    }
    Ok(())
}

fn apply_train(spec: &mut ExperimentSpec, t: &TrainArgs) {
    let cfg = &mut spec.train;
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = t.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    set! {
        beta => beta,
        buckets => bucket_count,
        labeled_batch => labeled_batch,
        unlabeled_ratio => unlabeled_ratio,
        iterations => iterations,
        lr => learning_rate,
        momentum => momentum,
        weight_decay => weight_decay,
        hidden => hidden,
        mask_fraction => augment.mask_fraction,
        strong_rounds => augment.strong_rounds,
        noise_variance => augment.noise_variance,
        mask_value => augment.mask_value,
        label_margin => label_margin,
        ema_decay => ema_decay,
    }
    if let Some(r) = &t.label_range {
        cfg.label_range = Some([r[0], r[1]]);
    }
    if t.teacher_alignment_grad {
        cfg.teacher_alignment_grad = true;
    }
    if let Some(c) = t.grad_clip {
        cfg.grad_clip = Some(c);
    }
}

fn build_spec(args: &ExperimentArgs, default_variants: Option<&[Variant]>) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::from_json_file(path)?,
        None => ExperimentSpec::default(),
    };
    if !args.variant.is_empty() {
        spec.variants = args.variant.clone();
    } else if let Some(v) = default_variants {
        spec.variants = v.to_vec();
    }
    if let Some(s) = &args.seeds {
        spec.seeds = parse_seeds(s)?;
    }
    if let Some(n) = args.labeled {
        spec.n_labeled = n;
    }
    if let Some(out) = &args.out {
        spec.out_dir = out.clone();
    }
    if args.threads.is_some() {
        spec.threads = args.threads;
    }
    if args.no_checkpoints {
        spec.save_checkpoints = false;
    }
    apply_data(&mut spec, &args.data)?;
    apply_train(&mut spec, &args.train);
    spec.validate()?;
    Ok(spec)
}

fn print_summaries(prefix: &str, summaries: &[Summary]) {
    for s in summaries {
        println!(
            "{prefix}{:<22} runs {:>2}  mae {:.4} ± {:.4}  r2 {:.4} ± {:.4}  srcc {:.4} ± {:.4}",
            s.variant.name(),
            s.runs,
            s.mae_mean,
            s.mae_std,
            s.r2_mean,
            s.r2_std,
            s.srcc_mean,
            s.srcc_std
        );
    }
}

fn run(args: &ExperimentArgs, default_variants: Option<&[Variant]>) -> Result<()> {
    let spec = build_spec(args, default_variants)?;
    let report: ExperimentReport = experiment::run_experiment(&spec)?;
    print_summaries("", &report.summaries);
    println!("results written to {}", spec.out_dir.display());
    Ok(())
}

fn sweep(args: &SweepArgs, param: SweepParam) -> Result<()> {
    let spec = build_spec(&args.experiment, None)?;
    let values = if args.values.is_empty() {
        param.default_values()
    } else {
        args.values.clone()
    };
    let points = experiment::run_sweep(&spec, param, &values)?;
    for p in &points {
        print_summaries(&format!("{} {:<8} ", param.name(), p.value), &p.report.summaries);
    }
    println!("sweep written to {}", spec.out_dir.display());
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::invalid(e.to_string()))
}

fn dump(args: &DumpArgs) -> Result<()> {
    let input = match (&args.input, &args.data) {
        (Some(v), None) => DumpInput::Inline(v.clone()),
        (None, Some(path)) => DumpInput::Row {
            path: path.clone(),
            row: args.row.expect("clap enforces --row with --data"),
            label_column: args.label_column.clone(),
            delimiter: delimiter_byte(args.delimiter)?,
        },
        _ => return Err(Error::invalid("give either --input or --data with --row")),
    };
    let record = experiment::dump_distribution(&args.checkpoint, &input)?;
    println!("{}", to_json(&record)?);
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let report = experiment::evaluate_checkpoint(
        &args.checkpoint,
        &args.data,
        &args.label_column,
        delimiter_byte(args.delimiter)?,
    )?;
    println!("{}", to_json(&report)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => run(a, None),
        Command::Ablate(a) => run(a, Some(&Variant::ABLATION)),
        Command::SweepLabeled(a) => sweep(a, SweepParam::Labeled),
        Command::SweepBeta(a) => sweep(a, SweepParam::Beta),
        Command::SweepBuckets(a) => sweep(a, SweepParam::Buckets),
        Command::DumpDist(a) => dump(a),
        Command::Eval(a) => eval(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            match e {
                Error::Divergence { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
