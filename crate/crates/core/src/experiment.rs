//! Experiment runner: repeated (variant, seed) runs, parameter sweeps,
//! distribution dumps and checkpoint evaluation, with delimited-text
//! outputs.
//!
//! Layout of an experiment output directory:
//!
//! ```text
//! manifest.json                      fully resolved ExperimentSpec
//! results.csv                        variant,seed,mae,r2,srcc,wall_seconds
//! summary.csv                        variant,runs,mae_mean,mae_std,r2_mean,r2_std,srcc_mean,srcc_std
//! curves/<VARIANT>_seed<k>.csv       per-iteration loss records
//! checkpoints/<VARIANT>_seed<k>.ckpt student checkpoint (see `checkpoint`)
//! ```
//!
//! A sweep writes one such directory per swept value under
//! `<param>_<value>/` plus `sweep_summary.csv` with one row per
//! (value, variant).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{self, LabelColumn, SsrDataset, Standardizer, SyntheticFamily};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::trainer::{self, Head, LossRecord, TrainConfig, TrainedPair, Variant};

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic {
        family: SyntheticFamily,
        /// Labeled plus unlabeled training pool.
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        noise_std: f64,
    },
    File {
        path: PathBuf,
        label_column: LabelColumn,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        /// Labeled rows held out for testing.
        n_test: usize,
    },
}

fn default_delimiter() -> char {
    ','
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            family: SyntheticFamily::Sine,
            n_train: 2050,
            n_test: 1000,
            noise_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    /// Labeled samples drawn from the training pool.
    pub n_labeled: usize,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub save_checkpoints: bool,
    /// Worker threads for independent runs; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            n_labeled: 50,
            train: TrainConfig::default(),
            variants: vec![Variant::Drill],
            seeds: vec![0],
            out_dir: PathBuf::from("drill-out"),
            save_checkpoints: true,
            threads: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.n_labeled == 0 {
            return Err(Error::config("n_labeled", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        match &self.dataset {
            DatasetSpec::Synthetic {
                n_train,
                n_test,
                noise_std,
                ..
            } => {
                if *n_test < 2 {
                    return Err(Error::config("dataset.n_test", "need at least two test samples"));
                }
                if self.n_labeled > *n_train {
                    return Err(Error::config(
                        "n_labeled",
                        format!("{} exceeds the training pool of {n_train}", self.n_labeled),
                    ));
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(Error::config("dataset.noise_std", "must be finite and >= 0"));
                }
            }
            DatasetSpec::File { path, n_test, .. } => {
                if *n_test < 2 {
                    return Err(Error::config("dataset.n_test", "need at least two test samples"));
                }
                if !path.is_file() {
                    return Err(Error::config("dataset.path", format!("{} is not a readable file", path.display())));
                }
            }
        }
        self.train.validate()
    }
}

/// Standardized train/test datasets for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: SsrDataset,
    pub test: SsrDataset,
    pub scaler: Standardizer,
}

/// Builds the dataset for `seed`: draw or load, hold out the test rows,
/// pick the labeled subset, then standardize with statistics of the
/// training pool.
pub fn prepare(dataset: &DatasetSpec, n_labeled: usize, seed: u64) -> Result<Prepared> {
    let (full, n_test) = match dataset {
        DatasetSpec::Synthetic {
            family,
            n_train,
            n_test,
            noise_std,
        } => (data::generate(*family, n_train + n_test, *noise_std, seed)?, *n_test),
        DatasetSpec::File {
            path,
            label_column,
            delimiter,
            n_test,
        } => {
            let delim = u8::try_from(*delimiter)
                .map_err(|_| Error::config("dataset.delimiter", "must be a single-byte character"))?;
            (data::load_delimited(path, label_column, delim)?, *n_test)
        }
    };
    let (train, test) = full.split_test(n_test, seed)?;
    let train = train.select_labeled(n_labeled, seed)?;
    let scaler = Standardizer::fit(train.features())?;
    Ok(Prepared {
        train: train.standardized(&scaler)?,
        test: test.standardized(&scaler)?,
        scaler,
    })
}

/// Outcome of one (variant, seed) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricReport,
    pub wall_seconds: f64,
    pub history: Vec<LossRecord>,
    pub checkpoint: Checkpoint,
}

pub fn run_single(spec: &ExperimentSpec, variant: Variant, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let prepared = prepare(&spec.dataset, spec.n_labeled, seed)?;
    let cfg = TrainConfig {
        variant,
        seed,
        ..spec.train.clone()
    };
    let pair: TrainedPair = trainer::train_drill(&prepared.train, &cfg)?;
    // A collapsed model (constant output) still gets a row; its undefined
    // metrics are NaN.
    let test = &prepared.test;
    let preds = pair.predict_rows(&test.select_rows(test.labeled_indices()))?;
    let metrics = metrics::report_or_nan(&preds, &test.labeled_targets())?;
    Ok(RunResult {
        variant,
        seed,
        metrics,
        wall_seconds: start.elapsed().as_secs_f64(),
        checkpoint: pair.checkpoint(Some(prepared.scaler)),
        history: pair.history,
    })
}

/// Mean and sample standard deviation of each metric for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: Variant,
    pub runs: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub srcc_mean: f64,
    pub srcc_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(results: &[RunResult], variants: &[Variant]) -> Vec<Summary> {
    variants
        .iter()
        .filter_map(|&v| {
            let rows: Vec<&MetricReport> = results.iter().filter(|r| r.variant == v).map(|r| &r.metrics).collect();
            if rows.is_empty() {
                return None;
            }
            let (mae_mean, mae_std) = mean_std(&rows.iter().map(|m| m.mae).collect::<Vec<_>>());
            let (r2_mean, r2_std) = mean_std(&rows.iter().map(|m| m.r2).collect::<Vec<_>>());
            let (srcc_mean, srcc_std) = mean_std(&rows.iter().map(|m| m.srcc).collect::<Vec<_>>());
            Some(Summary {
                variant: v,
                runs: rows.len(),
                mae_mean,
                mae_std,
                r2_mean,
                r2_std,
                srcc_mean,
                srcc_std,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// In (variant, seed) order of the spec.
    pub results: Vec<RunResult>,
    pub summaries: Vec<Summary>,
}

impl ExperimentReport {
    pub fn summary(&self, variant: Variant) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

/// Runs every (variant, seed) pair, in parallel across pairs, and writes the
/// output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let jobs: Vec<(Variant, u64)> = spec
        .variants
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let work = || -> Result<Vec<RunResult>> {
        jobs.par_iter().map(|&(v, s)| run_single(spec, v, s)).collect()
    };
    let results = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let summaries = summarize(&results, &spec.variants);
    let report = ExperimentReport { results, summaries };
    write_outputs(spec, &report)?;
    Ok(report)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut s = String::from("variant,seed,mae,r2,srcc,wall_seconds\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            r.variant, r.seed, r.metrics.mae, r.metrics.r2, r.metrics.srcc, r.wall_seconds
        );
    }
    s
}

const SUMMARY_HEADER: &str = "runs,mae_mean,mae_std,r2_mean,r2_std,srcc_mean,srcc_std";

fn summary_fields(s: &Summary) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        s.runs, s.mae_mean, s.mae_std, s.r2_mean, s.r2_std, s.srcc_mean, s.srcc_std
    )
}

pub fn summary_csv(summaries: &[Summary]) -> String {
    let mut s = format!("variant,{SUMMARY_HEADER}\n");
    for row in summaries {
        let _ = writeln!(s, "{},{}", row.variant, summary_fields(row));
    }
    s
}

pub fn curve_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("iteration,teacher_loss,student_loss,alignment_loss,target_kl,nontarget_kl,r_factor,total\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.iteration, r.teacher_loss, r.student_loss, r.alignment_loss, r.target_kl, r.nontarget_kl, r.r_factor, r.total
        );
    }
    s
}

fn write_outputs(spec: &ExperimentSpec, report: &ExperimentReport) -> Result<()> {
    let out = &spec.out_dir;
    let manifest = serde_json::to_string_pretty(spec).map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(&out.join("manifest.json"), manifest.as_bytes())?;
    write_atomic(&out.join("results.csv"), results_csv(&report.results).as_bytes())?;
    write_atomic(&out.join("summary.csv"), summary_csv(&report.summaries).as_bytes())?;
    for r in &report.results {
        let stem = format!("{}_seed{}", r.variant, r.seed);
        write_atomic(&out.join("curves").join(format!("{stem}.csv")), curve_csv(&r.history).as_bytes())?;
        if spec.save_checkpoints {
            write_atomic(&out.join("checkpoints").join(format!("{stem}.ckpt")), &r.checkpoint.to_bytes())?;
        }
    }
    Ok(())
}

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Number of labeled samples.
    Labeled,
    Beta,
    /// Number of buckets.
    Buckets,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Labeled => "labeled",
            SweepParam::Beta => "beta",
            SweepParam::Buckets => "buckets",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::Labeled => vec![50.0, 100.0, 250.0, 500.0],
            SweepParam::Beta => vec![0.1, 1.0, 10.0, 100.0],
            SweepParam::Buckets => vec![50.0, 100.0, 200.0, 400.0],
        }
    }

    fn apply(self, spec: &mut ExperimentSpec, value: f64) -> Result<()> {
        let as_count = |field: &str| {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(field, format!("sweep value {value} is not a positive integer")))
            }
        };
        match self {
            SweepParam::Labeled => spec.n_labeled = as_count("n_labeled")?,
            SweepParam::Beta => spec.train.beta = value,
            SweepParam::Buckets => spec.train.bucket_count = as_count("bucket_count")?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub report: ExperimentReport,
}

/// Runs the experiment once per value of `param`.
pub fn run_sweep(base: &ExperimentSpec, param: SweepParam, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    // Validate every point before training anything.
    let specs = values
        .iter()
        .map(|&v| {
            let mut spec = base.clone();
            param.apply(&mut spec, v)?;
            spec.out_dir = base.out_dir.join(format!("{}_{}", param.name(), v));
            spec.validate()?;
            Ok((v, spec))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(specs.len());
    for (value, spec) in specs {
        points.push(SweepPoint {
            value,
            report: run_experiment(&spec)?,
        });
    }
    let mut s = format!("param,value,variant,{SUMMARY_HEADER}\n");
    for p in &points {
        for row in &p.report.summaries {
            let _ = writeln!(s, "{},{},{},{}", param.name(), p.value, row.variant, summary_fields(row));
        }
    }
    write_atomic(&base.out_dir.join("sweep_summary.csv"), s.as_bytes())?;
    Ok(points)
}

/// Input for [`dump_distribution`], in raw (unstandardized) feature units.
#[derive(Debug, Clone, PartialEq)]
pub enum DumpInput {
    Inline(Vec<f64>),
    /// Row of a delimited file; the label column is skipped.
    Row {
        path: PathBuf,
        row: usize,
        label_column: LabelColumn,
        delimiter: u8,
    },
}

/// Bucket probabilities for one input and their decoded expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub input: Vec<f64>,
    pub bucket_values: Vec<f64>,
    pub probs: Vec<f64>,
    pub expectation: f64,
}

fn model_input(ck: &Checkpoint, raw: &[f64]) -> Result<Vec<f64>> {
    match &ck.scaler {
        Some(s) => s.apply_row(raw),
        None => Ok(raw.to_vec()),
    }
}

/// Distribution a checkpointed student assigns to one input.
pub fn distribution_record(ck: &Checkpoint, raw: &[f64]) -> Result<DistributionRecord> {
    let spec = match &ck.head {
        Head::Distribution(spec) => spec,
        Head::Scalar => return Err(Error::Checkpoint("checkpoint has a scalar head and no bucket distribution".into())),
    };
    let x = model_input(ck, raw)?;
    let dist = ck.model.forward(&x)?;
    Ok(DistributionRecord {
        input: raw.to_vec(),
        bucket_values: spec.values().to_vec(),
        probs: dist.probs().to_vec(),
        expectation: crate::dde::expectation(&dist, spec)?,
    })
}

pub fn dump_distribution(checkpoint: impl AsRef<Path>, input: &DumpInput) -> Result<DistributionRecord> {
    let ck = Checkpoint::load(checkpoint)?;
    let raw = match input {
        DumpInput::Inline(v) => v.clone(),
        DumpInput::Row {
            path,
            row,
            label_column,
            delimiter,
        } => {
            let ds = data::load_delimited(path, label_column, *delimiter)?;
            if *row >= ds.len() {
                return Err(Error::invalid(format!("row {row} out of range for {} rows", ds.len())));
            }
            ds.row(*row).to_vec()
        }
    };
    distribution_record(&ck, &raw)
}

/// Scores a checkpoint on the labeled rows of a delimited file.
pub fn evaluate_checkpoint(
    checkpoint: impl AsRef<Path>,
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    delimiter: u8,
) -> Result<MetricReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = data::load_delimited(path, label_column, delimiter)?;
    let ds = match &ck.scaler {
        Some(s) => ds.standardized(s)?,
        None => ds,
    };
    let rows = ds.labeled_indices();
    if rows.is_empty() {
        return Err(Error::invalid("evaluation file has no labeled rows"));
    }
    let inputs: Array2<f64> = ds.select_rows(rows);
    let preds = ck.head.predict_rows(&ck.model, &inputs)?;
    crate::metrics::report(&preds, &ds.labeled_targets())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(out: &Path) -> ExperimentSpec {
        ExperimentSpec {
            dataset: DatasetSpec::Synthetic {
                family: SyntheticFamily::Sine,
                n_train: 120,
                n_test: 40,
                noise_std: 0.1,
            },
            n_labeled: 20,
            train: TrainConfig {
                bucket_count: 16,
                iterations: 20,
                hidden: vec![8],
                ..TrainConfig::default()
            },
            variants: vec![Variant::Dr, Variant::Drill],
            seeds: vec![1, 2],
            out_dir: out.to_path_buf(),
            save_checkpoints: true,
            threads: Some(2),
        }
    }

    #[test]
    fn run_writes_rows_and_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(dir.path());
        let report = run_experiment(&spec).unwrap();
        assert_eq!(report.results.len(), 4);
        assert_eq!(report.summaries.len(), 2);
        let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(results.lines().count(), 5);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3);
        assert!(dir.path().join("curves/DRILL_seed2.csv").is_file());
        assert!(dir.path().join("checkpoints/DR_seed1.ckpt").is_file());
        let manifest: ExperimentSpec =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest, spec);
    }

    #[test]
    fn validation_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(dir.path());
        spec.variants.clear();
        match run_experiment(&spec) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "variants"),
            other => panic!("{other:?}"),
        }
        let mut spec = tiny_spec(dir.path());
        spec.n_labeled = 1000;
        assert!(matches!(spec.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn sweep_rejects_fractional_counts_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(dir.path());
        assert!(run_sweep(&spec, SweepParam::Buckets, &[16.0, 2.5]).is_err());
        assert!(!dir.path().join("buckets_16").exists());
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ExperimentSpec = serde_json::from_str(
            r#"{"dataset": {"kind": "synthetic", "family": "friedman", "n_train": 500, "n_test": 100},
                "variants": ["DRILL", "DRILL_KL"], "train": {"beta": 1.0}}"#,
        )
        .unwrap();
        assert_eq!(spec.train.beta, 1.0);
        assert_eq!(spec.train.bucket_count, 200);
        assert_eq!(spec.variants, vec![Variant::Drill, Variant::DrillKl]);
    }
}
