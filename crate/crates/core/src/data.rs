//! Datasets for semi-supervised regression: synthetic benchmarks, delimited
//! text I/O, train/test splits and labeled-subset selection.
//!
//! Rows whose label is hidden by [`SsrDataset::select_labeled`] keep the true
//! value for diagnostics ([`SsrDataset::hidden_label`]); the trainer only
//! reads labels through [`SsrDataset::label`], which returns `None` for them.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SsrDataset {
    features: Array2<f64>,
    /// True label of each row, if known at all.
    labels: Vec<Option<f64>>,
    visible: Vec<bool>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    label_range: Option<(f64, f64)>,
}

impl SsrDataset {
    /// Rows with `Some` label are labeled, the rest unlabeled.
    pub fn new(features: Array2<f64>, labels: Vec<Option<f64>>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} label slots",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        if labels.iter().flatten().any(|y| !y.is_finite()) {
            return Err(Error::invalid("labels must be finite"));
        }
        let visible: Vec<bool> = labels.iter().map(Option::is_some).collect();
        let mut ds = Self {
            features: features.as_standard_layout().into_owned(),
            labels,
            visible,
            labeled: Vec::new(),
            unlabeled: Vec::new(),
            label_range: None,
        };
        ds.reindex();
        Ok(ds)
    }

    fn reindex(&mut self) {
        self.labeled = (0..self.len()).filter(|i| self.visible[*i]).collect();
        self.unlabeled = (0..self.len()).filter(|i| !self.visible[*i]).collect();
        self.label_range = self.labels.iter().flatten().fold(None, |acc, &y| match acc {
            None => Some((y, y)),
            Some((lo, hi)) => Some((lo.min(y), hi.max(y))),
        });
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn labeled_indices(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled_indices(&self) -> &[usize] {
        &self.unlabeled
    }

    /// Label visible to training, `None` for unlabeled rows.
    pub fn label(&self, i: usize) -> Option<f64> {
        if self.visible[i] {
            self.labels[i]
        } else {
            None
        }
    }

    /// True label of an unlabeled row, for diagnostics only.
    pub fn hidden_label(&self, i: usize) -> Option<f64> {
        if self.visible[i] {
            None
        } else {
            self.labels[i]
        }
    }

    /// Labels of the labeled rows, in index order.
    pub fn labeled_targets(&self) -> Vec<f64> {
        self.labeled.iter().map(|&i| self.labels[i].unwrap()).collect()
    }

    /// Min and max over every stored label, hidden ones included.
    pub fn label_range(&self) -> Option<(f64, f64)> {
        self.label_range
    }

    /// Min and max over the visible labels only.
    pub fn labeled_range(&self) -> Option<(f64, f64)> {
        let t = self.labeled_targets();
        let lo = t.iter().copied().reduce(f64::min)?;
        let hi = t.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), rows)
    }

    fn subset(&self, rows: &[usize]) -> Self {
        let mut ds = Self {
            features: self.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            visible: rows.iter().map(|&i| self.visible[i]).collect(),
            labeled: Vec::new(),
            unlabeled: Vec::new(),
            label_range: None,
        };
        ds.reindex();
        ds
    }

    /// Holds out `n_test` uniformly chosen labeled rows as a fully labeled
    /// test set; returns `(train, test)`.
    pub fn split_test(&self, n_test: usize, seed: u64) -> Result<(Self, Self)> {
        if n_test == 0 || n_test >= self.labeled.len() {
            return Err(Error::invalid(format!(
                "test size {n_test} must be in [1, {})",
                self.labeled.len()
            )));
        }
        let mut rng = stream(seed, Stream::Split);
        let mut picked: Vec<usize> = index::sample(&mut rng, self.labeled.len(), n_test)
            .into_iter()
            .map(|k| self.labeled[k])
            .collect();
        picked.sort_unstable();
        let mut is_test = vec![false; self.len()];
        picked.iter().for_each(|&i| is_test[i] = true);
        let rest: Vec<usize> = (0..self.len()).filter(|i| !is_test[*i]).collect();
        Ok((self.subset(&rest), self.subset(&picked)))
    }

    /// Keeps exactly `n_labeled` uniformly chosen rows labeled and hides the
    /// labels of every other row.
    pub fn select_labeled(&self, n_labeled: usize, seed: u64) -> Result<Self> {
        let candidates: Vec<usize> = (0..self.len()).filter(|i| self.labels[*i].is_some()).collect();
        if n_labeled == 0 || n_labeled > candidates.len() {
            return Err(Error::invalid(format!(
                "n_labeled {n_labeled} must be in [1, {}]",
                candidates.len()
            )));
        }
        let mut rng = stream(seed, Stream::Labeled);
        let mut visible = vec![false; self.len()];
        for k in index::sample(&mut rng, candidates.len(), n_labeled) {
            visible[candidates[k]] = true;
        }
        let mut ds = self.clone();
        ds.visible = visible;
        ds.reindex();
        Ok(ds)
    }

    /// Applies `scaler` to every feature row.
    pub fn standardized(&self, scaler: &Standardizer) -> Result<Self> {
        let mut ds = self.clone();
        scaler.apply(&mut ds.features)?;
        Ok(ds)
    }
}

/// Per-feature affine normalization to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Fits population mean and standard deviation per column; constant
    /// columns get a unit scale.
    pub fn fit(features: &Array2<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::invalid("cannot fit a standardizer on zero rows"));
        }
        let mean: Array1<f64> = features.mean_axis(Axis(0)).expect("nonempty");
        let std: Vec<f64> = features
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|s| if *s > 1e-12 { *s } else { 1.0 })
            .collect();
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::invalid("standardizer mean/std length mismatch"));
        }
        if mean.iter().any(|m| !m.is_finite()) || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("standardizer needs finite means and positive stds"));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, features: &mut Array2<f64>) -> Result<()> {
        if features.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                features.ncols()
            )));
        }
        for mut row in features.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}

/// Synthetic regression benchmarks; features are uniform on `[0, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticFamily {
    /// `y = 2.5 + 1.5 sin(2 pi x1)`, `d = 8` (seven distractors), range `[1, 4]`.
    Sine,
    /// `y = 1 + 2 [x1 > 0.5] + 2 x2`, `d = 8`, range `[1, 5]`.
    Piecewise,
    /// Friedman #1: `10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`,
    /// `d = 10` (five distractors).
    Friedman,
}

impl SyntheticFamily {
    pub fn dim(self) -> usize {
        match self {
            SyntheticFamily::Sine | SyntheticFamily::Piecewise => 8,
            SyntheticFamily::Friedman => 10,
        }
    }

    /// Noise-free target.
    pub fn target(self, x: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match self {
            SyntheticFamily::Sine => 2.5 + 1.5 * (2.0 * PI * x[0]).sin(),
            SyntheticFamily::Piecewise => 1.0 + if x[0] > 0.5 { 2.0 } else { 0.0 } + 2.0 * x[1],
            SyntheticFamily::Friedman => {
                10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
            }
        }
    }
}

impl FromStr for SyntheticFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" => Ok(SyntheticFamily::Sine),
            "piecewise" => Ok(SyntheticFamily::Piecewise),
            "friedman" => Ok(SyntheticFamily::Friedman),
            other => Err(Error::invalid(format!(
                "unknown synthetic family `{other}` (expected sine, piecewise or friedman)"
            ))),
        }
    }
}

impl fmt::Display for SyntheticFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticFamily::Sine => "sine",
            SyntheticFamily::Piecewise => "piecewise",
            SyntheticFamily::Friedman => "friedman",
        })
    }
}

/// Draws a fully labeled synthetic dataset.
pub fn make_synthetic(family: &str, n_total: usize, noise_std: f64, seed: u64) -> Result<SsrDataset> {
    let family: SyntheticFamily = family.parse()?;
    generate(family, n_total, noise_std, seed)
}

pub fn generate(family: SyntheticFamily, n_total: usize, noise_std: f64, seed: u64) -> Result<SsrDataset> {
    if n_total == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one sample"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    let mut rng = stream(seed, Stream::Data);
    let d = family.dim();
    let features = Array2::from_shape_simple_fn((n_total, d), || rng.random::<f64>());
    let noise = Normal::new(0.0, noise_std).expect("validated noise");
    let labels = features
        .rows()
        .into_iter()
        .map(|row| {
            let y = family.target(row.as_slice().expect("standard layout"));
            Some(if noise_std > 0.0 { y + noise.sample(&mut rng) } else { y })
        })
        .collect();
    SsrDataset::new(features, labels)
}

/// Which column of a delimited file holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Reads a delimited numeric table.
///
/// The first row is taken as a header when any of its cells is not a number.
/// An empty label cell marks the row unlabeled; every feature cell must parse
/// as a finite number.
pub fn load_delimited(path: impl AsRef<Path>, label_column: &LabelColumn, delimiter: u8) -> Result<SsrDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(file);

    let mut records = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(k + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        let cells: Vec<String> = rec.iter().map(|c| c.trim().to_string()).collect();
        if cells.len() == 1 && cells[0].is_empty() {
            continue;
        }
        records.push((line, cells));
    }
    if records.is_empty() {
        return Err(Error::invalid(format!("{} contains no rows", path.display())));
    }

    let first = &records[0].1;
    let has_header = first.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err());
    let width = first.len();
    let label_idx = match label_column {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(Error::invalid(format!("label column `{name}` given by name but the file has no header")));
            }
            first
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::invalid(format!("no column named `{name}`")))?
        }
    };
    if label_idx >= width {
        return Err(Error::invalid(format!("label column {label_idx} out of range for {width} columns")));
    }

    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::invalid(format!("{} has a header but no data rows", path.display())));
    }
    let d = width - 1;
    let mut feats = Vec::with_capacity(body.len() * d);
    let mut labels = Vec::with_capacity(body.len());
    for (line, cells) in body {
        if cells.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {width} fields, found {}", cells.len()),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("non-numeric feature `{cell}` in column {j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("non-finite feature in column {j}"),
                });
            }
            feats.push(v);
        }
        let cell = &cells[label_idx];
        labels.push(if cell.is_empty() {
            None
        } else {
            let y: f64 = cell.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("non-numeric label `{cell}`"),
            })?;
            if !y.is_finite() {
                return Err(Error::Parse {
                    line: *line,
                    message: "non-finite label".into(),
                });
            }
            Some(y)
        });
    }
    let features = Array2::from_shape_vec((body.len(), d), feats).map_err(|e| Error::invalid(e.to_string()))?;
    SsrDataset::new(features, labels)
}

/// Writes features `x0..x{d-1}` then the label `y` under a header row.
/// Unlabeled rows get an empty label cell. Reals are written in shortest
/// round-trip form.
pub fn write_delimited(data: &SsrDataset, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let sep = delimiter as char;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(w, "{}", header.join(&sep.to_string())).map_err(io)?;
    for i in 0..data.len() {
        let mut line: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        line.push(data.label(i).map(|y| y.to_string()).unwrap_or_default());
        writeln!(w, "{}", line.join(&sep.to_string())).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn sine_target_value() {
        let mut x = vec![0.0; 8];
        x[0] = 0.25;
        assert!((SyntheticFamily::Sine.target(&x) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic("friedman", 100, 0.5, 3).unwrap();
        let b = make_synthetic("friedman", 100, 0.5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 10);
        assert!(make_synthetic("sine", 0, 0.0, 1).is_err());
        assert!(make_synthetic("cosine", 10, 0.0, 1).is_err());
    }

    #[test]
    fn synthetic_noise_free_labels_follow_family() {
        let ds = make_synthetic("piecewise", 200, 0.0, 9).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.label(i).unwrap(), SyntheticFamily::Piecewise.target(ds.row(i)));
        }
        let (lo, hi) = ds.label_range().unwrap();
        assert!(lo >= 1.0 && hi <= 5.0);
        assert!(ds.features().iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn select_labeled_counts() {
        let ds = make_synthetic("sine", 5000, 0.1, 1).unwrap();
        let sel = ds.select_labeled(250, 7).unwrap();
        assert_eq!(sel.labeled_indices().len(), 250);
        assert_eq!(sel.unlabeled_indices().len(), 4750);
        let i = sel.unlabeled_indices()[0];
        assert_eq!(sel.label(i), None);
        assert_eq!(sel.hidden_label(i), ds.label(i));

        let full = ds.select_labeled(5000, 7).unwrap();
        assert!(full.unlabeled_indices().is_empty());
        assert!(ds.select_labeled(5001, 7).is_err());
    }

    #[test]
    fn select_labeled_is_idempotent_and_partitions() {
        let ds = make_synthetic("sine", 300, 0.1, 2).unwrap();
        for n in [50, 100, 250] {
            let a = ds.select_labeled(n, 11).unwrap();
            let b = ds.select_labeled(n, 11).unwrap();
            assert_eq!(a, b);
            let mut all: Vec<usize> = a.labeled_indices().iter().chain(a.unlabeled_indices()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..300).collect::<Vec<_>>());
        }
    }

    #[test]
    fn split_test_is_disjoint() {
        let ds = make_synthetic("sine", 100, 0.1, 2).unwrap();
        let (train, test) = ds.split_test(30, 5).unwrap();
        assert_eq!(train.len(), 70);
        assert_eq!(test.len(), 30);
        assert_eq!(test.labeled_indices().len(), 30);
    }

    #[test]
    fn standardizer_zero_mean_unit_var() {
        let ds = make_synthetic("friedman", 500, 0.0, 4).unwrap();
        let s = Standardizer::fit(ds.features()).unwrap();
        let z = ds.standardized(&s).unwrap();
        for col in z.features().columns() {
            assert!(col.mean().unwrap().abs() < 1e-12);
            assert!((col.std(0.0) - 1.0).abs() < 1e-12);
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_with_missing_label() {
        let f = write_tmp("a,b,score\n1,2,3.5\n4,5,\n6,7,1.0\n");
        let ds = load_delimited(f.path(), &LabelColumn::Name("score".into()), b',').unwrap();
        assert_eq!(ds.labeled_indices(), &[0, 2]);
        assert_eq!(ds.unlabeled_indices(), &[1]);
        assert_eq!(ds.row(1), &[4.0, 5.0]);
        assert_eq!(ds.label_range(), Some((1.0, 3.5)));
    }

    #[test]
    fn load_without_header_by_index() {
        let f = write_tmp("3.5;1;2\n;4;5\n");
        let ds = load_delimited(f.path(), &LabelColumn::Index(0), b';').unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.label(0), Some(3.5));
        assert_eq!(ds.label(1), None);
    }

    #[test]
    fn load_errors() {
        let f = write_tmp("");
        assert!(matches!(
            load_delimited(f.path(), &LabelColumn::Index(0), b','),
            Err(Error::InvalidArgument(_))
        ));
        let f = write_tmp("x,y\n1,2\n1,2,3\n");
        match load_delimited(f.path(), &LabelColumn::Name("y".into()), b',') {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("x,y\n1,2\nfoo,3\n");
        match load_delimited(f.path(), &LabelColumn::Name("y".into()), b',') {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn delimited_round_trip() {
        let ds = make_synthetic("friedman", 64, 1.0, 8).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_delimited(&ds, f.path(), b',').unwrap();
        let back = load_delimited(f.path(), &LabelColumn::Name("y".into()), b',').unwrap();
        assert_eq!(back.features(), ds.features());
        for i in 0..ds.len() {
            assert_eq!(back.label(i), ds.label(i));
        }
    }
}
