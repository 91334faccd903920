//! Joint teacher/student training, the single-branch baselines and the
//! alignment ablations.
//!
//! Per iteration of the full method:
//!
//! 1. sample a labeled batch and an unlabeled batch `round(ratio * labeled)`;
//! 2. the teacher decodes weakly augmented copies of both; its loss is the
//!    MAE on the labeled rows only;
//! 3. the teacher's decoded scores on the unlabeled rows become pseudo-labels
//!    (constants, no gradient);
//! 4. the student decodes strongly augmented copies of both; its loss is the
//!    MAE against ground truth and pseudo-labels over the combined batch;
//! 5. the alignment loss between the two bucket distributions is averaged
//!    over the combined batch, with target buckets taken from the ground
//!    truth or the pseudo-label;
//! 6. each network takes one momentum-SGD step.
//!
//! Teacher distributions enter the alignment as constants unless
//! [`TrainConfig::teacher_alignment_grad`] is set.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{SsrDataset, Standardizer};
use crate::dde::{self, BucketSpec};
use crate::error::{Error, Result};
use crate::losses::{self, Alignment};
use crate::metrics::{self, MetricReport};
use crate::net::{sgd_step, GradientTape, Mlp, OptimizerState};
use crate::rng::{stream, SeedStream, Stream};

/// Training recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Teacher/student with decoupled distribution alignment.
    #[serde(rename = "DRILL")]
    Drill,
    /// Direct regression: one network, scalar output, labeled MAE only.
    #[serde(rename = "DR")]
    Dr,
    /// One network with the bucket head, labeled MAE only.
    #[serde(rename = "SDE")]
    Sde,
    /// Teacher/student aligned by KL over the full distributions.
    #[serde(rename = "DRILL_KL")]
    DrillKl,
    /// Teacher/student aligned by the absolute difference of decoded scores.
    #[serde(rename = "DRILL_LOGITS")]
    DrillLogits,
    /// Student plus an exponential-moving-average teacher with an MAE
    /// consistency term on unlabeled rows.
    #[serde(rename = "MEAN_TEACHER_BASELINE")]
    MeanTeacherBaseline,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Drill,
        Variant::Dr,
        Variant::Sde,
        Variant::DrillKl,
        Variant::DrillLogits,
        Variant::MeanTeacherBaseline,
    ];

    /// Variants compared in the ablation suite.
    pub const ABLATION: [Variant; 4] = [Variant::Drill, Variant::Sde, Variant::DrillKl, Variant::DrillLogits];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Drill => "DRILL",
            Variant::Dr => "DR",
            Variant::Sde => "SDE",
            Variant::DrillKl => "DRILL_KL",
            Variant::DrillLogits => "DRILL_LOGITS",
            Variant::MeanTeacherBaseline => "MEAN_TEACHER_BASELINE",
        }
    }

    /// Alignment term of the joint teacher/student variants.
    pub fn alignment(self, beta: f64) -> Option<Alignment> {
        match self {
            Variant::Drill => Some(Alignment::Decoupled { beta }),
            Variant::DrillKl => Some(Alignment::FullKl),
            Variant::DrillLogits => Some(Alignment::Score),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        match norm.as_str() {
            "MT" | "MEAN_TEACHER" => return Ok(Variant::MeanTeacherBaseline),
            _ => {}
        }
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of buckets `L`.
    pub bucket_count: usize,
    /// Weight of the non-target alignment term.
    pub beta: f64,
    pub labeled_batch: usize,
    /// Unlabeled batch size as a multiple of `labeled_batch`.
    pub unlabeled_ratio: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Hidden layer widths of the backbone.
    pub hidden: Vec<usize>,
    pub augment: AugmentConfig,
    pub variant: Variant,
    pub seed: u64,
    /// Bucket range; when absent, the labeled range widened by
    /// `label_margin` of its width on each side.
    pub label_range: Option<[f64; 2]>,
    pub label_margin: f64,
    /// Let the alignment loss back-propagate into the teacher.
    pub teacher_alignment_grad: bool,
    /// Decay of the mean-teacher baseline's moving average.
    pub ema_decay: f64,
    /// Global L2 bound on each model's gradient before the optimizer step.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bucket_count: 200,
            beta: 10.0,
            labeled_batch: 8,
            unlabeled_ratio: 7.0,
            iterations: 3000,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            hidden: vec![64, 64],
            augment: AugmentConfig::default(),
            variant: Variant::Drill,
            seed: 0,
            label_range: None,
            label_margin: 0.05,
            teacher_alignment_grad: false,
            ema_decay: 0.999,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn unlabeled_batch(&self) -> usize {
        (self.unlabeled_ratio * self.labeled_batch as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.bucket_count < 2 {
            return Err(Error::config("bucket_count", "must be >= 2"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", format!("must be finite and >= 0, got {}", self.beta)));
        }
        if self.labeled_batch == 0 {
            return Err(Error::config("labeled_batch", "must be positive"));
        }
        if !(self.unlabeled_ratio >= 0.0 && self.unlabeled_ratio.is_finite()) {
            return Err(Error::config("unlabeled_ratio", "must be finite and >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be finite and >= 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if let Some([lo, hi]) = self.label_range {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::config("label_range", format!("need finite lo < hi, got [{lo}, {hi}]")));
            }
        }
        if !(self.label_margin >= 0.0 && self.label_margin.is_finite()) {
            return Err(Error::config("label_margin", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("ema_decay", "must be in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("grad_clip", format!("must be finite and > 0, got {c}")));
            }
        }
        self.augment.validate()
    }

    /// Bucket grid for training on `data`.
    pub fn bucket_spec(&self, data: &SsrDataset) -> Result<BucketSpec> {
        let (lo, hi) = match self.label_range {
            Some([lo, hi]) => (lo, hi),
            None => {
                let (lo, hi) = data
                    .labeled_range()
                    .ok_or_else(|| Error::invalid("dataset has no labeled samples"))?;
                let margin = if hi > lo { self.label_margin * (hi - lo) } else { 0.5 };
                (lo - margin, hi + margin)
            }
        };
        BucketSpec::new(lo, hi, self.bucket_count)
    }
}

/// How network outputs become a score.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Single raw output.
    Scalar,
    /// Softmax over buckets decoded by expectation.
    Distribution(BucketSpec),
}

impl Head {
    pub fn spec(&self) -> Option<&BucketSpec> {
        match self {
            Head::Scalar => None,
            Head::Distribution(s) => Some(s),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.spec().map_or(1, BucketSpec::count)
    }

    /// Scores for every row of `inputs` under `model`.
    pub fn predict_rows(&self, model: &Mlp, inputs: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            Head::Scalar => {
                if model.output_dim() != 1 {
                    return Err(Error::invalid("scalar head needs a single model output"));
                }
                Ok(model.logits(inputs.view())?.column(0).to_vec())
            }
            Head::Distribution(spec) => predict_rows(model, spec, inputs),
        }
    }
}

/// Losses of one iteration; alignment terms are batch means.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    /// Teacher MAE on the labeled rows (0 for single-branch variants).
    pub teacher_loss: f64,
    /// Student MAE on labeled rows plus pseudo-labeled rows.
    pub student_loss: f64,
    /// Alignment (or consistency) term.
    pub alignment_loss: f64,
    pub target_kl: f64,
    pub nontarget_kl: f64,
    pub r_factor: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub variant: Variant,
    /// Absent for single-branch variants.
    pub teacher: Option<Mlp>,
    /// The model used for inference.
    pub student: Mlp,
    pub head: Head,
    pub history: Vec<LossRecord>,
}

impl TrainedPair {
    pub fn spec(&self) -> Option<&BucketSpec> {
        self.head.spec()
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        let row = Array2::from_shape_vec((1, input.len()), input.to_vec()).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.head.predict_rows(&self.student, &row)?[0])
    }

    pub fn predict_rows(&self, inputs: &Array2<f64>) -> Result<Vec<f64>> {
        self.head.predict_rows(&self.student, inputs)
    }

    /// Metrics of the student on the labeled rows of `test`.
    pub fn evaluate(&self, test: &SsrDataset) -> Result<MetricReport> {
        let rows = test.labeled_indices();
        if rows.is_empty() {
            return Err(Error::invalid("evaluation set has no labeled rows"));
        }
        let preds = self.predict_rows(&test.select_rows(rows))?;
        metrics::report(&preds, &test.labeled_targets())
    }

    pub fn checkpoint(&self, scaler: Option<Standardizer>) -> Checkpoint {
        Checkpoint {
            model: self.student.clone(),
            head: self.head.clone(),
            scaler,
        }
    }
}

/// Student-only inference on one input, without augmentation.
pub fn predict(student: &Mlp, spec: &BucketSpec, input: &[f64]) -> Result<f64> {
    check_head(student, spec)?;
    dde::expectation(&student.forward(input)?, spec)
}

pub fn predict_rows(student: &Mlp, spec: &BucketSpec, inputs: &Array2<f64>) -> Result<Vec<f64>> {
    check_head(student, spec)?;
    let mut logits = student.logits(inputs.view())?;
    Ok(logits
        .rows_mut()
        .into_iter()
        .map(|mut row| {
            let p = row.as_slice_mut().expect("standard layout");
            dde::softmax_in_place(p);
            dde::decode(p, spec)
        })
        .collect())
}

/// Teacher's decoded score on a weakly augmented copy of `input`.
pub fn pseudo_label<R: Rng + ?Sized>(
    teacher: &Mlp,
    spec: &BucketSpec,
    input: &[f64],
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    check_head(teacher, spec)?;
    let x = augment::weak_augment(input, aug, rng);
    dde::expectation(&teacher.forward(&x)?, spec)
}

fn check_head(model: &Mlp, spec: &BucketSpec) -> Result<()> {
    if model.output_dim() != spec.count() {
        return Err(Error::invalid(format!(
            "model outputs {} values but the spec has {} buckets",
            model.output_dim(),
            spec.count()
        )));
    }
    Ok(())
}

/// Augmented inputs for one teacher/student step. The first
/// `labels.len()` rows of each matrix are the labeled rows; the rest are
/// unlabeled. Row `i` of both matrices is the same underlying sample.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub teacher_inputs: Array2<f64>,
    pub student_inputs: Array2<f64>,
    pub labels: Vec<f64>,
}

/// Everything one teacher/student step computes.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub teacher_grads: GradientTape,
    pub student_grads: GradientTape,
    pub record: LossRecord,
    pub teacher_probs: Array2<f64>,
    pub student_probs: Array2<f64>,
    pub teacher_scores: Vec<f64>,
    pub student_scores: Vec<f64>,
    /// Teacher scores on the unlabeled rows.
    pub pseudo_labels: Vec<f64>,
    /// Target bucket of every row (labeled first).
    pub target_buckets: Vec<usize>,
}

/// Losses and gradients of one teacher/student step.
pub fn drill_step(
    teacher: &Mlp,
    student: &Mlp,
    spec: &BucketSpec,
    batch: &StepBatch,
    alignment: Alignment,
    teacher_alignment_grad: bool,
) -> Result<StepOutput> {
    check_head(teacher, spec)?;
    check_head(student, spec)?;
    let n = batch.teacher_inputs.nrows();
    let nl = batch.labels.len();
    if batch.student_inputs.nrows() != n || nl == 0 || nl > n {
        return Err(Error::invalid("inconsistent step batch"));
    }
    let values = spec.values();
    let t_trace = teacher.forward_trace(batch.teacher_inputs.view())?;
    let s_trace = student.forward_trace(batch.student_inputs.view())?;
    let tp = t_trace.probs();
    let sp = s_trace.probs();
    let row = |m: &ArrayView2<f64>, i: usize| m.row(i).to_slice().expect("standard layout").to_vec();
    let teacher_rows: Vec<Vec<f64>> = (0..n).map(|i| row(&tp, i)).collect();
    let student_rows: Vec<Vec<f64>> = (0..n).map(|i| row(&sp, i)).collect();
    let teacher_scores: Vec<f64> = teacher_rows.iter().map(|p| dde::decode(p, spec)).collect();
    let student_scores: Vec<f64> = student_rows.iter().map(|p| dde::decode(p, spec)).collect();

    let pseudo_labels = teacher_scores[nl..].to_vec();
    let targets: Vec<f64> = batch.labels.iter().chain(&pseudo_labels).copied().collect();
    let target_buckets: Vec<usize> = targets.iter().map(|y| dde::nearest_bucket(*y, spec)).collect();

    let mut t_grad = Array2::<f64>::zeros((n, spec.count()));
    let mut s_grad = Array2::<f64>::zeros((n, spec.count()));
    let mut record = LossRecord::default();

    // Teacher: labeled rows only.
    for i in 0..nl {
        let err = teacher_scores[i] - batch.labels[i];
        record.teacher_loss += err.abs() / nl as f64;
        let g = t_grad.row_mut(i).into_slice().expect("standard layout");
        losses::accumulate_expectation_grad(&teacher_rows[i], values, losses::sign(err) / nl as f64, g);
    }

    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let err = student_scores[i] - targets[i];
        record.student_loss += err.abs() * inv_n;
        let g = s_grad.row_mut(i).into_slice().expect("standard layout");
        losses::accumulate_expectation_grad(&student_rows[i], values, losses::sign(err) * inv_n, g);

        let eval = losses::alignment_with_grad(
            alignment,
            &teacher_rows[i],
            &student_rows[i],
            target_buckets[i],
            spec,
            teacher_alignment_grad,
        );
        record.alignment_loss += eval.value * inv_n;
        if let Some(b) = eval.breakdown {
            record.target_kl += b.target_kl * inv_n;
            record.nontarget_kl += b.nontarget_kl * inv_n;
            record.r_factor += b.r_factor * inv_n;
        }
        for (o, v) in g.iter_mut().zip(&eval.student_grad) {
            *o += v * inv_n;
        }
        if let Some(tg) = eval.teacher_grad {
            let g = t_grad.row_mut(i).into_slice().expect("standard layout");
            for (o, v) in g.iter_mut().zip(&tg) {
                *o += v * inv_n;
            }
        }
    }
    record.total = record.teacher_loss + record.student_loss + record.alignment_loss;

    let teacher_grads = teacher.backward(&t_trace, t_grad.view())?;
    let student_grads = student.backward(&s_trace, s_grad.view())?;
    Ok(StepOutput {
        teacher_grads,
        student_grads,
        record,
        teacher_probs: tp.to_owned(),
        student_probs: sp.to_owned(),
        teacher_scores,
        student_scores,
        pseudo_labels,
        target_buckets,
    })
}

/// What an observer sees after every iteration, before the parameter update.
#[derive(Debug)]
pub struct StepProbe<'a> {
    pub iteration: usize,
    pub spec: Option<&'a BucketSpec>,
    pub teacher_probs: Option<&'a Array2<f64>>,
    pub student_probs: Option<&'a Array2<f64>>,
    pub teacher_scores: &'a [f64],
    pub student_scores: &'a [f64],
    pub pseudo_labels: &'a [f64],
    pub target_buckets: &'a [usize],
    pub record: &'a LossRecord,
}

pub fn train_drill(data: &SsrDataset, cfg: &TrainConfig) -> Result<TrainedPair> {
    train_observed(data, cfg, |_| {})
}

/// [`train_drill`] with a callback invoked on every iteration.
pub fn train_observed<F>(data: &SsrDataset, cfg: &TrainConfig, mut observe: F) -> Result<TrainedPair>
where
    F: FnMut(&StepProbe<'_>),
{
    cfg.validate()?;
    if data.labeled_indices().is_empty() {
        return Err(Error::invalid("training needs at least one labeled sample"));
    }
    let spec = cfg.bucket_spec(data)?;
    let mut run = Run::new(data, cfg, spec)?;
    match cfg.variant {
        Variant::Drill | Variant::DrillKl | Variant::DrillLogits => run.joint(&mut observe),
        Variant::Sde | Variant::Dr => run.single(&mut observe),
        Variant::MeanTeacherBaseline => run.mean_teacher(&mut observe),
    }
}

struct Run<'a> {
    data: &'a SsrDataset,
    cfg: &'a TrainConfig,
    spec: BucketSpec,
    labels: Vec<f64>,
    init_rng: SeedStream,
    batch_rng: SeedStream,
    aug_rng: SeedStream,
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { iteration, detail },
        other => other,
    }
}

fn check_finite(iteration: usize, record: &LossRecord) -> Result<()> {
    if record.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            detail: format!("non-finite loss {record:?}"),
        })
    }
}

impl<'a> Run<'a> {
    fn new(data: &'a SsrDataset, cfg: &'a TrainConfig, spec: BucketSpec) -> Result<Self> {
        Ok(Self {
            data,
            cfg,
            spec,
            labels: data.labeled_targets(),
            init_rng: stream(cfg.seed, Stream::Init),
            batch_rng: stream(cfg.seed, Stream::Batch),
            aug_rng: stream(cfg.seed, Stream::Augment),
        })
    }

    fn dims(&self, out: usize) -> Vec<usize> {
        std::iter::once(self.data.dim())
            .chain(self.cfg.hidden.iter().copied())
            .chain(std::iter::once(out))
            .collect()
    }

    fn optimizer(&self, model: &Mlp) -> Result<OptimizerState> {
        OptimizerState::new(model, self.cfg.learning_rate, self.cfg.momentum, self.cfg.weight_decay)
    }

    /// Positions into `labeled_indices()` for the labeled batch and dataset
    /// rows for the unlabeled batch, both drawn with replacement.
    fn sample(&mut self, with_unlabeled: bool) -> (Vec<usize>, Vec<usize>) {
        let nl = self.data.labeled_indices().len();
        let lab: Vec<usize> = (0..self.cfg.labeled_batch)
            .map(|_| self.batch_rng.random_range(0..nl))
            .collect();
        let pool = self.data.unlabeled_indices();
        let unl = if with_unlabeled && !pool.is_empty() {
            (0..self.cfg.unlabeled_batch())
                .map(|_| pool[self.batch_rng.random_range(0..pool.len())])
                .collect()
        } else {
            Vec::new()
        };
        (lab, unl)
    }

    fn rows(&self, lab: &[usize], unl: &[usize]) -> (Array2<f64>, Vec<f64>) {
        let labeled = self.data.labeled_indices();
        let idx: Vec<usize> = lab.iter().map(|&k| labeled[k]).chain(unl.iter().copied()).collect();
        let targets = lab.iter().map(|&k| self.labels[k]).collect();
        (self.data.select_rows(&idx), targets)
    }

    fn update(&self, model: &mut Mlp, mut tape: GradientTape, opt: &mut OptimizerState, it: usize) -> Result<()> {
        if let Some(c) = self.cfg.grad_clip {
            tape.clip_norm(c);
        }
        sgd_step(model, &tape, opt).map_err(|e| diverged(it, e))
    }

    fn joint<F: FnMut(&StepProbe<'_>)>(&mut self, observe: &mut F) -> Result<TrainedPair> {
        let alignment = self.cfg.variant.alignment(self.cfg.beta).expect("joint variant");
        let dims = self.dims(self.spec.count());
        let mut teacher = Mlp::new(&dims, &mut self.init_rng)?;
        let mut student = Mlp::new(&dims, &mut self.init_rng)?;
        let mut t_opt = self.optimizer(&teacher)?;
        let mut s_opt = self.optimizer(&student)?;
        let mut history = Vec::with_capacity(self.cfg.iterations);

        for it in 0..self.cfg.iterations {
            let (lab, unl) = self.sample(true);
            let (raw, labels) = self.rows(&lab, &unl);
            let batch = StepBatch {
                teacher_inputs: augment::weak_batch(&raw, &self.cfg.augment, &mut self.aug_rng),
                student_inputs: augment::strong_batch(&raw, &self.cfg.augment, &mut self.aug_rng),
                labels,
            };
            let mut out = drill_step(
                &teacher,
                &student,
                &self.spec,
                &batch,
                alignment,
                self.cfg.teacher_alignment_grad,
            )?;
            out.record.iteration = it;
            check_finite(it, &out.record)?;
            observe(&StepProbe {
                iteration: it,
                spec: Some(&self.spec),
                teacher_probs: Some(&out.teacher_probs),
                student_probs: Some(&out.student_probs),
                teacher_scores: &out.teacher_scores,
                student_scores: &out.student_scores,
                pseudo_labels: &out.pseudo_labels,
                target_buckets: &out.target_buckets,
                record: &out.record,
            });
            self.update(&mut teacher, out.teacher_grads, &mut t_opt, it)?;
            self.update(&mut student, out.student_grads, &mut s_opt, it)?;
            history.push(out.record);
        }
        Ok(TrainedPair {
            variant: self.cfg.variant,
            teacher: Some(teacher),
            student,
            head: Head::Distribution(self.spec.clone()),
            history,
        })
    }

    fn single<F: FnMut(&StepProbe<'_>)>(&mut self, observe: &mut F) -> Result<TrainedPair> {
        let head = match self.cfg.variant {
            Variant::Dr => Head::Scalar,
            _ => Head::Distribution(self.spec.clone()),
        };
        let dims = self.dims(head.output_dim());
        let mut model = Mlp::new(&dims, &mut self.init_rng)?;
        if matches!(head, Head::Scalar) {
            // Start the scalar head at the labeled mean, as the bucket head
            // starts near the middle of its range.
            let mean = self.labels.iter().sum::<f64>() / self.labels.len() as f64;
            let last = model.layers_mut().len() - 1;
            model.layers_mut()[last].bias[0] = mean;
        }
        let mut opt = self.optimizer(&model)?;
        let mut history = Vec::with_capacity(self.cfg.iterations);

        for it in 0..self.cfg.iterations {
            let (lab, _) = self.sample(false);
            let (raw, labels) = self.rows(&lab, &[]);
            let inputs = augment::weak_batch(&raw, &self.cfg.augment, &mut self.aug_rng);
            let nl = labels.len() as f64;
            let trace = model.forward_trace(inputs.view())?;
            let mut grad = Array2::<f64>::zeros(trace.logits().dim());
            let mut record = LossRecord {
                iteration: it,
                ..LossRecord::default()
            };
            let mut scores = Vec::with_capacity(labels.len());
            for (i, y) in labels.iter().enumerate() {
                let g = grad.row_mut(i).into_slice().expect("standard layout");
                let score = match &head {
                    Head::Scalar => {
                        let s = trace.logits()[[i, 0]];
                        g[0] = losses::sign(s - y) / nl;
                        s
                    }
                    Head::Distribution(spec) => {
                        let p = trace.prob_row(i);
                        let p = p.as_slice().expect("standard layout");
                        let s = dde::decode(p, spec);
                        losses::accumulate_expectation_grad(p, spec.values(), losses::sign(s - y) / nl, g);
                        s
                    }
                };
                record.student_loss += (score - y).abs() / nl;
                scores.push(score);
            }
            record.total = record.student_loss;
            check_finite(it, &record)?;
            let probs = trace.probs().to_owned();
            observe(&StepProbe {
                iteration: it,
                spec: head.spec(),
                teacher_probs: None,
                student_probs: head.spec().map(|_| &probs),
                teacher_scores: &[],
                student_scores: &scores,
                pseudo_labels: &[],
                target_buckets: &[],
                record: &record,
            });
            let tape = model.backward(&trace, grad.view())?;
            self.update(&mut model, tape, &mut opt, it)?;
            history.push(record);
        }
        Ok(TrainedPair {
            variant: self.cfg.variant,
            teacher: None,
            student: model,
            head,
            history,
        })
    }

    fn mean_teacher<F: FnMut(&StepProbe<'_>)>(&mut self, observe: &mut F) -> Result<TrainedPair> {
        let dims = self.dims(self.spec.count());
        let mut student = Mlp::new(&dims, &mut self.init_rng)?;
        let mut teacher = student.clone();
        let mut opt = self.optimizer(&student)?;
        let mut history = Vec::with_capacity(self.cfg.iterations);
        let values = self.spec.values().to_vec();

        for it in 0..self.cfg.iterations {
            let (lab, unl) = self.sample(true);
            let (raw, labels) = self.rows(&lab, &unl);
            let t_in = augment::weak_batch(&raw, &self.cfg.augment, &mut self.aug_rng);
            let s_in = augment::strong_batch(&raw, &self.cfg.augment, &mut self.aug_rng);
            let nl = labels.len();
            let nu = raw.nrows() - nl;
            let t_probs = {
                let mut z = teacher.logits(t_in.view())?;
                for mut r in z.rows_mut() {
                    dde::softmax_in_place(r.as_slice_mut().expect("standard layout"));
                }
                z
            };
            let trace = student.forward_trace(s_in.view())?;
            let mut grad = Array2::<f64>::zeros(trace.logits().dim());
            let mut record = LossRecord {
                iteration: it,
                ..LossRecord::default()
            };
            let t_scores: Vec<f64> = t_probs
                .rows()
                .into_iter()
                .map(|r| dde::decode(r.as_slice().expect("standard layout"), &self.spec))
                .collect();
            let mut s_scores = Vec::with_capacity(raw.nrows());
            for i in 0..raw.nrows() {
                let p = trace.prob_row(i);
                let p = p.as_slice().expect("standard layout");
                let s = dde::decode(p, &self.spec);
                s_scores.push(s);
                let g = grad.row_mut(i).into_slice().expect("standard layout");
                if i < nl {
                    let err = s - labels[i];
                    record.student_loss += err.abs() / nl as f64;
                    losses::accumulate_expectation_grad(p, &values, losses::sign(err) / nl as f64, g);
                } else {
                    let err = s - t_scores[i];
                    record.alignment_loss += err.abs() / nu as f64;
                    losses::accumulate_expectation_grad(p, &values, losses::sign(err) / nu as f64, g);
                }
            }
            record.total = record.student_loss + record.alignment_loss;
            check_finite(it, &record)?;
            let s_probs = trace.probs().to_owned();
            observe(&StepProbe {
                iteration: it,
                spec: Some(&self.spec),
                teacher_probs: Some(&t_probs),
                student_probs: Some(&s_probs),
                teacher_scores: &t_scores,
                student_scores: &s_scores,
                pseudo_labels: &t_scores[nl..],
                target_buckets: &[],
                record: &record,
            });
            let tape = student.backward(&trace, grad.view())?;
            self.update(&mut student, tape, &mut opt, it)?;
            teacher.ema_update(&student, self.cfg.ema_decay)?;
            history.push(record);
        }
        Ok(TrainedPair {
            variant: self.cfg.variant,
            teacher: Some(teacher),
            student,
            head: Head::Distribution(self.spec.clone()),
            history,
        })
    }
}
