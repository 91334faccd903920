//! Regression and alignment losses, with analytic gradients with respect to
//! logits.
//!
//! All KL terms use the teacher as the reference distribution,
//! `KL(teacher, student) = sum_i t_i ln(t_i / s_i)`, with the student side
//! floored at [`KL_EPSILON`] inside the log.

use serde::{Deserialize, Serialize};

use crate::dde::{self, BucketDistribution, BucketSpec};
use crate::error::{Error, Result};

pub const KL_EPSILON: f64 = 1e-12;

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// The pieces of one decoupled alignment evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdaBreakdown {
    /// KL between the binary target-vs-rest distributions.
    pub target_kl: f64,
    /// KL between the non-target distributions renormalized to sum to one.
    pub nontarget_kl: f64,
    /// Attenuation `max(1 - sigma_teacher, 0)`.
    pub r_factor: f64,
    pub beta: f64,
    pub total: f64,
}

pub fn mae_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions, {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("MAE of an empty batch"));
    }
    if predictions.iter().chain(targets).any(|x| !x.is_finite()) {
        return Err(Error::invalid("MAE inputs must be finite"));
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (y - p).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

fn check_normalized(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::invalid(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "KL length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_normalized("p", p)?;
    check_normalized("q", q)?;
    Ok(kl_raw(p, q))
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(KL_EPSILON).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Sum of every entry except `target`; more accurate than `1 - p[target]`
/// when the target carries nearly all the mass.
fn nontarget_mass(p: &[f64], target: usize) -> f64 {
    p.iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, x)| x)
        .sum()
}

fn binary_kl(a: f64, a_rest: f64, s: f64, s_rest: f64) -> f64 {
    kl_raw(&[a, a_rest], &[s, s_rest])
}

/// `KL(q_teacher, q_student)` over the non-target buckets, or 0 when either
/// side has no non-target mass.
fn nontarget_kl(tp: &[f64], sp: &[f64], target: usize, t_rest: f64, s_rest: f64) -> f64 {
    if t_rest <= 0.0 || s_rest <= 0.0 {
        return 0.0;
    }
    tp.iter()
        .zip(sp)
        .enumerate()
        .filter(|(i, (t, _))| *i != target && **t > 0.0)
        .map(|(_, (t, s))| {
            let qt = t / t_rest;
            let qs = s / s_rest;
            qt * (qt.ln() - qs.max(KL_EPSILON).ln())
        })
        .sum::<f64>()
        .max(0.0)
}

pub(crate) fn dda_raw(tp: &[f64], sp: &[f64], target: usize, beta: f64, spec: &BucketSpec) -> DdaBreakdown {
    let t_rest = nontarget_mass(tp, target);
    let s_rest = nontarget_mass(sp, target);
    let target_kl = binary_kl(tp[target], t_rest, sp[target], s_rest);
    let nontarget_kl = nontarget_kl(tp, sp, target, t_rest, s_rest);
    let r_factor = (1.0 - dde::spread(tp, spec)).max(0.0);
    DdaBreakdown {
        target_kl,
        nontarget_kl,
        r_factor,
        beta,
        total: target_kl + beta * nontarget_kl * r_factor,
    }
}

fn check_pair(teacher: &BucketDistribution, student: &BucketDistribution, spec: &BucketSpec) -> Result<()> {
    if teacher.len() != spec.count() || student.len() != spec.count() {
        return Err(Error::invalid(format!(
            "teacher ({}) and student ({}) must both have {} buckets",
            teacher.len(),
            student.len(),
            spec.count()
        )));
    }
    check_normalized("teacher", teacher.probs())?;
    check_normalized("student", student.probs())
}

/// Decoupled distribution alignment between a teacher and a student.
///
/// The teacher is a constant here; [`dda_student_grad`] gives the gradient
/// with respect to the student's logits.
pub fn dda_loss(
    teacher: &BucketDistribution,
    student: &BucketDistribution,
    target: usize,
    beta: f64,
    spec: &BucketSpec,
) -> Result<DdaBreakdown> {
    check_pair(teacher, student, spec)?;
    if target >= spec.count() {
        return Err(Error::invalid(format!(
            "target bucket {target} out of range for {} buckets",
            spec.count()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(dda_raw(teacher.probs(), student.probs(), target, beta, spec))
}

/// Absolute difference of decoded scores, used by the score-alignment
/// ablation.
pub fn logit_alignment_loss(teacher_score: f64, student_score: f64) -> Result<f64> {
    if !teacher_score.is_finite() || !student_score.is_finite() {
        return Err(Error::invalid("score alignment inputs must be finite"));
    }
    Ok((teacher_score - student_score).abs())
}

/// Which term pulls the student toward the teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alignment {
    /// Target/non-target split with weight `beta` and the spread gate.
    Decoupled { beta: f64 },
    /// KL over the full bucket distributions.
    FullKl,
    /// Absolute difference of decoded scores.
    Score,
}

/// Value and logit gradients of one alignment term.
#[derive(Debug, Clone)]
pub struct AlignmentEval {
    pub value: f64,
    /// Present for [`Alignment::Decoupled`].
    pub breakdown: Option<DdaBreakdown>,
    pub student_grad: Vec<f64>,
    pub teacher_grad: Option<Vec<f64>>,
}

/// Evaluates an alignment term on probability vectors and returns its
/// gradients with respect to the student's logits and, when requested, the
/// teacher's logits.
pub fn alignment_with_grad(
    kind: Alignment,
    tp: &[f64],
    sp: &[f64],
    target: usize,
    spec: &BucketSpec,
    teacher_grad: bool,
) -> AlignmentEval {
    match kind {
        Alignment::Decoupled { beta } => {
            let b = dda_raw(tp, sp, target, beta, spec);
            let student_grad = dda_student_grad_raw(tp, sp, target, beta * b.r_factor);
            let teacher_grad = teacher_grad.then(|| dda_teacher_grad_raw(tp, sp, target, beta, &b, spec));
            AlignmentEval {
                value: b.total,
                breakdown: Some(b),
                student_grad,
                teacher_grad,
            }
        }
        Alignment::FullKl => {
            let value = kl_raw(tp, sp);
            let student_grad = sp.iter().zip(tp).map(|(s, t)| s - t).collect();
            let teacher_grad = teacher_grad.then(|| kl_teacher_grad(tp, sp, value));
            AlignmentEval {
                value,
                breakdown: None,
                student_grad,
                teacher_grad,
            }
        }
        Alignment::Score => {
            let yt = raw_expectation(tp, spec.values());
            let ys = raw_expectation(sp, spec.values());
            let sign = sign(ys - yt);
            let mut student_grad = vec![0.0; sp.len()];
            accumulate_expectation_grad(sp, spec.values(), sign, &mut student_grad);
            let teacher_grad = teacher_grad.then(|| {
                let mut g = vec![0.0; tp.len()];
                accumulate_expectation_grad(tp, spec.values(), -sign, &mut g);
                g
            });
            AlignmentEval {
                value: (yt - ys).abs(),
                breakdown: None,
                student_grad,
                teacher_grad,
            }
        }
    }
}

/// Gradient of [`dda_loss`] with respect to the student's logits.
pub fn dda_student_grad(
    teacher: &BucketDistribution,
    student: &BucketDistribution,
    target: usize,
    beta: f64,
    spec: &BucketSpec,
) -> Result<Vec<f64>> {
    let b = dda_loss(teacher, student, target, beta, spec)?;
    Ok(dda_student_grad_raw(
        teacher.probs(),
        student.probs(),
        target,
        beta * b.r_factor,
    ))
}

/// `weight` is `beta * R`.
fn dda_student_grad_raw(tp: &[f64], sp: &[f64], target: usize, weight: f64) -> Vec<f64> {
    let t_rest = nontarget_mass(tp, target);
    let s_rest = nontarget_mass(sp, target);
    let a = tp[target];
    let s = sp[target];
    let mut grad = vec![0.0; sp.len()];
    // Binary term: the student's target probability is a sigmoid of
    // z_t - logsumexp(z_not_t), so d/dz_t = s - a and d/dz_j = (a - s) q_j.
    grad[target] = s - a;
    if s_rest > 0.0 {
        let has_nontarget = t_rest > 0.0;
        for (j, g) in grad.iter_mut().enumerate() {
            if j == target {
                continue;
            }
            let qs = sp[j] / s_rest;
            *g = (a - s) * qs;
            if has_nontarget {
                *g += weight * (qs - tp[j] / t_rest);
            }
        }
    }
    grad
}

fn dda_teacher_grad_raw(
    tp: &[f64],
    sp: &[f64],
    target: usize,
    beta: f64,
    b: &DdaBreakdown,
    spec: &BucketSpec,
) -> Vec<f64> {
    let n = tp.len();
    let t_rest = nontarget_mass(tp, target);
    let s_rest = nontarget_mass(sp, target);
    let a = tp[target];
    let s = sp[target];
    let mut grad = vec![0.0; n];

    // Binary term through the teacher's target sigmoid.
    if a > 0.0 && t_rest > 0.0 {
        let dkl_da = (a.ln() - s.max(KL_EPSILON).ln()) - (t_rest.ln() - s_rest.max(KL_EPSILON).ln());
        grad[target] += dkl_da * a * t_rest;
        for j in (0..n).filter(|j| *j != target) {
            grad[j] -= dkl_da * a * tp[j];
        }
    }

    if t_rest > 0.0 && s_rest > 0.0 {
        // Non-target KL through the teacher's renormalized softmax.
        let w = beta * b.r_factor;
        for j in (0..n).filter(|j| *j != target) {
            let qt = tp[j] / t_rest;
            if qt > 0.0 {
                let h = qt.ln() - (sp[j] / s_rest).max(KL_EPSILON).ln();
                grad[j] += w * qt * (h - b.nontarget_kl);
            }
        }
        // Spread gate: dR/dz_j = -p_j ((u_j - mean)^2 - var) / (2 sigma).
        let sigma = dde::spread(tp, spec);
        if sigma > 0.0 && sigma < 0.5 && b.r_factor > 0.0 {
            let mean: f64 = (0..n).map(|i| tp[i] * spec.position(i)).sum();
            let var = sigma * sigma;
            let w = beta * b.nontarget_kl;
            for (j, g) in grad.iter_mut().enumerate() {
                let d = spec.position(j) - mean;
                *g -= w * tp[j] * (d * d - var) / (2.0 * sigma);
            }
        }
    }
    grad
}

fn kl_teacher_grad(tp: &[f64], sp: &[f64], kl: f64) -> Vec<f64> {
    tp.iter()
        .zip(sp)
        .map(|(t, s)| {
            if *t > 0.0 {
                t * (t.ln() - s.max(KL_EPSILON).ln() - kl)
            } else {
                0.0
            }
        })
        .collect()
}

/// `|E[b] - target|` for one probability vector, with its gradient with
/// respect to the logits.
pub fn expectation_mae_with_grad(probs: &[f64], spec: &BucketSpec, target: f64) -> (f64, Vec<f64>) {
    let err = raw_expectation(probs, spec.values()) - target;
    let mut grad = vec![0.0; probs.len()];
    accumulate_expectation_grad(probs, spec.values(), sign(err), &mut grad);
    (err.abs(), grad)
}

pub(crate) fn raw_expectation(probs: &[f64], values: &[f64]) -> f64 {
    probs.iter().zip(values).map(|(p, b)| p * b).sum()
}

/// Adds `upstream * d(sum_i p_i b_i)/dz` to `out`, using
/// `d y / d z_j = p_j (b_j - y)`.
pub(crate) fn accumulate_expectation_grad(probs: &[f64], values: &[f64], upstream: f64, out: &mut [f64]) {
    if upstream == 0.0 {
        return;
    }
    let y = raw_expectation(probs, values);
    for ((o, p), b) in out.iter_mut().zip(probs).zip(values) {
        *o += upstream * p * (b - y);
    }
}

/// Subgradient of `|x|`, 0 at the kink.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::make_buckets;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> BucketDistribution {
        BucketDistribution::from_probs(p.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae_loss(&[0.0], &[5.0]).unwrap(), 5.0);
        assert!(mae_loss(&[], &[]).is_err());
        assert!(mae_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = kl_divergence(&[0.7, 0.3], &[0.5, 0.5]).unwrap();
        assert!((v - 0.082_282_878_505_051_78).abs() < 1e-12);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0]).is_err());
        assert!(kl_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn dda_identical_is_zero() {
        let spec = make_buckets(0.0, 4.0, 5).unwrap();
        let d = dist(&[0.1, 0.2, 0.4, 0.2, 0.1]);
        for t in 0..5 {
            let b = dda_loss(&d, &d, t, 10.0, &spec).unwrap();
            assert_eq!(b.total, 0.0);
        }
    }

    #[test]
    fn dda_three_bucket_example() {
        // Terms computed independently by direct summation.
        let spec = make_buckets(0.0, 2.0, 3).unwrap();
        let b = dda_loss(&dist(&[0.6, 0.3, 0.1]), &dist(&[0.5, 0.25, 0.25]), 0, 1.0, &spec).unwrap();
        assert!((b.target_kl - 0.020_135_513_550_688_863).abs() < 1e-12);
        assert!((b.nontarget_kl - 0.130_812_035_941_136_97).abs() < 1e-12);
        assert!((b.r_factor - 0.664_589_803_375_031_5).abs() < 1e-12);
        assert!((b.total - 0.107_071_858_795_896_63).abs() < 1e-12);
    }

    #[test]
    fn dda_beta_zero_is_target_term() {
        let spec = make_buckets(0.0, 2.0, 3).unwrap();
        let b = dda_loss(&dist(&[0.6, 0.3, 0.1]), &dist(&[0.2, 0.5, 0.3]), 1, 0.0, &spec).unwrap();
        assert_eq!(b.total, b.target_kl);
    }

    #[test]
    fn dda_degenerate_target() {
        let spec = make_buckets(0.0, 2.0, 3).unwrap();
        let b = dda_loss(&dist(&[1.0, 0.0, 0.0]), &dist(&[0.5, 0.25, 0.25]), 0, 1.0, &spec).unwrap();
        assert_eq!(b.nontarget_kl, 0.0);
        assert!(b.target_kl.is_finite());
        assert!(dda_loss(&dist(&[1.0, 0.0, 0.0]), &dist(&[0.5, 0.25, 0.25]), 3, 1.0, &spec).is_err());
    }

    #[test]
    fn score_alignment_examples() {
        assert_eq!(logit_alignment_loss(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(logit_alignment_loss(2.0, 3.5).unwrap(), 1.5);
        assert_eq!(logit_alignment_loss(0.0, -1.0).unwrap(), 1.0);
        assert!(logit_alignment_loss(f64::NAN, 0.0).is_err());
    }

    fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    fn probs_of(z: &[f64]) -> Vec<f64> {
        crate::dde::softmax(z).unwrap()
    }

    /// Central differences of `f` with respect to each logit.
    fn numeric_grad(z: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..z.len())
            .map(|j| {
                let mut up = z.to_vec();
                let mut dn = z.to_vec();
                up[j] += h;
                dn[j] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn alignment_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let n = 2 + trial % 9;
            let spec = make_buckets(-1.0, 3.0, n).unwrap();
            let zt = random_logits(&mut rng, n);
            let zs = random_logits(&mut rng, n);
            let target = rng.random_range(0..n);
            let kinds = [Alignment::Decoupled { beta: 3.0 }, Alignment::FullKl, Alignment::Score];
            for kind in kinds {
                let tp = probs_of(&zt);
                let sp = probs_of(&zs);
                let eval = alignment_with_grad(kind, &tp, &sp, target, &spec, true);
                let value_at = |t: &[f64], s: &[f64]| {
                    alignment_with_grad(kind, &probs_of(t), &probs_of(s), target, &spec, false).value
                };
                let ns = numeric_grad(&zs, |s| value_at(&zt, s));
                assert_close(&eval.student_grad, &ns);
                let nt = numeric_grad(&zt, |t| value_at(t, &zs));
                assert_close(eval.teacher_grad.as_ref().unwrap(), &nt);
            }
        }
    }

    fn distribution_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-4.0f64..4.0, n),
                prop::collection::vec(-4.0f64..4.0, n),
                0..n,
            )
        })
    }

    proptest! {
        #[test]
        fn decomposition_identity((zt, zs, t) in distribution_pair()) {
            let n = zt.len();
            let spec = make_buckets(0.0, 1.0, n).unwrap();
            let tp = probs_of(&zt);
            let sp = probs_of(&zs);
            let full = kl_divergence(&tp, &sp).unwrap();
            let b = dda_raw(&tp, &sp, t, 1.0, &spec);
            let rest = 1.0 - tp[t];
            prop_assert!((full - (b.target_kl + rest * b.nontarget_kl)).abs() < 1e-9);
            prop_assert!(b.total >= 0.0);
        }

        #[test]
        fn dda_invariant_under_nontarget_permutation((zt, zs, t) in distribution_pair(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = zt.len();
            let spec = make_buckets(0.0, 1.0, n).unwrap();
            let tp = probs_of(&zt);
            let sp = probs_of(&zs);
            let mut others: Vec<usize> = (0..n).filter(|i| *i != t).collect();
            let original = others.clone();
            others.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut tp2 = tp.clone();
            let mut sp2 = sp.clone();
            for (from, to) in original.iter().zip(&others) {
                tp2[*to] = tp[*from];
                sp2[*to] = sp[*from];
            }
            let a = dda_raw(&tp, &sp, t, 2.0, &spec);
            let b = dda_raw(&tp2, &sp2, t, 2.0, &spec);
            prop_assert!((a.target_kl - b.target_kl).abs() < 1e-12);
            prop_assert!((a.nontarget_kl - b.nontarget_kl).abs() < 1e-12);
        }

        #[test]
        fn kl_nonnegative((zt, zs, _t) in distribution_pair()) {
            let tp = probs_of(&zt);
            let sp = probs_of(&zs);
            prop_assert!(kl_divergence(&tp, &sp).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&tp, &tp).unwrap().abs() < 1e-12);
        }
    }
}
