//! Decoupled alignment between a teacher and a student distribution,
//! compared with the plain KL divergence it decomposes.

use drill::dde::{BucketDistribution, BucketSpec};
use drill::losses;

fn main() -> drill::Result<()> {
    let spec = BucketSpec::new(0.0, 2.0, 3)?;
    let teacher = BucketDistribution::from_probs(vec![0.6, 0.3, 0.1])?;
    let student = BucketDistribution::from_probs(vec![0.5, 0.25, 0.25])?;
    let target = 0;

    for beta in [0.0, 1.0, 10.0] {
        let b = losses::dda_loss(&teacher, &student, target, beta, &spec)?;
        println!(
            "beta {beta:>4}: target_kl {:.6}  nontarget_kl {:.6}  R {:.4}  total {:.6}",
            b.target_kl, b.nontarget_kl, b.r_factor, b.total
        );
    }

    let full = losses::kl_divergence(teacher.probs(), student.probs())?;
    let b = losses::dda_loss(&teacher, &student, target, 1.0, &spec)?;
    let p_t = teacher.probs()[target];
    println!("full KL {full:.6}");
    println!("target_kl + (1 - p_t) * nontarget_kl = {:.6}", b.target_kl + (1.0 - p_t) * b.nontarget_kl);

    let grad = losses::dda_student_grad(&teacher, &student, target, 10.0, &spec)?;
    println!("student logit gradient at beta 10: {grad:.5?}");
    Ok(())
}
