//! Diagonal-stripped Gram-matrix KL objective.
//!
//! For student rows `S` and teacher rows `T`, every batch row `r` yields two
//! distributions over the other `n − 1` documents: the softmax of
//! `(S Sᵀ)[r, j] / τ` and of `(T Tᵀ)[r, j] / τ`, `j ≠ r`. The diagonal is left
//! out of the softmax support entirely. The loss is `τ² / n · Σ_r KL`.

use serde::{Deserialize, Serialize};

use crate::corpus_io::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::kernels::{dot, Real};

/// Which distribution is the target of the KL divergence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p_teacher ‖ p_student)`.
    #[default]
    TeacherToStudent,
    /// `KL(p_student ‖ p_teacher)`.
    StudentToTeacher,
}

/// `E Eᵀ` for row-major `n × d` values.
pub fn gram_matrix<F: Real>(values: &[F], n: usize, d: usize) -> Vec<F> {
    let mut g = vec![F::zero(); n * n];
    for i in 0..n {
        let ri = &values[i * d..(i + 1) * d];
        for j in i..n {
            let v = dot(ri, &values[j * d..(j + 1) * d]);
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

pub fn gram(e: &EmbeddingMatrix) -> Vec<f32> {
    gram_matrix(e.values(), e.n(), e.d())
}

/// Log-softmax of `row / tau` over all entries except `skip`; the skipped
/// slot is set to `-inf`.
fn log_softmax_without<F: Real>(row: &[F], skip: usize, tau: F, out: &mut [F]) {
    let mut max = F::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if j != skip {
            max = max.max(v / tau);
        }
    }
    let mut sum = F::zero();
    for (j, &v) in row.iter().enumerate() {
        if j != skip {
            sum = sum + (v / tau - max).exp();
        }
    }
    let lse = max + sum.ln();
    for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
        *o = if j == skip { F::neg_infinity() } else { v / tau - lse };
    }
}

/// Loss and its gradient with respect to the student rows.
///
/// `student` is row-major `n × d`, `teacher` row-major `n × d_t`.
pub fn distill_loss<F: Real>(
    student: &[F],
    teacher: &[F],
    n: usize,
    d: usize,
    d_t: usize,
    tau: F,
    direction: KlDirection,
) -> Result<(F, Vec<F>)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("distillation needs at least 2 rows, got {n}")));
    }
    if student.len() != n * d || teacher.len() != n * d_t {
        return Err(Error::DimensionMismatch(format!(
            "student {} values for {n}×{d}, teacher {} values for {n}×{d_t}",
            student.len(),
            teacher.len()
        )));
    }
    if tau.is_nan() || tau <= F::zero() {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let gs = gram_matrix(student, n, d);
    let gt = gram_matrix(teacher, n, d_t);
    let n_f = F::from_usize(n).expect("usize converts");
    // dL/dG_s, diagonal zero.
    let mut dg = vec![F::zero(); n * n];
    let mut log_ps = vec![F::zero(); n];
    let mut log_pt = vec![F::zero(); n];
    let mut total = F::zero();
    for r in 0..n {
        log_softmax_without(&gs[r * n..(r + 1) * n], r, tau, &mut log_ps);
        log_softmax_without(&gt[r * n..(r + 1) * n], r, tau, &mut log_pt);
        let mut kl = F::zero();
        for j in (0..n).filter(|&j| j != r) {
            let (ls, lt) = (log_ps[j], log_pt[j]);
            kl = kl
                + match direction {
                    KlDirection::TeacherToStudent => lt.exp() * (lt - ls),
                    KlDirection::StudentToTeacher => ls.exp() * (ls - lt),
                };
        }
        total = total + kl;
        // d(τ² KL / n) / dG_s[r, j] = (τ / n) · dKL/dz_j with z = G_s / τ.
        let scale = tau / n_f;
        for j in (0..n).filter(|&j| j != r) {
            let (ps, pt) = (log_ps[j].exp(), log_pt[j].exp());
            let dz = match direction {
                KlDirection::TeacherToStudent => ps - pt,
                KlDirection::StudentToTeacher => ps * (log_ps[j] - log_pt[j] - kl),
            };
            dg[r * n + j] = scale * dz;
        }
    }
    let loss = tau * tau * total / n_f;
    // G = S Sᵀ  ⇒  dL/dS = (D + Dᵀ) S.
    let mut grad = vec![F::zero(); n * d];
    for r in 0..n {
        let out = &mut grad[r * d..(r + 1) * d];
        for j in 0..n {
            let c = dg[r * n + j] + dg[j * n + r];
            if c != F::zero() {
                for (o, &s) in out.iter_mut().zip(&student[j * d..(j + 1) * d]) {
                    *o = *o + c * s;
                }
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::kernels::l2_normalize_in_place;

    fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for row in v.chunks_exact_mut(d) {
            l2_normalize_in_place(row);
        }
        v
    }

    #[test]
    fn gram_of_orthonormal_rows_is_identity() {
        let e = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let g = gram(&e);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[i * 3 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gram_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_unit_rows(&mut rng, 5, 3);
        let g = gram_matrix(&e, 5, 3);
        for i in 0..5 {
            for j in 0..5 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += e[i * 3 + k] * e[j * 3 + k];
                }
                assert!((g[i * 5 + j] - want).abs() < 1e-6);
                assert_eq!(g[i * 5 + j], g[j * 5 + i]);
            }
        }
        let dup = [0.6, 0.8, 0.6, 0.8];
        assert!((gram_matrix(&dup, 2, 2)[1] - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn identical_geometry_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_unit_rows(&mut rng, 6, 4);
        for dir in [KlDirection::TeacherToStudent, KlDirection::StudentToTeacher] {
            let (loss, grad) = distill_loss(&s, &s, 6, 4, 4, 3.0, dir).unwrap();
            assert!(loss.abs() < 1e-6);
            assert!(grad.iter().all(|g| g.abs() < 1e-6));
        }
        // A rotated teacher in a wider space has the same Gram matrix.
        let t: Vec<f64> = s.chunks_exact(4).flat_map(|r| [r[1], r[0], 0.0, r[2], r[3]]).collect();
        let (loss, _) = distill_loss(&s, &t, 6, 4, 5, 3.0, KlDirection::TeacherToStudent).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    /// n = 3, τ = 1: each row's softmax has two entries, so the KL reduces to
    /// a two-point divergence that can be written out by hand.
    #[test]
    fn three_row_scalar_oracle() {
        let s = [1.0, 0.0, 0.6, 0.8, 0.0, 1.0];
        let t = [1.0, 0.0, 0.0, 1.0, -0.6, 0.8];
        let (loss, _) = distill_loss(&s, &t, 3, 2, 2, 1.0, KlDirection::TeacherToStudent).unwrap();
        // Off-diagonal similarities per row (j ascending, j ≠ r).
        let gs = [[0.6, 0.0], [0.6, 0.8], [0.0, 0.8]];
        let gt = [[0.0, -0.6], [0.0, 0.8], [-0.6, 0.8]];
        let mut want = 0.0;
        for r in 0..3 {
            let ps0 = 1.0 / (1.0 + f64::exp(gs[r][1] - gs[r][0]));
            let pt0 = 1.0 / (1.0 + f64::exp(gt[r][1] - gt[r][0]));
            let (ps1, pt1) = (1.0 - ps0, 1.0 - pt0);
            want += pt0 * (pt0 / ps0).ln() + pt1 * (pt1 / ps1).ln();
        }
        want /= 3.0;
        assert!((loss - want).abs() < 1e-5, "{loss} vs {want}");
        assert!(loss > 0.0);
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let s = random_unit_rows(&mut rng, 8, 4);
            let t = random_unit_rows(&mut rng, 8, 4);
            let dir = if trial % 2 == 0 { KlDirection::TeacherToStudent } else { KlDirection::StudentToTeacher };
            let tau = [1.0, 3.0][trial % 2];
            let (_, grad) = distill_loss(&s, &t, 8, 4, 4, tau, dir).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..s.len())
                .map(|i| {
                    let mut p = s.clone();
                    p[i] += h;
                    let up = distill_loss(&p, &t, 8, 4, 4, tau, dir).unwrap().0;
                    p[i] -= 2.0 * h;
                    let down = distill_loss(&p, &t, 8, 4, 4, tau, dir).unwrap().0;
                    (up - down) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&grad, &fd) < 1e-4, "trial {trial}: {}", rel_err(&grad, &fd));
        }
    }

    #[test]
    fn loss_is_nonnegative_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_unit_rows(&mut rng, 7, 3);
        let t = random_unit_rows(&mut rng, 7, 5);
        let (loss, _) = distill_loss(&s, &t, 7, 3, 5, 3.0, KlDirection::TeacherToStudent).unwrap();
        assert!(loss > 0.0);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let ps: Vec<f64> = perm.iter().flat_map(|&i| s[i * 3..i * 3 + 3].to_vec()).collect();
        let pt: Vec<f64> = perm.iter().flat_map(|&i| t[i * 5..i * 5 + 5].to_vec()).collect();
        let (loss_p, _) = distill_loss(&ps, &pt, 7, 3, 5, 3.0, KlDirection::TeacherToStudent).unwrap();
        assert!((loss - loss_p).abs() < 1e-12);
    }

    /// Softmax rows flatten as τ grows, so the KL term falls towards zero
    /// monotonically. The τ² factor exactly offsets that decay: the scaled loss
    /// tends to the mean over rows of ½·Var_j(G_s − G_t).
    #[test]
    fn larger_temperature_flattens() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d, d_t) = (10, 4, 6);
        let s = random_unit_rows(&mut rng, n, d);
        let t = random_unit_rows(&mut rng, n, d_t);
        let taus = [1.0, 3.0, 10.0, 100.0, 1000.0];
        let losses: Vec<f64> = taus
            .iter()
            .map(|&tau| distill_loss(&s, &t, n, d, d_t, tau, KlDirection::TeacherToStudent).unwrap().0)
            .collect();
        let kl: Vec<f64> = losses.iter().zip(&taus).map(|(l, t)| l / (t * t)).collect();
        assert!(kl.windows(2).all(|w| w[1] < w[0]), "{kl:?}");
        assert!(kl[3] < 1e-3 * kl[0]);

        let (gs, gt) = (gram_matrix(&s, n, d), gram_matrix(&t, n, d_t));
        let mut limit = 0.0;
        for r in 0..n {
            let diffs: Vec<f64> = (0..n).filter(|&j| j != r).map(|j| gs[r * n + j] - gt[r * n + j]).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            limit += 0.5 * diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        }
        limit /= n as f64;
        assert!((losses[4] - limit).abs() < 1e-3 * limit, "{} vs {limit}", losses[4]);
    }

    #[test]
    fn needs_two_rows() {
        let err = distill_loss(&[1.0f32], &[1.0], 1, 1, 1, 1.0, KlDirection::TeacherToStudent).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
