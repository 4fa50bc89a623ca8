//! Document-half matching: how often a half's partner is outside the top k of
//! its cosine neighbours.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub ks: Vec<usize>,
    pub errors: Vec<f64>,
    pub n_queries: usize,
    /// Halves left out: zero embeddings, their partners, and both halves of
    /// documents that could not be split.
    pub skipped: usize,
}

impl ErrorCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,error\n");
        for (k, e) in self.ks.iter().zip(&self.errors) {
            writeln!(out, "{k},{e}").expect("writing to a String");
        }
        out
    }

    pub fn error_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.errors[i])
    }
}

/// Cosine similarity computed in f64.
fn cosine(a: &[f32], b: &[f32], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    dot / (na * nb)
}

pub fn validate_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("ks must be strictly increasing positive integers, got {ks:?}")));
    }
    Ok(())
}

/// 1-based rank of each query's partner among all other valid rows, ranked
/// by descending cosine with ties broken by ascending id. Rows that are zero,
/// or whose partner is zero, get `None`.
pub fn partner_ranks(emb: &EmbeddingMatrix, partner: &[usize]) -> Result<Vec<Option<usize>>> {
    let n = emb.n();
    if partner.len() != n {
        return Err(Error::DimensionMismatch(format!("{} partner entries for {n} rows", partner.len())));
    }
    if let Some(i) = (0..n).find(|&i| partner[i] >= n || partner[i] == i || partner[partner[i]] != i) {
        return Err(Error::InvalidInput(format!("row {i} has no consistent partner")));
    }
    let norms: Vec<f64> =
        emb.rows().map(|r| r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()).collect();
    let valid: Vec<bool> = (0..n).map(|i| norms[i] > 0.0 && norms[partner[i]] > 0.0).collect();
    let ids = emb.ids();
    Ok((0..n)
        .into_par_iter()
        .map(|q| {
            if !valid[q] {
                return None;
            }
            let p = partner[q];
            let row = emb.row(q);
            let target = cosine(row, emb.row(p), norms[q], norms[p]);
            let ahead = (0..n)
                .filter(|&c| c != q && c != p && valid[c])
                .filter(|&c| match cosine(row, emb.row(c), norms[q], norms[c]).total_cmp(&target) {
                    Ordering::Greater => true,
                    Ordering::Equal => ids[c] < ids[p],
                    Ordering::Less => false,
                })
                .count();
            Some(ahead + 1)
        })
        .collect())
}

/// Error@k over all halves as queries. `partner[i]` is the index of row
/// `i`'s other half.
pub fn error_at_k(emb: &EmbeddingMatrix, partner: &[usize], ks: &[usize]) -> Result<ErrorCurve> {
    validate_ks(ks)?;
    let ranks = partner_ranks(emb, partner)?;
    let found: Vec<usize> = ranks.iter().flatten().copied().collect();
    if found.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 usable halves, have {}", found.len())));
    }
    let n_queries = found.len();
    let errors = ks.iter().map(|&k| found.iter().filter(|&&r| r > k).count() as f64 / n_queries as f64).collect();
    Ok(ErrorCurve { ks: ks.to_vec(), errors, n_queries, skipped: ranks.len() - n_queries })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::kernels::l2_normalize_in_place;

    fn matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        v.chunks_exact_mut(d).for_each(|r| {
            l2_normalize_in_place(r);
        });
        EmbeddingMatrix::new((0..n).map(|i| format!("h{i:04}")).collect(), d, v).unwrap()
    }

    fn pairs(n: usize) -> Vec<usize> {
        (0..n).map(|i| i ^ 1).collect()
    }

    /// Naive ranking: sort every other valid row with the documented order.
    fn naive_ranks(emb: &EmbeddingMatrix, partner: &[usize]) -> Vec<Option<usize>> {
        let n = emb.n();
        let zero = |i: usize| emb.row(i).iter().all(|&x| x == 0.0);
        (0..n)
            .map(|q| {
                if zero(q) || zero(partner[q]) {
                    return None;
                }
                let sim = |c: usize| {
                    let (a, b) = (emb.row(q), emb.row(c));
                    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
                    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                    dot / (na * nb)
                };
                let mut cands: Vec<usize> = (0..n).filter(|&c| c != q && !zero(c) && !zero(partner[c])).collect();
                cands.sort_by(|&a, &b| sim(b).total_cmp(&sim(a)).then_with(|| emb.ids()[a].cmp(&emb.ids()[b])));
                Some(cands.iter().position(|&c| c == partner[q]).unwrap() + 1)
            })
            .collect()
    }

    #[test]
    fn separable_pairs_have_zero_error() {
        let a = [1.0f32, 0.0, 0.0, 0.0];
        let s = 0.9f32;
        let t = (1.0 - s * s).sqrt();
        let rows = [a, [s, t, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, s, t]];
        let emb = EmbeddingMatrix::new((0..4).map(|i| format!("h{i}")).collect(), 4, rows.concat()).unwrap();
        let curve = error_at_k(&emb, &pairs(4), &[1, 2, 3]).unwrap();
        assert_eq!(curve.errors, vec![0.0, 0.0, 0.0]);
        assert_eq!((curve.n_queries, curve.skipped), (4, 0));
    }

    #[test]
    fn null_model_matches_simulation() {
        // Random embeddings place the partner uniformly among the 99 others.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 200;
        let mut sim_err = 0.0;
        let mut ours = 0.0;
        for t in 0..trials {
            let emb = matrix(100, 32, 1000 + t);
            ours += error_at_k(&emb, &pairs(100), &[1]).unwrap().errors[0];
            sim_err += (0..100).filter(|_| rng.random_range(1..=99) > 1).count() as f64 / 100.0;
        }
        let (ours, sim_err) = (ours / trials as f64, sim_err / trials as f64);
        let exact = 1.0 - 1.0 / 99.0;
        assert!((ours - exact).abs() < 0.005, "{ours} vs {exact}");
        assert!((ours - sim_err).abs() < 0.007, "{ours} vs simulated {sim_err}");
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // Query h0; h1 (partner) and h2 identical to each other.
        let rows = [[1.0f32, 0.0], [0.0, 1.0], [0.0, 1.0], [-1.0, 0.0]];
        let ids = vec!["q".to_string(), "p".into(), "a".into(), "z".into()];
        let emb = EmbeddingMatrix::new(ids, 2, rows.concat()).unwrap();
        let partner = [1, 0, 3, 2];
        // "a" < "p", so the tied candidate ranks ahead of the partner.
        assert_eq!(partner_ranks(&emb, &partner).unwrap()[0], Some(2));
    }

    #[test]
    fn zero_rows_and_their_partners_are_skipped() {
        let mut v = matrix(6, 3, 5).into_parts();
        v.2[6..9].fill(0.0);
        let emb = EmbeddingMatrix::new(v.0, 3, v.2).unwrap();
        let curve = error_at_k(&emb, &pairs(6), &[1, 3]).unwrap();
        assert_eq!((curve.n_queries, curve.skipped), (4, 2));
        assert_eq!(curve.error_at(3), Some(0.0));
    }

    #[test]
    fn input_errors() {
        let emb = matrix(4, 3, 6);
        assert!(matches!(error_at_k(&emb, &pairs(4), &[2, 1]), Err(Error::Config(_))));
        assert!(matches!(error_at_k(&emb, &pairs(4), &[0]), Err(Error::Config(_))));
        assert!(matches!(error_at_k(&emb, &[1, 0, 3, 0], &[1]), Err(Error::InvalidInput(_))));
        assert!(matches!(error_at_k(&matrix(1, 3, 7), &[0], &[1]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn csv_layout() {
        let c = ErrorCurve { ks: vec![1, 10], errors: vec![0.5, 0.0], n_queries: 4, skipped: 0 };
        assert_eq!(c.to_csv(), "k,error\n1,0.5\n10,0\n");
    }

    /// Random orthogonal matrix from Gram–Schmidt on Gaussian-ish columns.
    fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for u in &q {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                q.push(v.iter().map(|x| x / n).collect());
            }
        }
        q.concat()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matches_naive_oracle_and_is_monotone(seed in any::<u64>(), half in 2usize..30, d in 2usize..9) {
            let emb = matrix(2 * half, d, seed);
            let partner = pairs(2 * half);
            prop_assert_eq!(partner_ranks(&emb, &partner).unwrap(), naive_ranks(&emb, &partner));
            let ks: Vec<usize> = (1..2 * half).collect();
            let curve = error_at_k(&emb, &partner, &ks).unwrap();
            prop_assert!(curve.errors.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(*curve.errors.last().unwrap(), 0.0);
        }

        #[test]
        fn rotation_invariant(seed in any::<u64>(), d in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let emb = matrix(40, d, seed ^ 1);
            let r = random_rotation(d, &mut rng);
            let rotated: Vec<f32> = emb
                .rows()
                .flat_map(|row| {
                    (0..d).map(|i| (0..d).map(|j| r[i * d + j] * f64::from(row[j])).sum::<f64>() as f32).collect::<Vec<_>>()
                })
                .collect();
            let rot = EmbeddingMatrix::new(emb.ids().to_vec(), d, rotated).unwrap();
            let ks = [1, 2, 5, 10, 39];
            prop_assert_eq!(error_at_k(&emb, &pairs(40), &ks).unwrap(), error_at_k(&rot, &pairs(40), &ks).unwrap());
        }
    }
}
