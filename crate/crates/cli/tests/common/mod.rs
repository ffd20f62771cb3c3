//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::cmp::Ordering;

use lawdr_core::linalg::Matrix;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Rank-`k` projector onto the top eigenvectors of `MᵀM`, from nalgebra.
pub fn gram_projector(m: &Matrix, k: usize) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    let gram = a.transpose() * &a;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut p = DMatrix::zeros(m.cols(), m.cols());
    for &i in order.iter().take(k) {
        let v = eig.eigenvectors.column(i);
        p += v * v.transpose();
    }
    p
}

pub fn basis_projector(basis: &Matrix) -> DMatrix<f64> {
    let u = DMatrix::from_row_slice(basis.rows(), basis.cols(), basis.as_slice());
    u.transpose() * u
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = gaussian_matrix(rng, rows, cols);
    for i in 0..rows {
        let r = m.row_mut(i);
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x /= n);
    }
    m
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePair {
    pub source: String,
    pub target: String,
    pub score: f64,
}

/// Exhaustive margin (or cosine) scoring followed by sort-then-sweep matching.
///
/// Builds the full similarity matrix, ranks every row and column by
/// descending similarity (ties by id), and evaluates every candidate pair.
pub fn brute_force_align(
    src_ids: &[String],
    src: &Matrix,
    tgt_ids: &[String],
    tgt: &Matrix,
    margin: bool,
    k: usize,
    n_candidates: usize,
) -> Vec<OraclePair> {
    let (ns, nt) = (src.rows(), tgt.rows());
    let k = k.min(ns).min(nt);
    let n_candidates = n_candidates.min(nt);
    let sim: Vec<Vec<f64>> = (0..ns)
        .map(|i| (0..nt).map(|j| inner(src.row(i), tgt.row(j))).collect())
        .collect();
    let ranked = |scores: Vec<(f64, usize)>, ids: &[String]| {
        let mut s = scores;
        s.sort_by(|a, b| match b.0.partial_cmp(&a.0).unwrap() {
            Ordering::Equal => ids[a.1].cmp(&ids[b.1]),
            o => o,
        });
        s
    };
    let src_rank: Vec<Vec<(f64, usize)>> = (0..ns)
        .map(|i| ranked((0..nt).map(|j| (sim[i][j], j)).collect(), tgt_ids))
        .collect();
    let tgt_rank: Vec<Vec<(f64, usize)>> = (0..nt)
        .map(|j| ranked((0..ns).map(|i| (inner(tgt.row(j), src.row(i)), i)).collect(), src_ids))
        .collect();
    let top_sum = |r: &[(f64, usize)]| {
        let mut s = 0.0;
        for &(c, _) in &r[..k] {
            s += c;
        }
        s
    };

    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..ns {
        for &(c, j) in &src_rank[i][..n_candidates] {
            let score = if margin {
                let denom = top_sum(&src_rank[i]) + top_sum(&tgt_rank[j]);
                if denom == 0.0 {
                    continue;
                }
                c / denom
            } else {
                c
            };
            cands.push((score, i, j));
        }
    }
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| src_ids[a.1].cmp(&src_ids[b.1]))
            .then_with(|| tgt_ids[a.2].cmp(&tgt_ids[b.2]))
    });
    let mut used_s = vec![false; ns];
    let mut used_t = vec![false; nt];
    let mut out = Vec::new();
    for (score, i, j) in cands {
        if !used_s[i] && !used_t[j] {
            used_s[i] = true;
            used_t[j] = true;
            out.push(OraclePair {
                source: src_ids[i].clone(),
                target: tgt_ids[j].clone(),
                score,
            });
        }
    }
    out
}

/// Centroid distance over pooled RMS deviation, read from a viz CSV.
pub fn csv_separation(csv: &str) -> f64 {
    let mut groups: Vec<(String, Vec<[f64; 2]>)> = Vec::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.rsplitn(4, ',').collect();
        let (pc2, pc1, lang) = (cols[0], cols[1], cols[2]);
        let p = [pc1.parse().unwrap(), pc2.parse().unwrap()];
        match groups.iter_mut().find(|(l, _)| l == lang) {
            Some((_, pts)) => pts.push(p),
            None => groups.push((lang.to_string(), vec![p])),
        }
    }
    assert_eq!(groups.len(), 2, "expected two languages");
    let centroid = |pts: &[[f64; 2]]| {
        let n = pts.len() as f64;
        [
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        ]
    };
    let c: Vec<[f64; 2]> = groups.iter().map(|(_, p)| centroid(p)).collect();
    let dist = ((c[0][0] - c[1][0]).powi(2) + (c[0][1] - c[1][1]).powi(2)).sqrt();
    let mut sq = 0.0;
    let mut n = 0usize;
    for (g, (_, pts)) in groups.iter().enumerate() {
        for p in pts {
            sq += (p[0] - c[g][0]).powi(2) + (p[1] - c[g][1]).powi(2);
            n += 1;
        }
    }
    dist / (sq / n as f64).sqrt()
}
