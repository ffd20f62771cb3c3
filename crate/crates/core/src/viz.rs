//! Two-dimensional PCA export of two languages' sentence embeddings.

use std::io::{self, Write};

use serde::Serialize;

use crate::corpus::SentenceId;
use crate::linalg::{pca_reduce, LinalgError, Matrix};

pub const VIZ_HEADER: &str = "doc_id,sentence_index,lang,pc1,pc2";

#[derive(Debug, Clone, PartialEq)]
pub struct VizPoint {
    pub id: SentenceId,
    /// 0 for the first language, 1 for the second.
    pub group: usize,
    pub pc: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizScatter {
    pub langs: [String; 2],
    pub points: Vec<VizPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    pub centroid_distance: f64,
    /// Root-mean-square distance of points from their own language's centroid.
    pub within_std: f64,
    pub ratio: f64,
}

/// Fits a 2-component PCA on the union of both inputs and projects every row.
pub fn pca_scatter(
    a: (&str, &Matrix, &[SentenceId]),
    b: (&str, &Matrix, &[SentenceId]),
) -> Result<VizScatter, LinalgError> {
    if a.1.cols() != b.1.cols() {
        return Err(LinalgError::DimMismatch {
            expected: a.1.cols(),
            found: b.1.cols(),
        });
    }
    for (m, ids) in [(a.1, a.2), (b.1, b.2)] {
        if m.rows() != ids.len() {
            return Err(LinalgError::DimMismatch {
                expected: ids.len(),
                found: m.rows(),
            });
        }
    }
    let union: Vec<&[f64]> = a.1.row_iter().chain(b.1.row_iter()).collect();
    let pca = pca_reduce(&Matrix::from_rows(&union), 2, true)?;
    let coord = |i: usize, j: usize| {
        if j < pca.reduced.cols() {
            pca.reduced.get(i, j)
        } else {
            0.0
        }
    };
    let points = a
        .2
        .iter()
        .map(|id| (id, 0))
        .chain(b.2.iter().map(|id| (id, 1)))
        .enumerate()
        .map(|(i, (id, group))| VizPoint {
            id: id.clone(),
            group,
            pc: [coord(i, 0), coord(i, 1)],
        })
        .collect();
    Ok(VizScatter {
        langs: [a.0.to_string(), b.0.to_string()],
        points,
    })
}

impl VizScatter {
    pub fn separation(&self) -> Separation {
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0usize; 2];
        for p in &self.points {
            sums[p.group][0] += p.pc[0];
            sums[p.group][1] += p.pc[1];
            counts[p.group] += 1;
        }
        let centroid = |g: usize| {
            let n = counts[g].max(1) as f64;
            [sums[g][0] / n, sums[g][1] / n]
        };
        let c = [centroid(0), centroid(1)];
        let centroid_distance = ((c[0][0] - c[1][0]).powi(2) + (c[0][1] - c[1][1]).powi(2)).sqrt();
        let sq: f64 = self
            .points
            .iter()
            .map(|p| {
                let m = c[p.group];
                (p.pc[0] - m[0]).powi(2) + (p.pc[1] - m[1]).powi(2)
            })
            .sum();
        let within_std = (sq / self.points.len().max(1) as f64).sqrt();
        Separation {
            centroid_distance,
            within_std,
            ratio: centroid_distance / within_std,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{VIZ_HEADER}")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                csv_field(&p.id.doc_id),
                p.id.sentence_index,
                csv_field(&self.langs[p.group]),
                p.pc[0],
                p.pc[1]
            )?;
        }
        w.flush()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<SentenceId> {
        (0..n)
            .map(|i| SentenceId {
                doc_id: format!("{prefix}{i}"),
                sentence_index: 0,
            })
            .collect()
    }

    #[test]
    fn separated_clouds() {
        let a = Matrix::from_rows(&[[10.0, 1.0, 0.0], [10.0, -1.0, 0.0], [10.0, 0.0, 0.5]]);
        let b = Matrix::from_rows(&[[-10.0, 1.0, 0.0], [-10.0, -1.0, 0.0], [-10.0, 0.0, 0.5]]);
        let s = pca_scatter(("en", &a, &ids("e", 3)), ("fr", &b, &ids("f", 3))).unwrap();
        let sep = s.separation();
        assert!((sep.centroid_distance - 20.0).abs() < 1e-9);
        assert!(sep.ratio > 3.0);
    }

    #[test]
    fn csv_header_and_quoting() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut id = ids("x", 2);
        id[1].doc_id = "a,b".into();
        let s = pca_scatter(("en", &a, &id), ("fr", &a, &id)).unwrap();
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(VIZ_HEADER));
        assert!(text.contains("\"a,b\",0,en,"));
        assert_eq!(text.lines().count(), 5);
    }
}
