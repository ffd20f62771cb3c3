//! Document embeddings pooled from sentence embeddings.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, CorpusManifest, EmbeddingMatrix};
use crate::density::SentenceWeights;
use crate::linalg::{unit_normalize, Matrix};

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{weights} weights for {rows} sentence rows")]
    WeightRowMismatch { weights: usize, rows: usize },
    #[error("weighted pooling needs sentence weights")]
    MissingWeights,
    #[error("document sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, PoolingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    #[default]
    Weighted,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Weighted => "weighted",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Pooling::Mean),
            "weighted" => Ok(Pooling::Weighted),
            other => Err(format!("unknown pooling {other:?} (expected mean or weighted)")),
        }
    }
}

/// One row per manifest document, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentEmbeddings {
    pub doc_ids: Vec<String>,
    pub data: Matrix,
    pub pooling: Pooling,
    pub normalized: bool,
}

impl DocumentEmbeddings {
    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    /// Scales every row to unit length. Zero rows are left as they are and
    /// their indices returned.
    pub fn normalize(&mut self) -> Vec<usize> {
        let (data, zero) = unit_normalize(&self.data);
        for &i in &zero {
            warn!("document {} pooled to the zero vector", self.doc_ids[i]);
        }
        self.data = data;
        self.normalized = true;
        zero
    }
}

fn check_rows(emb: &Matrix, manifest: &CorpusManifest) -> Result<()> {
    manifest.validate(emb.rows())?;
    Ok(())
}

fn pool_with<F>(emb: &Matrix, manifest: &CorpusManifest, pooling: Pooling, weight: F) -> DocumentEmbeddings
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let dim = emb.cols();
    let rows: Vec<Vec<f64>> = manifest
        .docs
        .par_iter()
        .map(|doc| {
            let mut acc = vec![0.0; dim];
            for r in doc.rows() {
                let w = weight(r, doc.sentence_count);
                for (a, x) in acc.iter_mut().zip(emb.row(r)) {
                    *a += w * x;
                }
            }
            acc
        })
        .collect();
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend(r);
    }
    DocumentEmbeddings {
        doc_ids: manifest.doc_ids(),
        data: Matrix::from_vec(manifest.docs.len(), dim, data).expect("pooled shape"),
        pooling,
        normalized: false,
    }
}

/// `v_d = Σ_{s∈d} w_s · v_s`, summed in sentence order.
pub fn pool_weighted(
    emb: &Matrix,
    manifest: &CorpusManifest,
    weights: &SentenceWeights,
) -> Result<DocumentEmbeddings> {
    if weights.len() != emb.rows() {
        return Err(PoolingError::WeightRowMismatch {
            weights: weights.len(),
            rows: emb.rows(),
        });
    }
    check_rows(emb, manifest)?;
    let w = &weights.weights;
    Ok(pool_with(emb, manifest, Pooling::Weighted, |r, _| w[r]))
}

/// `v_d = (1/|d|) Σ_{s∈d} v_s`.
pub fn pool_mean(emb: &Matrix, manifest: &CorpusManifest) -> Result<DocumentEmbeddings> {
    check_rows(emb, manifest)?;
    let mut docs = pool_with(emb, manifest, Pooling::Mean, |_, _| 1.0);
    for (i, doc) in manifest.docs.iter().enumerate() {
        let n = doc.sentence_count as f64;
        for x in docs.data.row_mut(i) {
            *x /= n;
        }
    }
    Ok(docs)
}

/// Pools with the chosen mode and optionally unit-normalizes the result.
pub fn pool_documents(
    emb: &Matrix,
    manifest: &CorpusManifest,
    pooling: Pooling,
    weights: Option<&SentenceWeights>,
    normalize: bool,
) -> Result<DocumentEmbeddings> {
    let mut docs = match pooling {
        Pooling::Mean => pool_mean(emb, manifest)?,
        Pooling::Weighted => pool_weighted(emb, manifest, weights.ok_or(PoolingError::MissingWeights)?)?,
    };
    if normalize {
        docs.normalize();
    }
    Ok(docs)
}

#[derive(Serialize, Deserialize)]
struct DocumentSidecar {
    doc_ids: Vec<String>,
    pooling: Pooling,
    normalized: bool,
}

/// Writes document vectors as EMB1 plus a JSON sidecar with ids and pooling.
pub fn save_documents(
    docs: &DocumentEmbeddings,
    emb_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<()> {
    corpus::save_embeddings(&EmbeddingMatrix::from_matrix(&docs.data)?, emb_path)?;
    let path = sidecar_path.as_ref();
    let file = File::create(path).map_err(|e| sidecar_err(path, e))?;
    let sidecar = DocumentSidecar {
        doc_ids: docs.doc_ids.clone(),
        pooling: docs.pooling,
        normalized: docs.normalized,
    };
    serde_json::to_writer_pretty(BufWriter::new(file), &sidecar).map_err(|e| sidecar_err(path, e))
}

pub fn load_documents(
    emb_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<DocumentEmbeddings> {
    let data = corpus::load_embeddings(emb_path)?.to_matrix();
    let path = sidecar_path.as_ref();
    let file = File::open(path).map_err(|e| sidecar_err(path, e))?;
    let sidecar: DocumentSidecar =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| sidecar_err(path, e))?;
    if sidecar.doc_ids.len() != data.rows() {
        return Err(sidecar_err(
            path,
            format!("{} ids for {} rows", sidecar.doc_ids.len(), data.rows()),
        ));
    }
    Ok(DocumentEmbeddings {
        doc_ids: sidecar.doc_ids,
        data,
        pooling: sidecar.pooling,
        normalized: sidecar.normalized,
    })
}

fn sidecar_err(path: &Path, e: impl ToString) -> PoolingError {
    PoolingError::Sidecar {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
