//! Language subspace estimation and removal.
//!
//! A language's subspace is spanned by the top-`m` right-singular vectors of
//! its (uncentered) sentence embedding matrix. Every embedding splits into a
//! language component (its projection onto that span) and a semantic
//! component (the residual); debiasing keeps only the latter.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, EmbeddingMatrix};
use crate::linalg::{
    self, dot, project_out, truncated_svd, LinalgError, Matrix, OrthonormalBasis,
};

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("cannot estimate a subspace from an empty corpus")]
    EmptyCorpus,
    #[error("class {class:?} has {found} samples, at least {MIN_SAMPLES_PER_CLASS} are required")]
    TooFewSamples { class: String, found: usize },
    #[error("train split must lie strictly between 0 and 1, got {0}")]
    InvalidSplit(f64),
    #[error("no candidate rank drives accuracy below {threshold}; best was {best_accuracy:.4} at m={best_m}")]
    NoRankSatisfies {
        threshold: f64,
        best_m: usize,
        best_accuracy: f64,
    },
    #[error("no candidate ranks given")]
    NoCandidates,
    #[error("subspace sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DebiasError>;

pub const MIN_SAMPLES_PER_CLASS: usize = 10;

/// Estimated basis of one language's dominant subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSubspace {
    pub lang: String,
    pub m: usize,
    pub basis: OrthonormalBasis,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SubspaceOptions {
    /// Center rows before the SVD. Off by default: the debiasing subspace is
    /// taken from the raw embedding matrix.
    pub center: bool,
}

/// Top-`m` singular directions of one language's embeddings.
///
/// `m` above the embedding dimension is an error; `m` above the row count is
/// clamped to the row count with a warning.
pub fn estimate_subspace(
    emb: &Matrix,
    lang: &str,
    m: usize,
    opts: SubspaceOptions,
) -> Result<LanguageSubspace> {
    if m == 0 {
        return Err(DebiasError::ZeroRank);
    }
    if emb.rows() == 0 {
        return Err(DebiasError::EmptyCorpus);
    }
    if m > emb.cols() {
        return Err(LinalgError::KTooLarge {
            k: m,
            max: emb.cols(),
        }
        .into());
    }
    let m = if m > emb.rows() {
        warn!(
            "language {lang}: rank {m} exceeds the {} available rows, clamping",
            emb.rows()
        );
        emb.rows()
    } else {
        m
    };
    let svd = if opts.center {
        let mean = emb.column_means();
        let mut c = emb.clone();
        for i in 0..c.rows() {
            for (x, mu) in c.row_mut(i).iter_mut().zip(&mean) {
                *x -= mu;
            }
        }
        truncated_svd(&c, m)?
    } else {
        truncated_svd(emb, m)?
    };
    Ok(LanguageSubspace {
        lang: lang.to_string(),
        m,
        basis: svd.basis,
        singular_values: svd.singular_values,
    })
}

/// Keeps only the first `m` directions of an estimated subspace.
pub fn truncate_subspace(sub: &LanguageSubspace, m: usize) -> LanguageSubspace {
    let m = m.min(sub.m);
    LanguageSubspace {
        lang: sub.lang.clone(),
        m,
        basis: sub.basis.truncate(m),
        singular_values: sub.singular_values[..m].to_vec(),
    }
}

/// `ṽ = v - Σ ⟨v, uᵢ⟩ uᵢ` for every row.
pub fn debias_matrix(emb: &Matrix, sub: &LanguageSubspace) -> Result<Matrix> {
    check_dim(emb.cols(), sub)?;
    let mut out = Matrix::zeros(emb.rows(), emb.cols());
    for i in 0..emb.rows() {
        let row = project_out(emb.row(i), &sub.basis)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Debiases stored embeddings; row count and order are preserved.
pub fn debias_corpus(emb: &EmbeddingMatrix, sub: &LanguageSubspace) -> Result<EmbeddingMatrix> {
    let out = debias_matrix(&emb.to_matrix(), sub)?;
    Ok(EmbeddingMatrix::from_matrix(&out)?)
}

/// Projections of every row onto the language subspace.
pub fn language_components(emb: &Matrix, sub: &LanguageSubspace) -> Result<Matrix> {
    check_dim(emb.cols(), sub)?;
    let mut out = Matrix::zeros(emb.rows(), emb.cols());
    for i in 0..emb.rows() {
        let row = sub.basis.project(emb.row(i))?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

fn check_dim(found: usize, sub: &LanguageSubspace) -> Result<()> {
    if found != sub.basis.dim() {
        return Err(LinalgError::DimMismatch {
            expected: sub.basis.dim(),
            found,
        }
        .into());
    }
    Ok(())
}

/// Split of one embedding into language and semantic parts.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedEmbedding {
    pub language_component: Vec<f64>,
    pub semantic_component: Vec<f64>,
    /// `⟨v, uᵢ⟩` for each basis vector.
    pub coefficients: Vec<f64>,
}

pub fn decompose(v: &[f64], sub: &LanguageSubspace) -> Result<DecomposedEmbedding> {
    let coefficients = sub.basis.coefficients(v)?;
    let mut language_component = vec![0.0; v.len()];
    for (c, i) in coefficients.iter().zip(0..sub.basis.k()) {
        for (o, x) in language_component.iter_mut().zip(sub.basis.vector(i)) {
            *o += c * x;
        }
    }
    let semantic_component = v
        .iter()
        .zip(&language_component)
        .map(|(a, b)| a - b)
        .collect();
    Ok(DecomposedEmbedding {
        language_component,
        semantic_component,
        coefficients,
    })
}

#[derive(Serialize, Deserialize)]
struct SubspaceSidecar {
    lang: String,
    m: usize,
    singular_values: Vec<f64>,
}

/// Writes the basis as a `m x dim` EMB1 matrix plus a JSON sidecar.
pub fn save_subspace(
    sub: &LanguageSubspace,
    basis_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<()> {
    let basis = EmbeddingMatrix::from_matrix(sub.basis.vectors())?;
    corpus::save_embeddings(&basis, basis_path)?;
    let path = sidecar_path.as_ref();
    let file = File::create(path).map_err(|e| sidecar_err(path, e))?;
    let sidecar = SubspaceSidecar {
        lang: sub.lang.clone(),
        m: sub.m,
        singular_values: sub.singular_values.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(file), &sidecar).map_err(|e| sidecar_err(path, e))
}

pub fn load_subspace(
    basis_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<LanguageSubspace> {
    let basis = corpus::load_embeddings(basis_path)?.to_matrix();
    let path = sidecar_path.as_ref();
    let file = File::open(path).map_err(|e| sidecar_err(path, e))?;
    let sidecar: SubspaceSidecar =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| sidecar_err(path, e))?;
    if sidecar.m != basis.rows() || sidecar.singular_values.len() != sidecar.m {
        return Err(sidecar_err(path, "rank does not match the stored basis"));
    }
    Ok(LanguageSubspace {
        lang: sidecar.lang,
        m: sidecar.m,
        basis: OrthonormalBasis::new(basis)?,
        singular_values: sidecar.singular_values,
    })
}

fn sidecar_err(path: &Path, e: impl ToString) -> DebiasError {
    DebiasError::Sidecar {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Logistic-regression training parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub step: f64,
    pub l2: f64,
    /// Fraction of each class used for training.
    pub split: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            step: 0.1,
            l2: 1e-3,
            split: 0.8,
            seed: 0,
        }
    }
}

/// Linear two-class language classifier; class `b` when `⟨w, x⟩ + bias > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLanguageClassifier {
    pub weights: Vec<f64>,
    pub bias_term: f64,
    pub classes: (String, String),
}

impl LinearLanguageClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias_term
    }

    /// `true` for the second class.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub classifier: LinearLanguageClassifier,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

fn split_indices(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((split * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Trains an ℓ₂-regularized logistic regression separating `a` from `b` by
/// full-batch gradient descent and reports held-out accuracy.
///
/// Each class is shuffled with a generator freshly seeded from `cfg.seed`, so
/// when both inputs have the same row count, row `i` of `a` and row `i` of
/// `b` land on the same side of the split. Parallel corpora are therefore
/// split at the pair level.
pub fn train_language_classifier(
    a: &Matrix,
    b: &Matrix,
    classes: (&str, &str),
    cfg: &ClassifierConfig,
) -> Result<ClassifierReport> {
    if !(cfg.split > 0.0 && cfg.split < 1.0) {
        return Err(DebiasError::InvalidSplit(cfg.split));
    }
    for (m, name) in [(a, classes.0), (b, classes.1)] {
        if m.rows() < MIN_SAMPLES_PER_CLASS {
            return Err(DebiasError::TooFewSamples {
                class: name.to_string(),
                found: m.rows(),
            });
        }
    }
    if a.cols() != b.cols() {
        return Err(LinalgError::DimMismatch {
            expected: a.cols(),
            found: b.cols(),
        }
        .into());
    }

    let (a_train, a_test) = split_indices(a.rows(), cfg.split, cfg.seed);
    let (b_train, b_test) = split_indices(b.rows(), cfg.split, cfg.seed);
    let train: Vec<(&[f64], f64)> = a_train
        .iter()
        .map(|&i| (a.row(i), 0.0))
        .chain(b_train.iter().map(|&i| (b.row(i), 1.0)))
        .collect();

    let dim = a.cols();
    let mut w = vec![0.0; dim];
    let mut bias = 0.0;
    let inv_n = 1.0 / train.len() as f64;
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0;
        for (x, y) in &train {
            let err = sigmoid(dot(&w, x) + bias) - y;
            for (g, xi) in grad.iter_mut().zip(x.iter()) {
                *g += err * xi;
            }
            grad_bias += err;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= cfg.step * (g * inv_n + cfg.l2 * *wi);
        }
        bias -= cfg.step * grad_bias * inv_n;
    }

    let classifier = LinearLanguageClassifier {
        weights: w,
        bias_term: bias,
        classes: (classes.0.to_string(), classes.1.to_string()),
    };
    let correct = a_test
        .iter()
        .filter(|&&i| !classifier.predict(a.row(i)))
        .count()
        + b_test
            .iter()
            .filter(|&&i| classifier.predict(b.row(i)))
            .count();
    let test_size = a_test.len() + b_test.len();
    Ok(ClassifierReport {
        classifier,
        test_accuracy: correct as f64 / test_size as f64,
        train_size: train.len(),
        test_size,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Powers of two up to 512, clamped to `dim` and deduplicated.
pub fn default_rank_candidates(dim: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=9).map(|p| (1usize << p).min(dim)).collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSelection {
    pub threshold: f64,
    /// Ascending; `None` means [`default_rank_candidates`].
    pub candidates: Option<Vec<usize>>,
    pub classifier: ClassifierConfig,
    pub subspace: SubspaceOptions,
}

impl Default for RankSelection {
    fn default() -> Self {
        Self {
            threshold: 0.55,
            candidates: None,
            classifier: ClassifierConfig::default(),
            subspace: SubspaceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankChoice {
    pub m: usize,
    pub accuracy: f64,
    /// `(m, accuracy)` for every candidate tried, in order.
    pub trace: Vec<(usize, f64)>,
}

/// Smallest candidate rank for which a classifier on the debiased embeddings
/// of both languages (each with its own rank-`m` subspace) scores below the
/// threshold.
pub fn select_rank(
    a: &Matrix,
    b: &Matrix,
    langs: (&str, &str),
    sel: &RankSelection,
) -> Result<RankChoice> {
    let candidates = sel
        .candidates
        .clone()
        .unwrap_or_else(|| default_rank_candidates(a.cols().min(b.cols())));
    if candidates.is_empty() {
        return Err(DebiasError::NoCandidates);
    }
    let mut trace = Vec::with_capacity(candidates.len());
    let mut best = (0usize, f64::INFINITY);
    for &m in &candidates {
        let sub_a = estimate_subspace(a, langs.0, m, sel.subspace)?;
        let sub_b = estimate_subspace(b, langs.1, m, sel.subspace)?;
        let da = debias_matrix(a, &sub_a)?;
        let db = debias_matrix(b, &sub_b)?;
        let acc = train_language_classifier(&da, &db, langs, &sel.classifier)?.test_accuracy;
        log::debug!("rank {m}: language accuracy {acc:.4}");
        trace.push((m, acc));
        if acc < best.1 {
            best = (m, acc);
        }
        if acc < sel.threshold {
            return Ok(RankChoice {
                m,
                accuracy: acc,
                trace,
            });
        }
    }
    Err(DebiasError::NoRankSatisfies {
        threshold: sel.threshold,
        best_m: best.0,
        best_accuracy: best.1,
    })
}

/// Held-out language accuracy on raw embeddings, their language components
/// and their semantic (debiased) components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasReport {
    pub raw: f64,
    pub language_component: f64,
    pub semantic_component: f64,
}

pub fn language_bias_report(
    a: &Matrix,
    b: &Matrix,
    sub_a: &LanguageSubspace,
    sub_b: &LanguageSubspace,
    cfg: &ClassifierConfig,
) -> Result<BiasReport> {
    let langs = (sub_a.lang.as_str(), sub_b.lang.as_str());
    let raw = train_language_classifier(a, b, langs, cfg)?.test_accuracy;
    let la = language_components(a, sub_a)?;
    let lb = language_components(b, sub_b)?;
    let language_component = train_language_classifier(&la, &lb, langs, cfg)?.test_accuracy;
    let sa = debias_matrix(a, sub_a)?;
    let sb = debias_matrix(b, sub_b)?;
    let semantic_component = train_language_classifier(&sa, &sb, langs, cfg)?.test_accuracy;
    Ok(BiasReport {
        raw,
        language_component,
        semantic_component,
    })
}

/// Largest `|⟨row, uᵢ⟩|` over all rows and basis vectors.
pub fn max_residual_projection(m: &Matrix, basis: &OrthonormalBasis) -> f64 {
    let mut worst: f64 = 0.0;
    for row in m.row_iter() {
        for i in 0..basis.k() {
            worst = worst.max(linalg::dot(row, basis.vector(i)).abs());
        }
    }
    worst
}
