//! Synthetic bilingual corpora with a known language subspace.
//!
//! Each sentence embedding is `μ_lang + τ·U z + s + ε`: a per-language
//! offset and per-sentence variation inside a shared low-rank subspace `U`,
//! a semantic vector `s` orthogonal to `U` shared by parallel sentences, and
//! isotropic noise. Target documents are shuffled so that gold pairs are not
//! recoverable from row order.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::corpus::{
    self, Corpus, CorpusError, CorpusManifest, DocumentRecord, EmbeddingMatrix, GoldAlignment,
};
use crate::linalg::{dot, project_out, LinalgError, Matrix, OrthonormalBasis};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator settings: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Rank of the language subspace.
    pub language_rank: usize,
    /// Norm of each language's mean offset.
    pub offset_norm: f64,
    /// Per-coordinate standard deviation of sentence-level language variation.
    pub language_spread: f64,
    /// Expected norm of a semantic vector.
    pub semantic_norm: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    /// Identical boilerplate sentences appended to every document.
    pub boilerplate: usize,
    pub source_lang: String,
    pub target_lang: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            n_docs: 200,
            min_sentences: 2,
            max_sentences: 5,
            language_rank: 2,
            offset_norm: 10.0,
            language_spread: 1.5,
            semantic_norm: 2.0,
            noise: 0.1,
            boilerplate: 0,
            source_lang: "en".into(),
            target_lang: "fr".into(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// `n` single-sentence documents per language.
    pub fn sentences(n: usize) -> Self {
        Self {
            n_docs: n,
            min_sentences: 1,
            max_sentences: 1,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(SynthError::Invalid(m.into()));
        if self.n_docs == 0 {
            return fail("n_docs must be positive");
        }
        if self.language_rank == 0 || self.language_rank >= self.dim {
            return fail("language_rank must lie in 1..dim");
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return fail("need 1 <= min_sentences <= max_sentences");
        }
        if self.source_lang == self.target_lang {
            return fail("source and target languages must differ");
        }
        for v in [self.offset_norm, self.language_spread, self.semantic_norm, self.noise] {
            if !(v.is_finite() && v >= 0.0) {
                return fail("scales must be finite and non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub source: Corpus,
    pub target: Corpus,
    /// Source to target document pairs.
    pub gold: GoldAlignment,
    /// The true language subspace.
    pub language_basis: OrthonormalBasis,
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub source_emb: PathBuf,
    pub source_manifest: PathBuf,
    pub target_emb: PathBuf,
    pub target_manifest: PathBuf,
    pub gold: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: &Path, source_lang: &str, target_lang: &str) -> Self {
        Self {
            source_emb: dir.join(format!("{source_lang}.emb")),
            source_manifest: dir.join(format!("{source_lang}.jsonl")),
            target_emb: dir.join(format!("{target_lang}.emb")),
            target_manifest: dir.join(format!("{target_lang}.jsonl")),
            gold: dir.join("gold.tsv"),
        }
    }
}

impl SynthCorpus {
    /// Writes `<lang>.emb`, `<lang>.jsonl` for both sides and `gold.tsv`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<FixturePaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let paths = FixturePaths::in_dir(dir, self.source.language(), self.target.language());
        corpus::save_embeddings(&self.source.embeddings, &paths.source_emb)?;
        corpus::save_manifest(&self.source.manifest, &paths.source_manifest)?;
        corpus::save_embeddings(&self.target.embeddings, &paths.target_emb)?;
        corpus::save_manifest(&self.target.manifest, &paths.target_manifest)?;
        corpus::save_pairs(&self.gold.pairs, &paths.gold)?;
        Ok(paths)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_basis(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> OrthonormalBasis {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v = gaussian(rng, dim, 1.0);
        for u in &rows {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
    }
    OrthonormalBasis::new(Matrix::from_rows(&rows)).expect("Gram-Schmidt output is orthonormal")
}

struct LanguageModel {
    offset: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let rank = cfg.language_rank;
    let basis = random_basis(&mut rng, dim, rank);

    // Orthogonal offsets when rank >= 2, opposite ones for rank 1.
    let lang_offset = |coord: usize, sign: f64| -> LanguageModel {
        let u = basis.vector(coord % rank);
        LanguageModel {
            offset: u.iter().map(|x| sign * cfg.offset_norm * x).collect(),
        }
    };
    let langs = [
        lang_offset(0, 1.0),
        if rank >= 2 { lang_offset(1, 1.0) } else { lang_offset(0, -1.0) },
    ];

    let semantic_std = cfg.semantic_norm / ((dim - rank) as f64).sqrt();
    let semantic = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v = gaussian(rng, dim, semantic_std);
        project_out(&v, &basis).expect("dimensions agree")
    };
    let boilerplate = semantic(&mut rng);

    // Shared semantics per document: one vector per sentence.
    let docs: Vec<Vec<Vec<f64>>> = (0..cfg.n_docs)
        .map(|_| {
            let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
            let mut sents: Vec<Vec<f64>> = (0..n).map(|_| semantic(&mut rng)).collect();
            sents.extend(std::iter::repeat_n(boilerplate.clone(), cfg.boilerplate));
            sents
        })
        .collect();

    let mut target_order: Vec<usize> = (0..cfg.n_docs).collect();
    target_order.shuffle(&mut rng);

    let sentence = |lang: &LanguageModel, sem: &[f64], rng: &mut ChaCha8Rng| -> Vec<f32> {
        let z = gaussian(rng, rank, cfg.language_spread);
        let eps = gaussian(rng, dim, cfg.noise);
        let mut v: Vec<f64> = lang.offset.iter().zip(sem).zip(&eps).map(|((a, b), c)| a + b + c).collect();
        for (a, za) in z.iter().enumerate() {
            v.iter_mut().zip(basis.vector(a)).for_each(|(x, u)| *x += za * u);
        }
        v.into_iter().map(|x| x as f32).collect()
    };

    let width = cfg.n_docs.to_string().len().max(4);
    let build = |lang_idx: usize, lang: &str, order: &[usize], rng: &mut ChaCha8Rng| -> Result<(Corpus, Vec<String>)> {
        let mut data = Vec::new();
        let mut records = Vec::with_capacity(order.len());
        let mut ids_by_doc = vec![String::new(); order.len()];
        let mut start = 0;
        for (pos, &d) in order.iter().enumerate() {
            let id = format!("{lang}-{pos:0width$}");
            for sem in &docs[d] {
                data.extend(sentence(&langs[lang_idx], sem, rng));
            }
            records.push(DocumentRecord {
                doc_id: id.clone(),
                sentence_start: start,
                sentence_count: docs[d].len(),
                url: None,
            });
            start += docs[d].len();
            ids_by_doc[d] = id;
        }
        let emb = EmbeddingMatrix::new(dim, data)?;
        let manifest = CorpusManifest {
            language: lang.to_string(),
            docs: records,
        };
        Ok((Corpus::new(emb, manifest)?, ids_by_doc))
    };

    let identity: Vec<usize> = (0..cfg.n_docs).collect();
    let (source, src_ids) = build(0, &cfg.source_lang, &identity, &mut rng)?;
    let (target, tgt_ids) = build(1, &cfg.target_lang, &target_order, &mut rng)?;
    let gold = GoldAlignment::new(src_ids.into_iter().zip(tgt_ids).collect())?;
    Ok(SynthCorpus {
        source,
        target,
        gold,
        language_basis: basis,
    })
}
