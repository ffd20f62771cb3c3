//! Cross-lingual document alignment: exact kNN, margin scoring, greedy
//! one-to-one matching and recall.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldAlignment;
use crate::linalg::dot;
use crate::pooling::DocumentEmbeddings;
use crate::util::format_sig9;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("k = {k} exceeds the pool size {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("n_candidates ({n_candidates}) must be at least k ({k})")]
    TooFewCandidates { k: usize, n_candidates: usize },
    #[error("margin denominator is zero")]
    ZeroDenominator,
    #[error("{side} corpus has no documents")]
    EmptyCorpus { side: &'static str },
    #[error("gold alignment is empty")]
    EmptyGold,
    #[error("dimension mismatch: source {source_dim}, target {target_dim}")]
    DimMismatch { source_dim: usize, target_dim: usize },
    #[error("pre-aligned pair refers to unknown {side} document {doc_id:?}")]
    UnknownDocument { side: &'static str, doc_id: String },
    #[error("{side} document {doc_id:?} is pre-aligned more than once")]
    DuplicatePreAligned { side: &'static str, doc_id: String },
}

pub type Result<T> = std::result::Result<T, AlignError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    #[default]
    Margin,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Margin => "margin",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "margin" => Ok(Metric::Margin),
            other => Err(format!("unknown metric {other:?} (expected cosine or margin)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub cosine: f64,
}

/// Descending similarity, then ascending id.
fn neighbor_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Top-`k` of `pool` rows (given as indices into `data`) for one query.
fn top_k(query: &[f64], data: &DocumentEmbeddings, pool: &[usize], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = pool
        .iter()
        .map(|&j| Neighbor {
            index: j,
            cosine: dot(query, data.row(j)),
        })
        .collect();
    all.sort_by(|a, b| {
        neighbor_order(
            (a.cosine, &data.doc_ids[a.index]),
            (b.cosine, &data.doc_ids[b.index]),
        )
    });
    all.truncate(k);
    all
}

/// Exact top-`k` targets for every query row by inner product (cosine for
/// unit-normalized inputs). Ties go to the smaller doc id.
pub fn knn_cosine(
    query: &DocumentEmbeddings,
    pool: &DocumentEmbeddings,
    k: usize,
) -> Result<Vec<Vec<Neighbor>>> {
    if k == 0 {
        return Err(AlignError::ZeroK);
    }
    if k > pool.len() {
        return Err(AlignError::KTooLarge { k, pool: pool.len() });
    }
    check_dims(query, pool)?;
    let all: Vec<usize> = (0..pool.len()).collect();
    Ok((0..query.len())
        .into_par_iter()
        .map(|i| top_k(query.row(i), pool, &all, k))
        .collect())
}

fn check_dims(a: &DocumentEmbeddings, b: &DocumentEmbeddings) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(AlignError::DimMismatch {
            source_dim: a.dim(),
            target_dim: b.dim(),
        });
    }
    Ok(())
}

/// `⟨d, d'⟩ / (Σ nn_d + Σ nn_dp)`, where the neighbor lists hold the
/// similarities of `d`'s kNN in the target pool and `d'`'s kNN in the
/// source pool.
pub fn margin_score(d: &[f64], d_prime: &[f64], nn_d: &[f64], nn_dp: &[f64]) -> Result<f64> {
    margin_from_parts(dot(d, d_prime), nn_sum(nn_d), nn_sum(nn_dp))
}

fn nn_sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn margin_from_parts(sim: f64, sum_d: f64, sum_dp: f64) -> Result<f64> {
    let denom = sum_d + sum_dp;
    if denom == 0.0 {
        return Err(AlignError::ZeroDenominator);
    }
    Ok(sim / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub metric: Metric,
    pub k: usize,
    pub n_candidates: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Margin,
            k: 4,
            n_candidates: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub source: String,
    pub target: String,
    pub cosine: f64,
    /// Present when the margin metric was used.
    pub margin: Option<f64>,
}

impl ScoredPair {
    pub fn score(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Cosine => self.cosine,
            Metric::Margin => self.margin.unwrap_or(self.cosine),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Embedding-based matches, in acceptance order.
    pub matched: Vec<ScoredPair>,
    /// Pre-aligned pairs with their cosine similarity, in input order.
    pub pre_aligned: Vec<ScoredPair>,
    pub recall: Option<f64>,
    pub skipped_zero_denominator: usize,
    /// Effective configuration after clamping `k` and `n_candidates`.
    pub config: AlignConfig,
}

impl AlignmentResult {
    pub fn url_matched_count(&self) -> usize {
        self.pre_aligned.len()
    }

    /// All matched id pairs, pre-aligned first.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.pre_aligned
            .iter()
            .chain(&self.matched)
            .map(|p| (p.source.clone(), p.target.clone()))
            .collect()
    }

    pub fn summary(&self, gold: Option<&GoldAlignment>) -> AlignmentSummary {
        AlignmentSummary {
            metric: self.config.metric,
            k: self.config.k,
            n_candidates: self.config.n_candidates,
            matched: self.matched.len() + self.pre_aligned.len(),
            url_matched: self.pre_aligned.len(),
            skipped_zero_denominator: self.skipped_zero_denominator,
            gold_pairs: gold.map(GoldAlignment::len),
            recall: self.recall,
        }
    }

    /// Writes `source<TAB>target<TAB>score<TAB>metric` lines; pre-aligned
    /// pairs carry their cosine and the metric `url`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for p in &self.pre_aligned {
            writeln!(w, "{}\t{}\t{}\turl", p.source, p.target, format_sig9(p.cosine))?;
        }
        let metric = self.config.metric;
        for p in &self.matched {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                p.source,
                p.target,
                format_sig9(p.score(metric)),
                metric
            )?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSummary {
    pub metric: Metric,
    pub k: usize,
    pub n_candidates: usize,
    pub matched: usize,
    pub url_matched: usize,
    pub skipped_zero_denominator: usize,
    pub gold_pairs: Option<usize>,
    pub recall: Option<f64>,
}

fn index_by_id(docs: &DocumentEmbeddings) -> HashMap<&str, usize> {
    docs.doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect()
}

/// Aligns `src` to `tgt` one-to-one.
///
/// Pre-aligned documents leave both pools first. Each remaining source
/// document proposes its `n_candidates` nearest targets; candidates are
/// scored by `metric`, sorted globally by descending score (ties by source
/// then target id) and accepted greedily while both ends are free. Margin
/// neighbor sums use `k` neighbors from the remaining pools, the pair
/// itself included. Pairs with a zero margin denominator are skipped.
pub fn align(
    src: &DocumentEmbeddings,
    tgt: &DocumentEmbeddings,
    cfg: &AlignConfig,
    gold: Option<&GoldAlignment>,
    pre_aligned: Option<&[(String, String)]>,
) -> Result<AlignmentResult> {
    if src.is_empty() {
        return Err(AlignError::EmptyCorpus { side: "source" });
    }
    if tgt.is_empty() {
        return Err(AlignError::EmptyCorpus { side: "target" });
    }
    if cfg.k == 0 {
        return Err(AlignError::ZeroK);
    }
    if cfg.n_candidates < cfg.k {
        return Err(AlignError::TooFewCandidates {
            k: cfg.k,
            n_candidates: cfg.n_candidates,
        });
    }
    check_dims(src, tgt)?;

    let src_index = index_by_id(src);
    let tgt_index = index_by_id(tgt);
    let mut src_taken = vec![false; src.len()];
    let mut tgt_taken = vec![false; tgt.len()];
    let mut url_pairs = Vec::new();
    for (s, t) in pre_aligned.unwrap_or_default() {
        let &i = src_index.get(s.as_str()).ok_or_else(|| AlignError::UnknownDocument {
            side: "source",
            doc_id: s.clone(),
        })?;
        let &j = tgt_index.get(t.as_str()).ok_or_else(|| AlignError::UnknownDocument {
            side: "target",
            doc_id: t.clone(),
        })?;
        if std::mem::replace(&mut src_taken[i], true) {
            return Err(AlignError::DuplicatePreAligned {
                side: "source",
                doc_id: s.clone(),
            });
        }
        if std::mem::replace(&mut tgt_taken[j], true) {
            return Err(AlignError::DuplicatePreAligned {
                side: "target",
                doc_id: t.clone(),
            });
        }
        url_pairs.push(ScoredPair {
            source: s.clone(),
            target: t.clone(),
            cosine: dot(src.row(i), tgt.row(j)),
            margin: None,
        });
    }

    let src_pool: Vec<usize> = (0..src.len()).filter(|&i| !src_taken[i]).collect();
    let tgt_pool: Vec<usize> = (0..tgt.len()).filter(|&j| !tgt_taken[j]).collect();
    let mut effective = *cfg;
    let mut matched = Vec::new();
    let mut skipped = 0;

    if !src_pool.is_empty() && !tgt_pool.is_empty() {
        let k_max = src_pool.len().min(tgt_pool.len());
        if cfg.metric == Metric::Margin && cfg.k > k_max {
            warn!("k = {} exceeds the remaining pool size; using k = {k_max}", cfg.k);
            effective.k = k_max;
        }
        if cfg.n_candidates > tgt_pool.len() {
            effective.n_candidates = tgt_pool.len();
        }
        let (candidates, zero) = score_candidates(src, tgt, &src_pool, &tgt_pool, &effective);
        skipped = zero;
        if skipped > 0 {
            warn!("skipped {skipped} candidate pairs with a zero margin denominator");
        }
        matched = greedy_match(candidates, effective.metric, src, tgt, &mut src_taken, &mut tgt_taken);
    }

    let mut result = AlignmentResult {
        matched,
        pre_aligned: url_pairs,
        recall: None,
        skipped_zero_denominator: skipped,
        config: effective,
    };
    if let Some(g) = gold {
        result.recall = Some(recall(&result.pairs(), g)?);
    }
    Ok(result)
}

struct Candidate {
    src: usize,
    tgt: usize,
    pair: ScoredPair,
}

fn score_candidates(
    src: &DocumentEmbeddings,
    tgt: &DocumentEmbeddings,
    src_pool: &[usize],
    tgt_pool: &[usize],
    cfg: &AlignConfig,
) -> (Vec<Candidate>, usize) {
    let (src_nn, tgt_nn) = if cfg.metric == Metric::Margin {
        let sums = |from: &DocumentEmbeddings, pool_of: &DocumentEmbeddings, rows: &[usize], pool: &[usize]| {
            rows.par_iter()
                .map(|&i| {
                    let nn: Vec<f64> = top_k(from.row(i), pool_of, pool, cfg.k)
                        .iter()
                        .map(|n| n.cosine)
                        .collect();
                    nn_sum(&nn)
                })
                .collect::<Vec<f64>>()
        };
        (
            sums(src, tgt, src_pool, tgt_pool),
            sums(tgt, src, tgt_pool, src_pool),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let tgt_pos: HashMap<usize, usize> = tgt_pool.iter().enumerate().map(|(p, &j)| (j, p)).collect();

    let per_source: Vec<(Vec<Candidate>, usize)> = src_pool
        .par_iter()
        .enumerate()
        .map(|(sp, &i)| {
            let mut out = Vec::with_capacity(cfg.n_candidates);
            let mut zero = 0;
            for n in top_k(src.row(i), tgt, tgt_pool, cfg.n_candidates) {
                let margin = match cfg.metric {
                    Metric::Cosine => None,
                    Metric::Margin => {
                        match margin_from_parts(n.cosine, src_nn[sp], tgt_nn[tgt_pos[&n.index]]) {
                            Ok(m) => Some(m),
                            Err(_) => {
                                zero += 1;
                                continue;
                            }
                        }
                    }
                };
                out.push(Candidate {
                    src: i,
                    tgt: n.index,
                    pair: ScoredPair {
                        source: src.doc_ids[i].clone(),
                        target: tgt.doc_ids[n.index].clone(),
                        cosine: n.cosine,
                        margin,
                    },
                });
            }
            (out, zero)
        })
        .collect();
    let zero = per_source.iter().map(|(_, z)| z).sum();
    (per_source.into_iter().flat_map(|(c, _)| c).collect(), zero)
}

fn greedy_match(
    mut candidates: Vec<Candidate>,
    metric: Metric,
    src: &DocumentEmbeddings,
    tgt: &DocumentEmbeddings,
    src_taken: &mut [bool],
    tgt_taken: &mut [bool],
) -> Vec<ScoredPair> {
    candidates.sort_by(|a, b| {
        b.pair
            .score(metric)
            .total_cmp(&a.pair.score(metric))
            .then_with(|| src.doc_ids[a.src].cmp(&src.doc_ids[b.src]))
            .then_with(|| tgt.doc_ids[a.tgt].cmp(&tgt.doc_ids[b.tgt]))
    });
    let mut matched = Vec::new();
    for c in candidates {
        if !src_taken[c.src] && !tgt_taken[c.tgt] {
            src_taken[c.src] = true;
            tgt_taken[c.tgt] = true;
            matched.push(c.pair);
        }
    }
    matched
}

/// `|matched ∩ gold| / |gold|`.
pub fn recall(matched: &[(String, String)], gold: &GoldAlignment) -> Result<f64> {
    if gold.is_empty() {
        return Err(AlignError::EmptyGold);
    }
    let found: HashSet<(&str, &str)> = matched.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
    let hits = gold
        .pairs
        .iter()
        .filter(|(s, t)| found.contains(&(s.as_str(), t.as_str())))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}
