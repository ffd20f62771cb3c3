//! Sentence density estimation and inverse-density weights.
//!
//! Densities come from a fixed-bandwidth kernel density estimate over
//! PCA-reduced embeddings, with each point included in its own kernel sum.
//! Weights are `w = b / (b + P)` where `b` is half the mean density.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusManifest;
use crate::linalg::{pca_reduce, LinalgError, Matrix, Pca};
use crate::util::format_sig9;

/// Floor applied to held-out densities before taking logs during
/// bandwidth selection.
pub const LOG_DENSITY_FLOOR: f64 = 1e-12;
/// Number of values in the default bandwidth grid.
pub const DEFAULT_GRID_SIZE: usize = 16;
/// Pairs sampled to build the default bandwidth grid.
pub const GRID_PAIR_SAMPLE: usize = 1000;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("{points} points cannot be split into {folds} folds")]
    TooFewPoints { points: usize, folds: usize },
    #[error("cross-validation needs at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("all densities are zero")]
    AllZeroDensity,
    #[error("density {value} at row {row} is negative or not finite")]
    InvalidDensity { row: usize, value: f64 },
    #[error("no points to estimate a density from")]
    EmptyReference,
    #[error("dimension mismatch: reference has {expected} columns, queries have {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("weights file line {line}: {message}")]
    WeightsSyntax { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DensityError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// Uniform over the ball of radius `h`.
    #[default]
    Tophat,
    /// Isotropic normal with standard deviation `h`.
    Gaussian,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Tophat => "tophat",
            Kernel::Gaussian => "gaussian",
        })
    }
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tophat" => Ok(Kernel::Tophat),
            "gaussian" => Ok(Kernel::Gaussian),
            other => Err(format!("unknown kernel {other:?} (expected tophat or gaussian)")),
        }
    }
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    // V_d = 2π/d · V_{d-2}
    let (mut v, start) = if d.is_multiple_of(2) { (1.0, 2) } else { (2.0, 3) };
    let mut k = start;
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

/// Fixed-bandwidth kernel density estimate over a set of reference points.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    pub kernel: Kernel,
    pub bandwidth: f64,
    pub reference: Matrix,
}

impl KdeModel {
    pub fn new(kernel: Kernel, bandwidth: f64, reference: Matrix) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        if reference.rows() == 0 {
            return Err(DensityError::EmptyReference);
        }
        Ok(Self {
            kernel,
            bandwidth,
            reference,
        })
    }

    pub fn d_reduced(&self) -> usize {
        self.reference.cols()
    }

    /// Kernel normalizing constant `K_h(0)` for the Gaussian, `1/V(h)` for the tophat.
    fn normalizer(&self) -> f64 {
        let d = self.d_reduced() as i32;
        let h = self.bandwidth;
        match self.kernel {
            Kernel::Tophat => 1.0 / (unit_ball_volume(self.d_reduced()) * h.powi(d)),
            Kernel::Gaussian => (2.0 * std::f64::consts::PI * h * h).powf(-(d as f64) / 2.0),
        }
    }

    /// `P(x) = (1/N) Σⱼ K_h(x - refⱼ)` for each query row.
    pub fn density_at(&self, queries: &Matrix) -> Result<Vec<f64>> {
        if queries.cols() != self.d_reduced() {
            return Err(DensityError::DimMismatch {
                expected: self.d_reduced(),
                found: queries.cols(),
            });
        }
        let scale = self.normalizer() / self.reference.rows() as f64;
        let h2 = self.bandwidth * self.bandwidth;
        let kernel = self.kernel;
        let reference = &self.reference;
        let out = (0..queries.rows())
            .into_par_iter()
            .map(|i| {
                let q = queries.row(i);
                let mut acc = 0.0;
                for r in reference.row_iter() {
                    let d2 = sq_dist(q, r);
                    match kernel {
                        Kernel::Tophat => {
                            if d2 <= h2 {
                                acc += 1.0;
                            }
                        }
                        Kernel::Gaussian => acc += (-0.5 * d2 / h2).exp(),
                    }
                }
                acc * scale
            })
            .collect();
        Ok(out)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(DensityError::BadBandwidth(h));
    }
    Ok(())
}

/// Density of every row under the estimate built from all rows (self included).
pub fn estimate_density(reduced: &Matrix, kernel: Kernel, bandwidth: f64) -> Result<Vec<f64>> {
    let model = KdeModel::new(kernel, bandwidth, reduced.clone())?;
    model.density_at(reduced)
}

/// Default grid: log-spaced values between the 1st and 99th percentile of
/// distances over a seeded sample of point pairs.
pub fn default_bandwidth_grid(reduced: &Matrix, seed: u64) -> Vec<f64> {
    let n = reduced.rows();
    if n < 2 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut dists: Vec<f64> = (0..GRID_PAIR_SAMPLE)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            sq_dist(reduced.row(i), reduced.row(j)).sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let pct = |p: f64| dists[((p * (dists.len() - 1) as f64).round()) as usize];
    let mut lo = pct(0.01);
    let hi = pct(0.99);
    if lo <= 0.0 {
        match dists.iter().find(|&&d| d > 0.0) {
            Some(&d) => lo = d,
            None => return vec![1.0],
        }
    }
    if hi <= lo {
        return vec![lo];
    }
    let ratio = hi / lo;
    (0..DEFAULT_GRID_SIZE)
        .map(|i| lo * ratio.powf(i as f64 / (DEFAULT_GRID_SIZE - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSelection {
    pub bandwidth: f64,
    /// `(bandwidth, mean held-out log-density)` for each grid value, ascending.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid bandwidth maximizing mean held-out log-density under
/// `folds`-fold cross-validation. Ties go to the smaller bandwidth.
pub fn select_bandwidth(
    reduced: &Matrix,
    kernel: Kernel,
    folds: usize,
    grid: Option<&[f64]>,
    seed: u64,
) -> Result<BandwidthSelection> {
    if folds < 2 {
        return Err(DensityError::InvalidFolds(folds));
    }
    let n = reduced.rows();
    if n < folds {
        return Err(DensityError::TooFewPoints { points: n, folds });
    }
    let mut grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => default_bandwidth_grid(reduced, seed),
    };
    if grid.is_empty() {
        return Err(DensityError::EmptyGrid);
    }
    for &h in &grid {
        check_bandwidth(h)?;
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let splits: Vec<(Matrix, Matrix)> = (0..folds)
        .map(|f| {
            let train: Vec<&[f64]> = (0..n).filter(|&i| fold_of[i] != f).map(|i| reduced.row(i)).collect();
            let test: Vec<&[f64]> = (0..n).filter(|&i| fold_of[i] == f).map(|i| reduced.row(i)).collect();
            (Matrix::from_rows(&train), Matrix::from_rows(&test))
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &h in &grid {
        let mut total = 0.0;
        for (train, test) in &splits {
            let model = KdeModel::new(kernel, h, train.clone())?;
            for p in model.density_at(test)? {
                total += p.max(LOG_DENSITY_FLOOR).ln();
            }
        }
        let score = total / n as f64;
        scores.push((h, score));
        if score > best.1 {
            best = (h, score);
        }
    }
    Ok(BandwidthSelection {
        bandwidth: best.0,
        scores,
    })
}

/// Densities `P(s)`, the constant `b` and weights `w_s = b / (b + P(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceWeights {
    pub densities: Vec<f64>,
    pub b_constant: f64,
    pub weights: Vec<f64>,
}

impl SentenceWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Mean computed as an offset from the first value, so constant inputs give
/// their value back exactly.
fn shifted_mean(values: &[f64]) -> f64 {
    let first = values[0];
    let mut acc = 0.0;
    for v in values {
        acc += v - first;
    }
    first + acc / values.len() as f64
}

pub fn compute_weights(densities: Vec<f64>) -> Result<SentenceWeights> {
    if let Some((row, &value)) = densities
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(DensityError::InvalidDensity { row, value });
    }
    if densities.iter().all(|&p| p == 0.0) {
        return Err(DensityError::AllZeroDensity);
    }
    let b = shifted_mean(&densities) / 2.0;
    // 1 / (1 + P/b) == b / (b + P), and is exactly 1/3 when P == 2b.
    let weights = densities.iter().map(|&p| 1.0 / (1.0 + p / b)).collect();
    Ok(SentenceWeights {
        densities,
        b_constant: b,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    pub d_reduced: usize,
    pub kernel: Kernel,
    pub folds: usize,
    pub seed: u64,
    /// Skip cross-validation and use this bandwidth.
    pub bandwidth: Option<f64>,
    pub grid: Option<Vec<f64>>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            d_reduced: 16,
            kernel: Kernel::Tophat,
            folds: 5,
            seed: 0,
            bandwidth: None,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightResult {
    pub weights: SentenceWeights,
    pub bandwidth: f64,
    pub kernel: Kernel,
    /// PCA fitted before density estimation (`reduced` holds the projected rows).
    pub pca: Pca,
    /// Cross-validation scores, empty when the bandwidth was given or CV was skipped.
    pub cv_scores: Vec<(f64, f64)>,
}

/// PCA reduction, bandwidth selection, density estimation and weighting.
///
/// With fewer rows than folds, cross-validation is skipped and the middle
/// value of the default grid is used.
pub fn weight_pipeline(emb: &Matrix, cfg: &WeightConfig) -> Result<WeightResult> {
    if emb.rows() == 0 {
        return Err(DensityError::EmptyReference);
    }
    let pca = pca_reduce(emb, cfg.d_reduced, true)?;
    let (bandwidth, cv_scores) = match cfg.bandwidth {
        Some(h) => {
            check_bandwidth(h)?;
            (h, Vec::new())
        }
        None if pca.reduced.rows() < cfg.folds => {
            let grid = cfg
                .grid
                .clone()
                .unwrap_or_else(|| default_bandwidth_grid(&pca.reduced, cfg.seed));
            let h = *grid.get(grid.len() / 2).ok_or(DensityError::EmptyGrid)?;
            warn!(
                "{} rows is fewer than {} folds; skipping bandwidth selection (h = {h})",
                pca.reduced.rows(),
                cfg.folds
            );
            (h, Vec::new())
        }
        None => {
            let sel = select_bandwidth(
                &pca.reduced,
                cfg.kernel,
                cfg.folds,
                cfg.grid.as_deref(),
                cfg.seed,
            )?;
            (sel.bandwidth, sel.scores)
        }
    };
    let densities = estimate_density(&pca.reduced, cfg.kernel, bandwidth)?;
    let weights = compute_weights(densities)?;
    Ok(WeightResult {
        weights,
        bandwidth,
        kernel: cfg.kernel,
        pca,
        cv_scores,
    })
}

pub const WEIGHTS_HEADER: &str = "doc_id\tsentence_index\tdensity\tweight";

/// Writes the weights TSV (header line, 9 significant digits).
pub fn write_weights_tsv<W: Write>(
    manifest: &CorpusManifest,
    weights: &SentenceWeights,
    mut writer: W,
) -> io::Result<()> {
    writeln!(writer, "{WEIGHTS_HEADER}")?;
    for (row, id) in manifest.sentence_ids().iter().enumerate() {
        writeln!(
            writer,
            "{}\t{}\t{}\t{}",
            id.doc_id,
            id.sentence_index,
            format_sig9(weights.densities[row]),
            format_sig9(weights.weights[row]),
        )?;
    }
    writer.flush()
}

/// Reads a weights TSV, checking that its rows follow `manifest` order.
pub fn read_weights_tsv<R: BufRead>(manifest: &CorpusManifest, reader: R) -> Result<SentenceWeights> {
    let ids = manifest.sentence_ids();
    let mut densities = Vec::with_capacity(ids.len());
    let mut weights = Vec::with_capacity(ids.len());
    let syntax = |line: usize, message: String| DensityError::WeightsSyntax { line, message };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim_end() != WEIGHTS_HEADER {
                return Err(syntax(1, "missing header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(syntax(idx + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let row = densities.len();
        let expected = ids
            .get(row)
            .ok_or_else(|| syntax(idx + 1, "more rows than the manifest".into()))?;
        let sentence_index: usize = cols[1]
            .parse()
            .map_err(|e| syntax(idx + 1, format!("sentence_index: {e}")))?;
        if cols[0] != expected.doc_id || sentence_index != expected.sentence_index {
            return Err(syntax(
                idx + 1,
                format!(
                    "expected {}#{}, found {}#{}",
                    expected.doc_id, expected.sentence_index, cols[0], sentence_index
                ),
            ));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|e| syntax(idx + 1, format!("{what}: {e}")))
        };
        densities.push(parse(cols[2], "density")?);
        weights.push(parse(cols[3], "weight")?);
    }
    if densities.len() != ids.len() {
        return Err(syntax(
            densities.len() + 1,
            format!("{} rows, manifest has {}", densities.len(), ids.len()),
        ));
    }
    let b_constant = if densities.is_empty() {
        0.0
    } else {
        shifted_mean(&densities) / 2.0
    };
    Ok(SentenceWeights {
        densities,
        b_constant,
        weights,
    })
}
