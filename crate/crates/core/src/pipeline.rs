//! End-to-end pipeline: debias, weight, pool, align.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::align::{align, AlignConfig, AlignError, AlignmentResult, Metric};
use crate::corpus::{self, Corpus, CorpusError, CorpusManifest, EmbeddingMatrix, GoldAlignment};
use crate::debias::{
    debias_matrix, estimate_subspace, save_subspace, select_rank, DebiasError, LanguageSubspace,
    RankSelection, SubspaceOptions,
};
use crate::density::{weight_pipeline, write_weights_tsv, DensityError, Kernel, WeightConfig, WeightResult};
use crate::linalg::Matrix;
use crate::pooling::{pool_documents, save_documents, DocumentEmbeddings, Pooling, PoolingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("debias: {0}")]
    Debias(#[from] DebiasError),
    #[error("weights: {0}")]
    Density(#[from] DensityError),
    #[error("pool: {0}")]
    Pooling(#[from] PoolingError),
    #[error("align: {0}")]
    Align(#[from] AlignError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSpec {
    Fixed(usize),
    /// Smallest power-of-two rank whose debiased classifier accuracy falls below the threshold.
    Auto,
}

impl fmt::Display for RankSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankSpec::Fixed(m) => write!(f, "{m}"),
            RankSpec::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for RankSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RankSpec::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) => Err("rank must be at least 1".into()),
            Ok(m) => Ok(RankSpec::Fixed(m)),
            Err(_) => Err(format!("rank must be a positive integer or auto, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DensitySource {
    #[default]
    Debiased,
    Raw,
}

impl fmt::Display for DensitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensitySource::Debiased => "debiased",
            DensitySource::Raw => "raw",
        })
    }
}

impl FromStr for DensitySource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "debiased" => Ok(DensitySource::Debiased),
            "raw" => Ok(DensitySource::Raw),
            other => Err(format!("unknown density source {other:?} (expected debiased or raw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub debias: bool,
    pub rank: RankSpec,
    pub threshold: f64,
    pub center: bool,
    pub kernel: Kernel,
    pub folds: usize,
    pub d_reduced: usize,
    /// Fixed KDE bandwidth; `None` selects it by cross-validation.
    pub bandwidth: Option<f64>,
    pub density_source: DensitySource,
    pub pooling: Pooling,
    pub normalize: bool,
    pub metric: Metric,
    pub k: usize,
    pub n_candidates: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            debias: true,
            rank: RankSpec::Auto,
            threshold: 0.55,
            center: false,
            kernel: Kernel::Tophat,
            folds: 5,
            d_reduced: 16,
            bandwidth: None,
            density_source: DensitySource::Debiased,
            pooling: Pooling::Weighted,
            normalize: true,
            metric: Metric::Margin,
            k: 4,
            n_candidates: 16,
            seed: 0,
            threads: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "debias",
    "rank",
    "threshold",
    "center",
    "kernel",
    "folds",
    "d_reduced",
    "bandwidth",
    "density_source",
    "pooling",
    "normalize",
    "metric",
    "k",
    "n_candidates",
    "seed",
    "threads",
];

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn parse_auto<T: FromStr>(v: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

impl PipelineConfig {
    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "debias" => self.debias = parse_bool(value)?,
            "rank" => self.rank = value.parse()?,
            "threshold" => self.threshold = parse_num(value)?,
            "center" => self.center = parse_bool(value)?,
            "kernel" => self.kernel = value.parse()?,
            "folds" => self.folds = parse_num(value)?,
            "d_reduced" => self.d_reduced = parse_num(value)?,
            "bandwidth" => self.bandwidth = parse_auto(value)?,
            "density_source" => self.density_source = value.parse()?,
            "pooling" => self.pooling = value.parse()?,
            "normalize" => self.normalize = parse_bool(value)?,
            "metric" => self.metric = value.parse()?,
            "k" => self.k = parse_num(value)?,
            "n_candidates" => self.n_candidates = parse_num(value)?,
            "seed" => self.seed = parse_num(value)?,
            "threads" => self.threads = parse_auto(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Checks each stage's preconditions.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(format!("threshold must lie in (0, 1], got {}", self.threshold));
        }
        if self.folds < 2 {
            return Err("folds must be at least 2".into());
        }
        if self.d_reduced == 0 {
            return Err("d_reduced must be positive".into());
        }
        if let Some(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(format!("bandwidth must be positive, got {h}"));
            }
        }
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        if self.n_candidates < self.k {
            return Err("n_candidates must be at least k".into());
        }
        if self.threads == Some(0) {
            return Err("threads must be positive".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| PipelineError::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()
            .map_err(|message| PipelineError::Config { line: 0, message })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The config-file form; `parse(to_config_string())` gives `self` back.
    pub fn to_config_string(&self) -> String {
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("debias", self.debias.to_string());
        put("rank", self.rank.to_string());
        put("threshold", self.threshold.to_string());
        put("center", self.center.to_string());
        put("kernel", self.kernel.to_string());
        put("folds", self.folds.to_string());
        put("d_reduced", self.d_reduced.to_string());
        put("bandwidth", auto(self.bandwidth.map(|h| h.to_string())));
        put("density_source", self.density_source.to_string());
        put("pooling", self.pooling.to_string());
        put("normalize", self.normalize.to_string());
        put("metric", self.metric.to_string());
        put("k", self.k.to_string());
        put("n_candidates", self.n_candidates.to_string());
        put("seed", self.seed.to_string());
        put("threads", auto(self.threads.map(|t| t.to_string())));
        s
    }

    pub fn weight_config(&self) -> WeightConfig {
        WeightConfig {
            d_reduced: self.d_reduced,
            kernel: self.kernel,
            folds: self.folds,
            seed: self.seed,
            bandwidth: self.bandwidth,
            grid: None,
        }
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            metric: self.metric,
            k: self.k,
            n_candidates: self.n_candidates,
        }
    }

    pub fn rank_selection(&self) -> RankSelection {
        RankSelection {
            threshold: self.threshold,
            subspace: self.subspace_options(),
            classifier: crate::debias::ClassifierConfig {
                seed: self.seed,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn subspace_options(&self) -> SubspaceOptions {
        SubspaceOptions { center: self.center }
    }
}

/// Everything one language side produces.
#[derive(Debug, Clone)]
pub struct SideOutput {
    pub lang: String,
    pub manifest: CorpusManifest,
    pub subspace: Option<LanguageSubspace>,
    /// Sentence embeddings after debiasing (the input when debiasing is off).
    pub sentences: Matrix,
    pub weights: Option<WeightResult>,
    pub docs: DocumentEmbeddings,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: PipelineConfig,
    /// Rank used for debiasing, when enabled.
    pub m: Option<usize>,
    /// `(m, accuracy)` pairs tried by automatic rank selection.
    pub rank_trace: Vec<(usize, f64)>,
    pub source: SideOutput,
    pub target: SideOutput,
    pub alignment: AlignmentResult,
    pub gold: Option<GoldAlignment>,
}

fn choose_rank(cfg: &PipelineConfig, src: &Matrix, tgt: &Matrix, langs: (&str, &str)) -> Result<(usize, Vec<(usize, f64)>)> {
    match cfg.rank {
        RankSpec::Fixed(m) => Ok((m, Vec::new())),
        RankSpec::Auto => {
            let choice = select_rank(src, tgt, langs, &cfg.rank_selection())?;
            info!("selected rank m = {} (accuracy {:.4})", choice.m, choice.accuracy);
            Ok((choice.m, choice.trace))
        }
    }
}

fn run_side(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    raw: Matrix,
    m: Option<usize>,
) -> Result<SideOutput> {
    let lang = corpus.language().to_string();
    let (subspace, sentences) = match m {
        Some(m) => {
            let sub = estimate_subspace(&raw, &lang, m, cfg.subspace_options())?;
            let debiased = debias_matrix(&raw, &sub)?;
            (Some(sub), debiased)
        }
        None => (None, raw.clone()),
    };
    let weights = match cfg.pooling {
        Pooling::Mean => None,
        Pooling::Weighted => {
            let density_input = match cfg.density_source {
                DensitySource::Debiased => &sentences,
                DensitySource::Raw => &raw,
            };
            let w = weight_pipeline(density_input, &cfg.weight_config())?;
            info!("{lang}: KDE bandwidth {}", w.bandwidth);
            Some(w)
        }
    };
    let docs = pool_documents(
        &sentences,
        &corpus.manifest,
        cfg.pooling,
        weights.as_ref().map(|w| &w.weights),
        cfg.normalize,
    )?;
    Ok(SideOutput {
        lang,
        manifest: corpus.manifest.clone(),
        subspace,
        sentences,
        weights,
        docs,
    })
}

/// Runs debias, weights, pooling and alignment for a source/target pair.
pub fn run_all(
    source: &Corpus,
    target: &Corpus,
    gold: Option<&GoldAlignment>,
    pre_aligned: Option<&[(String, String)]>,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    cfg.validate()
        .map_err(|message| PipelineError::Config { line: 0, message })?;
    let src_raw = source.embeddings.to_matrix();
    let tgt_raw = target.embeddings.to_matrix();
    let (m, rank_trace) = if cfg.debias {
        let (m, trace) = choose_rank(cfg, &src_raw, &tgt_raw, (source.language(), target.language()))?;
        (Some(m), trace)
    } else {
        (None, Vec::new())
    };
    let src = run_side(cfg, source, src_raw, m)?;
    let tgt = run_side(cfg, target, tgt_raw, m)?;
    let alignment = align(&src.docs, &tgt.docs, &cfg.align_config(), gold, pre_aligned)?;
    if let Some(r) = alignment.recall {
        info!("recall {r:.4}");
    }
    Ok(RunOutput {
        config: cfg.clone(),
        m,
        rank_trace,
        source: src,
        target: tgt,
        alignment,
        gold: gold.cloned(),
    })
}

#[derive(Serialize)]
struct SideSummary<'a> {
    lang: &'a str,
    documents: usize,
    sentences: usize,
    bandwidth: Option<f64>,
    singular_values: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a PipelineConfig,
    m: Option<usize>,
    rank_trace: &'a [(usize, f64)],
    source: SideSummary<'a>,
    target: SideSummary<'a>,
    alignment: crate::align::AlignmentSummary,
}

fn side_summary(s: &SideOutput) -> SideSummary<'_> {
    SideSummary {
        lang: &s.lang,
        documents: s.docs.len(),
        sentences: s.sentences.rows(),
        bandwidth: s.weights.as_ref().map(|w| w.bandwidth),
        singular_values: s.subspace.as_ref().map(|sub| sub.singular_values.as_slice()),
    }
}

impl RunOutput {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(RunSummary {
            config: &self.config,
            m: self.m,
            rank_trace: &self.rank_trace,
            source: side_summary(&self.source),
            target: side_summary(&self.target),
            alignment: self.alignment.summary(self.gold.as_ref()),
        })
        .expect("summary serializes")
    }

    /// Writes every intermediate artifact plus `alignment.tsv`,
    /// `summary.json` and `config.txt` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for side in [&self.source, &self.target] {
            let lang = &side.lang;
            if let Some(sub) = &side.subspace {
                let emb = dir.join(format!("{lang}.debiased.emb"));
                corpus::save_embeddings(&EmbeddingMatrix::from_matrix(&side.sentences)?, &emb)?;
                let (basis, sidecar) = (dir.join(format!("{lang}.subspace.emb")), dir.join(format!("{lang}.subspace.json")));
                save_subspace(sub, &basis, &sidecar)?;
                written.extend([emb, basis, sidecar]);
            }
            if let Some(w) = &side.weights {
                let path = dir.join(format!("{lang}.weights.tsv"));
                let file = File::create(&path).map_err(io_err(&path))?;
                write_weights_tsv(&side.manifest, &w.weights, BufWriter::new(file)).map_err(io_err(&path))?;
                written.push(path);
            }
            let (emb, sidecar) = (dir.join(format!("{lang}.docs.emb")), dir.join(format!("{lang}.docs.json")));
            save_documents(&side.docs, &emb, &sidecar)?;
            written.extend([emb, sidecar]);
        }
        let path = dir.join("alignment.tsv");
        let file = File::create(&path).map_err(io_err(&path))?;
        self.alignment.write_tsv(BufWriter::new(file)).map_err(io_err(&path))?;
        written.push(path);

        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&self.summary_json()).expect("summary serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);

        let path = dir.join("config.txt");
        let mut f = File::create(&path).map_err(io_err(&path))?;
        f.write_all(self.config.to_config_string().as_bytes()).map_err(io_err(&path))?;
        written.push(path);
        Ok(written)
    }
}
