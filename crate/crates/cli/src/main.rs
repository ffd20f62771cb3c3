//! `lawdr`: debias sentence embeddings, weight and pool them into documents,
//! and align documents across languages.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lawdr_core::align::Metric;
use lawdr_core::density::Kernel;
use lawdr_core::pooling::Pooling;

#[derive(Parser)]
#[command(name = "lawdr", version, about = "Cross-lingual document embedding and alignment pipeline")]
struct Cli {
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, env = "LAWDR_THREADS")]
    threads: Option<usize>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove a language's dominant subspace from its sentence embeddings.
    Debias(DebiasArgs),
    /// Compute per-sentence densities and inverse-density weights.
    Weights(WeightsArgs),
    /// Pool sentence embeddings into document embeddings.
    Pool(PoolArgs),
    /// Align two languages' document embeddings one-to-one.
    Align(AlignArgs),
    /// Compute recall of predicted pairs against gold pairs.
    Eval(EvalArgs),
    /// Train a linear language classifier and report held-out accuracy.
    ClassifyLang(ClassifyArgs),
    /// Export a 2-D PCA projection of two languages' sentence embeddings as CSV.
    VizPca(VizArgs),
    /// Run debias, weights, pool and align in one go.
    RunAll(Box<RunAllArgs>),
    /// Generate a synthetic bilingual corpus fixture.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DebiasArgs {
    /// Sentence embeddings (EMB1).
    #[arg(long)]
    emb: PathBuf,
    /// Manifest (JSON lines) describing the embedding rows.
    #[arg(long)]
    manifest: PathBuf,
    /// Subspace rank, or `auto` to select it with a language classifier.
    #[arg(long, default_value = "auto")]
    rank: String,
    /// The other language's sentence embeddings, required for `--rank auto`.
    #[arg(long)]
    other_lang: Option<PathBuf>,
    /// Accuracy threshold for `--rank auto`.
    #[arg(long, default_value_t = 0.55)]
    threshold: f64,
    /// Mean-center rows before estimating the subspace.
    #[arg(long)]
    center: bool,
    /// Seed for the rank-selection classifier split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the debiased embeddings.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the subspace basis; the JSON sidecar goes next to it.
    /// Defaults to `<out stem>.subspace.emb`.
    #[arg(long)]
    subspace_out: Option<PathBuf>,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// PCA dimension before density estimation.
    #[arg(long, default_value_t = 16)]
    d_reduced: usize,
    #[arg(long, default_value_t = Kernel::Tophat)]
    kernel: Kernel,
    /// Cross-validation folds for bandwidth selection.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fixed bandwidth; skips cross-validation.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weights TSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Weights TSV from `lawdr weights`, required for weighted pooling.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = Pooling::Weighted)]
    pooling: Pooling,
    /// Keep pooled vectors unnormalized.
    #[arg(long)]
    no_normalize: bool,
    /// Output document embeddings (EMB1); ids go to a `.json` sidecar next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// Source document embeddings written by `lawdr pool`.
    #[arg(long)]
    src: PathBuf,
    /// Target document embeddings written by `lawdr pool`.
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, default_value_t = Metric::Margin)]
    metric: Metric,
    /// Neighbors per side in the margin denominator.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Candidate targets per source document.
    #[arg(long, default_value_t = 16)]
    n_candidates: usize,
    /// Gold pairs TSV; enables recall.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Pairs matched beforehand (e.g. by URL), TSV.
    #[arg(long)]
    pre_aligned: Option<PathBuf>,
    /// Output alignment TSV.
    #[arg(long)]
    out: PathBuf,
    /// Output JSON summary (printed to stdout when omitted).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted pairs TSV (extra columns are ignored).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// First language's embeddings.
    #[arg(long)]
    a: PathBuf,
    /// Second language's embeddings.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "a")]
    a_lang: String,
    #[arg(long, default_value = "b")]
    b_lang: String,
    /// Also report accuracy on language and semantic components for this rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Training fraction.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    a_manifest: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    b_manifest: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    src_emb: PathBuf,
    #[arg(long)]
    src_manifest: PathBuf,
    #[arg(long)]
    tgt_emb: PathBuf,
    #[arg(long)]
    tgt_manifest: PathBuf,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    pre_aligned: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` config file; explicit flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// Pipeline settings; each overrides the config file when given.
#[derive(Args)]
struct ConfigOverrides {
    /// Debias before pooling (true/false).
    #[arg(long)]
    debias: Option<String>,
    /// Subspace rank or `auto`.
    #[arg(long)]
    rank: Option<String>,
    /// Accuracy threshold for automatic rank selection.
    #[arg(long)]
    threshold: Option<String>,
    /// Mean-center before subspace estimation (true/false).
    #[arg(long)]
    center: Option<String>,
    /// KDE kernel: tophat or gaussian.
    #[arg(long)]
    kernel: Option<String>,
    /// Bandwidth cross-validation folds.
    #[arg(long)]
    folds: Option<String>,
    /// PCA dimension before density estimation.
    #[arg(long)]
    d_reduced: Option<String>,
    /// KDE bandwidth or `auto`.
    #[arg(long)]
    bandwidth: Option<String>,
    /// Embeddings fed to the KDE: debiased or raw.
    #[arg(long)]
    density_source: Option<String>,
    /// mean or weighted.
    #[arg(long)]
    pooling: Option<String>,
    /// Unit-normalize document vectors (true/false).
    #[arg(long)]
    normalize: Option<String>,
    /// cosine or margin.
    #[arg(long)]
    metric: Option<String>,
    /// Margin neighbors per side.
    #[arg(long)]
    k: Option<String>,
    /// Candidate targets per source document.
    #[arg(long)]
    n_candidates: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl ConfigOverrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("debias", &self.debias),
            ("rank", &self.rank),
            ("threshold", &self.threshold),
            ("center", &self.center),
            ("kernel", &self.kernel),
            ("folds", &self.folds),
            ("d_reduced", &self.d_reduced),
            ("bandwidth", &self.bandwidth),
            ("density_source", &self.density_source),
            ("pooling", &self.pooling),
            ("normalize", &self.normalize),
            ("metric", &self.metric),
            ("k", &self.k),
            ("n_candidates", &self.n_candidates),
            ("seed", &self.seed),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for `<lang>.emb`, `<lang>.jsonl` and `gold.tsv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    docs: usize,
    #[arg(long, default_value_t = 2)]
    min_sentences: usize,
    #[arg(long, default_value_t = 5)]
    max_sentences: usize,
    /// Identical boilerplate sentences appended to every document.
    #[arg(long, default_value_t = 0)]
    boilerplate: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("lawdr: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let (stage, result) = match cli.command {
        Command::Debias(a) => ("debias", commands::debias(a)),
        Command::Weights(a) => ("weights", commands::weights(a)),
        Command::Pool(a) => ("pool", commands::pool(a)),
        Command::Align(a) => ("align", commands::align(a)),
        Command::Eval(a) => ("eval", commands::eval(a)),
        Command::ClassifyLang(a) => ("classify-lang", commands::classify_lang(a)),
        Command::VizPca(a) => ("viz-pca", commands::viz_pca(a)),
        Command::RunAll(a) => ("run-all", commands::run_all(*a, cli.threads)),
        Command::Synth(a) => ("synth", commands::synth(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lawdr {stage}: {}", error_chain(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins an error with its causes, skipping causes already spelled out in
/// the message before them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}
