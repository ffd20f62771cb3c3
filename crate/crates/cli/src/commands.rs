use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde_json::json;

use lawdr_core::align::{self, AlignConfig};
use lawdr_core::corpus::{self, Corpus};
use lawdr_core::debias::{self, ClassifierConfig, RankSelection, SubspaceOptions};
use lawdr_core::density::{self, WeightConfig};
use lawdr_core::pipeline::{self, PipelineConfig, RankSpec};
use lawdr_core::pooling::{self, Pooling};
use lawdr_core::synth::{self, SynthConfig};
use lawdr_core::viz;

use super::{
    AlignArgs, ClassifyArgs, DebiasArgs, EvalArgs, PoolArgs, RunAllArgs, SynthArgs, VizArgs,
    WeightsArgs,
};

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn sidecar_path(emb: &Path) -> PathBuf {
    emb.with_extension("json")
}

pub fn debias(a: DebiasArgs) -> Result<()> {
    let corpus = Corpus::load(&a.emb, &a.manifest)?;
    let lang = corpus.language().to_string();
    let emb = corpus.embeddings.to_matrix();
    let opts = SubspaceOptions { center: a.center };
    let rank: RankSpec = a.rank.parse().map_err(|e: String| anyhow!(e))?;
    let (m, trace) = match rank {
        RankSpec::Fixed(m) => (m, Vec::new()),
        RankSpec::Auto => {
            let other_path = a
                .other_lang
                .as_ref()
                .ok_or_else(|| anyhow!("--rank auto needs --other-lang"))?;
            let other = corpus::load_embeddings(other_path)?.to_matrix();
            let sel = RankSelection {
                threshold: a.threshold,
                subspace: opts,
                classifier: ClassifierConfig {
                    seed: a.seed,
                    ..Default::default()
                },
                ..Default::default()
            };
            let choice = debias::select_rank(&emb, &other, (&lang, "other"), &sel)?;
            (choice.m, choice.trace)
        }
    };
    let sub = debias::estimate_subspace(&emb, &lang, m, opts)?;
    info!("{lang}: removing rank m={} subspace", sub.m);
    let debiased = debias::debias_corpus(&corpus.embeddings, &sub)?;
    corpus::save_embeddings(&debiased, &a.out)?;
    let basis = a
        .subspace_out
        .clone()
        .unwrap_or_else(|| a.out.with_extension("subspace.emb"));
    let sidecar = sidecar_path(&basis);
    debias::save_subspace(&sub, &basis, &sidecar)?;
    print_json(&json!({
        "lang": lang,
        "m": sub.m,
        "rank": a.rank,
        "threshold": a.threshold,
        "center": a.center,
        "rank_trace": trace,
        "singular_values": sub.singular_values,
        "out": a.out,
        "subspace": basis,
        "subspace_sidecar": sidecar,
    }))
}

pub fn weights(a: WeightsArgs) -> Result<()> {
    let corpus = Corpus::load(&a.emb, &a.manifest)?;
    let cfg = WeightConfig {
        d_reduced: a.d_reduced,
        kernel: a.kernel,
        folds: a.folds,
        seed: a.seed,
        bandwidth: a.bandwidth,
        grid: None,
    };
    let result = density::weight_pipeline(&corpus.embeddings.to_matrix(), &cfg)?;
    info!("{}: bandwidth {}", corpus.language(), result.bandwidth);
    let mut w = create(&a.out)?;
    density::write_weights_tsv(&corpus.manifest, &result.weights, &mut w)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    print_json(&json!({
        "lang": corpus.language(),
        "kernel": a.kernel,
        "d_reduced": result.pca.basis.k(),
        "folds": a.folds,
        "seed": a.seed,
        "bandwidth": result.bandwidth,
        "b_constant": result.weights.b_constant,
        "out": a.out,
    }))
}

pub fn pool(a: PoolArgs) -> Result<()> {
    let corpus = Corpus::load(&a.emb, &a.manifest)?;
    let weights = match (&a.weights, a.pooling) {
        (Some(path), _) => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            Some(
                density::read_weights_tsv(&corpus.manifest, BufReader::new(file))
                    .with_context(|| path.display().to_string())?,
            )
        }
        (None, Pooling::Weighted) => bail!("weighted pooling needs --weights"),
        (None, Pooling::Mean) => None,
    };
    let docs = pooling::pool_documents(
        &corpus.embeddings.to_matrix(),
        &corpus.manifest,
        a.pooling,
        weights.as_ref(),
        !a.no_normalize,
    )?;
    let sidecar = sidecar_path(&a.out);
    pooling::save_documents(&docs, &a.out, &sidecar)?;
    print_json(&json!({
        "lang": corpus.language(),
        "pooling": a.pooling,
        "normalized": docs.normalized,
        "documents": docs.len(),
        "out": a.out,
        "sidecar": sidecar,
    }))
}

pub fn align(a: AlignArgs) -> Result<()> {
    let src = pooling::load_documents(&a.src, sidecar_path(&a.src))?;
    let tgt = pooling::load_documents(&a.tgt, sidecar_path(&a.tgt))?;
    let gold = a.gold.as_ref().map(corpus::load_gold).transpose()?;
    let pre = a.pre_aligned.as_ref().map(corpus::load_pairs).transpose()?;
    let requested = AlignConfig {
        metric: a.metric,
        k: a.k,
        n_candidates: a.n_candidates,
    };
    let result = align::align(&src, &tgt, &requested, gold.as_ref(), pre.as_deref())?;
    let mut w = create(&a.out)?;
    result
        .write_tsv(&mut w)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    let summary = json!({
        "requested": requested,
        "result": result.summary(gold.as_ref()),
    });
    match &a.summary {
        Some(path) => {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, &summary)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => print_json(&summary)?,
    }
    if let Some(r) = result.recall {
        info!("recall {r:.4}");
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let pred = corpus::load_pairs(&a.pred)?;
    let gold = corpus::load_gold(&a.gold)?;
    let r = align::recall(&pred, &gold)?;
    print_json(&json!({
        "recall": r,
        "predicted": pred.len(),
        "gold_pairs": gold.len(),
    }))
}

pub fn classify_lang(a: ClassifyArgs) -> Result<()> {
    let ma = corpus::load_embeddings(&a.a)?.to_matrix();
    let mb = corpus::load_embeddings(&a.b)?.to_matrix();
    let cfg = ClassifierConfig {
        split: a.split,
        seed: a.seed,
        ..Default::default()
    };
    let langs = (a.a_lang.as_str(), a.b_lang.as_str());
    let report = debias::train_language_classifier(&ma, &mb, langs, &cfg)?;
    let mut out = json!({
        "classes": [a.a_lang, a.b_lang],
        "split": a.split,
        "seed": a.seed,
        "test_accuracy": report.test_accuracy,
        "train_size": report.train_size,
        "test_size": report.test_size,
    });
    if let Some(m) = a.rank {
        let opts = SubspaceOptions::default();
        let sa = debias::estimate_subspace(&ma, langs.0, m, opts)?;
        let sb = debias::estimate_subspace(&mb, langs.1, m, opts)?;
        let bias = debias::language_bias_report(&ma, &mb, &sa, &sb, &cfg)?;
        out["rank"] = json!(m);
        out["components"] = serde_json::to_value(bias)?;
    }
    print_json(&out)
}

pub fn viz_pca(a: VizArgs) -> Result<()> {
    let ca = Corpus::load(&a.a, &a.a_manifest)?;
    let cb = Corpus::load(&a.b, &a.b_manifest)?;
    let (ma, mb) = (ca.embeddings.to_matrix(), cb.embeddings.to_matrix());
    let (ia, ib) = (ca.manifest.sentence_ids(), cb.manifest.sentence_ids());
    let scatter = viz::pca_scatter((ca.language(), &ma, &ia), (cb.language(), &mb, &ib))?;
    let mut w = create(&a.out)?;
    scatter
        .write_csv(&mut w)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    let sep = scatter.separation();
    info!("centroid distance / within-language std = {:.4}", sep.ratio);
    print_json(&json!({ "out": a.out, "separation": sep }))
}

pub fn run_all(a: RunAllArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in a.overrides.pairs() {
        cfg.set(key, value).map_err(|e| anyhow!("--{}: {e}", key.replace('_', "-")))?;
    }
    cfg.threads = threads;
    cfg.validate().map_err(|e| anyhow!(e))?;

    let src = Corpus::load(&a.src_emb, &a.src_manifest)?;
    let tgt = Corpus::load(&a.tgt_emb, &a.tgt_manifest)?;
    let gold = a.gold.as_ref().map(corpus::load_gold).transpose()?;
    let pre = a.pre_aligned.as_ref().map(corpus::load_pairs).transpose()?;
    let out = pipeline::run_all(&src, &tgt, gold.as_ref(), pre.as_deref(), &cfg)?;
    out.write_to_dir(&a.out)?;
    print_json(&out.summary_json())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        dim: a.dim,
        n_docs: a.docs,
        min_sentences: a.min_sentences,
        max_sentences: a.max_sentences,
        boilerplate: a.boilerplate,
        noise: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpus = synth::generate(&cfg)?;
    let paths = corpus.write_to_dir(&a.out)?;
    print_json(&json!({
        "documents": a.docs,
        "source_emb": paths.source_emb,
        "source_manifest": paths.source_manifest,
        "target_emb": paths.target_emb,
        "target_manifest": paths.target_manifest,
        "gold": paths.gold,
    }))
}
