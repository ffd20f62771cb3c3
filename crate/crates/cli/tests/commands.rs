use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lawdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lawdr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = lawdr(args);
    assert!(out.status.success(), "lawdr {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Fixture {
    fn new(docs: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        ok(&["-q", "synth", "--out", dir.join("fx").to_str().unwrap(), "--docs", &docs.to_string()]);
        Fixture { _tmp: tmp, dir }
    }

    fn fx(&self, name: &str) -> String {
        self.dir.join("fx").join(name).to_str().unwrap().to_string()
    }

    fn out(&self, name: &str) -> String {
        self.dir.join(name).to_str().unwrap().to_string()
    }
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn eval_identical_pairs_is_full_recall() {
    let f = Fixture::new(10);
    let v = ok(&["eval", "--pred", &f.fx("gold.tsv"), "--gold", &f.fx("gold.tsv")]);
    assert_eq!(v["recall"], 1.0);
    assert_eq!(v["gold_pairs"], 10);
}

#[test]
fn missing_input_exits_one_and_names_path() {
    let out = lawdr(&["debias", "--emb", "/nonexistent/x.emb", "--manifest", "/nonexistent/x.jsonl", "--rank", "1", "--out", "/tmp/never.emb"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/x.emb"), "{err}");
    assert!(err.starts_with("lawdr debias:"), "{err}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = lawdr(&["align", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_flags() {
    let expected: &[(&str, &[&str])] = &[
        ("debias", &["--emb", "--manifest", "--rank", "--other-lang", "--threshold", "--center", "--out", "--subspace-out"]),
        ("weights", &["--d-reduced", "--kernel", "--folds", "--bandwidth", "--seed"]),
        ("pool", &["--weights", "--pooling", "--no-normalize"]),
        ("align", &["--src", "--tgt", "--metric", "--k", "--n-candidates", "--gold", "--pre-aligned", "--summary"]),
        ("eval", &["--pred", "--gold"]),
        ("classify-lang", &["--a", "--b", "--rank", "--split"]),
        ("viz-pca", &["--a-manifest", "--b-manifest", "--out"]),
        ("run-all", &["--config", "--rank", "--kernel", "--density-source", "--pooling", "--metric", "--threads"]),
        ("synth", &["--docs", "--boilerplate", "--dim", "--noise"]),
    ];
    for (cmd, flags) in expected {
        let out = lawdr(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in *flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn auto_rank_stays_small() {
    let f = Fixture::new(60);
    let v = ok(&[
        "-q", "debias", "--emb", &f.fx("en.emb"), "--manifest", &f.fx("en.jsonl"), "--rank", "auto",
        "--other-lang", &f.fx("fr.emb"), "--out", &f.out("en.debiased.emb"),
    ]);
    let m = v["m"].as_u64().unwrap();
    assert!((1..=2).contains(&m), "m = {m}");
    assert!(Path::new(&f.out("en.debiased.subspace.emb")).exists());
    assert!(Path::new(&f.out("en.debiased.subspace.json")).exists());
}

#[test]
fn flag_overrides_config_file() {
    let f = Fixture::new(30);
    let cfg = f.out("run.conf");
    std::fs::write(&cfg, "# test\nk = 2\nrank = 2\nmetric = margin\n").unwrap();
    let v = ok(&[
        "-q", "run-all", "--src-emb", &f.fx("en.emb"), "--src-manifest", &f.fx("en.jsonl"), "--tgt-emb",
        &f.fx("fr.emb"), "--tgt-manifest", &f.fx("fr.jsonl"), "--config", &cfg, "--k", "3", "--out", &f.out("run"),
    ]);
    let written = read(f.out("run/config.txt"));
    assert!(written.lines().any(|l| l == "k = 3"), "{written}");
    assert!(written.lines().any(|l| l == "rank = 2"), "{written}");
    assert_eq!(v["alignment"]["k"], 3, "{v}");
}

#[test]
fn written_config_round_trips() {
    let f = Fixture::new(20);
    let run = |out: &str, extra: &[&str]| {
        let files = [f.fx("en.emb"), f.fx("en.jsonl"), f.fx("fr.emb"), f.fx("fr.jsonl")];
        let mut args = vec![
            "-q", "run-all", "--src-emb", &files[0], "--src-manifest", &files[1], "--tgt-emb", &files[2],
            "--tgt-manifest", &files[3],
        ];
        args.extend_from_slice(extra);
        let out = f.out(out);
        args.extend_from_slice(&["--out", &out]);
        ok(&args);
    };
    run("first", &["--rank", "2", "--threshold", "0.6123456789012345", "--kernel", "gaussian", "--bandwidth", "0.37"]);
    let first = read(f.out("first/config.txt"));
    run("second", &["--config", &f.out("first/config.txt")]);
    assert_eq!(first, read(f.out("second/config.txt")));
    assert_eq!(read(f.out("first/alignment.tsv")), read(f.out("second/alignment.tsv")));
}

#[test]
fn stage_chain_matches_run_all() {
    let f = Fixture::new(40);
    let seed = "3";
    for lang in ["en", "fr"] {
        let deb = f.out(&format!("{lang}.debiased.emb"));
        let w = f.out(&format!("{lang}.weights.tsv"));
        let manifest = f.fx(&format!("{lang}.jsonl"));
        ok(&["-q", "debias", "--emb", &f.fx(&format!("{lang}.emb")), "--manifest", &manifest, "--rank", "2", "--out", &deb]);
        ok(&["-q", "weights", "--emb", &deb, "--manifest", &manifest, "--seed", seed, "--out", &w]);
        ok(&["-q", "pool", "--emb", &deb, "--manifest", &manifest, "--weights", &w, "--out", &f.out(&format!("{lang}.docs.emb"))]);
    }
    ok(&[
        "-q", "align", "--src", &f.out("en.docs.emb"), "--tgt", &f.out("fr.docs.emb"), "--gold", &f.fx("gold.tsv"),
        "--out", &f.out("chain.tsv"),
    ]);
    ok(&[
        "-q", "run-all", "--src-emb", &f.fx("en.emb"), "--src-manifest", &f.fx("en.jsonl"), "--tgt-emb",
        &f.fx("fr.emb"), "--tgt-manifest", &f.fx("fr.jsonl"), "--rank", "2", "--seed", seed, "--out", &f.out("all"),
    ]);
    let pairs = |text: String| -> Vec<(String, String)> {
        text.lines()
            .map(|l| {
                let c: Vec<&str> = l.split('\t').collect();
                (c[0].to_string(), c[1].to_string())
            })
            .collect()
    };
    assert_eq!(pairs(read(f.out("chain.tsv"))), pairs(read(f.out("all/alignment.tsv"))));
    // Densities differ in the last digits because the staged chain reads the
    // debiased vectors back as f32; the resulting weights must agree.
    let weights = |text: String| -> Vec<String> {
        text.lines()
            .map(|l| {
                let c: Vec<&str> = l.split('\t').collect();
                format!("{}\t{}\t{}", c[0], c[1], c[3])
            })
            .collect()
    };
    assert_eq!(weights(read(f.out("en.weights.tsv"))), weights(read(f.out("all/en.weights.tsv"))));
}

#[test]
fn pre_aligned_pairs_are_kept() {
    let f = Fixture::new(20);
    let gold = read(f.fx("gold.tsv"));
    let first = gold.lines().next().unwrap();
    let pre = f.out("pre.tsv");
    std::fs::write(&pre, format!("{first}\n")).unwrap();
    ok(&[
        "-q", "run-all", "--src-emb", &f.fx("en.emb"), "--src-manifest", &f.fx("en.jsonl"), "--tgt-emb",
        &f.fx("fr.emb"), "--tgt-manifest", &f.fx("fr.jsonl"), "--pre-aligned", &pre, "--rank", "2", "--out", &f.out("run"),
    ]);
    let tsv = read(f.out("run/alignment.tsv"));
    let line = tsv.lines().next().unwrap();
    assert!(line.starts_with(first) && line.ends_with("\turl"), "{line}");
    assert_eq!(tsv.lines().count(), 20);
}
