//! Invariants of each pipeline stage, checked on random inputs.

use std::cmp::Ordering;

use lawdr_core::align::{align, knn_cosine, recall, AlignConfig, Metric};
use lawdr_core::corpus::{CorpusManifest, DocumentRecord, EmbeddingMatrix, GoldAlignment};
use lawdr_core::debias::{decompose, estimate_subspace, SubspaceOptions};
use lawdr_core::density::{compute_weights, select_bandwidth, weight_pipeline, Kernel, SentenceWeights, WeightConfig};
use lawdr_core::linalg::{dot, project_out, Matrix};
use lawdr_core::pooling::{pool_documents, pool_mean, pool_weighted, DocumentEmbeddings, Pooling};
use proptest::prelude::*;

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn unit_docs(prefix: &'static str, n: usize, dim: usize) -> impl Strategy<Value = DocumentEmbeddings> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n).prop_filter_map("zero row", move |rows| {
        let mut data = Vec::with_capacity(n * dim);
        for r in rows {
            let norm = dot(&r, &r).sqrt();
            if norm < 1e-3 {
                return None;
            }
            data.extend(r.iter().map(|x| x / norm));
        }
        Some(DocumentEmbeddings {
            doc_ids: (0..n).map(|i| format!("{prefix}{i:03}")).collect(),
            data: Matrix::from_vec(n, dim, data).unwrap(),
            pooling: Pooling::Mean,
            normalized: true,
        })
    })
}

fn doc_pair() -> impl Strategy<Value = (DocumentEmbeddings, DocumentEmbeddings)> {
    (2usize..20, 2usize..20, 2usize..8).prop_flat_map(|(ns, nt, dim)| (unit_docs("s", ns, dim), unit_docs("t", nt, dim)))
}

fn manifest(counts: &[usize]) -> CorpusManifest {
    let mut start = 0;
    let docs = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let d = DocumentRecord {
                doc_id: format!("d{i}"),
                sentence_start: start,
                sentence_count: c,
                url: None,
            };
            start += c;
            d
        })
        .collect();
    CorpusManifest {
        language: "xx".into(),
        docs,
    }
}

/// Straightforward little-endian writer used as a format reference.
fn reference_emb1(dim: usize, data: &[f32]) -> Vec<u8> {
    let mut out = b"EMB1".to_vec();
    out.extend([1u8, 0, 0, 0]);
    out.extend((dim as u32).to_le_bytes());
    out.extend(((data.len() / dim) as u32).to_le_bytes());
    for v in data {
        out.extend(v.to_bits().to_le_bytes());
    }
    out
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emb1_bytes_round_trip(dim in 1usize..9, rows in 0usize..9, seed in prop::collection::vec(-1e6f32..1e6, 81)) {
        let data: Vec<f32> = seed.into_iter().take(dim * rows).collect();
        let m = EmbeddingMatrix::new(dim, data.clone()).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        prop_assert_eq!(&bytes, &reference_emb1(dim, &data));
        let back = EmbeddingMatrix::read_from(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn project_out_is_orthogonal_and_idempotent(m in matrix(3..=12, 2..=8), k in 1usize..4) {
        let k = k.min(m.cols()).min(m.rows());
        let sub = estimate_subspace(&m, "xx", k, SubspaceOptions::default()).unwrap();
        for row in m.row_iter() {
            let once = project_out(row, &sub.basis).unwrap();
            for i in 0..sub.basis.k() {
                prop_assert!(dot(&once, sub.basis.vector(i)).abs() <= 1e-9 * (1.0 + dot(row, row).sqrt()));
            }
            let twice = project_out(&once, &sub.basis).unwrap();
            prop_assert!(close(&once, &twice, 1e-9));
        }
    }

    #[test]
    fn decomposition_reconstructs(m in matrix(3..=12, 2..=8), k in 1usize..4) {
        let k = k.min(m.cols()).min(m.rows());
        let sub = estimate_subspace(&m, "xx", k, SubspaceOptions::default()).unwrap();
        for (a, b) in m.row_iter().zip(m.row_iter().skip(1)) {
            let da = decompose(a, &sub).unwrap();
            let db = decompose(b, &sub).unwrap();
            let sum: Vec<f64> = da.language_component.iter().zip(&da.semantic_component).map(|(x, y)| x + y).collect();
            prop_assert!(close(&sum, a, 1e-12));
            // <a, b> splits into language and semantic inner products.
            let split = dot(&da.language_component, &db.language_component) + dot(&da.semantic_component, &db.semantic_component);
            prop_assert!((split - dot(a, b)).abs() <= 1e-9 * (1.0 + dot(a, a).sqrt() * dot(b, b).sqrt()));
        }
    }

    #[test]
    fn weights_scale_invariant_and_in_range(p in prop::collection::vec(1e-6f64..1e3, 1..40), exp in -20i32..20) {
        let c = 2f64.powi(exp);
        let w = compute_weights(p.clone()).unwrap();
        let ws = compute_weights(p.iter().map(|x| x * c).collect()).unwrap();
        for (a, b) in w.weights.iter().zip(&ws.weights) {
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(*a > 0.0 && *a < 1.0);
        }
    }

    #[test]
    fn weights_decrease_with_density(p in prop::collection::vec(0.0f64..1e3, 2..40)) {
        prop_assume!(p.iter().any(|&x| x > 0.0));
        let w = compute_weights(p.clone()).unwrap();
        for i in 0..p.len() {
            for j in 0..p.len() {
                match p[i].partial_cmp(&p[j]).unwrap() {
                    Ordering::Less => prop_assert!(w.weights[i] > w.weights[j]),
                    Ordering::Equal => prop_assert_eq!(w.weights[i], w.weights[j]),
                    Ordering::Greater => prop_assert!(w.weights[i] < w.weights[j]),
                }
            }
        }
    }

    #[test]
    fn pooling_is_linear(counts in prop::collection::vec(1usize..5, 1..6), seed in prop::collection::vec(-5.0f64..5.0, 80), alpha in -3.0f64..3.0) {
        let man = manifest(&counts);
        let n: usize = counts.iter().sum();
        let dim = 4;
        let x = Matrix::from_vec(n, dim, seed[..n * dim].to_vec()).unwrap();
        let y = Matrix::from_vec(n, dim, seed.iter().rev().take(n * dim).copied().collect()).unwrap();
        let mix = Matrix::from_vec(n, dim, x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a + alpha * b).collect()).unwrap();
        let w = compute_weights((0..n).map(|i| 1.0 + i as f64).collect()).unwrap();
        let (px, py, pm) = (pool_weighted(&x, &man, &w).unwrap(), pool_weighted(&y, &man, &w).unwrap(), pool_weighted(&mix, &man, &w).unwrap());
        let expect: Vec<f64> = px.data.as_slice().iter().zip(py.data.as_slice()).map(|(a, b)| a + alpha * b).collect();
        prop_assert!(close(pm.data.as_slice(), &expect, 1e-12));
    }

    #[test]
    fn uniform_weights_pool_to_the_mean_direction(counts in prop::collection::vec(1usize..5, 1..6), seed in prop::collection::vec(-5.0f64..5.0, 80)) {
        let man = manifest(&counts);
        let n: usize = counts.iter().sum();
        let x = Matrix::from_vec(n, 4, seed[..n * 4].to_vec()).unwrap();
        let w = compute_weights(vec![0.25; n]).unwrap();
        let a = pool_documents(&x, &man, Pooling::Weighted, Some(&w), true).unwrap();
        let b = pool_documents(&x, &man, Pooling::Mean, None, true).unwrap();
        prop_assert!(close(a.data.as_slice(), b.data.as_slice(), 1e-12));
    }

    #[test]
    fn mean_pool_ignores_sentence_order(counts in prop::collection::vec(1usize..5, 1..6), seed in prop::collection::vec(-5.0f64..5.0, 80)) {
        let man = manifest(&counts);
        let n: usize = counts.iter().sum();
        let x = Matrix::from_vec(n, 4, seed[..n * 4].to_vec()).unwrap();
        let mut rows: Vec<Vec<f64>> = x.row_iter().map(<[f64]>::to_vec).collect();
        for d in &man.docs {
            rows[d.rows()].reverse();
        }
        let a = pool_mean(&x, &man).unwrap();
        let b = pool_mean(&Matrix::from_rows(&rows), &man).unwrap();
        prop_assert!(close(a.data.as_slice(), b.data.as_slice(), 1e-12));
    }

    #[test]
    fn knn_matches_sorting((q, p) in doc_pair(), k in 1usize..6) {
        let k = k.min(p.len());
        let got = knn_cosine(&q, &p, k).unwrap();
        for (i, nn) in got.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = (0..p.len()).map(|j| (dot(q.row(i), p.row(j)), j)).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| p.doc_ids[a.1].cmp(&p.doc_ids[b.1])));
            let want: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
            let idx: Vec<usize> = nn.iter().map(|n| n.index).collect();
            prop_assert_eq!(idx, want);
        }
    }

    #[test]
    fn alignment_is_one_to_one_and_sorted((s, t) in doc_pair(), k in 1usize..5, margin in any::<bool>()) {
        let cfg = AlignConfig { metric: if margin { Metric::Margin } else { Metric::Cosine }, k, n_candidates: 16 };
        let r = align(&s, &t, &cfg, None, None).unwrap();
        let mut src: Vec<&String> = r.matched.iter().map(|p| &p.source).collect();
        let mut tgt: Vec<&String> = r.matched.iter().map(|p| &p.target).collect();
        src.sort();
        src.dedup();
        tgt.sort();
        tgt.dedup();
        prop_assert_eq!(src.len(), r.matched.len());
        prop_assert_eq!(tgt.len(), r.matched.len());
        // Greedy acceptance order is non-increasing in score.
        for w in r.matched.windows(2) {
            prop_assert!(w[0].score(cfg.metric) >= w[1].score(cfg.metric));
        }
    }

    #[test]
    fn margin_alignment_is_scale_invariant((s, t) in doc_pair(), k in 1usize..5, exp in -4i32..4) {
        let c = 2f64.powi(exp);
        let scale = |d: &DocumentEmbeddings| {
            let mut d = d.clone();
            d.data.scale(c);
            d
        };
        let cfg = AlignConfig { metric: Metric::Margin, k, n_candidates: 16 };
        let a = align(&s, &t, &cfg, None, None).unwrap();
        let b = align(&scale(&s), &scale(&t), &cfg, None, None).unwrap();
        prop_assert_eq!(a.pairs(), b.pairs());
        for (x, y) in a.matched.iter().zip(&b.matched) {
            prop_assert_eq!(x.margin, y.margin);
        }
    }

    #[test]
    fn recall_grows_with_more_correct_pairs(n in 1usize..30, hits in prop::collection::vec(any::<bool>(), 30)) {
        let gold: Vec<(String, String)> = (0..n).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let g = GoldAlignment::new(gold.clone()).unwrap();
        let mut pred: Vec<(String, String)> = Vec::new();
        let mut last = 0.0;
        for (i, pair) in gold.iter().enumerate() {
            pred.push(if hits[i] { pair.clone() } else { (pair.0.clone(), "nope".into()) });
            let r = recall(&pred, &g).unwrap();
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert!((0.0..=1.0).contains(&last));
    }
}

#[test]
fn first_match_has_the_best_margin() {
    // Two well-separated clusters per side; the dominant pair wins first.
    let s = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.6, 0.8]]);
    let t = Matrix::from_rows(&[[0.0, 0.8, 0.6], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
    let docs = |p: &str, m: Matrix| DocumentEmbeddings {
        doc_ids: (0..3).map(|i| format!("{p}{i}")).collect(),
        data: m,
        pooling: Pooling::Mean,
        normalized: true,
    };
    let r = align(&docs("s", s), &docs("t", t), &AlignConfig { metric: Metric::Margin, k: 1, n_candidates: 3 }, None, None).unwrap();
    assert_eq!((r.matched[0].source.as_str(), r.matched[0].target.as_str()), ("s0", "t2"));
    assert_eq!(r.matched[0].margin, Some(0.5));
}

#[test]
fn cross_validation_prefers_a_local_bandwidth() {
    // Two tight clusters 20 apart: a bandwidth spanning both is never best.
    let mut rows = Vec::new();
    for i in 0..40 {
        let jitter = (i as f64 * 0.37).sin() * 0.3;
        let centre = if i % 2 == 0 { 0.0 } else { 20.0 };
        rows.push([centre + jitter, (i as f64 * 0.71).cos() * 0.3]);
    }
    let grid = [0.1, 0.5, 1.0, 5.0, 10.0, 25.0, 50.0];
    for kernel in [Kernel::Tophat, Kernel::Gaussian] {
        let sel = select_bandwidth(&Matrix::from_rows(&rows), kernel, 5, Some(&grid), 1).unwrap();
        assert!(sel.bandwidth < 5.0, "{kernel}: {}", sel.bandwidth);
    }
}

#[test]
fn duplicated_sentence_gets_the_smallest_weight() {
    let mut rows: Vec<Vec<f64>> = (0..60)
        .map(|i| (0..6).map(|j| ((i * 7 + j * 13) as f64 * 0.61).sin() * 3.0).collect())
        .collect();
    let dup = vec![0.5, -0.25, 1.0, 0.0, 0.75, -1.0];
    for _ in 0..8 {
        rows.push(dup.clone());
    }
    let cfg = WeightConfig { d_reduced: 6, ..WeightConfig::default() };
    let r = weight_pipeline(&Matrix::from_rows(&rows), &cfg).unwrap();
    let SentenceWeights { weights, .. } = r.weights;
    let dup_w = weights[60];
    assert!(weights[60..].iter().all(|&w| w == dup_w));
    let others = weights[..60].iter().copied().fold(f64::INFINITY, f64::min);
    assert!(dup_w < others, "duplicate {dup_w} vs others {others}");
}
