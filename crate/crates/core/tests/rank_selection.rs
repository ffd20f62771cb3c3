use lawdr_core::debias::{select_rank, train_language_classifier, ClassifierConfig, RankSelection};
use lawdr_core::linalg::Matrix;
use lawdr_core::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn corpus() -> (Matrix, Matrix) {
    let c = generate(&SynthConfig::sentences(300)).unwrap();
    (c.source.embeddings.to_matrix(), c.target.embeddings.to_matrix())
}

#[test]
fn selected_rank_is_small_on_synthetic_data() {
    let (a, b) = corpus();
    let choice = select_rank(&a, &b, ("en", "fr"), &RankSelection::default()).unwrap();
    assert!(choice.m <= 4, "m = {}, trace {:?}", choice.m, choice.trace);
    assert!(choice.accuracy < 0.55);
}

#[test]
fn threshold_one_takes_the_first_candidate() {
    let (a, b) = corpus();
    let sel = RankSelection {
        threshold: 1.0 + f64::EPSILON,
        candidates: Some(vec![3, 5, 8]),
        ..RankSelection::default()
    };
    let choice = select_rank(&a, &b, ("en", "fr"), &sel).unwrap();
    assert_eq!(choice.m, 3);
    assert_eq!(choice.trace.len(), 1);
}

#[test]
fn identical_distributions_are_inseparable() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut draw = |n: usize| {
        let data = (0..n * 16).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(n, 16, data).unwrap()
    };
    let (a, b) = (draw(1000), draw(1000));
    let r = train_language_classifier(&a, &b, ("a", "b"), &ClassifierConfig::default()).unwrap();
    assert!((0.4..=0.6).contains(&r.test_accuracy), "accuracy {}", r.test_accuracy);
}
