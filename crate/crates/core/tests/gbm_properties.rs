use asr_router::gbm::{
    mean_importance, train_binary, train_binary_traced, BinaryClassifier, Booster, Hyperparams, Matrix,
    Node,
};
use asr_router::modelio::{from_versioned_str, to_versioned_string, ModelIoError, KIND_CLASSIFIER};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(n: usize, d: usize, seed: u64) -> (Matrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // Noisy rule on the first two features; keep both classes present.
        let label = r[0] + 0.5 * r[1] + rng.gen_range(-0.5..0.5) > 0.0;
        y.push(if i < 2 { i == 0 } else { label });
        rows.push(r);
    }
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn full(n_rounds: usize, max_depth: usize, lr: f64) -> Hyperparams {
    Hyperparams {
        n_rounds,
        max_depth,
        learning_rate: lr,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_never_increases(
        seed in 0u64..1000,
        n in 20usize..200,
        depth in 1usize..5,
        lr in 0.05f64..1.0,
        lambda in 0.0f64..3.0,
    ) {
        let (x, y) = random_data(n, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        let hp = Hyperparams { l2_leaf: lambda, min_child_hessian: 0.0, ..full(30, depth, lr) };
        let (_, trace) = train_binary_traced(&x, &y, &w, &hp, seed).unwrap();
        for pair in trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn zero_weight_rows_are_invisible(seed in 0u64..1000, n in 10usize..120) {
        let (x, y) = random_data(n, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 11);
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mut keep = Vec::new();
        for (i, wi) in w.iter_mut().enumerate() {
            if i >= 2 && rng.gen_bool(0.3) {
                *wi = 0.0;
            } else {
                keep.push(i);
            }
        }
        let hp = full(15, 3, 0.3);
        let a = train_binary(&x, &y, &w, &hp, 5).unwrap();
        let xk = x.select_rows(&keep);
        let yk: Vec<bool> = keep.iter().map(|&i| y[i]).collect();
        let wk: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
        let b = train_binary(&xk, &yk, &wk, &hp, 5).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn weight_scale_free_without_regularization(seed in 0u64..1000, c in 0.01f64..100.0) {
        let (x, y) = random_data(150, 3, seed);
        let hp = Hyperparams { l2_leaf: 0.0, min_child_hessian: 0.0, ..full(10, 3, 0.3) };
        let a = train_binary(&x, &y, &vec![1.0; 150], &hp, 1).unwrap();
        let b = train_binary(&x, &y, &vec![c; 150], &hp, 1).unwrap();
        prop_assert!((a.base_logit - b.base_logit).abs() < 1e-9);
        prop_assert_eq!(a.trees.len(), b.trees.len());
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            prop_assert_eq!(ta.nodes.len(), tb.nodes.len());
            for (na, nb) in ta.nodes.iter().zip(&tb.nodes) {
                match (na, nb) {
                    (Node::Leaf { weight: wa, .. }, Node::Leaf { weight: wb, .. }) => {
                        prop_assert!((wa - wb).abs() < 1e-9, "{} vs {}", wa, wb);
                    }
                    (
                        Node::Split { feature: fa, threshold: ta, left: la, right: ra, .. },
                        Node::Split { feature: fb, threshold: tb, left: lb, right: rb, .. },
                    ) => {
                        prop_assert_eq!((fa, la, ra), (fb, lb, rb));
                        prop_assert_eq!(ta, tb);
                    }
                    _ => prop_assert!(false, "node kinds differ"),
                }
            }
        }
    }

    #[test]
    fn small_monotone_perturbations_do_not_change_predictions(seed in 0u64..1000) {
        let (x, y) = random_data(100, 2, seed);
        let b = train_binary(&x, &y, &vec![1.0; 100], &full(10, 3, 0.3), 2).unwrap();
        for j in 0..2 {
            let mut col: Vec<f64> = (0..100).map(|i| x.get(i, j)).collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            let gap = col.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let eps = 0.49 * gap;
            for i in 0..100 {
                let mut row = x.row(i).to_vec();
                let p = b.predict_proba(&row).unwrap();
                // Strictly increasing map moving every value by less than half the gap.
                row[j] += eps * (row[j] / 2.0).tanh();
                prop_assert_eq!(p, b.predict_proba(&row).unwrap());
            }
        }
    }
}

#[test]
fn positives_score_higher_than_negatives() {
    let (x, y) = random_data(400, 4, 3);
    let b = train_binary(&x, &y, &vec![1.0; 400], &full(30, 3, 0.2), 0).unwrap();
    let p = b.predict_batch(&x).unwrap();
    let mean = |cls: bool| {
        let v: Vec<f64> = p.iter().zip(&y).filter(|(_, y)| **y == cls).map(|(p, _)| *p).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(true) > mean(false));
    assert!(p.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn planted_feature_dominates_importance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<bool> = rows.iter().map(|r| r[0] > 0.0).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let b = train_binary(&x, &y, &vec![1.0; 1000], &full(30, 3, 0.3), 0).unwrap();
    let imp = b.feature_importance().unwrap();
    assert!(imp[0] >= 0.9, "{imp:?}");
    assert!(imp.iter().all(|&v| v >= 0.0));
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mean = mean_importance([&b, &b, &b]).unwrap();
    for (a, m) in imp.iter().zip(&mean) {
        assert!((a - m).abs() < 1e-15);
    }
    assert!(Booster::constant(6, 0.0, Hyperparams::default())
        .feature_importance()
        .is_err());
}

fn classifier() -> BinaryClassifier {
    let (x, y) = random_data(300, 5, 21);
    BinaryClassifier {
        challenger_id: "big".into(),
        pivot_id: "small".into(),
        schema_hash: "00ff".into(),
        booster: train_binary(&x, &y, &vec![1.0; 300], &full(40, 4, 0.2), 3).unwrap(),
    }
}

#[test]
fn save_load_round_trip() {
    let m = classifier();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.json");
    m.save(&path).unwrap();
    let back = BinaryClassifier::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let probe: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let d = (m.predict_proba(&probe).unwrap() - back.predict_proba(&probe).unwrap()).abs();
        worst = worst.max(d);
    }
    assert!(worst <= 1e-12, "{worst}");
    assert_eq!(back, m);
}

#[test]
fn altered_version_and_truncation_rejected() {
    let text = to_versioned_string(KIND_CLASSIFIER, &classifier());
    let p = std::path::Path::new("clf.json");
    let altered = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
    assert!(matches!(
        from_versioned_str::<BinaryClassifier>(p, &altered, KIND_CLASSIFIER),
        Err(ModelIoError::Version { .. })
    ));
    let truncated = &text[..text.len() / 2];
    assert!(matches!(
        from_versioned_str::<BinaryClassifier>(p, truncated, KIND_CLASSIFIER),
        Err(ModelIoError::Corrupt { .. })
    ));
    assert!(matches!(
        from_versioned_str::<BinaryClassifier>(p, &text, "router"),
        Err(ModelIoError::Kind { .. })
    ));
}
