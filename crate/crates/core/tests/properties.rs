use std::collections::BTreeMap;

use proptest::prelude::*;

use ood_core::adaptation::{cross_entropy_grad, ClusterHead};
use ood_core::clustering::cluster_accuracy;
use ood_core::config::{PseudoLabeler, RunConfig};
use ood_core::evaluation::{doubled_u_statistic, generate_synthetic, run_pipeline_with, PipelineInputs, SynthSpec};
use ood_core::io::{
    decode_embeddings, encode_embeddings, l2_normalize, load_embeddings, save_embeddings, DatasetManifest,
    EmbeddingMatrix, LabelKind, LabelVector, Split,
};
use ood_core::scoring::{fit_gaussians, knn_score, mahalanobis_score};

fn matrix(max_n: usize, max_d: usize) -> impl Strategy<Value = EmbeddingMatrix> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-10.0f32..10.0, n * d)
            .prop_filter("rows need a nonzero entry", move |v| v.chunks(d).all(|r| r.iter().any(|x| x.abs() > 1e-3)))
            .prop_map(move |v| EmbeddingMatrix::new(n, d, v).unwrap())
    })
}

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..20).prop_map(|v| v as f64 * 0.5), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emb_round_trip_is_exact(m in matrix(20, 8)) {
        let (back, _) = decode_embeddings(&encode_embeddings(&m)).unwrap();
        prop_assert_eq!(&back, &m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        save_embeddings(&m, &DatasetManifest::describe("p", Split::TestOut, "prop", &m), &path).unwrap();
        let (loaded, manifest) = load_embeddings(&path).unwrap();
        prop_assert_eq!(loaded, m);
        prop_assert_eq!(manifest.split, Split::TestOut);
    }

    #[test]
    fn l2_normalize_is_idempotent(m in matrix(20, 8)) {
        let once = l2_normalize(&m).unwrap();
        prop_assert!(once.max_norm_deviation() <= 1e-6);
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms(a in scores(60), b in scores(60)) {
        let u = doubled_u_statistic(&a, &b).unwrap();
        let f = |v: &[f64]| v.iter().map(|x| (x * 0.7).exp() + 3.0).collect::<Vec<_>>();
        prop_assert_eq!(u, doubled_u_statistic(&f(&a), &f(&b)).unwrap());
    }

    #[test]
    fn negated_scores_complement_the_statistic(a in scores(60), b in scores(60)) {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let u = doubled_u_statistic(&a, &b).unwrap();
        let u_neg = doubled_u_statistic(&neg(&a), &neg(&b)).unwrap();
        prop_assert_eq!(u + u_neg, 2 * a.len() as u128 * b.len() as u128);
    }

    #[test]
    fn cluster_accuracy_ignores_label_names(
        truth in prop::collection::vec(0usize..6, 1..80),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        pred in prop::collection::vec(0usize..6, 80),
    ) {
        let pred = &pred[..truth.len()];
        let t = LabelVector::new(truth.clone(), 6, LabelKind::GroundTruth).unwrap();
        let p = LabelVector::new(pred.to_vec(), 6, LabelKind::Pseudo).unwrap();
        let renamed = LabelVector::new(pred.iter().map(|&l| perm[l]).collect(), 6, LabelKind::Pseudo).unwrap();
        let acc = cluster_accuracy(&p, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert_eq!(acc, cluster_accuracy(&renamed, &t).unwrap());
    }

    #[test]
    fn knn_k1_matches_double_loop(train in matrix(40, 6), seed in 0u64..1000) {
        let train = l2_normalize(&train).unwrap();
        let d = train.d();
        let test_data: Vec<f32> = (0..5 * d).map(|i| ((i as u64 + seed) as f32 * 0.913).sin() + 0.05).collect();
        let test = l2_normalize(&EmbeddingMatrix::new(5, d, test_data).unwrap()).unwrap();
        let got = knn_score(&train, &test, 1).unwrap();
        for t in 0..test.n() {
            let mut best = f64::INFINITY;
            for j in 0..train.n() {
                let dot: f64 = test.row_f64(t).iter().zip(train.row_f64(j)).map(|(a, b)| a * b).sum();
                best = best.min(1.0 - dot);
            }
            prop_assert!((got.scores[t] - best).abs() <= 1e-12);
        }
    }

    #[test]
    fn mahalanobis_is_rotation_invariant(angle in 0.0f64..std::f64::consts::TAU, seed in 0u64..500) {
        let n = 24;
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let t = (i as u64 * 7 + seed) as f64;
                [(t * 0.37).sin() * 2.0 + (i % 2) as f64 * 4.0, (t * 0.71).cos() * 0.5]
            })
            .collect();
        let (c, s) = (angle.cos(), angle.sin());
        let rotate = |r: &[f64; 2]| [c * r[0] - s * r[1], s * r[0] + c * r[1]];
        let as_matrix = |rs: &[[f64; 2]]| EmbeddingMatrix::from_f64_rows(rs).unwrap();
        let labels = LabelVector::new((0..n).map(|i| i % 2).collect(), 2, LabelKind::Pseudo).unwrap();
        let test = [[1.0, 1.0], [-3.0, 0.5], [4.0, -2.0]];
        let rotated_rows: Vec<[f64; 2]> = rows.iter().map(rotate).collect();
        let rotated_test: Vec<[f64; 2]> = test.iter().map(rotate).collect();
        let base = mahalanobis_score(&fit_gaussians(&as_matrix(&rows), &labels, 0.0).unwrap(), &as_matrix(&test)).unwrap();
        let turned = mahalanobis_score(
            &fit_gaussians(&as_matrix(&rotated_rows), &labels, 0.0).unwrap(),
            &as_matrix(&rotated_test),
        )
        .unwrap();
        for (a, b) in base.scores.iter().zip(&turned.scores) {
            prop_assert!((a - b).abs() <= 1e-4 * a.max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences(seed in 0u64..10_000) {
        let (n, d, k) = (8, 3, 3);
        let inputs: Vec<f64> = (0..n * d).map(|i| ((i as u64 * 31 + seed) as f64 * 0.173).sin()).collect();
        let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % k).collect();
        let rows: Vec<usize> = (0..n).collect();
        let head = ClusterHead::init(d, 4, k, seed).unwrap();
        let (_, grad) = cross_entropy_grad(&head, &inputs, &labels, &rows);
        let h = 1e-6;
        for b in 0..4 {
            for i in 0..head.parameter_blocks()[b].len() {
                let mut plus = head.clone();
                plus.parameter_blocks_mut()[b][i] += h;
                let mut minus = head.clone();
                minus.parameter_blocks_mut()[b][i] -= h;
                let fd = (cross_entropy_grad(&plus, &inputs, &labels, &rows).0
                    - cross_entropy_grad(&minus, &inputs, &labels, &rows).0)
                    / (2.0 * h);
                let g = grad.parameter_blocks()[b][i];
                prop_assert!((g - fd).abs() <= 1e-6 * (1.0 + g.abs()), "block {} index {}: {} vs {}", b, i, g, fd);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn pipeline_is_deterministic(seed in 0u64..1000, kmeans in any::<bool>()) {
        let spec = SynthSpec { k_normal: 3, k_anom: 2, d: 8, n_train: 90, n_test_in: 30, n_test_out: 20, seed, ..SynthSpec::default() };
        let data = generate_synthetic(&spec).unwrap();
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.cluster.k = 3;
        cfg.scan.epochs = 2;
        cfg.adapt.epochs = 2;
        if kmeans {
            cfg.cluster.method = PseudoLabeler::Kmeans;
        }
        let inputs = PipelineInputs { train: &data.train, test_in: &data.test_in, test_out: &data.test_out, truth: Some(&data.train_truth) };
        let a = run_pipeline_with(&inputs, &cfg, BTreeMap::new()).unwrap();
        let b = run_pipeline_with(&inputs, &cfg, BTreeMap::new()).unwrap();
        prop_assert_eq!(a.report.to_json_without_wall_time().unwrap(), b.report.to_json_without_wall_time().unwrap());
    }
}
