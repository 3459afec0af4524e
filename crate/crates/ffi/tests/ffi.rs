use std::ffi::{CStr, CString};
use std::ptr;

use ood_core::adaptation::{extract_features, ClusterHead};
use ood_core::io::{l2_normalize, save_checkpoint, EmbeddingMatrix};
use ood_core::scoring::{confidence_score, knn_score};
use ood_ffi::*;

fn sample(n: usize, d: usize, phase: f32) -> Vec<f32> {
    (0..n * d).map(|i| (i as f32 * 0.61 + phase).sin() + 0.1).collect()
}

fn matrix(data: &[f32], n: usize, d: usize) -> *mut OodMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ood_matrix_from_data(data.as_ptr(), n, d, &mut m) }, OodStatus::Ok);
    m
}

fn normalized(data: &[f32], n: usize, d: usize) -> *mut OodMatrix {
    let raw = matrix(data, n, d);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ood_l2_normalize(raw, &mut out) }, OodStatus::Ok);
    unsafe { ood_matrix_free(raw) };
    out
}

fn last_error() -> String {
    let p = ood_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn matrix_round_trips_through_handle() {
    let data = sample(4, 3, 0.0);
    let m = matrix(&data, 4, 3);
    unsafe {
        assert_eq!((ood_matrix_rows(m), ood_matrix_cols(m)), (4, 3));
        let mut out = vec![0f32; 12];
        assert_eq!(ood_matrix_copy_data(m, out.as_mut_ptr(), out.len()), OodStatus::Ok);
        assert_eq!(out, data);
        let mut short = vec![0f32; 5];
        assert_eq!(ood_matrix_copy_data(m, short.as_mut_ptr(), 5), OodStatus::InvalidArgument);
        ood_matrix_free(m);
    }
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(ood_matrix_from_data(ptr::null(), 2, 2, &mut m), OodStatus::NullPointer);
        assert!(last_error().contains("data"));
        assert_eq!(ood_matrix_rows(ptr::null()), 0);
        let mut out = ptr::null_mut();
        assert_eq!(ood_l2_normalize(ptr::null(), &mut out), OodStatus::NullPointer);
        ood_matrix_free(ptr::null_mut());
        ood_head_free(ptr::null_mut());
    }
}

#[test]
fn non_finite_values_are_numerical_errors() {
    let mut data = sample(2, 2, 0.0);
    data[1] = f32::NAN;
    let mut m = ptr::null_mut();
    let status = unsafe { ood_matrix_from_data(data.as_ptr(), 2, 2, &mut m) };
    assert_eq!(status, OodStatus::Numerical);
    assert!(m.is_null());
}

#[test]
fn knn_matches_core() {
    let (train, test) = (sample(20, 5, 0.0), sample(7, 5, 1.3));
    let a = normalized(&train, 20, 5);
    let b = normalized(&test, 7, 5);
    let expected = knn_score(
        &l2_normalize(&EmbeddingMatrix::new(20, 5, train).unwrap()).unwrap(),
        &l2_normalize(&EmbeddingMatrix::new(7, 5, test).unwrap()).unwrap(),
        3,
    )
    .unwrap();
    let mut scores = vec![0.0; 7];
    unsafe {
        assert_eq!(ood_knn_score(a, b, 3, scores.as_mut_ptr(), 7), OodStatus::Ok);
        ood_matrix_free(a);
        ood_matrix_free(b);
    }
    assert_eq!(scores, expected.scores);
}

#[test]
fn dimension_mismatch_is_invalid_argument() {
    let a = normalized(&sample(5, 3, 0.0), 5, 3);
    let b = normalized(&sample(5, 4, 0.0), 5, 4);
    let mut scores = vec![0.0; 5];
    unsafe {
        assert_eq!(ood_knn_score(a, b, 1, scores.as_mut_ptr(), 5), OodStatus::InvalidArgument);
        assert!(last_error().contains("dimension"));
        ood_matrix_free(a);
        ood_matrix_free(b);
    }
}

#[test]
fn roc_auc_of_separated_scores_is_one() {
    let (a, b) = ([0.1, 0.2, 0.3], [0.5, 0.9]);
    let mut auc = 0.0;
    unsafe {
        assert_eq!(ood_roc_auc(a.as_ptr(), 3, b.as_ptr(), 2, &mut auc), OodStatus::Ok);
        assert_eq!(auc, 1.0);
        assert_eq!(ood_roc_auc(a.as_ptr(), 3, b.as_ptr(), 0, &mut auc), OodStatus::InvalidArgument);
    }
}

#[test]
fn kmeans_labels_score_perfect_against_themselves() {
    let data: Vec<f32> = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]].concat();
    let m = matrix(&data, 4, 2);
    let mut labels = vec![0usize; 4];
    let mut acc = 0.0;
    unsafe {
        assert_eq!(ood_kmeans(m, 2, 50, 7, labels.as_mut_ptr(), 4), OodStatus::Ok);
        ood_matrix_free(m);
        let truth = [2usize, 2, 0, 0];
        assert_eq!(
            ood_cluster_accuracy(labels.as_ptr(), 2, truth.as_ptr(), 3, 4, &mut acc),
            OodStatus::Ok
        );
    }
    assert_eq!(labels[0], labels[1]);
    assert_eq!(labels[2], labels[3]);
    assert_ne!(labels[0], labels[2]);
    assert_eq!(acc, 1.0);
}

#[test]
fn mahalanobis_scores_are_finite_and_labels_checked() {
    let train = normalized(&sample(40, 3, 0.0), 40, 3);
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let far: Vec<f32> = vec![-1.0, -1.0, -1.0];
    let near: Vec<f32> = sample(1, 3, 0.0);
    let test = normalized(&[near, far].concat(), 2, 3);
    let mut scores = vec![0.0; 2];
    unsafe {
        let status = ood_mahalanobis_score(train, labels.as_ptr(), 2, 1e-3, test, scores.as_mut_ptr(), 2);
        assert_eq!(status, OodStatus::Ok);
        let bad = [0usize, 9];
        let status = ood_mahalanobis_score(train, bad.as_ptr(), 2, 1e-3, test, scores.as_mut_ptr(), 2);
        assert_eq!(status, OodStatus::InvalidArgument);
        ood_matrix_free(train);
        ood_matrix_free(test);
    }
    assert!(scores.iter().all(|s| s.is_finite()));
}

#[test]
fn head_checkpoint_scores_and_extracts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("head.ckpt");
    let head = ClusterHead::init(4, 6, 3, 11).unwrap();
    save_checkpoint(&head, &path).unwrap();
    let data = sample(5, 4, 0.4);
    let core_m = EmbeddingMatrix::new(5, 4, data.clone()).unwrap();
    let m = matrix(&data, 5, 4);
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(ood_head_load(c_path.as_ptr(), &mut h), OodStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(ood_head_dims(h, dims.as_mut_ptr()), OodStatus::Ok);
        assert_eq!(dims, [4, 6, 3]);

        let mut scores = vec![0.0; 5];
        assert_eq!(ood_confidence_score(h, m, scores.as_mut_ptr(), 5), OodStatus::Ok);
        assert_eq!(scores, confidence_score(&head, &core_m).unwrap().scores);

        let mut feats = ptr::null_mut();
        assert_eq!(ood_extract_features(h, m, &mut feats), OodStatus::Ok);
        assert_eq!((ood_matrix_rows(feats), ood_matrix_cols(feats)), (5, 6));
        let mut out = vec![0f32; 30];
        assert_eq!(ood_matrix_copy_data(feats, out.as_mut_ptr(), 30), OodStatus::Ok);
        assert_eq!(out, extract_features(&head, &core_m).unwrap().into_vec());

        ood_matrix_free(feats);
        ood_head_free(h);
        ood_matrix_free(m);
    }
}

#[test]
fn save_load_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.emb");
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let name = CString::new("demo").unwrap();
    let split = CString::new("train_normal").unwrap();
    let data = sample(3, 2, 0.0);
    let m = matrix(&data, 3, 2);
    unsafe {
        assert_eq!(ood_matrix_save(m, c_path.as_ptr(), name.as_ptr(), split.as_ptr()), OodStatus::Ok);
        let bad_split = CString::new("nowhere").unwrap();
        assert_eq!(
            ood_matrix_save(m, c_path.as_ptr(), name.as_ptr(), bad_split.as_ptr()),
            OodStatus::InvalidArgument
        );
        ood_matrix_free(m);

        let mut loaded = ptr::null_mut();
        assert_eq!(ood_matrix_load(c_path.as_ptr(), &mut loaded), OodStatus::Ok);
        let mut out = vec![0f32; 6];
        assert_eq!(ood_matrix_copy_data(loaded, out.as_mut_ptr(), 6), OodStatus::Ok);
        assert_eq!(out, data);
        ood_matrix_free(loaded);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        let mut again = ptr::null_mut();
        assert_eq!(ood_matrix_load(c_path.as_ptr(), &mut again), OodStatus::Format);

        let missing = CString::new(dir.path().join("none.emb").to_str().unwrap()).unwrap();
        assert_eq!(ood_matrix_load(missing.as_ptr(), &mut again), OodStatus::Io);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/ood.h");
    for name in [
        "ood_last_error_message",
        "ood_matrix_from_data",
        "ood_matrix_load",
        "ood_matrix_save",
        "ood_matrix_free",
        "ood_knn_score",
        "ood_mahalanobis_score",
        "ood_roc_auc",
        "ood_kmeans",
        "ood_cluster_accuracy",
        "ood_head_load",
        "ood_confidence_score",
        "ood_extract_features",
        "OOD_STATUS_NUMERICAL",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
