use std::path::{Path, PathBuf};

use faer::Mat;
use nse::manifest::{self, HyperparamBlock, LayerEntry, TaskManifest};
use nse::npy::{self, Dtype, MatrixRecord};
use nse::CliError;
use nse_core::{null_space_projector, solve_null_space, solve_speed};
use proptest::prelude::*;

fn put(dir: &Path, name: &str, rows: usize, cols: usize, seed: usize) -> PathBuf {
    let m = Mat::from_fn(rows, cols, |i, j| {
        (((i * 31 + j * 17 + seed * 7) % 23) as f64 - 11.0) / 11.0
    });
    let file = PathBuf::from(format!("{name}.npy"));
    npy::write_matrix(&MatrixRecord::from_mat(name, m.as_ref(), Dtype::F32), dir.join(&file)).unwrap();
    file
}

fn manifest(dir: &Path, d0: usize, n_e: usize, n_star: usize, n_r: usize, inv: Option<usize>) -> PathBuf {
    let m = TaskManifest {
        layers: vec![LayerEntry {
            id: "mid.attn2.to_v".into(),
            weights: put(dir, "w", 16, d0, 1),
        }],
        erase: put(dir, "c1", d0, n_e, 2),
        anchor: put(dir, "c_star", d0, n_star, 3),
        retain: put(dir, "c0", d0, n_r, 4),
        invariants: inv.map(|n| put(dir, "c2", d0, n, 5)),
        hyperparams: HyperparamBlock::default(),
        seed: 9,
    };
    let path = dir.join("task.json");
    m.write(&path).unwrap();
    path
}

#[test]
fn dimensions_are_bookkept() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = manifest::load_task(manifest(dir.path(), 768, 3, 3, 50, None)).unwrap();
    let t = &loaded.task;
    assert_eq!((t.d0(), t.n_erase(), t.n_retain()), (768, 3, 50));
    assert_eq!(t.hp.seed, 9);
    assert_eq!(loaded.layer_dtypes, vec![Dtype::F32]);
    assert_eq!(t.layers[0].id, "mid.attn2.to_v");
}

#[test]
fn anchor_count_mismatch_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let err = manifest::load_task(manifest(dir.path(), 768, 3, 2, 50, None)).unwrap_err();
    assert!(matches!(err, CliError::Manifest { .. }));
    assert!(err.to_string().contains("anchor"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_invariants_reduce_to_null_space_solve() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = manifest::load_task(manifest(dir.path(), 24, 2, 2, 5, None)).unwrap();
    let t = &loaded.task;
    assert_eq!((t.invariants.d0(), t.invariants.len()), (24, 0));
    let p = null_space_projector(t.retain.as_ref(), t.hp.svd_tol).unwrap();
    let w = &t.layers[0];
    let a = solve_speed(w, &t.erase, &t.anchor, &p, &t.invariants, 0.0, Some(&t.retain)).unwrap();
    let b = solve_null_space(w, &t.erase, &t.anchor, &p, Some(&t.retain)).unwrap();
    assert_eq!(a.delta, b.delta);
}

#[test]
fn unknown_hyperparameter_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 8, 1, 1, 2, None);
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"svd_tol\"", "\"svd_tolerance\"");
    std::fs::write(&path, text).unwrap();
    let err = manifest::load_task(&path).unwrap_err();
    assert!(err.to_string().contains("svd_tolerance"), "{err}");
}

#[test]
fn missing_matrix_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 8, 1, 1, 2, None);
    std::fs::remove_file(dir.path().join("c0.npy")).unwrap();
    let err = manifest::load_task(&path).unwrap_err();
    assert!(matches!(err, CliError::Io { .. }));
    assert!(err.to_string().contains("c0.npy"));
}

#[test]
fn save_then_load_is_lossless_in_f64() {
    let spec = nse_core::SyntheticSpec::uniform(10, 6, 2, 2, 3, 4).with_invariants(2);
    let task = nse_core::gen_synthetic_task(&spec, nse_core::Hyperparams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = manifest::save_task(&task, dir.path(), Dtype::F64).unwrap();
    let back = manifest::load_task(path).unwrap().task;
    assert_eq!(back.hp, task.hp);
    for (a, b) in back.layers.iter().zip(&task.layers) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.weights(), b.weights());
    }
    assert_eq!(back.erase.as_ref(), task.erase.as_ref());
    assert_eq!(back.anchor.as_ref(), task.anchor.as_ref());
    assert_eq!(back.retain.as_ref(), task.retain.as_ref());
    assert_eq!(back.invariants.as_ref(), task.invariants.as_ref());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn accepts_exactly_the_consistent_manifests(
        d0 in 2usize..9,
        n_e in 1usize..4,
        n_star in 1usize..4,
        n_r in 0usize..5,
        anchor_rows_off in 0usize..2,
        retain_rows_off in 0usize..2,
        weight_cols_off in 0usize..2,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let m = TaskManifest {
            layers: vec![LayerEntry { id: "l".into(), weights: put(d, "w", 5, d0 + weight_cols_off, 1) }],
            erase: put(d, "c1", d0, n_e, 2),
            anchor: put(d, "c_star", d0 + anchor_rows_off, n_star, 3),
            retain: put(d, "c0", d0 + retain_rows_off, n_r, 4),
            invariants: None,
            hyperparams: HyperparamBlock::default(),
            seed: 0,
        };
        let path = d.join("m.json");
        m.write(&path).unwrap();
        let consistent = n_e == n_star && anchor_rows_off == 0 && retain_rows_off == 0 && weight_cols_off == 0;
        prop_assert_eq!(manifest::load_task(&path).is_ok(), consistent);
    }
}
