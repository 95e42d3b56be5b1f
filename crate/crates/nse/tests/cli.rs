use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faer::Mat;
use nse::engine;
use nse::manifest::{self, TaskManifest};
use nse::npy::{self, Dtype, MatrixRecord};
use nse_core::{gen_synthetic_task, ConceptMatrix, ConceptRole, Hyperparams, SyntheticSpec};

fn nse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nse"))
        .args(args)
        .env("NSE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn synthetic(dir: &Path, dtype: Dtype, seed: u64) -> PathBuf {
    let spec = SyntheticSpec {
        d0: 24,
        layer_dims: vec![16, 20, 12],
        n_erase: 3,
        n_retain: 10,
        n_invariants: 2,
        seed,
    };
    let task = gen_synthetic_task(&spec, Hyperparams::default()).unwrap();
    manifest::save_task(&task, dir, dtype).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn edit_matches_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 7);
    let out = dir.path().join("out");
    let res = nse(&["edit", "--manifest", s(&m), "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    for key in ["total_e1=", "max_e0=", "max_invariant_residual=", "wall_time="] {
        assert!(stdout.contains(key), "{stdout}");
    }

    let loaded = manifest::load_task(&m).unwrap();
    let edits = engine::run_edit(&loaded.task, 1).unwrap();
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    for (k, edit) in edits.iter().enumerate() {
        let id = &edit.delta.layer_id;
        let expected = npy::encode(&MatrixRecord::from_mat(
            id.clone(),
            edit.delta.delta.as_ref(),
            Dtype::F64,
        ))
        .unwrap();
        let written = std::fs::read(out.join(format!("{id}.delta.npy"))).unwrap();
        assert_eq!(written, expected, "delta for {id}");
        let weights = npy::read_matrix(out.join(format!("{id}.weights.npy"))).unwrap();
        assert_eq!(weights.to_mat(), edit.edited.weights().to_owned());
        let d = &diag[k];
        assert_eq!(d["layer_id"], id.as_str());
        assert_eq!(d["e1"].as_f64().unwrap(), edit.delta.diagnostics.e1);
        assert_eq!(d["e0"].as_f64().unwrap(), edit.delta.diagnostics.e0);
        assert_eq!(
            d["invariant_residual"].as_f64().unwrap(),
            edit.delta.diagnostics.invariant_residual
        );
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F32, 8);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(nse(&["edit", "--manifest", s(&m), "--out", s(&a), "--threads", "1"])
        .status
        .success());
    assert!(nse(&["edit", "--manifest", s(&m), "--out", s(&b), "--threads", "8"])
        .status
        .success());
    for id in ["layer00", "layer01", "layer02"] {
        for suffix in ["delta", "weights"] {
            let name = format!("{id}.{suffix}.npy");
            assert_eq!(
                std::fs::read(a.join(&name)).unwrap(),
                std::fs::read(b.join(&name)).unwrap()
            );
        }
        let w = npy::read_matrix(a.join(format!("{id}.weights.npy"))).unwrap();
        assert_eq!(w.dtype(), Dtype::F32);
    }
}

#[test]
fn neutral_anchor_leaves_weights_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F32, 9);
    std::fs::copy(dir.path().join("erase.npy"), dir.path().join("anchor.npy")).unwrap();
    let out = dir.path().join("out");
    let res = nse(&["edit", "--manifest", s(&m), "--out", s(&out)]);
    assert!(res.status.success());
    for id in ["layer00", "layer01", "layer02"] {
        let original = std::fs::read(dir.path().join(format!("w_{id}.npy"))).unwrap();
        let edited = std::fs::read(out.join(format!("{id}.weights.npy"))).unwrap();
        assert_eq!(original, edited);
    }
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    for d in diag.as_array().unwrap() {
        assert_eq!(d["e1"].as_f64(), Some(0.0));
        assert_eq!(d["e0"].as_f64(), Some(0.0));
        assert_eq!(d["invariant_residual"].as_f64(), Some(0.0));
    }
}

#[test]
fn mismatched_anchor_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 10);
    let anchor = Mat::<f64>::from_fn(24, 2, |i, j| (i + j) as f64);
    npy::write_matrix(
        &MatrixRecord::from_mat("anchor", anchor.as_ref(), Dtype::F64),
        dir.path().join("anchor.npy"),
    )
    .unwrap();
    let res = nse(&["edit", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("anchor"), "{stderr}");
}

#[test]
fn degenerate_invariants_exit_3_unless_regularized() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 11);
    let col: Vec<f64> = (0..24).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
    let dup = ConceptMatrix::from_columns(ConceptRole::Invariant, 24, &[col.clone(), col]).unwrap();
    npy::write_matrix(
        &MatrixRecord::from_mat("invariants", dup.as_ref(), Dtype::F64),
        dir.path().join("invariants.npy"),
    )
    .unwrap();
    let out = dir.path().join("o");
    let res = nse(&["edit", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("layer00") && stderr.contains("lambda_inv"), "{stderr}");
    let res = nse(&["edit", "--manifest", s(&m), "--out", s(&out), "--set", "lambda_inv=0.5"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn unknown_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 12);
    let res = nse(&[
        "edit",
        "--manifest",
        s(&m),
        "--out",
        s(&dir.path().join("o")),
        "--set",
        "gamma=1",
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 13);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(nse(&["refine", "--manifest", s(&m), "--out", s(&a)]).status.success());
    assert!(nse(&["refine", "--manifest", s(&m), "--out", s(&b), "--seed", "99"])
        .status
        .success());
    let read = |d: &Path| std::fs::read(d.join("layer00.retain.npy")).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("refine.json")).unwrap()).unwrap();
    if !report[0]["augmented"]["kept_indices"].as_array().unwrap().is_empty() {
        assert_ne!(read(&a), read(&b));
    }
    let manifest_seed = TaskManifest::read(&m).unwrap().seed;
    assert_eq!(manifest_seed, 13);
}

#[test]
fn refine_writes_retain_sets_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 14);
    let out = dir.path().join("r");
    let res = nse(&["refine", "--manifest", s(&m), "--out", s(&out)]);
    assert!(res.status.success());
    let loaded = manifest::load_task(&m).unwrap();
    let refinements = engine::run_refine(&loaded.task, 1).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("refine.json")).unwrap()).unwrap();
    for (k, r) in refinements.iter().enumerate() {
        let id = &loaded.task.layers[k].id;
        let rec = npy::read_matrix(out.join(format!("{id}.retain.npy"))).unwrap();
        assert_eq!(rec.to_mat(), r.retain.concepts().as_ref().to_owned());
        assert_eq!(report[k]["provenance"].as_array().unwrap().len(), r.retain.len());
        assert_eq!(report[k]["filtered"]["mu"].as_f64().unwrap(), r.filtered.mu);
    }
}

#[test]
fn inspect_reports_rank_and_null_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), Dtype::F64, 15);
    let res = nse(&["inspect", s(&dir.path().join("retain.npy")), "--tol", "1e-4"]);
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(
        stdout.contains("rows=24 cols=10") && stdout.contains("rank=10 null_dim=14"),
        "{stdout}"
    );
    let res = nse(&["inspect", s(&m)]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(
        stdout.contains("d0=24 n_erase=3 n_retain=10 n_invariants=2 layers=3"),
        "{stdout}"
    );
}

#[test]
fn custom_bench_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("t.json");
    let res = nse(&[
        "bench",
        "--profile",
        "custom",
        "--d0",
        "32",
        "--dims",
        "24,24",
        "--erase",
        "4",
        "--retain",
        "8",
        "--repeats",
        "2",
        "--out",
        s(&report),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.starts_with("profile,n_layers,d0,n_erase,n_retain"), "{stdout}");
    assert_eq!(stdout.lines().count(), 2);
    let parsed = nse::bench::read_json_report(&report).unwrap();
    assert_eq!(parsed.threads, 1);

    let res = nse(&["bench", "--sweep", "--d0", "32", "--retain-grid", "4,31"]);
    assert!(res.status.success());
    assert_eq!(String::from_utf8(res.stdout).unwrap().lines().count(), 3);
}

#[test]
fn verify_suite_passes() {
    let res = nse(&["verify", "--trials", "100", "--instances", "4"]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(res.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("100/100 positive"), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn verify_on_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        d0: 12,
        layer_dims: vec![8],
        n_erase: 2,
        n_retain: 4,
        n_invariants: 2,
        seed: 16,
    };
    let hp = Hyperparams {
        n_aug: 0,
        ..Hyperparams::default()
    };
    let task = gen_synthetic_task(&spec, hp).unwrap();
    let m = manifest::save_task(&task, dir.path(), Dtype::F64).unwrap();
    let res = nse(&["verify", "--manifest", s(&m)]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(res.status.code(), Some(0), "{stdout}");
    assert!(
        stdout.contains("layer00: kkt") && stdout.contains("layer00: oracle agreement"),
        "{stdout}"
    );
}
