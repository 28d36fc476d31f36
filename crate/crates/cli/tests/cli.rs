use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use firecast_core::metrics::read_rows;

fn firecast(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_firecast")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// simulate + build-dataset with `n` scenarios; returns the dataset dir.
fn dataset(root: &Path, n: &str) -> PathBuf {
    let (sim, data) = (root.join("sim"), root.join("data"));
    assert_eq!(firecast(&["simulate", "--seed", "7", "--scenarios", n, "--out", s(&sim)]), 0);
    assert_eq!(firecast(&["build-dataset", "--seed", "7", "--scenarios", n, "--input", s(&sim), "--out", s(&data)]), 0);
    data
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(firecast(&["simulate", "--seed", "7", "--scenarios", "6", "--out", s(out)]), 0);
    }
    let ta = tree(&a);
    assert!(ta.keys().any(|k| k.ends_with("resolved_config.json")));
    assert!(ta.len() > 6);
    assert_eq!(ta, tree(&b));
}

#[test]
fn evaluating_truth_against_its_export_is_within_a_quantum() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "6");
    let eval = dir.path().join("eval");
    assert_eq!(firecast(&["evaluate", "--seed", "7", "--truth", s(&data), "--pred", s(&data), "--out", s(&eval)]), 0);
    let rows = read_rows(&eval.join("metrics.csv")).unwrap();
    let own: Vec<_> = rows.iter().filter(|r| r.model == "frames").collect();
    assert_eq!(own.len(), 3 * 6);
    // the exported frames are 8-bit; the truth is not
    let q = 0.5 / 255.0;
    for r in own {
        assert!(r.mse <= q * q && r.bmae <= q, "{r:?}");
        assert!((r.ssim - 1.0).abs() <= 1e-3, "{r:?}");
    }
    assert!(eval.join("resolved_config.json").is_file());
}

#[test]
fn predict_defaults_to_five_members() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "6");
    let (models, pred) = (dir.path().join("models"), dir.path().join("pred"));
    let train = ["train", "--seed", "7", "--steps", "2", "--batch", "2", "--data", s(&data), "--out", s(&models)];
    assert_eq!(firecast(&train), 0);
    assert_eq!(firecast(&["predict", "--seed", "7", "--models", s(&models), "--data", s(&data), "--out", s(&pred)]), 0);
    let scenario = fs::read_dir(&pred)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(scenario.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ensemble"], 5);
    assert_eq!(summary["member_seeds"][0].as_array().unwrap().len(), 5);
    for h in [4, 8, 12] {
        for m in ["cgan", "ae", "persistence"] {
            assert!(scenario.join(format!("{m}_{h}h.pgm")).is_file(), "{m}_{h}h.pgm");
        }
        assert!(scenario.join("maps").join(format!("prob_{h}h.pgm")).is_file());
    }
}

#[test]
fn smoke_scores_three_horizons_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("smoke");
    assert_eq!(firecast(&["smoke", "--seed", "4", "--scenarios", "15", "--steps", "3", "--out", s(&out)]), 0);
    let rows = read_rows(&out.join("evaluate").join("metrics.csv")).unwrap();
    let mut per: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for r in &rows {
        per.entry((r.model.as_str(), r.sample)).or_default().push(r.horizon);
    }
    assert!(per.keys().any(|(m, _)| *m == "persistence"));
    assert!(per.keys().any(|(m, _)| *m == "cgan"));
    for hs in per.values() {
        assert_eq!(hs, &[4, 8, 12]);
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["metrics"]["persistence"].is_object());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(firecast(&["simulate", "--bogus"]), 1);
    assert_eq!(firecast(&["simulate", "--out", s(dir.path())]), 1);
    assert_eq!(firecast(&["predict", "--seed", "1", "--threshold", "2", "--models", "m", "--data", "d", "--out", "o"]), 1);
    let missing = dir.path().join("missing");
    assert_eq!(firecast(&["evaluate", "--seed", "1", "--truth", s(&missing), "--pred", s(&missing), "--out", s(dir.path())]), 2);
}
