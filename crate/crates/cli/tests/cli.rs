use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lipscope"));
    c.env("LIPSCOPE_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

/// Schema for an emitted JSON file, chosen by file name.
fn schema_for(path: &Path) -> Option<&'static str> {
    let name = path.file_name()?.to_str()?;
    let parent = path.parent()?.file_name()?.to_str()?;
    Some(match name {
        "experiment.json" => "experiment_config",
        "config.json" => "run_config",
        "meta.json" => "dataset_meta",
        "runlog.json" => "runlog",
        "summary.json" => "summary",
        "final_network.json" => "network",
        "theorem1.json" => "theorem1",
        "theorem2.json" => "theorem2",
        "theorem3.json" => "theorem3",
        "corollary2.json" => "corollary2",
        "corollary3.json" => "corollary3",
        "firstlayer.json" => "firstlayer",
        "fig5_summary.json" => "fig5_summary",
        _ if parent == "checkpoints" => "network",
        _ => return None,
    })
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            walk(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// Validates every JSON file under `dir`; returns how many were checked.
fn validate_tree(dir: &Path) -> usize {
    let mut files = Vec::new();
    walk(dir, &mut files);
    let mut checked = 0;
    for f in files.iter().filter(|f| f.extension().is_some_and(|e| e == "json")) {
        let name = schema_for(f).unwrap_or_else(|| panic!("no schema for {}", f.display()));
        let schema: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(schema_dir().join(format!("{name}.schema.json"))).unwrap())
                .unwrap();
        let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(f).unwrap()).unwrap();
        let validator = jsonschema::validator_for(&schema).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| format!("{e} at {}", e.instance_path)).collect();
        assert!(errors.is_empty(), "{} fails {name}: {errors:?}", f.display());
        checked += 1;
    }
    for f in files.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")) {
        let text = fs::read_to_string(f).unwrap();
        let header = text.lines().next().unwrap_or_else(|| panic!("{} has no header", f.display()));
        let cols = header.split(',').count();
        for (i, line) in text.lines().enumerate().skip(1) {
            if f.file_name().unwrap() == "dataset.csv" {
                continue;
            }
            assert_eq!(line.split(',').count(), cols, "{} line {}", f.display(), i + 1);
        }
    }
    checked
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{
  "task": {"kind": "sinusoid", "omegas": [0.5], "n": 20},
  "seeds": [3],
  "network": {"hidden": [10, 8], "first_identity": true},
  "train": {"lr": {"constant": 0.01}, "epochs": 30, "loss": "mse",
            "freeze_first_weights": true, "record_bias": true, "record_patterns": true},
  "audit": {"probes": 200, "first_layer_probes": 16}
}"#;

const BLOBS: &str = r#"{
  "task": {"kind": "corrupted_blobs", "corruptions": [0.0], "n": 60, "n_dim": 4},
  "seeds": [1],
  "network": {"hidden": [12, 12]},
  "train": {"lr": {"constant": 0.05}, "epochs": 40, "loss": "bce", "dropout": "half", "record_bias": true},
  "audit": {"probes": 200}
}"#;

#[test]
fn missing_config_exits_2() {
    let o = run(&["train", "-c", "/nonexistent/cfg.json", "-o", "/tmp/never"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2_with_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL.replace("\"seeds\"", "\"seedz\": [0], \"seeds\""));
    let o = run(&["train", "-c", cfg.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seedz"), "{}", stderr(&o));
}

#[test]
fn invalid_value_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL.replace("\"loss\": \"mse\"", "\"loss\": \"bce\""));
    let o = run(&["train", "-c", cfg.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.loss"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &SMALL.replace("{\"constant\": 0.01}", "{\"constant\": 1e6}"),
    );
    let o = run(&["train", "-c", cfg.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn zero_iteration_run_is_valid_and_audits_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL.replace("\"epochs\": 30", "\"epochs\": 0"));
    let out = tmp.path().join("o");
    let o = run(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["audit", out.to_str().unwrap(), "--which", "all"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rd = out.join("omega0.5_s3");
    for a in ["theorem1", "corollary2", "corollary3", "theorem2", "theorem3", "firstlayer"] {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(rd.join(format!("{a}.json"))).unwrap()).unwrap();
        assert!(v["report"].is_null(), "{a}");
        assert_eq!(v["iterations"], 0);
    }
    let traj = fs::read_to_string(rd.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1);
    assert!(validate_tree(&out) > 10);
}

#[test]
fn full_pipeline_outputs_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()])), 0);
    let o = run(&["audit", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rd = out.join("omega0.5_s3");
    let o = run(&["regions", rd.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["regions.csv", "regions_lipschitz.svg", "regions_bound.svg", "bp_report.csv"] {
        assert!(rd.join(f).is_file(), "{f}");
    }
    validate_tree(&out);
    let t2: serde_json::Value = serde_json::from_str(&fs::read_to_string(rd.join("theorem2.json")).unwrap()).unwrap();
    assert_eq!(t2["report"]["report"]["violations"], 0);
    // Theorem 1 sandwich is checked on every window of a W1 = I run.
    let t1: serde_json::Value = serde_json::from_str(&fs::read_to_string(rd.join("theorem1.json")).unwrap()).unwrap();
    assert_eq!(t1["report"]["violated"], 0);
}

#[test]
fn bce_run_corollary3_refused_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BLOBS);
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()])), 0);
    let o = run(&["audit", out.to_str().unwrap(), "--which", "corollary3"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("BCE"));
    // Under `all` the refusal is recorded and the other audits still run.
    let o = run(&["audit", out.to_str().unwrap(), "--which", "all"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rd = out.join("corruption0_s1");
    let c3: serde_json::Value = serde_json::from_str(&fs::read_to_string(rd.join("corollary3.json")).unwrap()).unwrap();
    assert!(c3["report"].is_null() && c3["note"].as_str().unwrap().contains("BCE"));
    validate_tree(&out);
}

#[test]
fn missing_bias_trace_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL.replace("\"record_bias\": true", "\"record_bias\": false"));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()])), 0);
    let o = run(&["audit", out.to_str().unwrap(), "--which", "corollary2"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("stride 1"), "{}", stderr(&o));
}

#[test]
fn theorem3_needs_dropout_bce() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()])), 0);
    let o = run(&["audit", out.to_str().unwrap(), "--which", "theorem3"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn bad_plane_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let plane = write_config(
        tmp.path(),
        "p.json",
        r#"{"origin": [0, 0], "axes": [[1, 0], [1, 1]], "extent": [-1, 1, -1, 1], "resolution": [8, 8]}"#,
    );
    let o = run(&["regions", fixture("affine.json").to_str().unwrap(), "--plane", plane.to_str().unwrap(), "-o", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn affine_network_single_region() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "regions",
        fixture("affine.json").to_str().unwrap(),
        "--plane",
        fixture("plane2d.json").to_str().unwrap(),
        "-o",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("regions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    let svg = fs::read_to_string(tmp.path().join("regions_lipschitz.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn quadrant_atlas_matches_golden_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "regions",
        fixture("quadrants.json").to_str().unwrap(),
        "--plane",
        fixture("plane2d.json").to_str().unwrap(),
        "-o",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = fs::read_to_string(tmp.path().join("regions_lipschitz.svg")).unwrap();
    let golden = fixture("quadrants_lipschitz.svg");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(golden).unwrap());
    assert_eq!(fs::read_to_string(tmp.path().join("regions.csv")).unwrap().lines().count(), 5);
}

/// File list plus SHA-256 of every deterministic artifact.
fn manifest(dir: &Path) -> String {
    let mut files = Vec::new();
    walk(dir, &mut files);
    let mut lines: Vec<String> = files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            let hash = Sha256::digest(fs::read(f).unwrap());
            let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
            format!("{rel} {hex}")
        })
        .collect();
    lines.sort();
    lines.join("\n") + "\n"
}

#[test]
fn fixture_config_matches_golden_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["train", "-c", fixture("tiny_config.json").to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = manifest(&out);
    let golden = fixture("tiny_manifest.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(golden).unwrap());
}

#[test]
fn training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BLOBS);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&["train", "-c", cfg.to_str().unwrap(), "-o", a.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["train", "-c", cfg.to_str().unwrap(), "-o", b.to_str().unwrap()])), 0);
    assert_eq!(manifest(&a), manifest(&b));
}

#[test]
fn reproduce_fig1_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig1", "-o", tmp.path().to_str().unwrap(), "--seeds", "1", "--epochs", "60"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("fig1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "omega,seed,epoch,train_loss,test_loss,sum_phi");
    let omegas: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(omegas.len(), 4);
    for f in ["fig1_train_loss.svg", "fig1_sum_phi.svg", "fig1_test_loss.svg"] {
        let svg = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4, "{f}");
    }
    validate_tree(tmp.path());
}

#[test]
fn reproduce_fig2_and_total_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig2", "-o", tmp.path().to_str().unwrap(), "--seeds", "1", "--epochs", "60", "--keep-runs"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = fs::read_to_string(tmp.path().join("fig2_summary.csv")).unwrap();
    assert_eq!(s.lines().count(), 5);
    assert!(tmp.path().join("fig2_variance.svg").is_file() && tmp.path().join("fig2_distance.svg").is_file());
    assert!(tmp.path().join("runs/omega1_s0/corollary3.json").is_file());
    validate_tree(tmp.path());

    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig-total-trajectory", "-o", tmp.path().to_str().unwrap(), "--seeds", "1", "--epochs", "60"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("fig_total_trajectory.svg").is_file());
}

#[test]
fn reproduce_fig5_four_panels() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig5", "-o", tmp.path().to_str().unwrap(), "--epochs", "60"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["fig5_truth.svg", "fig5_learned.svg", "fig5_lipschitz.svg", "fig5_bound.svg"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("fig5_summary.json")).unwrap()).unwrap();
    assert_eq!(s["violations"], 0);
    validate_tree(tmp.path());
}
