use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpo-aqec"))
        .args(args)
        .output()
        .unwrap()
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn entries(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn missing_config_is_a_config_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let o = kpo(&[
        "spectrum",
        "--config",
        "/nonexistent.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(entries(&out), 0);
}

#[test]
fn invalid_values_are_all_reported() {
    let o = kpo(&["validate", "--set", "system.kerr_mhz=-1", "--set", "sweep.points=0"]);
    assert_eq!(o.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("kerr") && msg.contains("sweep.points"), "{msg}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(kpo(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn validate_prints_the_resolved_config() {
    let o = kpo(&["validate", "--dims", "24,2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("dim_a = 24") && text.contains("dim_b = 2"), "{text}");
}

#[test]
fn spectrum_reruns_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[spectrum]\npoints = 11\n[run]\ndim_a = 32\n").unwrap();
    let out = tmp.path().join("runs");
    let first = run_dir(&kpo(&[
        "spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    for f in ["scan.csv", "coefficients.csv", "summary.json", "manifest.json"] {
        assert!(first.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    let pk = summary["degenerate_pump_over_k"].as_f64().unwrap();
    assert!((pk - 0.2764).abs() < 5e-4, "{pk}");

    let manifest = first.join("manifest.json");
    let second = run_dir(&kpo(&[
        "spectrum",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_ne!(first, second);
    for f in ["scan.csv", "coefficients.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(!fs::read_dir(&out)
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().starts_with('.')));
}

#[test]
fn wigner_writes_one_map_per_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let dir = run_dir(&kpo(&[
        "wigner",
        "--set",
        "wigner.points=21",
        "--out",
        out.to_str().unwrap(),
    ]));
    for k in 0..4 {
        let text = fs::read_to_string(dir.join(format!("wigner_{k}mod.csv"))).unwrap();
        assert!(text.starts_with("x,p,w\n"));
        assert_eq!(text.lines().count(), 1 + 21 * 21);
    }
}
