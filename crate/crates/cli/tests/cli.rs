//! End-to-end runs of the binary: golden reports, determinism and exit codes.
//! Regenerate the golden files with `CHAOSLAB_UPDATE_GOLDEN=1 cargo test -p chaoslab-cli`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn chaoslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoslab")).args(args).output().expect("binary runs")
}

fn stdout_of(args: &[&str]) -> String {
    let mut full = args.to_vec();
    full.extend(["--output", "-"]);
    let out = chaoslab(&full);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// JSON report with the wall-time field zeroed.
fn masked(json: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["wall_time_s"] = serde_json::json!(0.0);
    serde_json::to_string_pretty(&v).unwrap() + "\n"
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check_golden(name: &str, args: &[&str]) {
    let mut text = stdout_of(args);
    if name.ends_with(".json") {
        text = masked(&text);
    }
    let path = golden_dir().join(name);
    if std::env::var_os("CHAOSLAB_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {}: {e}", path.display()));
    assert_eq!(text, want, "{name} drifted from its golden file");
}

#[test]
fn golden_reports() {
    check_golden("hermite.json", &["hermite", "--n", "5", "--x", "0.5"]);
    check_golden("chaos.csv", &["chaos", "--dist", "delta@0", "--t", "1", "--T", "1", "--N", "8", "--format", "csv"]);
    check_golden("chaos.json", &["chaos", "--dist", "logabs", "--N", "6"]);
    check_golden("smoothing.json", &["smoothing", "--dist", "delta@0", "--s", "-0.8", "--T", "1", "--N", "300"]);
    check_golden("index.json", &["index", "--dist", "pv1x", "--N", "2000"]);
    check_golden("norm.csv", &["norm", "--dist", "heaviside@0.5", "--s", "-0.2", "--N", "40", "--format", "csv"]);
    check_golden("kv-kernel.csv", &["kv-kernel", "--model", "sqrt1pz2", "--n", "2", "--t", "0.5", "--format", "csv"]);
    check_golden("scale-speed.csv", &["scale-speed", "--model", "unit", "--drift", "const:1", "--format", "csv"]);
    check_golden("holder.csv", &["holder", "--model", "unit", "--N", "64", "--format", "csv"]);
    check_golden("density-holder.json", &["density-holder", "--N", "64"]);
    check_golden("bessel-kernel.json", &["bessel-kernel", "--s", "-0.5", "--p", "1.8"]);
    check_golden("ito-verify.json", &["ito-verify", "--M", "4000", "--K", "32", "--seed", "3"]);
    check_golden("local-time-mc.csv", &["local-time-mc", "--M", "4000", "--K", "64", "--eps", "0.1,0.05", "--seed", "3", "--format", "csv"]);
}

#[test]
fn chaos_csv_has_nine_rows() {
    let text = stdout_of(&["chaos", "--dist", "delta@0", "--t", "1", "--T", "1", "--N", "8", "--format", "csv"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,pairing,l2_term,err_est");
    assert_eq!(lines.len(), 10);
}

#[test]
fn reports_are_deterministic_modulo_wall_time() {
    let args = ["ito-verify", "--case", "pv", "--J", "wT", "--M", "6000", "--K", "32", "--seed", "11"];
    let a = stdout_of(&args);
    let b = stdout_of(&args);
    assert_eq!(masked(&a), masked(&b));
    let c = stdout_of(&["ito-verify", "--case", "pv", "--J", "wT", "--M", "6000", "--K", "32", "--seed", "12"]);
    assert_ne!(masked(&a), masked(&c));
}

#[test]
fn report_echoes_resolved_config_and_provenance() {
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&["smoothing"])).unwrap();
    assert_eq!(v["command"], "smoothing");
    assert_eq!(v["config"]["N"], 300);
    assert_eq!(v["config"]["s"], -0.8);
    assert_eq!(v["config"]["dist"], "delta@0");
    assert_eq!(v["provenance"]["truncation"], 300);
    assert_eq!(v["pass"], true);
    let h: serde_json::Value = serde_json::from_str(&stdout_of(&["hermite"])).unwrap();
    assert!(h["outputs"]["value"]["err"].is_number());
}

#[test]
fn config_files_round_trip_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "command = \"chaos\"\ndist = \"delta@0.5\"\nN = 3\n").unwrap();
    let p = path.to_str().unwrap();
    let out = chaoslab(&["chaos", "--config", p, "--N", "5", "--print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dist = \"delta@0.5\"") && text.contains("N = 5"), "{text}");
    // the printed form is itself a valid config that reproduces the run
    std::fs::write(&path, &text).unwrap();
    let again = chaoslab(&["chaos", "--config", p, "--print-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    // a config for another subcommand is a usage error
    assert_eq!(chaoslab(&["norm", "--config", p]).status.code(), Some(2));
}

#[test]
fn default_output_goes_to_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chaoslab"))
        .args(["hermite", "--format", "csv"])
        .env("CHAOSLAB_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("hermite.csv")).unwrap();
    assert!(text.starts_with("k,h_k_x,h_k_zero,normalized_k_x,err_est"));
}

#[test]
fn exit_codes() {
    assert_eq!(chaoslab(&["hermite", "--bogus"]).status.code(), Some(2));
    assert_eq!(chaoslab(&["nonsense"]).status.code(), Some(2));
    assert_eq!(chaoslab(&["chaos", "--dist", "what@0", "--output", "-"]).status.code(), Some(2));
    let out = chaoslab(&["kv-kernel", "--model", "table:/does/not/exist.csv", "--output", "-"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("σ table"));
    assert_eq!(chaoslab(&["holder", "--s", "0.3", "--beta", "0.4", "--output", "-"]).status.code(), Some(2));
    // bandwidths this wide bias the mollified local time far beyond its stderr
    let out = chaoslab(&["local-time-mc", "--M", "20000", "--K", "16", "--eps", "2,1.5,1", "--output", "-"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gate failed"));
    assert_eq!(chaoslab(&["bessel-kernel", "--p", "2.2", "--output", "-"]).status.code(), Some(0));
    assert_eq!(chaoslab(&["hermite", "--selftest"]).status.code(), Some(0));
}

#[test]
fn selftests_pass() {
    for cmd in ["hermite", "norm", "scale-speed", "density-holder", "local-time-mc"] {
        let out = chaoslab(&[cmd, "--selftest"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stdout));
    }
}
