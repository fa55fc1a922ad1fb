use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "repetitions=1",
    "--set",
    "folds=3",
    "--set",
    "stage1.epochs=2",
    "--set",
    "stage1.hidden=4",
    "--set",
    "stage1.n_groups=3",
    "--set",
    "stage2.epochs=3",
    "--set",
    "stage2.hidden=8",
    "--set",
    "data.synthetic.n_subjects=24",
    "--set",
    "data.synthetic.regions=8",
    "--set",
    "data.synthetic.timepoints=48",
];

fn brainpop(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brainpop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(["--jobs", "1"])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_dir(out: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn run_all_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [&["run-all", "--seed", "3"], TINY].concat();
    let oa = brainpop(a.path(), &args);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(String::from_utf8_lossy(&oa.stdout).contains("stage2: acc"));
    assert!(brainpop(b.path(), &args).status.success());
    let ja = fs::read(run_dir(a.path()).join("metrics.json")).unwrap();
    let jb = fs::read(run_dir(b.path()).join("metrics.json")).unwrap();
    assert_eq!(ja, jb);
    let doc: serde_json::Value = serde_json::from_slice(&ja).unwrap();
    for stage in ["stage1", "stage2"] {
        for m in ["acc", "auc", "spe", "sen"] {
            assert!(doc[stage][m]["mean"].is_number(), "{stage}.{m}");
        }
    }
}

#[test]
fn seed_changes_run_directory() {
    let out = tempfile::tempdir().unwrap();
    assert!(brainpop(out.path(), &[&["gen-data", "--seed", "1"], TINY].concat()).status.success());
    assert!(brainpop(out.path(), &[&["gen-data", "--seed", "2"], TINY].concat()).status.success());
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 2);
}

#[test]
fn invalid_field_exits_with_config_code() {
    let out = tempfile::tempdir().unwrap();
    let o = brainpop(out.path(), &["run-all", "--set", "stage2.top_k=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage2.top_k"));

    let o = brainpop(out.path(), &["run-all", "--set", "stage2.no_such_field=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_field"));
}

#[test]
fn missing_manifest_exits_with_data_code() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("c.toml");
    fs::write(&cfg, "[data]\nmanifest = \"/nonexistent/manifest.csv\"\n").unwrap();
    let o = brainpop(out.path(), &["train-stage1", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn explain_untrained_model() {
    let out = tempfile::tempdir().unwrap();
    let o = brainpop(out.path(), &[&["explain", "--set", "stage1.epochs=0"], TINY].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(run_dir(out.path()).join("explain/importance.csv")).unwrap();
    let scores: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 8);
    assert!(scores.iter().all(|s| s.is_finite() && *s >= 0.0));
}
