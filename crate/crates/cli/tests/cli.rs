use std::path::Path;
use std::process::{Command, Output};

fn ebus(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebus"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.json");
    std::fs::write(
        &p,
        r#"{
  "data_dir": "data",
  "out_dir": "out",
  "cases_per_class": 3,
  "frames_per_case": 24,
  "image_side": 64,
  "crop_side": 64,
  "out_side": 32,
  "noise_pool_size": 4,
  "epochs": 1,
  "batch_size": 4
}"#,
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = ebus(&["eval", "--config", &cfg], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error kind=missing_checkpoint"), "{}", stderr(&o));
}

#[test]
fn unknown_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebus(&["synth", "--learning_rate=3"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error kind=config"), "{}", stderr(&o));
    let o = ebus(&["fly"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn missing_config_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebus(&["synth", "--config", "nope.json"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error kind=io"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebus(&["gradcheck", "--gradcheck_cases=2", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 10);
    assert!(out.lines().all(|l| l.ends_with(" ok")));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(ebus(&["synth", "--config", &cfg], dir.path()).status.success());
    let run = |out: &str| {
        let o = ebus(&["train", "--config", &cfg, "--deterministic", &format!("--out_dir={out}")], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let o = ebus(&["eval", "--config", &cfg, "--deterministic", &format!("--out_dir={out}")], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.path().join(out).join("metrics_slowfast_swav.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.starts_with(b"model,auc,accuracy,precision,recall,specificity,tp,fp,fn,tn\n"));

    let o = ebus(&["noise-eval", "--config", &cfg, "--out_dir=a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("delta_auc"));
    let o = ebus(&["export-codes", "--config", &cfg, "--out_dir=a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("class,p0,"));
}
