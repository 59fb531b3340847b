use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn revprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revprobe"))
        .args(args)
        .env("RP_LOG", "error")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dump(root: &Path, extra: &[&str]) {
    let mut args = vec!["--json", "--seed", "3", "synth", s(root), "--docs", "6", "--tokens", "96", "--planted-rate", "0.06"];
    args.extend_from_slice(extra);
    let out = revprobe(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_reports_prevalence_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    let out = revprobe(&["--json", "--seed", "7", "synth", s(&root), "--docs", "20", "--tokens", "256", "--planted-rate", "0.0205"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["documents"], 20);
    let prevalence = v["prevalence"].as_f64().unwrap();
    assert!((prevalence - 0.0205).abs() < 0.012, "{prevalence}");

    let out = revprobe(&["--json", "validate", s(&root)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["documents_checked"], 20);
    assert!(v["findings"].as_array().unwrap().is_empty());
}

#[test]
fn broken_dump_exits_one_with_findings() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    small_dump(&root, &[]);
    let victim = root.join("doc_00002").join("tokens.json");
    assert!(victim.exists());
    std::fs::write(&victim, b"{ not json").unwrap();
    let out = revprobe(&["validate", s(&root)]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("doc_00002"), "{text}");
    assert!(text.contains("findings"), "{text}");

    let out = revprobe(&["--json", "validate", s(&dir.path().join("nothing"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!json_of(&out)["findings"].as_array().unwrap().is_empty());
}

#[test]
fn features_train_predict_cv_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    small_dump(&root, &[]);
    let f = dir.path().join("f.bin");
    let csv = dir.path().join("f.csv");
    let out = revprobe(&["--json", "features", s(&root), "--config", "f120", "--out", s(&f), "--csv", s(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json_of(&out);
    assert_eq!(v["rows"], 6 * 72);
    assert!(csv.exists());

    let model = dir.path().join("m.bin");
    let out = revprobe(&["--json", "--seed", "1", "train", s(&f), "--out", s(&model), "--trees", "20"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_of(&out)["trees"], 20);

    let report = dir.path().join("r").join("report.json");
    let out = revprobe(&["--json", "predict", s(&model), s(&f), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0));
    let auroc = json_of(&out)["metrics"]["auroc"].as_f64().unwrap();
    assert!(auroc > 0.5, "{auroc}");

    let out = revprobe(&["--json", "cv", s(&f), "--folds", "3", "--trees", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_of(&out)["cv"]["folds"].as_array().unwrap().len(), 3);

    let rendered = dir.path().join("rendered");
    let out = revprobe(&["report", s(&report), "--format", "csv,html,ansi,json", "--out", s(&rendered)]);
    assert_eq!(out.status.code(), Some(0));
    for ext in ["csv", "html", "txt", "json"] {
        assert!(rendered.join(format!("report.{ext}")).exists(), "{ext}");
    }
    let out = revprobe(&["report", s(&report), "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("doc_id,token_index,token,score,label,flagged"));

    // A model only scores matrices with its own columns.
    let f93 = dir.path().join("f93.bin");
    assert_eq!(revprobe(&["features", s(&root), "--config", "f93", "--out", s(&f93)]).status.code(), Some(0));
    let out = revprobe(&["--json", "predict", s(&model), s(&f93), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_of(&out)["error"]["code"], "REGISTRY_MISMATCH");
}

#[test]
fn errors_exit_two_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = revprobe(&["--json", "features", s(&dir.path().join("missing")), "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(json_of(&out)["error"]["code"].is_string());

    let root = dir.path().join("d");
    small_dump(&root, &["--no-prior"]);
    let out = revprobe(&["features", s(&root), "--config", "f204", "--out", s(&dir.path().join("f.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("MISSING_PRIOR_PASS"), "{err}");
    assert!(!err.contains("panicked"));

    let out = revprobe(&["features", s(&root), "--config", "f999", "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("UNKNOWN_CONFIG"));

    let out = revprobe(&["--workers", "0", "validate", s(&root)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\ndocs = 5\ntokens = 80\nplanted_rate = 0.05\n").unwrap();
    let root = dir.path().join("d");
    let out = revprobe(&["--json", "--config-file", s(&cfg), "synth", s(&root), "--docs", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["documents"], 3);
    assert_eq!(v["summary_tokens"], 3 * 60);

    std::fs::write(&cfg, "seeds = 1\n").unwrap();
    let out = revprobe(&["--config-file", s(&cfg), "validate", s(&root)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("seeds"));
}

#[test]
fn baseline_command_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    small_dump(&root, &[]);
    let out_dir = dir.path().join("b");
    let out = revprobe(&["--json", "baseline", s(&root), "--method", "token_entropy,sliding_window_entropy", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json_of(&out);
    assert_eq!(v["baselines"].as_array().unwrap().len(), 2);
    assert!(out_dir.join("baseline_token_entropy.json").exists());
    let out = revprobe(&["baseline", s(&root), "--method", "cloze_magic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out_dir = dir.path().join(name);
        let out = revprobe(&[
            "--json", "--seed", "5", "--workers", workers, "pipeline", "--out", s(&out_dir), "--docs", "10",
            "--tokens", "96", "--planted-rate", "0.06", "--trees", "15", "--folds", "2", "--format", "json,csv",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "3");
    for file in ["features.bin", "features.bin.json", "model.bin", "report.json", "report.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
}
