use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn temi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_temi"))
        .args(args)
        .current_dir(dir)
        .env_remove("TEMI_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = temi(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn hashes(manifest: &Value, side: &str) -> Vec<(String, String)> {
    manifest[side]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["role"].as_str().unwrap().to_owned(), a["sha256"].as_str().unwrap().to_owned()))
        .collect()
}

/// Small labeled fixture plus neighbors, for tests that only need valid inputs.
fn small_inputs(dir: &Path) {
    ok(dir, &["synth", "--classes", "3", "--n-per-class", "30", "--dim", "8", "--sep", "8", "--seed", "2", "-o", "s.tf"]);
    ok(dir, &["knn", "-i", "s.tf", "-k", "5", "-o", "s.knn"]);
}

const TINY_TRAIN: &[&str] = &[
    "--epochs", "3", "--warmup-epochs", "1", "--heads", "2", "--hidden1", "8", "--hidden2", "8", "--batch-size", "16", "--lr", "1e-2",
];

#[test]
fn golden_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--classes", "8", "--n-per-class", "250", "--dim", "64", "--sep", "6", "--noise", "1", "--seed", "1", "-o", "f.tf"]);
    ok(dir, &["knn", "-i", "f.tf", "-k", "50", "-o", "f.knn"]);
    ok(
        dir,
        &[
            "train", "-i", "f.tf", "--knn", "f.knn", "--loss", "temi", "--heads", "16", "--beta", "0.6", "--preset", "desk", "--batch-size",
            "32", "--lr", "1e-2", "--hidden1", "32", "--hidden2", "32", "-o", "run",
        ],
    );
    ok(dir, &["eval", "--pred", "run/assignments.json", "--features", "f.tf", "--checkpoint", "run/model.ckpt", "--knn", "f.knn", "-o", "report.json"]);

    let report = json(&dir.join("report.json"));
    assert!(report["acc"].as_f64().unwrap() >= 0.99, "{report}");
    assert_eq!(report["n"], 2000);
    assert!(report["diagnostics"]["msp_mean"].as_f64().unwrap() > 0.5);
    let sep = &report["weight_separation"];
    assert!(sep["mean_w_true"].as_f64().unwrap() > sep["mean_w_false"].as_f64().unwrap());

    let summary = json(&dir.join("run/summary.json"));
    assert_eq!(summary["config"]["heads"], 16);
    assert_eq!(summary["config"]["epochs"], 50);
    assert_eq!(summary["config"]["knn_k"], 50);
    let steps = summary["steps"].as_u64().unwrap() as usize;
    let log = std::fs::read_to_string(dir.join("run/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), steps);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["head_losses"].as_array().unwrap().len(), 16);

    for manifest in ["f.tf.manifest.json", "f.knn.manifest.json", "run/manifest.json", "report.json.manifest.json"] {
        let m = json(&dir.join(manifest));
        assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0, "{manifest}");
    }
    let train_manifest = json(&dir.join("run/manifest.json"));
    assert_eq!(train_manifest["subcommand"], "train");
    assert_eq!(train_manifest["seed"], 0);
    let roles: Vec<String> = hashes(&train_manifest, "outputs").into_iter().map(|(r, _)| r).collect();
    assert_eq!(roles, ["checkpoint", "assignments", "log", "summary"]);
}

#[test]
fn eval_of_identical_labelings() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.json"), "[0, 0, 1, 1, 2, 2, 2]").unwrap();
    let out = ok(tmp.path(), &["eval", "--pred", "a.json", "--truth", "a.json"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["acc"], 1.0);
    assert_eq!(report["nmi"], 1.0);
    assert!(tmp.path().join("a.json.eval.manifest.json").exists());

    let csv = ok(tmp.path(), &["eval", "--pred", "a.json", "--truth", "a.json", "--csv", "--method", "oracle", "--backbone", "none"]);
    assert_eq!(csv, "method,backbone,acc,nmi,ari,ami\noracle,none,1,1,1,1\n");
}

#[test]
fn exit_codes_follow_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_inputs(dir);
    let cases: &[(&[&str], i32, &str)] = &[
        (&["train", "-i", "s.tf", "--beta", "0.5", "-o", "r"], 3, "argument"),
        (&["train", "-i", "s.tf", "--no-such-flag", "-o", "r"], 3, "argument"),
        (&["train", "-i", "missing.tf", "-o", "r"], 1, "io"),
        (&["train", "-i", "s.knn", "-o", "r"], 2, "validation"),
        (&["eval", "--pred", "s.tf.manifest.json", "--features", "s.tf"], 2, "validation"),
        (&["kmeans", "-i", "s.tf", "-k", "1", "-o", "km"], 3, "argument"),
        (&["--threads", "0", "theorem-check", "-o", "v.json"], 3, "argument"),
    ];
    for (args, code, category) in cases {
        let out = temi(dir, args);
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert_eq!(out.status.code(), Some(*code), "{args:?}: {stderr}");
        assert_eq!(stderr.lines().count(), 1, "{stderr}");
        assert!(stderr.starts_with(&format!("error[{category}] ")), "{stderr}");
    }
    // beta rejected before anything is written
    assert!(!dir.join("r").exists());
}

#[test]
fn help_shows_default_hyperparameters() {
    let tmp = tempfile::tempdir().unwrap();
    let help = ok(tmp.path(), &["train", "--help"]);
    for (flag, default) in [
        ("--lr", "0.0001"),
        ("--weight-decay", "0.0001"),
        ("--batch-size", "512"),
        ("--tau", "0.1"),
        ("--beta", "0.6"),
        ("--heads", "50"),
        ("--teacher-momentum", "0.996"),
        ("--epochs", "200"),
        ("--warmup-epochs", "20"),
        ("-k", "50"),
    ] {
        let line = help
            .lines()
            .skip_while(|l| !l.trim_start().starts_with(flag) && !l.contains(&format!(" {flag} ")))
            .take(4)
            .collect::<Vec<_>>()
            .join(" ");
        assert!(line.contains(&format!("[default: {default}]")), "{flag}: {line}");
    }
}

#[test]
fn explicit_flags_beat_the_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_inputs(dir);
    let mut args = vec!["train", "-i", "s.tf", "--knn", "s.knn", "--preset", "desk", "--heads", "3", "--epochs", "4", "--warmup-epochs", "1"];
    args.extend(["--hidden1", "8", "--hidden2", "8", "-o", "r"]);
    ok(dir, &args);
    let cfg = &json(&dir.join("r/manifest.json"))["config"]["train"];
    assert_eq!(cfg["heads"], 3);
    assert_eq!(cfg["epochs"], 4);
    assert_eq!(cfg["batch_size"], 128);
    assert_eq!(cfg["lr"], 1e-4);
}

#[test]
fn reruns_reproduce_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |sub: &str, threads: &str| {
        let dir = tmp.path().join(sub);
        std::fs::create_dir(&dir).unwrap();
        small_inputs(&dir);
        let mut train = vec!["--threads", threads, "train", "-i", "s.tf", "--knn", "s.knn", "-o", "r"];
        train.extend(TINY_TRAIN);
        ok(&dir, &train);
        ok(&dir, &["kmeans", "-i", "s.tf", "--seed", "4", "-o", "km"]);
        ok(&dir, &["theorem-check", "--optimizer", "gradient", "--iterations", "200", "--restarts", "2", "-o", "v.json"]);
        ["s.tf.manifest.json", "s.knn.manifest.json", "r/manifest.json", "km/manifest.json", "v.json.manifest.json"]
            .map(|m| {
                let m = json(&dir.join(m));
                (hashes(&m, "inputs"), hashes(&m, "outputs"), m["config"].clone())
            })
    };
    let a = run("a", "1");
    let b = run("b", "3");
    assert_eq!(a, b);
}

#[test]
fn theorem_check_recovers_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["theorem-check", "--n-x", "8", "--priors", "0.5,0.3,0.2", "-o", "v.json"]);
    assert!(out.starts_with("recovered true"), "{out}");
    let v = json(&tmp.path().join("v.json"));
    assert_eq!(v["verdict"]["recovered"], true);
    assert_eq!(v["model"]["classes"], 3);
    let gap = v["verdict"]["kl_gap"].as_f64().unwrap();
    assert!(gap.abs() < 1e-12, "{gap}");
}

#[test]
fn beta_scan_writes_one_row_per_beta() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_inputs(dir);
    let mut args = vec!["beta-scan", "-i", "s.tf", "--knn", "s.knn", "--betas", "0.6,0.8,1.0", "-o", "b.csv"];
    args.extend(TINY_TRAIN);
    ok(dir, &args);
    let csv = std::fs::read_to_string(dir.join("b.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,marginal_entropy,conditional_entropy,kl_to_uniform,largest_cluster_fraction,acc");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("1.0,"));
}

#[test]
fn probe_reports_accuracies() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_inputs(dir);
    ok(dir, &["synth", "--classes", "3", "--n-per-class", "30", "--dim", "8", "--sep", "8", "--seed", "2", "-o", "t.tf"]);
    ok(dir, &["probe", "--train", "s.tf", "--eval", "t.tf", "--epochs", "30", "--lr", "1e-2", "-o", "p.json"]);
    let p = json(&dir.join("p.json"));
    assert_eq!(p["result"]["eval_accuracy"], 1.0);
    assert_eq!(p["config"]["epochs"], 30);
}
