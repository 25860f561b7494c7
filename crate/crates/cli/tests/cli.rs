use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn misnn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn generate_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = misnn(&["--seed", "4", "generate", "--generator", "single_col", "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let masked = rows(&fs::read_to_string(dir.path().join("a_masked.csv")).unwrap());
    let truth = rows(&fs::read_to_string(dir.path().join("a_truth.csv")).unwrap());
    assert_eq!(masked.len(), 101);
    assert!(masked.iter().all(|r| r.len() == 1001));
    assert_eq!(masked[0].last().unwrap(), "y");
    // truth and masked agree wherever a value is present
    for (m, t) in masked.iter().zip(&truth).skip(1) {
        for (a, b) in m.iter().zip(t) {
            assert!(a.is_empty() || a == b);
        }
        assert!(m[1..].iter().all(|c| !c.is_empty()));
    }
    assert!(masked.iter().skip(1).any(|r| r[0].is_empty()));
    assert!(dir.path().join("a_meta.json").exists());

    let again = misnn(&["--seed", "4", "generate", "--out", "b"], dir.path());
    assert!(again.status.success());
    for s in ["_masked.csv", "_truth.csv"] {
        assert_eq!(
            fs::read(dir.path().join(format!("a{s}"))).unwrap(),
            fs::read(dir.path().join(format!("b{s}"))).unwrap()
        );
    }
}

fn small_input(dir: &Path) {
    let out = misnn(&["--seed", "2", "generate", "--out", "g"], dir);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn impute_file_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    small_input(dir.path());
    let mean = misnn(&["impute", "g_masked.csv", "--method", "mean", "--m", "4", "--out", "mean"], dir.path());
    assert!(mean.status.success(), "{}", stderr(&mean));
    assert!(stderr(&mean).contains("single imputation"));
    assert!(dir.path().join("mean_1.csv").exists());
    assert!(!dir.path().join("mean_2.csv").exists());

    let args = |prefix: &'static str| {
        vec!["--seed", "9", "--set", "impute.net.hidden_widths=[16]", "impute", "g_masked.csv", "--m", "5", "--out", prefix]
    };
    let a = misnn(&args("a"), dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    for k in 1..=5 {
        assert!(dir.path().join(format!("a_{k}.csv")).exists());
    }
    assert!(!dir.path().join("a_6.csv").exists());
    let draws = fs::read_to_string(dir.path().join("a_draws.jsonl")).unwrap();
    assert_eq!(draws.lines().count(), 5);

    let b = misnn(&args("b"), dir.path());
    assert!(b.status.success());
    for s in ["_1.csv", "_5.csv", "_draws.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join(format!("a{s}"))).unwrap(),
            fs::read(dir.path().join(format!("b{s}"))).unwrap()
        );
    }
    let completed = fs::read_to_string(dir.path().join("a_3.csv")).unwrap();
    assert!(!completed.lines().skip(1).any(|l| l.starts_with(',')));
}

#[test]
fn impute_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "a,b\n1,x\n2,3\n").unwrap();
    let out = misnn(&["impute", "bad.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = misnn(&["impute", "missing.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

fn pool_report(dir: &Path, extra: &[&str]) -> Vec<Vec<String>> {
    let mut args = vec!["pool", "est.csv"];
    args.extend_from_slice(extra);
    let out = misnn(&args, dir);
    assert!(out.status.success(), "{}", stderr(&out));
    rows(&stdout(&out))
}

#[test]
fn pool_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("est.csv"), "theta,se_theta\n1.0,0.1\n1.2,0.1\n0.8,0.1\n").unwrap();
    let r = pool_report(dir.path(), &[]);
    assert_eq!(r[0][0], "parameter");
    let num = |i: usize| r[1][i].parse::<f64>().unwrap();
    assert!((num(1) - 1.0).abs() < 1e-9);
    assert!((num(5) - 0.19 / 3.0).abs() < 1e-9);
    let half = 1.959963984540054 * (0.19f64 / 3.0).sqrt();
    assert!((num(7) - (1.0 + half)).abs() < 1e-9);
    assert!((num(6) - (1.0 - half)).abs() < 1e-9);

    let t = pool_report(dir.path(), &["--t-df", "5"]);
    let tnum = |i: usize| t[1][i].parse::<f64>().unwrap();
    // only the interval changes
    for i in 1..=5 {
        assert_eq!(t[1][i], r[1][i]);
    }
    assert!(tnum(7) - tnum(6) > num(7) - num(6));
}

#[test]
fn pool_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.csv"), "theta,se_theta\n1.0,0.1\n").unwrap();
    let out = misnn(&["pool", "one.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 2"));
    fs::write(dir.path().join("nose.csv"), "theta\n1.0\n2.0\n").unwrap();
    assert_eq!(misnn(&["pool", "nose.csv"], dir.path()).status.code(), Some(2));
}

#[test]
fn usage_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(misnn(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(misnn(&["pool"], dir.path()).status.code(), Some(1));
    assert_eq!(misnn(&["generate", "--generator", "nope", "--out", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(misnn(&["--help"], dir.path()).status.code(), Some(0));
    let out = misnn(&["--set", "impute.wat=1", "generate", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    fs::write(dir.path().join("c.json"), "{\"benchmark\": {\"reps\": 0, \"extra\": 1}}").unwrap();
    let out = misnn(&["--config", "c.json", "generate", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_smoke_and_log_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "--seed", "5", "--set", "impute.m=3", "--set", "impute.net.hidden_widths=[8]", "benchmark", "--reps", "2",
            "--methods", "mean,iurr", "--no-timing", "--out", out,
        ]
    };
    let out = misnn(&args("run1"), dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("run1/summary.csv")).unwrap();
    let table = rows(&summary);
    assert_eq!(
        table[0],
        ["Method", "Style", "Bias", "Imp MSE", "Coverage", "Seconds", "SE", "SD", "Pred MSE", "Reps", "Failures"]
    );
    let names: Vec<&str> = table[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["Complete Data", "Complete Case", "Mean-Impute", "IURR"]);
    assert_eq!(stdout(&out), summary);

    // bias and SD recomputed from the per-rep log
    let log = fs::read_to_string(dir.path().join("run1/reps.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 8);
    for (label, key) in [("Mean-Impute", serde_json::json!({"method": "mean"})), ("IURR", serde_json::json!({"method": "iurr"}))] {
        let th: Vec<f64> = recs
            .iter()
            .filter(|r| r["entry"] == key)
            .map(|r| r["theta_hat"].as_f64().unwrap())
            .collect();
        let truth: Vec<f64> = recs.iter().filter(|r| r["entry"] == key).map(|r| r["theta_true"].as_f64().unwrap()).collect();
        let bias = th.iter().zip(&truth).map(|(a, b)| a - b).sum::<f64>() / 2.0;
        let mean = th.iter().sum::<f64>() / 2.0;
        let sd = (th.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt();
        let row = table.iter().find(|r| r[0] == label).unwrap();
        assert!((row[2].parse::<f64>().unwrap() - bias).abs() < 1e-12);
        assert!((row[7].parse::<f64>().unwrap() - sd).abs() < 1e-12);
        assert_eq!(row[5], "");
    }

    let again = misnn(&args("run2"), dir.path());
    assert!(again.status.success());
    for f in ["summary.csv", "summary.json", "reps.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("run1").join(f)).unwrap(),
            fs::read(dir.path().join("run2").join(f)).unwrap()
        );
    }
}

#[test]
fn benchmark_zero_reps_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = misnn(&["benchmark", "--reps", "0", "--out", "z"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
