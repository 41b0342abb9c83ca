use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gsc::cli::CliError;
use gsc::metrics::{format_table, MeanStd, RunSummary, TableRow};
use gsc::GscError;
use serde_json::Value;

fn gsc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GSC_THREADS")
        .output()
        .expect("run gsc")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = gsc(args, cwd);
    assert!(
        out.status.success(),
        "gsc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["generate", "--model", "gsc", "--dim", "2", "--hidden", "2", "--n", "500", "--seed", "7"];
    ok(&[&args[..], &["--out", "a"]].concat(), p);
    ok(&[&args[..], &["--out", "b"]].concat(), p);
    for f in ["data.csv", "data.s.csv", "data.z.csv", "params.json"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(p.join("a/data.csv")).unwrap().lines().count(), 500);
    let m = json(p.join("a/manifest.json"));
    assert_eq!(m["command"], "generate");
    assert_eq!(m["master_seed"], 7);
    assert!(m["stage_seeds"]["data"].is_u64());
    assert_eq!(m["config"]["n"], 500);
    assert!(m["outputs"].as_array().unwrap().len() >= 5);
}

#[test]
fn generate_sparse_coding_data() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--model", "cauchy-sc", "--dim", "2", "--n", "500", "--out", "c"], p);
    let mixing = json(p.join("c/mixing.json"));
    assert_eq!(mixing["prior"], "cauchy");
    assert_eq!(mixing["noise_sigma"], 0.45);
    assert_eq!(mixing["W"].as_array().unwrap().len(), 2);
    assert!(p.join("c/data.z.csv").exists());
    assert!(!p.join("c/data.s.csv").exists());

    let bad = gsc(&["generate", "--model", "laplace-sc", "--dim", "3", "--hidden", "2", "--out", "x"], p);
    assert_eq!(bad.status.code(), Some(1));
    let bad = gsc(&["generate", "--model", "student", "--out", "x"], p);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn zero_points_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsc(&["generate", "--n", "0", "--out", "z"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n must be at least 1"));
}

#[test]
fn single_iteration_gives_a_trace_of_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--n", "100", "--out", "g"], p);
    ok(
        &["fit", "--data", "g/data.csv", "--hidden", "2", "--restarts", "1", "--max-iters", "1", "--out", "f"],
        p,
    );
    let trace = fs::read_to_string(p.join("f/run_000.trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,log_lik");
    assert_eq!(lines.len(), 3);
    let run = json(p.join("f/run_000.json"));
    assert_eq!(run["log_lik_trace"].as_array().unwrap().len(), 2);
    let summary = json(p.join("f/summary.json"));
    assert_eq!(summary["n_points"], 100);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 1);
}

#[test]
fn too_many_hidden_units_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--n", "20", "--out", "g"], p);
    let out = gsc(&["fit", "--data", "g/data.csv", "--hidden", "25", "--out", "f"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("2^H"), "{}", stderr(&out));
    assert!(!p.join("f").exists());
}

#[test]
fn config_files_are_strict_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--n", "60", "--out", "g"], p);
    fs::write(p.join("typo.json"), r#"{"data": "g/data.csv", "hiden": 2, "out": "f"}"#).unwrap();
    let out = gsc(&["fit", "--config", "typo.json"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("hiden"));

    fs::write(
        p.join("cfg.json"),
        r#"{"data": "g/data.csv", "hidden": 3, "max_iters": 5, "restarts": 2, "out": "f"}"#,
    )
    .unwrap();
    ok(&["fit", "--config", "cfg.json", "--hidden", "1"], p);
    let summary = json(p.join("f/summary.json"));
    assert_eq!(summary["hidden"], 1);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);

    let out = gsc(&["fit", "--no-such-flag"], p);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("ragged.csv"), "1,2\n3\n").unwrap();
    let out = gsc(&["fit", "--data", "ragged.csv", "--hidden", "1", "--out", "f"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));

    let out = gsc(&["fit", "--data", "missing.csv", "--hidden", "1", "--out", "f"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.csv"));
}

#[test]
fn error_kinds_map_to_exit_codes() {
    assert_eq!(CliError::from(GscError::Numerical("x".into())).code, 3);
    assert_eq!(CliError::from(GscError::Input("x".into())).code, 2);
    assert_eq!(CliError::from(GscError::TooManyHidden { hidden: 21, cap: 20 }).code, 1);
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--model", "laplace-sc", "--dim", "3", "--n", "150", "--seed", "2", "--out", "g"], p);
    ok(
        &["fit", "--data", "g/data.csv", "--hidden", "3", "--restarts", "3", "--max-iters", "30", "--seed", "5", "--out", "f1"],
        p,
    );
    ok(&["fit", "--config", "f1/manifest.json", "--out", "f2", "--threads", "2"], p);
    for f in ["summary.json", "run_000.json", "run_001.json", "run_002.json", "run_001.trace.csv"] {
        assert_eq!(fs::read(p.join("f1").join(f)).unwrap(), fs::read(p.join("f2").join(f)).unwrap(), "{f}");
    }
    let m = json(p.join("f1/manifest.json"));
    let digest = m["input_digests"]["g/data.csv"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert_eq!(m["stage_seeds"].as_object().unwrap().len(), 3);
    let wrong = gsc(&["eval", "--config", "f1/manifest.json"], p);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn eval_reports_zero_amari_for_the_true_basis() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--n", "200", "--seed", "3", "--out", "g"], p);
    ok(
        &["fit", "--data", "g/data.csv", "--hidden", "2", "--restarts", "1", "--max-iters", "20", "--out", "f"],
        p,
    );
    let run = json(p.join("f/run_000.json"));
    fs::write(p.join("learned.json"), serde_json::json!({"W": run["params"]["W"]}).to_string()).unwrap();
    let out = ok(&["eval", "--results", "f", "--truth", "learned.json", "--name", "self"], p);
    let report = json(p.join("f/eval/eval.json"));
    let amari = report["evaluation"]["runs"][0]["amari"].as_f64().unwrap();
    assert!(amari < 1e-10, "{amari}");
    // A single run forms its own cluster.
    assert_eq!(report["evaluation"]["orthogonal"]["selected"], serde_json::json!([0]));
    assert_eq!(report["evaluation"]["likelihood"]["selected"], serde_json::json!([0]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("self"));
    for f in ["ortho_hist.csv", "loglik_hist.csv", "table.txt", "manifest.json"] {
        assert!(p.join("f/eval").join(f).exists(), "{f}");
    }
    assert!(p.join("f/manifest.json").exists());
}

#[test]
fn eval_without_truth_skips_amari() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--n", "100", "--out", "g"], p);
    ok(
        &["fit", "--data", "g/data.csv", "--hidden", "2", "--restarts", "2", "--max-iters", "10", "--out", "f"],
        p,
    );
    let out = ok(&["eval", "--results", "f", "--out", "e"], p);
    assert!(stderr(&out).contains("Amari index skipped"));
    let report = json(p.join("e/eval.json"));
    assert!(report["evaluation"]["runs"][0]["amari"].is_null());
    assert!(report["evaluation"]["runs"][0]["ortho_deviation_deg"].is_f64());
    assert!(report["evaluation"]["summary"].is_null());
    assert!(!p.join("e/table.txt").exists());
    let hist = fs::read_to_string(p.join("e/ortho_hist.csv")).unwrap();
    assert!(hist.starts_with("bin_left,count\n"));
}

#[test]
fn bench_missing_sources_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsc(&["bench", "--sources", "no/such/sources.csv", "--out", "b"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("load") && err.contains("no/such/sources.csv"), "{err}");
}

#[test]
fn bench_identity_mixing_recovers_the_sources() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["bench", "--identity-mix", "--n", "500", "--restarts", "4", "--out", "b"], p);
    let report = json(p.join("b/bench.json"));
    let row = &report["rows"][0];
    assert!(row["mix_seed"].is_null());
    let ev = &row["evaluation"];
    let best = ev["likelihood"]["selected"].as_array().unwrap()[0].as_u64().unwrap() as usize;
    let amari = ev["runs"][best]["amari"].as_f64().unwrap();
    assert!(amari < 0.1, "{amari}");
}

#[test]
fn bench_table_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(
        &["bench", "--n", "200,500", "--restarts", "4", "--max-iters", "60", "--seed", "3", "--out", "b"],
        p,
    );
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/bench_table.txt")).unwrap();
    let table = fs::read_to_string(p.join("b/table.txt")).unwrap();
    assert_eq!(table, golden);
    assert!(String::from_utf8_lossy(&out.stdout).contains(&golden));
    for f in ["ortho_hist_n200.csv", "loglik_hist_n500.csv", "bench.json", "manifest.json"] {
        assert!(p.join("b").join(f).exists(), "{f}");
    }
    let m = json(p.join("b/manifest.json"));
    assert!(m["stage_seeds"]["mix/n200"].is_u64());
    assert!(m["stage_seeds"]["fit/n500"].is_u64());
}

#[test]
fn table_layout_matches_golden_text() {
    let ms = |mean, std| MeanStd { mean, std, count: 20 };
    let rows = [
        TableRow {
            name: "laplace4".into(),
            n_points: 200,
            summary: RunSummary { all: ms(0.126, 0.004), selected: ms(0.12, 0.0) },
        },
        TableRow {
            name: "laplace4".into(),
            n_points: 500,
            summary: RunSummary { all: ms(0.0734, 0.0615), selected: ms(0.041, 0.0002) },
        },
    ];
    let expected = "\
name          N  GSC          GSC⊥
laplace4    200  0.13(0.00)   0.12(0.00)
            500  0.07(0.06)   0.04(0.00)
";
    assert_eq!(format_table(&rows), expected);
}
