//! End-to-end checks of the command-line interface: exit codes, file
//! formats, and the documented behaviors of each subcommand.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dp2erm"));
    c.env_remove("DP2ERM_SEED").env_remove("DP2ERM_OUT");
    c
}

fn write_toy_csv(path: &Path, n: usize, with_truth: bool) {
    let mut text = String::from(if with_truth { "x1,x2,a,y,f_opt,pi\n" } else { "x1,x2,a,y\n" });
    for i in 0..n {
        let v = (i as f64 / n as f64) - 0.5;
        let a = if i % 2 == 0 { 1 } else { -1 };
        let y = v * a as f64;
        if with_truth {
            text.push_str(&format!("{v},{},{a},{y},{v},0.5\n", -v));
        } else {
            text.push_str(&format!("{v},{},{a},{y}\n", -v));
        }
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn simulate_row_count_matches_plan_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "simulate", "--scenario", "linear", "--reps", "2", "--eps", "1,inf", "--seed", "7",
            "--n", "60", "--n-test", "100", "--l1-grid", "5", "--ipw-ridge-grid", "0.1",
            "--ebw-ridge-grid", "0.1", "--mmd-ridge-grid", "1",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("replicate")).count();
    // 2 replicates x 3 schemes x 2 mechanisms x 2 epsilons.
    assert_eq!(rows, 24);
    assert!(dir.path().join("plot_ebw_gamma.dat").exists());
    assert!(dir.path().join("summary.csv").exists());
    assert!(dir.path().join("metadata.txt").exists());
}

#[test]
fn unknown_scenario_exits_one_naming_valid_ids() {
    let out = bin().args(["simulate", "--scenario", "cubic"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("linear") && err.contains("tree") && err.contains("nonlinear"), "{err}");
}

#[test]
fn run_mode_handles_truth_and_no_truth_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_toy_csv(&csv, 100, true);
    let out_dir = dir.path().join("with_truth");
    let out = bin()
        .args(["run", "--train-frac", "0.1", "--reps", "2", "--eps", "inf", "--seed", "3"])
        .args(["--schemes", "ebw", "--mechanisms", "gamma"])
        .args(["--l1-grid", "5", "--ebw-ridge-grid", "0.1"])
        .arg("--csv")
        .arg(&csv)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let data_row = text.lines().find(|l| l.starts_with("0,ebw")).unwrap();
    let fields: Vec<&str> = data_row.split(',').collect();
    assert!(!fields[4].is_empty(), "accuracy expected with truth columns: {data_row}");

    // Without truth columns, accuracy is omitted but the value remains.
    let csv2 = dir.path().join("plain.csv");
    write_toy_csv(&csv2, 100, false);
    let out_dir2 = dir.path().join("plain_out");
    let out = bin()
        .args(["run", "--reps", "1", "--eps", "inf", "--seed", "3"])
        .args(["--schemes", "ebw", "--mechanisms", "gamma"])
        .args(["--l1-grid", "5", "--ebw-ridge-grid", "0.1"])
        .arg("--csv")
        .arg(&csv2)
        .arg("--out")
        .arg(&out_dir2)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir2.join("results.csv")).unwrap();
    let data_row = text.lines().find(|l| l.starts_with("0,ebw")).unwrap();
    let fields: Vec<&str> = data_row.split(',').collect();
    assert!(fields[4].is_empty(), "accuracy must be empty without truth: {data_row}");
    assert!(!fields[5].is_empty(), "value must still be computed: {data_row}");
}

#[test]
fn run_missing_y_column_exits_one_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "x1,a\n0.5,1\n0.2,-1\n").unwrap();
    let out = bin().args(["run", "--reps", "1"]).arg("--csv").arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('y'));
}

#[test]
fn weights_subcommand_balanced_ebw_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("balanced.csv");
    // Mirror-symmetric arms: EBW stays uniform.
    std::fs::write(
        &csv,
        "x1,x2,a,y\n0.5,-0.2,1,0\n-0.3,0.4,1,0\n0.5,-0.2,-1,0\n-0.3,0.4,-1,0\n",
    )
    .unwrap();
    let out_path = dir.path().join("w.csv");
    let out = bin()
        .args(["weights", "--scheme", "ebw"])
        .arg("--csv")
        .arg(&csv)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let weights: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#') && *l != "weight")
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(weights.len(), 4);
    let sum: f64 = weights.iter().sum();
    assert!((sum - 4.0).abs() <= 1e-8 * 4.0);
    for w in weights {
        assert!((w - 1.0).abs() < 1e-5);
    }
}

#[test]
fn weights_mmd_zero_ridge_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    write_toy_csv(&csv, 10, false);
    let out = bin()
        .args(["weights", "--scheme", "mmd", "--lambda-mmd", "0"])
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_MMD"));
}

#[test]
fn calibrate_gaussian_delta_zero_exits_one() {
    let out = bin()
        .args([
            "calibrate", "--mechanism", "gaussian", "--eps", "1", "--zeta", "1", "--lam", "2",
            "--universal", "--n", "100",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
}

#[test]
fn calibrate_universal_budget_prints_spot_values() {
    let out = bin()
        .args([
            "calibrate", "--mechanism", "gamma", "--eps", "0.1", "--zeta", "1", "--lam", "2",
            "--universal", "--n", "4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("w1_bar      = 12"), "{text}");
    assert!(text.contains("provenance  = universal"), "{text}");
}

#[test]
fn summarize_reads_results_back() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let status = bin()
        .args([
            "simulate", "--scenario", "linear", "--reps", "2", "--eps", "inf", "--seed", "9",
            "--n", "50", "--n-test", "80", "--schemes", "ebw", "--mechanisms", "gamma",
            "--l1-grid", "5", "--ebw-ridge-grid", "0.1",
        ])
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["summarize"])
        .arg("--results")
        .arg(out_dir.join("results.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ebw") && text.contains("inf"), "{text}");
}

#[test]
fn environment_seed_is_used_when_flag_absent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, seed_env: &str| {
        let out_dir = dir.path().join(out);
        let mut c = bin();
        c.args([
            "simulate", "--scenario", "linear", "--reps", "1", "--eps", "inf", "--n", "50",
            "--n-test", "60", "--schemes", "ebw", "--mechanisms", "gamma", "--l1-grid", "5",
            "--ebw-ridge-grid", "0.1",
        ])
        .arg("--out")
        .arg(&out_dir)
        .env("DP2ERM_SEED", seed_env);
        assert!(c.status().unwrap().success());
        std::fs::read_to_string(out_dir.join("results.csv")).unwrap()
    };
    let a = run("a", "123");
    let b = run("b", "123");
    let c = run("c", "124");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.contains("# seed = 123"));
}
