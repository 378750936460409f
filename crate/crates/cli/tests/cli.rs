use std::path::Path;
use std::process::{Command, Output};

fn regsdml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regsdml"))
        .args(args)
        .env_remove("REGSDML_THREADS")
        .output()
        .expect("binary runs")
}

fn write_csv(path: &Path, rows: usize) {
    let mut text = String::from("id,a,x,w1,w2,y\n");
    for i in 0..rows {
        let t = i as f64;
        let w1 = (t * 0.37).sin();
        let w2 = (t * 0.11).cos();
        let a = (t * 1.7).sin() + 0.3 * w1;
        let x = 0.8 * a + w2 + 0.2 * (t * 2.3).cos();
        let y = 0.5 * x + w1 - w2 + 0.1 * (t * 3.1).sin();
        text += &format!("{i},{a},{x},{w1},{w2},{y}\n");
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn fit_without_data_is_a_usage_error() {
    let out = regsdml(&["fit", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = regsdml(&["simulate", "--scenario", "intro_sem", "--seed", "1", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = regsdml(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulate"));
}

#[test]
fn seed_is_mandatory() {
    let out = regsdml(&["simulate", "--scenario", "intro_sem", "--N", "50", "--M", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn bad_values_are_usage_errors() {
    for args in [
        vec!["simulate", "--scenario", "nowhere", "--seed", "1"],
        vec!["simulate", "--scenario", "intro_sem", "--seed", "1", "--level", "1.5"],
        vec!["simulate", "--scenario", "intro_sem", "--seed", "1", "--methods", "DML,OLS"],
        vec!["simulate", "--scenario", "intro_sem", "--seed", "1", "--gamma-grid", "0,abc"],
        vec!["simulate", "--scenario", "intro_sem", "--seed", "1", "--format", "xml"],
    ] {
        assert_eq!(regsdml(&args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn missing_data_file_is_an_estimation_failure() {
    let out = regsdml(&[
        "fit", "--data", "/nonexistent/file.csv", "--seed", "1", "--a-cols", "a", "--x-cols", "x", "--w-cols", "w",
        "--y-col", "y",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_column_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_csv(&csv, 20);
    let out = regsdml(&[
        "fit", "--data", csv.to_str().unwrap(), "--seed", "1", "--a-cols", "a", "--x-cols", "x", "--w-cols", "w3",
        "--y-col", "y",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("w3"));
}

#[test]
fn simulate_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.csv");
    let args = [
        "simulate", "--scenario", "intro_sem", "--N", "100", "--M", "5", "--K", "2", "--S", "2", "--seed", "1", "--out",
        r.to_str().unwrap(),
    ];
    assert_eq!(regsdml(&args).status.code(), Some(0));
    let first = std::fs::read_to_string(&r).unwrap();
    assert!(first.starts_with("method,metric,value\n"));
    for method in ["DML", "regDML", "regsDML"] {
        assert!(first.contains(&format!("{method},coverage,")), "{first}");
    }
    let lengths = std::fs::read_to_string(dir.path().join("r_lengths.csv")).unwrap();
    assert!(lengths.starts_with("method,run,scaled_length\n"));
    assert_eq!(lengths.lines().count(), 1 + 3 * 5);

    assert_eq!(regsdml(&args).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&r).unwrap(), first);
}

#[test]
fn thread_count_does_not_change_results() {
    let args = ["simulate", "--scenario", "wh_noise", "--N", "80", "--M", "4", "--S", "2", "--seed", "9"];
    let one = regsdml(&[&args[..], &["--threads", "1"]].concat());
    let three = Command::new(env!("CARGO_BIN_EXE_regsdml"))
        .args(args)
        .env("REGSDML_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, three.stdout);
}

#[test]
fn fit_reads_roles_from_config_and_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_csv(&csv, 80);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# roles\nroles.a = a\nroles.x = x\nroles.w = w1, w2\nroles.y = y\nS = 3\nlearner.kind = forest\nlearner.trees = 25\nmethods = DML, regsDML, LIML\n",
    )
    .unwrap();
    let out = dir.path().join("fit.csv");
    let status = regsdml(&[
        "fit", "--data", csv.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--seed", "3", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,estimate,std_error,ci_lower,ci_upper,gamma_prime");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("DML,") && lines[1].ends_with(','));
    assert!(lines[2].starts_with("regsDML,"));
    assert!(lines[3].starts_with("LIML,"));
    let fields: Vec<f64> = lines[1].split(',').skip(1).take(4).map(|v| v.parse().unwrap()).collect();
    assert!(fields[3] > fields[0] && fields[0] > fields[2]);

    // Flags override the config file.
    let json = regsdml(&[
        "fit", "--data", csv.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--seed", "3", "--methods", "DML",
        "--format", "json",
    ]);
    assert_eq!(json.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&json.stdout);
    assert!(stdout.contains("\"method\": \"DML\"") && !stdout.contains("LIML"), "{stdout}");
}

#[test]
fn diagnose_orthogonality_reports_both_scores() {
    let out = regsdml(&["diagnose", "--which", "orthogonality", "--N", "20000", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key},")))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("{key} missing in {text}"))
    };
    assert!(value("psi_derivative").abs() < 4.0 * value("psi_std_error"));
    assert!(value("varphi_derivative").abs() > 5.0 * value("varphi_std_error"));
}

#[test]
fn oracle_learner_is_rejected_for_fit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_csv(&csv, 20);
    let out = regsdml(&[
        "fit", "--data", csv.to_str().unwrap(), "--seed", "1", "--a-cols", "a", "--x-cols", "x", "--w-cols", "w1",
        "--y-col", "y", "--learner", "oracle",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_learner_without_closed_form_means_fails_estimation() {
    let out = regsdml(&["simulate", "--scenario", "forest_sem", "--learner", "oracle", "--N", "50", "--M", "2", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forest_sem"));
}
