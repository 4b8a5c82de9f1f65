use std::path::Path;
use std::process::{Command, Output};

fn rrnar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrnar"))
        .args(args)
        .env_remove("RRNAR_SEED")
        .env_remove("RRNAR_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(out: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(&format!("{key} = "))).unwrap_or_else(|| panic!("no {key} in {out}"));
    line.split(" = ").nth(1).unwrap().trim().parse().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--output-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    rrnar(&args)
}

fn data_args(dir: &Path) -> Vec<String> {
    vec![
        "--panel".into(),
        dir.join("panel.csv").display().to_string(),
        "--adjacency".into(),
        dir.join("adjacency.csv").display().to_string(),
    ]
}

const TABLE_CELL: [&str; 10] = ["--n", "20", "--d", "10", "--rank", "2", "--t", "200", "--k", "3"];

#[test]
fn simulate_writes_expected_files_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TABLE_CELL.to_vec();
    args.extend(["--seed", "1"]);
    let o = simulate(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(value(&out, "rho") < 1.0);
    assert!((value(&out, "weight_frob_sq") - 20.0 / 3.0).abs() < 1e-6);
    let panel = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 1 + 20 * 10 * 201);
    assert!(dir.path().join("adjacency.csv").exists());
    assert!(dir.path().join("truth.json").exists());
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert!(simulate(d.path(), &["--n", "8", "--d", "4", "--t", "50", "--seed", "9"]).status.success());
    }
    for f in ["panel.csv", "adjacency.csv", "truth.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |d: &Path, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_rrnar"));
        c.args(["simulate", "--n", "6", "--d", "3", "--t", "20", "--output-dir", d.to_str().unwrap()]);
        match env {
            Some(s) => c.env("RRNAR_SEED", s),
            None => c.env_remove("RRNAR_SEED"),
        };
        assert!(c.output().unwrap().status.success());
    };
    run(a.path(), Some("5"));
    assert!(simulate(b.path(), &["--n", "6", "--d", "3", "--t", "20", "--seed", "5"]).status.success());
    assert_eq!(std::fs::read(a.path().join("panel.csv")).unwrap(), std::fs::read(b.path().join("panel.csv")).unwrap());
}

#[test]
fn invalid_degree_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), &["--n", "20", "--k", "25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k=25"));
}

#[test]
fn fit_converges_and_reaches_the_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TABLE_CELL.to_vec();
    args.extend(["--seed", "1"]);
    assert!(simulate(dir.path(), &args).status.success());
    let mut fit = vec!["fit".to_string(), "--rank".into(), "2".into(), "--output-dir".into(), dir.path().display().to_string()];
    fit.extend(data_args(dir.path()));
    fit.extend(["--truth".into(), dir.path().join("truth.json").display().to_string()]);
    let o = rrnar(&fit.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("converged = true"));
    assert!(value(&out, "fit_panel_loss") <= value(&out, "truth_panel_loss"));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(doc["kind"], "fit");
    assert_eq!(doc["converged"], true);
    assert!(doc["errors"]["kron_err"].as_f64().unwrap() >= 0.0);

    // enough data for the 10% relative-error bound
    let long = tempfile::tempdir().unwrap();
    assert!(simulate(long.path(), &["--n", "20", "--d", "10", "--rank", "2", "--t", "2000", "--k", "3", "--seed", "1"]).status.success());
    let mut fit = vec!["fit".to_string(), "--rank".into(), "2".into(), "--output-dir".into(), long.path().display().to_string()];
    fit.extend(data_args(long.path()));
    fit.extend(["--truth".into(), long.path().join("truth.json").display().to_string()]);
    let out = stdout(&rrnar(&fit.iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(value(&out, "kron_err_rel") < 0.1, "{out}");
}

#[test]
fn fit_without_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), &["--n", "10", "--d", "4", "--t", "100", "--seed", "2"]).status.success());
    let mut fit = vec!["fit".to_string(), "--rank".into(), "2".into(), "--max-iter".into(), "1".into()];
    fit.extend(["--output-dir".into(), dir.path().display().to_string()]);
    fit.extend(data_args(dir.path()));
    let o = rrnar(&fit.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.path().join("fit.json").exists());
}

#[test]
fn auto_rank_recovers_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TABLE_CELL.to_vec();
    args.extend(["--seed", "1"]);
    assert!(simulate(dir.path(), &args).status.success());
    let mut rank = vec!["rank".to_string(), "--output-dir".into(), dir.path().display().to_string()];
    rank.extend(data_args(dir.path()));
    let o = rrnar(&rank.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success());
    assert!(stdout(&o).contains("ranks = [2]"));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("rank.json")).unwrap()).unwrap();
    assert_eq!(doc["ranks"], serde_json::json!([2]));

    let mut fit = vec!["fit".to_string(), "--rank".into(), "auto".into(), "--output-dir".into(), dir.path().display().to_string()];
    fit.extend(data_args(dir.path()));
    assert!(stdout(&rrnar(&fit.iter().map(String::as_str).collect::<Vec<_>>())).contains("ranks = [2]"));
}

#[test]
fn missing_adjacency_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), &["--n", "6", "--d", "3", "--t", "30"]).status.success());
    let panel = dir.path().join("panel.csv").display().to_string();
    let o = rrnar(&["fit", "--panel", &panel, "--adjacency", "/nonexistent/edges.csv", "--rank", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("adjacency"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fit": {"eta": 0.1, "max_iters": 5}}"#).unwrap();
    let o = rrnar(&["simulate", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_iters"));

    std::fs::write(&cfg, r#"{"grid": {"n": "ten"}}"#).unwrap();
    let o = rrnar(&["simulate", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, r#"{"kind": "bench"}"#).unwrap();
    let o = rrnar(&["simulate", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"kind": "simulate", "seed": 3, "grid": {"n": [7], "d": [3], "t": [40]}}"#).unwrap();
    let o = rrnar(&["simulate", "--config", cfg.to_str().unwrap(), "--n", "9", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let panel = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 1 + 9 * 3 * 41);
    let truth: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["seed"], 3);
}

#[test]
fn forecast_with_truth_on_noiseless_data_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), &["--n", "8", "--d", "4", "--rank", "2", "--t", "60", "--seed", "4", "--noiseless"]).status.success());
    let mut fc = vec!["forecast".to_string(), "--output-dir".into(), dir.path().display().to_string()];
    fc.extend(["--params".into(), dir.path().join("truth.json").display().to_string()]);
    fc.extend(data_args(dir.path()));
    let o = rrnar(&fc.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value(&stdout(&o), "global_mse") < 1e-20);
    assert!(dir.path().join("mse.csv").exists());
}

#[test]
fn bench_reports_every_model() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), &["--n", "10", "--d", "4", "--rank", "2", "--t", "300", "--seed", "6"]).status.success());
    let mut b = vec!["bench".to_string(), "--rank".into(), "2".into(), "--output-dir".into(), dir.path().display().to_string()];
    b.extend(data_args(dir.path()));
    let o = rrnar(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("mse.csv")).unwrap();
    for m in ["RRNAR", "NAR", "RRVAR", "MAR"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{m},global,"))), "{m} missing:\n{table}");
    }
}

#[test]
fn mc_rank_is_identical_across_parallelism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let grid = ["--n", "10", "--d", "6", "--r", "2", "--t", "120,200", "--reps", "6", "--seed", "3"];
    for (d, p) in [(&a, "1"), (&b, "4")] {
        let mut args = vec!["mc-rank", "--parallelism", p, "--output-dir", d.path().to_str().unwrap()];
        args.extend_from_slice(&grid);
        let o = rrnar(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = std::fs::read(a.path().join("rank_table.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.path().join("rank_table.csv")).unwrap());
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 3);
}

#[test]
fn mc_rates_writes_rows_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = rrnar(&[
        "mc-rates", "--kind", "vary-t", "--grid", "100,200,400", "--n", "8", "--d", "4", "--r", "2", "--reps", "2",
        "--parallelism", "1", "--output-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let slopes = std::fs::read_to_string(dir.path().join("slopes.csv")).unwrap();
    assert!(slopes.starts_with("metric,slope,intercept,r_squared"));
    assert_eq!(slopes.lines().count(), 6);
    assert_eq!(std::fs::read_to_string(dir.path().join("rates.csv")).unwrap().lines().count(), 4);
    assert!(dir.path().join("rates_smoothed.csv").exists());
}
