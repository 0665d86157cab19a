use std::path::Path;
use std::process::{Command, Output};

fn errlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errlab"))
        .args(args)
        .env_remove("ERRLAB_SEED")
        .output()
        .unwrap()
}

fn errlab_env(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errlab"))
        .args(args)
        .env("ERRLAB_SEED", seed)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_RUN: &str = r#"{"scenario": {"preset": "sim1"}, "n": 200, "days": [2, 4],
    "preparations": [{"kind": "average"}, {"kind": "concatenate"}],
    "models": [{"type": "ols"}], "replications": 2, "seed": 1}"#;

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["simulate", "run", "tradeoff", "theory", "lemma", "analyze", "report"] {
        let o = errlab(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("--"), "{sub}");
    }
    assert_eq!(errlab(&["--help"]).status.code(), Some(0));
    let lemma = stdout(&errlab(&["lemma", "--help"]));
    for flag in ["--f", "--sigma", "--k", "--draws", "--omega", "--seed"] {
        assert!(lemma.contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(errlab(&[]).status.code(), Some(1));
    assert_eq!(errlab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(errlab(&["theory", "--sigma2", "1"]).status.code(), Some(1));
    assert_eq!(errlab(&["lemma", "--f", "sin", "--sigma", "1", "--k", "2"]).status.code(), Some(1));
    assert_eq!(errlab_env(&["lemma", "--f", "exp", "--sigma", "1", "--k", "2"], "abc").status.code(), Some(1));
}

#[test]
fn theory_prints_both_variances() {
    let o = errlab(&["theory", "--sigma2", "1", "--k", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("sigma2/k                    0.5"), "{text}");
    assert!(text.contains("sigma2_reduced "));
    let o = errlab(&["theory", "--sigma2", "38", "--k", "2", "--sigma-x2", "20"]);
    let expected = 38.0 * 20.0 / (38.0 + 2.0 * 20.0);
    assert!(stdout(&o).contains(&format!("{expected}")));
}

#[test]
fn lemma_reports_inequality() {
    let o = errlab(&["lemma", "--f", "square", "--sigma", "1", "--k", "2", "--omega", "1", "--draws", "200000"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("inequality holds       true"));
    // too few draws is a domain error
    let o = errlab(&["lemma", "--f", "exp", "--sigma", "1", "--k", "2", "--draws", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_two_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = errlab(&["run", "--config", "/nonexistent/grid.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/grid.json"));
    let bad = write(dir.path(), "bad.json", r#"{"scenario": {"preset": "sim1"}, "preparations": [], "models": []}"#);
    assert_eq!(errlab(&["run", "--config", &bad]).status.code(), Some(2));
    let typo = write(dir.path(), "typo.json", r#"{"scenario": {"preset": "sim9"}, "preparations": [{"kind": "average"}], "models": [{"type": "ols"}]}"#);
    let o = errlab(&["run", "--config", &typo]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo.json"));
    let cfg = write(dir.path(), "g.json", SMALL_RUN);
    let o = errlab(&["tradeoff", "--budget", "1001", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not divisible"));
}

#[test]
fn run_writes_results_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", SMALL_RUN);
    let out = dir.path().join("r.csv");
    let o = errlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "scenario,days,n,preparation,model,rep,train_mse,test_mse,seed,wall_ms,failed"
    );
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2);
    let agg = std::fs::read_to_string(dir.path().join("r_aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 4);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", SMALL_RUN);
    let run = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["run", "--config", &cfg, "--out", out.to_str().unwrap()];
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        let o = match env {
            Some(e) => errlab_env(&args, e),
            None => errlab(&args),
        };
        assert_eq!(o.status.code(), Some(0));
        std::fs::read_to_string(out).unwrap()
    };
    let config = run("a.csv", None, None);
    let env7 = run("b.csv", None, Some("7"));
    let flag7 = run("c.csv", Some("7"), Some("99"));
    let config_again = run("d.csv", Some("1"), Some("99"));
    assert_ne!(config, env7);
    assert_eq!(env7, flag7);
    assert_eq!(config, config_again);
}

#[test]
fn partial_failure_exits_three_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "g.json",
        r#"{"scenario": {"preset": "sim1"}, "n": 200, "days": [2],
            "preparations": [{"kind": "average"}],
            "models": [{"type": "ols"}, {"type": "mlp", "hidden": [4], "train": {"learning_rate": 1e6, "max_epochs": 5, "batch_size": 16}}],
            "replications": 1}"#,
    );
    let out = dir.path().join("r.csv");
    let o = errlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(std::fs::read_to_string(&out).unwrap().contains(",true\n"));
}

#[test]
fn simulate_analyze_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.json", r#"{"preset": "sim3", "scenario": 1}"#);
    let data = dir.path().join("data");
    let o = errlab(&["simulate", "--spec", &spec, "--out", data.to_str().unwrap(), "--n", "1500", "--missing-day2", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let analysis = write(dir.path(), "a.json", r#"{"train": {"max_epochs": 20}}"#);
    let table = dir.path().join("table.csv");
    let o = errlab(&[
        "analyze",
        "--data",
        data.join("data.csv").to_str().unwrap(),
        "--schema",
        data.join("schema.json").to_str().unwrap(),
        "--config",
        &analysis,
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Linear Regression (Backwards Selection, Size="));
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 7);

    let cfg = write(dir.path(), "g.json", SMALL_RUN);
    let results = dir.path().join("r.csv");
    assert_eq!(errlab(&["run", "--config", &cfg, "--out", results.to_str().unwrap()]).status.code(), Some(0));
    let svg = dir.path().join("chart.svg");
    let o = errlab(&["report", "--results", results.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let o = errlab(&["report", "--results", data.join("data.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
