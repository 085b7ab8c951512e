use std::path::Path;
use std::process::{Command, Output};

fn epivar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epivar"))
        .args(args)
        .env_remove("EPIVAR_WORKERS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "seed = 11
[dataset]
source = \"synthetic\"
family = \"sin-sum\"
dim = 2
n = 30
[net]
hidden_widths = [64]
learning_rate = 0.5
[estimators]
m = 3
k = 3
[oracle]
j = 3
m_prime = 2
";

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn estimate_writes_results_and_prints_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out_dir = dir.path().join("out");
    let o = epivar(&["estimate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["results.csv", "results.json", "timings.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("cell,d,n,method,role,quantity,value"));
    assert_eq!(stdout.lines().count(), 4);
    assert_eq!(stdout, std::fs::read_to_string(out_dir.join("results.csv")).unwrap());
}

#[test]
fn same_seed_same_bytes_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["ground-truth", "--config", &cfg, "--out-dir", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = epivar(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    let a = run("a", &["--workers", "1"]);
    let b = run("b", &["--workers", "3"]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "12"]);
    assert_ne!(a, c);
}

#[test]
fn json_rows_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out_dir = dir.path().join("out");
    let o = epivar(&["estimate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(epivar(&["estimate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let bad = write(dir.path(), "bad.toml", &SMALL.replace("m = 3", "m = 1"));
    let o = epivar(&["estimate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("m >= 2"), "{}", stderr(&o));

    let unknown = write(dir.path(), "unknown.toml", &format!("{SMALL}colour = 3\n"));
    assert_eq!(epivar(&["estimate", "--config", &unknown]).status.code(), Some(1));

    let cfg = write(dir.path(), "run.toml", SMALL);
    assert_eq!(epivar(&["estimate", "--config", &cfg, "--workers", "0"]).status.code(), Some(1));
    assert_eq!(epivar(&["estimate"]).status.code(), Some(1));

    // Ground truth needs a data-generating process.
    write(dir.path(), "d.csv", "a,y\n1,2\n2,3\n3,5\n");
    let csv = write(
        dir.path(),
        "csv.toml",
        "[dataset]\nsource = \"csv\"\npath = \"d.csv\"\nlabel = \"y\"\n",
    );
    assert_eq!(epivar(&["ground-truth", "--config", &csv]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &SMALL.replace("learning_rate = 0.5", "learning_rate = 1e5"));
    let out_dir = dir.path().join("out");
    let o = epivar(&["estimate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
}

#[test]
fn table_with_a_failing_cell_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // The influence-function variance needs n >= 2, so the n = 1 cell fails.
    let cfg = write(dir.path(), "table.toml", &format!("{SMALL}[table]\ndims = [2]\nsizes = [1, 30]\n"));
    let out_dir = dir.path().join("out");
    let o = epivar(&["table", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("cell d2-n1 failed"), "{}", stderr(&o));
    for f in ["results.csv", "summary.json", "table.txt", "ev_curve.csv", "timings.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"], 1);
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(results.lines().skip(1).all(|l| l.starts_with("d2-n30,")));
    assert_eq!(results.lines().count(), 1 + 3 + 4 + 3);
}

#[test]
fn csv_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::from("u,v,w,label\n");
    for i in 0..40 {
        let t = i as f64 * 0.1;
        data += &format!("{},{},{},{}\n", t, t.sin() * 3.0, 10.0 - t * t, t.cos());
    }
    write(dir.path(), "data.csv", &data);
    // Standardized features have squared norm near d, so the stable step is smaller.
    let cfg = write(
        dir.path(),
        "csv.toml",
        "seed = 2\n[dataset]\nsource = \"csv\"\npath = \"data.csv\"\nlabel = \"label\"\n\
         [net]\nhidden_widths = [64]\nlearning_rate = 0.1\n[estimators]\nm = 4\nk = 4\n",
    );
    let out_dir = dir.path().join("out");
    let o = epivar(&["estimate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(&fields[..3], &["csv", "3", "40"]);
        let value: f64 = fields[6].parse().unwrap();
        assert!(value.is_finite() && value >= 0.0, "{row}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("results.json")).unwrap()).unwrap();
    assert!(meta.to_string().contains("standardization"));
}

#[test]
fn quick_selfcheck_passes() {
    let o = epivar(&["selfcheck", "--quick", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let checks: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = checks.as_array().unwrap();
    assert!(checks.len() >= 5);
    assert!(checks.iter().all(|c| c["passed"] == true));
}
