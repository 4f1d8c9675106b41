use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], out: &Path, envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vertexnoise"));
    c.args(args).arg("--out").arg(out);
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = run(args, out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn spectrum_matches_neumann_table() {
    let dir = tempfile::tempdir().unwrap();
    let g = config("interval.toml");
    ok(&["spectrum", "--graph", g.to_str().unwrap(), "--h", "1/512", "--modes", "10"], dir.path());
    let lambdas = column(&fs::read_to_string(dir.path().join("spectrum.csv")).unwrap(), "lambda");
    assert_eq!(lambdas.len(), 10);
    assert!(lambdas[0].abs() < 1e-8);
    for (k, l) in lambdas.iter().enumerate().skip(1) {
        let exact = -((k as f64) * PI).powi(2);
        assert!(((l - exact) / exact).abs() < 1e-3, "k={} {l}", k + 1);
    }
    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["subcommand"], "spectrum");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["versions"]["vertexnoise"].is_string());
    assert!(m["seed"].is_null());
}

#[test]
fn appendix_residuals_are_tiny() {
    let dir = tempfile::tempdir().unwrap();
    let g = config("star3.toml");
    ok(&["verify-appendix", "--graph", g.to_str().unwrap(), "--seed", "0"], dir.path());
    let csv = fs::read_to_string(dir.path().join("appendix.csv")).unwrap();
    let r = column(&csv, "residual");
    assert_eq!(r.len(), 100);
    assert!(r.iter().all(|x| *x < 1e-9));
    assert_eq!(read_json(&dir.path().join("manifest.json"))["seed"], 0);
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let g = config("interval.toml");
    let o = run(&["convolve", "--graph", g.to_str().unwrap()], dir.path(), &[]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: MissingSeed: "), "{err}");
    // nothing is computed or written before validation
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("loop.toml");
    fs::write(&bad, "[[vertices]]\nid = \"a\"\n[[edges]]\nfrom = \"a\"\nto = \"a\"\nlength = 1.0\n").unwrap();
    let g = config("interval.toml");
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["spectrum", "--graph", bad.to_str().unwrap()], "LoopEdge"),
        (vec!["spectrum", "--graph", g.to_str().unwrap(), "--h", "-1"], "InvalidMeshSize"),
        (vec!["spectrum", "--graph", g.to_str().unwrap(), "--modes", "500"], "TooManyModes"),
        (vec!["convolve", "--graph", g.to_str().unwrap(), "--seed", "1", "--dt", "0.3"], "InvalidTimeGrid"),
        (vec!["regularity", "--graph", g.to_str().unwrap(), "--alpha", "1.5"], "InvalidExponent"),
        (vec!["solve", "--graph", g.to_str().unwrap(), "--noise", "zero", "--drift", "poly:0,0,1"], "InvalidDrift"),
        (vec!["convolve", "--graph", g.to_str().unwrap(), "--seed", "1", "--noise", "diag:1,-1"], "NotPositiveSemidefinite"),
        (vec!["spectrum", "--graph", g.to_str().unwrap(), "--frobnicate"], "Usage"),
    ];
    for (args, class) in cases {
        let o = run(&args, &dir.path().join("out"), &[]);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.starts_with(&format!("error: {class}: ")), "{args:?}: {err}");
    }
}

#[test]
fn outputs_are_deterministic() {
    let g = config("star3.toml");
    let args = [
        "convolve", "--graph", g.to_str().unwrap(), "--seed", "11", "--paths", "200",
        "--modes", "12", "--h", "1/64", "--T", "0.5", "--dt", "0.05",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(&args, a.path(), &[("VERTEXNOISE_THREADS", "1")]).status.success());
    assert!(run(&args, b.path(), &[("VERTEXNOISE_THREADS", "3")]).status.success());
    for f in ["ensemble.csv", "report.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let mut ma = read_json(&a.path().join("manifest.json"));
    let mut mb = read_json(&b.path().join("manifest.json"));
    ma["timestamp"] = Value::Null;
    mb["timestamp"] = Value::Null;
    assert_eq!(ma, mb);
    // a different seed changes the data and the hash
    let c = tempfile::tempdir().unwrap();
    let mut other = args.to_vec();
    other[4] = "12";
    ok(&other, c.path());
    assert_ne!(
        fs::read(a.path().join("ensemble.csv")).unwrap(),
        fs::read(c.path().join("ensemble.csv")).unwrap()
    );
    assert_ne!(ma["config_hash"], read_json(&c.path().join("manifest.json"))["config_hash"]);
}

#[test]
fn regularity_report() {
    let dir = tempfile::tempdir().unwrap();
    let g = config("interval.toml");
    ok(
        &["regularity", "--graph", g.to_str().unwrap(), "--h", "1/512", "--modes", "100", "--alpha", "0.1,0.4"],
        dir.path(),
    );
    let r = read_json(&dir.path().join("regularity.json"));
    let s = r["series"].as_array().unwrap();
    assert_eq!(s[0]["verdict"], "converging");
    assert_eq!(s[1]["verdict"], "diverging");
    for v in s {
        assert!(v["partial_sums"].as_array().unwrap().len() == 100);
        assert!(v["ci"].as_array().unwrap().len() == 2);
        assert!(v["slope"].is_number());
    }
    let csv = fs::read_to_string(dir.path().join("series_alpha_0.1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "k,increment,partial_sum");
    assert!(r.get("empirical_fit").is_none());
}

#[test]
fn solve_and_dirichlet_reports() {
    let dir = tempfile::tempdir().unwrap();
    let g = config("path2.toml");
    ok(&["dirichlet", "--graph", g.to_str().unwrap(), "--h", "1/256"], dir.path());
    let r = read_json(&dir.path().join("report.json"));
    assert!(r["relative_error"].as_f64().unwrap() < 1e-6);
    for f in ["dirichlet_k.csv", "dirichlet_full.csv", "adjoint.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let dir = tempfile::tempdir().unwrap();
    ok(
        &["solve", "--graph", g.to_str().unwrap(), "--h", "1/64", "--modes", "12", "--seed", "5",
          "--drift", "sine:1,1", "--T", "0.5", "--dt", "0.01"],
        dir.path(),
    );
    let r = read_json(&dir.path().join("report.json"));
    // Lipschitz constant 1 bounds the growth of the coupling over T = 0.5
    assert!(r["coupling"]["ratio"].as_f64().unwrap() <= 0.5f64.exp() + 1e-9);
    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,norm,v0,v1,v2");
    assert_eq!(csv.lines().count(), 52);
}
