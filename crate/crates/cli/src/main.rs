use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use vertexnoise::diagnostics::{
    empirical_alpha_fit, regularity_series_full, regularity_series_k, FracNormSpec,
};
use vertexnoise::dirichlet::{
    adjoint_coefficients, dirichlet_map_full, dirichlet_map_k, full_map_coefficients,
};
use vertexnoise::fem::Discretization;
use vertexnoise::graph::{validate_graph, GraphSpec, MetricGraph};
use vertexnoise::rng;
use vertexnoise::sde::{
    build_drive_full, build_drive_k, ou_variance_factor, simulate_convolution, simulate_ensemble,
    simulate_whitenoise_forcing, time_steps, whitenoise_ensemble, Covariance, EnsembleSample,
    NoiseConfig, OUEnsemble,
};
use vertexnoise::solver::{feller_coupling_test, parse_drift, project_nodal, MildProblem, NoiseSource};
use vertexnoise::spectral::{asymptotics_check, vertex_bound_estimate, SpectralBasis};
use vertexnoise::surjectivity::surjectivity_construct;

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "VERTEXNOISE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "vertexnoise", version, about = "Parabolic problems on metric graphs with Gaussian vertex noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenpairs, growth constants of the spectrum and vertex trace bound.
    Spectrum(Opts),
    /// Both Dirichlet maps and the adjoint identity report.
    Dirichlet(Opts),
    /// Simulate the stochastic convolution.
    Convolve(Opts),
    /// Mild solution of the semilinear problem and a coupling test.
    Solve(Opts),
    /// Regularity series verdicts, optionally with an empirical fit.
    Regularity(Opts),
    /// Boundary-data surjection on random data.
    VerifyAppendix(Opts),
}

#[derive(Args, Debug, Clone, Serialize)]
struct Opts {
    /// Graph description (TOML).
    #[arg(long)]
    graph: PathBuf,
    /// Target mesh size; fractions such as 1/256 are accepted.
    #[arg(long, default_value = "1/256", value_parser = parse_real, allow_hyphen_values = true)]
    h: f64,
    #[arg(long, default_value_t = 40)]
    modes: usize,
    /// Resolvent shift.
    #[arg(long, default_value = "1", value_parser = parse_real, allow_hyphen_values = true)]
    lambda: f64,
    /// Comma-separated list of fractional exponents.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4", value_delimiter = ',', value_parser = parse_real, allow_hyphen_values = true)]
    alpha: Vec<f64>,
    /// Time horizon.
    #[arg(long = "T", default_value = "1", value_parser = parse_real, allow_hyphen_values = true)]
    horizon: f64,
    #[arg(long, default_value = "1/100", value_parser = parse_real, allow_hyphen_values = true)]
    dt: f64,
    /// Number of paths (samples for verify-appendix); regularity only
    /// runs the empirical fit when this is given.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `identity`, `zero`, `scaled:s`, `diag:q1,q2,…` or, for convolve,
    /// `white`.
    #[arg(long, default_value = "identity")]
    noise: String,
    /// `zero`, `affine:a,b`, `sine:A,w` or `poly:a0,a1,…`, applied on
    /// every edge.
    #[arg(long, default_value = "zero")]
    drift: String,
    /// Drive the noise through all 2m boundary conditions instead of the
    /// Kirchhoff rows only.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Core(vertexnoise::Error),
    MissingSeed(&'static str),
    Io(String),
    Usage(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::MissingSeed(_) => "MissingSeed",
            CliError::Io(_) => "Io",
            CliError::Usage(_) => "Usage",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::MissingSeed(cmd) => format!("--seed is required for {cmd}"),
            CliError::Io(m) | CliError::Usage(m) => m.clone(),
        }
    }
}

impl From<vertexnoise::Error> for CliError {
    fn from(e: vertexnoise::Error) -> Self {
        CliError::Core(e)
    }
}

type Res<T> = std::result::Result<T, CliError>;

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("not a number: {s}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("not a number: {s}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("not a number: {s}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: {s}"))
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(vertexnoise::Error::InvalidArgument(msg.into()))
}

/// Noise covariance on a space of dimension `dim`.
fn parse_noise(s: &str, dim: usize) -> Res<Covariance> {
    let s = s.trim();
    match s {
        "identity" => return Ok(Covariance::identity(dim)),
        "zero" => return Ok(Covariance::zero(dim)),
        _ => {}
    }
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| invalid(format!("unknown noise description {s:?}")))?;
    let nums = rest
        .split(',')
        .map(parse_real)
        .collect::<std::result::Result<Vec<f64>, String>>()
        .map_err(invalid)?;
    match kind {
        "scaled" if nums.len() == 1 => Ok(Covariance::diagonal(&vec![nums[0]; dim])?),
        "diag" => {
            if nums.len() != dim {
                return Err(vertexnoise::Error::DimensionMismatch {
                    expected: dim,
                    found: nums.len(),
                }
                .into());
            }
            Ok(Covariance::diagonal(&nums)?)
        }
        _ => Err(invalid(format!("unknown noise description {s:?}"))),
    }
}

struct Setup {
    graph_text: String,
    graph: MetricGraph,
}

impl Opts {
    /// Checks every numeric parameter before anything is computed.
    fn validate(&self, cmd: &str) -> Res<()> {
        if !(self.h > 0.0) {
            return Err(vertexnoise::Error::InvalidMeshSize(self.h).into());
        }
        if self.modes == 0 {
            return Err(invalid("--modes must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(vertexnoise::Error::NonpositiveShift(self.lambda).into());
        }
        for &a in &self.alpha {
            FracNormSpec::new(self.lambda, a)?;
        }
        if matches!(cmd, "convolve" | "solve" | "regularity") {
            time_steps(self.dt, self.horizon)?;
        }
        if self.paths == Some(0) {
            return Err(invalid("--paths must be positive"));
        }
        let stochastic = match cmd {
            "convolve" | "verify-appendix" => true,
            "solve" => self.noise.trim() != "zero",
            "regularity" => self.paths.is_some(),
            _ => false,
        };
        if stochastic && self.seed.is_none() {
            return Err(CliError::MissingSeed(match cmd {
                "convolve" => "convolve",
                "solve" => "solve",
                "regularity" => "regularity with --paths",
                _ => "verify-appendix",
            }));
        }
        Ok(())
    }

    fn load(&self) -> Res<Setup> {
        let graph_text = fs::read_to_string(&self.graph)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.graph.display())))?;
        let spec = GraphSpec::from_toml_str(&graph_text)?;
        let graph = validate_graph(&spec)?;
        Ok(Setup { graph_text, graph })
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Res<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Res<()> {
        let p = self.dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Res<()> {
        let text = serde_json::to_string_pretty(v).expect("values serialize") + "\n";
        self.write(name, &text)
    }
}

fn basis(g: &MetricGraph, o: &Opts) -> Res<(Discretization, SpectralBasis)> {
    let d = Discretization::new(g, o.h)?;
    let b = SpectralBasis::compute(&d, o.modes)?.with_shift(o.lambda)?;
    Ok((d, b))
}

/// Drive ensemble and covariance for Kirchhoff or full boundary noise.
fn drives(d: &Discretization, b: &SpectralBasis, o: &Opts) -> Res<(OUEnsemble, Covariance)> {
    if o.full {
        let map = dirichlet_map_full(d, o.lambda)?;
        let c = full_map_coefficients(b, d, &map)?;
        let cov = parse_noise(&o.noise, c.nrows())?;
        Ok((build_drive_full(b, &c)?, cov))
    } else {
        let cov = parse_noise(&o.noise, b.n_vertices())?;
        Ok((build_drive_k(b), cov))
    }
}

/// Up to four checkpoints on the time grid, ending at the horizon.
fn checkpoints(dt: f64, horizon: f64) -> Res<Vec<f64>> {
    let n = time_steps(dt, horizon)?;
    let mut steps: Vec<usize> = (1..=4).map(|j| (n * j / 4).max(1)).collect();
    steps.dedup();
    Ok(steps.into_iter().map(|s| s as f64 * dt).collect())
}

fn spectrum(o: &Opts, s: &Setup, out: &mut Output) -> Res<Value> {
    let (d, b) = basis(&s.graph, o)?;
    out.write("spectrum.csv", &b.to_csv())?;
    let vb = vertex_bound_estimate(&b);
    let mut csv = String::from("k,trace_norm_sq,running_max\n");
    for (k, (v, m)) in vb.per_mode.iter().zip(&vb.running_max).enumerate() {
        csv.push_str(&format!("{},{v},{m}\n", k + 1));
    }
    out.write("vertex_bound.csv", &csv)?;
    let n = b.n_modes();
    let asym = if n >= 3 {
        let lo = (n / 4).max(2);
        let a = asymptotics_check(&b, o.lambda, lo, n)?;
        json!({"k_lo": lo, "k_hi": n, "l1": a.l1, "l2": a.l2, "loglog_slope": a.loglog_slope})
    } else {
        Value::Null
    };
    let report = json!({
        "dofs": d.n_dofs(),
        "asymptotics": asym,
        "vertex_bound": {"sup": vb.sup, "growth_ratio": vb.growth_ratio},
    });
    out.json("report.json", &report)?;
    Ok(report)
}

fn dirichlet(o: &Opts, s: &Setup, out: &mut Output) -> Res<Value> {
    let (d, b) = basis(&s.graph, o)?;
    let dk = dirichlet_map_k(&d, o.lambda)?;
    out.write("dirichlet_k.csv", &dk.to_csv(&d))?;
    let full = dirichlet_map_full(&d, o.lambda)?;
    out.write("dirichlet_full.csv", &full.to_csv(&d))?;
    let c = adjoint_coefficients(&b, &dk)?;
    let mut csv = String::from("k,vertex,scaled_coefficient,trace,abs_error\n");
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for k in 0..b.n_modes() {
        for i in 0..b.n_vertices() {
            let lhs = (o.lambda - b.lambdas[k]) * c[(i, k)];
            let tr = b.vertex_traces[k][i];
            let e = (lhs - tr).abs();
            err = err.max(e);
            scale = scale.max(tr.abs());
            csv.push_str(&format!("{},{},{lhs},{tr},{e}\n", k + 1, s.graph.vertex_name(i)));
        }
    }
    out.write("adjoint.csv", &csv)?;
    let report = json!({
        "max_abs_error": err,
        "max_trace": scale,
        "relative_error": if scale > 0.0 { err / scale } else { 0.0 },
    });
    out.json("report.json", &report)?;
    Ok(report)
}

fn ensemble_csv(sample: &EnsembleSample, exact: impl Fn(f64) -> Vec<f64>) -> (String, f64) {
    let mut csv = String::from("t,mode,empirical_var,exact_var,std_error\n");
    let mut worst = 0.0f64;
    // the marginals are Gaussian, so the exact variance fixes the error scale
    let rel = (2.0 / sample.n_paths() as f64).sqrt();
    for (c, &t) in sample.times.iter().enumerate() {
        let ex = exact(t);
        for (k, e) in ex.iter().enumerate() {
            let (v, se) = sample.variance(c, k);
            if *e > 0.0 {
                worst = worst.max((v - e).abs() / (rel * e));
            }
            csv.push_str(&format!("{t},{},{v},{e},{se}\n", k + 1));
        }
    }
    (csv, worst)
}

fn convolve(o: &Opts, s: &Setup, out: &mut Output) -> Res<Value> {
    let seed = o.seed.expect("validated");
    let (d, b) = basis(&s.graph, o)?;
    let paths = o.paths.unwrap_or(1);
    if o.noise.trim() == "white" {
        if paths == 1 {
            let p = simulate_whitenoise_forcing(&b, seed, o.dt, o.horizon, 0)?;
            out.write("path.csv", &p.to_csv())?;
            return Ok(json!({"noise": "white", "paths": 1}));
        }
        let cps = checkpoints(o.dt, o.horizon)?;
        let sample = whitenoise_ensemble(&b.lambdas, seed, o.dt, o.horizon, paths, &cps)?;
        let (csv, worst) = ensemble_csv(&sample, |t| {
            b.lambdas.iter().map(|&l| ou_variance_factor(l, t)).collect()
        });
        out.write("ensemble.csv", &csv)?;
        let report = json!({"noise": "white", "paths": paths, "max_z_score": worst});
        out.json("report.json", &report)?;
        return Ok(report);
    }
    let (ens, cov) = drives(&d, &b, o)?;
    let ens = ens.with_covariance(&cov)?;
    let cfg = NoiseConfig::new(cov, seed, o.dt, o.horizon)?;
    if paths == 1 {
        let p = simulate_convolution(&ens, &cfg, 0)?;
        out.write("path.csv", &p.to_csv())?;
        return Ok(json!({"paths": 1}));
    }
    let cps = checkpoints(o.dt, o.horizon)?;
    let sample = simulate_ensemble(&ens, &cfg, paths, &cps)?;
    let (csv, worst) = ensemble_csv(&sample, |t| ens.exact_covariance(t));
    out.write("ensemble.csv", &csv)?;
    let report = json!({"paths": paths, "max_z_score": worst});
    out.json("report.json", &report)?;
    Ok(report)
}

fn solve(o: &Opts, s: &Setup, out: &mut Output) -> Res<Value> {
    let (d, b) = basis(&s.graph, o)?;
    let drift = parse_drift(&o.drift, s.graph.n_edges())?;
    let source = if o.noise.trim() == "zero" {
        None
    } else {
        let (ens, cov) = drives(&d, &b, o)?;
        let cfg = NoiseConfig::new(cov, o.seed.expect("validated"), o.dt, o.horizon)?;
        Some(NoiseSource::new(ens, &cfg)?)
    };
    let problem = MildProblem::new(&b, &drift, source.as_ref(), o.dt, o.horizon)?;
    let u0 = project_nodal(&b, &vec![1.0; d.n_dofs()]).coeffs;
    let v0 = vec![0.0; b.n_modes()];
    let sol = problem.solve(&u0, 0)?;
    out.write("solution.csv", &sol.to_csv(&b))?;
    let c = feller_coupling_test(&problem, &u0, &v0, 0)?;
    let report = json!({
        "final_norm": sol.norms().last().copied(),
        "extra_substeps": sol.extra_substeps,
        "one_sided_bound": drift.one_sided_bound(),
        "coupling": {
            "initial_distance": c.initial_distance,
            "sup_distance": c.sup_distance,
            "ratio": c.ratio,
        },
    });
    out.json("report.json", &report)?;
    Ok(report)
}

fn regularity(o: &Opts, s: &Setup, out: &mut Output) -> Res<Value> {
    let (d, b) = basis(&s.graph, o)?;
    let (ens, cov) = drives(&d, &b, o)?;
    let coeffs = if o.full {
        let map = dirichlet_map_full(&d, o.lambda)?;
        Some(full_map_coefficients(&b, &d, &map)?)
    } else {
        None
    };
    let mut series = Vec::new();
    for &a in &o.alpha {
        let v = match &coeffs {
            Some(c) => regularity_series_full(&b, c, o.lambda, &cov, a, o.horizon)?,
            None => regularity_series_k(&b, &cov, a, o.horizon)?,
        };
        out.write(&format!("series_alpha_{a}.csv"), &v.to_csv())?;
        series.push(v.to_json());
    }
    let mut report = json!({"t": o.horizon, "series": series});
    if let Some(paths) = o.paths {
        let seed = o.seed.expect("validated");
        let ens = ens.with_covariance(&cov)?;
        let cfg = NoiseConfig::new(cov, seed, o.dt, o.horizon)?;
        let sample = simulate_ensemble(&ens, &cfg, paths, &[o.horizon])?;
        let fit = empirical_alpha_fit(&sample, 0, &b, o.lambda, &o.alpha, seed)?;
        report["empirical_fit"] = serde_json::to_value(&fit).expect("fit serializes");
    }
    out.json("regularity.json", &report)?;
    Ok(report)
}

fn verify_appendix(o: &Opts, s: &Setup, out: &mut Output) -> Res<Value> {
    let seed = o.seed.expect("validated");
    let n = o.paths.unwrap_or(100);
    let dim = s.graph.boundary_dim();
    let mut csv = String::from("sample,gamma,contraction,residual\n");
    let mut worst = 0.0f64;
    for i in 0..n {
        let z = rng::normals(seed, i as u64, 0, dim);
        let sj = surjectivity_construct(&s.graph, &z)?;
        let r = sj.residual_inf();
        worst = worst.max(r);
        csv.push_str(&format!("{i},{},{},{r}\n", sj.gamma, sj.contraction));
    }
    out.write("appendix.csv", &csv)?;
    let report = json!({"samples": n, "max_residual": worst});
    out.json("report.json", &report)?;
    Ok(report)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn run(name: &str, o: &Opts) -> Res<()> {
    o.validate(name)?;
    let setup = o.load()?;
    let mut out = Output::new(&o.out)?;
    let summary = match name {
        "spectrum" => spectrum(o, &setup, &mut out)?,
        "dirichlet" => dirichlet(o, &setup, &mut out)?,
        "convolve" => convolve(o, &setup, &mut out)?,
        "solve" => solve(o, &setup, &mut out)?,
        "regularity" => regularity(o, &setup, &mut out)?,
        _ => verify_appendix(o, &setup, &mut out)?,
    };
    let mut config = serde_json::to_value(o).expect("options serialize");
    config["out"] = Value::Null;
    let mut hasher = Sha256::new();
    hasher.update(name.as_bytes());
    hasher.update(config.to_string().as_bytes());
    hasher.update(setup.graph_text.as_bytes());
    let manifest = json!({
        "subcommand": name,
        "config": config,
        "config_hash": hex(&hasher.finalize()),
        "graph_sha256": hex(&Sha256::digest(setup.graph_text.as_bytes())),
        "seed": o.seed,
        "versions": {
            "vertexnoise": env!("CARGO_PKG_VERSION"),
            "manifest_format": 1,
        },
        "timestamp": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "outputs": out.files.clone(),
        "summary": summary,
    });
    out.json("manifest.json", &manifest)?;
    Ok(())
}

fn configure_threads() -> Res<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a thread count, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: Usage: {line}");
            return ExitCode::from(2);
        }
    };
    let (name, opts) = match &cli.command {
        Command::Spectrum(o) => ("spectrum", o),
        Command::Dirichlet(o) => ("dirichlet", o),
        Command::Convolve(o) => ("convolve", o),
        Command::Solve(o) => ("solve", o),
        Command::Regularity(o) => ("regularity", o),
        Command::VerifyAppendix(o) => ("verify-appendix", o),
    };
    match configure_threads().and_then(|_| run(name, opts)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.class(), e.message().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
