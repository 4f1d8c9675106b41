//! Stochastic convolutions in spectral coordinates.
//!
//! Each coefficient `z_k = ⟨Z(t), f_k⟩` is an Ornstein–Uhlenbeck process
//! `dz_k = λ_k z_k dt + g_kᵀ dβ` driven by one finite-dimensional Brownian
//! motion `β` with covariance `Q`. The transition over a step is sampled
//! exactly, so the time step only sets the output resolution.

use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::SpectralBasis;
use crate::stats;

/// Eigenvalues of a covariance above `-PSD_FLOOR` are clipped to zero.
pub const PSD_FLOOR: f64 = 1e-12;

/// Symmetric positive semidefinite covariance with its symmetric square root.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: Mat<f64>,
    pub sqrt: Mat<f64>,
}

impl Covariance {
    pub fn new(matrix: Mat<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.ncols(),
            });
        }
        let mut asym: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
                scale = scale.max(matrix[(i, j)].abs());
            }
        }
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        if n == 0 || scale == 0.0 {
            return Ok(Covariance {
                sqrt: Mat::zeros(n, n),
                matrix,
            });
        }
        let evd = matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::SolverFailure(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let min = (0..n).map(|i| s[i]).fold(f64::INFINITY, f64::min);
        if min < -PSD_FLOOR * scale.max(1.0) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
        let u = evd.U();
        let root: Vec<f64> = (0..n).map(|i| s[i].max(0.0).sqrt()).collect();
        let sqrt = Mat::from_fn(n, n, |i, j| (0..n).map(|k| u[(i, k)] * root[k] * u[(j, k)]).sum());
        Ok(Covariance { matrix, sqrt })
    }

    pub fn identity(n: usize) -> Self {
        Covariance {
            matrix: Mat::identity(n, n),
            sqrt: Mat::identity(n, n),
        }
    }

    pub fn zero(n: usize) -> Self {
        Covariance {
            matrix: Mat::zeros(n, n),
            sqrt: Mat::zeros(n, n),
        }
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        Covariance::new(Mat::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `gᵀ Q g`.
    pub fn quad(&self, g: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += g[i] * self.matrix[(i, j)] * g[j];
            }
        }
        s
    }

    /// `Q^{1/2} g` (the root is symmetric).
    pub fn sqrt_apply(&self, g: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.sqrt[(i, j)] * g[j]).sum())
            .collect()
    }
}

/// Time grid `0, dt, …, T` and master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub covariance: Covariance,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
}

impl NoiseConfig {
    pub fn new(covariance: Covariance, seed: u64, dt: f64, horizon: f64) -> Result<Self> {
        let cfg = NoiseConfig {
            covariance,
            seed,
            dt,
            horizon,
        };
        cfg.n_steps()?;
        Ok(cfg)
    }

    pub fn n_steps(&self) -> Result<usize> {
        time_steps(self.dt, self.horizon)
    }
}

/// Number of steps of size `dt` covering `[0, T]`; `dt` must divide `T`.
pub fn time_steps(dt: f64, horizon: f64) -> Result<usize> {
    let bad = Error::InvalidTimeGrid { dt, horizon };
    if !(dt > 0.0 && dt.is_finite() && horizon.is_finite() && horizon >= dt * (1.0 - 1e-12)) {
        return Err(bad);
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(bad);
    }
    Ok(n as usize)
}

/// `∫_0^t e^{2λs} ds`, the variance factor of an OU mode with rate `λ ≤ 0`.
pub fn ou_variance_factor(lambda: f64, t: f64) -> f64 {
    let x = 2.0 * lambda * t;
    if x.abs() < 1e-8 {
        t * (1.0 + x / 2.0)
    } else {
        -(x.exp_m1()) / (-2.0 * lambda)
    }
}

/// `φ₁(z) = (e^z − 1)/z`, `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + z / 2.0
    } else {
        z.exp_m1() / z
    }
}

/// Mode rates `λ_k`, drives `g_k` and their variances `σ_k² = g_kᵀ Q g_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OUEnsemble {
    pub lambdas: Vec<f64>,
    pub drives: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl OUEnsemble {
    /// Raw drives; variances are filled by [`OUEnsemble::with_covariance`].
    pub fn new(lambdas: Vec<f64>, drives: Vec<Vec<f64>>) -> Self {
        let k = lambdas.len();
        OUEnsemble {
            lambdas,
            drives,
            variances: vec![0.0; k],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn drive_dim(&self) -> usize {
        self.drives.first().map_or(0, |g| g.len())
    }

    pub fn with_covariance(mut self, cov: &Covariance) -> Result<Self> {
        if cov.dim() != self.drive_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.drive_dim(),
                found: cov.dim(),
            });
        }
        self.variances = self.drives.iter().map(|g| cov.quad(g).max(0.0)).collect();
        Ok(self)
    }

    /// `Var z_k(t)` from a zero start.
    pub fn exact_covariance(&self, t: f64) -> Vec<f64> {
        self.lambdas
            .iter()
            .zip(&self.variances)
            .map(|(&l, &s)| s * ou_variance_factor(l, t))
            .collect()
    }

    pub fn truncated(&self, n: usize) -> OUEnsemble {
        let n = n.min(self.n_modes());
        OUEnsemble {
            lambdas: self.lambdas[..n].to_vec(),
            drives: self.drives[..n].to_vec(),
            variances: self.variances[..n].to_vec(),
        }
    }
}

/// Kirchhoff-data noise: `g_k = L f_k`.
pub fn build_drive_k(b: &SpectralBasis) -> OUEnsemble {
    OUEnsemble::new(b.lambdas.clone(), b.vertex_traces.clone())
}

/// Drives `g_k = (λ − λ_k)·c_{·k}` from a matrix of map coefficients
/// `c_{jk} = ⟨D e_j, f_k⟩` (either map).
pub fn build_drive_from_coefficients(
    b: &SpectralBasis,
    coeffs: &Mat<f64>,
    lambda: f64,
) -> Result<OUEnsemble> {
    if coeffs.ncols() != b.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: b.n_modes(),
            found: coeffs.ncols(),
        });
    }
    let drives = (0..b.n_modes())
        .map(|k| {
            let s = lambda - b.lambdas[k];
            (0..coeffs.nrows()).map(|j| s * coeffs[(j, k)]).collect()
        })
        .collect();
    Ok(OUEnsemble::new(b.lambdas.clone(), drives))
}

/// Full vertex noise: `g_k = (λ − λ_k)·D* f_k`.
pub fn build_drive_full(b: &SpectralBasis, full_coeffs: &Mat<f64>) -> Result<OUEnsemble> {
    build_drive_from_coefficients(b, full_coeffs, b.lambda_shift)
}

/// Exact one-step transition of all modes jointly.
///
/// Over a step, `ξ_k = ∫_0^{dt} e^{λ_k(dt−s)} g_kᵀ dβ(s)` is Gaussian with
/// `Cov(ξ_k, ξ_l) = g_kᵀQg_l · dt φ₁((λ_k + λ_l) dt)`. The stepper keeps the
/// symmetric square root of that matrix and applies it to a standard normal
/// vector keyed by `(seed, path, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionStepper {
    pub dt: f64,
    pub decay: Vec<f64>,
    /// Square root of the step covariance; a single column for independent
    /// modes.
    root: Mat<f64>,
    seed: u64,
    independent: bool,
}

/// `Cov(ξ_k, ξ_l)` of one step.
pub fn step_covariance(ens: &OUEnsemble, cov: &Covariance, dt: f64) -> Result<Mat<f64>> {
    if cov.dim() != ens.drive_dim() {
        return Err(Error::DimensionMismatch {
            expected: ens.drive_dim(),
            found: cov.dim(),
        });
    }
    let shaped: Vec<Vec<f64>> = ens.drives.iter().map(|g| cov.sqrt_apply(g)).collect();
    let l = &ens.lambdas;
    let k = ens.n_modes();
    Ok(Mat::from_fn(k, k, |i, j| {
        let gram: f64 = shaped[i].iter().zip(&shaped[j]).map(|(a, b)| a * b).sum();
        gram * dt * phi1((l[i] + l[j]) * dt)
    }))
}

impl ConvolutionStepper {
    pub fn new(ens: &OUEnsemble, cov: &Covariance, seed: u64, dt: f64) -> Result<Self> {
        let c = step_covariance(ens, cov, dt)?;
        let root = Covariance::new(c)?.sqrt;
        Ok(ConvolutionStepper {
            dt,
            decay: ens.lambdas.iter().map(|l| (l * dt).exp()).collect(),
            root,
            seed,
            independent: false,
        })
    }

    /// Independent unit-variance noise on every mode.
    pub fn white(lambdas: &[f64], seed: u64, dt: f64) -> Self {
        ConvolutionStepper {
            dt,
            decay: lambdas.iter().map(|l| (l * dt).exp()).collect(),
            root: Mat::from_fn(lambdas.len(), 1, |k, _| {
                ou_variance_factor(lambdas[k], dt).sqrt()
            }),
            seed,
            independent: true,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.decay.len()
    }

    /// The stochastic increment `ξ` of step `step` on path `path`.
    pub fn increment(&self, path: u64, step: u64) -> Vec<f64> {
        let k = self.n_modes();
        let w = rng::normals(self.seed, path, step, k);
        if self.independent {
            (0..k).map(|i| self.root[(i, 0)] * w[i]).collect()
        } else {
            (0..k)
                .map(|i| (0..k).map(|j| self.root[(i, j)] * w[j]).sum())
                .collect()
        }
    }

    pub fn advance(&self, z: &mut [f64], path: u64, step: u64) {
        let xi = self.increment(path, step);
        for ((zk, d), x) in z.iter_mut().zip(&self.decay).zip(xi) {
            *zk = d * *zk + x;
        }
    }
}

/// Mode coefficients along a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub seed: u64,
    pub path: u64,
}

impl PathSample {
    /// `t, z_1, …, z_K` per row.
    pub fn to_csv(&self) -> String {
        let k = self.coeffs.first().map_or(0, |c| c.len());
        let mut s = String::from("t");
        for j in 1..=k {
            s.push_str(&format!(",z{j}"));
        }
        s.push('\n');
        for (t, c) in self.times.iter().zip(&self.coeffs) {
            s.push_str(&format!("{t}"));
            for x in c {
                s.push_str(&format!(",{x}"));
            }
            s.push('\n');
        }
        s
    }
}

fn run_path(stepper: &ConvolutionStepper, n_steps: usize, path: u64, seed: u64) -> PathSample {
    let mut z = vec![0.0; stepper.n_modes()];
    let mut times = vec![0.0];
    let mut coeffs = vec![z.clone()];
    for s in 0..n_steps {
        stepper.advance(&mut z, path, s as u64);
        times.push((s + 1) as f64 * stepper.dt);
        coeffs.push(z.clone());
    }
    PathSample {
        times,
        coeffs,
        seed,
        path,
    }
}

/// One path of the convolution from `Z(0) = 0`.
pub fn simulate_convolution(ens: &OUEnsemble, cfg: &NoiseConfig, path: u64) -> Result<PathSample> {
    let n = cfg.n_steps()?;
    let stepper = ConvolutionStepper::new(ens, &cfg.covariance, cfg.seed, cfg.dt)?;
    Ok(run_path(&stepper, n, path, cfg.seed))
}

/// Mode coefficients of many paths at chosen checkpoint times.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSample {
    pub times: Vec<f64>,
    /// `values[path][checkpoint][mode]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Per-mode second moment and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean_square: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl EnsembleSample {
    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    /// `E z_k²` at checkpoint `c`, estimated over the given paths.
    pub fn second_moments_of(&self, c: usize, paths: &[usize]) -> MomentEstimate {
        let k = self.values.first().map_or(0, |v| v[c].len());
        let n = paths.len() as f64;
        let mut mean_square = vec![0.0; k];
        let mut std_error = vec![0.0; k];
        for m in 0..k {
            let sq: Vec<f64> = paths.iter().map(|&p| self.values[p][c][m].powi(2)).collect();
            mean_square[m] = stats::mean(&sq);
            std_error[m] = if paths.len() > 1 {
                (stats::variance(&sq) / n).sqrt()
            } else {
                0.0
            };
        }
        MomentEstimate {
            mean_square,
            std_error,
        }
    }

    pub fn second_moments(&self, c: usize) -> MomentEstimate {
        let all: Vec<usize> = (0..self.n_paths()).collect();
        self.second_moments_of(c, &all)
    }

    /// Sample variance of mode `k` at checkpoint `c` with its standard error.
    pub fn variance(&self, c: usize, k: usize) -> (f64, f64) {
        let x: Vec<f64> = self.values.iter().map(|p| p[c][k]).collect();
        let v = stats::variance(&x);
        let m = stats::mean(&x);
        let n = x.len() as f64;
        let m4 = x.iter().map(|y| (y - m).powi(4)).sum::<f64>() / n;
        (v, ((m4 - v * v) / n).max(0.0).sqrt())
    }
}

fn checkpoint_steps(dt: f64, n_steps: usize, checkpoints: &[f64]) -> Result<Vec<usize>> {
    checkpoints
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(0);
            }
            let s = time_steps(dt, t)?;
            if s > n_steps {
                return Err(Error::InvalidTimeGrid { dt, horizon: t });
            }
            Ok(s)
        })
        .collect()
}

fn run_ensemble(
    stepper: &ConvolutionStepper,
    n_steps: usize,
    n_paths: usize,
    checkpoints: &[f64],
) -> Result<EnsembleSample> {
    let steps = checkpoint_steps(stepper.dt, n_steps, checkpoints)?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let values = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut z = vec![0.0; stepper.n_modes()];
            let mut out = vec![Vec::new(); steps.len()];
            for (i, &s) in steps.iter().enumerate() {
                if s == 0 {
                    out[i] = z.clone();
                }
            }
            for s in 0..last {
                stepper.advance(&mut z, p, s as u64);
                for (i, &c) in steps.iter().enumerate() {
                    if c == s + 1 {
                        out[i] = z.clone();
                    }
                }
            }
            out
        })
        .collect();
    Ok(EnsembleSample {
        times: checkpoints.to_vec(),
        values,
    })
}

/// `n_paths` independent paths (indices `0..n_paths`), recorded at `checkpoints`.
pub fn simulate_ensemble(
    ens: &OUEnsemble,
    cfg: &NoiseConfig,
    n_paths: usize,
    checkpoints: &[f64],
) -> Result<EnsembleSample> {
    let n = cfg.n_steps()?;
    let stepper = ConvolutionStepper::new(ens, &cfg.covariance, cfg.seed, cfg.dt)?;
    run_ensemble(&stepper, n, n_paths, checkpoints)
}

/// Spectral coefficients of the solution forced by space-time white noise:
/// independent OU modes with unit intensity. Refused when the heat-kernel
/// trace series does not pass the convergence check.
pub fn simulate_whitenoise_forcing(
    b: &SpectralBasis,
    seed: u64,
    dt: f64,
    horizon: f64,
    path: u64,
) -> Result<PathSample> {
    let verdict = crate::diagnostics::trace_class_check(b, horizon)?;
    if verdict.verdict == crate::diagnostics::Verdict::Diverging {
        return Err(Error::TraceDivergence {
            slope: verdict.slope,
        });
    }
    let n = time_steps(dt, horizon)?;
    let stepper = ConvolutionStepper::white(&b.lambdas, seed, dt);
    Ok(run_path(&stepper, n, path, seed))
}

/// Ensemble variant of [`simulate_whitenoise_forcing`] without the check.
pub fn whitenoise_ensemble(
    lambdas: &[f64],
    seed: u64,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    checkpoints: &[f64],
) -> Result<EnsembleSample> {
    let n = time_steps(dt, horizon)?;
    let stepper = ConvolutionStepper::white(lambdas, seed, dt);
    run_ensemble(&stepper, n, n_paths, checkpoints)
}
