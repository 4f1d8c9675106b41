//! Mild solutions of the semilinear problem by spectral Galerkin with
//! exponential Euler in time.
//!
//! The state is the vector of mode coefficients `x_k = ⟨X(t), f_k⟩`. One step
//! of size `dt` is
//! `x_k ← e^{λ_k dt} x_k + dt φ₁(λ_k dt) ⟨F(u), f_k⟩ + ΔZ_k`,
//! where the drift acts pointwise on the edge grids with lumped-mass
//! quadrature and `ΔZ_k` is the exact convolution increment of the step.

use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Mesh;
use crate::graph::{GraphFunction, MetricGraph};
use crate::sde::{phi1, time_steps, ConvolutionStepper, Covariance, NoiseConfig, OUEnsemble};
use crate::spectral::SpectralBasis;

/// Scalar map applied pointwise on one edge.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarMap {
    /// `a x + b`.
    Affine { slope: f64, offset: f64 },
    /// `A sin(ω x)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `Σ_j a_j x^j`, ascending coefficients.
    Polynomial(Vec<f64>),
}

impl ScalarMap {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarMap::Affine { slope, offset } => slope * x + offset,
            ScalarMap::Sine {
                amplitude,
                frequency,
            } => amplitude * (frequency * x).sin(),
            ScalarMap::Polynomial(a) => a.iter().rev().fold(0.0, |acc, c| acc * x + c),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ScalarMap::Affine { slope, .. } => *slope,
            ScalarMap::Sine {
                amplitude,
                frequency,
            } => amplitude * frequency * (frequency * x).cos(),
            ScalarMap::Polynomial(a) => a
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (j, c)| acc * x + j as f64 * c),
        }
    }

    /// Global Lipschitz constant, `None` for polynomials of degree ≥ 2.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            ScalarMap::Affine { slope, .. } => Some(slope.abs()),
            ScalarMap::Sine {
                amplitude,
                frequency,
            } => Some((amplitude * frequency).abs()),
            ScalarMap::Polynomial(a) => match trimmed(a).len() {
                0 | 1 => Some(0.0),
                2 => Some(a[1].abs()),
                _ => None,
            },
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            ScalarMap::Affine { slope, offset } => slope.is_finite() && offset.is_finite(),
            ScalarMap::Sine {
                amplitude,
                frequency,
            } => amplitude.is_finite() && frequency.is_finite(),
            ScalarMap::Polynomial(a) => a.iter().all(|c| c.is_finite()),
        }
    }
}

fn trimmed(a: &[f64]) -> &[f64] {
    let n = a.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
    &a[..n]
}

/// Parses `zero`, `affine:a,b`, `sine:A,w` or `poly:a0,a1,…`.
impl FromStr for ScalarMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDrift(format!("cannot parse '{s}'"));
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        let map = match (kind.trim(), nums.as_slice()) {
            ("zero", []) => ScalarMap::Polynomial(Vec::new()),
            ("affine", [a, b]) => ScalarMap::Affine {
                slope: *a,
                offset: *b,
            },
            ("sine", [a, w]) => ScalarMap::Sine {
                amplitude: *a,
                frequency: *w,
            },
            ("poly", c) if !c.is_empty() => ScalarMap::Polynomial(c.to_vec()),
            _ => return Err(bad()),
        };
        if !map.is_finite() {
            return Err(bad());
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    Lipschitz,
    OddPolynomial,
}

/// Per-edge Nemytskij drift.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub kind: DriftKind,
    pub maps: Vec<ScalarMap>,
    /// Largest per-edge Lipschitz constant (Lipschitz kind only).
    pub lipschitz: Option<f64>,
}

/// Half-width of the grid on which drift properties are sampled.
const SAMPLE_RADIUS: f64 = 10.0;
const SAMPLE_POINTS: usize = 4001;

fn sample_grid() -> impl Iterator<Item = f64> {
    (0..SAMPLE_POINTS)
        .map(|i| -SAMPLE_RADIUS + 2.0 * SAMPLE_RADIUS * i as f64 / (SAMPLE_POINTS - 1) as f64)
}

impl Drift {
    pub fn zero(n_edges: usize) -> Self {
        Drift {
            kind: DriftKind::Lipschitz,
            maps: vec![ScalarMap::Polynomial(Vec::new()); n_edges],
            lipschitz: Some(0.0),
        }
    }

    pub fn lipschitz(maps: Vec<ScalarMap>) -> Result<Self> {
        let mut l: f64 = 0.0;
        for m in &maps {
            let c = m
                .lipschitz()
                .ok_or_else(|| Error::InvalidDrift(format!("{m:?} is not globally Lipschitz")))?;
            let pts: Vec<f64> = sample_grid().collect();
            for w in pts.windows(2) {
                let q = (m.eval(w[1]) - m.eval(w[0])).abs() / (w[1] - w[0]);
                if q > c * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::InvalidDrift(format!(
                        "{m:?} exceeds its Lipschitz constant on the sample grid"
                    )));
                }
            }
            l = l.max(c);
        }
        Ok(Drift {
            kind: DriftKind::Lipschitz,
            maps,
            lipschitz: Some(l),
        })
    }

    /// Odd degree with negative leading coefficient on every edge.
    pub fn odd_polynomial(coeffs: Vec<Vec<f64>>) -> Result<Self> {
        for a in &coeffs {
            let t = trimmed(a);
            let deg = t.len().saturating_sub(1);
            if t.is_empty() || deg % 2 == 0 || t[deg] >= 0.0 || t.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidDrift(format!(
                    "{a:?} needs odd degree and a negative leading coefficient"
                )));
            }
        }
        Ok(Drift {
            kind: DriftKind::OddPolynomial,
            maps: coeffs.into_iter().map(ScalarMap::Polynomial).collect(),
            lipschitz: None,
        })
    }

    /// Same map on every edge, classified by whether it is Lipschitz.
    pub fn uniform(map: ScalarMap, n_edges: usize) -> Result<Self> {
        match &map {
            ScalarMap::Polynomial(a) if map.lipschitz().is_none() => {
                Drift::odd_polynomial(vec![a.clone(); n_edges])
            }
            _ => Drift::lipschitz(vec![map; n_edges]),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.maps.len()
    }

    pub fn is_zero(&self) -> bool {
        self.maps
            .iter()
            .all(|m| matches!(m, ScalarMap::Polynomial(a) if trimmed(a).is_empty()))
    }

    /// `sup F_e'` over the sample grid and edges: the one-sided Lipschitz
    /// constant for polynomial drifts.
    pub fn one_sided_bound(&self) -> f64 {
        self.maps
            .iter()
            .flat_map(|m| sample_grid().map(move |x| m.derivative(x)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lumped-mass load `∫ F(u) φ_i` on the nodes of `mesh`.
    pub fn load(&self, mesh: &Mesh, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mesh.n_dofs()];
        for (e, map) in self.maps.iter().enumerate() {
            let h = mesh.cell_size(e);
            let n = mesh.cells(e);
            for j in 0..=n {
                let d = mesh.node_dof(e, j);
                let w = if j == 0 || j == n { 0.5 * h } else { h };
                out[d] += w * map.eval(u[d]);
            }
        }
        out
    }

    /// `⟨F(Σ x_k f_k), f_k⟩` for every mode.
    pub fn project(&self, b: &SpectralBasis, x: &[f64]) -> Vec<f64> {
        let u = b.reconstruct(x);
        let load = self.load(&b.mesh, &u);
        b.modes
            .iter()
            .map(|f| f.iter().zip(&load).map(|(a, c)| a * c).sum())
            .collect()
    }
}

/// Parses a drift for `n_edges` edges from a [`ScalarMap`] description.
pub fn parse_drift(s: &str, n_edges: usize) -> Result<Drift> {
    Drift::uniform(s.parse()?, n_edges)
}

/// Coefficients `⟨u_0, f_k⟩_M` and the residual `‖u_0 − Σ c_k f_k‖_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coeffs: Vec<f64>,
    pub residual: f64,
}

pub fn project_initial(
    mesh: &Mesh,
    g: &MetricGraph,
    b: &SpectralBasis,
    u0: &GraphFunction,
) -> Result<Projection> {
    if mesh.fingerprint() != b.mesh_key() {
        return Err(Error::MeshMismatch);
    }
    let u = mesh.from_graph_function(g, u0)?;
    Ok(project_nodal(b, &u))
}

/// Same as [`project_initial`] for nodal values already on the basis mesh.
pub fn project_nodal(b: &SpectralBasis, u: &[f64]) -> Projection {
    let coeffs = b.project(u);
    let r = b.reconstruct(&coeffs);
    let diff: Vec<f64> = u.iter().zip(&r).map(|(a, c)| a - c).collect();
    Projection {
        residual: b.mass_norm(&diff),
        coeffs,
    }
}

/// Vertex noise feeding the solver: drives, covariance and master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource {
    pub ensemble: OUEnsemble,
    pub covariance: Covariance,
    pub seed: u64,
}

impl NoiseSource {
    pub fn new(ensemble: OUEnsemble, cfg: &NoiseConfig) -> Result<Self> {
        let ensemble = ensemble.with_covariance(&cfg.covariance)?;
        Ok(NoiseSource {
            ensemble,
            covariance: cfg.covariance.clone(),
            seed: cfg.seed,
        })
    }
}

/// Largest number of step halvings the polynomial guard may apply.
pub const MAX_HALVINGS: u32 = 30;

/// Integration setup shared by all paths.
#[derive(Debug, Clone)]
pub struct MildProblem<'a> {
    pub basis: &'a SpectralBasis,
    pub drift: &'a Drift,
    pub noise: Option<&'a NoiseSource>,
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub times: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub initial_coeffs: Vec<f64>,
    pub initial_values: Vec<f64>,
    /// Substeps taken by the polynomial guard beyond one per step.
    pub extra_substeps: usize,
}

impl SolutionPath {
    pub fn final_coeffs(&self) -> &[f64] {
        self.coeffs.last().expect("path has the initial state")
    }

    pub fn norms(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| l2(c)).collect()
    }

    /// `t, norm, v_0, …` with vertex values `Σ c_k (Lf_k)_v`.
    pub fn to_csv(&self, b: &SpectralBasis) -> String {
        let nv = b.n_vertices();
        let mut s = String::from("t,norm");
        for v in 0..nv {
            s.push_str(&format!(",v{v}"));
        }
        s.push('\n');
        for (t, c) in self.times.iter().zip(&self.coeffs) {
            s.push_str(&format!("{t},{}", l2(c)));
            for v in 0..nv {
                let x: f64 = c.iter().zip(&b.vertex_traces).map(|(a, l)| a * l[v]).sum();
                s.push_str(&format!(",{x}"));
            }
            s.push('\n');
        }
        s
    }
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl<'a> MildProblem<'a> {
    pub fn new(
        basis: &'a SpectralBasis,
        drift: &'a Drift,
        noise: Option<&'a NoiseSource>,
        dt: f64,
        horizon: f64,
    ) -> Result<Self> {
        time_steps(dt, horizon)?;
        if drift.n_edges() != basis.mesh.n_edges() {
            return Err(Error::DimensionMismatch {
                expected: basis.mesh.n_edges(),
                found: drift.n_edges(),
            });
        }
        if let Some(n) = noise {
            if n.ensemble.n_modes() < basis.n_modes() {
                return Err(Error::DimensionMismatch {
                    expected: basis.n_modes(),
                    found: n.ensemble.n_modes(),
                });
            }
        }
        Ok(MildProblem {
            basis,
            drift,
            noise,
            dt,
            horizon,
        })
    }

    fn stepper(&self) -> Result<Option<ConvolutionStepper>> {
        self.noise
            .map(|n| {
                let ens = n.ensemble.truncated(self.basis.n_modes());
                ConvolutionStepper::new(&ens, &n.covariance, n.seed, self.dt)
            })
            .transpose()
    }

    /// Deterministic part of one step: exponential Euler over `h`, split in
    /// halves while a polynomial drift moves the state by more than its norm.
    fn drift_step(&self, x: &[f64], h: f64, depth: u32, extra: &mut usize) -> Vec<f64> {
        let b = self.basis;
        let fx = if self.drift.is_zero() {
            vec![0.0; x.len()]
        } else {
            self.drift.project(b, x)
        };
        let y: Vec<f64> = (0..x.len())
            .map(|k| {
                let z = b.lambdas[k] * h;
                z.exp() * x[k] + h * phi1(z) * fx[k]
            })
            .collect();
        let guarded = self.drift.kind == DriftKind::OddPolynomial && depth < MAX_HALVINGS;
        // A drift increment larger than the state covers every case where
        // the state doubles, and also the sign-flipping two-cycles of the
        // explicit drift update.
        let kick: Vec<f64> = (0..x.len())
            .map(|k| y[k] - (b.lambdas[k] * h).exp() * x[k])
            .collect();
        let blown = !y.iter().all(|v| v.is_finite()) || l2(&kick) > l2(x).max(1.0);
        if guarded && blown {
            *extra += 1;
            let mid = self.drift_step(x, h / 2.0, depth + 1, extra);
            return self.drift_step(&mid, h / 2.0, depth + 1, extra);
        }
        y
    }

    /// One step from `x` with the given noise increment.
    pub fn step(&self, x: &[f64], increment: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut extra = 0;
        let mut y = self.drift_step(x, self.dt, 0, &mut extra);
        if let Some(dz) = increment {
            for (a, d) in y.iter_mut().zip(dz) {
                *a += d;
            }
        }
        Ok(y)
    }

    pub fn solve(&self, u0: &[f64], path: u64) -> Result<SolutionPath> {
        let n = time_steps(self.dt, self.horizon)?;
        let stepper = self.stepper()?;
        let mut x = u0.to_vec();
        x.resize(self.basis.n_modes(), 0.0);
        let mut times = vec![0.0];
        let mut coeffs = vec![x.clone()];
        let mut extra = 0;
        for s in 0..n {
            let mut y = self.drift_step(&x, self.dt, 0, &mut extra);
            if let Some(st) = &stepper {
                for (a, d) in y.iter_mut().zip(st.increment(path, s as u64)) {
                    *a += d;
                }
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteState { step: s + 1 });
            }
            x = y;
            times.push((s + 1) as f64 * self.dt);
            coeffs.push(x.clone());
        }
        Ok(SolutionPath {
            times,
            initial_values: self.basis.reconstruct(&coeffs[0]),
            initial_coeffs: coeffs[0].clone(),
            coeffs,
            extra_substeps: extra,
        })
    }

    /// Paths `0..n_paths` in parallel.
    pub fn ensemble(&self, u0: &[f64], n_paths: usize) -> Result<Vec<SolutionPath>> {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|p| self.solve(u0, p))
            .collect()
    }
}

/// Spectral-Galerkin mild solution on `[0, T]`.
pub fn solve_mild(problem: &MildProblem, u0: &[f64], path: u64) -> Result<SolutionPath> {
    problem.solve(u0, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub initial_distance: f64,
    pub sup_distance: f64,
    /// `sup_distance / initial_distance` (zero when the starts coincide).
    pub ratio: f64,
}

/// Runs both starts with the same noise path and compares them.
pub fn feller_coupling_test(
    problem: &MildProblem,
    u0: &[f64],
    v0: &[f64],
    path: u64,
) -> Result<Coupling> {
    let a = problem.solve(u0, path)?;
    let b = problem.solve(v0, path)?;
    let dist = |x: &[f64], y: &[f64]| l2(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
    let initial_distance = dist(&a.coeffs[0], &b.coeffs[0]);
    let sup_distance = a
        .coeffs
        .iter()
        .zip(&b.coeffs)
        .map(|(x, y)| dist(x, y))
        .fold(0.0, f64::max);
    Ok(Coupling {
        initial_distance,
        sup_distance,
        ratio: if initial_distance > 0.0 {
            sup_distance / initial_distance
        } else {
            0.0
        },
    })
}
