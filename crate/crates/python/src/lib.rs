use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vn::diagnostics::{frac_norm as core_frac_norm, regularity_series_k, FracNormSpec};
use vn::dirichlet::{adjoint_coefficients, dirichlet_map_k};
use vn::fem::Discretization;
use vn::graph::{validate_graph, GraphSpec, MetricGraph};
use vn::sde::{build_drive_k, simulate_convolution, simulate_ensemble, Covariance, NoiseConfig};
use vn::solver::{parse_drift, MildProblem, NoiseSource};
use vn::spectral::{asymptotics_check, vertex_bound_estimate, SpectralBasis};
use vn::surjectivity::surjectivity_construct;

fn err(e: vn::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {}", e.class(), e))
}

fn covariance(q: Option<Vec<Vec<f64>>>, dim: usize) -> PyResult<Covariance> {
    match q {
        None => Ok(Covariance::identity(dim)),
        Some(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(err(vn::Error::DimensionMismatch {
                    expected: dim,
                    found: rows.len(),
                }));
            }
            Covariance::new(faer::Mat::from_fn(dim, dim, |i, j| rows[i][j])).map_err(err)
        }
    }
}

/// Validated metric graph.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    spec: GraphSpec,
    graph: MetricGraph,
}

impl PyGraph {
    fn build(spec: GraphSpec) -> PyResult<Self> {
        let graph = validate_graph(&spec).map_err(err)?;
        Ok(PyGraph { spec, graph })
    }
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::build(GraphSpec::from_toml_str(text).map_err(err)?)
    }

    #[staticmethod]
    fn interval(length: f64) -> PyResult<Self> {
        Self::build(GraphSpec::interval(length))
    }

    #[staticmethod]
    fn star(lengths: Vec<f64>) -> PyResult<Self> {
        Self::build(GraphSpec::star(&lengths))
    }

    #[staticmethod]
    fn path(lengths: Vec<f64>) -> PyResult<Self> {
        Self::build(GraphSpec::path(&lengths))
    }

    fn to_toml(&self) -> String {
        self.spec.to_toml_string()
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.graph.n_vertices()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.graph.n_edges()
    }

    #[getter]
    fn boundary_dim(&self) -> usize {
        self.graph.boundary_dim()
    }

    /// Surjection onto boundary data `z`: gamma, contraction and residual.
    fn surjection<'py>(&self, py: Python<'py>, z: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let s = surjectivity_construct(&self.graph, &z).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("gamma", s.gamma)?;
        d.set_item("contraction", s.contraction)?;
        d.set_item("residual", s.residual_inf())?;
        Ok(d)
    }
}

/// Finite element discretization and its leading eigenpairs.
#[pyclass(name = "Basis", frozen)]
struct PyBasis {
    disc: Discretization,
    basis: SpectralBasis,
}

#[pymethods]
impl PyBasis {
    #[new]
    #[pyo3(signature = (graph, h, modes, shift = 1.0))]
    fn new(graph: &PyGraph, h: f64, modes: usize, shift: f64) -> PyResult<Self> {
        let disc = Discretization::new(&graph.graph, h).map_err(err)?;
        let basis = SpectralBasis::compute(&disc, modes)
            .and_then(|b| b.with_shift(shift))
            .map_err(err)?;
        Ok(PyBasis { disc, basis })
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.basis.lambdas.clone()
    }

    #[getter]
    fn vertex_traces(&self) -> Vec<Vec<f64>> {
        self.basis.vertex_traces.clone()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    #[getter]
    fn shift(&self) -> f64 {
        self.basis.lambda_shift
    }

    fn to_csv(&self) -> String {
        self.basis.to_csv()
    }

    /// Nodal values of `Σ c_k f_k`.
    fn reconstruct(&self, coeffs: Vec<f64>) -> Vec<f64> {
        self.basis.reconstruct(&coeffs)
    }

    /// `(l1, l2, slope)` for `λ − λ_k` over `k_lo..=k_hi` (1-based).
    fn asymptotics(&self, k_lo: usize, k_hi: usize) -> PyResult<(f64, f64, f64)> {
        let a = asymptotics_check(&self.basis, self.basis.lambda_shift, k_lo, k_hi).map_err(err)?;
        Ok((a.l1, a.l2, a.loglog_slope))
    }

    /// `(sup, growth_ratio)` of `‖L f_k‖²`.
    fn vertex_bound(&self) -> (f64, f64) {
        let v = vertex_bound_estimate(&self.basis);
        (v.sup, v.growth_ratio)
    }

    /// Largest `|(λ − λ_k)⟨D_K e_i, f_k⟩ − (L f_k)_i|` over modes and vertices.
    fn adjoint_error(&self) -> PyResult<f64> {
        let dk = dirichlet_map_k(&self.disc, self.basis.lambda_shift).map_err(err)?;
        let c = adjoint_coefficients(&self.basis, &dk).map_err(err)?;
        let mut worst = 0.0f64;
        for k in 0..self.basis.n_modes() {
            for i in 0..self.basis.n_vertices() {
                let lhs = (self.basis.lambda_shift - self.basis.lambdas[k]) * c[(i, k)];
                worst = worst.max((lhs - self.basis.vertex_traces[k][i]).abs());
            }
        }
        Ok(worst)
    }

    /// `‖u‖_α` of spectral coefficients.
    fn frac_norm(&self, coeffs: Vec<f64>, alpha: f64) -> PyResult<f64> {
        let spec = FracNormSpec::new(self.basis.lambda_shift, alpha).map_err(err)?;
        Ok(core_frac_norm(&coeffs, &spec, &self.basis))
    }

    /// Closed-form regularity series for Kirchhoff-data noise.
    #[pyo3(signature = (alpha, t, covariance = None))]
    fn regularity<'py>(
        &self,
        py: Python<'py>,
        alpha: f64,
        t: f64,
        covariance: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let q = self::covariance(covariance, self.basis.n_vertices())?;
        let v = regularity_series_k(&self.basis, &q, alpha, t).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("alpha", alpha)?;
        d.set_item("partial_sums", v.partial_sums.clone())?;
        d.set_item("slope", v.slope)?;
        d.set_item("ci", v.ci)?;
        d.set_item("verdict", v.verdict.as_str())?;
        Ok(d)
    }

    /// One path of the Kirchhoff-data stochastic convolution:
    /// `(times, coefficients)`.
    #[pyo3(signature = (seed, dt, horizon, path = 0, covariance = None))]
    fn convolve(
        &self,
        seed: u64,
        dt: f64,
        horizon: f64,
        path: u64,
        covariance: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let q = self::covariance(covariance, self.basis.n_vertices())?;
        let ens = build_drive_k(&self.basis).with_covariance(&q).map_err(err)?;
        let cfg = NoiseConfig::new(q, seed, dt, horizon).map_err(err)?;
        let p = simulate_convolution(&ens, &cfg, path).map_err(err)?;
        Ok((p.times, p.coeffs))
    }

    /// Per-mode `(empirical, exact)` variances at `t`, which must lie on the
    /// time grid.
    #[pyo3(signature = (seed, dt, t, paths, covariance = None))]
    fn ensemble_variance(
        &self,
        py: Python<'_>,
        seed: u64,
        dt: f64,
        t: f64,
        paths: usize,
        covariance: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let q = self::covariance(covariance, self.basis.n_vertices())?;
        let ens = build_drive_k(&self.basis).with_covariance(&q).map_err(err)?;
        let cfg = NoiseConfig::new(q, seed, dt, t).map_err(err)?;
        let s = py
            .detach(|| simulate_ensemble(&ens, &cfg, paths, &[t]))
            .map_err(err)?;
        let emp = (0..ens.n_modes()).map(|k| s.variance(0, k).0).collect();
        Ok((emp, ens.exact_covariance(t)))
    }

    /// Mild solution from spectral coefficients `u0`: `(times, norms,
    /// final coefficients)`. Noise is off unless a seed is given.
    #[pyo3(signature = (u0, drift, dt, horizon, seed = None, path = 0, covariance = None))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        u0: Vec<f64>,
        drift: &str,
        dt: f64,
        horizon: f64,
        seed: Option<u64>,
        path: u64,
        covariance: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let f = parse_drift(drift, self.basis.mesh.n_edges()).map_err(err)?;
        let source = match seed {
            Some(seed) => {
                let q = self::covariance(covariance, self.basis.n_vertices())?;
                let cfg = NoiseConfig::new(q, seed, dt, horizon).map_err(err)?;
                Some(NoiseSource::new(build_drive_k(&self.basis), &cfg).map_err(err)?)
            }
            None => None,
        };
        let pr = MildProblem::new(&self.basis, &f, source.as_ref(), dt, horizon).map_err(err)?;
        let s = pr.solve(&u0, path).map_err(err)?;
        let norms = s.norms();
        Ok((s.times.clone(), norms, s.final_coeffs().to_vec()))
    }
}

#[pymodule]
#[pyo3(name = "vertexnoise")]
fn vertexnoise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyBasis>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
