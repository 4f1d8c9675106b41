//! Eigenpairs of the discrete graph operator and the trace data derived from them.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::fem::{Discretization, FormMatrices, Mesh, SymmetricSparse};
use crate::graph::{EdgeEnd, MetricGraph};
use crate::stats;

/// Relative gap below which neighbouring eigenvalues count as one multiplet.
pub const MULTIPLET_TOL: f64 = 1e-7;

/// Smallest `n_modes` eigenpairs of `K x = ν M x` for dense `K`, `M`.
///
/// Returns the ascending `ν` and the `M`-orthonormal eigenvectors as columns.
pub fn dense_generalized_eigen(
    k: Mat<f64>,
    m: &Mat<f64>,
    n_modes: usize,
) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = k.nrows();
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| Error::SolverFailure(format!("mass matrix factorisation: {e:?}")))?;
    let l = llt.L();
    let mut x = k;
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut c = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::SolverFailure(format!("symmetric eigensolve: {e:?}")))?;
    let s = evd.S().column_vector();
    let nus: Vec<f64> = (0..n_modes).map(|i| s[i]).collect();
    let mut y = evd.U().subcols(0, n_modes).to_owned();
    l.transpose().solve_upper_triangular_in_place(y.as_mut());
    if nus.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite eigenvalue".into()));
    }
    Ok((nus, y))
}

/// Largest admissible mode count for a discretisation with `dofs` unknowns.
pub fn max_reliable_modes(dofs: usize) -> usize {
    dofs / 4
}

/// Eigenpairs `(λ_k, f_k)` with `λ_1 ≥ λ_2 ≥ …`, plus vertex and end traces.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub lambdas: Vec<f64>,
    /// Continuous-space coefficient vectors, `M`-orthonormal.
    pub modes: Vec<Vec<f64>>,
    /// `L f_k`, one entry per vertex.
    pub vertex_traces: Vec<Vec<f64>>,
    /// Derivative of `f_k` at each edge end, pointing into the edge; indexed
    /// by `2e` (start) and `2e+1` (end).
    pub deriv_traces: Vec<Vec<f64>>,
    /// `c·f_k'` at each edge end, same layout as `deriv_traces`.
    pub end_fluxes: Vec<Vec<f64>>,
    pub lambda_shift: f64,
    pub mesh: Mesh,
    pub mass: SymmetricSparse,
}

/// Plain eigensolve on the continuous space of a discretisation.
pub fn eigensolve(forms: &FormMatrices, n_modes: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let dofs = forms.k.dim();
    let max = max_reliable_modes(dofs);
    if n_modes == 0 || n_modes > max {
        return Err(Error::TooManyModes {
            requested: n_modes,
            max,
        });
    }
    let (nus, vecs) = dense_generalized_eigen(forms.k.to_dense(), &forms.m.to_dense(), n_modes)?;
    let lambdas = nus.iter().map(|&nu| -nu.max(0.0)).collect();
    let modes = (0..n_modes)
        .map(|j| (0..dofs).map(|i| vecs[(i, j)]).collect())
        .collect();
    Ok((lambdas, modes))
}

impl SpectralBasis {
    /// Computes `n_modes` eigenpairs with the default shift `λ = 1`.
    pub fn compute(disc: &Discretization, n_modes: usize) -> Result<Self> {
        let (lambdas, mut modes) = eigensolve(&disc.forms, n_modes)?;
        let nv = disc.graph.n_vertices();
        for f in modes.iter_mut() {
            fix_sign(f, nv);
        }
        let vertex_traces = modes.iter().map(|f| f[..nv].to_vec()).collect();
        let mut end_fluxes = Vec::with_capacity(n_modes);
        let mut deriv_traces = Vec::with_capacity(n_modes);
        for (f, &lam) in modes.iter().zip(&lambdas) {
            let psi = end_flux(disc, f, lam);
            deriv_traces.push(flux_to_derivative(&disc.graph, &psi));
            end_fluxes.push(psi);
        }
        Ok(SpectralBasis {
            lambdas,
            modes,
            vertex_traces,
            deriv_traces,
            end_fluxes,
            lambda_shift: 1.0,
            mesh: disc.mesh.clone(),
            mass: disc.forms.m.clone(),
        })
    }

    pub fn with_shift(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::NonpositiveShift(lambda));
        }
        self.lambda_shift = lambda;
        Ok(self)
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// Same basis restricted to the first `n` modes.
    pub fn truncated(&self, n: usize) -> SpectralBasis {
        let n = n.min(self.n_modes());
        SpectralBasis {
            lambdas: self.lambdas[..n].to_vec(),
            modes: self.modes[..n].to_vec(),
            vertex_traces: self.vertex_traces[..n].to_vec(),
            deriv_traces: self.deriv_traces[..n].to_vec(),
            end_fluxes: self.end_fluxes[..n].to_vec(),
            lambda_shift: self.lambda_shift,
            mesh: self.mesh.clone(),
            mass: self.mass.clone(),
        }
    }

    /// `⟨u, f_k⟩_M` for every mode.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let mu = self.mass.mul_vec(u);
        self.modes
            .iter()
            .map(|f| f.iter().zip(&mu).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Σ c_k f_k` as a continuous coefficient vector.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.mesh.n_dofs()];
        for (c, f) in coeffs.iter().zip(&self.modes) {
            if *c != 0.0 {
                for (ui, fi) in u.iter_mut().zip(f) {
                    *ui += c * fi;
                }
            }
        }
        u
    }

    pub fn mass_norm(&self, u: &[f64]) -> f64 {
        self.mass.quad_form(u, u).max(0.0).sqrt()
    }

    /// `‖K f_k + λ_k M f_k‖ / (max(|λ_k|, 1)·‖M f_k‖)`.
    pub fn residual(&self, forms: &FormMatrices, k: usize) -> f64 {
        let f = &self.modes[k];
        let kf = forms.k.mul_vec(f);
        let mf = forms.m.mul_vec(f);
        let lam = self.lambdas[k];
        let r: f64 = kf
            .iter()
            .zip(&mf)
            .map(|(a, b)| (a + lam * b).powi(2))
            .sum::<f64>()
            .sqrt();
        r / (mf.iter().map(|x| x * x).sum::<f64>().sqrt() * lam.abs().max(1.0))
    }

    /// Mesh identity used to detect mixing objects from different grids.
    pub fn mesh_key(&self) -> u64 {
        self.mesh.fingerprint()
    }

    /// One row per mode: `k, lambda, trace_norm_sq, deriv_trace_norm`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,lambda,trace_norm_sq,deriv_trace_norm\n");
        for k in 0..self.n_modes() {
            let tn: f64 = self.vertex_traces[k].iter().map(|x| x * x).sum();
            let dn: f64 = self.deriv_traces[k]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            s.push_str(&format!("{},{},{},{}\n", k + 1, self.lambdas[k], tn, dn));
        }
        s
    }
}

fn fix_sign(f: &mut [f64], n_vertices: usize) {
    let scale = f.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let tol = 1e-8 * scale;
    let lead = f[..n_vertices]
        .iter()
        .chain(f[n_vertices..].iter())
        .find(|x| x.abs() > tol)
        .copied()
        .unwrap_or(1.0);
    if lead < 0.0 {
        f.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `c·u'` at every edge end, derivative pointing into the edge, for a
/// continuous `u` satisfying `(K + shift·M) u = 0` away from the vertices.
pub fn end_flux(disc: &Discretization, u: &[f64], shift: f64) -> Vec<f64> {
    let ub = disc.embed(u);
    let m = disc.graph.n_edges();
    let mut psi = vec![0.0; 2 * m];
    for e in 0..m {
        for (slot, end) in [(0, EdgeEnd::Start), (1, EdgeEnd::End)] {
            let d = disc.broken_mesh.end_dof(e, end);
            psi[2 * e + slot] = -disc.broken_forms.shifted_row_dot(shift, d, &ub);
        }
    }
    psi
}

fn flux_to_derivative(g: &MetricGraph, psi: &[f64]) -> Vec<f64> {
    psi.iter()
        .enumerate()
        .map(|(i, &p)| {
            let end = if i % 2 == 0 { EdgeEnd::Start } else { EdgeEnd::End };
            p / g.edge(i / 2).conductance_at_end(end)
        })
        .collect()
}

/// Summary of the quadratic growth of `λ − λ_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Asymptotics {
    pub l1: f64,
    pub l2: f64,
    pub loglog_slope: f64,
}

/// Empirical constants and log-log slope of `λ − λ_k` against `k` over the
/// 1-based index range `k_lo..=k_hi`.
pub fn asymptotics_check(
    b: &SpectralBasis,
    lambda: f64,
    k_lo: usize,
    k_hi: usize,
) -> Result<Asymptotics> {
    if !(lambda > 0.0) {
        return Err(Error::NonpositiveShift(lambda));
    }
    if k_lo < 1 || k_hi <= k_lo || k_hi > b.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "mode range {k_lo}..={k_hi} not within 1..={}",
            b.n_modes()
        )));
    }
    let ks: Vec<f64> = (k_lo..=k_hi).map(|k| k as f64).collect();
    let gaps: Vec<f64> = (k_lo..=k_hi).map(|k| lambda - b.lambdas[k - 1]).collect();
    let ratios: Vec<f64> = gaps.iter().zip(&ks).map(|(g, k)| g / (k * k)).collect();
    let fit = stats::loglog_fit(&ks, &gaps).expect("range has at least two points");
    Ok(Asymptotics {
        l1: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        l2: ratios.iter().cloned().fold(0.0, f64::max),
        loglog_slope: fit.slope,
    })
}

/// Consecutive modes whose eigenvalues agree to [`MULTIPLET_TOL`].
pub fn multiplets(lambdas: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=lambdas.len() {
        let split = k == lambdas.len() || {
            let (a, b) = (lambdas[k - 1], lambdas[k]);
            (a - b).abs() > MULTIPLET_TOL * a.abs().max(b.abs()).max(1.0)
        };
        if split {
            out.push(start..k);
            start = k;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexBound {
    /// `‖L f_k‖²` per mode.
    pub per_mode: Vec<f64>,
    pub running_max: Vec<f64>,
    /// Multiplet ranges and their summed `‖L f‖²`.
    pub multiplets: Vec<(std::ops::Range<usize>, f64)>,
    pub sup: f64,
    /// Largest multiplet total among the upper half of modes over the largest
    /// among the lower half.
    pub growth_ratio: f64,
}

pub fn vertex_bound_estimate(b: &SpectralBasis) -> VertexBound {
    let per_mode: Vec<f64> = b
        .vertex_traces
        .iter()
        .map(|t| t.iter().map(|x| x * x).sum())
        .collect();
    let mut running_max = Vec::with_capacity(per_mode.len());
    let mut acc: f64 = 0.0;
    for &v in &per_mode {
        acc = acc.max(v);
        running_max.push(acc);
    }
    let groups: Vec<(std::ops::Range<usize>, f64)> = multiplets(&b.lambdas)
        .into_iter()
        .map(|r| {
            let s = per_mode[r.clone()].iter().sum();
            (r, s)
        })
        .collect();
    let half = per_mode.len() / 2;
    let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
    for (r, s) in &groups {
        if r.start < half {
            lo = lo.max(*s);
        } else {
            hi = hi.max(*s);
        }
    }
    let growth_ratio = if lo > 0.0 {
        hi / lo
    } else if hi > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    VertexBound {
        per_mode,
        running_max,
        multiplets: groups,
        sup: acc,
        growth_ratio,
    }
}

/// Eigenvalues `λ_k` of the operator with the value at `vertex` pinned to 0.
pub fn pinned_spectrum(disc: &Discretization, vertex: usize, n_modes: usize) -> Result<Vec<f64>> {
    if vertex >= disc.graph.n_vertices() {
        return Err(Error::UnknownVertex(format!("#{vertex}")));
    }
    let n = disc.n_dofs();
    let max = max_reliable_modes(n - 1);
    if n_modes == 0 || n_modes > max {
        return Err(Error::TooManyModes {
            requested: n_modes,
            max,
        });
    }
    // vertex dofs are 0..n_vertices, so dropping one keeps the rest in order
    let keep: Vec<usize> = (0..n).filter(|&i| i != vertex).collect();
    let (kd, md) = (disc.forms.k.to_dense(), disc.forms.m.to_dense());
    let k = Mat::from_fn(n - 1, n - 1, |i, j| kd[(keep[i], keep[j])]);
    let m = Mat::from_fn(n - 1, n - 1, |i, j| md[(keep[i], keep[j])]);
    let (nus, _) = dense_generalized_eigen(k, &m, n_modes)?;
    Ok(nus.iter().map(|nu| -nu).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{validate_graph, GraphSpec};
    use std::f64::consts::{PI, SQRT_2};

    fn disc(spec: GraphSpec, h: f64) -> Discretization {
        Discretization::new(&validate_graph(&spec).unwrap(), h).unwrap()
    }

    #[test]
    fn interval_neumann_spectrum() {
        let h = 1.0 / 256.0;
        let d = disc(GraphSpec::interval(1.0), h);
        let b = SpectralBasis::compute(&d, 8).unwrap();
        assert!(b.lambdas[0].abs() < 1e-10);
        for k in 1..8 {
            let exact = -((k as f64) * PI).powi(2);
            let rel = (b.lambdas[k] - exact).abs() / exact.abs();
            // P1 eigenvalue error is (kπh)²/12 to leading order
            let bound = ((k as f64) * PI * h).powi(2) / 12.0 * 1.1;
            assert!(rel < bound, "k={k} rel={rel} bound={bound}");
        }
    }

    #[test]
    fn orthonormal_and_residual() {
        let d = disc(GraphSpec::star(&[1.0, 0.6, 1.7]), 0.02);
        let b = SpectralBasis::compute(&d, 20).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let g = d.forms.m.quad_form(&b.modes[i], &b.modes[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "({i},{j}) {g}");
            }
            assert!(b.residual(&d.forms, i) < 1e-8);
        }
        for w in b.lambdas.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(b.lambdas.iter().all(|&l| l <= 0.0));
    }

    #[test]
    fn constant_ground_state() {
        let d = disc(GraphSpec::star(&[1.0, 2.0, 0.5]), 0.05);
        let b = SpectralBasis::compute(&d, 4).unwrap();
        let c = 1.0 / 3.5_f64.sqrt();
        assert!(b.lambdas[0].abs() < 1e-9);
        assert!(b.modes[0].iter().all(|x| (x - c).abs() < 1e-9));
    }

    #[test]
    fn potential_shifts_spectrum() {
        let mut spec = GraphSpec::path(&[1.0, 0.8]);
        let d0 = disc(spec.clone(), 0.05);
        for e in &mut spec.edges {
            e.potential = 1.0;
        }
        let d1 = disc(spec, 0.05);
        let b0 = SpectralBasis::compute(&d0, 6).unwrap();
        let b1 = SpectralBasis::compute(&d1, 6).unwrap();
        for k in 0..6 {
            assert!((b1.lambdas[k] - b0.lambdas[k] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_many_modes() {
        let d = disc(GraphSpec::interval(1.0), 0.1);
        assert!(matches!(
            SpectralBasis::compute(&d, 3),
            Err(Error::TooManyModes { max: 2, .. })
        ));
    }

    #[test]
    fn interval_traces() {
        let d = disc(GraphSpec::interval(1.0), 1.0 / 512.0);
        let b = SpectralBasis::compute(&d, 6).unwrap();
        let vb = vertex_bound_estimate(&b);
        assert!((vb.per_mode[0] - 2.0).abs() < 1e-10);
        for k in 1..6 {
            let t = &b.vertex_traces[k];
            let tol = SQRT_2 * (k as f64 * PI / 512.0).powi(2) / 6.0;
            assert!((t[0] - SQRT_2).abs() < tol, "{t:?}");
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((t[1] - sign * SQRT_2).abs() < tol);
            assert!((vb.per_mode[k] - 4.0).abs() < 6.0 * tol);
        }
        assert!((vb.sup - 4.0).abs() < 2e-3);
        // Neumann ends: derivative traces vanish
        for k in 0..6 {
            let scale = (b.lambdas[k].abs()).sqrt().max(1.0);
            assert!(b.deriv_traces[k].iter().all(|x| x.abs() < 1e-8 * scale));
        }
    }

    #[test]
    fn derivative_traces_on_path() {
        // path of two unit edges = interval of length 2; f = cos(kπx/2)/1
        let d = disc(GraphSpec::path(&[1.0, 1.0]), 1.0 / 512.0);
        let b = SpectralBasis::compute(&d, 5).unwrap();
        // mode k=2: f(x) = cos(πx/2), derivative at the midpoint is −π/2
        let k = 1;
        let s = b.modes[k][0].signum();
        let dt = &b.deriv_traces[k];
        // edge 0 runs v0 → v1, its end sits at the midpoint: into-edge slope +π/2
        assert!((s * dt[1] - PI / 2.0).abs() < 1e-3, "{dt:?}");
        // edge 1 starts at the midpoint: into-edge slope −π/2
        assert!((s * dt[2] + PI / 2.0).abs() < 1e-3, "{dt:?}");
    }

    #[test]
    fn asymptotics_match_analytic_slope() {
        let d = disc(GraphSpec::interval(1.0), 1.0 / 1024.0);
        let b = SpectralBasis::compute(&d, 45).unwrap();
        let a = asymptotics_check(&b, 1.0, 10, 40).unwrap();
        let ks: Vec<f64> = (10..=40).map(|k| k as f64).collect();
        let exact: Vec<f64> = ks
            .iter()
            .map(|k| 1.0 + ((k - 1.0) * PI).powi(2))
            .collect();
        let oracle = stats::loglog_fit(&ks, &exact).unwrap().slope;
        assert!((a.loglog_slope - oracle).abs() < 2e-3, "{} {}", a.loglog_slope, oracle);
        assert!(a.l2 / a.l1 < 1.5);
        assert!(asymptotics_check(&b, 1.0, 10, 60).is_err());
    }

    #[test]
    fn parseval_on_span() {
        let d = disc(GraphSpec::star(&[1.0, 1.3, 0.7]), 0.05);
        let b = SpectralBasis::compute(&d, 15).unwrap();
        let coeffs: Vec<f64> = (0..15).map(|k| ((k * 7 + 3) % 11) as f64 - 5.0).collect();
        let u = b.reconstruct(&coeffs);
        let back = b.project(&u);
        let energy: f64 = back.iter().map(|c| c * c).sum();
        assert!((energy - b.mass_norm(&u).powi(2)).abs() < 1e-10 * energy);
        for (a, c) in back.iter().zip(&coeffs) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn pinning_interlaces() {
        let d = disc(GraphSpec::interval(1.0), 1.0 / 256.0);
        let b = SpectralBasis::compute(&d, 12).unwrap();
        let pinned = pinned_spectrum(&d, 0, 10).unwrap();
        for k in 0..10 {
            assert!(b.lambdas[k + 1] <= pinned[k] + 1e-9 && pinned[k] <= b.lambdas[k] + 1e-9);
            // Dirichlet at 0, Neumann at 1: −((k+1/2)π)²
            let exact = -((k as f64 + 0.5) * PI).powi(2);
            let bound = ((k as f64 + 0.5) * PI / 256.0).powi(2) / 12.0 * 1.1;
            assert!((pinned[k] - exact).abs() / exact.abs() < bound);
        }
    }

    #[test]
    fn refinement_is_second_order() {
        let lam = |h: f64| {
            let d = disc(GraphSpec::star(&[1.0, 0.8, 1.2]), h);
            SpectralBasis::compute(&d, 10).unwrap().lambdas
        };
        let (a, b, c) = (lam(0.05), lam(0.025), lam(0.0125));
        for k in 1..10 {
            let d1 = (a[k] - b[k]).abs();
            let d2 = (b[k] - c[k]).abs();
            assert!(d2 <= d1 / 4.0 * 1.1, "k={k} {d1} {d2}");
        }
    }

    #[test]
    fn equilateral_star_multiplets() {
        let d = disc(GraphSpec::star(&[1.0; 3]), 1.0 / 64.0);
        let b = SpectralBasis::compute(&d, 10).unwrap();
        let groups = multiplets(&b.lambdas);
        let sizes: Vec<usize> = groups.iter().map(|r| r.len()).collect();
        assert_eq!(&sizes[..5], &[1, 2, 1, 2, 1]);
    }

    #[test]
    fn csv_has_one_row_per_mode() {
        let d = disc(GraphSpec::interval(1.0), 0.05);
        let b = SpectralBasis::compute(&d, 4).unwrap();
        let csv = b.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("k,lambda,"));
    }
}
