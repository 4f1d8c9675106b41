//! Dirichlet maps: the Kirchhoff-data map `D_K` on the continuous space and the
//! full map `D` on the broken space, both for a fixed shift `λ > 0`.
//!
//! Everything here reduces to the vertex unknowns. On each edge the discrete
//! solution of `(K + λM) u = 0` at interior nodes is the linear combination of
//! two edge-local harmonic profiles, so a map column is fixed by its edge-end
//! values and those solve a small system with one row per boundary datum.

use faer::Mat;

use crate::error::{Error, Result};
use crate::fem::{Discretization, Mesh};
use crate::graph::{EdgeEnd, MetricGraph};
use crate::linalg;
use crate::spectral::SpectralBasis;

/// Discrete `λ`-harmonic profiles of one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeHarmonic {
    /// Interior values of the profile equal to 1 at the start, 0 at the end.
    pub from_start: Vec<f64>,
    /// Interior values of the profile equal to 0 at the start, 1 at the end.
    pub from_end: Vec<f64>,
    /// `dtn[a][b]`: residual of `(K + λM)` at end `a` for the profile of end `b`.
    pub dtn: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeHarmonics {
    pub lambda: f64,
    pub edges: Vec<EdgeHarmonic>,
}

fn check_shift(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveShift(lambda))
    }
}

pub fn edge_harmonics(disc: &Discretization, lambda: f64) -> Result<EdgeHarmonics> {
    check_shift(lambda)?;
    let mesh = &disc.broken_mesh;
    let forms = &disc.broken_forms;
    let a = |i: usize, j: usize| forms.k.get(i, j) + lambda * forms.m.get(i, j);
    let mut edges = Vec::with_capacity(mesh.n_edges());
    for e in 0..mesh.n_edges() {
        let n = mesh.cells(e);
        let dof: Vec<usize> = (0..=n).map(|j| mesh.node_dof(e, j)).collect();
        let ni = n - 1;
        let diag: Vec<f64> = (1..n).map(|j| a(dof[j], dof[j])).collect();
        let lower: Vec<f64> = (2..n).map(|j| a(dof[j], dof[j - 1])).collect();
        let upper: Vec<f64> = (1..n - 1).map(|j| a(dof[j], dof[j + 1])).collect();
        let mut rs = vec![0.0; ni];
        let mut re = vec![0.0; ni];
        rs[0] = -a(dof[1], dof[0]);
        re[ni - 1] = -a(dof[n - 1], dof[n]);
        let from_start = linalg::solve_tridiagonal(&lower, &diag, &upper, &rs);
        let from_end = linalg::solve_tridiagonal(&lower, &diag, &upper, &re);
        let dtn = [
            [
                a(dof[0], dof[0]) + a(dof[0], dof[1]) * from_start[0],
                a(dof[0], dof[1]) * from_end[0],
            ],
            [
                a(dof[n], dof[n - 1]) * from_start[ni - 1],
                a(dof[n], dof[n]) + a(dof[n], dof[n - 1]) * from_end[ni - 1],
            ],
        ];
        edges.push(EdgeHarmonic {
            from_start,
            from_end,
            dtn,
        });
    }
    Ok(EdgeHarmonics { lambda, edges })
}

impl EdgeHarmonics {
    /// Fills a coefficient vector on `mesh` from edge-end values
    /// (`ends[2e]`, `ends[2e+1]`). On a continuous mesh the end values at a
    /// vertex must agree; the last one written wins.
    pub fn extend(&self, mesh: &Mesh, ends: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; mesh.n_dofs()];
        for (e, h) in self.edges.iter().enumerate() {
            let (us, ue) = (ends[2 * e], ends[2 * e + 1]);
            let n = mesh.cells(e);
            u[mesh.node_dof(e, 0)] = us;
            u[mesh.node_dof(e, n)] = ue;
            for j in 1..n {
                u[mesh.node_dof(e, j)] = us * h.from_start[j - 1] + ue * h.from_end[j - 1];
            }
        }
        u
    }

    /// Into-edge flux `c·u'` at every end for the harmonic extension of `ends`.
    pub fn end_flux(&self, ends: &[f64]) -> Vec<f64> {
        let mut psi = vec![0.0; ends.len()];
        for (e, h) in self.edges.iter().enumerate() {
            for a in 0..2 {
                psi[2 * e + a] = -(h.dtn[a][0] * ends[2 * e] + h.dtn[a][1] * ends[2 * e + 1]);
            }
        }
        psi
    }
}

/// Largest interior residual of `(K + λM) u` on a broken coefficient vector.
pub fn interior_residual(disc: &Discretization, lambda: f64, u_broken: &[f64]) -> f64 {
    let mesh = &disc.broken_mesh;
    let mut worst: f64 = 0.0;
    for e in 0..mesh.n_edges() {
        for j in 1..mesh.cells(e) {
            let d = mesh.node_dof(e, j);
            worst = worst.max(disc.broken_forms.shifted_row_dot(lambda, d, u_broken).abs());
        }
    }
    worst
}

/// Columns `D_K e_i`, one per vertex, as continuous coefficient vectors.
///
/// Column `i` solves `(K + λM) u = ℓ_i` with `ℓ_i` the unit load on the dof of
/// vertex `i`, i.e. `𝔞_λ(u, v) = v(v_i)` for every test function. Its into-edge
/// flux at vertex `i` is therefore `−1`; with derivatives taken along the
/// outer normal of the edges it is `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMapK {
    pub lambda: f64,
    pub columns: Vec<Vec<f64>>,
    mesh_key: u64,
}

impl DirichletMapK {
    pub fn mesh_key(&self) -> u64 {
        self.mesh_key
    }

    /// Vertex values of every column: entry `(i, j)` is `(D_K e_i)(v_j)`.
    pub fn vertex_values(&self, n_vertices: usize) -> Vec<Vec<f64>> {
        self.columns.iter().map(|c| c[..n_vertices].to_vec()).collect()
    }

    /// One row per column: vertex values, `M`-norm and interior residual.
    pub fn to_csv(&self, disc: &Discretization) -> String {
        let g = &disc.graph;
        let mut s = String::from("column,vertex");
        for v in 0..g.n_vertices() {
            s.push_str(&format!(",u_at_{}", g.vertex_name(v)));
        }
        s.push_str(",mass_norm,interior_residual\n");
        for (i, c) in self.columns.iter().enumerate() {
            s.push_str(&format!("{},{}", i, g.vertex_name(i)));
            for x in &c[..g.n_vertices()] {
                s.push_str(&format!(",{x}"));
            }
            let norm = disc.forms.m.quad_form(c, c).sqrt();
            let res = interior_residual(disc, self.lambda, &disc.embed(c));
            s.push_str(&format!(",{norm},{res}\n"));
        }
        s
    }
}

pub fn dirichlet_map_k(disc: &Discretization, lambda: f64) -> Result<DirichletMapK> {
    let harm = edge_harmonics(disc, lambda)?;
    let g = &disc.graph;
    let n = g.n_vertices();
    let mut s = Mat::<f64>::zeros(n, n);
    for (e, h) in harm.edges.iter().enumerate() {
        let edge = g.edge(e);
        let vs = [edge.start, edge.end];
        for a in 0..2 {
            for b in 0..2 {
                s[(vs[a], vs[b])] += h.dtn[a][b];
            }
        }
    }
    let vals = linalg::solve_spd(&s, Mat::identity(n, n))?;
    let columns = (0..n)
        .map(|i| {
            let mut ends = vec![0.0; 2 * g.n_edges()];
            for (e, edge) in g.edges().iter().enumerate() {
                ends[2 * e] = vals[(edge.start, i)];
                ends[2 * e + 1] = vals[(edge.end, i)];
            }
            harm.extend(&disc.mesh, &ends)
        })
        .collect();
    Ok(DirichletMapK {
        lambda,
        columns,
        mesh_key: disc.mesh.fingerprint(),
    })
}

/// Matrix of `⟨D_K e_i, f_k⟩_M` (rows: vertices, columns: modes).
pub fn adjoint_coefficients(b: &SpectralBasis, dk: &DirichletMapK) -> Result<Mat<f64>> {
    if b.mesh_key() != dk.mesh_key {
        return Err(Error::MeshMismatch);
    }
    let mu: Vec<Vec<f64>> = dk.columns.iter().map(|c| b.mass.mul_vec(c)).collect();
    Ok(Mat::from_fn(mu.len(), b.n_modes(), |i, k| {
        mu[i].iter().zip(&b.modes[k]).map(|(x, y)| x * y).sum()
    }))
}

/// Columns `D e_j`, `j` running over the boundary data (continuity block
/// first, then one Kirchhoff row per vertex), as broken coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMapFull {
    pub lambda: f64,
    pub columns: Vec<Vec<f64>>,
    /// Edge-end values of each column, layout `2e`, `2e+1`.
    pub end_values: Vec<Vec<f64>>,
    mesh_key: u64,
}

/// Rows of the vertex system acting on edge-end values: continuity
/// differences, then `Σ` of into-edge fluxes given per-edge end-flux
/// coefficients `flux[e][a][b]` (flux at end `a` per unit value at end `b`).
fn vertex_system(g: &MetricGraph, flux: &[[[f64; 2]; 2]]) -> Mat<f64> {
    let m2 = 2 * g.n_edges();
    let mut sys = Mat::<f64>::zeros(g.boundary_dim(), m2);
    let mut r = 0;
    for v in 0..g.n_vertices() {
        for w in g.incidences(v).windows(2) {
            sys[(r, w[0].end_index())] += 1.0;
            sys[(r, w[1].end_index())] -= 1.0;
            r += 1;
        }
    }
    for v in 0..g.n_vertices() {
        for inc in g.incidences(v) {
            let e = inc.edge;
            let a = match inc.end {
                EdgeEnd::Start => 0,
                EdgeEnd::End => 1,
            };
            for b in 0..2 {
                sys[(r, 2 * e + b)] += flux[e][a][b];
            }
        }
        r += 1;
    }
    sys
}

impl DirichletMapFull {
    pub fn mesh_key(&self) -> u64 {
        self.mesh_key
    }

    /// One row per column: boundary datum index and block, end values,
    /// interior residual.
    pub fn to_csv(&self, disc: &Discretization) -> String {
        let nc = disc.graph.n_continuity_rows();
        let m2 = 2 * disc.graph.n_edges();
        let mut s = String::from("datum,block");
        for i in 0..m2 {
            s.push_str(&format!(",end_{i}"));
        }
        s.push_str(",interior_residual\n");
        for (j, c) in self.columns.iter().enumerate() {
            let block = if j < nc { "continuity" } else { "kirchhoff" };
            s.push_str(&format!("{j},{block}"));
            for x in &self.end_values[j] {
                s.push_str(&format!(",{x}"));
            }
            s.push_str(&format!(",{}\n", interior_residual(disc, self.lambda, c)));
        }
        s
    }
}

/// Finite element full map: every column solves the interior equations
/// exactly and meets its datum through the jump rows and the variational flux.
pub fn dirichlet_map_full(disc: &Discretization, lambda: f64) -> Result<DirichletMapFull> {
    let harm = edge_harmonics(disc, lambda)?;
    let g = &disc.graph;
    let flux: Vec<[[f64; 2]; 2]> = harm
        .edges
        .iter()
        .map(|h| {
            let d = h.dtn;
            [[-d[0][0], -d[0][1]], [-d[1][0], -d[1][1]]]
        })
        .collect();
    let sys = vertex_system(g, &flux);
    let dim = sys.nrows();
    if dim != sys.ncols() {
        return Err(Error::SingularVertexSystem);
    }
    let ends = linalg::solve_general(&sys, Mat::identity(dim, dim))?;
    let mut columns = Vec::with_capacity(dim);
    let mut end_values = Vec::with_capacity(dim);
    for j in 0..dim {
        let ev = linalg::column(&ends, j);
        columns.push(harm.extend(&disc.broken_mesh, &ev));
        end_values.push(ev);
    }
    Ok(DirichletMapFull {
        lambda,
        columns,
        end_values,
        mesh_key: disc.broken_mesh.fingerprint(),
    })
}

/// Matrix of `⟨D e_j, f_k⟩_M` (rows: boundary data, columns: modes).
pub fn full_map_coefficients(
    b: &SpectralBasis,
    disc: &Discretization,
    d: &DirichletMapFull,
) -> Result<Mat<f64>> {
    if b.mesh_key() != disc.mesh.fingerprint() || d.mesh_key != disc.broken_mesh.fingerprint() {
        return Err(Error::MeshMismatch);
    }
    let ef: Vec<Vec<f64>> = b.modes.iter().map(|f| disc.embed(f)).collect();
    let mu: Vec<Vec<f64>> = d
        .columns
        .iter()
        .map(|c| disc.broken_forms.m.mul_vec(c))
        .collect();
    Ok(Mat::from_fn(mu.len(), b.n_modes(), |j, k| {
        mu[j].iter().zip(&ef[k]).map(|(x, y)| x * y).sum()
    }))
}

/// Closed-form solution of `λu − (c u')' + p u = 0` on every edge,
/// `u_e(x) = a_e cosh(μ_e x) + b_e sinh(μ_e x)` with `μ_e = √((λ + p_e)/c_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticFullMap {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl AnalyticFullMap {
    pub fn value(&self, e: usize, x: f64) -> f64 {
        let t = self.mu[e] * x;
        self.a[e] * t.cosh() + self.b[e] * t.sinh()
    }

    pub fn slope(&self, e: usize, x: f64) -> f64 {
        let t = self.mu[e] * x;
        self.mu[e] * (self.a[e] * t.sinh() + self.b[e] * t.cosh())
    }

    /// `u_e(0)`, `u_e(ℓ_e)` in the `2e`, `2e+1` layout.
    pub fn end_values(&self) -> Vec<f64> {
        (0..self.mu.len())
            .flat_map(|e| [self.value(e, 0.0), self.value(e, self.lengths[e])])
            .collect()
    }

    /// Plain derivatives `u_e'(0)`, `u_e'(ℓ_e)`.
    pub fn end_slopes(&self) -> Vec<f64> {
        (0..self.mu.len())
            .flat_map(|e| [self.slope(e, 0.0), self.slope(e, self.lengths[e])])
            .collect()
    }

    /// `B u`, evaluated on the closed form.
    pub fn boundary_data(&self, g: &MetricGraph) -> Vec<f64> {
        g.boundary_operator(&self.end_values(), &self.end_slopes())
    }

    /// Nodal values on a broken mesh.
    pub fn sample(&self, mesh: &Mesh) -> Vec<f64> {
        let mut u = vec![0.0; mesh.n_dofs()];
        for e in 0..mesh.n_edges() {
            for j in 0..=mesh.cells(e) {
                u[mesh.node_dof(e, j)] = self.value(e, mesh.node_coordinate(e, j));
            }
        }
        u
    }
}

/// Analytic full map applied to one boundary datum `z ∈ ℝ^{2m}`.
pub fn dirichlet_map_full_analytic(
    g: &MetricGraph,
    lambda: f64,
    z: &[f64],
) -> Result<AnalyticFullMap> {
    check_shift(lambda)?;
    if !g.has_constant_coefficients() {
        return Err(Error::InvalidArgument(
            "the closed-form map needs constant coefficients on every edge".into(),
        ));
    }
    let m = g.n_edges();
    let dim = g.boundary_dim();
    if z.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: z.len(),
        });
    }
    if dim != 2 * m {
        return Err(Error::SingularVertexSystem);
    }
    let mu: Vec<f64> = g
        .edges()
        .iter()
        .map(|e| ((lambda + e.coeffs.potential) / e.coeffs.conductance).sqrt())
        .collect();
    let lengths: Vec<f64> = g.edges().iter().map(|e| e.length).collect();
    // unknown 2e is a_e, 2e+1 is b_e; each column is B applied to one basis function
    let mut sys = Mat::<f64>::zeros(dim, 2 * m);
    for e in 0..m {
        let t = mu[e] * lengths[e];
        let (ch, sh) = (t.cosh(), t.sinh());
        for (slot, vals, slopes) in [
            (0, [1.0, ch], [0.0, mu[e] * sh]),
            (1, [0.0, sh], [mu[e], mu[e] * ch]),
        ] {
            let mut v = vec![0.0; 2 * m];
            let mut s = vec![0.0; 2 * m];
            v[2 * e] = vals[0];
            v[2 * e + 1] = vals[1];
            s[2 * e] = slopes[0];
            s[2 * e + 1] = slopes[1];
            for (r, x) in g.boundary_operator(&v, &s).into_iter().enumerate() {
                sys[(r, 2 * e + slot)] = x;
            }
        }
    }
    let rhs = Mat::from_fn(dim, 1, |i, _| z[i]);
    let sol = linalg::solve_general(&sys, rhs)?;
    Ok(AnalyticFullMap {
        lambda,
        a: (0..m).map(|e| sol[(2 * e, 0)]).collect(),
        b: (0..m).map(|e| sol[(2 * e + 1, 0)]).collect(),
        mu,
        lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::jump_and_flux_operators;
    use crate::graph::{validate_graph, GraphSpec};

    fn disc(spec: GraphSpec, h: f64) -> Discretization {
        Discretization::new(&validate_graph(&spec).unwrap(), h).unwrap()
    }

    #[test]
    fn interval_column_is_coth() {
        let d = disc(GraphSpec::interval(1.0), 1.0 / 512.0);
        let dk = dirichlet_map_k(&d, 1.0).unwrap();
        let u = &dk.columns[0];
        let coth1 = 1.0 / 1.0_f64.tanh();
        assert!((u[0] - coth1).abs() < 1e-5, "{}", u[0]);
        // far end: cosh(0)/sinh(1)
        assert!((u[1] - 1.0 / 1.0_f64.sinh()).abs() < 1e-5);
        let mesh = &d.mesh;
        for j in (0..=512).step_by(64) {
            let x = mesh.node_coordinate(0, j);
            let exact = (1.0 - x).cosh() / 1.0_f64.sinh();
            assert!((u[mesh.node_dof(0, j)] - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn unit_load_gives_unit_outer_flux() {
        let d = disc(GraphSpec::star(&[1.0, 0.5, 2.0]), 0.01);
        let dk = dirichlet_map_k(&d, 2.0).unwrap();
        let ops = jump_and_flux_operators(&d.broken_mesh, &d.broken_forms, &d.graph, 2.0).unwrap();
        for (i, c) in dk.columns.iter().enumerate() {
            let phi = ops.flux.apply(&d.embed(c));
            for (v, p) in phi.iter().enumerate() {
                let want = if v == i { -1.0 } else { 0.0 };
                assert!((p - want).abs() < 1e-10, "col {i} vertex {v}: {p}");
            }
            assert!(interior_residual(&d, 2.0, &d.embed(c)) < 1e-10);
        }
    }

    #[test]
    fn columns_shrink_with_shift() {
        let d = disc(GraphSpec::interval(1.0), 1.0 / 256.0);
        let mut last = f64::INFINITY;
        for lam in [1.0, 4.0, 16.0, 64.0, 256.0] {
            let dk = dirichlet_map_k(&d, lam).unwrap();
            let n = d.forms.m.quad_form(&dk.columns[0], &dk.columns[0]).sqrt();
            assert!(n < last);
            last = n;
        }
        assert!(matches!(
            dirichlet_map_k(&d, 0.0),
            Err(Error::NonpositiveShift(_))
        ));
    }

    #[test]
    fn star_symmetry() {
        let d = disc(GraphSpec::star(&[1.0; 3]), 0.05);
        let dk = dirichlet_map_k(&d, 1.0).unwrap();
        // leaves v1, v2: swapping them maps column 1 onto column 2
        let (c1, c2) = (&dk.columns[1], &dk.columns[2]);
        assert!((c1[0] - c2[0]).abs() < 1e-12);
        assert!((c1[1] - c2[2]).abs() < 1e-12);
        assert!((c1[3] - c2[3]).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity_interval() {
        let d = disc(GraphSpec::interval(1.0), 1.0 / 512.0);
        let b = SpectralBasis::compute(&d, 10).unwrap();
        let dk = dirichlet_map_k(&d, 1.0).unwrap();
        let c = adjoint_coefficients(&b, &dk).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-10);
        let want = 2.0_f64.sqrt() / (1.0 + std::f64::consts::PI.powi(2));
        assert!((c[(0, 1)] - want).abs() < 1e-4, "{}", c[(0, 1)]);
        for lam in [1.0, 5.0] {
            let dk = dirichlet_map_k(&d, lam).unwrap();
            let c = adjoint_coefficients(&b, &dk).unwrap();
            for i in 0..2 {
                for k in 0..10 {
                    let lhs = (lam - b.lambdas[k]) * c[(i, k)];
                    assert!((lhs - b.vertex_traces[k][i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn adjoint_rejects_other_mesh() {
        let d1 = disc(GraphSpec::interval(1.0), 0.05);
        let d2 = disc(GraphSpec::interval(1.0), 0.04);
        let b = SpectralBasis::compute(&d1, 3).unwrap();
        let dk = dirichlet_map_k(&d2, 1.0).unwrap();
        assert_eq!(adjoint_coefficients(&b, &dk), Err(Error::MeshMismatch));
    }

    #[test]
    fn full_map_round_trip() {
        let d = disc(GraphSpec::path(&[1.0, 1.0]), 0.02);
        let full = dirichlet_map_full(&d, 1.0).unwrap();
        let ops = jump_and_flux_operators(&d.broken_mesh, &d.broken_forms, &d.graph, 1.0).unwrap();
        assert_eq!(full.columns.len(), 4);
        for (j, c) in full.columns.iter().enumerate() {
            let mut bz = ops.jump.apply(c);
            bz.extend(ops.flux.apply(c));
            for (r, x) in bz.iter().enumerate() {
                let want = if r == j { 1.0 } else { 0.0 };
                assert!((x - want).abs() < 1e-10, "col {j} row {r}: {x}");
            }
            assert!(interior_residual(&d, 1.0, c) < 1e-10);
        }
    }

    #[test]
    fn full_map_kirchhoff_datum_matches_dk() {
        let d = disc(GraphSpec::star(&[1.0, 0.7, 1.4]), 0.02);
        let full = dirichlet_map_full(&d, 3.0).unwrap();
        let dk = dirichlet_map_k(&d, 3.0).unwrap();
        let nc = d.graph.n_continuity_rows();
        for i in 0..d.graph.n_vertices() {
            let a = &full.columns[nc + i];
            let b = d.embed(&dk.columns[i]);
            for (x, y) in a.iter().zip(&b) {
                // unit into-edge flux is minus the unit load
                assert!((x + y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn analytic_zero_and_interval() {
        let g = validate_graph(&GraphSpec::interval(1.0)).unwrap();
        let u = dirichlet_map_full_analytic(&g, 1.0, &[0.0, 0.0]).unwrap();
        assert!(u.a.iter().chain(&u.b).all(|x| *x == 0.0));
        // into-edge flux 1 at v0: u = −cosh(1−x)/sinh(1)
        let u = dirichlet_map_full_analytic(&g, 1.0, &[1.0, 0.0]).unwrap();
        let coth1 = 1.0 / 1.0_f64.tanh();
        assert!((u.value(0, 0.0) + coth1).abs() < 1e-13);
        assert!((u.slope(0, 0.0) - 1.0).abs() < 1e-13);
        assert!(u.slope(0, 1.0).abs() < 1e-13);
    }

    #[test]
    fn analytic_jump_datum_on_path() {
        let g = validate_graph(&GraphSpec::path(&[1.0, 1.0])).unwrap();
        let mut z = vec![0.0; 4];
        z[0] = 1.0;
        let u = dirichlet_map_full_analytic(&g, 1.0, &z).unwrap();
        let bz = u.boundary_data(&g);
        for (x, y) in bz.iter().zip(&z) {
            assert!((x - y).abs() < 1e-12);
        }
        // the same check through the discrete jump and flux operators
        let d = Discretization::new(&g, 1.0 / 256.0).unwrap();
        let sampled = u.sample(&d.broken_mesh);
        let ops = jump_and_flux_operators(&d.broken_mesh, &d.broken_forms, &g, 1.0).unwrap();
        assert!((ops.jump.apply(&sampled)[0] - 1.0).abs() < 1e-12);
        assert!(ops.flux.apply(&sampled).iter().all(|p| p.abs() < 1e-3));
    }

    #[test]
    fn analytic_and_fem_agree_at_second_order() {
        let g = validate_graph(&GraphSpec::path(&[1.0, 1.3])).unwrap();
        let err = |h: f64| {
            let d = Discretization::new(&g, h).unwrap();
            let full = dirichlet_map_full(&d, 1.0).unwrap();
            let mut worst: f64 = 0.0;
            for j in 0..4 {
                let mut z = vec![0.0; 4];
                z[j] = 1.0;
                let exact = dirichlet_map_full_analytic(&g, 1.0, &z)
                    .unwrap()
                    .sample(&d.broken_mesh);
                for (a, b) in exact.iter().zip(&full.columns[j]) {
                    worst = worst.max((a - b).abs());
                }
            }
            worst
        };
        let (e1, e2) = (err(1.0 / 64.0), err(1.0 / 128.0));
        let rate = (e1 / e2).log2();
        assert!(rate > 1.8, "{e1} {e2} rate {rate}");
    }

    #[test]
    fn analytic_rejects_profiles() {
        let mut spec = GraphSpec::interval(1.0);
        spec.edges[0].potential_profile = Some(vec![0.0, 1.0]);
        let g = validate_graph(&spec).unwrap();
        assert!(dirichlet_map_full_analytic(&g, 1.0, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn full_coefficients_identity() {
        // (λ−λ_k)⟨u, f_k⟩ = Σ_ends u_end·ψ_end − ⟨Lf_k, z_K⟩ for u = D e_j
        let d = disc(GraphSpec::path(&[1.0, 0.8]), 1.0 / 256.0);
        let b = SpectralBasis::compute(&d, 12).unwrap();
        let full = dirichlet_map_full(&d, 2.0).unwrap();
        let coef = full_map_coefficients(&b, &d, &full).unwrap();
        let nc = d.graph.n_continuity_rows();
        for j in 0..4 {
            for k in 0..12 {
                let lhs = (2.0 - b.lambdas[k]) * coef[(j, k)];
                let mut rhs: f64 = full.end_values[j]
                    .iter()
                    .zip(&b.end_fluxes[k])
                    .map(|(u, p)| u * p)
                    .sum();
                if j >= nc {
                    rhs -= b.vertex_traces[k][j - nc];
                }
                assert!((lhs - rhs).abs() < 1e-9, "j={j} k={k}: {lhs} vs {rhs}");
            }
        }
    }
}
