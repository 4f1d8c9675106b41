//! Piecewise-linear finite elements on the edges of a metric graph.
//!
//! Two global numberings share the same per-edge grids:
//!
//! * continuous: one dof per vertex (dofs `0..n`), then interior nodes edge by edge;
//! * broken: one dof per edge end (`2e` at the start, `2e+1` at the end of
//!   edge `e`), then interior nodes edge by edge.
//!
//! The continuous numbering builds the continuity conditions into the space,
//! so assembling the form there discretises its natural domain directly.

use std::hash::{Hash, Hasher};

use faer::Mat;

use crate::error::{Error, Result};
use crate::graph::{EdgeEnd, GraphFunction, MetricGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Continuous,
    Broken,
}

impl Space {
    fn name(self) -> &'static str {
        match self {
            Space::Continuous => "continuous",
            Space::Broken => "broken",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    space: Space,
    h: f64,
    n_vertices: usize,
    cells: Vec<usize>,
    cell_size: Vec<f64>,
    edge_vertices: Vec<(usize, usize)>,
    interior_offset: Vec<usize>,
    n_dofs: usize,
}

impl Mesh {
    pub fn build(g: &MetricGraph, h: f64, space: Space) -> Result<Mesh> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidMeshSize(h));
        }
        let mut cells = Vec::with_capacity(g.n_edges());
        for e in g.edges() {
            // guard against ℓ/h landing a hair above an integer
            let n = (e.length / h * (1.0 - 1e-12)).ceil() as usize;
            if n < 2 {
                return Err(Error::MeshTooCoarse {
                    edge: e.name.clone(),
                    cells: n,
                });
            }
            cells.push(n);
        }
        let cell_size = g
            .edges()
            .iter()
            .zip(&cells)
            .map(|(e, &n)| e.length / n as f64)
            .collect();
        let edge_vertices = g.edges().iter().map(|e| (e.start, e.end)).collect();
        let mut mesh = Mesh {
            space,
            h,
            n_vertices: g.n_vertices(),
            cells,
            cell_size,
            edge_vertices,
            interior_offset: Vec::new(),
            n_dofs: 0,
        };
        mesh.number();
        Ok(mesh)
    }

    fn number(&mut self) {
        let mut next = match self.space {
            Space::Continuous => self.n_vertices,
            Space::Broken => 2 * self.cells.len(),
        };
        self.interior_offset.clear();
        for &n in &self.cells {
            self.interior_offset.push(next);
            next += n - 1;
        }
        self.n_dofs = next;
    }

    /// Same grids, other numbering.
    pub fn with_space(&self, space: Space) -> Mesh {
        let mut m = self.clone();
        m.space = space;
        m.number();
        m
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn target_h(&self) -> f64 {
        self.h
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_edges(&self) -> usize {
        self.cells.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn cells(&self, e: usize) -> usize {
        self.cells[e]
    }

    pub fn cell_size(&self, e: usize) -> f64 {
        self.cell_size[e]
    }

    pub fn max_cell_size(&self) -> f64 {
        self.cell_size.iter().cloned().fold(0.0, f64::max)
    }

    pub fn node_coordinate(&self, e: usize, j: usize) -> f64 {
        j as f64 * self.cell_size[e]
    }

    /// Global dof of node `j ∈ 0..=cells(e)` on edge `e`.
    pub fn node_dof(&self, e: usize, j: usize) -> usize {
        let n = self.cells[e];
        debug_assert!(j <= n);
        if j == 0 || j == n {
            let end = if j == 0 { EdgeEnd::Start } else { EdgeEnd::End };
            self.end_dof(e, end)
        } else {
            self.interior_offset[e] + j - 1
        }
    }

    /// Dof holding the value of edge `e` at one of its ends.
    pub fn end_dof(&self, e: usize, end: EdgeEnd) -> usize {
        match (self.space, end) {
            (Space::Continuous, EdgeEnd::Start) => self.edge_vertices[e].0,
            (Space::Continuous, EdgeEnd::End) => self.edge_vertices[e].1,
            (Space::Broken, EdgeEnd::Start) => 2 * e,
            (Space::Broken, EdgeEnd::End) => 2 * e + 1,
        }
    }

    /// Identifies the grid and numbering; equal keys mean coefficient
    /// vectors are interchangeable.
    pub fn fingerprint(&self) -> u64 {
        let mut s = std::collections::hash_map::DefaultHasher::new();
        self.space.hash(&mut s);
        self.cells.hash(&mut s);
        for x in &self.cell_size {
            x.to_bits().hash(&mut s);
        }
        self.edge_vertices.hash(&mut s);
        s.finish()
    }

    /// Samples `f(edge, x)` at every node. On the continuous space a vertex
    /// takes the value from the first edge that reaches it.
    pub fn interpolate(&self, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
        let mut u = vec![f64::NAN; self.n_dofs];
        for e in 0..self.n_edges() {
            for j in 0..=self.cells[e] {
                let d = self.node_dof(e, j);
                if u[d].is_nan() {
                    u[d] = f(e, self.node_coordinate(e, j));
                }
            }
        }
        for x in u.iter_mut() {
            if x.is_nan() {
                // isolated vertex
                *x = 0.0;
            }
        }
        u
    }

    pub fn to_graph_function(&self, u: &[f64]) -> GraphFunction {
        let values = (0..self.n_edges())
            .map(|e| (0..=self.cells[e]).map(|j| u[self.node_dof(e, j)]).collect())
            .collect();
        GraphFunction {
            values,
            continuous: self.space == Space::Continuous,
        }
    }

    /// Inverse of [`Mesh::to_graph_function`]. A broken function handed to the
    /// continuous space must agree at every vertex.
    pub fn from_graph_function(&self, g: &MetricGraph, f: &GraphFunction) -> Result<Vec<f64>> {
        if f.values.len() != self.n_edges() {
            return Err(Error::DimensionMismatch {
                expected: self.n_edges(),
                found: f.values.len(),
            });
        }
        for (e, vals) in f.values.iter().enumerate() {
            if vals.len() != self.cells[e] + 1 {
                return Err(Error::DimensionMismatch {
                    expected: self.cells[e] + 1,
                    found: vals.len(),
                });
            }
        }
        if self.space == Space::Continuous {
            let scale = f
                .values
                .iter()
                .flatten()
                .fold(1.0_f64, |a, &b| a.max(b.abs()));
            let probe = GraphFunction {
                values: f.values.clone(),
                continuous: true,
            };
            probe.check(g, 1e-12 * scale)?;
        }
        let mut u = vec![0.0; self.n_dofs];
        for (e, vals) in f.values.iter().enumerate() {
            for (j, &x) in vals.iter().enumerate() {
                u[self.node_dof(e, j)] = x;
            }
        }
        Ok(u)
    }

    /// Vertex values `L u` of a continuous coefficient vector.
    pub fn vertex_trace(&self, u: &[f64]) -> Result<Vec<f64>> {
        if self.space != Space::Continuous {
            return Err(Error::SpaceMismatch {
                expected: Space::Continuous.name(),
                found: self.space.name(),
            });
        }
        Ok(u[..self.n_vertices].to_vec())
    }

    /// Embeds a continuous-space vector into the broken numbering of `broken`.
    pub fn embed_into(&self, broken: &Mesh, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.space, Space::Continuous);
        debug_assert_eq!(broken.space, Space::Broken);
        let mut out = vec![0.0; broken.n_dofs];
        for e in 0..self.n_edges() {
            for j in 0..=self.cells[e] {
                out[broken.node_dof(e, j)] = u[self.node_dof(e, j)];
            }
        }
        out
    }
}

/// `L u` for a graph function; rejects functions that jump at a vertex.
pub fn vertex_trace(mesh: &Mesh, g: &MetricGraph, f: &GraphFunction) -> Result<Vec<f64>> {
    let scale = f
        .values
        .iter()
        .flatten()
        .fold(1.0_f64, |a, &b| a.max(b.abs()));
    let probe = GraphFunction {
        values: f.values.clone(),
        continuous: true,
    };
    probe.check(g, 1e-10 * scale)?;
    let cont = mesh.with_space(Space::Continuous);
    let u = cont.from_graph_function(g, &probe)?;
    cont.vertex_trace(&u)
}

/// Symmetric sparse matrix in CSR form (full pattern stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSparse {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SymmetricSparse {
    /// Accumulates triplets. Duplicates are summed in insertion order, so a
    /// caller that pushes `(i, j, v)` and `(j, i, v)` together gets an exactly
    /// symmetric result.
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SymmetricSparse {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(k) => self.val[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()]
            .iter()
            .copied()
            .zip(self.val[r].iter().copied())
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(j, v)| v * x[j]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row_dot(i, y)).sum()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Discrete form `𝔞` (stiffness plus potential) and the mass pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct FormMatrices {
    pub k: SymmetricSparse,
    pub m: SymmetricSparse,
}

impl FormMatrices {
    /// Dense `K + λ M`.
    pub fn shifted_dense(&self, lambda: f64) -> Mat<f64> {
        let mut a = self.k.to_dense();
        for i in 0..self.m.dim() {
            for (j, v) in self.m.row(i) {
                a[(i, j)] += lambda * v;
            }
        }
        a
    }

    /// Row `i` of `K + λ M` applied to `x`.
    pub fn shifted_row_dot(&self, lambda: f64, i: usize, x: &[f64]) -> f64 {
        self.k.row_dot(i, x) + lambda * self.m.row_dot(i, x)
    }

    pub fn mass_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.m.quad_form(x, y)
    }
}

/// Exact element integrals for constant coefficients; midpoint values of the
/// sampled profiles otherwise.
pub fn assemble_form(mesh: &Mesh, g: &MetricGraph) -> FormMatrices {
    let n = mesh.n_dofs();
    let mut kt = Vec::new();
    let mut mt = Vec::new();
    for (e, edge) in g.edges().iter().enumerate() {
        let cells = mesh.cells(e);
        let h = mesh.cell_size(e);
        for c in 0..cells {
            let s_mid = (c as f64 + 0.5) / cells as f64;
            let cond = edge.coeffs.conductance_at(s_mid);
            let pot = edge.coeffs.potential_at(s_mid);
            let (a, b) = (mesh.node_dof(e, c), mesh.node_dof(e, c + 1));
            let k_diag = cond / h + pot * h / 3.0;
            let k_off = -cond / h + pot * h / 6.0;
            let m_diag = h / 3.0;
            let m_off = h / 6.0;
            kt.push((a, a, k_diag));
            kt.push((b, b, k_diag));
            kt.push((a, b, k_off));
            kt.push((b, a, k_off));
            mt.push((a, a, m_diag));
            mt.push((b, b, m_diag));
            mt.push((a, b, m_off));
            mt.push((b, a, m_off));
        }
    }
    FormMatrices {
        k: SymmetricSparse::from_triplets(n, kt),
        m: SymmetricSparse::from_triplets(n, mt),
    }
}

/// Mesh and forms on both numberings of the same grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub graph: MetricGraph,
    pub mesh: Mesh,
    pub forms: FormMatrices,
    pub broken_mesh: Mesh,
    pub broken_forms: FormMatrices,
}

impl Discretization {
    pub fn new(graph: &MetricGraph, h: f64) -> Result<Self> {
        let mesh = Mesh::build(graph, h, Space::Continuous)?;
        let broken_mesh = mesh.with_space(Space::Broken);
        let forms = assemble_form(&mesh, graph);
        let broken_forms = assemble_form(&broken_mesh, graph);
        Ok(Discretization {
            graph: graph.clone(),
            mesh,
            forms,
            broken_mesh,
            broken_forms,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        self.mesh.embed_into(&self.broken_mesh, u)
    }
}

/// Sparse row operator on dof vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RowOperator {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl RowOperator {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * u[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.rows.len(), self.n_cols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Jump rows `J` (blocks `I_v` in vertex order) and the weak Kirchhoff flux
/// `Φ` on the broken space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOperators {
    pub jump: RowOperator,
    pub flux: RowOperator,
    pub shift: f64,
}

/// Builds `J` and `Φ` on a broken mesh.
///
/// `Φ` is the variational flux: at each vertex it is minus the sum, over the
/// edge ends meeting there, of the residual `(K + shift·M) u` at the end dof.
/// For a function with `shift·u − (c u')' + p u = 0` on every edge this equals
/// `Σ_e c_e(v) u'_e(v)` with derivatives pointing into the edges; for
/// `shift = 0` it is the plain discrete flux of the stiffness form.
pub fn jump_and_flux_operators(
    mesh: &Mesh,
    forms: &FormMatrices,
    g: &MetricGraph,
    shift: f64,
) -> Result<BoundaryOperators> {
    if mesh.space() != Space::Broken {
        return Err(Error::SpaceMismatch {
            expected: Space::Broken.name(),
            found: mesh.space().name(),
        });
    }
    let n = mesh.n_dofs();
    let mut jump = Vec::new();
    for v in 0..g.n_vertices() {
        for w in g.incidences(v).windows(2) {
            jump.push(vec![
                (mesh.end_dof(w[0].edge, w[0].end), 1.0),
                (mesh.end_dof(w[1].edge, w[1].end), -1.0),
            ]);
        }
    }
    let mut flux = Vec::new();
    for v in 0..g.n_vertices() {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for inc in g.incidences(v) {
            let d = mesh.end_dof(inc.edge, inc.end);
            for (j, kv) in forms.k.row(d) {
                row.push((j, -kv - shift * forms.m.get(d, j)));
            }
        }
        flux.push(row);
    }
    Ok(BoundaryOperators {
        jump: RowOperator {
            n_cols: n,
            rows: jump,
        },
        flux: RowOperator {
            n_cols: n,
            rows: flux,
        },
        shift,
    })
}
