//! Constructive right inverse of the boundary operator.
//!
//! For boundary data `z` we look for `u_e(x) = α_e e^{−γx} + β_e e^{−γ(ℓ_e−x)}`
//! with `B u = z`. Writing the end values and slopes in terms of `(α, β)` turns
//! this into `(N_γ + Ñ_γ F_γ)(α; β) = z`, which is solvable as soon as
//! `‖N_γ⁻¹ Ñ_γ F_γ‖_max < 1`. `γ` is doubled from 1 until that holds.

use faer::Mat;

use crate::error::{Error, Result};
use crate::graph::{EdgeEnd, MetricGraph};
use crate::linalg;

/// Largest `γ` tried before giving up.
pub const GAMMA_MAX: f64 = 1099511627776.0; // 2^40

/// `V_0, V_1` (continuity rows against start and end values) and `W_0, W_1`
/// (Kirchhoff rows against start slopes and end slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryBlocks {
    pub v0: Mat<f64>,
    pub v1: Mat<f64>,
    pub w0: Mat<f64>,
    pub w1: Mat<f64>,
}

/// `B u = z` reads `V_0 u(0) + V_1 u(ℓ) = z_C`, `W_0 u'(0) − W_1 u'(ℓ) = z_K`.
pub fn boundary_blocks(g: &MetricGraph) -> BoundaryBlocks {
    let m = g.n_edges();
    let nc = g.n_continuity_rows();
    let n = g.n_vertices();
    let mut v0 = Mat::<f64>::zeros(nc, m);
    let mut v1 = Mat::<f64>::zeros(nc, m);
    let mut w0 = Mat::<f64>::zeros(n, m);
    let mut w1 = Mat::<f64>::zeros(n, m);
    let mut r = 0;
    for v in 0..n {
        for w in g.incidences(v).windows(2) {
            for (inc, sign) in [(w[0], 1.0), (w[1], -1.0)] {
                match inc.end {
                    EdgeEnd::Start => v0[(r, inc.edge)] += sign,
                    EdgeEnd::End => v1[(r, inc.edge)] += sign,
                }
            }
            r += 1;
        }
    }
    for v in 0..n {
        for inc in g.incidences(v) {
            let c = g.edge(inc.edge).conductance_at_end(inc.end);
            match inc.end {
                EdgeEnd::Start => w0[(v, inc.edge)] += c,
                EdgeEnd::End => w1[(v, inc.edge)] += c,
            }
        }
    }
    BoundaryBlocks { v0, v1, w0, w1 }
}

/// `N_γ`, `Ñ_γ` and the diagonal of `F_γ`.
pub fn gamma_matrices(
    g: &MetricGraph,
    blocks: &BoundaryBlocks,
    gamma: f64,
) -> (Mat<f64>, Mat<f64>, Vec<f64>) {
    let m = g.n_edges();
    let nc = blocks.v0.nrows();
    let dim = nc + blocks.w0.nrows();
    let mut n = Mat::<f64>::zeros(dim, 2 * m);
    let mut nt = Mat::<f64>::zeros(dim, 2 * m);
    for j in 0..m {
        for r in 0..nc {
            n[(r, j)] = blocks.v0[(r, j)];
            n[(r, m + j)] = blocks.v1[(r, j)];
            nt[(r, j)] = blocks.v1[(r, j)];
            nt[(r, m + j)] = blocks.v0[(r, j)];
        }
        for r in 0..blocks.w0.nrows() {
            n[(nc + r, j)] = -gamma * blocks.w0[(r, j)];
            n[(nc + r, m + j)] = -gamma * blocks.w1[(r, j)];
            nt[(nc + r, j)] = gamma * blocks.w1[(r, j)];
            nt[(nc + r, m + j)] = gamma * blocks.w0[(r, j)];
        }
    }
    let f: Vec<f64> = g
        .edges()
        .iter()
        .map(|e| (-gamma * e.length).exp())
        .cycle()
        .take(2 * m)
        .collect();
    (n, nt, f)
}

/// `‖N_γ⁻¹ Ñ_γ F_γ‖_max`.
pub fn contraction_norm(g: &MetricGraph, gamma: f64) -> Result<f64> {
    let blocks = boundary_blocks(g);
    let (n, nt, f) = gamma_matrices(g, &blocks, gamma);
    let ntf = Mat::from_fn(nt.nrows(), nt.ncols(), |i, j| nt[(i, j)] * f[j]);
    let prod = linalg::solve_general(&n, ntf)?;
    Ok(linalg::max_abs(&prod))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surjection {
    pub gamma: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub contraction: f64,
    /// `B u − z`.
    pub residual: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl Surjection {
    pub fn residual_inf(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    pub fn value(&self, e: usize, x: f64) -> f64 {
        let l = self.lengths[e];
        self.alpha[e] * (-self.gamma * x).exp() + self.beta[e] * (-self.gamma * (l - x)).exp()
    }

    pub fn slope(&self, e: usize, x: f64) -> f64 {
        let l = self.lengths[e];
        self.gamma
            * (-self.alpha[e] * (-self.gamma * x).exp()
                + self.beta[e] * (-self.gamma * (l - x)).exp())
    }
}

pub fn surjectivity_construct(g: &MetricGraph, z: &[f64]) -> Result<Surjection> {
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
    let blocks = boundary_blocks(g);
    let mut gamma = 1.0;
    let (n, nt, f, contraction) = loop {
        let (n, nt, f) = gamma_matrices(g, &blocks, gamma);
        let ntf = Mat::from_fn(dim, dim, |i, j| nt[(i, j)] * f[j]);
        let c = linalg::max_abs(&linalg::solve_general(&n, ntf)?);
        if c < 1.0 {
            break (n, nt, f, c);
        }
        gamma *= 2.0;
        if gamma > GAMMA_MAX {
            return Err(Error::GammaOverflow { gamma });
        }
    };
    let sys = Mat::from_fn(dim, dim, |i, j| n[(i, j)] + nt[(i, j)] * f[j]);
    let rhs = Mat::from_fn(dim, 1, |i, _| z[i]);
    let sol = linalg::solve_general(&sys, rhs)?;
    let mut s = Surjection {
        gamma,
        alpha: (0..m).map(|j| sol[(j, 0)]).collect(),
        beta: (0..m).map(|j| sol[(m + j, 0)]).collect(),
        contraction,
        residual: Vec::new(),
        lengths: g.edges().iter().map(|e| e.length).collect(),
    };
    let values: Vec<f64> = (0..m)
        .flat_map(|e| [s.value(e, 0.0), s.value(e, s.lengths[e])])
        .collect();
    let slopes: Vec<f64> = (0..m)
        .flat_map(|e| [s.slope(e, 0.0), s.slope(e, s.lengths[e])])
        .collect();
    s.residual = g
        .boundary_operator(&values, &slopes)
        .iter()
        .zip(z)
        .map(|(b, z)| b - z)
        .collect();
    Ok(s)
}
