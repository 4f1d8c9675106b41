//! Metric graphs with per-edge conductance and potential, and the vertex
//! condition matrices that encode continuity and Kirchhoff balance.
//!
//! Every edge `e` is parametrised by `x ∈ [0, ℓ_e]`. Coordinate 0 sits at the
//! endpoint whose vertex id is lexicographically smaller; the other endpoint
//! is the edge's end. Derivatives at a vertex are taken in the direction
//! pointing away from the vertex into the edge, so at the start of an edge
//! the vertex derivative is `u'(0)` and at its end it is `-u'(ℓ_e)`.

use std::collections::{BTreeMap, HashMap};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw graph description as read from a TOML file.
///
/// ```toml
/// [[vertices]]
/// id = "a"
/// [[vertices]]
/// id = "b"
///
/// [[edges]]
/// from = "a"
/// to = "b"
/// length = 1.0
/// conductance = 1.0   # optional, default 1
/// potential = 0.0     # optional, default 0
/// ```
///
/// `conductance_profile` / `potential_profile` optionally sample a variable
/// coefficient at equally spaced points from `from` to `to`; only the finite
/// element path uses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexSpec {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub from: String,
    pub to: String,
    pub length: f64,
    #[serde(default = "default_conductance")]
    pub conductance: f64,
    #[serde(default)]
    pub potential: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance_profile: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_profile: Option<Vec<f64>>,
}

fn default_conductance() -> f64 {
    1.0
}

impl EdgeSpec {
    pub fn new(from: &str, to: &str, length: f64) -> Self {
        EdgeSpec {
            id: None,
            from: from.to_string(),
            to: to.to_string(),
            length,
            conductance: 1.0,
            potential: 0.0,
            conductance_profile: None,
            potential_profile: None,
        }
    }

    pub fn with_conductance(mut self, c: f64) -> Self {
        self.conductance = c;
        self
    }

    pub fn with_potential(mut self, p: f64) -> Self {
        self.potential = p;
        self
    }
}

impl GraphSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::GraphFormat(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("graph spec serialises")
    }

    pub fn from_parts(vertices: &[&str], edges: Vec<EdgeSpec>) -> Self {
        GraphSpec {
            vertices: vertices
                .iter()
                .map(|v| VertexSpec { id: v.to_string() })
                .collect(),
            edges,
        }
    }

    /// Single edge `v0 – v1`.
    pub fn interval(length: f64) -> Self {
        Self::from_parts(&["v0", "v1"], vec![EdgeSpec::new("v0", "v1", length)])
    }

    /// Path `v0 – v1 – … – v_m` with the given edge lengths.
    pub fn path(lengths: &[f64]) -> Self {
        let names: Vec<String> = (0..=lengths.len()).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| EdgeSpec::new(&names[i], &names[i + 1], l))
            .collect();
        Self::from_parts(&refs, edges)
    }

    /// Star with centre `v0` and leaves `v1 … v_m`.
    pub fn star(lengths: &[f64]) -> Self {
        let names: Vec<String> = (0..=lengths.len()).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| EdgeSpec::new("v0", &names[i + 1], l))
            .collect();
        Self::from_parts(&refs, edges)
    }
}

/// Which end of an edge meets a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeEnd {
    /// coordinate 0
    Start,
    /// coordinate ℓ_e
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoefficients {
    pub conductance: f64,
    pub potential: f64,
    /// Samples at equally spaced points along the canonical orientation.
    pub conductance_profile: Option<Vec<f64>>,
    pub potential_profile: Option<Vec<f64>>,
}

fn sample_profile(samples: &[f64], s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0) * (samples.len() - 1) as f64;
    let i = (s.floor() as usize).min(samples.len() - 2);
    let w = s - i as f64;
    (1.0 - w) * samples[i] + w * samples[i + 1]
}

impl EdgeCoefficients {
    /// Conductance at relative position `s ∈ [0, 1]` along the edge.
    pub fn conductance_at(&self, s: f64) -> f64 {
        match &self.conductance_profile {
            Some(p) => sample_profile(p, s),
            None => self.conductance,
        }
    }

    pub fn potential_at(&self, s: f64) -> f64 {
        match &self.potential_profile {
            Some(p) => sample_profile(p, s),
            None => self.potential,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.conductance_profile.is_none() && self.potential_profile.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub length: f64,
    pub coeffs: EdgeCoefficients,
}

impl Edge {
    pub fn vertex_at(&self, end: EdgeEnd) -> usize {
        match end {
            EdgeEnd::Start => self.start,
            EdgeEnd::End => self.end,
        }
    }

    /// `c_e(v)` at the given endpoint.
    pub fn conductance_at_end(&self, end: EdgeEnd) -> f64 {
        match end {
            EdgeEnd::Start => self.coeffs.conductance_at(0.0),
            EdgeEnd::End => self.coeffs.conductance_at(1.0),
        }
    }
}

/// One entry of a vertex's ordered incidence list `E_v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub edge: usize,
    pub end: EdgeEnd,
}

impl Incidence {
    /// Index of this edge end in the `2m` end ordering `(e0 start, e0 end, e1 start, …)`.
    pub fn end_index(&self) -> usize {
        2 * self.edge
            + match self.end {
                EdgeEnd::Start => 0,
                EdgeEnd::End => 1,
            }
    }
}

/// A validated, simple metric graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    vertex_names: Vec<String>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Incidence>>,
}

fn check_profile(edge: &str, profile: &Option<Vec<f64>>, positive: bool) -> Result<()> {
    let Some(p) = profile else { return Ok(()) };
    if p.len() < 2 {
        return Err(Error::InvalidProfile {
            edge: edge.to_string(),
            reason: "needs at least two samples".into(),
        });
    }
    for &x in p {
        let ok = x.is_finite() && if positive { x > 0.0 } else { x >= 0.0 };
        if !ok {
            return Err(if positive {
                Error::NonpositiveConductance {
                    edge: edge.to_string(),
                    value: x,
                }
            } else {
                Error::NegativePotential {
                    edge: edge.to_string(),
                    value: x,
                }
            });
        }
    }
    Ok(())
}

/// Checks the standing assumptions on a raw description and builds the graph.
pub fn validate_graph(spec: &GraphSpec) -> Result<MetricGraph> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, v) in spec.vertices.iter().enumerate() {
        if index.insert(v.id.as_str(), i).is_some() {
            return Err(Error::DuplicateVertex(v.id.clone()));
        }
    }

    let mut edges = Vec::with_capacity(spec.edges.len());
    let mut seen_pairs: BTreeMap<(usize, usize), String> = BTreeMap::new();
    for (k, es) in spec.edges.iter().enumerate() {
        let name = es.id.clone().unwrap_or_else(|| format!("e{k}"));
        let a = *index
            .get(es.from.as_str())
            .ok_or_else(|| Error::UnknownVertex(es.from.clone()))?;
        let b = *index
            .get(es.to.as_str())
            .ok_or_else(|| Error::UnknownVertex(es.to.clone()))?;
        if a == b {
            return Err(Error::LoopEdge {
                edge: name,
                vertex: es.from.clone(),
            });
        }
        if !(es.length.is_finite() && es.length > 0.0) {
            return Err(Error::NonpositiveLength {
                edge: name,
                length: es.length,
            });
        }
        if !(es.conductance.is_finite() && es.conductance > 0.0) {
            return Err(Error::NonpositiveConductance {
                edge: name,
                value: es.conductance,
            });
        }
        if !(es.potential.is_finite() && es.potential >= 0.0) {
            return Err(Error::NegativePotential {
                edge: name,
                value: es.potential,
            });
        }
        check_profile(&name, &es.conductance_profile, true)?;
        check_profile(&name, &es.potential_profile, false)?;

        let key = (a.min(b), a.max(b));
        if let Some(other) = seen_pairs.get(&key) {
            return Err(Error::ParallelEdge {
                edge: name,
                other: other.clone(),
                a: spec.vertices[key.0].id.clone(),
                b: spec.vertices[key.1].id.clone(),
            });
        }
        seen_pairs.insert(key, name.clone());

        // canonical orientation: coordinate 0 at the lexicographically smaller id
        let flip = spec.vertices[a].id > spec.vertices[b].id;
        let (start, end) = if flip { (b, a) } else { (a, b) };
        let orient = |p: &Option<Vec<f64>>| {
            p.as_ref().map(|v| {
                let mut v = v.clone();
                if flip {
                    v.reverse();
                }
                v
            })
        };
        edges.push(Edge {
            name,
            start,
            end,
            length: es.length,
            coeffs: EdgeCoefficients {
                conductance: es.conductance,
                potential: es.potential,
                conductance_profile: orient(&es.conductance_profile),
                potential_profile: orient(&es.potential_profile),
            },
        });
    }

    let mut adjacency = vec![Vec::new(); spec.vertices.len()];
    for (k, e) in edges.iter().enumerate() {
        adjacency[e.start].push(Incidence {
            edge: k,
            end: EdgeEnd::Start,
        });
        adjacency[e.end].push(Incidence {
            edge: k,
            end: EdgeEnd::End,
        });
    }

    let g = MetricGraph {
        vertex_names: spec.vertices.iter().map(|v| v.id.clone()).collect(),
        edges,
        adjacency,
    };
    if g.n_components() > 1 {
        log::warn!("graph has {} connected components", g.n_components());
    }
    Ok(g)
}

/// Vertex condition matrices for one vertex, in adjacency order.
#[derive(Debug, Clone)]
pub struct VertexConditions {
    pub vertex: usize,
    pub incidences: Vec<Incidence>,
    /// `(d−1) × d` consecutive-difference matrix.
    pub iv: Mat<f64>,
    /// `I_v` padded with a zero last row.
    pub av: Mat<f64>,
    /// Zero except for the last row, which holds `C(v)ᵀ`.
    pub bv: Mat<f64>,
    /// `C(v)ᵀ = (c_{e_1}(v), …, c_{e_d}(v))`.
    pub c_row: Vec<f64>,
}

impl MetricGraph {
    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        validate_graph(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        validate_graph(&GraphSpec::from_toml_str(text)?)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_names.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn vertex_name(&self, v: usize) -> &str {
        &self.vertex_names[v]
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.vertex_names.iter().position(|n| n == name)
    }

    pub fn incidences(&self, v: usize) -> &[Incidence] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Number of continuity rows, `Σ_v (d_v − 1) = 2m − n` for graphs without
    /// isolated vertices.
    pub fn n_continuity_rows(&self) -> usize {
        self.adjacency.iter().map(|a| a.len().saturating_sub(1)).sum()
    }

    /// Dimension of the full boundary space, `2m`.
    pub fn boundary_dim(&self) -> usize {
        self.n_continuity_rows() + self.n_vertices()
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.edges.iter().all(|e| e.coeffs.is_constant())
    }

    pub fn n_components(&self) -> usize {
        let n = self.n_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.start), find(&mut parent, e.end));
            if a != b {
                parent[a] = b;
            }
        }
        (0..n).filter(|&v| find(&mut parent, v) == v).count()
    }

    pub fn vertex_matrices(&self, v: usize) -> Result<VertexConditions> {
        if v >= self.n_vertices() {
            return Err(Error::UnknownVertex(format!("#{v}")));
        }
        let inc = self.adjacency[v].clone();
        let d = inc.len();
        let rows = d.saturating_sub(1);
        let iv = Mat::from_fn(rows, d, |r, c| {
            if c == r {
                1.0
            } else if c == r + 1 {
                -1.0
            } else {
                0.0
            }
        });
        let c_row: Vec<f64> = inc
            .iter()
            .map(|i| self.edges[i.edge].conductance_at_end(i.end))
            .collect();
        let av = Mat::from_fn(d, d, |r, c| if r < rows { iv[(r, c)] } else { 0.0 });
        let bv = Mat::from_fn(d, d, |r, c| if r + 1 == d { c_row[c] } else { 0.0 });
        Ok(VertexConditions {
            vertex: v,
            incidences: inc,
            iv,
            av,
            bv,
            c_row,
        })
    }

    pub fn vertex_matrices_by_name(&self, name: &str) -> Result<VertexConditions> {
        let v = self
            .vertex_index(name)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))?;
        self.vertex_matrices(v)
    }

    /// Applies the boundary operator `B u = ((I_v U(v))_v ; (C(v)ᵀ U'(v))_v)`
    /// given the edge-end traces of a function that is smooth on every edge.
    ///
    /// `values[2e]`, `values[2e+1]` are `u_e(0)`, `u_e(ℓ_e)`; `slopes` holds the
    /// plain derivatives `u_e'(0)`, `u_e'(ℓ_e)` in the same layout.
    pub fn boundary_operator(&self, values: &[f64], slopes: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.boundary_dim());
        for inc in &self.adjacency {
            for w in inc.windows(2) {
                out.push(values[w[0].end_index()] - values[w[1].end_index()]);
            }
        }
        for inc in &self.adjacency {
            let flux = inc
                .iter()
                .map(|i| {
                    let c = self.edges[i.edge].conductance_at_end(i.end);
                    let d = slopes[i.end_index()];
                    match i.end {
                        EdgeEnd::Start => c * d,
                        EdgeEnd::End => -c * d,
                    }
                })
                .sum();
            out.push(flux);
        }
        out
    }
}

/// Nodal values of a function on every edge, in canonical edge coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFunction {
    pub values: Vec<Vec<f64>>,
    pub continuous: bool,
}

impl GraphFunction {
    /// Largest disagreement between edge-end values meeting at a vertex.
    pub fn max_vertex_jump(&self, g: &MetricGraph) -> f64 {
        let mut worst: f64 = 0.0;
        for v in 0..g.n_vertices() {
            let vals: Vec<f64> = g
                .incidences(v)
                .iter()
                .map(|i| self.end_value(i.edge, i.end))
                .collect();
            for w in vals.windows(2) {
                worst = worst.max((w[0] - w[1]).abs());
            }
        }
        worst
    }

    pub fn end_value(&self, e: usize, end: EdgeEnd) -> f64 {
        let vals = &self.values[e];
        match end {
            EdgeEnd::Start => vals[0],
            EdgeEnd::End => vals[vals.len() - 1],
        }
    }

    /// Checks the continuity flag against the data.
    pub fn check(&self, g: &MetricGraph, tol: f64) -> Result<()> {
        if !self.continuous {
            return Ok(());
        }
        for v in 0..g.n_vertices() {
            let inc = g.incidences(v);
            let first = inc.first().map(|i| self.end_value(i.edge, i.end));
            if let Some(f) = first {
                for i in inc {
                    if (self.end_value(i.edge, i.end) - f).abs() > tol {
                        return Err(Error::BrokenSpaceInput {
                            vertex: g.vertex_name(v).to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
