//! Road-network graphs, line graphs and the high-resolution refinement.
//!
//! Vertex and edge indices are 0-based in this API. Files and error messages
//! use 1-based numbering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::SymMatrix;

/// Default relative spread allowed between sub-edge lengths.
pub const DEFAULT_LENGTH_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length_km: f64,
}

impl Edge {
    /// Endpoints ordered as (smaller, larger).
    pub fn ends(&self) -> (usize, usize) {
        (self.u.min(self.v), self.u.max(self.v))
    }
}

/// Undirected, connected, simple graph with edge lengths in kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    vertex_count: usize,
    edges: Vec<Edge>,
}

/// On-disk form: `{"vertices": p, "edges": [{"u", "v", "length_km"}]}`, 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub vertices: usize,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub u: usize,
    pub v: usize,
    pub length_km: f64,
}

impl Graph {
    /// Builds a graph from 1-based `(u, v, length_km)` triples.
    pub fn new(vertex_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidGraph("graph needs at least one vertex".into()));
        }
        let mut out = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for (k, &(u, v, len)) in edges.iter().enumerate() {
            let id = k + 1;
            if u == 0 || v == 0 || u > vertex_count || v > vertex_count {
                return Err(Error::InvalidGraph(format!(
                    "edge {id} ({u},{v}) references a vertex outside 1..={vertex_count}"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("edge {id} is a self-loop on vertex {u}")));
            }
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidGraph(format!("edge {id} has non-positive length {len}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidGraph(format!("edge {id} duplicates {{{u},{v}}}")));
            }
            out.push(Edge { u: u - 1, v: v - 1, length_km: len });
        }
        let g = Graph { vertex_count, edges: out };
        if let Some(v) = g.first_unreachable() {
            return Err(Error::InvalidGraph(format!(
                "graph is disconnected: vertex {} unreachable from vertex 1",
                v + 1
            )));
        }
        Ok(g)
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let triples: Vec<_> = file.edges.iter().map(|e| (e.u, e.v, e.length_km)).collect();
        Graph::new(file.vertices, &triples)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            vertices: self.vertex_count,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord { u: e.u + 1, v: e.v + 1, length_km: e.length_km })
                .collect(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.length_km).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.vertex_count];
        for e in &self.edges {
            d[e.u] += 1;
            d[e.v] += 1;
        }
        d
    }

    /// Edge index joining `a` and `b`, if any.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.ends() == (a.min(b), a.max(b)))
    }

    /// Per-vertex list of (neighbour, edge index), in edge order.
    pub fn incidence(&self) -> Vec<Vec<(usize, usize)>> {
        let mut inc = vec![Vec::new(); self.vertex_count];
        for (i, e) in self.edges.iter().enumerate() {
            inc[e.u].push((e.v, i));
            inc[e.v].push((e.u, i));
        }
        inc
    }

    fn first_unreachable(&self) -> Option<usize> {
        let inc = self.incidence();
        let mut seen = vec![false; self.vertex_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(w, _) in &inc[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().position(|s| !s)
    }
}

/// L = D - A.
pub fn laplacian(graph: &Graph) -> SymMatrix {
    let p = graph.vertex_count();
    let mut m = DMatrix::zeros(p, p);
    for e in graph.edges() {
        m[(e.u, e.v)] = -1.0;
        m[(e.v, e.u)] = -1.0;
        m[(e.u, e.u)] += 1.0;
        m[(e.v, e.v)] += 1.0;
    }
    SymMatrix::from_symmetric(m)
}

/// Line graph: one vertex per edge, adjacent when the edges share an endpoint.
/// Vertex i of the result is edge i of the input; all lengths are 1.
pub fn line_graph(graph: &Graph) -> Result<Graph> {
    let q = graph.edge_count();
    if q == 0 {
        return Err(Error::EmptyLineGraph);
    }
    let mut pairs = Vec::new();
    for i in 0..q {
        let (a, b) = graph.edge(i).ends();
        for j in i + 1..q {
            let (c, d) = graph.edge(j).ends();
            if a == c || a == d || b == c || b == d {
                pairs.push((i + 1, j + 1, 1.0));
            }
        }
    }
    Graph::new(q, &pairs)
}

/// Number of interior points inserted on each edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSpec {
    pub r: Vec<usize>,
}

impl ResolutionSpec {
    pub fn new(r: Vec<usize>) -> Self {
        ResolutionSpec { r }
    }

    pub fn uniform(q: usize, r: usize) -> Self {
        ResolutionSpec { r: vec![r; q] }
    }

    /// Per-edge r with r + 1 = round(length / target_km), so sub-edges come out near `target_km`.
    pub fn for_target_length(graph: &Graph, target_km: f64) -> Self {
        let r = graph
            .edges()
            .iter()
            .map(|e| ((e.length_km / target_km).round().max(1.0) as usize).saturating_sub(1))
            .collect();
        ResolutionSpec { r }
    }

    /// Checks that sub-edge lengths agree: `max/min - 1 <= tolerance`.
    pub fn check_balance(&self, graph: &Graph, tolerance: f64) -> Result<()> {
        if self.r.len() != graph.edge_count() {
            return Err(Error::DimensionMismatch(format!(
                "resolution has {} entries for {} edges",
                self.r.len(),
                graph.edge_count()
            )));
        }
        if graph.edge_count() == 0 {
            return Ok(());
        }
        let h: Vec<f64> = graph
            .edges()
            .iter()
            .zip(&self.r)
            .map(|(e, &r)| e.length_km / (r + 1) as f64)
            .collect();
        let (mut lo, mut hi) = (0, 0);
        for (i, &x) in h.iter().enumerate() {
            if x < h[lo] {
                lo = i;
            }
            if x > h[hi] {
                hi = i;
            }
        }
        let spread = h[hi] / h[lo] - 1.0;
        if spread > tolerance {
            return Err(Error::LengthBalance {
                short_edge: lo + 1,
                short_km: h[lo],
                long_edge: hi + 1,
                long_km: h[hi],
                spread,
                tolerance,
            });
        }
        Ok(())
    }
}

/// The refined graph G_r together with its line-graph Laplacian and projection.
#[derive(Debug, Clone)]
pub struct HighResGraph {
    parent: Graph,
    resolution: ResolutionSpec,
    sub_edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    endpoints: Vec<(usize, usize)>,
    vertex_count: usize,
    line_laplacian: SymMatrix,
    projection: DMatrix<f64>,
}

pub fn refine(graph: &Graph, resolution: &ResolutionSpec) -> Result<HighResGraph> {
    refine_with_tolerance(graph, resolution, DEFAULT_LENGTH_TOLERANCE)
}

pub fn refine_with_tolerance(
    graph: &Graph,
    resolution: &ResolutionSpec,
    tolerance: f64,
) -> Result<HighResGraph> {
    resolution.check_balance(graph, tolerance)?;
    let p = graph.vertex_count();
    let mut next_vertex = p;
    let mut sub_edges = Vec::new();
    let mut offsets = Vec::with_capacity(graph.edge_count());
    let mut endpoints = Vec::new();
    for (i, e) in graph.edges().iter().enumerate() {
        let (a, o) = e.ends();
        let r = resolution.r[i];
        offsets.push(sub_edges.len());
        // chain a -> new vertices -> o
        let mut prev = a;
        for j in 0..=r {
            let next = if j == r {
                o
            } else {
                next_vertex += 1;
                next_vertex - 1
            };
            sub_edges.push((i, j));
            endpoints.push((prev, next));
            prev = next;
        }
    }
    let qr = sub_edges.len();

    let mut incident = vec![Vec::new(); next_vertex];
    for (k, &(a, b)) in endpoints.iter().enumerate() {
        incident[a].push(k);
        incident[b].push(k);
    }
    let mut adj = DMatrix::<f64>::zeros(qr, qr);
    for list in &incident {
        for (x, &s) in list.iter().enumerate() {
            for &t in &list[x + 1..] {
                adj[(s, t)] = 1.0;
                adj[(t, s)] = 1.0;
            }
        }
    }
    let mut lbar = -adj;
    for k in 0..qr {
        let deg: f64 = -lbar.row(k).sum();
        lbar[(k, k)] = deg;
    }

    let mut projection = DMatrix::zeros(graph.edge_count(), qr);
    for (k, &(i, _)) in sub_edges.iter().enumerate() {
        projection[(i, k)] = 1.0;
    }

    Ok(HighResGraph {
        parent: graph.clone(),
        resolution: resolution.clone(),
        sub_edges,
        offsets,
        endpoints,
        vertex_count: next_vertex,
        line_laplacian: SymMatrix::from_symmetric(lbar),
        projection,
    })
}

impl HighResGraph {
    pub fn parent(&self) -> &Graph {
        &self.parent
    }

    pub fn resolution(&self) -> &ResolutionSpec {
        &self.resolution
    }

    /// p_r.
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// q_r.
    pub fn sub_edge_count(&self) -> usize {
        self.sub_edges.len()
    }

    /// (parent edge, position) for every sub-edge, in enumeration order.
    pub fn sub_edges(&self) -> &[(usize, usize)] {
        &self.sub_edges
    }

    /// Endpoints of each sub-edge in G_r, oriented from the smaller original endpoint.
    pub fn sub_edge_endpoints(&self) -> &[(usize, usize)] {
        &self.endpoints
    }

    pub fn line_laplacian(&self) -> &SymMatrix {
        &self.line_laplacian
    }

    /// S_r, q x q_r.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Sub-edge index range of parent edge `i`.
    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.offsets[i];
        start..start + self.resolution.r[i] + 1
    }

    /// Parent edge of each sub-edge.
    pub fn edge_of(&self) -> Vec<usize> {
        self.sub_edges.iter().map(|&(i, _)| i).collect()
    }

    pub fn sub_edge_lengths(&self) -> Vec<f64> {
        self.sub_edges
            .iter()
            .map(|&(i, _)| self.parent.edge(i).length_km / (self.resolution.r[i] + 1) as f64)
            .collect()
    }

    pub fn edge_index(&self, parent: usize, position: usize) -> Result<usize> {
        if parent >= self.parent.edge_count() {
            return Err(Error::OutOfRange(format!(
                "edge {} of {}",
                parent + 1,
                self.parent.edge_count()
            )));
        }
        let r = self.resolution.r[parent];
        if position > r {
            return Err(Error::OutOfRange(format!(
                "position {} on edge {} (allowed 1..={})",
                position + 1,
                parent + 1,
                r + 1
            )));
        }
        Ok(self.offsets[parent] + position)
    }

    /// Inverse of [`edge_index`](Self::edge_index).
    pub fn sub_edge(&self, index: usize) -> Result<(usize, usize)> {
        self.sub_edges
            .get(index)
            .copied()
            .ok_or_else(|| Error::OutOfRange(format!("sub-edge {} of {}", index + 1, self.sub_edges.len())))
    }

    /// Expands a per-edge vector to one entry per sub-edge.
    pub fn expand<T: Copy>(&self, per_edge: &[T]) -> Vec<T> {
        self.sub_edges.iter().map(|&(i, _)| per_edge[i]).collect()
    }
}
