//! Graph representation, shift normalization, incidence matrix and
//! shift-power edge sets.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::Mat;
use crate::sparse::Csr;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;
const EXACT_FALLBACK_MAX_N: usize = 2000;

/// One undirected weighted edge, stored with `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

impl Edge {
    pub fn is_self_loop(&self) -> bool {
        self.i == self.j
    }
}

/// Undirected weighted graph; the adjacency doubles as the graph shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<Edge>,
    adjacency: Csr,
    norm_scale: f64,
}

impl Graph {
    /// Validates and assembles the symmetric adjacency. Edges may be given
    /// in either orientation; they are stored sorted with `i <= j`.
    pub fn from_edges(n_vertices: usize, edges: &[Edge]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut stored = Vec::with_capacity(edges.len());
        for e in edges {
            let (i, j) = (e.i.min(e.j), e.i.max(e.j));
            if j >= n_vertices {
                return Err(Error::validation(format!(
                    "edge ({},{}) references a vertex outside 0..{n_vertices}",
                    e.i, e.j
                )));
            }
            if !e.w.is_finite() || e.w < 0.0 {
                return Err(Error::validation(format!(
                    "edge ({},{}) has invalid weight {}",
                    e.i, e.j, e.w
                )));
            }
            if e.w == 0.0 {
                return Err(Error::validation(format!("edge ({},{}) has zero weight", e.i, e.j)));
            }
            if !seen.insert((i, j)) {
                return Err(Error::validation(format!("duplicate edge ({i},{j})")));
            }
            stored.push(Edge { i, j, w: e.w });
        }
        stored.sort_by_key(|e| (e.i, e.j));
        let mut triplets = Vec::with_capacity(2 * stored.len());
        for e in &stored {
            triplets.push((e.i, e.j, e.w));
            if !e.is_self_loop() {
                triplets.push((e.j, e.i, e.w));
            }
        }
        let adjacency = Csr::from_triplets(n_vertices, n_vertices, &triplets)?;
        Ok(Self {
            n_vertices,
            edges: stored,
            adjacency,
            norm_scale: 1.0,
        })
    }

    /// Unit-weight graph from vertex pairs.
    pub fn unweighted(n_vertices: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let edges: Vec<Edge> = pairs.iter().map(|&(i, j)| Edge { i, j, w: 1.0 }).collect();
        Self::from_edges(n_vertices, &edges)
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of stored undirected edges (self-loops included).
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }

    pub(crate) fn with_norm_scale(mut self, norm_scale: f64) -> Self {
        self.norm_scale = norm_scale;
        self
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_vertices)
            .map(|i| self.adjacency.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Combinatorial Laplacian `D − A` (dense).
    pub fn laplacian(&self) -> Mat {
        let mut l = self.adjacency.to_dense().scale(-1.0);
        for (i, d) in self.degrees().into_iter().enumerate() {
            l[(i, i)] += d;
        }
        l
    }

    /// Neighbor lists (self-loops excluded).
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.n_vertices)
            .map(|i| self.adjacency.row(i).filter(|&(j, _)| j != i).map(|(j, _)| j).collect())
            .collect()
    }

    /// Connected components as a label per vertex, labels in order of
    /// lowest vertex index.
    pub fn components(&self) -> Vec<usize> {
        let nbrs = self.neighbors();
        let mut label = vec![usize::MAX; self.n_vertices];
        let mut next = 0;
        for s in 0..self.n_vertices {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &v in &nbrs[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.n_vertices > 0 && self.components().iter().all(|&c| c == 0)
    }

    /// Renders the graph as edge-list TSV with a `#N=` header.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("#N={}\n", self.n_vertices);
        for e in &self.edges {
            let _ = writeln!(s, "{}\t{}\t{}", e.i, e.j, fmt_f64(e.w));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Parses edge-list TSV. Columns may be separated by tabs or spaces.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut declared_n: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(n) = rest.trim().strip_prefix("N=") {
                declared_n = Some(n.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad vertex-count header {line:?}"),
                })?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let parse_idx = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad vertex index {s:?}"),
            })
        };
        let i = parse_idx(fields[0])?;
        let j = parse_idx(fields[1])?;
        let w: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad weight {:?}", fields[2]),
        })?;
        if w < 0.0 {
            return Err(Error::validation(format!("negative weight {w} at line {line_no}")));
        }
        edges.push(Edge { i, j, w });
    }
    let max_idx = edges.iter().map(|e| e.i.max(e.j) + 1).max().unwrap_or(0);
    let n = match declared_n {
        Some(n) if n < max_idx => {
            return Err(Error::validation(format!(
                "header declares N={n} but vertex {} appears",
                max_idx - 1
            )))
        }
        Some(n) => n,
        None => max_idx,
    };
    Graph::from_edges(n, &edges)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    parse_graph(&std::fs::read_to_string(path)?)
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration
/// on `|A|`; `None` if it fails to converge.
fn power_iteration_norm(a: &Csr) -> Option<f64> {
    let n = a.rows();
    let abs = a.map_values(f64::abs);
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut prev = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let y = abs.matvec(&x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        if (norm - prev).abs() <= POWER_TOL * norm {
            return Some(norm);
        }
        prev = norm;
        x = y.into_iter().map(|v| v / norm).collect();
    }
    None
}

/// `|λ_max(A)|` with an exact eigensolver fallback.
pub fn spectral_radius(a: &Csr) -> Result<f64> {
    let nonneg = a.values().iter().all(|&v| v >= 0.0);
    if nonneg {
        if let Some(r) = power_iteration_norm(a) {
            return Ok(r);
        }
    }
    if a.rows() > EXACT_FALLBACK_MAX_N {
        return Err(Error::Numerical(format!(
            "power iteration did not converge and N={} exceeds the exact fallback limit",
            a.rows()
        )));
    }
    let basis = crate::spectral::eig_sym(&a.to_dense())?;
    Ok(basis.eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Divides the adjacency by `|λ_max|`, so its spectral norm becomes 1.
pub fn normalize_adjacency(g: &Graph) -> Result<Graph> {
    if g.n_vertices == 0 {
        return Err(Error::validation("cannot normalize an empty graph"));
    }
    if g.adjacency.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Numerical("cannot normalize null graph".into()));
    }
    let lambda = spectral_radius(&g.adjacency)?;
    if lambda == 0.0 {
        return Err(Error::Numerical("cannot normalize null graph".into()));
    }
    Ok(Graph {
        n_vertices: g.n_vertices,
        edges: g.edges.iter().map(|e| Edge { w: e.w / lambda, ..*e }).collect(),
        adjacency: g.adjacency.scale(1.0 / lambda),
        norm_scale: lambda,
    })
}

/// Oriented, weighted incidence matrix `Δ` (one row per non-loop edge).
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    matrix: Csr,
    edges: Vec<Edge>,
}

impl Incidence {
    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    /// Edges in row order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.cols()
    }

    /// `Δx` for every column of `x`.
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        self.matrix.mul_dense(x)
    }

    /// `Δᵀy` for every column of `y`.
    pub fn apply_transpose(&self, y: &Mat) -> Result<Mat> {
        self.matrix.tmul_dense(y)
    }

    /// `ΔᵀΔ` as a dense matrix.
    pub fn gram(&self) -> Mat {
        let mut g = Mat::zeros(self.n_cols(), self.n_cols());
        for i in 0..self.matrix.rows() {
            let row: Vec<_> = self.matrix.row(i).collect();
            for &(a, va) in &row {
                for &(b, vb) in &row {
                    g[(a, b)] += va * vb;
                }
            }
        }
        g
    }
}

/// Row per edge `(j, k)`, `j < k`: `−√w` at column `j`, `+√w` at column `k`.
pub fn incidence_matrix(g: &Graph) -> Incidence {
    let mut triplets = Vec::with_capacity(2 * g.edges.len());
    let mut edges = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        if e.is_self_loop() {
            log::warn!("skipping self-loop at vertex {} in incidence matrix", e.i);
            continue;
        }
        let r = edges.len();
        let s = e.w.sqrt();
        triplets.push((r, e.i, -s));
        triplets.push((r, e.j, s));
        edges.push(*e);
    }
    let matrix = Csr::from_triplets(edges.len(), g.n_vertices, &triplets).expect("in-range");
    Incidence { matrix, edges }
}

/// Sparse powers `A¹ … A^L` of the shift with explicit nonzero patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPowers {
    masks: Vec<Csr>,
}

impl ShiftPowers {
    pub fn order(&self) -> usize {
        self.masks.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.masks[0].rows()
    }

    /// `A^ell` for `ell` in `1..=order`.
    pub fn mask(&self, ell: usize) -> &Csr {
        &self.masks[ell - 1]
    }

    pub fn masks(&self) -> &[Csr] {
        &self.masks
    }

    /// Nonzero coordinates of `A^ell`, row-major.
    pub fn edge_set(&self, ell: usize) -> Vec<(usize, usize)> {
        self.mask(ell).triplets().map(|(i, j, _)| (i, j)).collect()
    }

    /// Keeps only the first `order` powers.
    pub fn truncated(&self, order: usize) -> Result<ShiftPowers> {
        if order == 0 || order > self.order() {
            return Err(Error::validation(format!(
                "cannot truncate order-{} powers to {order}",
                self.order()
            )));
        }
        Ok(ShiftPowers {
            masks: self.masks[..order].to_vec(),
        })
    }
}

pub fn shift_powers(g: &Graph, order: usize) -> Result<ShiftPowers> {
    shift_powers_of(g.adjacency(), order)
}

pub fn shift_powers_of(a: &Csr, order: usize) -> Result<ShiftPowers> {
    if order < 1 {
        return Err(Error::validation("shift power order must be at least 1"));
    }
    let mut masks = vec![a.clone()];
    for _ in 1..order {
        let next = masks.last().unwrap().matmul(a)?;
        masks.push(next);
    }
    Ok(ShiftPowers { masks })
}
