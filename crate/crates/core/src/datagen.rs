//! Simulated graphs, clean signal families and noise models.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph};
use crate::linalg::{Mat, SignalMatrix};
use crate::rng::{derive_seed, CounterRng};
use crate::spectral::{eig_sym, laplacian_basis, SpectralBasis};

pub const DEFAULT_RADIUS: f64 = 0.1;
pub const TARGET_MEAN_SQUARE: f64 = 0.5;
pub const MAX_PIECE_IMBALANCE: f64 = 3.0;
const PARTITION_ATTEMPTS: u64 = 64;

// Sub-stream ids for derive_seed.
const STREAM_PARTITION: u64 = 1;
const STREAM_COEFFS: u64 = 2;

/// Points uniform in the unit square; unit-weight edges below `radius`.
pub fn random_geometric_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = CounterRng::new(seed);
    (0..n).map(|_| [rng.uniform(), rng.uniform()]).collect()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Random geometric graph on `n` uniform points, made connected by linking
/// each extra component to the main one through its closest point pair,
/// then normalized.
pub fn random_geometric_graph(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::validation("a geometric graph needs at least 2 vertices"));
    }
    if !(radius > 0.0) {
        return Err(Error::validation(format!("radius must be positive, got {radius}")));
    }
    let pts = random_geometric_points(n, seed);
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if dist2(pts[i], pts[j]) < r2 {
                pairs.push((i, j));
            }
        }
    }
    let mut g = Graph::unweighted(n, &pairs)?;
    let labels = g.components();
    let n_comp = labels.iter().max().map_or(0, |m| m + 1);
    if n_comp > 1 {
        let mut sizes = vec![0usize; n_comp];
        for &l in &labels {
            sizes[l] += 1;
        }
        let main = (0..n_comp).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let mut in_main: Vec<bool> = labels.iter().map(|&l| l == main).collect();
        for c in (0..n_comp).filter(|&c| c != main) {
            let mut best = (f64::INFINITY, 0, 0);
            for u in (0..n).filter(|&u| labels[u] == c) {
                for v in (0..n).filter(|&v| in_main[v]) {
                    let d = dist2(pts[u], pts[v]);
                    if d < best.0 {
                        best = (d, u, v);
                    }
                }
            }
            pairs.push((best.1, best.2));
            for u in 0..n {
                if labels[u] == c {
                    in_main[u] = true;
                }
            }
        }
        g = Graph::unweighted(n, &pairs)?;
    }
    normalize_adjacency(&g)
}

fn grow_partition(nbrs: &[Vec<usize>], pieces: usize, rng: &mut CounterRng) -> Vec<usize> {
    let n = nbrs.len();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut label = vec![usize::MAX; n];
    let mut queues: Vec<VecDeque<usize>> = Vec::with_capacity(pieces);
    for (k, &s) in order[..pieces].iter().enumerate() {
        label[s] = k;
        queues.push(nbrs[s].iter().copied().collect());
    }
    let mut remaining = n - pieces;
    while remaining > 0 {
        let mut progressed = false;
        for (k, queue) in queues.iter_mut().enumerate() {
            while let Some(v) = queue.pop_front() {
                if label[v] == usize::MAX {
                    label[v] = k;
                    remaining -= 1;
                    queue.extend(nbrs[v].iter().copied());
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    label
}

fn piece_sizes(labels: &[usize], pieces: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; pieces];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// Splits a connected graph into `pieces` connected parts by round-robin
/// multi-source BFS, retrying with fresh sources until the largest part is
/// at most three times the smallest. Returns a piece label per vertex.
pub fn partition_graph(g: &Graph, pieces: usize, seed: u64) -> Result<Vec<usize>> {
    let n = g.n_vertices();
    if pieces < 1 || pieces > n {
        return Err(Error::validation(format!(
            "cannot split {n} vertices into {pieces} pieces"
        )));
    }
    if !g.is_connected() {
        return Err(Error::validation("partitioning requires a connected graph"));
    }
    let nbrs = g.neighbors();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for attempt in 0..PARTITION_ATTEMPTS {
        let mut rng = CounterRng::new(derive_seed(seed, attempt));
        let labels = grow_partition(&nbrs, pieces, &mut rng);
        let sizes = piece_sizes(&labels, pieces);
        let ratio = *sizes.iter().max().unwrap() as f64 / *sizes.iter().min().unwrap() as f64;
        if ratio <= MAX_PIECE_IMBALANCE {
            return Ok(labels);
        }
        if best.as_ref().is_none_or(|(r, _)| ratio < *r) {
            best = Some((ratio, labels));
        }
    }
    let (ratio, labels) = best.expect("at least one attempt");
    log::warn!("partition imbalance {ratio:.2} exceeds {MAX_PIECE_IMBALANCE} after {PARTITION_ATTEMPTS} attempts");
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Smooth,
    PiecewiseConstant,
    PiecewiseSmooth,
}

impl SignalKind {
    pub fn name(self) -> &'static str {
        match self {
            SignalKind::Smooth => "smooth",
            SignalKind::PiecewiseConstant => "piecewise-constant",
            SignalKind::PiecewiseSmooth => "piecewise-smooth",
        }
    }

    pub fn default_bandwidth(self) -> usize {
        match self {
            SignalKind::Smooth => 10,
            SignalKind::PiecewiseConstant => 1,
            SignalKind::PiecewiseSmooth => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub kind: SignalKind,
    /// Number of Laplacian eigenvectors mixed (smooth and piecewise-smooth).
    #[serde(default)]
    pub bandwidth: Option<usize>,
    #[serde(default = "default_pieces")]
    pub pieces: usize,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Map each scaled signal to `{0, 1}` by its sign (for flip noise).
    #[serde(default)]
    pub binarize: bool,
}

fn default_pieces() -> usize {
    5
}

impl SignalSpec {
    pub fn new(kind: SignalKind, k: usize, seed: u64) -> Self {
        Self {
            kind,
            bandwidth: None,
            pieces: default_pieces(),
            k,
            seed,
            binarize: false,
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth.unwrap_or(self.kind.default_bandwidth())
    }
}

/// Scales every column to mean square `TARGET_MEAN_SQUARE`.
pub fn scale_columns(x: &mut Mat) -> Result<()> {
    let n = x.rows() as f64;
    for j in 0..x.cols() {
        let col = x.column(j);
        let ms = col.iter().map(|v| v * v).sum::<f64>() / n;
        if ms == 0.0 {
            return Err(Error::Numerical(format!("signal column {j} is identically zero")));
        }
        let s = (TARGET_MEAN_SQUARE / ms).sqrt();
        x.set_column(j, &col.iter().map(|v| v * s).collect::<Vec<_>>());
    }
    Ok(())
}

fn bandlimited(vecs_ascending: &Mat, band: usize, k: usize, rng: &mut CounterRng) -> Mat {
    let n = vecs_ascending.rows();
    let coeffs = Mat::from_fn(band, k, |_, _| rng.normal());
    let basis = Mat::from_fn(n, band, |i, j| vecs_ascending[(i, j)]);
    basis.matmul(&coeffs).expect("conforming")
}

/// Clean signals, scaled. `laplacian` may pass a precomputed Laplacian
/// basis of `g` for the smooth family.
pub fn generate_signals(g: &Graph, spec: &SignalSpec, laplacian: Option<&SpectralBasis>) -> Result<SignalMatrix> {
    let n = g.n_vertices();
    let band = spec.bandwidth();
    if band < 1 || band > n {
        return Err(Error::validation(format!("bandwidth {band} outside 1..={n}")));
    }
    if spec.pieces < 1 {
        return Err(Error::validation("pieces must be at least 1"));
    }
    if spec.k < 1 {
        return Err(Error::validation("signal count must be at least 1"));
    }
    let mut rng = CounterRng::new(derive_seed(spec.seed, STREAM_COEFFS));
    let mut x = match spec.kind {
        SignalKind::Smooth => {
            let owned;
            let basis = match laplacian {
                Some(b) => b,
                None => {
                    owned = laplacian_basis(g)?;
                    &owned
                }
            };
            let (_, vecs) = basis.ascending();
            bandlimited(&vecs, band, spec.k, &mut rng)
        }
        SignalKind::PiecewiseConstant => {
            let labels = partition_graph(g, spec.pieces, derive_seed(spec.seed, STREAM_PARTITION))?;
            let values = Mat::from_fn(spec.pieces, spec.k, |_, _| rng.uniform_range(-1.0, 1.0));
            Mat::from_fn(n, spec.k, |i, j| values[(labels[i], j)])
        }
        SignalKind::PiecewiseSmooth => {
            let labels = partition_graph(g, spec.pieces, derive_seed(spec.seed, STREAM_PARTITION))?;
            let mut x = Mat::zeros(n, spec.k);
            for piece in 0..spec.pieces {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == piece).collect();
                let sub = induced_laplacian(g, &members);
                let (_, vecs) = eig_sym(&sub)?.ascending();
                let local = bandlimited(&vecs, band.min(members.len()), spec.k, &mut rng);
                for (r, &i) in members.iter().enumerate() {
                    x.row_mut(i).copy_from_slice(local.row(r));
                }
            }
            x
        }
    };
    scale_columns(&mut x)?;
    if spec.binarize {
        x = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(x)
}

/// Laplacian of the subgraph induced by `members` (in that order).
fn induced_laplacian(g: &Graph, members: &[usize]) -> Mat {
    let mut pos = vec![usize::MAX; g.n_vertices()];
    for (r, &i) in members.iter().enumerate() {
        pos[i] = r;
    }
    let m = members.len();
    let mut l = Mat::zeros(m, m);
    for e in g.edges() {
        let (a, b) = (pos[e.i], pos[e.j]);
        if e.is_self_loop() || a == usize::MAX || b == usize::MAX {
            continue;
        }
        l[(a, b)] -= e.w;
        l[(b, a)] -= e.w;
        l[(a, a)] += e.w;
        l[(b, b)] += e.w;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "model")]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    Mixture { sigma: f64, b: f64 },
    Bernoulli { flip_rate: f64 },
}

impl NoiseModel {
    pub fn name(&self) -> String {
        match self {
            NoiseModel::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            NoiseModel::Mixture { sigma, b } => format!("mixture(sigma={sigma},b={b})"),
            NoiseModel::Bernoulli { flip_rate } => format!("bernoulli(flip={flip_rate})"),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::Gaussian { sigma } => sigma >= 0.0,
            NoiseModel::Mixture { sigma, b } => sigma >= 0.0 && b >= 0.0,
            NoiseModel::Bernoulli { flip_rate } => (0.0..=1.0).contains(&flip_rate),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid noise parameters {self:?}")))
        }
    }
}

fn perturb(x: &Mat, mut f: impl FnMut(f64) -> f64) -> Mat {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

/// Standard normal matrix; row-major draw order.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = CounterRng::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

/// Noisy measurements `T` of `x`. Draws are row-major; the mixture model
/// draws the Gaussian then the Laplace term for each entry.
pub fn add_noise(x: &SignalMatrix, model: &NoiseModel, seed: u64) -> Result<SignalMatrix> {
    model.validate()?;
    let mut rng = CounterRng::new(seed);
    match *model {
        NoiseModel::Gaussian { sigma } => Ok(perturb(x, |v| v + sigma * rng.normal())),
        NoiseModel::Mixture { sigma, b } => Ok(perturb(x, |v| v + sigma * rng.normal() + rng.laplace(b))),
        NoiseModel::Bernoulli { flip_rate } => {
            if x.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::validation("flip noise needs a 0/1 signal"));
            }
            Ok(perturb(x, |v| if rng.uniform() < flip_rate { 1.0 - v } else { v }))
        }
    }
}
