//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use graph_unroll::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use graph_unroll::graph::shift_powers;
use graph_unroll::graph::{normalize_adjacency, Edge};
use graph_unroll::spectral::{adjacency_basis, vertex_coordinates};
use graph_unroll::unroll::{GraphContext, TrainableModel};
use graph_unroll::{CounterRng, EdgeSupport, EwsConv, Graph, KernelMlp, Mat, Result, VertexCoords};

/// Connected random graph: a random spanning path plus Erdős–Rényi edges
/// with probability `p`, random weights in `[0.5, 1.5]`, normalized.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = CounterRng::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut edges = Vec::new();
    for w in order.windows(2) {
        let (i, j) = (w[0].min(w[1]), w[0].max(w[1]));
        edges.push(Edge {
            i,
            j,
            w: rng.uniform_range(0.5, 1.5),
        });
    }
    for i in 0..n {
        for j in i + 1..n {
            let linked = edges.iter().any(|e| (e.i, e.j) == (i, j));
            if !linked && rng.uniform() < p {
                edges.push(Edge {
                    i,
                    j,
                    w: rng.uniform_range(0.5, 1.5),
                });
            }
        }
    }
    normalize_adjacency(&Graph::from_edges(n, &edges).unwrap()).unwrap()
}

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = CounterRng::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn coords_of(g: &Graph, p: usize) -> VertexCoords {
    vertex_coordinates(&adjacency_basis(g).unwrap(), p).unwrap()
}

pub fn context(g: &Graph, order: usize, p: usize) -> Arc<GraphContext> {
    let basis = adjacency_basis(g).unwrap();
    Arc::new(GraphContext::new(g, &basis, order, p, false).unwrap())
}

/// Kernel MLP evaluated on the coordinate differences of a support,
/// wrapped as a model so the generic gradient check applies.
#[derive(Clone)]
pub struct KernelModel {
    pub store: ParamStore,
    pub mlp: KernelMlp,
    pub diffs: Mat,
}

impl TrainableModel for KernelModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn forward(&self, tape: &mut Tape, bind: &Binding, _t: Var) -> Result<Var> {
        let d = tape.constant(self.diffs.clone().into());
        self.mlp.forward(tape, bind, d)
    }
}

/// One EWS-GC layer as a model.
#[derive(Clone)]
pub struct ConvModel {
    pub store: ParamStore,
    pub conv: EwsConv,
    pub support: Arc<EdgeSupport>,
    pub input: Mat,
}

impl TrainableModel for ConvModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn forward(&self, tape: &mut Tape, bind: &Binding, _t: Var) -> Result<Var> {
        let diffs = self.support.bind(tape);
        let x = tape.constant(self.input.clone().into());
        self.conv.forward(tape, bind, &self.support, diffs, x)
    }
}

pub fn conv_model(
    g: &Graph,
    mode: graph_unroll::ConvMode,
    order: usize,
    k_in: usize,
    k_out: usize,
    seed: u64,
) -> ConvModel {
    let coords = coords_of(g, 4);
    let support = Arc::new(EdgeSupport::new(&shift_powers(g, order).unwrap(), &coords).unwrap());
    let mut store = ParamStore::new();
    let conv = EwsConv::new(
        &mut store,
        "conv",
        mode,
        order,
        k_in,
        k_out,
        4,
        &mut CounterRng::new(seed),
    );
    ConvModel {
        store,
        conv,
        support,
        input: random_mat(g.n_vertices(), k_in, seed + 1),
    }
}

/// `‖f(t) − target‖²` plus the soft-threshold activity patterns of the
/// pass, and gradients when asked.
pub fn frobenius_loss<M: TrainableModel>(
    model: &M,
    t: &Mat,
    target: &Mat,
    grads: bool,
) -> (f64, Vec<Tensor>, Vec<Vec<bool>>) {
    let mut tape = Tape::new();
    let bind = model.params().bind(&mut tape);
    let tv = tape.constant(t.into());
    let out = model.forward(&mut tape, &bind, tv).unwrap();
    let target = tape.constant(target.into());
    let diff = tape.sub(out, target).unwrap();
    let loss = tape.frobenius_sq(diff);
    let value = tape.value(loss).item();
    let g = if grads {
        tape.backward(loss).unwrap();
        bind.grads(&tape)
    } else {
        Vec::new()
    };
    (value, g, tape.soft_threshold_patterns().to_vec())
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest per-tensor `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a soft-threshold branch.
    pub skipped: usize,
}

/// Central differences with step `h` on up to `per_tensor` random entries
/// of every trainable tensor.
pub fn grad_check<M: TrainableModel + Clone>(
    model: &M,
    t: &Mat,
    target: &Mat,
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> GradCheck {
    let (_, analytic, base_pattern) = frobenius_loss(model, t, target, true);
    let mut rng = CounterRng::new(seed);
    let mut report = GradCheck {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    let ids: Vec<_> = model.params().ids().collect();
    for (slot, &id) in ids.iter().enumerate() {
        if !model.params().is_trainable(id) {
            continue;
        }
        let numel = model.params().get(id).numel();
        let mut picks: Vec<usize> = (0..numel).collect();
        rng.shuffle(&mut picks);
        picks.truncate(per_tensor);
        let (mut num_sq, mut ana_sq, mut diff_sq) = (0.0, 0.0, 0.0);
        for &e in &picks {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut().get_mut(id).data_mut()[e] += delta;
                frobenius_loss(&m, t, target, false)
            };
            let (plus, _, pp) = eval(h);
            let (minus, _, pm) = eval(-h);
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[slot].data()[e];
            num_sq += numeric * numeric;
            ana_sq += a * a;
            diff_sq += (a - numeric) * (a - numeric);
            report.checked += 1;
        }
        let scale = num_sq.max(ana_sq).sqrt();
        if scale > 0.0 {
            report.max_rel = report.max_rel.max(diff_sq.sqrt() / scale);
        }
    }
    report
}

pub fn column_variance(x: &Mat, j: usize) -> f64 {
    let col = x.column(j);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Singular values, descending (nalgebra SVD as an independent oracle).
pub fn singular_values(x: &Mat) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(x.rows(), x.cols(), x.data());
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn to_nalgebra(x: &Mat) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(x.rows(), x.cols(), x.data())
}
