//! Graph convolutions: fixed polynomial filters, trainable multichannel
//! filters and the edge-weight-sharing convolution with its kernel MLP.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var, WeightedMask};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, ShiftPowers};
use crate::linalg::{Mat, SignalMatrix};
use crate::rng::CounterRng;
use crate::sparse::Csr;
use crate::spectral::VertexCoords;

pub const KERNEL_HIDDEN: usize = 32;

/// Fixed polynomial filter coefficients `h_1 … h_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs {
    h: Vec<f64>,
}

impl FilterCoeffs {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::validation("filter needs at least one coefficient"));
        }
        Ok(Self { h })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.h
    }

    pub fn order(&self) -> usize {
        self.h.len()
    }
}

fn check_powers(op: &'static str, powers: &ShiftPowers, order: usize, x: &Mat) -> Result<()> {
    if powers.order() < order {
        return Err(Error::shape(
            op,
            format!("need {order} shift powers, have {}", powers.order()),
        ));
    }
    if x.rows() != powers.n_vertices() {
        return Err(Error::shape(
            op,
            format!("signal has {} rows for {} vertices", x.rows(), powers.n_vertices()),
        ));
    }
    Ok(())
}

/// `Σ_ℓ h_ℓ Aℓ x`.
pub fn fixed_graph_convolution(h: &FilterCoeffs, powers: &ShiftPowers, x: &SignalMatrix) -> Result<SignalMatrix> {
    check_powers("fixed_graph_convolution", powers, h.order(), x)?;
    let mut y = Mat::zeros(x.rows(), x.cols());
    for (ell, &c) in h.coeffs().iter().enumerate() {
        if c != 0.0 {
            y = y.add(&powers.mask(ell + 1).mul_dense(x)?.scale(c))?;
        }
    }
    Ok(y)
}

/// `Σ_ℓ Aℓ X H^(ℓ)` with one `K x K'` matrix per power.
pub fn multichannel_graph_convolution(h: &[Mat], powers: &ShiftPowers, x: &SignalMatrix) -> Result<SignalMatrix> {
    let op = "multichannel_graph_convolution";
    if h.is_empty() {
        return Err(Error::shape(op, "no coefficient matrices"));
    }
    check_powers(op, powers, h.len(), x)?;
    let out = h[0].cols();
    let mut y = Mat::zeros(x.rows(), out);
    for (ell, hl) in h.iter().enumerate() {
        if hl.rows() != x.cols() || hl.cols() != out {
            return Err(Error::shape(
                op,
                format!("H[{ell}] is {}x{}, expected {}x{out}", hl.rows(), hl.cols(), x.cols()),
            ));
        }
        let ax = powers.mask(ell + 1).mul_dense(x)?;
        y = y.add(&ax.matmul(hl)?)?;
    }
    Ok(y)
}

pub(crate) fn glorot(rng: &mut CounterRng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized")
}

/// Edge-weight kernel `ψ_w`: `p → 32 → 32 → out`, tanh hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMlp {
    layers: Vec<(ParamId, ParamId)>,
    in_dim: usize,
    out_dim: usize,
}

impl KernelMlp {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut CounterRng) -> Self {
        let sizes = [in_dim, KERNEL_HIDDEN, KERNEL_HIDDEN, out_dim];
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let wid = store.add(format!("{name}.w{k}"), glorot(rng, w[0], w[1]));
                let bid = store.add(format!("{name}.b{k}"), Tensor::vector(vec![0.0; w[1]]));
                (wid, bid)
            })
            .collect();
        Self {
            layers,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Rows of `input` are coordinate differences; returns one row of
    /// kernel outputs per input row.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, input: Var) -> Result<Var> {
        let mut h = input;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, bind.var(w))?;
            h = tape.add_bias(h, bind.var(b))?;
            if k < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

/// `ψ_w(p_j − p_i)` for every `(i, j)`; one row per pair.
pub fn kernel_edge_weights(
    mlp: &KernelMlp,
    store: &ParamStore,
    coords: &VertexCoords,
    pairs: &[(usize, usize)],
) -> Result<Mat> {
    if coords.dim() != mlp.in_dim() {
        return Err(Error::shape(
            "kernel_edge_weights",
            format!("coordinates of dim {} for kernel input {}", coords.dim(), mlp.in_dim()),
        ));
    }
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let input = tape.constant(coords.differences(pairs).into());
    let out = mlp.forward(&mut tape, &bind, input)?;
    tape.value(out).to_mat()
}

/// Union of the nonzero patterns of `A¹ … A^L` with the coordinate
/// differences of each pair, so every kernel is evaluated once per pair.
#[derive(Debug, Clone)]
pub struct EdgeSupport {
    pairs: Vec<(usize, usize)>,
    diffs: Mat,
    masks: Vec<Arc<WeightedMask>>,
    n_vertices: usize,
}

impl EdgeSupport {
    pub fn new(powers: &ShiftPowers, coords: &VertexCoords) -> Result<Self> {
        Self::build(powers, coords, true)
    }

    /// Support without the `(i, i)` entries, so no output vertex ever
    /// reads its own input.
    pub fn without_diagonal(powers: &ShiftPowers, coords: &VertexCoords) -> Result<Self> {
        Self::build(powers, coords, false)
    }

    fn build(powers: &ShiftPowers, coords: &VertexCoords, keep_diagonal: bool) -> Result<Self> {
        if coords.n_vertices() != powers.n_vertices() {
            return Err(Error::shape(
                "EdgeSupport::new",
                format!(
                    "{} coordinate rows for {} vertices",
                    coords.n_vertices(),
                    powers.n_vertices()
                ),
            ));
        }
        let masks: Vec<Csr> = powers
            .masks()
            .iter()
            .map(|m| {
                if keep_diagonal {
                    return Ok(m.clone());
                }
                let off: Vec<_> = m.triplets().filter(|&(i, j, _)| i != j).collect();
                Csr::from_triplets(m.rows(), m.cols(), &off)
            })
            .collect::<Result<_>>()?;
        let mut pairs: Vec<(usize, usize)> = masks
            .iter()
            .flat_map(|m| m.triplets().map(|(i, j, _)| (i, j)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let masks = masks
            .iter()
            .map(|m| {
                let slot = m
                    .triplets()
                    .map(|(i, j, _)| pairs.binary_search(&(i, j)).expect("pair in union"))
                    .collect();
                WeightedMask::new(m, slot).map(Arc::new)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            diffs: coords.differences(&pairs),
            pairs,
            masks,
            n_vertices: powers.n_vertices(),
        })
    }

    pub fn order(&self) -> usize {
        self.masks.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn coord_dim(&self) -> usize {
        self.diffs.cols()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn diffs(&self) -> &Mat {
        &self.diffs
    }

    /// Mask of `A^ell`, `ell` in `1..=order`.
    pub fn mask(&self, ell: usize) -> &Arc<WeightedMask> {
        &self.masks[ell - 1]
    }

    /// Places the coordinate differences on `tape` as a constant.
    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.constant(self.diffs.clone().into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// One kernel output per `(ℓ, k, k')` and edge.
    Full,
    /// One kernel output per `ℓ` and edge, plus a `K x K'` mixing matrix per `ℓ`.
    Factorized,
}

/// Edge-weight-sharing graph convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EwsConv {
    mode: ConvMode,
    order: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: KernelMlp,
    mixing: Vec<ParamId>,
}

impl EwsConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        mode: ConvMode,
        order: usize,
        in_channels: usize,
        out_channels: usize,
        coord_dim: usize,
        rng: &mut CounterRng,
    ) -> Self {
        let out_dim = match mode {
            ConvMode::Full => order * in_channels * out_channels,
            ConvMode::Factorized => order,
        };
        let kernel = KernelMlp::new(store, &format!("{name}.kernel"), coord_dim, out_dim, rng);
        let mixing = match mode {
            ConvMode::Full => Vec::new(),
            ConvMode::Factorized => (0..order)
                .map(|ell| store.add(format!("{name}.mix{}", ell + 1), glorot(rng, in_channels, out_channels)))
                .collect(),
        };
        Self {
            mode,
            order,
            in_channels,
            out_channels,
            kernel,
            mixing,
        }
    }

    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> &KernelMlp {
        &self.kernel
    }

    /// Mixing matrix `H^(ℓ)` (factorized mode only).
    pub fn mixing(&self, ell: usize) -> Option<ParamId> {
        self.mixing.get(ell - 1).copied()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.kernel.param_ids().chain(self.mixing.iter().copied()).collect()
    }

    /// `N x K` input to `N x K'` output; `diffs` is the support bound on `tape`.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, support: &EdgeSupport, diffs: Var, x: Var) -> Result<Var> {
        let op = "ews_conv";
        if support.order() < self.order {
            return Err(Error::shape(
                op,
                format!("order {} on a support of order {}", self.order, support.order()),
            ));
        }
        match tape.value(x).dims2() {
            Some((n, k)) if n == support.n_vertices() && k == self.in_channels => {}
            _ => {
                return Err(Error::shape(
                    op,
                    format!(
                        "input {:?}, expected {}x{}",
                        tape.value(x).shape(),
                        support.n_vertices(),
                        self.in_channels
                    ),
                ))
            }
        }
        let psi = self.kernel.forward(tape, bind, diffs)?;
        let mut y: Option<Var> = None;
        for ell in 1..=self.order {
            let term = match self.mode {
                ConvMode::Full => {
                    let offset = (ell - 1) * self.in_channels * self.out_channels;
                    tape.edge_mix(support.mask(ell).clone(), psi, offset, x, self.out_channels)?
                }
                ConvMode::Factorized => {
                    let h = bind.var(self.mixing[ell - 1]);
                    if self.out_channels < self.in_channels {
                        let xh = tape.matmul(x, h)?;
                        tape.edge_aggregate(support.mask(ell).clone(), psi, ell - 1, xh)?
                    } else {
                        let ax = tape.edge_aggregate(support.mask(ell).clone(), psi, ell - 1, x)?;
                        tape.matmul(ax, h)?
                    }
                }
            };
            y = Some(match y {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok(y.expect("order >= 1"))
    }

    /// Forward pass outside of training.
    pub fn apply(&self, store: &ParamStore, support: &EdgeSupport, x: &SignalMatrix) -> Result<SignalMatrix> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let diffs = support.bind(&mut tape);
        let xv = tape.constant(x.into());
        let y = self.forward(&mut tape, &bind, support, diffs, xv)?;
        tape.value(y).to_mat()
    }
}

/// Vertex relabeling: vertex `i` becomes vertex `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::validation("permutation is not a bijection"));
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect() }
    }

    pub fn random(n: usize, rng: &mut CounterRng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.perm.len() {
            return Err(Error::shape(
                "permute",
                format!("permutation of {} applied to size {n}", self.perm.len()),
            ));
        }
        Ok(())
    }

    /// `J A Jᵀ`.
    pub fn apply_graph(&self, g: &Graph) -> Result<Graph> {
        self.check(g.n_vertices())?;
        let edges: Vec<Edge> = g
            .edges()
            .iter()
            .map(|e| Edge {
                i: self.perm[e.i],
                j: self.perm[e.j],
                w: e.w,
            })
            .collect();
        Ok(Graph::from_edges(g.n_vertices(), &edges)?.with_norm_scale(g.norm_scale()))
    }

    /// `J X`.
    pub fn apply_rows(&self, x: &Mat) -> Result<Mat> {
        self.check(x.rows())?;
        let mut out = Mat::zeros(x.rows(), x.cols());
        for (i, &p) in self.perm.iter().enumerate() {
            out.row_mut(p).copy_from_slice(x.row(i));
        }
        Ok(out)
    }

    pub fn apply_coords(&self, coords: &VertexCoords) -> Result<VertexCoords> {
        Ok(VertexCoords::from_matrix(self.apply_rows(coords.matrix())?))
    }
}
