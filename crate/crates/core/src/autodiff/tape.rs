//! Computation graph recorded in creation order; backward walks it in
//! reverse, which is a valid reverse topological order.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linalg::gemm_acc;
use crate::sparse::Csr;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse `rows x cols` mask whose entry `p` is `values[p]` scaled by a
/// trainable multiplier drawn from row `slot[p]` of a weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMask {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    slot: Vec<usize>,
}

impl WeightedMask {
    pub fn new(pattern: &Csr, slot: Vec<usize>) -> Result<Self> {
        if slot.len() != pattern.nnz() {
            return Err(Error::shape(
                "WeightedMask::new",
                format!("{} slots for {} entries", slot.len(), pattern.nnz()),
            ));
        }
        Ok(Self {
            rows: pattern.rows(),
            cols: pattern.cols(),
            indptr: pattern.indptr().to_vec(),
            indices: pattern.indices().to_vec(),
            values: pattern.values().to_vec(),
            slot,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_slot(&self) -> Option<usize> {
        self.slot.iter().copied().max()
    }

    /// `(row, col, value, slot)` for every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64, usize)> + '_ {
        (0..self.rows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |p| (i, self.indices[p], self.values[p], self.slot[p]))
        })
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftThreshold(Var, Var),
    Column(Var, usize),
    Transpose(Var),
    Sum(Var),
    FrobeniusSq(Var),
    BinaryCrossEntropy(Var, Arc<Tensor>),
    SparseMatMul(Arc<Csr>, Var, bool),
    EdgeAggregate {
        mask: Arc<WeightedMask>,
        weights: Var,
        column: usize,
        x: Var,
    },
    EdgeMix {
        mask: Arc<WeightedMask>,
        weights: Var,
        offset: usize,
        x: Var,
        out_channels: usize,
    },
}

/// One node of the computation graph.
#[derive(Debug, Clone)]
struct DiffNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
    grads: Vec<Option<Tensor>>,
    thresholds: Vec<Vec<bool>>,
}

const BCE_EPS: f64 = 1e-12;

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(DiffNode {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient; zeros if nothing flowed into `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros_like(&self.nodes[v.0].value))
    }

    /// Active/inactive pattern (`|x| > α`) of every soft-threshold evaluated
    /// so far, in evaluation order.
    pub fn soft_threshold_patterns(&self) -> &[Vec<bool>] {
        &self.thresholds
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let mut v = self.value(a).clone();
        for (x, y) in v.data_mut().iter_mut().zip(self.value(b).data()) {
            *x -= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Adds a length-`C` bias to every row of an `R x C` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, c) = dims2(self.value(a), "add_bias")?;
        if self.value(bias).numel() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias of {} values for {c} columns", self.value(bias).numel()),
            ));
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in v.data_mut().chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(v, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x *= s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x = f(*x));
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Entrywise shrinkage by the scalar `alpha`; derivative 1 outside the
    /// dead zone `|x| <= α` and 0 inside.
    pub fn soft_threshold(&mut self, a: Var, alpha: Var) -> Result<Var> {
        if !self.value(alpha).is_scalar() {
            return Err(Error::shape("soft_threshold", "threshold must be a scalar"));
        }
        let t = self.value(alpha).item();
        let mut v = self.value(a).clone();
        let mut pattern = Vec::with_capacity(v.numel());
        for x in v.data_mut() {
            let active = x.abs() > t;
            pattern.push(active);
            *x = soft_threshold_scalar(*x, t);
        }
        self.thresholds.push(pattern);
        let rg = self.rg(a) || self.rg(alpha);
        Ok(self.push(v, Op::SoftThreshold(a, alpha), rg))
    }

    /// Column `j` of a matrix as an `R x 1` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(a), "column")?;
        if j >= c {
            return Err(Error::shape("column", format!("column {j} of {c}")));
        }
        let d = self.value(a).data();
        let v: Vec<f64> = (0..r).map(|i| d[i * c + j]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, 1, v)?, Op::Column(a, j), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let m = self
            .value(a)
            .to_mat()
            .map_err(|_| Error::shape("transpose", format!("shape {:?}", self.value(a).shape())))?;
        let rg = self.rg(a);
        Ok(self.push(m.transpose().into(), Op::Transpose(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::FrobeniusSq(a), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets.
    pub fn binary_cross_entropy(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        if self.value(p).shape() != target.shape() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{:?} vs {:?}", self.value(p).shape(), target.shape()),
            ));
        }
        let n = target.numel() as f64;
        let s: f64 = self
            .value(p)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&q, &t)| {
                let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum();
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::BinaryCrossEntropy(p, Arc::new(target.clone())),
            rg,
        ))
    }

    /// `M·x` (or `Mᵀ·x` when `transpose`) for a constant sparse `M`.
    pub fn sparse_matmul(&mut self, m: Arc<Csr>, x: Var, transpose: bool) -> Result<Var> {
        let xm = self
            .value(x)
            .to_mat()
            .map_err(|_| Error::shape("sparse_matmul", format!("shape {:?}", self.value(x).shape())))?;
        let out = if transpose {
            m.tmul_dense(&xm)?
        } else {
            m.mul_dense(&xm)?
        };
        let rg = self.rg(x);
        Ok(self.push(out.into(), Op::SparseMatMul(m, x, transpose), rg))
    }

    /// `(Ψ ⊙ M)·X` with `Ψ[i,j] = weights[slot(i,j), column]`.
    pub fn edge_aggregate(&mut self, mask: Arc<WeightedMask>, weights: Var, column: usize, x: Var) -> Result<Var> {
        let (u, c) = dims2(self.value(weights), "edge_aggregate")?;
        let (n, k) = dims2(self.value(x), "edge_aggregate")?;
        if n != mask.cols || column >= c || mask.max_slot().is_some_and(|s| s >= u) {
            return Err(Error::shape(
                "edge_aggregate",
                format!(
                    "mask {}x{}, weights {u}x{c} (column {column}), input {n}x{k}",
                    mask.rows, mask.cols
                ),
            ));
        }
        let w = self.value(weights).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; mask.rows * k];
        for i in 0..mask.rows {
            let oi = &mut out[i * k..(i + 1) * k];
            for p in mask.indptr[i]..mask.indptr[i + 1] {
                let coef = mask.values[p] * w[mask.slot[p] * c + column];
                let xj = &xd[mask.indices[p] * k..(mask.indices[p] + 1) * k];
                for (o, xv) in oi.iter_mut().zip(xj) {
                    *o += coef * xv;
                }
            }
        }
        let rg = self.rg(weights) || self.rg(x);
        Ok(self.push(
            Tensor::matrix(mask.rows, k, out)?,
            Op::EdgeAggregate {
                mask,
                weights,
                column,
                x,
            },
            rg,
        ))
    }

    /// Per-entry channel mixing: `Y[i,k'] = Σ_(i,j) M[i,j] Σ_k W_e[k,k'] X[j,k]`
    /// with `W_e[k,k'] = weights[slot(i,j), offset + k·K' + k']`.
    pub fn edge_mix(
        &mut self,
        mask: Arc<WeightedMask>,
        weights: Var,
        offset: usize,
        x: Var,
        out_channels: usize,
    ) -> Result<Var> {
        let (u, c) = dims2(self.value(weights), "edge_mix")?;
        let (n, k) = dims2(self.value(x), "edge_mix")?;
        let kk = out_channels;
        if n != mask.cols || offset + k * kk > c || mask.max_slot().is_some_and(|s| s >= u) {
            return Err(Error::shape(
                "edge_mix",
                format!(
                    "mask {}x{}, weights {u}x{c} (offset {offset}), input {n}x{k}, {kk} outputs",
                    mask.rows, mask.cols
                ),
            ));
        }
        let w = self.value(weights).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; mask.rows * kk];
        for i in 0..mask.rows {
            for p in mask.indptr[i]..mask.indptr[i + 1] {
                let a = mask.values[p];
                let we = &w[mask.slot[p] * c + offset..mask.slot[p] * c + offset + k * kk];
                let xj = &xd[mask.indices[p] * k..(mask.indices[p] + 1) * k];
                let oi = &mut out[i * kk..(i + 1) * kk];
                for (kin, &xv) in xj.iter().enumerate() {
                    let s = a * xv;
                    for (o, wv) in oi.iter_mut().zip(&we[kin * kk..(kin + 1) * kk]) {
                        *o += s * wv;
                    }
                }
            }
        }
        let rg = self.rg(weights) || self.rg(x);
        Ok(self.push(
            Tensor::matrix(mask.rows, kk, out)?,
            Op::EdgeMix {
                mask,
                weights,
                offset,
                x,
                out_channels,
            },
            rg,
        ))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate across
    /// fan-out; calling twice doubles them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        self.accumulate(root, Tensor::scalar(1.0).reshaped_like(self.value(root)));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.vjp(idx, &g)?;
            self.grads[idx] = Some(g);
            for (v, cg) in contributions {
                self.accumulate(v, cg);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn vjp(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let (_, n) = val(*b).dims2().unwrap();
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let bd = val(*b).data();
                    let gd = g.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &gd[i * n..(i + 1) * n];
                        let dai = &mut da[i * k..(i + 1) * k];
                        for (p, d) in dai.iter_mut().enumerate() {
                            let bp = &bd[p * n..(p + 1) * n];
                            *d = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
                        }
                    }
                    out.push((*a, Tensor::matrix(m, k, da)?));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let ad = val(*a).data();
                    let gd = g.data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = &gd[i * n..(i + 1) * n];
                        for (p, &aip) in ad[i * k..(i + 1) * k].iter().enumerate() {
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += aip * gv;
                            }
                        }
                    }
                    out.push((*b, Tensor::matrix(k, n, db)?));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                let mut ng = g.clone();
                ng.data_mut().iter_mut().for_each(|x| *x = -*x);
                out.push((*b, ng));
            }
            Op::AddBias(a, bias) => {
                out.push((*a, g.clone()));
                if self.rg(*bias) {
                    let c = val(*bias).numel();
                    let mut db = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    out.push((*bias, Tensor::new(val(*bias).shape().to_vec(), db)?));
                }
            }
            Op::Scale(a, s) => {
                let mut ng = g.clone();
                ng.data_mut().iter_mut().for_each(|x| *x *= s);
                out.push((*a, ng));
            }
            Op::Tanh(a) => {
                let mut ng = g.clone();
                for (d, y) in ng.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= 1.0 - y * y;
                }
                out.push((*a, ng));
            }
            Op::Relu(a) => {
                let mut ng = g.clone();
                for (d, x) in ng.data_mut().iter_mut().zip(val(*a).data()) {
                    if *x <= 0.0 {
                        *d = 0.0;
                    }
                }
                out.push((*a, ng));
            }
            Op::Sigmoid(a) => {
                let mut ng = g.clone();
                for (d, y) in ng.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= y * (1.0 - y);
                }
                out.push((*a, ng));
            }
            Op::SoftThreshold(a, alpha) => {
                let t = val(*alpha).item();
                let x = val(*a).data();
                let mut ng = g.clone();
                let mut dalpha = 0.0;
                for (d, &xv) in ng.data_mut().iter_mut().zip(x) {
                    if xv.abs() > t {
                        dalpha -= *d * xv.signum();
                    } else {
                        *d = 0.0;
                    }
                }
                out.push((*a, ng));
                if self.rg(*alpha) {
                    let mut ga = Tensor::zeros_like(val(*alpha));
                    ga.data_mut()[0] = dalpha;
                    out.push((*alpha, ga));
                }
            }
            Op::Column(a, j) => {
                let (r, c) = val(*a).dims2().unwrap();
                let mut da = vec![0.0; r * c];
                for (i, gv) in g.data().iter().enumerate() {
                    da[i * c + j] = *gv;
                }
                out.push((*a, Tensor::matrix(r, c, da)?));
            }
            Op::Transpose(a) => {
                out.push((*a, g.to_mat()?.transpose().into()));
            }
            Op::Sum(a) => {
                let gv = g.item();
                let shape = val(*a).shape().to_vec();
                let n = val(*a).numel();
                out.push((*a, Tensor::new(shape, vec![gv; n])?));
            }
            Op::FrobeniusSq(a) => {
                let gv = g.item();
                let mut da = val(*a).clone();
                da.data_mut().iter_mut().for_each(|x| *x *= 2.0 * gv);
                out.push((*a, da));
            }
            Op::BinaryCrossEntropy(p, target) => {
                let gv = g.item();
                let n = target.numel() as f64;
                let mut dp = val(*p).clone();
                for (d, &t) in dp.data_mut().iter_mut().zip(target.data()) {
                    let raw = *d;
                    *d = if raw <= BCE_EPS || raw >= 1.0 - BCE_EPS {
                        0.0
                    } else {
                        gv * (-(t / raw) + (1.0 - t) / (1.0 - raw)) / n
                    };
                }
                out.push((*p, dp));
            }
            Op::SparseMatMul(m, x, transpose) => {
                let gm = g.to_mat()?;
                let dx = if *transpose {
                    m.mul_dense(&gm)?
                } else {
                    m.tmul_dense(&gm)?
                };
                out.push((*x, dx.into()));
            }
            Op::EdgeAggregate {
                mask,
                weights,
                column,
                x,
            } => {
                let (u, c) = val(*weights).dims2().unwrap();
                let (n, k) = val(*x).dims2().unwrap();
                let w = val(*weights).data();
                let xd = val(*x).data();
                let gd = g.data();
                let need_w = self.rg(*weights);
                let need_x = self.rg(*x);
                let mut dw = if need_w { vec![0.0; u * c] } else { Vec::new() };
                let mut dx = if need_x { vec![0.0; n * k] } else { Vec::new() };
                for i in 0..mask.rows {
                    let gi = &gd[i * k..(i + 1) * k];
                    for p in mask.indptr[i]..mask.indptr[i + 1] {
                        let j = mask.indices[p];
                        let s = mask.slot[p] * c + column;
                        if need_w {
                            let xj = &xd[j * k..(j + 1) * k];
                            let dot: f64 = gi.iter().zip(xj).map(|(a, b)| a * b).sum();
                            dw[s] += mask.values[p] * dot;
                        }
                        if need_x {
                            let coef = mask.values[p] * w[s];
                            for (d, gv) in dx[j * k..(j + 1) * k].iter_mut().zip(gi) {
                                *d += coef * gv;
                            }
                        }
                    }
                }
                if need_w {
                    out.push((*weights, Tensor::matrix(u, c, dw)?));
                }
                if need_x {
                    out.push((*x, Tensor::matrix(n, k, dx)?));
                }
            }
            Op::EdgeMix {
                mask,
                weights,
                offset,
                x,
                out_channels,
            } => {
                let (u, c) = val(*weights).dims2().unwrap();
                let (n, k) = val(*x).dims2().unwrap();
                let kk = *out_channels;
                let w = val(*weights).data();
                let xd = val(*x).data();
                let gd = g.data();
                let need_w = self.rg(*weights);
                let need_x = self.rg(*x);
                let mut dw = if need_w { vec![0.0; u * c] } else { Vec::new() };
                let mut dx = if need_x { vec![0.0; n * k] } else { Vec::new() };
                for i in 0..mask.rows {
                    let gi = &gd[i * kk..(i + 1) * kk];
                    for p in mask.indptr[i]..mask.indptr[i + 1] {
                        let a = mask.values[p];
                        let j = mask.indices[p];
                        let base = mask.slot[p] * c + offset;
                        for kin in 0..k {
                            let wrow = base + kin * kk;
                            if need_w {
                                let s = a * xd[j * k + kin];
                                for (d, gv) in dw[wrow..wrow + kk].iter_mut().zip(gi) {
                                    *d += s * gv;
                                }
                            }
                            if need_x {
                                let dot: f64 = w[wrow..wrow + kk].iter().zip(gi).map(|(x, y)| x * y).sum();
                                dx[j * k + kin] += a * dot;
                            }
                        }
                    }
                }
                if need_w {
                    out.push((*weights, Tensor::matrix(u, c, dw)?));
                }
                if need_x {
                    out.push((*x, Tensor::matrix(n, k, dx)?));
                }
            }
        }
        Ok(out)
    }
}

impl Tensor {
    fn reshaped_like(self, other: &Tensor) -> Tensor {
        Tensor::new(other.shape().to_vec(), self.into_data()).expect("same element count")
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x − α` above, `x + α` below, 0 on `[−α, α]`.
#[inline]
pub fn soft_threshold_scalar(x: f64, alpha: f64) -> f64 {
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = CounterRng::new(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn frobenius_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let y = tape.frobenius_sq(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = tape.sum(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, -3.0]));
        let s = tape.add(a, a).unwrap();
        let y = tape.frobenius_sq(s);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(a).data(), &[8.0, -24.0]);
    }

    #[test]
    fn soft_threshold_dead_zone() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.03, 0.15, -0.20]));
        let alpha = tape.constant(Tensor::scalar(0.05));
        let y = tape.soft_threshold(x, alpha).unwrap();
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.10).abs() < 1e-15 && (v[2] + 0.15).abs() < 1e-15);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 1.0, 1.0]);
        assert_eq!(tape.soft_threshold_patterns()[0], vec![false, true, true]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.param(rand_tensor(2, 3, 1));
        let b = tape.param(rand_tensor(2, 3, 2));
        match tape.matmul(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn central_difference(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
        (0..x.numel())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a0 = rand_tensor(4, 5, 3);
        let b0 = rand_tensor(5, 3, 4);
        let w = rand_tensor(4, 3, 5);
        let loss = |a: &Tensor, b: &Tensor| {
            let mut tape = Tape::new();
            let av = tape.param(a.clone());
            let bv = tape.param(b.clone());
            let wv = tape.constant(w.clone());
            let c = tape.matmul(av, bv).unwrap();
            let d = tape.sub(c, wv).unwrap();
            let l = tape.frobenius_sq(d);
            tape.backward(l).unwrap();
            (tape.value(l).item(), tape.grad(av), tape.grad(bv))
        };
        let (_, ga, gb) = loss(&a0, &b0);
        let na = central_difference(&|a| loss(a, &b0).0, &a0, 1e-6);
        let nb = central_difference(&|b| loss(&a0, b).0, &b0, 1e-6);
        for (x, y) in ga.data().iter().zip(&na).chain(gb.data().iter().zip(&nb)) {
            assert!(rel_err(*x, *y) < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x0 = rand_tensor(3, 4, 9);
        let bias = rand_tensor(1, 4, 10);
        let target = Tensor::matrix(3, 4, (0..12).map(|i| (i % 2) as f64).collect()).unwrap();
        let f = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let b = tape.constant(bias.clone());
            let h = tape.add_bias(xv, b).unwrap();
            let t = tape.tanh(h);
            let r = tape.relu(xv);
            let s = tape.add(t, r).unwrap();
            let s = tape.scale(s, 0.7);
            let p = tape.sigmoid(s);
            let l = tape.binary_cross_entropy(p, &target).unwrap();
            tape.backward(l).unwrap();
            (tape.value(l).item(), tape.grad(xv))
        };
        let (_, g) = f(&x0);
        let num = central_difference(&|x| f(x).0, &x0, 1e-6);
        for (a, b) in g.data().iter().zip(&num) {
            assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn edge_ops_match_finite_differences() {
        let pattern = Csr::from_triplets(
            3,
            3,
            &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.25), (2, 1, 0.25), (1, 1, 0.3)],
        )
        .unwrap();
        let mask = Arc::new(WeightedMask::new(&pattern, vec![0, 1, 2, 3, 4]).unwrap());
        let w0 = rand_tensor(5, 6, 21);
        let x0 = rand_tensor(3, 2, 22);
        let f = |w: &Tensor, x: &Tensor| {
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let xv = tape.param(x.clone());
            let a = tape.edge_aggregate(mask.clone(), wv, 1, xv).unwrap();
            let m = tape.edge_mix(mask.clone(), wv, 2, xv, 2).unwrap();
            let s = tape.add(a, m).unwrap();
            let t = tape.tanh(s);
            let l = tape.frobenius_sq(t);
            tape.backward(l).unwrap();
            (tape.value(l).item(), tape.grad(wv), tape.grad(xv))
        };
        let (_, gw, gx) = f(&w0, &x0);
        let nw = central_difference(&|w| f(w, &x0).0, &w0, 1e-6);
        let nx = central_difference(&|x| f(&w0, x).0, &x0, 1e-6);
        for (a, b) in gw.data().iter().zip(&nw).chain(gx.data().iter().zip(&nx)) {
            assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
        }
    }
}
