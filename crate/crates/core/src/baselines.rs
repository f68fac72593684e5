//! Classical denoisers: Laplacian smoothing, trend filtering, spectral
//! soft-thresholding and a graph-agnostic MLP.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gconv::glorot;
use crate::graph::{Graph, Incidence};
use crate::linalg::{Cholesky, Mat, SignalMatrix};
use crate::metrics::nmse;
use crate::rng::CounterRng;
use crate::spectral::SpectralBasis;
use crate::unroll::{soft_threshold, train, LossKind, TrainOptions, TrainReport, TrainableModel};

pub const ALPHA_GRID: [f64; 8] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0];

fn check_rows(op: &'static str, t: &Mat, n: usize) -> Result<()> {
    if t.rows() != n {
        return Err(Error::shape(
            op,
            format!("signal has {} rows for {n} vertices", t.rows()),
        ));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("alpha must be nonnegative, got {alpha}")));
    }
    Ok(())
}

/// Minimizer of `½‖t−x‖² + α xᵀLx`, i.e. the solution of `(I + 2αL)x = t`.
pub fn gld_denoise(t: &SignalMatrix, g: &Graph, alpha: f64) -> Result<SignalMatrix> {
    check_rows("gld_denoise", t, g.n_vertices())?;
    check_alpha(alpha)?;
    let n = g.n_vertices();
    let sys = Mat::identity(n).add(&g.laplacian().scale(2.0 * alpha))?;
    Ok(Cholesky::factor(&sys)?.solve_mat(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmOptions {
    pub rho: f64,
    pub iterations: usize,
    pub tol: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            iterations: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GtfReport {
    pub output: SignalMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// `½‖t−x‖² + α‖Δx‖₁` after each iteration.
    pub objective: Vec<f64>,
}

pub fn gtf_objective(t: &Mat, x: &Mat, inc: &Incidence, alpha: f64) -> Result<f64> {
    let d = inc.apply(x)?;
    Ok(0.5 * t.sub(x)?.frobenius_sq() + alpha * d.data().iter().map(|v| v.abs()).sum::<f64>())
}

/// Trend filtering `min ½‖t−x‖² + α‖Δx‖₁` by ADMM on the split `y = Δx`.
/// Stops when both residuals fall below `tol` or at the iteration cap; in
/// the latter case the iterate with the lowest objective is returned and
/// `converged` is false.
pub fn gtf_denoise(t: &SignalMatrix, inc: &Incidence, alpha: f64, opts: &AdmmOptions) -> Result<GtfReport> {
    check_rows("gtf_denoise", t, inc.n_cols())?;
    check_alpha(alpha)?;
    if !(opts.rho > 0.0) {
        return Err(Error::Config(format!("ADMM rho must be positive, got {}", opts.rho)));
    }
    let n = inc.n_cols();
    let rho = opts.rho;
    let sys = Mat::identity(n).add(&inc.gram().scale(rho))?;
    let chol = Cholesky::factor(&sys)?;
    let k = t.cols();
    let mut x = t.clone();
    let mut y = inc.apply(&x)?;
    let mut u = Mat::zeros(inc.n_rows(), k);
    let mut objective = Vec::with_capacity(opts.iterations);
    let mut best = (f64::INFINITY, x.clone());
    for it in 1..=opts.iterations {
        let rhs = t.add(&inc.apply_transpose(&y.sub(&u)?)?.scale(rho))?;
        x = chol.solve_mat(&rhs);
        let dx = inc.apply(&x)?;
        let y_prev = y;
        y = soft_threshold(&dx.add(&u)?, alpha / rho);
        let r = dx.sub(&y)?;
        u = u.add(&r)?;
        let obj = gtf_objective(t, &x, inc, alpha)?;
        objective.push(obj);
        if obj < best.0 {
            best = (obj, x.clone());
        }
        let primal = r.frobenius();
        let dual = rho * inc.apply_transpose(&y.sub(&y_prev)?)?.frobenius();
        if primal < opts.tol && dual < opts.tol {
            return Ok(GtfReport {
                output: x,
                iterations: it,
                converged: true,
                objective,
            });
        }
    }
    Ok(GtfReport {
        output: best.1,
        iterations: opts.iterations,
        converged: false,
        objective,
    })
}

/// Basis pursuit in an orthonormal graph Fourier basis: `V S_α(Vᵀt)`.
pub fn gft_denoise(t: &SignalMatrix, basis: &SpectralBasis, alpha: f64) -> Result<SignalMatrix> {
    check_rows("gft_denoise", t, basis.dim())?;
    check_alpha(alpha)?;
    let v = basis.eigenvectors();
    let coeffs = v.tmatmul(t)?;
    v.matmul(&soft_threshold(&coeffs, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IstaOptions {
    pub step: f64,
    pub iterations: usize,
    pub tol: f64,
}

impl Default for IstaOptions {
    fn default() -> Self {
        Self {
            step: 1.0,
            iterations: 2000,
            tol: 1e-12,
        }
    }
}

/// ISTA for `min ½‖t − Vc‖² + α‖c‖₁`; returns `Vc`.
pub fn gft_denoise_ista(
    t: &SignalMatrix,
    basis: &SpectralBasis,
    alpha: f64,
    opts: &IstaOptions,
) -> Result<SignalMatrix> {
    check_rows("gft_denoise_ista", t, basis.dim())?;
    check_alpha(alpha)?;
    let v = basis.eigenvectors();
    let mut c = Mat::zeros(v.cols(), t.cols());
    for _ in 0..opts.iterations {
        let resid = t.sub(&v.matmul(&c)?)?;
        let next = soft_threshold(&c.add(&v.tmatmul(&resid)?.scale(opts.step))?, alpha * opts.step);
        let change = next.max_abs_diff(&c);
        c = next;
        if change < opts.tol {
            break;
        }
    }
    v.matmul(&c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub alpha: f64,
    pub nmse: f64,
    pub output: SignalMatrix,
    /// `(alpha, nmse)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Evaluates `denoise` at every grid point and keeps the lowest NMSE
/// against `clean` (first one wins ties).
pub fn grid_search(
    grid: &[f64],
    clean: &SignalMatrix,
    mut denoise: impl FnMut(f64) -> Result<SignalMatrix>,
) -> Result<GridResult> {
    let mut best: Option<GridResult> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let out = denoise(alpha)?;
        let e = nmse(&out, clean)?;
        scores.push((alpha, e));
        if best.as_ref().is_none_or(|b| e < b.nmse) {
            best = Some(GridResult {
                alpha,
                nmse: e,
                output: out,
                scores: Vec::new(),
            });
        }
    }
    let mut best = best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))?;
    best.scores = scores;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpOptions {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpOptions {
    fn default() -> Self {
        Self {
            widths: vec![64, 64],
            epochs: 5000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Fully connected `N → 64 → 64 → N` ReLU network applied to each signal
/// independently of the graph.
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    layers: Vec<(ParamId, ParamId)>,
    n: usize,
    params: ParamStore,
}

impl MlpDenoiser {
    pub fn new(n: usize, opts: &MlpOptions) -> Self {
        let mut rng = CounterRng::new(opts.seed);
        let mut params = ParamStore::new();
        let mut sizes = vec![n];
        sizes.extend(&opts.widths);
        sizes.push(n);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let wid = params.add(format!("mlp.w{k}"), glorot(&mut rng, w[0], w[1]));
                let bid = params.add(format!("mlp.b{k}"), Tensor::vector(vec![0.0; w[1]]));
                (wid, bid)
            })
            .collect();
        Self { layers, n, params }
    }

    pub fn predict(&self, t: &SignalMatrix) -> Result<SignalMatrix> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let tv = tape.constant(t.into());
        let out = TrainableModel::forward(self, &mut tape, &bind, tv)?;
        tape.value(out).to_mat()
    }
}

impl TrainableModel for MlpDenoiser {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, bind: &Binding, t: Var) -> Result<Var> {
        match tape.value(t).dims2() {
            Some((n, _)) if n == self.n => {}
            _ => {
                return Err(Error::shape(
                    "mlp_forward",
                    format!("input {:?} for {} vertices", tape.value(t).shape(), self.n),
                ))
            }
        }
        let mut h = tape.transpose(t)?;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, bind.var(w))?;
            h = tape.add_bias(h, bind.var(b))?;
            if k < last {
                h = tape.relu(h);
            }
        }
        tape.transpose(h)
    }
}

/// Trains a fresh MLP on `t` with the unrolling networks' loss and optimizer.
pub fn mlp_denoise(
    t: &SignalMatrix,
    clean: Option<&SignalMatrix>,
    mlp: &MlpOptions,
    loss: LossKind,
) -> Result<TrainReport> {
    let mut model = MlpDenoiser::new(t.rows(), mlp);
    let opts = TrainOptions {
        epochs: mlp.epochs,
        lr: mlp.lr,
        loss,
        ..TrainOptions::default()
    };
    train(&mut model, t, clean, &opts)
}
