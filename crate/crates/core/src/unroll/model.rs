//! Unrolling layers and the GUSC / GUTF networks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gconv::{ConvMode, EdgeSupport, EwsConv};
use crate::graph::{incidence_matrix, shift_powers, Graph, ShiftPowers};
use crate::linalg::SignalMatrix;
use crate::rng::CounterRng;
use crate::sparse::Csr;
use crate::spectral::{vertex_coordinates, SpectralBasis, VertexCoords};

/// Everything a network needs to know about the graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    powers: ShiftPowers,
    coords: VertexCoords,
    support: EdgeSupport,
    incidence: Arc<Csr>,
    keep_diagonal: bool,
}

impl GraphContext {
    /// `g` must be normalized; `basis` is its adjacency eigenbasis. With
    /// `keep_diagonal` false the convolutions skip the `(i, i)` entries of
    /// the shift powers.
    pub fn new(g: &Graph, basis: &SpectralBasis, order: usize, coord_dim: usize, keep_diagonal: bool) -> Result<Self> {
        let powers = shift_powers(g, order)?;
        let coords = vertex_coordinates(basis, coord_dim.min(g.n_vertices()))?;
        let incidence = Arc::new(incidence_matrix(g).matrix().clone());
        Self::from_parts(powers, coords, incidence, keep_diagonal)
    }

    pub fn from_parts(
        powers: ShiftPowers,
        coords: VertexCoords,
        incidence: Arc<Csr>,
        keep_diagonal: bool,
    ) -> Result<Self> {
        let support = if keep_diagonal {
            EdgeSupport::new(&powers, &coords)?
        } else {
            EdgeSupport::without_diagonal(&powers, &coords)?
        };
        if incidence.cols() != powers.n_vertices() {
            return Err(Error::shape(
                "GraphContext",
                format!(
                    "incidence has {} columns for {} vertices",
                    incidence.cols(),
                    powers.n_vertices()
                ),
            ));
        }
        Ok(Self {
            powers,
            coords,
            support,
            incidence,
            keep_diagonal,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.powers.n_vertices()
    }

    pub fn order(&self) -> usize {
        self.powers.order()
    }

    pub fn powers(&self) -> &ShiftPowers {
        &self.powers
    }

    pub fn coords(&self) -> &VertexCoords {
        &self.coords
    }

    pub fn support(&self) -> &EdgeSupport {
        &self.support
    }

    pub fn incidence(&self) -> &Arc<Csr> {
        &self.incidence
    }

    pub fn keeps_diagonal(&self) -> bool {
        self.keep_diagonal
    }
}

#[derive(Debug, Clone)]
pub enum LayerOperator {
    Identity,
    Matrix(Arc<Csr>),
}

impl LayerOperator {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            LayerOperator::Identity => Ok(x),
            LayerOperator::Matrix(m) => tape.sparse_matmul(m.clone(), x, false),
        }
    }

    fn apply_transpose(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        match self {
            LayerOperator::Identity => Ok(y),
            LayerOperator::Matrix(m) => tape.sparse_matmul(m.clone(), y, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prox {
    Identity,
    SoftThreshold,
}

/// Layer state. `None` marks a block that is exactly zero, which lets
/// convolutions of it be skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerState {
    pub x: Option<Var>,
    pub s: Option<Var>,
    pub y: Option<Var>,
    pub z: Option<Var>,
}

/// `X ← 𝔸S + 𝔹T + ℂPᵀY;  S ← 𝔻X + 𝔼QᵀZ;  Y ← prox_u(PX);  Z ← prox_r(QS)`.
/// A missing convolution contributes zero.
#[derive(Debug, Clone)]
pub struct UnrollLayer {
    pub a: Option<EwsConv>,
    pub b: Option<EwsConv>,
    pub c: Option<EwsConv>,
    pub d: Option<EwsConv>,
    pub e: Option<EwsConv>,
    pub p: LayerOperator,
    pub q: LayerOperator,
    pub prox_u: Prox,
    pub prox_r: Prox,
}

fn sum_terms(tape: &mut Tape, terms: Vec<Var>) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => tape.add(a, t)?,
        });
    }
    Ok(acc)
}

fn apply_prox(tape: &mut Tape, kind: Prox, v: Var, alpha: Var) -> Result<Var> {
    match kind {
        Prox::Identity => Ok(v),
        Prox::SoftThreshold => tape.soft_threshold(v, alpha),
    }
}

pub(crate) struct Env<'a> {
    pub bind: &'a Binding,
    pub support: &'a EdgeSupport,
    pub diffs: Var,
}

impl UnrollLayer {
    fn conv(conv: &Option<EwsConv>, tape: &mut Tape, env: &Env, input: Option<Var>) -> Result<Option<Var>> {
        match (conv, input) {
            (Some(c), Some(x)) => Ok(Some(c.forward(tape, env.bind, env.support, env.diffs, x)?)),
            _ => Ok(None),
        }
    }

    pub(crate) fn forward_env(
        &self,
        tape: &mut Tape,
        env: &Env,
        t: Var,
        alpha: Var,
        state: &LayerState,
    ) -> Result<LayerState> {
        let pty = match state.y {
            Some(y) if self.c.is_some() => Some(self.p.apply_transpose(tape, y)?),
            _ => None,
        };
        let terms: Vec<Var> = [
            Self::conv(&self.a, tape, env, state.s)?,
            Self::conv(&self.b, tape, env, Some(t))?,
            Self::conv(&self.c, tape, env, pty)?,
        ]
        .into_iter()
        .flatten()
        .collect();
        let x = sum_terms(tape, terms)?;

        let qtz = match state.z {
            Some(z) if self.e.is_some() => Some(self.q.apply_transpose(tape, z)?),
            _ => None,
        };
        let terms: Vec<Var> = [Self::conv(&self.d, tape, env, x)?, Self::conv(&self.e, tape, env, qtz)?]
            .into_iter()
            .flatten()
            .collect();
        let s = sum_terms(tape, terms)?;

        // Only materialize the auxiliaries a layer of this shape consumes;
        // the soft-threshold maps exact zeros to zero.
        let y = match x {
            Some(x) if self.c.is_some() => {
                let px = self.p.apply(tape, x)?;
                Some(apply_prox(tape, self.prox_u, px, alpha)?)
            }
            _ => None,
        };
        let z = match s {
            Some(s) if self.e.is_some() => {
                let qs = self.q.apply(tape, s)?;
                Some(apply_prox(tape, self.prox_r, qs, alpha)?)
            }
            _ => None,
        };
        Ok(LayerState { x, s, y, z })
    }

    /// One layer on an existing tape.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        support: &EdgeSupport,
        diffs: Var,
        t: Var,
        alpha: Var,
        state: &LayerState,
    ) -> Result<LayerState> {
        self.forward_env(tape, &Env { bind, support, diffs }, t, alpha, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gusc,
    Gutf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Frobenius,
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnrollConfig {
    /// Number of unrolled layers `B`.
    pub layers: usize,
    /// Width `d` of `X` (GUSC only; GUTF keeps the signal count).
    pub hidden: usize,
    /// Width `D` of `S`.
    pub code: usize,
    pub alpha: f64,
    pub trainable_alpha: bool,
    pub epochs: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub mode: ConvMode,
    /// Polynomial order `L` of every convolution.
    pub order: usize,
    /// Vertex coordinate dimension `p`.
    pub coord_dim: usize,
    /// Let `A^ℓ` diagonal entries (closed walks) into the convolutions.
    pub keep_diagonal: bool,
    pub log_every: usize,
}

pub const DEFAULT_ORDER: usize = 1;

impl Default for UnrollConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            hidden: 64,
            code: 64,
            alpha: 0.05,
            trainable_alpha: false,
            epochs: 5000,
            lr: 1e-3,
            loss: LossKind::Frobenius,
            seed: 0,
            mode: ConvMode::Factorized,
            order: DEFAULT_ORDER,
            coord_dim: crate::spectral::DEFAULT_COORD_DIM,
            keep_diagonal: false,
            log_every: 10,
        }
    }
}

impl UnrollConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        if self.hidden < 1 || self.code < 1 || self.order < 1 || self.coord_dim < 1 {
            return Err(Error::Config(
                "widths, order and coordinate dimension must be at least 1".into(),
            ));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// A trained or freshly initialized GUSC / GUTF network.
#[derive(Debug, Clone)]
pub struct UnrollNet {
    arch: Architecture,
    layers: Vec<UnrollLayer>,
    head: Option<EwsConv>,
    alpha: ParamId,
    channels: usize,
    params: ParamStore,
    ctx: Arc<GraphContext>,
}

impl UnrollNet {
    pub fn new(arch: Architecture, channels: usize, ctx: Arc<GraphContext>, cfg: &UnrollConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.order > ctx.order() {
            return Err(Error::Config(format!(
                "order {} exceeds the {} shift powers of the context",
                cfg.order,
                ctx.order()
            )));
        }
        if cfg.keep_diagonal != ctx.keeps_diagonal() {
            return Err(Error::Config(format!(
                "network wants keep_diagonal={} but the context was built with {}",
                cfg.keep_diagonal,
                ctx.keeps_diagonal()
            )));
        }
        let mut rng = CounterRng::new(cfg.seed);
        let mut params = ParamStore::new();
        let p = ctx.coords().dim();
        let mut conv = |params: &mut ParamStore, name: String, k_in: usize, k_out: usize| {
            EwsConv::new(params, &name, cfg.mode, cfg.order, k_in, k_out, p, &mut rng)
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        let head = match arch {
            Architecture::Gusc => {
                let (d, dd) = (cfg.hidden, cfg.code);
                for b in 1..=cfg.layers {
                    layers.push(UnrollLayer {
                        a: Some(conv(&mut params, format!("l{b}.A"), dd, d)),
                        b: Some(conv(&mut params, format!("l{b}.B"), channels, d)),
                        c: None,
                        d: Some(conv(&mut params, format!("l{b}.D"), d, dd)),
                        e: Some(conv(&mut params, format!("l{b}.E"), dd, dd)),
                        p: LayerOperator::Identity,
                        q: LayerOperator::Identity,
                        prox_u: Prox::Identity,
                        prox_r: Prox::SoftThreshold,
                    });
                }
                Some(conv(&mut params, "H".into(), dd, channels))
            }
            Architecture::Gutf => {
                for b in 1..=cfg.layers {
                    layers.push(UnrollLayer {
                        a: None,
                        b: Some(conv(&mut params, format!("l{b}.B"), channels, channels)),
                        c: Some(conv(&mut params, format!("l{b}.C"), channels, channels)),
                        d: None,
                        e: None,
                        p: LayerOperator::Matrix(ctx.incidence().clone()),
                        q: LayerOperator::Identity,
                        prox_u: Prox::SoftThreshold,
                        prox_r: Prox::Identity,
                    });
                }
                None
            }
        };
        let alpha = if cfg.trainable_alpha {
            params.add("alpha", Tensor::scalar(cfg.alpha))
        } else {
            params.add_frozen("alpha", Tensor::scalar(cfg.alpha))
        };
        Ok(Self {
            arch,
            layers,
            head,
            alpha,
            channels,
            params,
            ctx,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn layers(&self) -> &[UnrollLayer] {
        &self.layers
    }

    pub fn head(&self) -> Option<&EwsConv> {
        self.head.as_ref()
    }

    pub fn alpha_id(&self) -> ParamId {
        self.alpha
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn context(&self) -> &Arc<GraphContext> {
        &self.ctx
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Network output for noisy input `t` (an `N x K` value on `tape`).
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, t: Var) -> Result<Var> {
        match tape.value(t).dims2() {
            Some((n, k)) if n == self.ctx.n_vertices() && k == self.channels => {}
            _ => {
                return Err(Error::shape(
                    "unroll_forward",
                    format!(
                        "input {:?}, expected {}x{}",
                        tape.value(t).shape(),
                        self.ctx.n_vertices(),
                        self.channels
                    ),
                ))
            }
        }
        let diffs = self.ctx.support().bind(tape);
        let env = Env {
            bind,
            support: self.ctx.support(),
            diffs,
        };
        let alpha = bind.var(self.alpha);
        let mut state = LayerState::default();
        for layer in &self.layers {
            state = layer.forward_env(tape, &env, t, alpha, &state)?;
        }
        let out = match self.arch {
            Architecture::Gusc => {
                let head = self.head.as_ref().expect("GUSC has a head");
                match state.s {
                    Some(s) => Some(head.forward(tape, bind, env.support, diffs, s)?),
                    None => None,
                }
            }
            Architecture::Gutf => state.x,
        };
        Ok(match out {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(&[self.ctx.n_vertices(), self.channels])),
        })
    }

    pub fn predict(&self, t: &SignalMatrix) -> Result<SignalMatrix> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let tv = tape.constant(t.into());
        let out = self.forward(&mut tape, &bind, tv)?;
        tape.value(out).to_mat()
    }

    /// Checkpoint JSON with architecture metadata.
    pub fn checkpoint(&self) -> Result<serde_json::Value> {
        let mut v = self.params.to_json()?;
        v["architecture"] = serde_json::to_value(self.arch)?;
        v["channels"] = self.channels.into();
        v["layers"] = self.layers.len().into();
        Ok(v)
    }
}
