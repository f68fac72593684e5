//! Full-batch unsupervised training: the noisy input is also the target.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::model::{LossKind, UnrollNet};
use crate::autodiff::{AdamConfig, AdamState, Binding, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{Mat, SignalMatrix};
use crate::metrics::nmse;

/// A network trained by [`train`].
pub trait TrainableModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Raw output (pre-sigmoid in cross-entropy mode) for input `t`.
    fn forward(&self, tape: &mut Tape, bind: &Binding, t: Var) -> Result<Var>;
}

impl TrainableModel for UnrollNet {
    fn params(&self) -> &ParamStore {
        UnrollNet::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        UnrollNet::params_mut(self)
    }

    fn forward(&self, tape: &mut Tape, bind: &Binding, t: Var) -> Result<Var> {
        UnrollNet::forward(self, tape, bind, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub loss: LossKind,
    /// History is recorded every `log_every` epochs (and at the last one).
    pub log_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 5000,
            lr: 1e-3,
            loss: LossKind::Frobenius,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch whose forward pass produced these numbers.
    pub epoch: usize,
    pub loss: f64,
    pub nmse_to_noisy: Option<f64>,
    pub nmse_to_clean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Denoised signals from the final parameters (probabilities in
    /// cross-entropy mode).
    pub output: SignalMatrix,
    pub history: Vec<EpochRecord>,
    pub final_loss: f64,
}

struct Pass {
    tape: Tape,
    bind: Binding,
    output: Var,
    loss: Var,
}

fn run_forward<M: TrainableModel + ?Sized>(model: &M, t: &Mat, target: &Tensor, loss: LossKind) -> Result<Pass> {
    let mut tape = Tape::new();
    let bind = model.params().bind(&mut tape);
    let tv = tape.constant(t.into());
    let raw = model.forward(&mut tape, &bind, tv)?;
    let (output, loss) = match loss {
        LossKind::Frobenius => {
            let target = tape.constant(target.clone());
            let diff = tape.sub(raw, target)?;
            (raw, tape.frobenius_sq(diff))
        }
        LossKind::BinaryCrossEntropy => {
            let p = tape.sigmoid(raw);
            let l = tape.binary_cross_entropy(p, target)?;
            (p, l)
        }
    };
    Ok(Pass {
        tape,
        bind,
        output,
        loss,
    })
}

/// Trains `model` on noisy `t` with Adam. `clean` only feeds the history.
pub fn train<M: TrainableModel + ?Sized>(
    model: &mut M,
    t: &SignalMatrix,
    clean: Option<&SignalMatrix>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let target: Tensor = t.into();
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: opts.lr,
            ..AdamConfig::default()
        },
    );
    let log_every = opts.log_every.max(1);
    let mut history = Vec::new();
    for epoch in 1..=opts.epochs {
        let mut pass = run_forward(model, t, &target, opts.loss)?;
        let loss = pass.tape.value(pass.loss).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                msg: format!("training loss is {loss}"),
            });
        }
        if epoch % log_every == 0 || epoch == opts.epochs {
            let out = pass.tape.value(pass.output).to_mat()?;
            history.push(EpochRecord {
                epoch,
                loss,
                nmse_to_noisy: nmse(&out, t).ok(),
                nmse_to_clean: clean.and_then(|c| nmse(&out, c).ok()),
            });
        }
        pass.tape.backward(pass.loss)?;
        let grads = pass.bind.grads(&pass.tape);
        adam.step(model.params_mut(), &grads).map_err(|e| match e {
            Error::NonFinite { msg, .. } => Error::NonFinite { epoch, msg },
            other => other,
        })?;
    }
    let pass = run_forward(model, t, &target, opts.loss)?;
    let final_loss = pass.tape.value(pass.loss).item();
    Ok(TrainReport {
        output: pass.tape.value(pass.output).to_mat()?,
        history,
        final_loss,
    })
}

/// Loss value and gradients for the current parameters, in store order.
pub fn loss_and_gradients<M: TrainableModel + ?Sized>(
    model: &M,
    t: &SignalMatrix,
    loss: LossKind,
) -> Result<(f64, Vec<Tensor>)> {
    let mut pass = run_forward(model, t, &t.into(), loss)?;
    pass.tape.backward(pass.loss)?;
    Ok((pass.tape.value(pass.loss).item(), pass.bind.grads(&pass.tape)))
}

/// Training log CSV: `epoch,loss,nmse_to_noisy[,nmse_to_clean]`.
pub fn history_to_csv(history: &[EpochRecord], with_clean: bool) -> String {
    let mut s = String::from("epoch,loss,nmse_to_noisy");
    if with_clean {
        s.push_str(",nmse_to_clean");
    }
    s.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in history {
        let _ = write!(s, "{},{},{}", r.epoch, fmt_f64(r.loss), opt(r.nmse_to_noisy));
        if with_clean {
            let _ = write!(s, ",{}", opt(r.nmse_to_clean));
        }
        s.push('\n');
    }
    s
}
