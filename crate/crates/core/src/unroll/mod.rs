//! Graph unrolling networks and the classical splitting solver they unroll.

mod hqs;
mod model;
mod train;

pub use hqs::{hqs_solve, HqsConfig, HqsFilter, HqsReport, OperatorKind, ProxKind};
pub use model::{
    Architecture, GraphContext, LayerOperator, LayerState, LossKind, Prox, UnrollConfig, UnrollLayer, UnrollNet,
    DEFAULT_ORDER,
};
pub use train::{history_to_csv, loss_and_gradients, train, EpochRecord, TrainOptions, TrainReport, TrainableModel};

use crate::autodiff::soft_threshold_scalar;
use crate::linalg::Mat;

/// Entrywise `S_α`: shrink toward zero by `α`, zero on `[−α, α]`.
pub fn soft_threshold(x: &Mat, alpha: f64) -> Mat {
    x.map(|v| soft_threshold_scalar(v, alpha))
}

impl UnrollConfig {
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            lr: self.lr,
            loss: self.loss,
            log_every: self.log_every,
        }
    }
}
