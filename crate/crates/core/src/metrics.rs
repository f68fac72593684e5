//! Denoising metrics. Every metric is computed per column and then
//! averaged over columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Real,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMetrics {
    pub nmse: Option<f64>,
    pub nmae: Option<f64>,
    pub error_rate: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MetricMode,
    pub columns: Vec<ColumnMetrics>,
    /// Mean over columns; `None` only in binary mode when some clean
    /// column is all zero.
    pub nmse: Option<f64>,
    pub nmae: Option<f64>,
    pub error_rate: Option<f64>,
    pub f1: Option<f64>,
    /// Set when some column had no predicted and no true positives, so its
    /// F1 was taken as 0.
    pub f1_degenerate: bool,
}

fn same_shape(xhat: &Mat, x: &Mat) -> Result<()> {
    if xhat.shape() != x.shape() {
        return Err(Error::shape(
            "compute_metrics",
            format!("{:?} vs {:?}", xhat.shape(), x.shape()),
        ));
    }
    if x.cols() == 0 || x.rows() == 0 {
        return Err(Error::shape("compute_metrics", "empty signal matrix"));
    }
    Ok(())
}

fn column_ratio(xhat: &Mat, x: &Mat, j: usize, f: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..x.rows() {
        num += f(xhat[(i, j)] - x[(i, j)]);
        den += f(x[(i, j)]);
    }
    (den > 0.0).then(|| num / den)
}

fn mean_all(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in values {
        s += v?;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn undefined() -> Error {
    Error::Numerical("undefined normalization: clean signal column is zero".into())
}

/// `‖x̂−x‖²/‖x‖²`, averaged over columns.
pub fn nmse(xhat: &Mat, x: &Mat) -> Result<f64> {
    same_shape(xhat, x)?;
    mean_all((0..x.cols()).map(|j| column_ratio(xhat, x, j, |v| v * v))).ok_or_else(undefined)
}

/// `‖x̂−x‖₁/‖x‖₁`, averaged over columns.
pub fn nmae(xhat: &Mat, x: &Mat) -> Result<f64> {
    same_shape(xhat, x)?;
    mean_all((0..x.cols()).map(|j| column_ratio(xhat, x, j, f64::abs))).ok_or_else(undefined)
}

fn is_binary(x: &Mat) -> bool {
    x.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Binary predictions from probabilities.
pub fn threshold_predictions(xhat: &Mat) -> Mat {
    xhat.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

pub fn compute_metrics(xhat: &Mat, x: &Mat, mode: MetricMode) -> Result<EvalReport> {
    same_shape(xhat, x)?;
    let mut columns = Vec::with_capacity(x.cols());
    let mut f1_degenerate = false;
    match mode {
        MetricMode::Real => {
            for j in 0..x.cols() {
                let nmse = column_ratio(xhat, x, j, |v| v * v).ok_or_else(undefined)?;
                let nmae = column_ratio(xhat, x, j, f64::abs).ok_or_else(undefined)?;
                columns.push(ColumnMetrics {
                    nmse: Some(nmse),
                    nmae: Some(nmae),
                    error_rate: None,
                    f1: None,
                });
            }
        }
        MetricMode::Binary => {
            if !is_binary(x) {
                return Err(Error::validation("binary metrics need a 0/1 reference"));
            }
            let pred = threshold_predictions(xhat);
            for j in 0..x.cols() {
                let (mut tp, mut fp, mut fneg, mut wrong) = (0usize, 0usize, 0usize, 0usize);
                for i in 0..x.rows() {
                    let (p, t) = (pred[(i, j)] == 1.0, x[(i, j)] == 1.0);
                    match (p, t) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        (false, false) => {}
                    }
                    if p != t {
                        wrong += 1;
                    }
                }
                let f1 = if tp == 0 {
                    if fp == 0 && fneg == 0 {
                        f1_degenerate = true;
                    }
                    0.0
                } else {
                    let precision = tp as f64 / (tp + fp) as f64;
                    let recall = tp as f64 / (tp + fneg) as f64;
                    2.0 * precision * recall / (precision + recall)
                };
                columns.push(ColumnMetrics {
                    nmse: column_ratio(xhat, x, j, |v| v * v),
                    nmae: column_ratio(xhat, x, j, f64::abs),
                    error_rate: Some(wrong as f64 / x.rows() as f64),
                    f1: Some(f1),
                });
            }
        }
    }
    Ok(EvalReport {
        mode,
        nmse: mean_all(columns.iter().map(|c| c.nmse)),
        nmae: mean_all(columns.iter().map(|c| c.nmae)),
        error_rate: mean_all(columns.iter().map(|c| c.error_rate)),
        f1: mean_all(columns.iter().map(|c| c.f1)),
        f1_degenerate,
        columns,
    })
}
