//! Graph signal denoising with unrolled graph networks, classical
//! baselines, simulated data and an experiment harness.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod gconv;
pub mod graph;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod unroll;

pub use error::{Error, Result};
pub use gconv::{ConvMode, EdgeSupport, EwsConv, FilterCoeffs, KernelMlp, Permutation};
pub use graph::{Edge, Graph, Incidence, ShiftPowers};
pub use linalg::{Mat, SignalMatrix};
pub use metrics::{compute_metrics, EvalReport, MetricMode};
pub use rng::CounterRng;
pub use sparse::Csr;
pub use spectral::{SpectralBasis, VertexCoords};
pub use unroll::{Architecture, GraphContext, UnrollConfig, UnrollNet};
