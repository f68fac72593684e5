//! Shared fixtures for the criterion benchmarks.

use graph_unroll::datagen::{add_noise, generate_signals, random_geometric_graph, NoiseModel, SignalKind, SignalSpec};
use graph_unroll::{Graph, SignalMatrix};

/// A connected random geometric graph with `k` noisy smooth signals
/// (σ = 0.5).
pub fn noisy_instance(n: usize, radius: f64, k: usize, seed: u64) -> (Graph, SignalMatrix) {
    let g = random_geometric_graph(n, radius, seed).expect("valid graph parameters");
    let x = generate_signals(&g, &SignalSpec::new(SignalKind::Smooth, k, seed), None).expect("valid signal spec");
    let t = add_noise(&x, &NoiseModel::Gaussian { sigma: 0.5 }, seed + 1).expect("valid noise");
    (g, t)
}
