mod common;

use common::{coords_of, random_graph, random_mat};
use graph_unroll::autodiff::ParamStore;
use graph_unroll::gconv::{fixed_graph_convolution, kernel_edge_weights, multichannel_graph_convolution};
use graph_unroll::graph::shift_powers;
use graph_unroll::{ConvMode, CounterRng, EdgeSupport, EwsConv, FilterCoeffs, Mat, Permutation};

/// Overwrites the kernel's last layer so it outputs the constant `c`.
fn make_kernel_constant(store: &mut ParamStore, conv: &EwsConv, c: f64) {
    let ids: Vec<_> = conv.kernel().param_ids().collect();
    let (w, b) = (ids[ids.len() - 2], ids[ids.len() - 1]);
    store.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = c);
}

#[test]
fn constant_kernel_degenerates_to_fixed_filters() {
    let g = random_graph(12, 0.25, 4);
    let powers = shift_powers(&g, 3).unwrap();
    let coords = coords_of(&g, 4);
    let support = EdgeSupport::new(&powers, &coords).unwrap();
    let x = random_mat(12, 2, 9);

    // Full mode with a constant kernel is the multichannel filter with every
    // coefficient equal to that constant.
    let mut store = ParamStore::new();
    let conv = EwsConv::new(&mut store, "full", ConvMode::Full, 3, 2, 3, 4, &mut CounterRng::new(1));
    make_kernel_constant(&mut store, &conv, 0.7);
    let ews = conv.apply(&store, &support, &x).unwrap();
    let h = vec![Mat::from_fn(2, 3, |_, _| 0.7); 3];
    let multi = multichannel_graph_convolution(&h, &powers, &x).unwrap();
    assert!(ews.max_abs_diff(&multi) < 1e-12);

    // Single channel: multichannel equals the fixed polynomial filter.
    let x1 = x.left_columns(1);
    let coeffs = [0.3, -1.2, 0.5];
    let h1: Vec<Mat> = coeffs.iter().map(|&c| Mat::from_fn(1, 1, |_, _| c)).collect();
    let multi = multichannel_graph_convolution(&h1, &powers, &x1).unwrap();
    let fixed = fixed_graph_convolution(&FilterCoeffs::new(coeffs.to_vec()).unwrap(), &powers, &x1).unwrap();
    assert!(multi.max_abs_diff(&fixed) < 1e-12);
}

#[test]
fn single_hop_multichannel_is_axh() {
    let g = random_graph(9, 0.3, 2);
    let powers = shift_powers(&g, 1).unwrap();
    let x = random_mat(9, 3, 1);
    let h = random_mat(3, 2, 2);
    let y = multichannel_graph_convolution(std::slice::from_ref(&h), &powers, &x).unwrap();
    let ax = g.adjacency().to_dense().matmul(&x).unwrap();
    assert!(y.max_abs_diff(&ax.matmul(&h).unwrap()) < 1e-12);
}

/// `Σ_ℓ Σ_{(i,j) ∈ E^(ℓ)} e_i (Aℓ)_{ij} x_jᵀ H^(i,j,ℓ)` evaluated edge by edge.
fn edge_sum(conv: &EwsConv, store: &ParamStore, g: &graph_unroll::Graph, order: usize, x: &Mat) -> Mat {
    let powers = shift_powers(g, order).unwrap();
    let coords = coords_of(g, 4);
    let (k, kp) = (conv.in_channels(), conv.out_channels());
    let mut y = Mat::zeros(x.rows(), kp);
    for ell in 1..=order {
        let pairs = powers.edge_set(ell);
        let psi = kernel_edge_weights(conv.kernel(), store, &coords, &pairs).unwrap();
        for (e, &(i, j)) in pairs.iter().enumerate() {
            let a = powers.mask(ell).get(i, j);
            for kk in 0..k {
                for out in 0..kp {
                    let h = match conv.mode() {
                        ConvMode::Full => psi[(e, (ell - 1) * k * kp + kk * kp + out)],
                        ConvMode::Factorized => {
                            let mix = store.get(conv.mixing(ell).unwrap()).to_mat().unwrap();
                            psi[(e, ell - 1)] * mix[(kk, out)]
                        }
                    };
                    y[(i, out)] += a * h * x[(j, kk)];
                }
            }
        }
    }
    y
}

#[test]
fn ews_conv_matches_edge_by_edge_sum() {
    let g = random_graph(6, 0.4, 7);
    let order = 2;
    let support = EdgeSupport::new(&shift_powers(&g, order).unwrap(), &coords_of(&g, 4)).unwrap();
    let x = random_mat(6, 2, 3);
    for (seed, mode, kp) in [
        (1, ConvMode::Full, 3),
        (2, ConvMode::Factorized, 3),
        (3, ConvMode::Factorized, 1),
    ] {
        let mut store = ParamStore::new();
        let conv = EwsConv::new(&mut store, "c", mode, order, 2, kp, 4, &mut CounterRng::new(seed));
        let fast = conv.apply(&store, &support, &x).unwrap();
        let slow = edge_sum(&conv, &store, &g, order, &x);
        assert!(fast.max_abs_diff(&slow) < 1e-10, "{mode:?}");
    }
}

#[test]
fn zero_input_gives_zero_output() {
    let g = random_graph(8, 0.3, 1);
    let support = EdgeSupport::new(&shift_powers(&g, 2).unwrap(), &coords_of(&g, 4)).unwrap();
    let mut store = ParamStore::new();
    let conv = EwsConv::new(&mut store, "c", ConvMode::Full, 2, 2, 2, 4, &mut CounterRng::new(1));
    let y = conv.apply(&store, &support, &Mat::zeros(8, 2)).unwrap();
    assert_eq!(y.max_abs(), 0.0);
}

#[test]
fn kernel_weights_depend_on_edge_direction() {
    let g = random_graph(8, 0.3, 5);
    let coords = coords_of(&g, 4);
    let mut store = ParamStore::new();
    let conv = EwsConv::new(
        &mut store,
        "c",
        ConvMode::Factorized,
        1,
        1,
        1,
        4,
        &mut CounterRng::new(2),
    );
    let (i, j) = (g.edges()[0].i, g.edges()[0].j);
    let w = kernel_edge_weights(conv.kernel(), &store, &coords, &[(i, j), (j, i)]).unwrap();
    assert!((w[(0, 0)] - w[(1, 0)]).abs() > 1e-9);
}

#[test]
fn ews_conv_is_permutation_equivariant() {
    let mut rng = CounterRng::new(77);
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let n = 5 + rng.below(26);
        let g = random_graph(n, 0.2, trial);
        let coords = coords_of(&g, 4);
        let j = Permutation::random(n, &mut rng);
        let order = 2;
        let mode = if trial % 2 == 0 {
            ConvMode::Factorized
        } else {
            ConvMode::Full
        };
        let mut store = ParamStore::new();
        let conv = EwsConv::new(&mut store, "c", mode, order, 2, 2, 4, &mut CounterRng::new(trial));
        let x = random_mat(n, 2, trial + 500);

        let support = EdgeSupport::new(&shift_powers(&g, order).unwrap(), &coords).unwrap();
        let y = conv.apply(&store, &support, &x).unwrap();

        let gp = j.apply_graph(&g).unwrap();
        let cp = j.apply_coords(&coords).unwrap();
        let sp = EdgeSupport::new(&shift_powers(&gp, order).unwrap(), &cp).unwrap();
        let yp = conv.apply(&store, &sp, &j.apply_rows(&x).unwrap()).unwrap();
        worst = worst.max(yp.max_abs_diff(&j.apply_rows(&y).unwrap()));
    }
    assert!(worst < 1e-10, "max deviation {worst}");
}

#[test]
fn permutation_identity_and_inverse() {
    let g = random_graph(10, 0.3, 3);
    let x = random_mat(10, 2, 1);
    let id = Permutation::identity(10);
    assert_eq!(id.apply_rows(&x).unwrap(), x);
    assert_eq!(id.apply_graph(&g).unwrap().to_tsv(), g.to_tsv());
    let j = Permutation::random(10, &mut CounterRng::new(4));
    let back = j.inverse().apply_rows(&j.apply_rows(&x).unwrap()).unwrap();
    assert_eq!(back, x);
    let gb = j.inverse().apply_graph(&j.apply_graph(&g).unwrap()).unwrap();
    assert!(gb.adjacency().to_dense().max_abs_diff(&g.adjacency().to_dense()) < 1e-15);
    assert!(Permutation::new(vec![0, 0, 1]).is_err());
}
