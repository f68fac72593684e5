mod common;

use common::{random_graph, random_mat, to_nalgebra};
use graph_unroll::baselines::{gtf_denoise, gtf_objective, AdmmOptions};
use graph_unroll::datagen::{add_noise, generate_signals, random_geometric_graph, NoiseModel, SignalKind, SignalSpec};
use graph_unroll::graph::{incidence_matrix, shift_powers, spectral_radius};
use graph_unroll::spectral::{adjacency_basis, eig_sym, gft, igft, laplacian_basis};
use graph_unroll::unroll::{hqs_solve, HqsConfig};
use graph_unroll::{CounterRng, Mat};
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn incidence_gram_is_laplacian(n in 2usize..50, p in 0.0f64..0.4, seed in any::<u64>()) {
        let g = random_graph(n, p, seed);
        let gram = incidence_matrix(&g).gram();
        prop_assert!(gram.max_abs_diff(&g.laplacian()) < 1e-9);
    }

    #[test]
    fn normalized_shift_has_unit_norm(n in 2usize..50, p in 0.0f64..0.4, seed in any::<u64>()) {
        let g = random_graph(n, p, seed);
        prop_assert!(g.adjacency().is_symmetric(0.0));
        let radius = spectral_radius(g.adjacency()).unwrap();
        prop_assert!((radius - 1.0).abs() < 1e-9, "radius {radius}");
    }
}

proptest! {
    #![proptest_config(cases(40))]

    #[test]
    fn shift_powers_match_dense_products(n in 2usize..50, order in 1usize..5, seed in any::<u64>()) {
        let g = random_graph(n, 0.1, seed);
        let powers = shift_powers(&g, order).unwrap();
        let a = to_nalgebra(&g.adjacency().to_dense());
        let mut ak = a.clone();
        for ell in 1..=order {
            let mask = to_nalgebra(&powers.mask(ell).to_dense());
            prop_assert!((mask - &ak).amax() < 1e-9, "power {ell}");
            ak = &ak * &a;
        }
    }
}

proptest! {
    #![proptest_config(cases(50))]

    #[test]
    fn eigendecomposition_residuals(n in 1usize..50, seed in any::<u64>()) {
        let b = random_mat(n, n, seed);
        let m = b.add(&b.transpose()).unwrap();
        let basis = eig_sym(&m).unwrap();
        let v = basis.eigenvectors();
        let vtv = v.tmatmul(v).unwrap();
        prop_assert!(vtv.max_abs_diff(&Mat::identity(n)) < 1e-8);
        let lambda = Mat::from_fn(n, n, |i, j| if i == j { basis.eigenvalues()[i] } else { 0.0 });
        let av = m.matmul(v).unwrap();
        let vl = v.matmul(&lambda).unwrap();
        let norm = basis.eigenvalues().iter().fold(0.0f64, |a, l| a.max(l.abs())).max(1e-300);
        prop_assert!(av.max_abs_diff(&vl) / norm < 1e-7);
        prop_assert!(basis.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        // Largest-magnitude entry of every column is positive.
        for j in 0..n {
            let col = v.column(j);
            let top = col.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let first = col.iter().find(|x| x.abs() == top).unwrap();
            prop_assert!(*first > 0.0);
        }
        // Eigenvalues agree with an independent solver.
        let mut oracle: Vec<f64> = to_nalgebra(&m).symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in basis.eigenvalues().iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-9 * norm.max(1.0));
        }
    }

    #[test]
    fn gft_round_trip(n in 2usize..30, k in 1usize..4, seed in any::<u64>()) {
        let g = random_graph(n, 0.2, seed);
        let basis = adjacency_basis(&g).unwrap();
        let x = random_mat(n, k, seed ^ 1);
        let back = igft(&basis, &gft(&basis, &x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), kind in 0usize..3) {
        let kind = [SignalKind::Smooth, SignalKind::PiecewiseConstant, SignalKind::PiecewiseSmooth][kind];
        let make = || {
            let g = random_geometric_graph(60, 0.25, seed).unwrap();
            let basis = laplacian_basis(&g).unwrap();
            let x = generate_signals(&g, &SignalSpec::new(kind, 3, seed), Some(&basis)).unwrap();
            let noise = NoiseModel::Mixture { sigma: 0.2, b: 0.2 };
            let t = add_noise(&x, &noise, seed ^ 7).unwrap();
            (g.to_tsv(), x, t)
        };
        let (g1, x1, t1) = make();
        let (g2, x2, t2) = make();
        prop_assert_eq!(g1, g2);
        prop_assert_eq!(x1.data(), x2.data());
        prop_assert_eq!(t1.data(), t2.data());
    }
}

#[test]
fn smooth_signals_have_small_quadratic_form() {
    let g = random_geometric_graph(100, 0.2, 11).unwrap();
    let basis = laplacian_basis(&g).unwrap();
    let lap = g.laplacian();
    let quad = |x: &Mat| x.tmatmul(&lap.matmul(x).unwrap()).unwrap().data()[0];
    let mut wins = 0;
    for trial in 0..100u64 {
        let x = generate_signals(&g, &SignalSpec::new(SignalKind::Smooth, 1, trial), Some(&basis)).unwrap();
        let mut r = random_mat(100, 1, trial + 1000);
        let scale = (x.frobenius_sq() / r.frobenius_sq()).sqrt();
        r = r.scale(scale);
        if quad(&x) < quad(&r) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn admm_objective_is_monotone_after_warmup() {
    let mut rng = CounterRng::new(21);
    for trial in 0..10u64 {
        let n = 10 + rng.below(90);
        let g = random_graph(n, 0.05, trial);
        let t = random_mat(n, 2, trial + 50);
        let alpha = rng.uniform_range(0.05, 1.0);
        let report = gtf_denoise(&t, &incidence_matrix(&g), alpha, &AdmmOptions::default()).unwrap();
        for w in report.objective.windows(2).skip(5) {
            assert!(w[1] <= w[0] + 1e-8, "trial {trial}: {} -> {}", w[0], w[1]);
        }
        let obj = gtf_objective(&t, &report.output, &incidence_matrix(&g), alpha).unwrap();
        assert!(obj <= gtf_objective(&t, &t, &incidence_matrix(&g), alpha).unwrap() + 1e-9);
    }
}

#[test]
fn hqs_penalty_is_non_increasing() {
    for trial in 0..20u64 {
        let g = random_graph(15 + trial as usize, 0.15, trial);
        let t = random_mat(g.n_vertices(), 1, trial + 100);
        let report = hqs_solve(&t, &g, &HqsConfig::trend_filtering(0.3)).unwrap();
        for w in report.penalty.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "trial {trial}: {} -> {}", w[0], w[1]);
        }
    }
}
