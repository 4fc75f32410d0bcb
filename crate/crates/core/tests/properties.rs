use std::sync::Arc;

use gossipopt::bench::{gen_classification_dataset, gen_regression_dataset, shard};
use gossipopt::gossip::{accelerated_gossip, chebyshev_params, gossip_round, poly_gossip_matrix};
use gossipopt::lower_bounds::hard_gossip_matrix;
use gossipopt::objectives::{make_least_squares, make_logistic, GlobalObjective, LocalObjective};
use gossipopt::solvers::{DualAccelerated, Solver, TimeModel};
use gossipopt::topology::{build_graph, diameter, laplacian, GossipMatrix, Graph, Topology};
use gossipopt::ParameterBlock;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn assert_gossip_conditions(g: &Graph, w: &GossipMatrix) {
    let m = w.dense();
    let n = g.n();
    let mut allowed = DMatrix::<f64>::identity(n, n);
    for &(i, j, _) in g.edges() {
        allowed[(i, j)] = 1.0;
        allowed[(j, i)] = 1.0;
    }
    assert!((m - m.transpose()).amax() <= 1e-9);
    for i in 0..n {
        for j in 0..n {
            if allowed[(i, j)] == 0.0 {
                assert!(m[(i, j)].abs() <= 1e-9);
            }
        }
    }
    let ev = sorted_eigenvalues(m);
    assert!(ev[0] >= -1e-9);
    assert!(ev[1] > 1e-9, "kernel larger than the constants");
    assert!((m * DVector::from_element(n, 1.0)).amax() <= 1e-9);
}

fn er_graph(n: usize, p: f64, seed: u64) -> Graph {
    build_graph(&Topology::ErdosRenyi { n, p }, seed).unwrap().graph
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn shards(logistic: bool, n: usize, seed: u64) -> Vec<Arc<dyn LocalObjective>> {
    let ds = if logistic {
        gen_classification_dataset(20 * n, 4, seed).unwrap()
    } else {
        gen_regression_dataset(20 * n, 4, seed).unwrap()
    };
    shard(&ds, n, seed)
        .unwrap()
        .iter()
        .map(|s| -> Arc<dyn LocalObjective> {
            if logistic {
                Arc::new(make_logistic(&s.x, &s.y, 0.1).unwrap())
            } else {
                Arc::new(make_least_squares(&s.x, &s.y, 0.1).unwrap())
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_networks_give_gossip_matrices(n in 4usize..40, p in 0.1f64..0.9, seed in 0u64..1000) {
        let g = er_graph(n, p, seed);
        let w = laplacian(&g).unwrap();
        assert_gossip_conditions(&g, &w);
        let ev = sorted_eigenvalues(w.dense());
        prop_assert!((w.gamma() - ev[1] / ev[n - 1]).abs() <= 1e-9);
    }

    #[test]
    fn regular_networks_obey_diameter_bound(rows in 2usize..9, cols in 2usize..9, k in 3usize..30) {
        for t in [Topology::Grid { rows, cols }, Topology::Complete { n: k }] {
            let g = build_graph(&t, 0).unwrap().graph;
            let w = laplacian(&g).unwrap();
            let delta = diameter(&g).unwrap() as f64;
            let n = g.n() as f64;
            prop_assert!(1.0 / w.gamma().sqrt() >= delta / (2.0 * 2f64.sqrt() * n.log2()) - 1e-12, "{t}");
        }
    }

    #[test]
    fn gossip_preserves_zero_column_sums(n in 4usize..25, seed in 0u64..500, x in matrix_strategy(3, 25)) {
        let w = laplacian(&er_graph(n, 0.4, seed)).unwrap();
        let x = ParameterBlock::from_matrix(x.columns(0, n).into_owned());
        let ones = DVector::from_element(n, 1.0);
        let single = gossip_round(&x, &w).unwrap();
        prop_assert!((single.matrix() * &ones).amax() <= 1e-9);
        if w.gamma() < 0.9 {
            let params = chebyshev_params(w.gamma(), w.lambda_max()).unwrap();
            let acc = accelerated_gossip(&x, &w, &params).unwrap();
            prop_assert!((acc.matrix() * &ones).amax() <= 1e-9 * (1.0 + x.matrix().amax()));
        }
    }

    #[test]
    fn chebyshev_polynomial_is_symmetric_psd(n in 4usize..30, seed in 0u64..500) {
        let w = laplacian(&er_graph(n, 0.3, seed)).unwrap();
        prop_assume!(w.gamma() < 0.9);
        let params = chebyshev_params(w.gamma(), w.lambda_max()).unwrap();
        let p = poly_gossip_matrix(&w, &params).unwrap();
        prop_assert!((p.dense() - p.dense().transpose()).amax() <= 1e-9);
        prop_assert!(sorted_eigenvalues(p.dense())[0] >= -1e-9);
        prop_assert!(p.gamma() >= params.poly_gamma_lower_bound() - 1e-9);
    }

    #[test]
    fn hard_gossip_meets_conditions_and_target(gamma in 0.002f64..1.0) {
        let h = hard_gossip_matrix(gamma).unwrap();
        assert_gossip_conditions(&h.graph, &h.matrix);
        prop_assert!((h.matrix.gamma() - gamma).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn strong_convexity_and_smoothness_constants(
        logistic in any::<bool>(),
        seed in 0u64..1000,
        a in proptest::collection::vec(-3.0f64..3.0, 4),
        b in proptest::collection::vec(-3.0f64..3.0, 4),
    ) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        for f in shards(logistic, 3, seed) {
            let d = &a - &b;
            let inner = (f.grad(&a) - f.grad(&b)).dot(&d);
            let sq = d.norm_squared();
            prop_assert!(f.alpha() * sq <= inner + 1e-9);
            prop_assert!(inner <= f.beta() * sq + 1e-9);
        }
    }

    #[test]
    fn conjugate_gradient_inverts_gradient(logistic in any::<bool>(), seed in 0u64..1000, x in proptest::collection::vec(-4.0f64..4.0, 4)) {
        let x = DVector::from_vec(x);
        for f in shards(logistic, 2, seed) {
            let theta = f.conj_grad(&x, None).unwrap();
            prop_assert!((f.grad(&theta) - &x).norm() <= 1e-8 * x.norm().max(1.0));
        }
    }

    #[test]
    fn global_condition_number_never_exceeds_local(logistic in any::<bool>(), n in 2usize..8, seed in 0u64..1000) {
        let g = GlobalObjective::new(shards(logistic, n, seed)).unwrap();
        prop_assert!(g.kappa_g() <= g.kappa_l() * (1.0 + 1e-12));
    }

    #[test]
    fn dual_iterates_stay_orthogonal_to_constants(n in 3usize..12, seed in 0u64..1000, multi in any::<bool>()) {
        let w = laplacian(&er_graph(n, 0.5, seed)).unwrap();
        let locals = shards(false, n, seed);
        let tm = TimeModel::new(0.5).unwrap();
        let mut s = if multi {
            DualAccelerated::msda(locals, w, tm).unwrap()
        } else {
            DualAccelerated::ssda(locals, w, tm).unwrap()
        };
        let ones = DVector::from_element(n, 1.0);
        for _ in 0..40 {
            s.step().unwrap();
            let (x, y) = s.dual();
            prop_assert!((x.matrix() * &ones).amax() <= 1e-8);
            prop_assert!((y.matrix() * &ones).amax() <= 1e-8);
        }
    }
}
