use phi4_mrf::field::{
    action, action_theta_gradient, clique_log_potentials, conditional_log_density_delta, magnetization,
    target_action_terms, CouplingSet, PairAction, TargetActionSpec,
};
use phi4_mrf::lattice::{Boundary, LatticeGraph};
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = LatticeGraph> {
    prop_oneof![
        (3usize..7).prop_map(|w| LatticeGraph::square(w, Boundary::Periodic).unwrap()),
        (2usize..7).prop_map(|w| LatticeGraph::square(w, Boundary::Open).unwrap()),
        (1usize..5, 1usize..4).prop_map(|(v, h)| LatticeGraph::bipartite(v, h).unwrap()),
    ]
}

/// A graph with couplings and a field configuration on it.
fn case() -> impl Strategy<Value = (LatticeGraph, CouplingSet, Vec<f64>)> {
    graph_strategy().prop_flat_map(|g| {
        let n = g.vertex_count();
        let e = g.nn_edges().len();
        (
            Just(g),
            prop::collection::vec(-2.0..2.0f64, e),
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(0.0..2.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(-3.0..3.0f64, n),
        )
            .prop_map(|(g, w, a, b, r, phi)| (g, CouplingSet { w, a, b, r }, phi))
    })
}

proptest! {
    #[test]
    fn cliques_factorize_the_weight((g, theta, phi) in case()) {
        let total: f64 = clique_log_potentials(&phi, &theta, &g).unwrap().iter().sum();
        let s = action(&phi, &theta, &g).unwrap();
        prop_assert!((total + s).abs() <= 1e-10 * s.abs().max(1.0));
    }

    #[test]
    fn action_is_linear_in_the_couplings((g, theta, phi) in case()) {
        let grad = action_theta_gradient(&phi, &theta, &g).unwrap();
        let dot: f64 = grad.iter().zip(theta.iter()).map(|(x, y)| x * y).sum();
        let s = action(&phi, &theta, &g).unwrap();
        prop_assert!((dot - s).abs() <= 1e-10 * s.abs().max(1.0));
    }

    #[test]
    fn conditional_matches_action_difference((g, theta, mut phi) in case(), x1 in -3.0..3.0f64, x2 in -3.0..3.0f64, k in 0usize..64) {
        let i = k % g.vertex_count();
        let local = conditional_log_density_delta(i, x1, x2, &phi, &theta, &g).unwrap();
        phi[i] = x1;
        let s1 = action(&phi, &theta, &g).unwrap();
        phi[i] = x2;
        let s2 = action(&phi, &theta, &g).unwrap();
        prop_assert!((local - (s2 - s1)).abs() <= 1e-10 * s1.abs().max(s2.abs()).max(1.0));
    }

    #[test]
    fn pair_action_agrees_with_model_action((g, theta, phi) in case()) {
        let pair = PairAction::from_couplings(&theta, &g).unwrap();
        let s = action(&phi, &theta, &g).unwrap();
        prop_assert!((pair.action(&phi) - s).abs() <= 1e-10 * s.abs().max(1.0));
    }

    #[test]
    fn global_sign_flip_is_a_symmetry_without_linear_terms((g, mut theta, phi) in case()) {
        theta.r.iter_mut().for_each(|r| *r = 0.0);
        let flipped: Vec<f64> = phi.iter().map(|x| -x).collect();
        prop_assert_eq!(action(&phi, &theta, &g).unwrap(), action(&flipped, &theta, &g).unwrap());
        prop_assert_eq!(magnetization(&flipped), -magnetization(&phi));
    }

    #[test]
    fn target_in_the_model_family_equals_model_action(width in 3usize..6, w in -1.0..1.0f64, a in 0.1..2.0f64, b in 0.01..1.0f64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let g = LatticeGraph::square(width, Boundary::Periodic).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let phi: Vec<f64> = (0..g.vertex_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spec = TargetActionSpec::phi4(w, a, b).unwrap();
        let target = target_action_terms(&phi, &spec, &g).unwrap().total;
        let model = action(&phi, &CouplingSet::homogeneous(&g, w, a, b), &g).unwrap();
        prop_assert!(target.im == 0.0);
        prop_assert!((target.re - model).abs() <= 1e-10 * model.abs().max(1.0));
    }

    #[test]
    fn square_lattice_counts(width in 3usize..12) {
        let g = LatticeGraph::square(width, Boundary::Periodic).unwrap();
        let v = width * width;
        prop_assert_eq!(g.vertex_count(), v);
        prop_assert_eq!(g.nn_edges().len(), 2 * v);
        prop_assert_eq!(g.nnn_edges().len(), 2 * v);
        prop_assert!((0..v).all(|i| g.degree(i) == 4));
        let open = LatticeGraph::square(width, Boundary::Open).unwrap();
        prop_assert_eq!(open.nn_edges().len(), 2 * width * (width - 1));
        prop_assert_eq!(open.nnn_edges().len(), 2 * (width - 1) * (width - 1));
    }

    #[test]
    fn maximal_cliques_are_the_edges(width in 4usize..9, open in any::<bool>()) {
        let boundary = if open { Boundary::Open } else { Boundary::Periodic };
        let g = LatticeGraph::square(width, boundary).unwrap();
        prop_assert!(!g.has_triangle());
        let mut cliques = g.maximal_cliques();
        cliques.sort();
        let mut edges: Vec<Vec<usize>> = g.nn_edges().iter().map(|&(i, j)| vec![i, j]).collect();
        edges.sort();
        prop_assert_eq!(cliques, edges);
    }

    #[test]
    fn neighbours_are_symmetric(width in 3usize..8, open in any::<bool>()) {
        let boundary = if open { Boundary::Open } else { Boundary::Periodic };
        let g = LatticeGraph::square(width, boundary).unwrap();
        for i in 0..g.vertex_count() {
            for j in g.neighbors(i).unwrap() {
                prop_assert!(g.neighbors(j).unwrap().contains(&i));
            }
        }
    }
}
