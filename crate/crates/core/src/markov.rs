//! Randomized checks of the Markov-field structure of the model action:
//! clique factorization and locality of the single-site conditionals.

use rand::Rng;

use crate::error::Result;
use crate::field::{action, clique_log_potentials, conditional_log_density_delta, CouplingSet};
use crate::lattice::LatticeGraph;
use crate::sampler::chain_rng;

pub const FACTORIZATION_TOLERANCE: f64 = 1e-10;
pub const LOCALITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest violation over all cases, in the suite's own measure.
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn random_couplings(graph: &LatticeGraph, rng: &mut impl Rng) -> CouplingSet {
    let mut theta = CouplingSet::zeros(graph);
    theta.w.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    theta.a.iter_mut().for_each(|a| *a = rng.random_range(-1.0..2.0));
    theta.b.iter_mut().for_each(|b| *b = rng.random_range(0.01..1.0));
    theta.r.iter_mut().for_each(|r| *r = rng.random_range(-1.0..1.0));
    theta
}

fn random_field(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// `max |Σ_c ln ψ_c + S|` over `cases` random `(θ, φ)`.
pub fn factorization_suite(graph: &LatticeGraph, cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = chain_rng(seed);
    let mut max_error = 0.0f64;
    for _ in 0..cases {
        let theta = random_couplings(graph, &mut rng);
        let phi = random_field(graph.vertex_count(), &mut rng);
        let total: f64 = clique_log_potentials(&phi, &theta, graph)?.iter().sum();
        max_error = max_error.max((total + action(&phi, &theta, graph)?).abs());
    }
    Ok(SuiteReport {
        name: "factorization",
        cases,
        max_error,
        tolerance: FACTORIZATION_TOLERANCE,
    })
}

/// For random `(θ, φ, i, x1, x2)`, redraws every site outside `i` and its
/// neighbours and reports the largest relative change of the conditional
/// log-density difference.
pub fn locality_suite(graph: &LatticeGraph, cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = chain_rng(seed);
    let n = graph.vertex_count();
    let mut max_error = 0.0f64;
    for _ in 0..cases {
        let theta = random_couplings(graph, &mut rng);
        let mut phi = random_field(n, &mut rng);
        let i = rng.random_range(0..n);
        let (x1, x2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let before = conditional_log_density_delta(i, x1, x2, &phi, &theta, graph)?;
        let mut keep = graph.neighbors(i)?;
        keep.push(i);
        for (k, v) in phi.iter_mut().enumerate() {
            if !keep.contains(&k) {
                *v = rng.random_range(-10.0..10.0);
            }
        }
        let after = conditional_log_density_delta(i, x1, x2, &phi, &theta, graph)?;
        max_error = max_error.max((after - before).abs() / before.abs().max(1.0));
    }
    Ok(SuiteReport {
        name: "locality",
        cases,
        max_error,
        tolerance: LOCALITY_TOLERANCE,
    })
}

/// Checks the conditional against a difference of full actions, so that the
/// locality suite cannot pass with a wrong (but local) formula.
pub fn conditional_consistency_suite(graph: &LatticeGraph, cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = chain_rng(seed);
    let n = graph.vertex_count();
    let mut max_error = 0.0f64;
    for _ in 0..cases {
        let theta = random_couplings(graph, &mut rng);
        let mut phi = random_field(n, &mut rng);
        let i = rng.random_range(0..n);
        let (x1, x2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let local = conditional_log_density_delta(i, x1, x2, &phi, &theta, graph)?;
        phi[i] = x1;
        let s1 = action(&phi, &theta, graph)?;
        phi[i] = x2;
        let s2 = action(&phi, &theta, graph)?;
        let scale = s1.abs().max(s2.abs()).max(1.0);
        max_error = max_error.max((local - (s2 - s1)).abs() / scale);
    }
    Ok(SuiteReport {
        name: "conditional consistency",
        cases,
        max_error,
        tolerance: FACTORIZATION_TOLERANCE,
    })
}
