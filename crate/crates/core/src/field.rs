//! The φ⁴ actions, their coupling derivatives, clique potentials and the
//! complex target action with next-nearest-neighbour interactions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;

/// One real field value per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldConfiguration(Vec<f64>);

impl FieldConfiguration {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field configuration"));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for FieldConfiguration {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Inhomogeneous couplings `θ = {w_ij, a_i, b_i, r_i}` of
/// `S = -Σ w_ij φ_i φ_j + Σ a_i φ_i² + Σ b_i φ_i⁴ + Σ r_i φ_i`.
///
/// `w` is indexed like [`LatticeGraph::nn_edges`]. The same shape doubles as
/// the container for gradients with respect to the couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSet {
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r: Vec<f64>,
}

impl CouplingSet {
    pub fn zeros(graph: &LatticeGraph) -> Self {
        let n = graph.vertex_count();
        Self {
            w: vec![0.0; graph.nn_edges().len()],
            a: vec![0.0; n],
            b: vec![0.0; n],
            r: vec![0.0; n],
        }
    }

    pub fn homogeneous(graph: &LatticeGraph, w: f64, a: f64, b: f64) -> Self {
        let n = graph.vertex_count();
        Self {
            w: vec![w; graph.nn_edges().len()],
            a: vec![a; n],
            b: vec![b; n],
            r: vec![0.0; n],
        }
    }

    /// Couplings from the lattice parameters `κ_L, μ_L², λ_L`:
    /// `w = κ`, `a = (μ² + 4κ)/2`, `b = λ/4`.
    pub fn from_lattice_parameters(
        kappa: f64,
        mu_sq: f64,
        lambda: f64,
        graph: &LatticeGraph,
    ) -> Result<Self> {
        if !(kappa.is_finite() && mu_sq.is_finite() && lambda.is_finite()) {
            return Err(Error::NonFinite("lattice parameters"));
        }
        Ok(Self::homogeneous(
            graph,
            kappa,
            (mu_sq + 4.0 * kappa) / 2.0,
            lambda / 4.0,
        ))
    }

    /// Checks sizes against `graph` and finiteness.
    pub fn validate(&self, graph: &LatticeGraph) -> Result<()> {
        let n = graph.vertex_count();
        check_len("w", graph.nn_edges().len(), self.w.len())?;
        check_len("a", n, self.a.len())?;
        check_len("b", n, self.b.len())?;
        check_len("r", n, self.r.len())?;
        if self.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("couplings"));
        }
        Ok(())
    }

    /// Human readable integrability problems; empty when the Boltzmann
    /// weight is normalizable by the quartic or diagonal-dominance criterion.
    pub fn integrability_warnings(&self, graph: &LatticeGraph) -> Vec<String> {
        if self.b.iter().all(|&b| b > 0.0) {
            return Vec::new();
        }
        if self.b.iter().all(|&b| b == 0.0) {
            return (0..graph.vertex_count())
                .filter_map(|i| {
                    let bound: f64 = graph
                        .nn_incident(i)
                        .iter()
                        .map(|&(e, _)| self.w[e].abs())
                        .sum::<f64>()
                        / 2.0;
                    (self.a[i] <= bound).then(|| {
                        format!("site {i}: a = {} <= Σ|w|/2 = {bound} with b = 0", self.a[i])
                    })
                })
                .collect();
        }
        self.b
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b <= 0.0)
            .map(|(i, b)| format!("site {i}: quartic coupling b = {b} is not positive"))
            .collect()
    }

    /// Number of scalar components (`|w| + 3V`).
    pub fn len(&self) -> usize {
        self.w.len() + self.a.len() + self.b.len() + self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Components in the fixed order `w, a, b, r`.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .chain(&self.r)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w
            .iter_mut()
            .chain(&mut self.a)
            .chain(&mut self.b)
            .chain(&mut self.r)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Inverse of [`CouplingSet::to_flat`] for a graph's shape.
    pub fn from_flat(graph: &LatticeGraph, flat: &[f64]) -> Result<Self> {
        let mut out = Self::zeros(graph);
        check_len("flat couplings", out.len(), flat.len())?;
        for (dst, &src) in out.iter_mut().zip(flat) {
            *dst = src;
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Means of `(w, a, b, r)` over edges and sites.
    pub fn homogeneous_average(&self) -> [f64; 4] {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        [mean(&self.w), mean(&self.a), mean(&self.b), mean(&self.r)]
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::SizeMismatch {
            what,
            expected,
            got,
        })
    }
}

fn check_field(phi: &[f64], graph: &LatticeGraph) -> Result<()> {
    check_len("field configuration", graph.vertex_count(), phi.len())
}

fn check_inputs(phi: &[f64], theta: &CouplingSet, graph: &LatticeGraph) -> Result<()> {
    check_field(phi, graph)?;
    let n = graph.vertex_count();
    check_len("w", graph.nn_edges().len(), theta.w.len())?;
    check_len("a", n, theta.a.len())?;
    check_len("b", n, theta.b.len())?;
    check_len("r", n, theta.r.len())
}

#[inline]
fn site_term(theta: &CouplingSet, i: usize, x: f64) -> f64 {
    let x2 = x * x;
    theta.a[i] * x2 + theta.b[i] * x2 * x2 + theta.r[i] * x
}

/// The model action `S(φ; θ)`.
pub fn action(phi: &[f64], theta: &CouplingSet, graph: &LatticeGraph) -> Result<f64> {
    check_inputs(phi, theta, graph)?;
    Ok(action_unchecked(phi, theta, graph))
}

pub(crate) fn action_unchecked(phi: &[f64], theta: &CouplingSet, graph: &LatticeGraph) -> f64 {
    let hopping: f64 = graph
        .nn_edges()
        .iter()
        .zip(&theta.w)
        .map(|(&(i, j), w)| w * phi[i] * phi[j])
        .sum();
    let sites: f64 = phi
        .iter()
        .enumerate()
        .map(|(i, &x)| site_term(theta, i, x))
        .sum();
    sites - hopping
}

/// `∂S/∂θ` for every coupling component, in the shape of `θ`.
pub fn action_theta_gradient(
    phi: &[f64],
    theta: &CouplingSet,
    graph: &LatticeGraph,
) -> Result<CouplingSet> {
    check_inputs(phi, theta, graph)?;
    Ok(sufficient_statistics(phi, graph))
}

/// `∂S/∂θ` depends only on `φ`: `(-φ_iφ_j, φ_i², φ_i⁴, φ_i)`.
pub(crate) fn sufficient_statistics(phi: &[f64], graph: &LatticeGraph) -> CouplingSet {
    CouplingSet {
        w: graph.nn_edges().iter().map(|&(i, j)| -phi[i] * phi[j]).collect(),
        a: phi.iter().map(|x| x * x).collect(),
        b: phi.iter().map(|x| x.powi(4)).collect(),
        r: phi.to_vec(),
    }
}

/// `ln` of the unnormalized Boltzmann weight, `-S(φ; θ)`.
pub fn log_unnormalized_prob(phi: &[f64], theta: &CouplingSet, graph: &LatticeGraph) -> Result<f64> {
    Ok(-action(phi, theta, graph)?)
}

/// `ln ψ_c` for every pair clique `c = {i, j}` (indexed like the nn edges).
///
/// Site terms are split evenly over the `deg(i)` edges touching each site, so
/// that `Σ_c ln ψ_c = -S` on any graph without isolated vertices.
pub fn clique_log_potentials(
    phi: &[f64],
    theta: &CouplingSet,
    graph: &LatticeGraph,
) -> Result<Vec<f64>> {
    check_inputs(phi, theta, graph)?;
    if let Some(i) = (0..graph.vertex_count()).find(|&i| graph.degree(i) == 0) {
        return Err(Error::Unsupported(format!(
            "every vertex to lie on an edge (vertex {i} is isolated)"
        )));
    }
    let share = |i: usize| site_term(theta, i, phi[i]) / graph.degree(i) as f64;
    Ok(graph
        .nn_edges()
        .iter()
        .zip(&theta.w)
        .map(|(&(i, j), w)| w * phi[i] * phi[j] - share(i) - share(j))
        .collect())
}

/// Terms of `S` that involve site `i` when it holds the value `x`.
#[inline]
pub(crate) fn local_site_action(
    i: usize,
    x: f64,
    phi: &[f64],
    theta: &CouplingSet,
    graph: &LatticeGraph,
) -> f64 {
    let field: f64 = graph
        .nn_incident(i)
        .iter()
        .map(|&(e, j)| theta.w[e] * phi[j])
        .sum();
    site_term(theta, i, x) - x * field
}

/// `ln p(φ_i = x1 | rest) - ln p(φ_i = x2 | rest)`, evaluated from the
/// neighbourhood of `i` only.
pub fn conditional_log_density_delta(
    i: usize,
    x1: f64,
    x2: f64,
    phi: &[f64],
    theta: &CouplingSet,
    graph: &LatticeGraph,
) -> Result<f64> {
    graph.check_vertex(i)?;
    check_inputs(phi, theta, graph)?;
    Ok(local_site_action(i, x2, phi, theta, graph) - local_site_action(i, x1, phi, theta, graph))
}

/// Volume-averaged field `m = (1/V) Σ φ_i`.
pub fn magnetization(phi: &[f64]) -> f64 {
    phi.iter().sum::<f64>() / phi.len() as f64
}

/// Coefficients `g_1..g_5` of the target action
/// `𝒜 = g1 Σ_nn φφ + g2 Σ φ² + g3 Σ φ⁴ + g4 Σ_nnn φφ + i g5 Σ φ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetActionSpec {
    pub g: [f64; 5],
    pub active: [bool; 5],
}

impl TargetActionSpec {
    /// Couplings used for the complex-action study.
    pub const REFERENCE_COUPLINGS: [f64; 5] = [-1.0, 1.52425, 0.175, -1.0, 0.15];

    pub fn new(g: [f64; 5], active: [bool; 5]) -> Result<Self> {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target couplings"));
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::InvalidSettings("target action has no active terms".into()));
        }
        Ok(Self { g, active })
    }

    pub fn all_terms(g: [f64; 5]) -> Result<Self> {
        Self::new(g, [true; 5])
    }

    pub fn reference() -> Self {
        Self::all_terms(Self::REFERENCE_COUPLINGS).expect("finite")
    }

    /// Homogeneous φ⁴ action `-w Σφφ + a Σφ² + b Σφ⁴` as a target.
    pub fn phi4(w: f64, a: f64, b: f64) -> Result<Self> {
        Self::new([-w, a, b, 0.0, 0.0], [true, true, true, false, false])
    }

    /// Same couplings with the imaginary term switched off.
    pub fn real_part(&self) -> Self {
        let mut active = self.active;
        active[4] = false;
        Self { g: self.g, active }
    }

    pub fn has_imaginary(&self) -> bool {
        self.active[4] && self.g[4] != 0.0
    }

    pub fn needs_nnn(&self) -> bool {
        self.active[3]
    }

    /// Effective coefficients, zero for inactive terms.
    pub fn effective(&self) -> [f64; 5] {
        let mut g = self.g;
        for (gk, &on) in g.iter_mut().zip(&self.active) {
            if !on {
                *gk = 0.0;
            }
        }
        g
    }

    /// `𝒜` from precomputed terms `𝒜^(1..5)`.
    pub fn combine(&self, terms: &[f64; 5]) -> Complex64 {
        let g = self.effective();
        let re = g[0] * terms[0] + g[1] * terms[1] + g[2] * terms[2] + g[3] * terms[3];
        Complex64::new(re, g[4] * terms[4])
    }

    pub(crate) fn check_graph(&self, graph: &LatticeGraph) -> Result<()> {
        if self.needs_nnn() && !graph.is_square() {
            return Err(Error::Unsupported(
                "a square lattice with next-nearest-neighbour edges for the g4 term".into(),
            ));
        }
        Ok(())
    }
}

/// Per-term values `𝒜^(k)` and the combined complex action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTerms {
    pub terms: [f64; 5],
    pub total: Complex64,
}

/// Raw terms `𝒜^(1..5)`, independent of the coefficients.
pub(crate) fn target_terms_raw(phi: &[f64], graph: &LatticeGraph) -> [f64; 5] {
    let pair_sum = |edges: &[(usize, usize)]| -> f64 {
        edges.iter().map(|&(i, j)| phi[i] * phi[j]).sum()
    };
    let (sq, quart) = phi.iter().fold((0.0, 0.0), |(s, q), &x| {
        let x2 = x * x;
        (s + x2, q + x2 * x2)
    });
    [
        pair_sum(graph.nn_edges()),
        sq,
        quart,
        pair_sum(graph.nnn_edges()),
        sq,
    ]
}

pub fn target_action_terms(
    phi: &[f64],
    spec: &TargetActionSpec,
    graph: &LatticeGraph,
) -> Result<TargetTerms> {
    check_field(phi, graph)?;
    spec.check_graph(graph)?;
    let terms = target_terms_raw(phi, graph);
    Ok(TargetTerms {
        terms,
        total: spec.combine(&terms),
    })
}

/// A real action that is a sum of pair products and per-site polynomials,
/// `S = -Σ c_ij φ_i φ_j + Σ (r_i φ_i + a_i φ_i² + b_i φ_i⁴)`.
///
/// This is the common form of the model action, the real part of the target
/// action, and the joint action of the φ⁴ neural network; the sampler and the
/// quadrature oracle work on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAction {
    pub(crate) linear: Vec<f64>,
    pub(crate) quadratic: Vec<f64>,
    pub(crate) quartic: Vec<f64>,
    pub(crate) pairs: Vec<(usize, usize, f64)>,
    // per site: (other site, coupling)
    pub(crate) incident: Vec<Vec<(usize, f64)>>,
}

impl PairAction {
    pub fn new(
        linear: Vec<f64>,
        quadratic: Vec<f64>,
        quartic: Vec<f64>,
        pairs: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let n = quadratic.len();
        check_len("linear coefficients", n, linear.len())?;
        check_len("quartic coefficients", n, quartic.len())?;
        let mut incident = vec![Vec::new(); n];
        for &(i, j, c) in &pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    count: n,
                });
            }
            if c != 0.0 {
                incident[i].push((j, c));
                incident[j].push((i, c));
            }
        }
        Ok(Self {
            linear,
            quadratic,
            quartic,
            pairs,
            incident,
        })
    }

    pub fn from_couplings(theta: &CouplingSet, graph: &LatticeGraph) -> Result<Self> {
        theta.validate(graph)?;
        let pairs = graph
            .nn_edges()
            .iter()
            .zip(&theta.w)
            .map(|(&(i, j), &w)| (i, j, w))
            .collect();
        Self::new(theta.r.clone(), theta.a.clone(), theta.b.clone(), pairs)
    }

    /// Real part of a target action (the `g5` term is dropped).
    pub fn from_target(spec: &TargetActionSpec, graph: &LatticeGraph) -> Result<Self> {
        spec.check_graph(graph)?;
        let g = spec.effective();
        let n = graph.vertex_count();
        let mut pairs: Vec<(usize, usize, f64)> =
            graph.nn_edges().iter().map(|&(i, j)| (i, j, -g[0])).collect();
        pairs.extend(graph.nnn_edges().iter().map(|&(i, j)| (i, j, -g[3])));
        Self::new(vec![0.0; n], vec![g[1]; n], vec![g[2]; n], pairs)
    }

    pub fn site_count(&self) -> usize {
        self.quadratic.len()
    }

    #[inline]
    pub(crate) fn site_polynomial(&self, i: usize, x: f64) -> f64 {
        let x2 = x * x;
        self.linear[i] * x + self.quadratic[i] * x2 + self.quartic[i] * x2 * x2
    }

    pub fn action(&self, phi: &[f64]) -> f64 {
        let pairs: f64 = self.pairs.iter().map(|&(i, j, c)| c * phi[i] * phi[j]).sum();
        let sites: f64 = phi
            .iter()
            .enumerate()
            .map(|(i, &x)| self.site_polynomial(i, x))
            .sum();
        sites - pairs
    }

    /// `S(φ with φ_i = new) - S(φ)`.
    #[inline]
    pub fn site_delta(&self, phi: &[f64], i: usize, new: f64) -> f64 {
        let old = phi[i];
        let field: f64 = self.incident[i].iter().map(|&(j, c)| c * phi[j]).sum();
        self.site_polynomial(i, new) - self.site_polynomial(i, old) - (new - old) * field
    }

    /// Lower bound `S ≥ Σ_i U_i(φ_i)` with
    /// `U_i(x) = (a_i - Σ_j |c_ij|/2) x² + b_i x⁴ - |r_i| |x|`; returns the
    /// per-site `(quadratic, quartic, |linear|)` coefficients of `U_i`.
    pub(crate) fn site_lower_bounds(&self) -> Vec<(f64, f64, f64)> {
        (0..self.site_count())
            .map(|i| {
                let spread: f64 = self.incident[i].iter().map(|&(_, c)| c.abs()).sum::<f64>() / 2.0;
                (
                    self.quadratic[i] - spread,
                    self.quartic[i],
                    self.linear[i].abs(),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> LatticeGraph {
        LatticeGraph::bipartite(1, 1).unwrap()
    }

    fn chain_theta() -> CouplingSet {
        CouplingSet {
            w: vec![0.5],
            a: vec![0.7, 0.7],
            b: vec![0.1, 0.1],
            r: vec![0.0, 0.0],
        }
    }

    fn random_theta(graph: &LatticeGraph, rng: &mut impl Rng) -> CouplingSet {
        let mut theta = CouplingSet::zeros(graph);
        for w in &mut theta.w {
            *w = rng.random_range(-1.0..1.0);
        }
        for i in 0..graph.vertex_count() {
            theta.a[i] = rng.random_range(-1.0..2.0);
            theta.b[i] = rng.random_range(0.01..1.0);
            theta.r[i] = rng.random_range(-0.5..0.5);
        }
        theta
    }

    fn random_phi(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn lattice_parameter_substitution() {
        let g = LatticeGraph::square(3, Boundary::Periodic).unwrap();
        let t = CouplingSet::from_lattice_parameters(1.0, -0.8, 0.7, &g).unwrap();
        assert_eq!(t.w[0], 1.0);
        assert!((t.a[0] - 1.6).abs() < 1e-15);
        assert!((t.b[0] - 0.175).abs() < 1e-15);

        let t = CouplingSet::from_lattice_parameters(0.0, 2.0, 0.0, &g).unwrap();
        assert_eq!((t.w[0], t.a[0], t.b[0]), (0.0, 1.0, 0.0));

        let t = CouplingSet::from_lattice_parameters(1.0, -4.0, 0.7, &g).unwrap();
        assert_eq!(t.a[0], 0.0);

        assert!(CouplingSet::from_lattice_parameters(f64::NAN, 0.0, 0.0, &g).is_err());
    }

    #[test]
    fn two_site_action() {
        let s = action(&[1.0, -2.0], &chain_theta(), &chain()).unwrap();
        assert!((s - 6.2).abs() < 1e-12);
        assert!((log_unnormalized_prob(&[1.0, -2.0], &chain_theta(), &chain()).unwrap() + 6.2).abs() < 1e-12);
        assert_eq!(action(&[0.0, 0.0], &chain_theta(), &chain()).unwrap(), 0.0);
        assert!(matches!(
            action(&[0.0], &chain_theta(), &chain()),
            Err(Error::SizeMismatch { .. })
        ));
    }

    /// Direct evaluation of the homogeneous lattice action in terms of κ, μ², λ.
    fn lattice_action(kappa: f64, mu_sq: f64, lambda: f64, phi: &[f64], l: usize) -> f64 {
        let mut hop = 0.0;
        let mut sq = 0.0;
        let mut quart = 0.0;
        for y in 0..l {
            for x in 0..l {
                let v = phi[y * l + x];
                hop += v * (phi[y * l + (x + 1) % l] + phi[((y + 1) % l) * l + x]);
                sq += v * v;
                quart += v.powi(4);
            }
        }
        -kappa * hop + (mu_sq + 4.0 * kappa) / 2.0 * sq + lambda / 4.0 * quart
    }

    #[test]
    fn homogeneous_matches_lattice_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = 5;
        let g = LatticeGraph::square(l, Boundary::Periodic).unwrap();
        let (kappa, mu_sq, lambda) = (0.9, -0.8, 0.7);
        let theta = CouplingSet::from_lattice_parameters(kappa, mu_sq, lambda, &g).unwrap();
        for _ in 0..20 {
            let phi = random_phi(l * l, &mut rng);
            let s = action(&phi, &theta, &g).unwrap();
            let expected = lattice_action(kappa, mu_sq, lambda, &phi, l);
            assert!((s - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_examples() {
        let grad = action_theta_gradient(&[1.0, -2.0], &chain_theta(), &chain()).unwrap();
        assert_eq!(grad.w[0], 2.0);
        assert_eq!(grad.b[1], 16.0);
        assert_eq!(grad.a[1], 4.0);
        assert_eq!(grad.r[0], 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = LatticeGraph::square(3, Boundary::Open).unwrap();
        let eps = 1e-5;
        for _ in 0..5 {
            let theta = random_theta(&g, &mut rng);
            let phi = random_phi(g.vertex_count(), &mut rng);
            let grad = action_theta_gradient(&phi, &theta, &g).unwrap().to_flat();
            let flat = theta.to_flat();
            for k in 0..flat.len() {
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[k] += eps;
                minus[k] -= eps;
                let sp = action(&phi, &CouplingSet::from_flat(&g, &plus).unwrap(), &g).unwrap();
                let sm = action(&phi, &CouplingSet::from_flat(&g, &minus).unwrap(), &g).unwrap();
                let fd = (sp - sm) / (2.0 * eps);
                assert!((fd - grad[k]).abs() <= 1e-8 * grad[k].abs().max(1.0), "k={k}");
            }
        }
    }

    #[test]
    fn ratio_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = LatticeGraph::square(4, Boundary::Periodic).unwrap();
        let theta = random_theta(&g, &mut rng);
        for _ in 0..10 {
            let p1 = random_phi(16, &mut rng);
            let p2 = random_phi(16, &mut rng);
            let lhs = log_unnormalized_prob(&p1, &theta, &g).unwrap()
                - log_unnormalized_prob(&p2, &theta, &g).unwrap();
            let rhs = action(&p2, &theta, &g).unwrap() - action(&p1, &theta, &g).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn clique_potentials() {
        let lp = clique_log_potentials(&[1.0, -2.0], &chain_theta(), &chain()).unwrap();
        assert_eq!(lp.len(), 1);
        assert!((lp[0] + 6.2).abs() < 1e-12);

        let g = LatticeGraph::square(3, Boundary::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = random_theta(&g, &mut rng);
        let phi = random_phi(9, &mut rng);
        let sum: f64 = clique_log_potentials(&phi, &theta, &g).unwrap().iter().sum();
        assert!((sum + action(&phi, &theta, &g).unwrap()).abs() <= 1e-10);

        let zeros = clique_log_potentials(&[0.0; 9], &theta, &g).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditional_delta_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = LatticeGraph::square(4, Boundary::Periodic).unwrap();
        let theta = random_theta(&g, &mut rng);
        let phi = random_phi(16, &mut rng);
        assert_eq!(conditional_log_density_delta(5, 0.3, 0.3, &phi, &theta, &g).unwrap(), 0.0);
        assert!(conditional_log_density_delta(16, 0.0, 1.0, &phi, &theta, &g).is_err());

        for i in 0..16 {
            let (x1, x2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let d = conditional_log_density_delta(i, x1, x2, &phi, &theta, &g).unwrap();
            let mut p1 = phi.clone();
            p1[i] = x1;
            let mut p2 = phi.clone();
            p2[i] = x2;
            let full = -action(&p1, &theta, &g).unwrap() + action(&p2, &theta, &g).unwrap();
            assert!((d - full).abs() <= 1e-12 * full.abs().max(1.0));
        }
    }

    #[test]
    fn target_terms_on_constant_field() {
        let g = LatticeGraph::square(3, Boundary::Periodic).unwrap();
        let spec = TargetActionSpec::reference();
        let t = target_action_terms(&[1.0; 9], &spec, &g).unwrap();
        assert_eq!(t.terms, [18.0, 9.0, 9.0, 18.0, 9.0]);
        // -18 + 13.71825 + 1.575 - 18 = -20.70675
        assert!((t.total.re + 20.70675).abs() < 1e-12);
        assert!((t.total.im - 1.35).abs() < 1e-12);

        let t = target_action_terms(&[0.0; 9], &spec, &g).unwrap();
        assert_eq!(t.terms, [0.0; 5]);
        assert_eq!(t.total, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn target_without_nnn_term_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = LatticeGraph::square(4, Boundary::Open).unwrap();
        let (w, a, b) = (0.4, 0.9, 0.2);
        let theta = CouplingSet::homogeneous(&g, w, a, b);
        let spec = TargetActionSpec::phi4(w, a, b).unwrap();
        for _ in 0..10 {
            let phi = random_phi(16, &mut rng);
            let t = target_action_terms(&phi, &spec, &g).unwrap();
            let s = action(&phi, &theta, &g).unwrap();
            assert!((t.total.re - s).abs() < 1e-12 * s.abs().max(1.0));
            assert_eq!(t.total.im, 0.0);
        }
    }

    #[test]
    fn nnn_term_needs_square_lattice() {
        let g = LatticeGraph::bipartite(2, 2).unwrap();
        assert!(target_action_terms(&[0.0; 4], &TargetActionSpec::reference(), &g).is_err());
        let spec = TargetActionSpec::phi4(0.1, 0.5, 0.1).unwrap();
        assert!(target_action_terms(&[0.0; 4], &spec, &g).is_ok());
        assert!(TargetActionSpec::new([0.0; 5], [false; 5]).is_err());
    }

    #[test]
    fn magnetization_examples() {
        assert_eq!(magnetization(&[1.0, -2.0]), -0.5);
        assert_eq!(magnetization(&[0.3; 7]), 0.3);
        let phi = [0.2, -1.3, 4.0];
        let neg: Vec<f64> = phi.iter().map(|x| -x).collect();
        assert_eq!(magnetization(&neg), -magnetization(&phi));
    }

    #[test]
    fn z2_symmetry_and_its_breaking() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = LatticeGraph::square(4, Boundary::Periodic).unwrap();
        let mut theta = random_theta(&g, &mut rng);
        theta.r.iter_mut().for_each(|r| *r = 0.0);
        for _ in 0..20 {
            let phi = random_phi(16, &mut rng);
            let neg: Vec<f64> = phi.iter().map(|x| -x).collect();
            let (s, sn) = (action(&phi, &theta, &g).unwrap(), action(&neg, &theta, &g).unwrap());
            assert!((s - sn).abs() < 1e-12 * s.abs().max(1.0));
        }
        theta.r[3] = 0.2;
        let phi = random_phi(16, &mut rng);
        let neg: Vec<f64> = phi.iter().map(|x| -x).collect();
        assert_ne!(action(&phi, &theta, &g).unwrap(), action(&neg, &theta, &g).unwrap());
    }

    #[test]
    fn integrability_warnings() {
        let g = LatticeGraph::square(3, Boundary::Periodic).unwrap();
        assert!(CouplingSet::homogeneous(&g, 1.0, 1.6, 0.175).integrability_warnings(&g).is_empty());
        // Gaussian: a must exceed Σ|w|/2 = 2w on degree-4 sites.
        assert!(CouplingSet::homogeneous(&g, 0.2, 0.5, 0.0).integrability_warnings(&g).is_empty());
        assert_eq!(CouplingSet::homogeneous(&g, 0.3, 0.5, 0.0).integrability_warnings(&g).len(), 9);
        let mut mixed = CouplingSet::homogeneous(&g, 0.1, 0.5, 0.1);
        mixed.b[2] = 0.0;
        assert_eq!(mixed.integrability_warnings(&g).len(), 1);
    }

    #[test]
    fn pair_action_agrees_with_model_and_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = LatticeGraph::square(4, Boundary::Periodic).unwrap();
        let theta = random_theta(&g, &mut rng);
        let pa = PairAction::from_couplings(&theta, &g).unwrap();
        let spec = TargetActionSpec::reference();
        let ta = PairAction::from_target(&spec, &g).unwrap();
        for _ in 0..10 {
            let phi = random_phi(16, &mut rng);
            let s = action(&phi, &theta, &g).unwrap();
            assert!((pa.action(&phi) - s).abs() < 1e-12 * s.abs().max(1.0));
            let a = target_action_terms(&phi, &spec, &g).unwrap().total.re;
            assert!((ta.action(&phi) - a).abs() < 1e-12 * a.abs().max(1.0));
            let i = rng.random_range(0..16);
            let x = rng.random_range(-2.0..2.0);
            let mut moved = phi.clone();
            moved[i] = x;
            let d = pa.site_delta(&phi, i, x);
            let full = pa.action(&moved) - pa.action(&phi);
            assert!((d - full).abs() < 1e-11 * full.abs().max(1.0));
        }
    }
}
