//! Tensor-product Gauss–Legendre quadrature over all field values of a tiny
//! graph (at most five sites).
//!
//! Used as ground truth for partition functions, free energies, expectation
//! values and Kullback–Leibler divergences. Each site gets its own truncated
//! interval chosen from a per-site lower bound of the action so that the
//! discarded tail is below `exp(-tail)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{CouplingSet, PairAction, TargetActionSpec};
use crate::lattice::LatticeGraph;

/// Largest number of sites the oracle accepts.
pub const MAX_SITES: usize = 5;

/// Gauss–Legendre nodes and weights on `[-phi_max, phi_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub node_count: usize,
    pub phi_max: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn gauss_legendre(node_count: usize, phi_max: f64) -> Result<Self> {
        if node_count < 32 {
            return Err(Error::InvalidSettings(format!(
                "quadrature needs at least 32 nodes, got {node_count}"
            )));
        }
        if !(phi_max > 0.0 && phi_max.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "truncation must be positive, got {phi_max}"
            )));
        }
        let (x, w) = legendre_nodes(node_count);
        Ok(Self {
            node_count,
            phi_max,
            nodes: x.iter().map(|t| t * phi_max).collect(),
            weights: w.iter().map(|v| v * phi_max).collect(),
        })
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// by Newton iteration on the Legendre recurrence.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    (x, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Nodes per dimension.
    pub node_count: usize,
    /// Per-site truncation: the bounding potential rises by at least this
    /// much above its minimum outside the interval.
    pub tail: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            node_count: 64,
            tail: 45.0,
        }
    }
}

impl OracleSettings {
    pub fn with_nodes(node_count: usize) -> Self {
        Self {
            node_count,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionFunction {
    pub log_z: f64,
    pub z: f64,
    /// `F = -ln Z`.
    pub free_energy: f64,
}

impl PartitionFunction {
    fn from_log(log_z: f64) -> Result<Self> {
        if !log_z.is_finite() || log_z > f64::MAX.ln() {
            return Err(Error::Overflow(log_z));
        }
        Ok(Self {
            log_z,
            z: log_z.exp(),
            free_energy: -log_z,
        })
    }
}

/// Value of `U(x) = q x² + u x⁴ - l |x|` .
fn bound_value((q, u, l): (f64, f64, f64), x: f64) -> f64 {
    let x2 = x * x;
    q * x2 + u * x2 * x2 - l * x.abs()
}

/// Minimum of the bounding potential and the truncation radius.
fn truncation(coeffs: (f64, f64, f64), tail: f64) -> Result<(f64, f64)> {
    let (q, u, l) = coeffs;
    if u < 0.0 || (u == 0.0 && q <= 0.0) {
        return Err(Error::NonIntegrable(format!(
            "site bound U(x) = {q} x² + {u} x⁴ is not confining"
        )));
    }
    let deriv = |x: f64| 4.0 * u * x * x * x + 2.0 * q * x - l;
    // U is decreasing then increasing on x > 0; locate the turning point.
    let mut hi = 1.0;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_min = 0.5 * (lo + hi);
    let u_min = bound_value(coeffs, x_min).min(0.0);
    let mut top = x_min.max(1e-3);
    while bound_value(coeffs, top) - u_min < tail {
        top *= 2.0;
    }
    let mut bottom = x_min;
    for _ in 0..200 {
        let mid = 0.5 * (bottom + top);
        if bound_value(coeffs, mid) - u_min < tail {
            bottom = mid;
        } else {
            top = mid;
        }
    }
    Ok((u_min, top))
}

/// Result of one pass over the tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Integral {
    pub partition: PartitionFunction,
    /// `⟨O_k⟩` for every requested observable component.
    pub means: Vec<f64>,
}

struct Layout {
    grids: Vec<QuadratureGrid>,
    // per site and node: ln(weight) - site polynomial - shift share
    site_log: Vec<Vec<f64>>,
    // per site: earlier sites it couples to
    earlier: Vec<Vec<(usize, f64)>>,
}

impl Layout {
    fn new(action: &PairAction, settings: &OracleSettings) -> Result<(Self, f64)> {
        let n = action.site_count();
        if n > MAX_SITES {
            return Err(Error::TooLarge {
                vertices: n,
                limit: MAX_SITES,
            });
        }
        if n == 0 {
            return Err(Error::InvalidSettings("empty action".into()));
        }
        let mut shift = 0.0;
        let mut grids = Vec::with_capacity(n);
        let mut site_log = Vec::with_capacity(n);
        for (i, coeffs) in action.site_lower_bounds().into_iter().enumerate() {
            let (u_min, phi_max) = truncation(coeffs, settings.tail)?;
            let grid = QuadratureGrid::gauss_legendre(settings.node_count, phi_max)?;
            // exp(-S) <= exp(-Σ U_i) <= exp(-Σ U_min), so shifting by Σ U_min keeps terms <= 1.
            site_log.push(
                grid.nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&x, &w)| w.ln() - action.site_polynomial(i, x) + u_min)
                    .collect(),
            );
            shift -= u_min;
            grids.push(grid);
        }
        let mut earlier = vec![Vec::new(); n];
        for &(i, j, c) in &action.pairs {
            if c != 0.0 {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                earlier[hi].push((lo, c));
            }
        }
        Ok((
            Self {
                grids,
                site_log,
                earlier,
            },
            shift,
        ))
    }

    /// Adds `exp(exponent)` weighted sums of `[1, O_1, ..]` into `acc`.
    fn recurse<F>(&self, depth: usize, exponent: f64, phi: &mut [f64], acc: &mut [f64], obs: &F, scratch: &mut [f64])
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let field: f64 = self.earlier[depth].iter().map(|&(j, c)| c * phi[j]).sum();
        let last = depth + 1 == phi.len();
        for (k, &x) in self.grids[depth].nodes.iter().enumerate() {
            let e = exponent + self.site_log[depth][k] + x * field;
            phi[depth] = x;
            if last {
                let weight = e.exp();
                acc[0] += weight;
                if acc.len() > 1 {
                    obs(phi, scratch);
                    for (a, &o) in acc[1..].iter_mut().zip(scratch.iter()) {
                        *a += weight * o;
                    }
                }
            } else {
                self.recurse(depth + 1, e, phi, acc, obs, scratch);
            }
        }
    }
}

/// Integrates `exp(-S)` and `O_k exp(-S)` over the tensor grid.
///
/// `observables` writes `count` values for a configuration. The outer loop is
/// split across threads by the first site's node; partial sums are combined
/// in node order so results do not depend on scheduling.
pub fn integrate<F>(
    action: &PairAction,
    settings: &OracleSettings,
    count: usize,
    observables: F,
) -> Result<Integral>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let (layout, shift) = Layout::new(action, settings)?;
    let n = action.site_count();
    let partials: Vec<Vec<f64>> = (0..layout.grids[0].node_count)
        .into_par_iter()
        .map(|k0| {
            let mut acc = vec![0.0; count + 1];
            let mut scratch = vec![0.0; count];
            let mut phi = vec![0.0; n];
            let x0 = layout.grids[0].nodes[k0];
            phi[0] = x0;
            let e0 = layout.site_log[0][k0];
            if n == 1 {
                let weight = e0.exp();
                acc[0] = weight;
                if count > 0 {
                    observables(&phi, &mut scratch);
                    for (a, &o) in acc[1..].iter_mut().zip(&scratch) {
                        *a = weight * o;
                    }
                }
            } else {
                layout.recurse(1, e0, &mut phi, &mut acc, &observables, &mut scratch);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; count + 1];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    if !(total[0] > 0.0) {
        return Err(Error::NonIntegrable(
            "quadrature sum underflowed to zero".into(),
        ));
    }
    let log_z = shift + total[0].ln();
    Ok(Integral {
        partition: PartitionFunction::from_log(log_z)?,
        means: total[1..].iter().map(|v| v / total[0]).collect(),
    })
}

pub fn pair_partition_function(action: &PairAction, settings: &OracleSettings) -> Result<PartitionFunction> {
    Ok(integrate(action, settings, 0, |_, _| {})?.partition)
}

/// `Z = ∫ exp(-S(φ; θ)) dφ` and `F = -ln Z`.
pub fn partition_function(
    theta: &CouplingSet,
    graph: &LatticeGraph,
    settings: &OracleSettings,
) -> Result<PartitionFunction> {
    pair_partition_function(&PairAction::from_couplings(theta, graph)?, settings)
}

/// `⟨O⟩` under `p(φ; θ)` for a real observable.
pub fn exact_expectation<F>(
    observable: F,
    theta: &CouplingSet,
    graph: &LatticeGraph,
    settings: &OracleSettings,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let action = PairAction::from_couplings(theta, graph)?;
    Ok(integrate(&action, settings, 1, |phi, out| out[0] = observable(phi))?.means[0])
}

/// `⟨O⟩` for a complex observable.
pub fn exact_expectation_complex<F>(
    observable: F,
    theta: &CouplingSet,
    graph: &LatticeGraph,
    settings: &OracleSettings,
) -> Result<Complex64>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let action = PairAction::from_couplings(theta, graph)?;
    let m = integrate(&action, settings, 2, |phi, out| {
        let v = observable(phi);
        out[0] = v.re;
        out[1] = v.im;
    })?
    .means;
    Ok(Complex64::new(m[0], m[1]))
}

/// Distribution `q ∝ exp(-𝒜)` compared against in [`exact_kl`].
#[derive(Debug, Clone, Copy)]
pub enum KlTarget<'a> {
    Couplings(&'a CouplingSet),
    /// Real part only; the imaginary term has no density interpretation.
    Action(&'a TargetActionSpec),
}

impl KlTarget<'_> {
    fn pair_action(&self, graph: &LatticeGraph) -> Result<PairAction> {
        match self {
            KlTarget::Couplings(theta) => PairAction::from_couplings(theta, graph),
            KlTarget::Action(spec) => PairAction::from_target(&spec.real_part(), graph),
        }
    }
}

/// `KL(p‖q) = ⟨𝒜 - S⟩_p + F_p - F_q`.
pub fn exact_kl(
    theta_p: &CouplingSet,
    q: KlTarget<'_>,
    graph: &LatticeGraph,
    settings: &OracleSettings,
) -> Result<f64> {
    let p_action = PairAction::from_couplings(theta_p, graph)?;
    let q_action = q.pair_action(graph)?;
    let p = integrate(&p_action, settings, 1, |phi, out| {
        out[0] = q_action.action(phi) - p_action.action(phi)
    })?;
    let fq = pair_partition_function(&q_action, settings)?.free_energy;
    Ok(p.means[0] + p.partition.free_energy - fq)
}

/// Variational free energy `𝓕 = ⟨𝒜 - S⟩_p + F_p` for a real target.
pub fn exact_variational_free_energy(
    theta: &CouplingSet,
    spec: &TargetActionSpec,
    graph: &LatticeGraph,
    settings: &OracleSettings,
) -> Result<f64> {
    let p_action = PairAction::from_couplings(theta, graph)?;
    let q_action = PairAction::from_target(&spec.real_part(), graph)?;
    let p = integrate(&p_action, settings, 1, |phi, out| {
        out[0] = q_action.action(phi) - p_action.action(phi)
    })?;
    Ok(p.means[0] + p.partition.free_energy)
}
