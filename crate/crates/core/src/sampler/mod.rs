//! Metropolis Monte Carlo for `p(φ) ∝ exp(-S(φ))` and ensemble bookkeeping.
//!
//! Sites are updated in raster order with a uniform proposal of half-width
//! `δ`. The width is tuned in a pilot phase and then frozen, so measurements
//! come from a fixed transition kernel.

pub mod conditional;
pub mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{
    magnetization, target_terms_raw, CouplingSet, FieldConfiguration, PairAction, TargetActionSpec,
};
use crate::lattice::LatticeGraph;

pub use conditional::{sample_1d_quartic, QuarticDensity};
pub use stats::{
    integrated_autocorrelation_time, jackknife, jackknife_complex, jackknife_fn, JackknifeEstimate,
};

/// Random number generator of every chain: ChaCha with 8 rounds, seeded from
/// a `u64`. Its word position acts as a resumable counter.
pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Acceptance window targeted by the pilot tuning of `δ`.
pub const ACCEPTANCE_WINDOW: (f64, f64) = (0.4, 0.8);

/// Short hex digest of a sequence of reals (bitwise).
pub fn digest(values: impl IntoIterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn coupling_digest(theta: &CouplingSet) -> String {
    digest(theta.iter().copied())
}

/// Where a chain starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainStart {
    Zero,
    Constant(f64),
    /// Independent uniform values in `[-half_width, half_width]`.
    Random(f64),
    Given(FieldConfiguration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub thermalization: usize,
    pub measurements: usize,
    /// Sweeps between recorded configurations.
    pub skip: usize,
    /// Initial proposal half-width.
    pub delta: f64,
    pub seed: u64,
    /// Run the pilot tuning of `delta` before thermalization.
    pub tune_delta: bool,
    pub start: ChainStart,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            thermalization: 200,
            measurements: 500,
            skip: 2,
            delta: 1.0,
            seed: 1,
            tune_delta: true,
            start: ChainStart::Zero,
        }
    }
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.measurements == 0 || self.skip == 0 {
            return Err(Error::InvalidSettings(
                "measurement count and skip must be positive".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "proposal width must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// One Metropolis sweep in raster order. Returns the number of accepted moves.
pub fn metropolis_sweep<R: Rng + ?Sized>(
    phi: &mut [f64],
    action: &PairAction,
    delta: f64,
    rng: &mut R,
) -> usize {
    let mut accepted = 0;
    for i in 0..phi.len() {
        let proposal = phi[i] + rng.random_range(-delta..=delta);
        let ds = action.site_delta(phi, i, proposal);
        if accept(ds, rng) {
            phi[i] = proposal;
            accepted += 1;
        }
    }
    accepted
}

/// Metropolis rule `min(1, exp(-ΔS))`.
#[inline]
pub fn acceptance_probability(delta_action: f64) -> f64 {
    if delta_action <= 0.0 {
        1.0
    } else {
        (-delta_action).exp()
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(delta_action: f64, rng: &mut R) -> bool {
    delta_action <= 0.0 || rng.random::<f64>() < (-delta_action).exp()
}

/// A single Markov chain over one action.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    action: &'a PairAction,
    phi: Vec<f64>,
    delta: f64,
    rng: ChainRng,
}

impl<'a> Chain<'a> {
    pub fn new(action: &'a PairAction, start: &ChainStart, delta: f64, mut rng: ChainRng) -> Result<Self> {
        let n = action.site_count();
        let phi = match start {
            ChainStart::Zero => vec![0.0; n],
            ChainStart::Constant(c) => vec![*c; n],
            ChainStart::Random(h) => (0..n).map(|_| rng.random_range(-h..=*h)).collect(),
            ChainStart::Given(cfg) => {
                if cfg.len() != n {
                    return Err(Error::SizeMismatch {
                        what: "chain start",
                        expected: n,
                        got: cfg.len(),
                    });
                }
                cfg.values().to_vec()
            }
        };
        Ok(Self {
            action,
            phi,
            delta,
            rng,
        })
    }

    pub fn field(&self) -> &[f64] {
        &self.phi
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rng(&self) -> &ChainRng {
        &self.rng
    }

    pub fn into_parts(self) -> (Vec<f64>, ChainRng) {
        (self.phi, self.rng)
    }

    /// One sweep; returns the accepted fraction.
    pub fn sweep(&mut self) -> f64 {
        let acc = metropolis_sweep(&mut self.phi, self.action, self.delta, &mut self.rng);
        acc as f64 / self.phi.len() as f64
    }

    /// Pilot phase: rescale `δ` by 1.1 until two consecutive 10-sweep
    /// acceptance rates fall inside [`ACCEPTANCE_WINDOW`].
    pub fn tune_delta(&mut self) -> f64 {
        const SWEEPS: usize = 10;
        const MAX_ROUNDS: usize = 2000;
        let (lo, hi) = ACCEPTANCE_WINDOW;
        let mut in_band = 0;
        for _ in 0..MAX_ROUNDS {
            let rate = (0..SWEEPS).map(|_| self.sweep()).sum::<f64>() / SWEEPS as f64;
            if rate > hi {
                self.delta *= 1.1;
                in_band = 0;
            } else if rate < lo {
                self.delta /= 1.1;
                in_band = 0;
            } else {
                in_band += 1;
                if in_band == 2 {
                    break;
                }
            }
        }
        self.delta
    }
}

/// Provenance of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub thermalization: usize,
    pub skip: usize,
    /// Frozen proposal half-width used for measurements.
    pub delta: f64,
    pub acceptance: f64,
    /// Digest of the sampling action's couplings.
    pub action_digest: String,
}

/// Recorded configurations with cached per-configuration scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub configs: Vec<FieldConfiguration>,
    /// Sampling action `S_l` of each configuration.
    pub actions: Vec<f64>,
    /// Raw target terms `𝒜_l^(1..5)` when a target was attached.
    pub target_terms: Option<Vec<[f64; 5]>>,
    pub magnetizations: Vec<f64>,
    pub meta: EnsembleMeta,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Recomputes every cached scalar and compares to `tol` (absolute, scaled
    /// by magnitude).
    pub fn verify_cache(&self, action: &PairAction, graph: &LatticeGraph, tol: f64) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * b.abs().max(1.0);
        if self.configs.is_empty() {
            return Err(Error::InvalidSettings("empty ensemble".into()));
        }
        if self.actions.len() != self.len() || self.magnetizations.len() != self.len() {
            return Err(Error::SizeMismatch {
                what: "ensemble cache",
                expected: self.len(),
                got: self.actions.len().min(self.magnetizations.len()),
            });
        }
        if !(0.0..=1.0).contains(&self.meta.acceptance) {
            return Err(Error::InvalidSettings("acceptance outside [0, 1]".into()));
        }
        for (l, cfg) in self.configs.iter().enumerate() {
            if cfg.len() != graph.vertex_count() {
                return Err(Error::SizeMismatch {
                    what: "ensemble configuration",
                    expected: graph.vertex_count(),
                    got: cfg.len(),
                });
            }
            if !close(self.actions[l], action.action(cfg)) || !close(self.magnetizations[l], magnetization(cfg)) {
                return Err(Error::InvalidSettings(format!("cached scalars of record {l} are stale")));
            }
            if let Some(terms) = &self.target_terms {
                let fresh = target_terms_raw(cfg, graph);
                if terms.len() != self.len() || terms[l].iter().zip(&fresh).any(|(&a, &b)| !close(a, b)) {
                    return Err(Error::InvalidSettings(format!("cached target terms of record {l} are stale")));
                }
            }
        }
        Ok(())
    }

    /// Concatenates ensembles in the given order.
    pub fn concat(parts: Vec<Ensemble>) -> Result<Ensemble> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::InvalidSettings("no ensembles to merge".into()))?;
        let mut accepted = out.meta.acceptance * out.len() as f64;
        for part in iter {
            accepted += part.meta.acceptance * part.len() as f64;
            out.configs.extend(part.configs);
            out.actions.extend(part.actions);
            out.magnetizations.extend(part.magnetizations);
            match (&mut out.target_terms, part.target_terms) {
                (Some(a), Some(b)) => a.extend(b),
                (None, None) => {}
                _ => return Err(Error::InvalidSettings("mixed target-term caches".into())),
            }
        }
        out.meta.acceptance = accepted / out.len() as f64;
        Ok(out)
    }
}

/// The action an ensemble is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum SamplingAction<'a> {
    /// Model action `S(φ; θ)`.
    Model(&'a CouplingSet),
    /// Real part of a target action.
    Target(&'a TargetActionSpec),
}

impl SamplingAction<'_> {
    pub fn pair_action(&self, graph: &LatticeGraph) -> Result<PairAction> {
        match self {
            SamplingAction::Model(theta) => PairAction::from_couplings(theta, graph),
            SamplingAction::Target(spec) => PairAction::from_target(&spec.real_part(), graph),
        }
    }

    pub fn digest(&self) -> String {
        match self {
            SamplingAction::Model(theta) => coupling_digest(theta),
            SamplingAction::Target(spec) => {
                digest(spec.real_part().effective().into_iter())
            }
        }
    }
}

/// Thermalizes, then records a configuration every `skip` sweeps.
///
/// When `attach` is given, the raw target terms of each record are cached
/// for later reweighting.
pub fn run_chain(
    theta: &CouplingSet,
    graph: &LatticeGraph,
    settings: &ChainSettings,
    attach: Option<&TargetActionSpec>,
) -> Result<Ensemble> {
    run_chain_with(SamplingAction::Model(theta), graph, settings, attach)
}

pub fn run_chain_with(
    source: SamplingAction<'_>,
    graph: &LatticeGraph,
    settings: &ChainSettings,
    attach: Option<&TargetActionSpec>,
) -> Result<Ensemble> {
    settings.validate()?;
    if let Some(spec) = attach {
        spec.check_graph(graph)?;
    }
    if let SamplingAction::Model(theta) = source {
        for w in theta.integrability_warnings(graph) {
            log::warn!("{w}");
        }
    }
    let action = source.pair_action(graph)?;
    let (ensemble, _) = sample_ensemble(&action, graph, settings, attach.is_some(), chain_rng(settings.seed))?;
    Ok(Ensemble {
        meta: EnsembleMeta {
            action_digest: source.digest(),
            ..ensemble.meta
        },
        ..ensemble
    })
}

/// Core measurement loop shared by [`run_chain`] and the trainers. Returns the
/// ensemble and the chain's final configuration and generator.
pub(crate) fn sample_ensemble(
    action: &PairAction,
    graph: &LatticeGraph,
    settings: &ChainSettings,
    with_terms: bool,
    rng: ChainRng,
) -> Result<(Ensemble, (Vec<f64>, ChainRng))> {
    let mut chain = Chain::new(action, &settings.start, settings.delta, rng)?;
    if settings.tune_delta {
        chain.tune_delta();
    }
    for _ in 0..settings.thermalization {
        chain.sweep();
    }
    let n = settings.measurements;
    let mut configs = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut mags = Vec::with_capacity(n);
    let mut terms = with_terms.then(|| Vec::with_capacity(n));
    let mut accepted = 0.0;
    for _ in 0..n {
        for _ in 0..settings.skip {
            accepted += chain.sweep();
        }
        let phi = chain.field();
        actions.push(action.action(phi));
        mags.push(magnetization(phi));
        if let Some(t) = terms.as_mut() {
            t.push(target_terms_raw(phi, graph));
        }
        configs.push(FieldConfiguration::new(phi.to_vec())?);
    }
    let delta = chain.delta();
    let ensemble = Ensemble {
        configs,
        actions,
        target_terms: terms,
        magnetizations: mags,
        meta: EnsembleMeta {
            seed: settings.seed,
            thermalization: settings.thermalization,
            skip: settings.skip,
            delta,
            acceptance: accepted / (n * settings.skip) as f64,
            action_digest: String::new(),
        },
    };
    Ok((ensemble, chain.into_parts()))
}

/// Independent chains with the given seeds, run concurrently and merged in
/// ascending seed order.
pub fn run_chains(
    source: SamplingAction<'_>,
    graph: &LatticeGraph,
    settings: &ChainSettings,
    attach: Option<&TargetActionSpec>,
    seeds: &[u64],
) -> Result<Ensemble> {
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let parts = seeds
        .par_iter()
        .map(|&seed| {
            let s = ChainSettings {
                seed,
                ..settings.clone()
            };
            run_chain_with(source, graph, &s, attach)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::concat(parts)
}
