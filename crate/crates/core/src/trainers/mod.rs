//! Stochastic gradient descent on the couplings `θ`.
//!
//! Two learning modes share one update rule `θ ← θ - η 𝓛`:
//! [`variational`] minimizes the variational free energy against a known
//! target action, [`data`] maximizes the likelihood of a dataset.

pub mod data;
pub mod variational;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CouplingSet, FieldConfiguration};
use crate::lattice::LatticeGraph;
use crate::sampler::{chain_rng, run_chain, ChainSettings, ChainStart, Ensemble};

pub use data::{data_gradient, train_on_data, train_on_data_with};
pub use variational::{
    train_variational, train_variational_with, variational_gradient, variational_gradient_jackknife,
};

/// Gradient norm above which training aborts.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// `w = 0.1, a = 0.5, b = 0.1, r = 0` everywhere.
    HomogeneousSeeded,
    /// The homogeneous start plus uniform `±0.01` jitter on every component.
    SmallRandom,
}

impl std::str::FromStr for InitPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous-seeded" => Ok(Self::HomogeneousSeeded),
            "small-random" => Ok(Self::SmallRandom),
            _ => Err(Error::InvalidSettings(format!(
                "unknown init policy `{s}` (homogeneous-seeded | small-random)"
            ))),
        }
    }
}

impl InitPolicy {
    pub fn initial_couplings(self, graph: &LatticeGraph, seed: u64) -> CouplingSet {
        let mut theta = CouplingSet::homogeneous(graph, 0.1, 0.5, 0.1);
        if self == Self::SmallRandom {
            let mut rng = chain_rng(seed ^ 0x1a17_5eed);
            for v in theta.iter_mut() {
                *v += rng.random_range(-0.01..=0.01);
            }
        }
        theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Chain used to sample the model each epoch; its seed is the master seed.
    pub chain: ChainSettings,
    /// Data configurations per minibatch (data mode).
    pub batch_size: usize,
    /// Rescale the gradient to this norm when it is larger.
    pub clip: Option<f64>,
    pub init: InitPolicy,
    /// Start each epoch's chain from the previous epoch's last configuration.
    pub persistent: bool,
    /// Learn the linear couplings `r`; when false they stay at their start.
    pub train_r: bool,
    /// Lower bound enforced on every quartic coupling after each update,
    /// keeping the Boltzmann weight normalizable.
    pub quartic_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 100,
            chain: ChainSettings::default(),
            batch_size: 16,
            clip: Some(10.0),
            init: InitPolicy::HomogeneousSeeded,
            persistent: false,
            train_r: true,
            quartic_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidSettings("epochs and batch size must be positive".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidSettings(format!("clip threshold must be positive, got {c}")));
            }
        }
        if !(self.quartic_floor >= 0.0) {
            return Err(Error::InvalidSettings("quartic floor must be non-negative".into()));
        }
        self.chain.validate()
    }

    /// Seed of the chain sampled in `epoch`.
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        self.chain
            .seed
            .wrapping_add((epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Digest of `θ` after the update.
    pub theta_digest: String,
    /// Norm of the gradient before clipping.
    pub grad_norm: f64,
    /// `⟨𝒜 - S⟩` (variational) or the mean data action (data mode).
    pub monitor: f64,
    pub acceptance: f64,
    /// Site/edge averages of `(w, a, b, r)` after the update.
    pub mean_couplings: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

/// `θ - η ∇`, with the gradient first rescaled to norm `clip` if longer.
pub fn sgd_update(
    theta: &CouplingSet,
    grad: &CouplingSet,
    learning_rate: f64,
    clip: Option<f64>,
) -> Result<CouplingSet> {
    if theta.w.len() != grad.w.len()
        || theta.a.len() != grad.a.len()
        || theta.b.len() != grad.b.len()
        || theta.r.len() != grad.r.len()
    {
        return Err(Error::SizeMismatch {
            what: "gradient",
            expected: theta.len(),
            got: grad.len(),
        });
    }
    let norm = grad.norm();
    let scale = match clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let mut out = theta.clone();
    for (t, g) in out.iter_mut().zip(grad.iter()) {
        *t -= learning_rate * scale * g;
    }
    Ok(out)
}

/// Shared epoch bookkeeping: masks, divergence guard, update and projection.
pub(crate) fn apply_step(
    theta: &CouplingSet,
    mut grad: CouplingSet,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(CouplingSet, f64)> {
    if !cfg.train_r {
        grad.r.iter_mut().for_each(|g| *g = 0.0);
    }
    let norm = grad.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Diverged { epoch, norm });
    }
    let mut next = sgd_update(theta, &grad, cfg.learning_rate, cfg.clip)?;
    for b in &mut next.b {
        *b = b.max(cfg.quartic_floor);
    }
    Ok((next, norm))
}

/// Draws the model ensemble of each epoch. The tuned proposal width is carried
/// over as the next pilot's starting point; with `persistent` the chain also
/// resumes from its last configuration.
pub(crate) struct EpochSampler {
    delta: f64,
    last: Option<FieldConfiguration>,
}

impl EpochSampler {
    pub(crate) fn new(cfg: &TrainConfig) -> Self {
        Self {
            delta: cfg.chain.delta,
            last: None,
        }
    }

    pub(crate) fn sample(
        &mut self,
        theta: &CouplingSet,
        graph: &LatticeGraph,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<Ensemble> {
        let mut settings = ChainSettings {
            seed: cfg.epoch_seed(epoch),
            delta: self.delta,
            ..cfg.chain.clone()
        };
        if cfg.persistent {
            if let Some(last) = self.last.take() {
                settings.start = ChainStart::Given(last);
            }
        }
        let ens = run_chain(theta, graph, &settings, None)?;
        self.delta = ens.meta.delta;
        if cfg.persistent {
            self.last = ens.configs.last().cloned();
        }
        Ok(ens)
    }
}
