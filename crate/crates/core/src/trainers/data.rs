//! Maximum-likelihood learning from data.
//!
//! With `ln p = -S - ln Z`, the loss gradient averaged over a minibatch is
//! `mean_batch ∂S/∂θ - ⟨∂S/∂θ⟩_model`, so training matches the model's
//! sufficient statistics to the data's.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::field::{action_unchecked, sufficient_statistics, CouplingSet, FieldConfiguration};
use crate::lattice::LatticeGraph;
use crate::sampler::{chain_rng, coupling_digest, Ensemble};

use super::{apply_step, EpochRecord, EpochSampler, TrainConfig, TrainTrace};

fn mean_statistics<'a>(
    configs: impl ExactSizeIterator<Item = &'a FieldConfiguration>,
    graph: &LatticeGraph,
) -> Result<Vec<f64>> {
    let n = configs.len();
    if n == 0 {
        return Err(Error::InvalidSettings("empty configuration set".into()));
    }
    let mut sums = CouplingSet::zeros(graph).to_flat();
    for cfg in configs {
        if cfg.len() != graph.vertex_count() {
            return Err(Error::SizeMismatch {
                what: "configuration",
                expected: graph.vertex_count(),
                got: cfg.len(),
            });
        }
        for (s, o) in sums.iter_mut().zip(sufficient_statistics(cfg, graph).iter()) {
            *s += o;
        }
    }
    sums.iter_mut().for_each(|s| *s /= n as f64);
    Ok(sums)
}

/// `mean_batch ∂S/∂θ - ⟨∂S/∂θ⟩_model`; descending it raises the likelihood.
pub fn data_gradient(
    batch: &[FieldConfiguration],
    model: &Ensemble,
    theta: &CouplingSet,
    graph: &LatticeGraph,
) -> Result<CouplingSet> {
    theta.validate(graph)?;
    let data = mean_statistics(batch.iter(), graph)?;
    let model = mean_statistics(model.configs.iter(), graph)?;
    let flat: Vec<f64> = data.iter().zip(&model).map(|(d, m)| d - m).collect();
    CouplingSet::from_flat(graph, &flat)
}

/// Trains from the configured initialization. See [`train_on_data_with`].
pub fn train_on_data(
    dataset: &[FieldConfiguration],
    graph: &LatticeGraph,
    cfg: &TrainConfig,
) -> Result<(CouplingSet, TrainTrace)> {
    let theta0 = cfg.init.initial_couplings(graph, cfg.chain.seed);
    train_on_data_with(dataset, graph, cfg, theta0, |_, _| {})
}

/// Epoch loop over minibatches. Each epoch draws `batch_size` distinct
/// configurations (the whole set when it is smaller) and a model ensemble at
/// the current couplings. `observe` sees the epoch and the updated couplings.
pub fn train_on_data_with(
    dataset: &[FieldConfiguration],
    graph: &LatticeGraph,
    cfg: &TrainConfig,
    theta0: CouplingSet,
    mut observe: impl FnMut(usize, &CouplingSet),
) -> Result<(CouplingSet, TrainTrace)> {
    cfg.validate()?;
    theta0.validate(graph)?;
    if dataset.is_empty() {
        return Err(Error::Dataset("no configurations to train on".into()));
    }
    if let Some(bad) = dataset.iter().find(|c| c.len() != graph.vertex_count()) {
        return Err(Error::SizeMismatch {
            what: "dataset configuration",
            expected: graph.vertex_count(),
            got: bad.len(),
        });
    }
    let mut theta = theta0;
    let mut sampler = EpochSampler::new(cfg);
    let mut trace = TrainTrace::default();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(dataset.len()));
    for epoch in 0..cfg.epochs {
        batch.clear();
        if cfg.batch_size >= dataset.len() {
            batch.extend(dataset.iter().cloned());
        } else {
            let mut rng = chain_rng(cfg.epoch_seed(epoch) ^ 0xba7c_4000);
            let mut picks = index::sample(&mut rng, dataset.len(), cfg.batch_size).into_vec();
            picks.sort_unstable();
            batch.extend(picks.into_iter().map(|i| dataset[i].clone()));
        }
        let ens = sampler.sample(&theta, graph, cfg, epoch)?;
        let grad = data_gradient(&batch, &ens, &theta, graph)?;
        let data_action =
            batch.iter().map(|c| action_unchecked(c, &theta, graph)).sum::<f64>() / batch.len() as f64;
        let (next, norm) = apply_step(&theta, grad, cfg, epoch)?;
        theta = next;
        trace.records.push(EpochRecord {
            epoch,
            theta_digest: coupling_digest(&theta),
            grad_norm: norm,
            monitor: data_action,
            acceptance: ens.meta.acceptance,
            mean_couplings: theta.homogeneous_average(),
        });
        log::debug!("epoch {epoch}: |grad| = {norm:.4e}, data action = {data_action:.6}");
        observe(epoch, &theta);
    }
    Ok((theta, trace))
}
