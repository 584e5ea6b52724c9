//! Variational learning: minimize `𝓕 = ⟨𝒜 - S⟩_p + F_p` over the couplings
//! of `p(φ; θ) ∝ exp(-S(φ; θ))` for a fixed real target action `𝒜`.
//!
//! The gradient `⟨𝒜⟩⟨∂S⟩ - ⟨𝒜 ∂S⟩ + ⟨S ∂S⟩ - ⟨S⟩⟨∂S⟩` is the covariance
//! `Cov(S - 𝒜, ∂S/∂θ)` under `p`, evaluated here in centered form.

use crate::error::{Error, Result};
use crate::field::{sufficient_statistics, target_terms_raw, CouplingSet, TargetActionSpec};
use crate::lattice::LatticeGraph;
use crate::sampler::{coupling_digest, jackknife_fn, Ensemble};

use super::{apply_step, EpochRecord, EpochSampler, TrainConfig, TrainTrace};

fn check_ensemble(ens: &Ensemble, theta: &CouplingSet, graph: &LatticeGraph) -> Result<()> {
    theta.validate(graph)?;
    if ens.is_empty() {
        return Err(Error::InvalidSettings("empty ensemble".into()));
    }
    if ens.meta.action_digest != coupling_digest(theta) {
        return Err(Error::InvalidSettings(
            "ensemble was not sampled at the given couplings".into(),
        ));
    }
    Ok(())
}

/// Per-record `S_l - Re 𝒜_l` for the real part of `spec`.
fn action_gaps(ens: &Ensemble, spec: &TargetActionSpec, graph: &LatticeGraph) -> Vec<f64> {
    let real = spec.real_part();
    (0..ens.len())
        .map(|l| {
            let terms = match &ens.target_terms {
                Some(t) => t[l],
                None => target_terms_raw(&ens.configs[l], graph),
            };
            ens.actions[l] - real.combine(&terms).re
        })
        .collect()
}

/// Monte Carlo estimate of `∂𝓕/∂θ` from an ensemble drawn at `θ`.
///
/// Only the real terms of `spec` enter; the imaginary term is left to
/// reweighting.
pub fn variational_gradient(
    ens: &Ensemble,
    theta: &CouplingSet,
    spec: &TargetActionSpec,
    graph: &LatticeGraph,
) -> Result<CouplingSet> {
    check_ensemble(ens, theta, graph)?;
    spec.check_graph(graph)?;
    let gaps = action_gaps(ens, spec, graph);
    let n = gaps.len() as f64;
    let mean_gap = gaps.iter().sum::<f64>() / n;

    let k = theta.len();
    let mut mean_stat = vec![0.0; k];
    let mut cross = vec![0.0; k];
    for (cfg, gap) in ens.configs.iter().zip(&gaps) {
        let d = gap - mean_gap;
        for ((m, c), o) in mean_stat.iter_mut().zip(&mut cross).zip(sufficient_statistics(cfg, graph).iter()) {
            *m += o;
            *c += d * o;
        }
    }
    // Σ (d_l)(O_l - Ō) = Σ d_l O_l because Σ d_l = 0 up to rounding; subtract
    // the residual explicitly to keep the estimator exactly centered.
    let residual = gaps.iter().map(|g| g - mean_gap).sum::<f64>();
    let flat: Vec<f64> = cross
        .iter()
        .zip(&mean_stat)
        .map(|(c, m)| (c - residual * m / n) / n)
        .collect();
    CouplingSet::from_flat(graph, &flat)
}

/// [`variational_gradient`] together with blocked-jackknife errors per
/// component.
pub fn variational_gradient_jackknife(
    ens: &Ensemble,
    theta: &CouplingSet,
    spec: &TargetActionSpec,
    graph: &LatticeGraph,
) -> Result<(CouplingSet, CouplingSet)> {
    check_ensemble(ens, theta, graph)?;
    spec.check_graph(graph)?;
    let gaps = action_gaps(ens, spec, graph);
    let k = theta.len();
    // Row layout: [d, O_1..O_k, d O_1..d O_k].
    let width = 1 + 2 * k;
    let mut rows = Vec::with_capacity(ens.len() * width);
    for (cfg, &d) in ens.configs.iter().zip(&gaps) {
        let stats = sufficient_statistics(cfg, graph).to_flat();
        rows.push(d);
        rows.extend_from_slice(&stats);
        rows.extend(stats.iter().map(|o| d * o));
    }
    let est = jackknife_fn(&rows, width, |m| {
        (0..k).map(|i| m[1 + k + i] - m[0] * m[1 + i]).collect()
    })?;
    Ok((
        CouplingSet::from_flat(graph, &est.value)?,
        CouplingSet::from_flat(graph, &est.error)?,
    ))
}

/// Trains from the configured initialization. See [`train_variational_with`].
pub fn train_variational(
    spec: &TargetActionSpec,
    graph: &LatticeGraph,
    cfg: &TrainConfig,
) -> Result<(CouplingSet, TrainTrace)> {
    let theta0 = cfg.init.initial_couplings(graph, cfg.chain.seed);
    train_variational_with(spec, graph, cfg, theta0, |_, _| {})
}

/// Epoch loop: sample at `θ`, estimate the gradient, descend. `observe` is
/// called with the epoch index and the updated couplings.
pub fn train_variational_with(
    spec: &TargetActionSpec,
    graph: &LatticeGraph,
    cfg: &TrainConfig,
    theta0: CouplingSet,
    mut observe: impl FnMut(usize, &CouplingSet),
) -> Result<(CouplingSet, TrainTrace)> {
    cfg.validate()?;
    spec.check_graph(graph)?;
    theta0.validate(graph)?;
    if spec.has_imaginary() {
        log::info!("imaginary target term ignored during training");
    }
    let target = spec.real_part();
    let mut theta = theta0;
    let mut sampler = EpochSampler::new(cfg);
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        let ens = sampler.sample(&theta, graph, cfg, epoch)?;
        let grad = variational_gradient(&ens, &theta, &target, graph)?;
        let gap_mean = -action_gaps(&ens, &target, graph).iter().sum::<f64>() / ens.len() as f64;
        let (next, norm) = apply_step(&theta, grad, cfg, epoch)?;
        theta = next;
        trace.records.push(EpochRecord {
            epoch,
            theta_digest: coupling_digest(&theta),
            grad_norm: norm,
            monitor: gap_mean,
            acceptance: ens.meta.acceptance,
            mean_couplings: theta.homogeneous_average(),
        });
        log::debug!("epoch {epoch}: |grad| = {norm:.4e}, <A - S> = {gap_mean:.6}");
        observe(epoch, &theta);
    }
    Ok((theta, trace))
}
