use phi4_mrf::field::{CouplingSet, TargetActionSpec};
use phi4_mrf::io::{ingest_dataset, DatasetSource};
use phi4_mrf::lattice::{Boundary, LatticeGraph};
use phi4_mrf::quadrature::{exact_expectation, exact_kl, KlTarget, OracleSettings};
use phi4_mrf::sampler::ChainSettings;
use phi4_mrf::trainers::{
    sgd_update, train_on_data, train_on_data_with, train_variational, train_variational_with, InitPolicy,
    TrainConfig,
};
use phi4_mrf::Error;
use proptest::prelude::*;

fn replica() -> LatticeGraph {
    LatticeGraph::square(2, Boundary::Open).unwrap()
}

fn config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs,
        chain: ChainSettings {
            thermalization: 50,
            measurements: 300,
            skip: 2,
            seed,
            ..ChainSettings::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn variational_training_reduces_the_exact_kl() {
    let g = replica();
    let spec = TargetActionSpec::phi4(0.4, 0.8, 0.15).unwrap();
    let cfg = config(3, 400);
    let oracle = OracleSettings::with_nodes(40);
    let kl = |t: &CouplingSet| exact_kl(t, KlTarget::Action(&spec), &g, &oracle).unwrap();
    let before = kl(&cfg.init.initial_couplings(&g, 3));
    let (theta, trace) = train_variational(&spec, &g, &cfg).unwrap();
    let after = kl(&theta);
    assert_eq!(trace.records.len(), 400);
    assert!(after < 0.2 * before, "KL {before} -> {after}");
}

#[test]
fn imaginary_target_term_does_not_affect_training() {
    let g = replica();
    let spec = TargetActionSpec::phi4(0.4, 0.8, 0.15).unwrap();
    let mut complex = spec;
    complex.g[4] = 0.2;
    complex.active[4] = true;
    let cfg = config(1, 5);
    assert_eq!(train_variational(&spec, &g, &cfg).unwrap(), train_variational(&complex, &g, &cfg).unwrap());
}

#[test]
fn data_training_moves_the_model_mean_to_the_data() {
    let g = replica();
    let data = ingest_dataset(
        &DatasetSource::Gaussian {
            mu: 0.6,
            sigma: 0.3,
            count: 200,
            sites: 4,
        },
        9,
    )
    .unwrap()
    .configs;
    let target = data.iter().flat_map(|c| c.iter()).sum::<f64>() / 800.0;
    let cfg = TrainConfig {
        batch_size: 50,
        ..config(4, 600)
    };
    let (theta, _) = train_on_data(&data, &g, &cfg).unwrap();
    // exp(-S) with S ∋ rφ: a positive mean needs negative linear couplings.
    assert!(theta.r.iter().all(|&r| r < 0.0), "{:?}", theta.r);
    let m = exact_expectation(|p| p.iter().sum::<f64>() / 4.0, &theta, &g, &OracleSettings::with_nodes(40)).unwrap();
    assert!((m - target).abs() < 0.1, "model mean {m}, data mean {target}");
}

#[test]
fn runaway_learning_rate_diverges() {
    let g = replica();
    let data = vec![phi4_mrf::field::FieldConfiguration::new(vec![30.0; 4]).unwrap()];
    let cfg = TrainConfig {
        learning_rate: 1e9,
        clip: None,
        ..config(2, 50)
    };
    match train_on_data(&data, &g, &cfg) {
        Err(e @ Error::Diverged { .. }) => assert_eq!(e.exit_code(), 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn persistent_training_is_reproducible() {
    let g = LatticeGraph::square(3, Boundary::Periodic).unwrap();
    let spec = TargetActionSpec::phi4(0.2, 0.7, 0.2).unwrap();
    let cfg = TrainConfig {
        persistent: true,
        init: InitPolicy::SmallRandom,
        ..config(8, 30)
    };
    let a = train_variational(&spec, &g, &cfg).unwrap();
    let b = train_variational(&spec, &g, &cfg).unwrap();
    assert_eq!(a, b);
    let c = train_variational(&spec, &g, &TrainConfig { persistent: false, ..cfg }).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn frozen_linear_couplings_and_quartic_floor_hold_every_epoch() {
    let g = replica();
    let data = ingest_dataset(
        &DatasetSource::Gaussian {
            mu: 1.5,
            sigma: 2.0,
            count: 100,
            sites: 4,
        },
        1,
    )
    .unwrap()
    .configs;
    let cfg = TrainConfig {
        train_r: false,
        learning_rate: 0.5,
        quartic_floor: 0.02,
        ..config(6, 60)
    };
    let mut theta0 = cfg.init.initial_couplings(&g, 6);
    theta0.r = vec![0.25; 4];
    let mut epochs = 0;
    train_on_data_with(&data, &g, &cfg, theta0, |_, t| {
        epochs += 1;
        assert!(t.r.iter().all(|&r| r == 0.25));
        assert!(t.b.iter().all(|&b| b >= 0.02));
    })
    .unwrap();
    assert_eq!(epochs, 60);
}

#[test]
fn observer_sees_the_returned_couplings_last() {
    let g = replica();
    let spec = TargetActionSpec::phi4(0.1, 0.6, 0.1).unwrap();
    let cfg = config(12, 10);
    let mut last = None;
    let (theta, trace) =
        train_variational_with(&spec, &g, &cfg, cfg.init.initial_couplings(&g, 12), |_, t| last = Some(t.clone()))
            .unwrap();
    assert_eq!(last.as_ref(), Some(&theta));
    assert_eq!(trace.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
}

#[test]
fn invalid_training_settings_are_rejected() {
    let g = replica();
    let spec = TargetActionSpec::phi4(0.1, 0.6, 0.1).unwrap();
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { clip: Some(0.0), ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(train_variational(&spec, &g, &cfg).is_err());
    }
}

proptest! {
    #[test]
    fn clipped_step_is_bounded(
        grad in prop::collection::vec(-1e3..1e3f64, 16),
        eta in 1e-4..1.0f64,
        clip in 0.1..50.0f64,
    ) {
        let g = replica();
        let theta = CouplingSet::homogeneous(&g, 0.1, 0.5, 0.1);
        let grad = CouplingSet::from_flat(&g, &grad).unwrap();
        let next = sgd_update(&theta, &grad, eta, Some(clip)).unwrap();
        let step: f64 = next.iter().zip(theta.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(step <= eta * clip.min(grad.norm()) * (1.0 + 1e-12));
    }
}
