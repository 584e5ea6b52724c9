//! Reweighting of an ensemble drawn at `exp(-S)` to a target action
//! `𝒜 = Σ_k g_k 𝒜^(k)` with one coupling `g_j` replaced by `g_j'`.
//!
//! `⟨O⟩ = Σ O_l W_l / Σ W_l` with `ln W_l = S_l - Σ_k g_k 𝒜_l^(k)`; the
//! imaginary term turns into the phase `exp(-i g5 𝒜^(5))`. Log-weights are
//! shifted by their largest real part before exponentiation.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::TargetActionSpec;
use crate::sampler::{jackknife_fn, Ensemble};

/// Results whose effective sample size falls below this are flagged.
pub const DEFAULT_N_EFF_FLOOR: f64 = 10.0;

/// What is averaged.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// The (complex) target action at the reweighted couplings.
    Action,
    /// The volume-averaged field.
    Magnetization,
    /// One caller-supplied real value per record.
    Custom(Vec<f64>),
}

impl std::str::FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action" | "A" => Ok(Self::Action),
            "m" | "magnetization" => Ok(Self::Magnetization),
            _ => Err(Error::InvalidSettings(format!(
                "unknown observable `{s}` (action | m)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReweightRequest<'a> {
    pub ensemble: &'a Ensemble,
    /// Couplings of the target; the varied entry is overwritten per grid point.
    pub couplings: TargetActionSpec,
    /// Varied coupling index `j ∈ 1..=5`.
    pub varied: usize,
    pub grid: Vec<f64>,
    pub observable: Observable,
    pub n_eff_floor: f64,
}

impl<'a> ReweightRequest<'a> {
    pub fn new(
        ensemble: &'a Ensemble,
        couplings: TargetActionSpec,
        varied: usize,
        grid: Vec<f64>,
        observable: Observable,
    ) -> Self {
        Self {
            ensemble,
            couplings,
            varied,
            grid,
            observable,
            n_eff_floor: DEFAULT_N_EFF_FLOOR,
        }
    }

    fn validate(&self) -> Result<&'a [[f64; 5]]> {
        if !(1..=5).contains(&self.varied) {
            return Err(Error::InvalidSettings(format!(
                "varied coupling index must be in 1..=5, got {}",
                self.varied
            )));
        }
        if self.grid.is_empty() || self.grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidSettings("grid must be non-empty and finite".into()));
        }
        let terms = self.ensemble.target_terms.as_deref().ok_or_else(|| {
            Error::InvalidSettings("ensemble has no cached target terms".into())
        })?;
        let n = self.ensemble.len();
        if n < 2 || terms.len() != n || self.ensemble.actions.len() != n {
            return Err(Error::InvalidSettings("ensemble caches are incomplete".into()));
        }
        if let Observable::Custom(values) = &self.observable {
            if values.len() != n {
                return Err(Error::SizeMismatch {
                    what: "custom observable",
                    expected: n,
                    got: values.len(),
                });
            }
        }
        Ok(terms)
    }

    /// Couplings with `g_j = g_prime` (the term switched on).
    pub fn couplings_at(&self, g_prime: f64) -> TargetActionSpec {
        let mut spec = self.couplings;
        spec.g[self.varied - 1] = g_prime;
        spec.active[self.varied - 1] = true;
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReweightResult {
    pub g_prime: f64,
    pub mean: Complex64,
    /// Jackknife errors of the real and imaginary parts.
    pub error: (f64, f64),
    pub n_eff: f64,
    /// `n_eff` fell below the floor; the value is unreliable.
    pub flagged: bool,
}

/// Weighted complex mean from raw log-weights. Shifting every log-weight by
/// the same constant leaves the result unchanged up to rounding.
pub fn reweight_with_log_weights(
    log_weights: &[Complex64],
    observable: &[Complex64],
    n_eff_floor: f64,
) -> Result<(Complex64, (f64, f64), f64, bool)> {
    if log_weights.len() != observable.len() {
        return Err(Error::SizeMismatch {
            what: "observable",
            expected: log_weights.len(),
            got: observable.len(),
        });
    }
    if log_weights.iter().any(|w| !(w.re.is_finite() && w.im.is_finite())) {
        return Err(Error::NonFinite("log-weights"));
    }
    let shift = log_weights.iter().map(|w| w.re).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<Complex64> = log_weights.iter().map(|w| (w - shift).exp()).collect();
    let (sum_abs, sum_sq) = weights.iter().fold((0.0, 0.0), |(s, q), w| {
        let a = w.norm();
        (s + a, q + a * a)
    });
    let n_eff = sum_abs * sum_abs / sum_sq;
    let rows: Vec<f64> = weights
        .iter()
        .zip(observable)
        .flat_map(|(w, o)| {
            let ow = w * o;
            [w.re, w.im, ow.re, ow.im]
        })
        .collect();
    let est = jackknife_fn(&rows, 4, |m| {
        let ratio = Complex64::new(m[2], m[3]) / Complex64::new(m[0], m[1]);
        vec![ratio.re, ratio.im]
    })?;
    let mean = Complex64::new(est.value[0], est.value[1]);
    Ok((mean, (est.error[0], est.error[1]), n_eff, n_eff < n_eff_floor))
}

/// One grid point of a request.
pub fn reweight_observable(req: &ReweightRequest<'_>, g_prime: f64) -> Result<ReweightResult> {
    let terms = req.validate()?;
    if !g_prime.is_finite() {
        return Err(Error::NonFinite("reweighting coupling"));
    }
    let spec = req.couplings_at(g_prime);
    let ens = req.ensemble;
    let log_weights: Vec<Complex64> = terms
        .iter()
        .zip(&ens.actions)
        .map(|(t, &s)| {
            let a = spec.combine(t);
            Complex64::new(s - a.re, -a.im)
        })
        .collect();
    let observable: Vec<Complex64> = match &req.observable {
        Observable::Action => terms.iter().map(|t| spec.combine(t)).collect(),
        Observable::Magnetization => ens.magnetizations.iter().map(|&m| m.into()).collect(),
        Observable::Custom(v) => v.iter().map(|&x| x.into()).collect(),
    };
    let (mean, error, n_eff, flagged) = reweight_with_log_weights(&log_weights, &observable, req.n_eff_floor)?;
    if flagged {
        log::warn!("g' = {g_prime}: effective sample size {n_eff:.2} below {}", req.n_eff_floor);
    }
    Ok(ReweightResult {
        g_prime,
        mean,
        error,
        n_eff,
        flagged,
    })
}

/// Every grid point, in grid order.
pub fn reweight_sweep(req: &ReweightRequest<'_>) -> Result<Vec<ReweightResult>> {
    req.validate()?;
    req.grid.par_iter().map(|&g| reweight_observable(req, g)).collect()
}

/// `points` evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..points)
            .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// The default extrapolation grid for `g4'`.
pub fn default_grid() -> Vec<f64> {
    linspace(-1.15, -0.85, 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{magnetization, target_terms_raw, FieldConfiguration};
    use crate::lattice::{Boundary, LatticeGraph};
    use crate::sampler::EnsembleMeta;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random configurations with caches; `S_l` is the real part of `spec`
    /// unless `jitter` perturbs it.
    fn synthetic(spec: &TargetActionSpec, n: usize, seed: u64, jitter: f64) -> Ensemble {
        let g = LatticeGraph::square(3, Boundary::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let configs: Vec<FieldConfiguration> = (0..n)
            .map(|_| FieldConfiguration::new((0..9).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap())
            .collect();
        let terms: Vec<[f64; 5]> = configs.iter().map(|c| target_terms_raw(c, &g)).collect();
        let actions = terms
            .iter()
            .map(|t| spec.real_part().combine(t).re + jitter * rng.random_range(-1.0..1.0))
            .collect();
        Ensemble {
            magnetizations: configs.iter().map(|c| magnetization(c)).collect(),
            configs,
            actions,
            target_terms: Some(terms),
            meta: EnsembleMeta {
                seed,
                thermalization: 0,
                skip: 1,
                delta: 1.0,
                acceptance: 0.5,
                action_digest: String::new(),
            },
        }
    }

    fn plain_mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn matching_couplings_give_plain_mean() {
        let spec = TargetActionSpec::phi4(0.3, 0.8, 0.2).unwrap();
        let ens = synthetic(&spec, 200, 1, 0.0);
        let req = ReweightRequest::new(&ens, spec, 1, vec![-0.3], Observable::Magnetization);
        let r = reweight_observable(&req, -0.3).unwrap();
        assert!((r.mean.re - plain_mean(&ens.magnetizations)).abs() < 1e-12);
        assert!((r.n_eff - 200.0).abs() < 1e-9);
        assert!(!r.flagged);
    }

    #[test]
    fn constant_observable_is_exact() {
        let spec = TargetActionSpec::reference();
        let ens = synthetic(&spec, 100, 2, 0.5);
        let req = ReweightRequest::new(&ens, spec, 4, vec![-1.1], Observable::Custom(vec![2.5; 100]));
        let r = reweight_observable(&req, -1.1).unwrap();
        assert!((r.mean - Complex64::new(2.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_point_sweep_matches_observable() {
        let spec = TargetActionSpec::reference();
        let ens = synthetic(&spec, 100, 3, 0.2);
        let req = ReweightRequest::new(&ens, spec, 4, vec![-1.0], Observable::Action);
        let sweep = reweight_sweep(&req).unwrap();
        assert_eq!(sweep, vec![reweight_observable(&req, -1.0).unwrap()]);
    }

    #[test]
    fn low_overlap_is_flagged() {
        let spec = TargetActionSpec::phi4(0.3, 0.8, 0.2).unwrap();
        let ens = synthetic(&spec, 100, 4, 40.0);
        let req = ReweightRequest::new(&ens, spec, 2, vec![0.8], Observable::Magnetization);
        assert!(reweight_observable(&req, 0.8).unwrap().flagged);
    }

    #[test]
    fn missing_caches_rejected() {
        let spec = TargetActionSpec::reference();
        let mut ens = synthetic(&spec, 10, 5, 0.0);
        ens.target_terms = None;
        let req = ReweightRequest::new(&ens, spec, 4, vec![-1.0], Observable::Action);
        assert!(reweight_observable(&req, -1.0).is_err());
        let ens = synthetic(&spec, 10, 5, 0.0);
        for bad in [ReweightRequest::new(&ens, spec, 0, vec![-1.0], Observable::Action),
                    ReweightRequest::new(&ens, spec, 4, vec![], Observable::Action),
                    ReweightRequest::new(&ens, spec, 4, vec![-1.0], Observable::Custom(vec![1.0; 3]))] {
            assert!(reweight_sweep(&bad).is_err());
        }
    }

    #[test]
    fn grid_helpers() {
        let g = default_grid();
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], -1.15);
        assert!((g[30] + 0.85).abs() < 1e-15);
        assert!((g[15] + 1.0).abs() < 1e-15);
        assert_eq!(linspace(2.0, 3.0, 1), vec![2.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn log_weight_shift_invariance(seed in 0u64..1000, c in -500.0f64..500.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lw: Vec<Complex64> = (0..60).map(|_| Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0))).collect();
            let obs: Vec<Complex64> = (0..60).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
            let shifted: Vec<Complex64> = lw.iter().map(|w| w + c).collect();
            let a = reweight_with_log_weights(&lw, &obs, 10.0).unwrap();
            let b = reweight_with_log_weights(&shifted, &obs, 10.0).unwrap();
            prop_assert!((a.0 - b.0).norm() <= 1e-12 * a.0.norm().max(1.0));
            prop_assert!((a.2 - b.2).abs() <= 1e-12 * a.2);
        }

        #[test]
        fn negating_g5_conjugates(seed in 0u64..1000, g4 in -1.2f64..-0.8, g5 in 0.01f64..0.3) {
            let base = TargetActionSpec::all_terms([-1.0, 1.5, 0.2, -1.0, g5]).unwrap();
            let ens = synthetic(&base, 80, seed, 0.3);
            let mut flipped = base;
            flipped.g[4] = -g5;
            for obs in [Observable::Action, Observable::Magnetization] {
                let a = reweight_observable(&ReweightRequest::new(&ens, base, 4, vec![g4], obs.clone()), g4).unwrap();
                let b = reweight_observable(&ReweightRequest::new(&ens, flipped, 4, vec![g4], obs), g4).unwrap();
                prop_assert!((a.mean - b.mean.conj()).norm() <= 1e-10 * a.mean.norm().max(1.0));
            }
        }

        #[test]
        fn effective_size_bounded(seed in 0u64..1000, jitter in 0.0f64..5.0, g4 in -1.2f64..-0.8) {
            let spec = TargetActionSpec::reference();
            let ens = synthetic(&spec, 50, seed, jitter);
            let r = reweight_observable(&ReweightRequest::new(&ens, spec, 4, vec![g4], Observable::Action), g4).unwrap();
            prop_assert!(r.n_eff <= 50.0 * (1.0 + 1e-12));
            prop_assert!(r.n_eff >= 1.0 - 1e-12);
        }

        #[test]
        fn matching_real_couplings_reproduce_plain_mean(seed in 0u64..1000, w in 0.0f64..0.5, a in 0.2f64..1.0, b in 0.05f64..0.5) {
            let spec = TargetActionSpec::phi4(w, a, b).unwrap();
            let ens = synthetic(&spec, 64, seed, 0.0);
            let r = reweight_observable(&ReweightRequest::new(&ens, spec, 2, vec![a], Observable::Magnetization), a).unwrap();
            prop_assert!((r.mean.re - plain_mean(&ens.magnetizations)).abs() <= 1e-12);
            prop_assert!(r.mean.im.abs() <= 1e-15);
        }
    }
}
