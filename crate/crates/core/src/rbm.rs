//! The φ⁴ neural network: visible fields `φ_i` and hidden fields `h_j` on a
//! complete bipartite graph with action
//!
//! `S = -Σ w_ij φ_i h_j + Σ (r φ + a φ² + b φ⁴)_i + Σ (s h + m h² + n h⁴)_j`.
//!
//! Given one layer the other factorizes into independent one-dimensional
//! densities `∝ exp(ℓx - qx² - ux⁴)`, sampled exactly.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CouplingSet, FieldConfiguration};
use crate::lattice::LatticeGraph;
use crate::sampler::{chain_rng, digest, ChainRng, QuarticDensity};
use crate::trainers::{EpochRecord, TrainConfig, TrainTrace, DIVERGENCE_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenMode {
    /// Full φ⁴ network.
    Quartic,
    /// `b = n = 0`: Gaussian–Gaussian machine.
    Gaussian,
    /// `m = n = 0`, `h ∈ {-1, +1}`: Gaussian–Bernoulli machine.
    Binary,
}

impl std::str::FromStr for HiddenMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quartic" => Ok(Self::Quartic),
            "gaussian" => Ok(Self::Gaussian),
            "binary" => Ok(Self::Binary),
            _ => Err(Error::InvalidSettings(format!(
                "unknown hidden mode `{s}` (quartic | gaussian | binary)"
            ))),
        }
    }
}

/// Parameters of the network. `w` is row-major, `visible × hidden`.
///
/// The same shape holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmParams {
    pub visible: usize,
    pub hidden: usize,
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub hidden_mode: HiddenMode,
}

impl RbmParams {
    pub fn zeros(visible: usize, hidden: usize, hidden_mode: HiddenMode) -> Self {
        Self {
            visible,
            hidden,
            w: vec![0.0; visible * hidden],
            r: vec![0.0; visible],
            a: vec![0.0; visible],
            b: vec![0.0; visible],
            s: vec![0.0; hidden],
            m: vec![0.0; hidden],
            n: vec![0.0; hidden],
            hidden_mode,
        }
    }

    /// `w ~ U(±0.01)`, `a = m = 0.5`, `b = n = 0.1`, `r = s = 0`, with the
    /// mode's frozen parameters set to zero.
    pub fn init(visible: usize, hidden: usize, hidden_mode: HiddenMode, seed: u64) -> Self {
        let mut p = Self::zeros(visible, hidden, hidden_mode);
        let mut rng = chain_rng(seed);
        p.w.iter_mut().for_each(|w| *w = rng.random_range(-0.01..=0.01));
        p.a.fill(0.5);
        p.m.fill(0.5);
        p.b.fill(0.1);
        p.n.fill(0.1);
        p.zero_frozen();
        p
    }

    fn zero_frozen(&mut self) {
        match self.hidden_mode {
            HiddenMode::Quartic => {}
            HiddenMode::Gaussian => {
                self.b.fill(0.0);
                self.n.fill(0.0);
            }
            HiddenMode::Binary => {
                self.m.fill(0.0);
                self.n.fill(0.0);
            }
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.hidden + j]
    }

    fn blocks(&self) -> [&Vec<f64>; 7] {
        [&self.w, &self.r, &self.a, &self.b, &self.s, &self.m, &self.n]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.w,
            &mut self.r,
            &mut self.a,
            &mut self.b,
            &mut self.s,
            &mut self.m,
            &mut self.n,
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.blocks().into_iter().flatten()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn digest(&self) -> String {
        digest(self.iter().copied())
    }

    fn check_shapes(&self) -> Result<()> {
        let (v, h) = (self.visible, self.hidden);
        if v == 0 || h == 0 {
            return Err(Error::InvalidSettings("layer sizes must be positive".into()));
        }
        let expect = [v * h, v, v, v, h, h, h];
        let names = ["w", "r", "a", "b", "s", "m", "n"];
        for ((block, &len), name) in self.blocks().iter().zip(&expect).zip(names) {
            if block.len() != len {
                return Err(Error::SizeMismatch {
                    what: name_of(name),
                    expected: len,
                    got: block.len(),
                });
            }
        }
        if self.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(())
    }

    /// Checks shapes and the mode's integrability invariants. Returns
    /// warnings that do not prevent use.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.check_shapes()?;
        let positive = |v: &[f64], what: &str| -> Result<()> {
            match v.iter().position(|&x| x <= 0.0) {
                Some(k) => Err(Error::NonIntegrable(format!("{what}[{k}] = {} must be positive", v[k]))),
                None => Ok(()),
            }
        };
        let zero = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().any(|&x| x != 0.0) {
                Err(Error::InvalidSettings(format!(
                    "{what} must vanish in {:?} mode",
                    self.hidden_mode
                )))
            } else {
                Ok(())
            }
        };
        let mut warnings = Vec::new();
        match self.hidden_mode {
            HiddenMode::Quartic => {
                positive(&self.b, "b")?;
                positive(&self.n, "n")?;
            }
            HiddenMode::Gaussian => {
                zero(&self.b, "b")?;
                zero(&self.n, "n")?;
                positive(&self.a, "a")?;
                positive(&self.m, "m")?;
                if !self.gaussian_form_positive_definite() {
                    warnings.push("joint Gaussian form is not positive definite".to_string());
                }
            }
            HiddenMode::Binary => {
                zero(&self.m, "m")?;
                zero(&self.n, "n")?;
                if self.b.iter().all(|&b| b == 0.0) {
                    positive(&self.a, "a")?;
                } else {
                    positive(&self.b, "b")?;
                }
            }
        }
        Ok(warnings)
    }

    /// Cholesky test of the quadratic form `[[2a, -w], [-wᵀ, 2m]]`.
    fn gaussian_form_positive_definite(&self) -> bool {
        let (v, h) = (self.visible, self.hidden);
        let dim = v + h;
        let mut mat = vec![0.0; dim * dim];
        for i in 0..v {
            mat[i * dim + i] = 2.0 * self.a[i];
            for j in 0..h {
                mat[i * dim + v + j] = -self.weight(i, j);
                mat[(v + j) * dim + i] = -self.weight(i, j);
            }
        }
        for j in 0..h {
            mat[(v + j) * dim + v + j] = 2.0 * self.m[j];
        }
        for k in 0..dim {
            let d = mat[k * dim + k] - (0..k).map(|p| mat[k * dim + p].powi(2)).sum::<f64>();
            if d <= 0.0 {
                return false;
            }
            let d = d.sqrt();
            mat[k * dim + k] = d;
            for row in k + 1..dim {
                let off = mat[row * dim + k] - (0..k).map(|p| mat[row * dim + p] * mat[k * dim + p]).sum::<f64>();
                mat[row * dim + k] = off / d;
            }
        }
        true
    }

    /// The same action as model couplings on `bipartite(visible, hidden)`;
    /// visibles come first. Not meaningful in binary mode.
    pub fn to_couplings(&self) -> Result<(CouplingSet, LatticeGraph)> {
        self.check_shapes()?;
        if self.hidden_mode == HiddenMode::Binary {
            return Err(Error::Unsupported("continuous hidden units".into()));
        }
        let graph = LatticeGraph::bipartite(self.visible, self.hidden)?;
        let cat = |x: &[f64], y: &[f64]| [x, y].concat();
        let theta = CouplingSet {
            w: self.w.clone(),
            a: cat(&self.a, &self.m),
            b: cat(&self.b, &self.n),
            r: cat(&self.r, &self.s),
        };
        Ok((theta, graph))
    }
}

fn name_of(block: &str) -> &'static str {
    match block {
        "w" => "w",
        "r" => "r",
        "a" => "a",
        "b" => "b",
        "s" => "s",
        "m" => "m",
        _ => "n",
    }
}

/// Values of both layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub visible: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl LayerState {
    pub fn validate(&self, params: &RbmParams) -> Result<()> {
        if self.visible.len() != params.visible {
            return Err(Error::SizeMismatch {
                what: "visible layer",
                expected: params.visible,
                got: self.visible.len(),
            });
        }
        if self.hidden.len() != params.hidden {
            return Err(Error::SizeMismatch {
                what: "hidden layer",
                expected: params.hidden,
                got: self.hidden.len(),
            });
        }
        if self.visible.iter().chain(&self.hidden).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("layer state"));
        }
        if params.hidden_mode == HiddenMode::Binary && self.hidden.iter().any(|&h| h != 1.0 && h != -1.0) {
            return Err(Error::InvalidSettings("binary hidden values must be ±1".into()));
        }
        Ok(())
    }
}

#[inline]
fn poly(x: f64, lin: f64, quad: f64, quart: f64) -> f64 {
    let x2 = x * x;
    lin * x + quad * x2 + quart * x2 * x2
}

pub fn rbm_action(state: &LayerState, params: &RbmParams) -> Result<f64> {
    params.check_shapes()?;
    state.validate(params)?;
    Ok(action_unchecked(&state.visible, &state.hidden, params))
}

fn action_unchecked(phi: &[f64], h: &[f64], p: &RbmParams) -> f64 {
    let mut coupling = 0.0;
    for (i, &x) in phi.iter().enumerate() {
        let row = &p.w[i * p.hidden..(i + 1) * p.hidden];
        coupling += x * row.iter().zip(h).map(|(w, hj)| w * hj).sum::<f64>();
    }
    let vis: f64 = phi.iter().enumerate().map(|(i, &x)| poly(x, p.r[i], p.a[i], p.b[i])).sum();
    let hid: f64 = h.iter().enumerate().map(|(j, &y)| poly(y, p.s[j], p.m[j], p.n[j])).sum();
    vis + hid - coupling
}

/// `(ℓ, q, u)` of `p(h_j | φ) ∝ exp(ℓh - qh² - uh⁴)`.
pub fn hidden_conditional_coeffs(j: usize, visible: &[f64], params: &RbmParams) -> Result<(f64, f64, f64)> {
    if j >= params.hidden {
        return Err(Error::IndexOutOfRange {
            index: j,
            count: params.hidden,
        });
    }
    if visible.len() != params.visible {
        return Err(Error::SizeMismatch {
            what: "visible layer",
            expected: params.visible,
            got: visible.len(),
        });
    }
    Ok(hidden_coeffs(j, visible, params))
}

fn hidden_coeffs(j: usize, visible: &[f64], p: &RbmParams) -> (f64, f64, f64) {
    let field: f64 = visible.iter().enumerate().map(|(i, &x)| p.weight(i, j) * x).sum();
    (field - p.s[j], p.m[j], p.n[j])
}

/// `(ℓ, q, u)` of `p(φ_i | h) ∝ exp(ℓφ - qφ² - uφ⁴)`.
pub fn visible_conditional_coeffs(i: usize, hidden: &[f64], params: &RbmParams) -> Result<(f64, f64, f64)> {
    if i >= params.visible {
        return Err(Error::IndexOutOfRange {
            index: i,
            count: params.visible,
        });
    }
    if hidden.len() != params.hidden {
        return Err(Error::SizeMismatch {
            what: "hidden layer",
            expected: params.hidden,
            got: hidden.len(),
        });
    }
    Ok(visible_coeffs(i, hidden, params))
}

fn visible_coeffs(i: usize, hidden: &[f64], p: &RbmParams) -> (f64, f64, f64) {
    let row = &p.w[i * p.hidden..(i + 1) * p.hidden];
    let field: f64 = row.iter().zip(hidden).map(|(w, h)| w * h).sum();
    (field - p.r[i], p.a[i], p.b[i])
}

/// Probability of `h = +1` for a two-state unit with linear coefficient `ℓ`.
pub fn binary_up_probability(linear: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * linear).exp())
}

/// One exact draw from `exp(ℓx - qx² - ux⁴)`; Gaussian when `u = 0`.
fn draw_continuous<R: Rng + ?Sized>(l: f64, q: f64, u: f64, rng: &mut R) -> Result<f64> {
    if u == 0.0 {
        if !(q > 0.0) {
            return Err(Error::NonIntegrable(format!("Gaussian conditional with q = {q}")));
        }
        let sd = (0.5 / q).sqrt();
        let normal = Normal::new(l / (2.0 * q), sd).map_err(|e| Error::InvalidSettings(e.to_string()))?;
        Ok(normal.sample(rng))
    } else {
        Ok(QuarticDensity::new(l, q, u)?.sample(rng))
    }
}

fn sample_hidden<R: Rng + ?Sized>(visible: &[f64], p: &RbmParams, rng: &mut R) -> Result<Vec<f64>> {
    (0..p.hidden)
        .map(|j| {
            let (l, q, u) = hidden_coeffs(j, visible, p);
            match p.hidden_mode {
                HiddenMode::Binary => Ok(if rng.random::<f64>() < binary_up_probability(l) { 1.0 } else { -1.0 }),
                _ => draw_continuous(l, q, u, rng),
            }
        })
        .collect()
}

fn sample_visible<R: Rng + ?Sized>(hidden: &[f64], p: &RbmParams, rng: &mut R) -> Result<Vec<f64>> {
    (0..p.visible)
        .map(|i| {
            let (l, q, u) = visible_coeffs(i, hidden, p);
            draw_continuous(l, q, u, rng)
        })
        .collect()
}

/// Hiddens from `p(h | φ)`, then visibles from `p(φ | h)`.
pub fn alternating_gibbs_step<R: Rng + ?Sized>(
    state: &LayerState,
    params: &RbmParams,
    rng: &mut R,
) -> Result<LayerState> {
    params.check_shapes()?;
    state.validate(params)?;
    let hidden = sample_hidden(&state.visible, params, rng)?;
    let visible = sample_visible(&hidden, params, rng)?;
    Ok(LayerState { visible, hidden })
}

/// Adds `∂S/∂θ` at `(φ, h)` into `acc`.
fn accumulate_statistics(acc: &mut RbmParams, phi: &[f64], h: &[f64]) {
    for (i, &x) in phi.iter().enumerate() {
        for (j, &y) in h.iter().enumerate() {
            acc.w[i * acc.hidden + j] -= x * y;
        }
        let x2 = x * x;
        acc.r[i] += x;
        acc.a[i] += x2;
        acc.b[i] += x2 * x2;
    }
    for (j, &y) in h.iter().enumerate() {
        let y2 = y * y;
        acc.s[j] += y;
        acc.m[j] += y2;
        acc.n[j] += y2 * y2;
    }
}

/// CD-k estimate of `mean_data ∂S/∂θ - mean_model ∂S/∂θ`.
///
/// Each batch item gets its own generator seeded from `rng`, so the result
/// does not depend on how items are scheduled.
pub fn cd_k_gradient(
    batch: &[FieldConfiguration],
    params: &RbmParams,
    k: usize,
    rng: &mut ChainRng,
) -> Result<RbmParams> {
    params.check_shapes()?;
    if batch.is_empty() {
        return Err(Error::InvalidSettings("empty batch".into()));
    }
    if k == 0 {
        return Err(Error::InvalidSettings("CD needs k ≥ 1".into()));
    }
    if let Some(bad) = batch.iter().find(|c| c.len() != params.visible) {
        return Err(Error::SizeMismatch {
            what: "batch configuration",
            expected: params.visible,
            got: bad.len(),
        });
    }
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();
    let per_item = batch
        .par_iter()
        .zip(&seeds)
        .map(|(data, &seed)| -> Result<RbmParams> {
            let mut rng = ChainRng::seed_from_u64(seed);
            let mut g = RbmParams::zeros(params.visible, params.hidden, params.hidden_mode);
            let h0 = sample_hidden(data, params, &mut rng)?;
            accumulate_statistics(&mut g, data, &h0);
            let mut phi = sample_visible(&h0, params, &mut rng)?;
            let mut h = sample_hidden(&phi, params, &mut rng)?;
            for _ in 1..k {
                phi = sample_visible(&h, params, &mut rng)?;
                h = sample_hidden(&phi, params, &mut rng)?;
            }
            let mut neg = RbmParams::zeros(params.visible, params.hidden, params.hidden_mode);
            accumulate_statistics(&mut neg, &phi, &h);
            for (dst, src) in g.blocks_mut().into_iter().zip(neg.blocks()) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d -= s);
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = RbmParams::zeros(params.visible, params.hidden, params.hidden_mode);
    for item in &per_item {
        for (dst, src) in grad.blocks_mut().into_iter().zip(item.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for block in grad.blocks_mut() {
        block.iter_mut().for_each(|v| *v *= scale);
    }
    grad.zero_frozen();
    Ok(grad)
}

/// RMSE between data and its one-step Gibbs reconstruction.
pub fn reconstruction_error(batch: &[FieldConfiguration], params: &RbmParams, rng: &mut ChainRng) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for data in batch {
        let h = sample_hidden(data, params, rng)?;
        let phi = sample_visible(&h, params, rng)?;
        sq += phi.iter().zip(data.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        count += phi.len();
    }
    Ok((sq / count.max(1) as f64).sqrt())
}

/// Minibatch CD-k training. Uses `learning_rate`, `epochs`, `batch_size`,
/// `clip`, `quartic_floor` and the chain seed of `cfg`.
pub fn train_rbm(
    dataset: &[FieldConfiguration],
    params0: RbmParams,
    cfg: &TrainConfig,
    k: usize,
) -> Result<(RbmParams, TrainTrace)> {
    cfg.validate()?;
    for w in params0.validate()? {
        log::warn!("{w}");
    }
    if dataset.is_empty() {
        return Err(Error::Dataset("no configurations to train on".into()));
    }
    if let Some(bad) = dataset.iter().find(|c| c.len() != params0.visible) {
        return Err(Error::SizeMismatch {
            what: "dataset configuration",
            expected: params0.visible,
            got: bad.len(),
        });
    }
    let mut params = params0;
    let mut trace = TrainTrace::default();
    let eps = cfg.quartic_floor.max(f64::MIN_POSITIVE);
    for epoch in 0..cfg.epochs {
        // Reseeded per epoch so a resumed run continues the same stream.
        let mut rng = chain_rng(cfg.epoch_seed(epoch));
        let batch: Vec<FieldConfiguration> = if cfg.batch_size >= dataset.len() {
            dataset.to_vec()
        } else {
            let mut picks = rand::seq::index::sample(&mut rng, dataset.len(), cfg.batch_size).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| dataset[i].clone()).collect()
        };
        let grad = cd_k_gradient(&batch, &params, k, &mut rng)?;
        let norm = grad.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Diverged { epoch, norm });
        }
        let scale = match cfg.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for (dst, src) in params.blocks_mut().into_iter().zip(grad.blocks()) {
            dst.iter_mut().zip(src).for_each(|(p, g)| *p -= cfg.learning_rate * scale * g);
        }
        match params.hidden_mode {
            HiddenMode::Quartic => {
                params.b.iter_mut().for_each(|b| *b = b.max(eps));
                params.n.iter_mut().for_each(|n| *n = n.max(eps));
            }
            HiddenMode::Gaussian => {
                params.a.iter_mut().for_each(|a| *a = a.max(eps));
                params.m.iter_mut().for_each(|m| *m = m.max(eps));
            }
            HiddenMode::Binary => {
                if params.b.iter().all(|&b| b == 0.0) {
                    params.a.iter_mut().for_each(|a| *a = a.max(eps));
                } else {
                    params.b.iter_mut().for_each(|b| *b = b.max(eps));
                }
            }
        }
        let pnorm = params.norm();
        if !pnorm.is_finite() || pnorm > DIVERGENCE_NORM {
            return Err(Error::Diverged { epoch, norm: pnorm });
        }
        let recon = reconstruction_error(&batch, &params, &mut rng)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        trace.records.push(EpochRecord {
            epoch,
            theta_digest: params.digest(),
            grad_norm: norm,
            monitor: recon,
            acceptance: 1.0,
            mean_couplings: [mean(&params.w), mean(&params.a), mean(&params.b), mean(&params.r)],
        });
        log::debug!("epoch {epoch}: |grad| = {norm:.4e}, reconstruction = {recon:.6}");
    }
    Ok((params, trace))
}

/// Receptive field of one hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    /// Column `w_{·j}` reshaped row-major to `height × width`.
    pub raw: Vec<Vec<f64>>,
    /// `raw` min-max normalized to `[0, 1]`; constant features map to 0.5.
    pub normalized: Vec<Vec<f64>>,
}

impl Feature {
    pub fn flatten(&self) -> Vec<f64> {
        self.raw.concat()
    }
}

pub fn extract_features(params: &RbmParams, height: usize, width: usize) -> Result<Vec<Feature>> {
    params.check_shapes()?;
    if height * width != params.visible {
        return Err(Error::SizeMismatch {
            what: "feature image",
            expected: params.visible,
            got: height * width,
        });
    }
    Ok((0..params.hidden)
        .map(|j| {
            let column: Vec<f64> = (0..params.visible).map(|i| params.weight(i, j)).collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm = |x: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 };
            Feature {
                raw: column.chunks(width).map(<[f64]>::to_vec).collect(),
                normalized: column.chunks(width).map(|row| row.iter().map(|&x| norm(x)).collect()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::action;

    fn random_params(v: usize, h: usize, mode: HiddenMode, seed: u64) -> RbmParams {
        let mut rng = chain_rng(seed);
        let mut p = RbmParams::zeros(v, h, mode);
        for block in p.blocks_mut() {
            block.iter_mut().for_each(|x| *x = rng.random_range(0.05..0.6));
        }
        p.zero_frozen();
        p
    }

    fn random_state(p: &RbmParams, seed: u64) -> LayerState {
        let mut rng = chain_rng(seed);
        LayerState {
            visible: (0..p.visible).map(|_| rng.random_range(-2.0..2.0)).collect(),
            hidden: (0..p.hidden)
                .map(|_| match p.hidden_mode {
                    HiddenMode::Binary => if rng.random::<bool>() { 1.0 } else { -1.0 },
                    _ => rng.random_range(-2.0..2.0),
                })
                .collect(),
        }
    }

    #[test]
    fn one_by_one_arithmetic() {
        let p = RbmParams {
            visible: 1,
            hidden: 1,
            w: vec![0.3],
            r: vec![0.1],
            a: vec![0.2],
            b: vec![0.05],
            s: vec![-0.1],
            m: vec![0.15],
            n: vec![0.02],
            hidden_mode: HiddenMode::Quartic,
        };
        let st = LayerState {
            visible: vec![1.0],
            hidden: vec![1.0],
        };
        assert!((rbm_action(&st, &p).unwrap() - 0.12).abs() < 1e-15);
        let zero = LayerState {
            visible: vec![0.0],
            hidden: vec![0.0],
        };
        assert_eq!(rbm_action(&zero, &p).unwrap(), 0.0);
    }

    #[test]
    fn matches_bipartite_model_action() {
        let p = random_params(3, 2, HiddenMode::Quartic, 1);
        let st = random_state(&p, 2);
        let (theta, g) = p.to_couplings().unwrap();
        let phi = [st.visible.clone(), st.hidden.clone()].concat();
        let direct = rbm_action(&st, &p).unwrap();
        assert!((direct - action(&phi, &theta, &g).unwrap()).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn gaussian_mode_is_quartic_with_zero_quartics() {
        for seed in 0..20 {
            let q = random_params(4, 3, HiddenMode::Quartic, seed);
            let mut gp = q.clone();
            gp.hidden_mode = HiddenMode::Gaussian;
            gp.zero_frozen();
            let mut qz = q.clone();
            qz.b.fill(0.0);
            qz.n.fill(0.0);
            let st = random_state(&q, seed + 100);
            assert_eq!(
                action_unchecked(&st.visible, &st.hidden, &qz),
                rbm_action(&st, &gp).unwrap()
            );
        }
    }

    #[test]
    fn conditional_coefficients() {
        let mut p = random_params(3, 2, HiddenMode::Gaussian, 3);
        p.s.fill(0.0);
        p.r.fill(0.0);
        assert_eq!(hidden_conditional_coeffs(1, &[0.0; 3], &p).unwrap().0, 0.0);
        assert_eq!(visible_conditional_coeffs(2, &[0.0; 2], &p).unwrap().0, 0.0);
        assert!(hidden_conditional_coeffs(2, &[0.0; 3], &p).is_err());
        assert!(visible_conditional_coeffs(3, &[0.0; 2], &p).is_err());

        // Changing another visible's own parameters leaves site 0 untouched.
        let h = [0.4, -1.2];
        let before = visible_conditional_coeffs(0, &h, &p).unwrap();
        let mut q = p.clone();
        q.a[1] = 9.0;
        q.r[2] = -3.0;
        q.b[1] = 0.7;
        assert_eq!(before, visible_conditional_coeffs(0, &h, &q).unwrap());
    }

    #[test]
    fn hidden_units_do_not_interact() {
        // S(h1, h2) - S(h1', h2) - S(h1, h2') + S(h1', h2') = 0 for fixed φ.
        let p = random_params(3, 2, HiddenMode::Quartic, 4);
        let phi = vec![0.3, -0.8, 1.1];
        let s = |h0: f64, h1: f64| {
            rbm_action(&LayerState { visible: phi.clone(), hidden: vec![h0, h1] }, &p).unwrap()
        };
        let mixed = s(0.7, -0.4) - s(1.9, -0.4) - s(0.7, 1.3) + s(1.9, 1.3);
        assert!(mixed.abs() < 1e-12);
    }

    #[test]
    fn gibbs_is_reproducible() {
        let p = random_params(3, 2, HiddenMode::Quartic, 5);
        let st = random_state(&p, 6);
        let run = || {
            let mut rng = chain_rng(9);
            let mut s = st.clone();
            for _ in 0..10 {
                s = alternating_gibbs_step(&s, &p, &mut rng).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn binary_states_are_pm_one() {
        let p = random_params(3, 4, HiddenMode::Binary, 7);
        let mut rng = chain_rng(1);
        let mut s = random_state(&p, 8);
        for _ in 0..20 {
            s = alternating_gibbs_step(&s, &p, &mut rng).unwrap();
            assert!(s.hidden.iter().all(|&h| h == 1.0 || h == -1.0));
        }
        let bad = LayerState { visible: vec![0.0; 3], hidden: vec![0.5; 4] };
        assert!(rbm_action(&bad, &p).is_err());
    }

    #[test]
    fn w_gradient_is_model_minus_data_correlation() {
        let p = random_params(2, 2, HiddenMode::Quartic, 10);
        let batch = vec![FieldConfiguration::new(vec![0.5, -0.3]).unwrap()];
        // Recompute the gradient's positive and negative phases from the same
        // generator to check ∂S/∂w_ij = -φ_i h_j.
        let mut rng = chain_rng(11);
        let grad = cd_k_gradient(&batch, &p, 1, &mut rng).unwrap();
        let mut rng = chain_rng(11);
        let seed: u64 = rng.random();
        let mut item = ChainRng::seed_from_u64(seed);
        let h0 = sample_hidden(&batch[0], &p, &mut item).unwrap();
        let phi = sample_visible(&h0, &p, &mut item).unwrap();
        let h1 = sample_hidden(&phi, &p, &mut item).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = phi[i] * h1[j] - batch[0][i] * h0[j];
                assert!((grad.w[i * 2 + j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let p = RbmParams::init(4, 2, HiddenMode::Quartic, 1);
        let data = vec![FieldConfiguration::constant(4, 0.5); 3];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let (out, trace) = train_rbm(&data, p.clone(), &cfg, 2).unwrap();
        assert_eq!(out, p);
        assert_eq!(trace.records.len(), 3);
    }

    #[test]
    fn init_values() {
        let p = RbmParams::init(5, 3, HiddenMode::Quartic, 2);
        assert!(p.w.iter().all(|w| w.abs() <= 0.01));
        assert!(p.a.iter().chain(&p.m).all(|&v| v == 0.5));
        assert!(p.b.iter().chain(&p.n).all(|&v| v == 0.1));
        assert!(p.r.iter().chain(&p.s).all(|&v| v == 0.0));
        assert!(p.validate().unwrap().is_empty());
        let g = RbmParams::init(5, 3, HiddenMode::Gaussian, 2);
        assert!(g.b.iter().chain(&g.n).all(|&v| v == 0.0));
        let b = RbmParams::init(5, 3, HiddenMode::Binary, 2);
        assert!(b.m.iter().chain(&b.n).all(|&v| v == 0.0));
        b.validate().unwrap();
    }

    #[test]
    fn unstable_gaussian_form_warns() {
        let mut p = RbmParams::init(1, 1, HiddenMode::Gaussian, 0);
        assert!(p.validate().unwrap().is_empty());
        p.w[0] = 3.0; // 4 a m = 1 < w²
        assert_eq!(p.validate().unwrap().len(), 1);
        p.b[0] = 0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn features() {
        let mut p = RbmParams::zeros(6, 2, HiddenMode::Quartic);
        let f = extract_features(&p, 2, 3).unwrap();
        assert!(f.iter().all(|x| x.flatten().iter().all(|&v| v == 0.0)));
        assert!(f[0].normalized.iter().flatten().all(|&v| v == 0.5));
        for (k, w) in p.w.iter_mut().enumerate() {
            *w = k as f64 * 0.1 - 0.3;
        }
        let f = extract_features(&p, 2, 3).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..6).map(|i| p.weight(i, j)).collect();
            assert_eq!(f[j].flatten(), col);
        }
        assert!(extract_features(&p, 3, 3).is_err());
    }
}
