//! Exact draws from one-dimensional densities `∝ exp(ℓx - qx² - ux⁴)`.
//!
//! The density is tabulated on a grid covering every point whose density
//! exceeds `1e-14` of the maximum; the CDF is integrated with the trapezoid
//! rule and inverted exactly for the piecewise-linear density.

use rand::Rng;

use crate::error::{Error, Result};

/// Log-density drop (relative to the mode) at which the table is cut.
const CUTOFF: f64 = 36.0;
const MIN_NODES: usize = 1024;
const MAX_NODES: usize = 1 << 16;

/// Tabulated inverse CDF of `exp(ℓx - qx² - ux⁴)`.
#[derive(Debug, Clone)]
pub struct QuarticDensity {
    lo: f64,
    step: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl QuarticDensity {
    pub fn new(linear: f64, quad: f64, quartic: f64) -> Result<Self> {
        if !(linear.is_finite() && quad.is_finite() && quartic.is_finite()) {
            return Err(Error::NonFinite("conditional coefficients"));
        }
        if quartic < 0.0 || (quartic == 0.0 && quad <= 0.0) {
            return Err(Error::NonIntegrable(format!(
                "exp({linear} x - {quad} x² - {quartic} x⁴) is not normalizable"
            )));
        }
        let f = |x: f64| {
            let x2 = x * x;
            linear * x - quad * x2 - quartic * x2 * x2
        };
        let roots = critical_points(linear, quad, quartic);
        let (mode, f_max) = roots
            .iter()
            .map(|&x| (x, f(x)))
            .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let leftmost = roots.iter().copied().fold(f64::INFINITY, f64::min);
        let rightmost = roots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hi = edge(&f, rightmost, 1.0, f_max - CUTOFF);
        let lo = edge(&f, leftmost, -1.0, f_max - CUTOFF);

        let curvature = 2.0 * quad + 12.0 * quartic * mode * mode;
        let width = hi - lo;
        let local = if curvature > 0.0 { curvature.powf(-0.5) } else { width };
        let nodes = ((width / (local / 8.0)).ceil() as usize).clamp(MIN_NODES, MAX_NODES);
        let step = width / (nodes - 1) as f64;

        let density: Vec<f64> = (0..nodes).map(|k| (f(lo + k as f64 * step) - f_max).exp()).collect();
        let mut cdf = Vec::with_capacity(nodes);
        cdf.push(0.0);
        for k in 1..nodes {
            let prev = cdf[k - 1];
            cdf.push(prev + 0.5 * step * (density[k - 1] + density[k]));
        }
        Ok(Self {
            lo,
            step,
            density,
            cdf,
        })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.lo + self.step * (self.density.len() - 1) as f64)
    }

    pub fn node_count(&self) -> usize {
        self.density.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cdf.last().expect("non-empty table");
        let target = rng.random::<f64>() * total;
        // Last node with cdf <= target.
        let k = self.cdf.partition_point(|&c| c <= target).saturating_sub(1);
        let k = k.min(self.density.len() - 2);
        let rem = target - self.cdf[k];
        let d0 = self.density[k];
        let slope = (self.density[k + 1] - d0) / self.step;
        // Solve d0 s + slope s²/2 = rem for s in [0, step].
        let disc = (d0 * d0 + 2.0 * slope * rem).max(0.0);
        let denom = d0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
        self.lo + k as f64 * self.step + s.clamp(0.0, self.step)
    }
}

/// Real roots of `ℓ - 2qx - 4ux³ = 0`.
fn critical_points(linear: f64, quad: f64, quartic: f64) -> Vec<f64> {
    if quartic == 0.0 {
        return vec![linear / (2.0 * quad)];
    }
    // x³ + p x + r = 0
    let p = quad / (2.0 * quartic);
    let r = -linear / (4.0 * quartic);
    let disc = r * r / 4.0 + p * p * p / 27.0;
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-r / 2.0 + s).cbrt() + (-r / 2.0 - s).cbrt()]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = if p == 0.0 {
            0.0
        } else {
            (3.0 * r / (p * m)).clamp(-1.0, 1.0)
        };
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    };
    for x in &mut roots {
        for _ in 0..3 {
            let g = *x * *x * *x + p * *x + r;
            let dg = 3.0 * *x * *x + p;
            if dg != 0.0 {
                *x -= g / dg;
            }
        }
    }
    roots
}

/// First point beyond `start` (moving in `dir`) where `f` falls to `level`.
/// `f` is monotone outside the outermost critical point.
fn edge(f: &impl Fn(f64) -> f64, start: f64, dir: f64, level: f64) -> f64 {
    let mut span = 1e-3_f64.max(start.abs() * 1e-3);
    while f(start + dir * span) > level {
        span *= 2.0;
    }
    let (mut inside, mut outside) = (0.0, span);
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if f(start + dir * mid) > level {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    start + dir * outside
}

/// One draw from the density `∝ exp(ℓx - qx² - ux⁴)`.
pub fn sample_1d_quartic<R: Rng + ?Sized>(linear: f64, quad: f64, quartic: f64, rng: &mut R) -> Result<f64> {
    Ok(QuarticDensity::new(linear, quad, quartic)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::function::gamma::gamma;

    fn moments(l: f64, q: f64, u: f64, n: usize, seed: u64) -> (f64, f64) {
        let table = QuarticDensity::new(l, q, u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| table.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn standard_normal() {
        let n = 100_000;
        let (mean, var) = moments(0.0, 0.5, 0.0, n, 1);
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        // Var of the sample variance for a normal is 2/(n-1).
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn shifted_gaussian_mean() {
        let n = 100_000;
        let (mean, var) = moments(2.0, 0.5, 0.0, n, 2);
        assert!((mean - 2.0).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn pure_quartic_second_moment() {
        let n = 100_000;
        let table = QuarticDensity::new(0.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x2: Vec<f64> = (0..n).map(|_| table.sample(&mut rng).powi(2)).collect();
        let mean = x2.iter().sum::<f64>() / n as f64;
        let sd = (x2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let exact = gamma(0.75) / gamma(0.25);
        assert!((mean - exact).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn double_well_is_symmetric() {
        let n = 100_000;
        let (mean, var) = moments(0.0, -2.0, 0.5, n, 4);
        assert!(mean.abs() < 3.0 * (var / n as f64).sqrt());
        // Reference second moment by a fine Riemann sum.
        let (mut z, mut m2) = (0.0, 0.0);
        for k in -80_000..=80_000 {
            let x = k as f64 * 1e-4;
            let w = (2.0 * x * x - 0.5 * x.powi(4)).exp();
            z += w;
            m2 += w * x * x;
        }
        let exact = m2 / z;
        assert!((var - exact).abs() < 0.02 * exact, "{var} vs {exact}");
    }

    #[test]
    fn table_covers_the_mass() {
        for (l, q, u) in [(0.0, 0.5, 0.0), (40.0, 200.0, 0.0), (1.0, -3.0, 0.1), (0.0, 0.0, 1.0)] {
            let t = QuarticDensity::new(l, q, u).unwrap();
            assert!(t.node_count() >= 1024);
            let (lo, hi) = t.support();
            let f = |x: f64| l * x - q * x * x - u * x.powi(4);
            let peak = t.density.iter().cloned().fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-3);
            assert!(f(lo) < f(0.5 * (lo + hi)) || (l == 0.0 && q < 0.0));
            assert!(t.density[0] < 1e-14 && *t.density.last().unwrap() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_normalizable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_1d_quartic(0.0, 0.0, 0.0, &mut rng).is_err());
        assert!(sample_1d_quartic(1.0, -1.0, 0.0, &mut rng).is_err());
        assert!(sample_1d_quartic(0.0, 1.0, -0.1, &mut rng).is_err());
    }
}
