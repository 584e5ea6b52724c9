//! Error analysis for Markov chain series: blocked jackknife and the
//! integrated autocorrelation time.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Number of jackknife blocks used for a series of length `n`.
pub fn block_count(n: usize) -> usize {
    n.min(50)
}

/// Jackknife estimate of one or more derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeEstimate {
    /// Derived quantities evaluated on the full sample.
    pub value: Vec<f64>,
    pub error: Vec<f64>,
}

/// Leave-one-block-out jackknife for functions of sample means.
///
/// `samples` is row-major with `width` columns per sample. `derived` maps a
/// vector of column means to the quantities of interest; it is evaluated on
/// the full sample and once per deleted block.
pub fn jackknife_fn<F>(samples: &[f64], width: usize, derived: F) -> Result<JackknifeEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    assert!(width > 0 && samples.len() % width == 0, "ragged sample matrix");
    let n = samples.len() / width;
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    let blocks = block_count(n);
    let mut block_sums = vec![0.0; blocks * width];
    let mut block_len = vec![0usize; blocks];
    for b in 0..blocks {
        let (start, end) = (b * n / blocks, (b + 1) * n / blocks);
        block_len[b] = end - start;
        let sums = &mut block_sums[b * width..(b + 1) * width];
        for row in samples[start * width..end * width].chunks_exact(width) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    let mut total = vec![0.0; width];
    for sums in block_sums.chunks_exact(width) {
        for (t, s) in total.iter_mut().zip(sums) {
            *t += s;
        }
    }
    let full_means: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let value = derived(&full_means);

    let mut means = vec![0.0; width];
    let mut replicas: Vec<Vec<f64>> = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let kept = (n - block_len[b]) as f64;
        let sums = &block_sums[b * width..(b + 1) * width];
        for ((m, t), s) in means.iter_mut().zip(&total).zip(sums) {
            *m = (t - s) / kept;
        }
        replicas.push(derived(&means));
    }
    let bf = blocks as f64;
    let error = (0..value.len())
        .map(|k| {
            let avg = replicas.iter().map(|r| r[k]).sum::<f64>() / bf;
            let ss: f64 = replicas.iter().map(|r| (r[k] - avg).powi(2)).sum();
            ((bf - 1.0) / bf * ss).sqrt()
        })
        .collect();
    Ok(JackknifeEstimate { value, error })
}

/// Mean and jackknife error of a real series.
pub fn jackknife(series: &[f64]) -> Result<(f64, f64)> {
    let est = jackknife_fn(series, 1, |m| vec![m[0]])?;
    Ok((est.value[0], est.error[0]))
}

/// Mean and componentwise jackknife errors `(err_re, err_im)` of a complex series.
pub fn jackknife_complex(series: &[Complex64]) -> Result<(Complex64, (f64, f64))> {
    let flat: Vec<f64> = series.iter().flat_map(|z| [z.re, z.im]).collect();
    let est = jackknife_fn(&flat, 2, |m| m.to_vec())?;
    Ok((
        Complex64::new(est.value[0], est.value[1]),
        (est.error[0], est.error[1]),
    ))
}

/// Minimum series length accepted by [`integrated_autocorrelation_time`].
pub const MIN_AUTOCORRELATION_LEN: usize = 100;

/// `τ_int = 1/2 + Σ_t ρ(t)`, summed until `ρ(t)` turns negative or the
/// window exceeds `5 τ_int`.
///
/// A constant series has no defined autocorrelation; it returns `0.5`.
pub fn integrated_autocorrelation_time(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < MIN_AUTOCORRELATION_LEN {
        return Err(Error::TooShort {
            len: n,
            min: MIN_AUTOCORRELATION_LEN,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let autocov = |t: usize| -> f64 {
        centered[..n - t]
            .iter()
            .zip(&centered[t..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n - t) as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return Ok(0.5);
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        if t as f64 > 5.0 * tau {
            break;
        }
        let rho = autocov(t) / c0;
        if rho < 0.0 {
            break;
        }
        tau += rho;
    }
    Ok(tau)
}
