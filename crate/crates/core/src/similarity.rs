//! Pearson similarity after cross-correlation alignment.
//!
//! Alignment searches lags within half the shorter signal's length using
//! linear (zero-padded) cross-correlation of the mean-removed signals with
//! biased `1/n` normalization, so lags with short overlaps are not favoured.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{mean, Trace};

/// Above this many multiply-adds the FFT path is used.
const DIRECT_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    pub rho: f64,
    /// Shift applied to the ideal: `ideal[i + lag]` is paired with `measured[i]`.
    pub lag: i64,
    pub aligned_length: usize,
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "pearson needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least two points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::degenerate("pearson: a series has zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Lag maximizing the cross-correlation `sum_i a[i] b[i + lag]`.
///
/// Lags range over `±min(len) / 2`. Near-ties (within 1e-10 relative) go to
/// the smallest `|lag|`, positive before negative.
pub fn best_lag(a: &[f64], b: &[f64]) -> Result<i64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("best_lag needs at least two samples per input"));
    }
    let max_lag = (a.len().min(b.len()) / 2) as i64;
    let corr = cross_correlation(a, b, max_lag);
    let peak = corr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = corr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let mut best: Option<i64> = None;
    for (i, &c) in corr.iter().enumerate() {
        if c < peak - tol {
            continue;
        }
        let lag = i as i64 - max_lag;
        best = match best {
            None => Some(lag),
            Some(prev) if (lag.abs(), lag < 0) < (prev.abs(), prev < 0) => Some(lag),
            keep => keep,
        };
    }
    Ok(best.unwrap_or(0))
}

/// Biased cross-correlation of the mean-removed inputs for lags
/// `-max_lag..=max_lag`, indexed by `lag + max_lag`.
pub fn cross_correlation(a: &[f64], b: &[f64], max_lag: i64) -> Vec<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let a: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let n = a.len().max(b.len()) as f64;
    let lags = 2 * max_lag as usize + 1;
    let raw = if a.len().saturating_mul(lags) <= DIRECT_LIMIT {
        direct_correlation(&a, &b, max_lag)
    } else {
        fft_correlation(&a, &b, max_lag)
    };
    raw.into_iter().map(|v| v / n).collect()
}

fn direct_correlation(a: &[f64], b: &[f64], max_lag: i64) -> Vec<f64> {
    (-max_lag..=max_lag)
        .map(|lag| {
            let (start, end) = overlap(a.len(), b.len(), lag);
            (start..end)
                .map(|i| a[i] * b[(i as i64 + lag) as usize])
                .sum()
        })
        .collect()
}

fn fft_correlation(a: &[f64], b: &[f64], max_lag: i64) -> Vec<f64> {
    let size = (a.len() + b.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let pad = |x: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (dst, &v) in buf.iter_mut().zip(x) {
            dst.re = v;
        }
        buf
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    planner.plan_fft_inverse(size).process(&mut prod);
    let scale = 1.0 / size as f64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let idx = if lag >= 0 {
                lag as usize
            } else {
                size - (-lag) as usize
            };
            prod[idx].re * scale
        })
        .collect()
}

/// Index range `start..end` of `a` whose partner `i + lag` lies inside `b`.
pub(crate) fn overlap(len_a: usize, len_b: usize, lag: i64) -> (usize, usize) {
    let start = (-lag).max(0) as usize;
    let end = (len_b as i64 - lag).min(len_a as i64).max(start as i64) as usize;
    (start, end)
}

/// Pair `a[i]` with `b[i + lag]` over their overlap.
pub fn aligned<'a>(a: &'a [f64], b: &'a [f64], lag: i64) -> (&'a [f64], &'a [f64]) {
    let (start, end) = overlap(a.len(), b.len(), lag);
    let bs = (start as i64 + lag) as usize;
    (&a[start..end], &b[bs..bs + (end - start)])
}

/// Similarity of a measured trace to the ideal waveform: Pearson correlation
/// after aligning the ideal by [`best_lag`] and truncating to the overlap.
///
/// The ideal is resampled to the measured rate first when the rates differ.
pub fn similarity(measured: &Trace, ideal: &Trace) -> Result<SimilarityResult> {
    measured.require_non_empty("similarity")?;
    ideal.require_non_empty("similarity")?;
    let ideal = if ideal.sample_rate() != measured.sample_rate() {
        ideal.resample_linear(measured.sample_rate())?
    } else {
        ideal.clone()
    };
    similarity_slices(measured.samples(), ideal.samples())
}

/// [`similarity`] on raw sample slices at a common rate.
pub fn similarity_slices(measured: &[f64], ideal: &[f64]) -> Result<SimilarityResult> {
    let lag = best_lag(measured, ideal)?;
    let (m, w) = aligned(measured, ideal, lag);
    if m.len() < 2 {
        return Err(Error::invalid("aligned overlap shorter than two samples"));
    }
    Ok(SimilarityResult {
        rho: pearson(m, w)?,
        lag,
        aligned_length: m.len(),
    })
}
