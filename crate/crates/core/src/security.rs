//! Sampling error, the three security predicates and the critical-threshold
//! search.
//!
//! A system is universally ε-secure when, at confidence ε, the sampling error
//! stays inside the band that quantization and noise alone explain. It is
//! selectively ε-secure against a target `w` when the adversary cannot keep
//! the output inside that band around `s + w`. The critical thresholds are
//! the confidence levels where these verdicts flip.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::adcmodel::DigitizedTrace;
use crate::error::{Error, Result};
use crate::noise::{estimate_sigma, NoiseModel};
use crate::similarity::{aligned, best_lag};
use crate::trace::{mean, rms, Trace};

/// Convergence window of the critical-threshold search.
pub const DEFAULT_DELTA: f64 = 1e-4;
/// Iteration cap of the critical-threshold search.
pub const MAX_ITERATIONS: usize = 200;
/// Crate version recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Threshold convention of the critical-threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Normalized errors against `ppf((1 + mid) / 2)` with no quantization term.
    StrictPseudocode,
    /// Adds `Q / sigma` to the threshold, as the selective definition requires.
    #[default]
    Eq5WithQ,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict_pseudocode" | "strict" => Ok(Mode::StrictPseudocode),
            "eq5_with_q" | "eq5" => Ok(Mode::Eq5WithQ),
            other => Err(Error::invalid(format!(
                "unknown mode '{other}' (expected strict_pseudocode or eq5_with_q)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::StrictPseudocode => "strict_pseudocode",
            Mode::Eq5WithQ => "eq5_with_q",
        })
    }
}

/// Sampling error at one conversion start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingError {
    /// Conversion start time `t`.
    pub t: f64,
    /// `|s_hat(t + tau) - s(t)|`.
    pub error: f64,
}

/// `E_s(t) = |s_hat(t + tau) - s(t)|` at every conversion start.
///
/// Digitized samples are timestamped at `t + tau`; the true signal `s` is
/// read at `t` by linear interpolation. Conversions outside the span of `s`
/// are skipped.
pub fn sampling_error(s: &Trace, digitized: &DigitizedTrace, tau: f64) -> Result<Vec<SamplingError>> {
    s.require_non_empty("sampling_error")?;
    let volts = &digitized.volts;
    let out: Vec<SamplingError> = volts
        .samples()
        .iter()
        .enumerate()
        .filter_map(|(k, &v)| {
            let t = volts.time_of(k) - tau;
            s.value_at(t).map(|truth| SamplingError {
                t,
                error: (v - truth).abs(),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Error::invalid(
            "digitized trace and signal do not overlap in time",
        ));
    }
    Ok(out)
}

/// Observed exceedance fraction of a predicate and the bound it is tested
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    /// Error level defining an exceedance.
    pub threshold: f64,
    /// Fraction of errors at or above `threshold`.
    pub fraction: f64,
    /// Probability bound of the predicate.
    pub bound: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!("eps must lie in [0, 1), got {eps}")));
    }
    Ok(())
}

fn fraction_at_or_above(errors: &[f64], threshold: f64) -> f64 {
    errors.iter().filter(|&&e| e >= threshold).count() as f64 / errors.len() as f64
}

/// Exceedance statistics of the universal predicate at `eps`: threshold
/// `q + N^-1((1 + eps) / 2)`, bound `(1 + eps) / 2`.
pub fn universal_exceedance(errors: &[f64], q: f64, noise: &NoiseModel, eps: f64) -> Result<Exceedance> {
    check_eps(eps)?;
    if errors.is_empty() {
        return Err(Error::invalid("no sampling errors to evaluate"));
    }
    let level = (1.0 + eps) / 2.0;
    let threshold = q + noise.inverse(level)?;
    Ok(Exceedance {
        threshold,
        fraction: fraction_at_or_above(errors, threshold),
        bound: level,
    })
}

/// Universal ε-security: exceedances of `q + N^-1((1 + eps) / 2)` occur with
/// probability at most `(1 + eps) / 2`.
pub fn is_universally_secure(errors: &[f64], q: f64, noise: &NoiseModel, eps: f64) -> Result<bool> {
    let ex = universal_exceedance(errors, q, noise, eps)?;
    Ok(ex.fraction <= ex.bound)
}

/// Exceedance statistics of the selective predicate at `eps`: threshold
/// `q + N^-1(1 - eps / 2)`, bound `1 - eps / 2`.
pub fn selective_exceedance(errors: &[f64], q: f64, noise: &NoiseModel, eps: f64) -> Result<Exceedance> {
    check_eps(eps)?;
    if errors.is_empty() {
        return Err(Error::invalid("no sampling errors to evaluate"));
    }
    let level = 1.0 - eps / 2.0;
    let threshold = q + noise.inverse_unchecked(level);
    Ok(Exceedance {
        threshold,
        fraction: fraction_at_or_above(errors, threshold),
        bound: level,
    })
}

/// Selective ε-security against the waveform whose errors `E_{s+w}` are
/// given: exceedances of `q + N^-1(1 - eps / 2)` occur with probability
/// greater than `1 - eps / 2`, i.e. the adversary fails to hold the output
/// near the target.
pub fn is_selectively_secure(errors: &[f64], q: f64, noise: &NoiseModel, eps: f64) -> Result<bool> {
    let ex = selective_exceedance(errors, q, noise, eps)?;
    Ok(ex.fraction > ex.bound)
}

/// Smallest `eps` in `[0, 1]` at which the universal predicate holds,
/// found by bisection to `tol` on the predicate itself.
///
/// Returns 1 when the predicate fails for every `eps < 1`.
pub fn critical_universal_epsilon(errors: &[f64], q: f64, noise: &NoiseModel, tol: f64) -> Result<f64> {
    if is_universally_secure(errors, q, noise, 0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid >= 1.0 || mid <= lo {
            break;
        }
        if is_universally_secure(errors, q, noise, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Outcome of [`find_critical_epsilon`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalEpsilon {
    pub eps: f64,
    pub iterations: usize,
    /// False when the search stopped on the iteration cap or a collapsed
    /// bracket instead of the convergence window.
    pub converged: bool,
}

/// Binary search for the critical selective threshold.
///
/// `mid` stands for `1 - eps / 2`. At each step the fraction of normalized
/// errors `|measured - ideal| / sigma` at or above the threshold is compared
/// with `mid`; the search stops once that fraction is within `delta` below
/// `mid` and returns `2 - 2 mid`.
pub fn find_critical_epsilon(
    measured: &[f64],
    ideal: &[f64],
    sigma: f64,
    q: f64,
    delta: f64,
    mode: Mode,
) -> Result<CriticalEpsilon> {
    if measured.len() != ideal.len() {
        return Err(Error::invalid(format!(
            "measured has {} samples, ideal {}",
            measured.len(),
            ideal.len()
        )));
    }
    if measured.is_empty() {
        return Err(Error::invalid("no samples to compare"));
    }
    if sigma == 0.0 {
        return Err(Error::degenerate(
            "noise sigma is zero; compare the traces directly",
        ));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
    }
    let errors: Vec<f64> = measured
        .iter()
        .zip(ideal)
        .map(|(m, i)| (m - i).abs() / sigma)
        .collect();
    let offset = match mode {
        Mode::StrictPseudocode => 0.0,
        Mode::Eq5WithQ => q / sigma,
    };
    Ok(search(&errors, offset, delta))
}

fn search(errors: &[f64], offset: f64, delta: f64) -> CriticalEpsilon {
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut lo, mut hi) = (0.5f64, 1.0f64);
    let mut iterations = 0;
    while lo < hi && iterations < MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let threshold = offset + standard.inverse_cdf((1.0 + mid) / 2.0);
        let p = fraction_at_or_above(errors, threshold);
        if (p - mid).abs() < delta && p <= mid {
            return CriticalEpsilon {
                eps: (2.0 - 2.0 * mid).clamp(0.0, 1.0),
                iterations,
                converged: true,
            };
        } else if p < mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    CriticalEpsilon {
        eps: (2.0 - 2.0 * hi).clamp(0.0, 1.0),
        iterations,
        converged: false,
    }
}

/// Repeated captures of the same injection.
///
/// The reference is compared with every target; estimation traces give the
/// noise level; validation traces are scored like targets and should come
/// out near 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub reference: Trace,
    pub estimation: Vec<Trace>,
    pub validation: Vec<Trace>,
}

impl MeasurementSet {
    /// First trace as reference, the next `n_estimation` for noise
    /// estimation, the rest for validation.
    pub fn partition(mut traces: Vec<Trace>, n_estimation: usize) -> Result<Self> {
        if traces.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least two traces, got {}",
                traces.len()
            )));
        }
        let reference = traces.remove(0);
        let n = n_estimation.clamp(1, traces.len());
        let validation = traces.split_off(n);
        let set = Self {
            reference,
            estimation: traces,
            validation,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimation.is_empty() {
            return Err(Error::invalid("at least one estimation trace is required"));
        }
        let r = &self.reference;
        for (i, t) in self.estimation.iter().chain(&self.validation).enumerate() {
            if t.sample_rate() != r.sample_rate() || t.len() != r.len() {
                return Err(Error::invalid(format!(
                    "trace {} has {} samples at {} Hz, reference has {} at {} Hz",
                    i + 1,
                    t.len(),
                    t.sample_rate(),
                    r.len(),
                    r.sample_rate()
                )));
            }
        }
        Ok(())
    }
}

/// Critical thresholds computed from a [`MeasurementSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub version: String,
    pub mode: Mode,
    pub sigma_noise: f64,
    pub q: f64,
    pub eps_selective: BTreeMap<String, f64>,
    pub eps_universal: f64,
    pub iterations: usize,
}

impl SecurityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub mode: Mode,
    /// Quantization bound of the source ADC; 0 when unknown.
    pub q: f64,
    pub delta: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            q: 0.0,
            delta: DEFAULT_DELTA,
        }
    }
}

fn detrend(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    xs.iter().map(|v| v - m).collect()
}

fn scaled_to(xs: Vec<f64>, target_rms: f64, what: &str) -> Result<Vec<f64>> {
    let r = rms(&xs);
    if r == 0.0 {
        return Err(Error::degenerate(format!("{what} has zero RMS after detrending")));
    }
    let k = target_rms / r;
    Ok(xs.into_iter().map(|v| v * k).collect())
}

/// Detrended, RMS-matched, aligned copy of `x` paired with the matching
/// stretch of the reference.
fn normalize_against(reference: &[f64], ref_rms: f64, x: &[f64], what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = scaled_to(detrend(x), ref_rms, what)?;
    let lag = best_lag(reference, &x)?;
    let (r, w) = aligned(reference, &x, lag);
    Ok((r.to_vec(), w.to_vec()))
}

/// Noise level and normalized reference of a measurement set.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub sigma: f64,
    /// Detrended reference.
    pub reference: Vec<f64>,
}

/// Standard deviation of the pooled pointwise differences between the
/// normalized estimation traces and the reference.
///
/// This is the spread of a difference of two captures, so with independent
/// noise of level `s` in every capture it estimates `sqrt(2) s`.
pub fn estimate_noise(set: &MeasurementSet) -> Result<NoiseEstimate> {
    set.validate()?;
    let reference = detrend(set.reference.samples());
    let ref_rms = rms(&reference);
    if ref_rms == 0.0 {
        return Err(Error::degenerate("reference trace has zero RMS after detrending"));
    }
    let mut pooled = Vec::new();
    for (i, est) in set.estimation.iter().enumerate() {
        let (r, e) = normalize_against(
            &reference,
            ref_rms,
            est.samples(),
            &format!("estimation trace {}", i + 1),
        )?;
        pooled.extend(e.iter().zip(&r).map(|(a, b)| a - b));
    }
    Ok(NoiseEstimate {
        sigma: estimate_sigma(&pooled),
        reference,
    })
}

/// Critical selective threshold of the reference against each ideal, plus
/// every validation trace (`validation_1`, ...) and the zero waveform
/// (`zero`), from which the universal threshold follows as `1 - eps_zero`.
///
/// Ideals at another rate are resampled to the reference rate. An
/// identically zero ideal is not scaled: its errors are `|reference| / sigma`.
pub fn compare(
    set: &MeasurementSet,
    ideals: &[(String, Trace)],
    options: &CompareOptions,
) -> Result<SecurityReport> {
    let NoiseEstimate { sigma, reference } = estimate_noise(set)?;
    let ref_rms = rms(&reference);
    let rate = set.reference.sample_rate();

    let mut targets: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, ideal) in ideals {
        let ideal = if ideal.sample_rate() != rate {
            ideal.resample_linear(rate)?
        } else {
            ideal.clone()
        };
        targets.push((name.clone(), ideal.into_samples()));
    }
    for (i, v) in set.validation.iter().enumerate() {
        targets.push((format!("validation_{}", i + 1), v.samples().to_vec()));
    }
    if !targets.iter().any(|(n, _)| n == "zero") {
        targets.push(("zero".to_string(), vec![0.0; reference.len()]));
    }

    let mut eps_selective = BTreeMap::new();
    let mut iterations = 0;
    for (name, samples) in &targets {
        let (r, w) = if samples.iter().all(|&v| v == 0.0) {
            (reference.clone(), vec![0.0; reference.len()])
        } else {
            normalize_against(&reference, ref_rms, samples, &format!("ideal '{name}'"))?
        };
        let found = find_critical_epsilon(&r, &w, sigma, options.q, options.delta, options.mode)?;
        if !found.converged {
            log::warn!(
                "critical-threshold search for '{name}' stopped after {} iterations without converging; reporting best estimate",
                found.iterations
            );
        }
        iterations += found.iterations;
        eps_selective.insert(name.clone(), found.eps);
    }
    let eps_universal = 1.0 - eps_selective["zero"];
    Ok(SecurityReport {
        version: VERSION.to_string(),
        mode: options.mode,
        sigma_noise: sigma,
        q: options.q,
        eps_selective,
        eps_universal,
        iterations,
    })
}
