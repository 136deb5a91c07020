//! ADC transfer function `H_A` and digitization.
//!
//! The chain is the one every ADC architecture shares at its input: an RC
//! sample-and-hold stage acting as a low-pass filter, a polynomial amplifier
//! non-linearity, ESD diode clamps, and finally sampling at `f_s` followed by
//! uniform quantization.
//!
//! Carrier frequencies in the GHz range cannot be simulated sample by sample.
//! All stages depend only on `f * RC` and `f / f_s`, so tests and presets may
//! be rescaled in time with [`AdcConfig::time_scaled`] without changing any
//! outcome.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, ChannelModel};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::trace::Trace;

/// Largest supported resolution; codes are stored as `u64`.
pub const MAX_BITS: u32 = 32;

/// Static description of an ADC input stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_bits: u32,
    pub v_min: f64,
    pub v_max: f64,
    /// Sampling rate in Hz.
    pub f_s: f64,
    /// Conversion delay in seconds.
    #[serde(default)]
    pub tau: f64,
    /// Sample-and-hold resistance in ohms. The filter is bypassed when either
    /// `r_sh` or `c_sh` is absent.
    #[serde(default)]
    pub r_sh: Option<f64>,
    /// Sample-and-hold capacitance in farads.
    #[serde(default)]
    pub c_sh: Option<f64>,
    /// Amplifier polynomial `a_1, a_2, ...`; `a_0` is implicitly 0.
    #[serde(default = "linear_amp")]
    pub amp_coeffs: Vec<f64>,
    /// ESD clamp levels; `None` disables that side.
    #[serde(default)]
    pub clamp_lo: Option<f64>,
    #[serde(default)]
    pub clamp_hi: Option<f64>,
}

fn linear_amp() -> Vec<f64> {
    vec![1.0]
}

/// Row of the published ADC characterization table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetRow {
    pub name: &'static str,
    pub n_bits: u32,
    pub f_s: f64,
    /// Sample-and-hold resistance range `(min, max)` in ohms.
    pub r_sh: Option<(f64, f64)>,
    pub c_sh: Option<f64>,
}

impl PresetRow {
    /// Cutoff frequency range `(lowest, highest)` over the resistance range.
    pub fn cutoff_range(&self) -> Option<(f64, f64)> {
        let (r_lo, r_hi) = self.r_sh?;
        let c = self.c_sh?;
        Some((cutoff(r_hi, c), cutoff(r_lo, c)))
    }
}

/// The six characterized ADCs: bits, sampling rate and S/H constants.
pub const PRESET_ROWS: [PresetRow; 6] = [
    PresetRow {
        name: "tlc549",
        n_bits: 8,
        f_s: 40e3,
        r_sh: Some((1e3, 1e3)),
        c_sh: Some(60e-12),
    },
    PresetRow {
        name: "atmega328p",
        n_bits: 10,
        f_s: 76.9e3,
        r_sh: Some((1e3, 100e3)),
        c_sh: Some(14e-12),
    },
    PresetRow {
        name: "artix7",
        n_bits: 12,
        f_s: 1e6,
        r_sh: Some((10e3, 10e3)),
        c_sh: Some(3e-12),
    },
    PresetRow {
        name: "ad7276",
        n_bits: 12,
        f_s: 3e6,
        r_sh: Some((75.0, 75.0)),
        c_sh: Some(32e-12),
    },
    PresetRow {
        name: "ad7783",
        n_bits: 24,
        f_s: 19.79,
        r_sh: None,
        c_sh: None,
    },
    PresetRow {
        name: "ad7822",
        n_bits: 8,
        f_s: 2e6,
        r_sh: Some((310.0, 310.0)),
        c_sh: Some(4e-12),
    },
];

fn cutoff(r: f64, c: f64) -> f64 {
    1.0 / (2.0 * PI * r * c)
}

impl AdcConfig {
    /// Ideal linear converter: no S/H filter, no clamps, zero delay.
    pub fn new(n_bits: u32, v_min: f64, v_max: f64, f_s: f64) -> Result<Self> {
        let cfg = Self {
            name: None,
            n_bits,
            v_min,
            v_max,
            f_s,
            tau: 0.0,
            r_sh: None,
            c_sh: None,
            amp_coeffs: linear_amp(),
            clamp_lo: None,
            clamp_hi: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Named preset built from [`PRESET_ROWS`].
    ///
    /// Bits, sampling rate, R and C are the characterized values; for the
    /// ATmega328P the lowest resistance (highest cutoff) is used. Voltage
    /// ranges, clamp levels 0.3 V beyond the rails, the conversion delay of a
    /// quarter sample period and the amplifier `[1.0, 0.5]` are illustrative.
    pub fn preset(name: &str) -> Result<Self> {
        let row = PRESET_ROWS
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let known: Vec<_> = PRESET_ROWS.iter().map(|r| r.name).collect();
                Error::invalid(format!(
                    "unknown ADC preset '{name}' (known: {})",
                    known.join(", ")
                ))
            })?;
        let (v_min, v_max) = match row.name {
            "artix7" => (0.0, 1.0),
            "ad7276" => (0.0, 3.3),
            "ad7783" => (-2.5, 2.5),
            "ad7822" => (0.0, 2.5),
            _ => (0.0, 5.0),
        };
        let cfg = Self {
            name: Some(row.name.to_string()),
            n_bits: row.n_bits,
            v_min,
            v_max,
            f_s: row.f_s,
            tau: 0.25 / row.f_s,
            r_sh: row.r_sh.map(|(lo, _)| lo),
            c_sh: row.c_sh,
            amp_coeffs: vec![1.0, 0.5],
            clamp_lo: Some(v_min - 0.3),
            clamp_hi: Some(v_max + 0.3),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESET_ROWS.iter().map(|r| r.name)
    }

    /// Stretch time by `factor`: `f_s / factor`, `RC * factor`, `tau * factor`.
    ///
    /// Every dimensionless ratio of the model is preserved, so a carrier at
    /// `f / factor` sees exactly what `f` saw before.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!("time scale must be > 0, got {factor}")));
        }
        let mut cfg = self.clone();
        cfg.f_s /= factor;
        cfg.tau *= factor;
        cfg.c_sh = cfg.c_sh.map(|c| c * factor);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BITS).contains(&self.n_bits) {
            return Err(Error::invalid(format!(
                "n_bits must lie in 1..={MAX_BITS}, got {}",
                self.n_bits
            )));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min < self.v_max) {
            return Err(Error::invalid(format!(
                "voltage range requires v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if !(self.f_s.is_finite() && self.f_s > 0.0) {
            return Err(Error::invalid(format!("f_s must be > 0, got {}", self.f_s)));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be >= 0, got {}", self.tau)));
        }
        for (what, v) in [("r_sh", self.r_sh), ("c_sh", self.c_sh)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(format!("{what} must be > 0, got {v}")));
                }
            }
        }
        if self.amp_coeffs.is_empty() || self.amp_coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid(
                "amp_coeffs needs at least one finite coefficient",
            ));
        }
        if let (Some(lo), Some(hi)) = (self.clamp_lo, self.clamp_hi) {
            if !(lo < hi) {
                return Err(Error::invalid(format!(
                    "clamp_lo must be below clamp_hi, got [{lo}, {hi}]"
                )));
            }
        }
        for v in [self.clamp_lo, self.clamp_hi].into_iter().flatten() {
            if v.is_nan() {
                return Err(Error::invalid("clamp level is NaN"));
            }
        }
        Ok(())
    }

    /// Quantization bound `Q = (v_max - v_min) / 2^(N+1)`.
    pub fn q(&self) -> f64 {
        (self.v_max - self.v_min) / 2f64.powi(self.n_bits as i32 + 1)
    }

    pub fn max_code(&self) -> u64 {
        (1u64 << self.n_bits) - 1
    }

    /// Reconstruction voltage of `code`: the centre of its quantization cell.
    pub fn code_to_volts(&self, code: u64) -> f64 {
        self.v_min + (code as f64 + 0.5) * 2.0 * self.q()
    }

    /// Nearest reconstruction level to `x` after clipping to the input range.
    pub fn volts_to_code(&self, x: f64) -> u64 {
        let q = self.q();
        let clipped = x.clamp(self.v_min, self.v_max);
        let max = self.max_code();
        let raw = ((clipped - self.v_min) / (2.0 * q)).floor();
        let mut code = if raw <= 0.0 {
            0
        } else {
            (raw as u64).min(max)
        };
        // Floating-point rounding at cell edges can land one cell off.
        if code < max && (clipped - self.code_to_volts(code)) > q {
            code += 1;
        } else if code > 0 && (self.code_to_volts(code) - clipped) > q {
            code -= 1;
        }
        code
    }

    pub fn sh_enabled(&self) -> bool {
        self.r_sh.is_some() && self.c_sh.is_some()
    }

    /// S/H `-3 dB` cutoff `1 / (2 pi R C)`, `None` without an S/H stage.
    pub fn cutoff_frequency(&self) -> Option<f64> {
        Some(cutoff(self.r_sh?, self.c_sh?))
    }

    /// Simulation rate for a carrier at `carrier` Hz: the smallest integer
    /// multiple of `f_s` that is at least ten times the carrier.
    pub fn simulation_rate(&self, carrier: f64) -> f64 {
        let k = (10.0 * carrier / self.f_s).ceil().max(1.0);
        self.f_s * k
    }
}

/// Cutoff frequency of an `AdcConfig`; errors when the S/H stage is absent.
pub fn cutoff_frequency(config: &AdcConfig) -> Result<f64> {
    config
        .cutoff_frequency()
        .ok_or_else(|| Error::invalid("ADC has no sample-and-hold RC constants"))
}

/// Output of sampling and quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitizedTrace {
    pub codes: Vec<u64>,
    /// Reconstructed voltages at `f_s`, timestamped at conversion start plus `tau`.
    pub volts: Trace,
    pub q: f64,
}

/// One-pole low-pass `y[k] = a y[k-1] + (1 - a) x[k]` standing in for the RC
/// sample-and-hold.
///
/// The pole is placed so the discrete gain equals `1 / sqrt(1 + (f/f_cut)^2)`
/// exactly at DC and at `min(f_cut, rate / 4)`. Below a tenth of the
/// simulation rate the magnitude response stays within 2% of the analog one.
pub fn sh_filter(config: &AdcConfig, x: &Trace) -> Result<Trace> {
    let Some(fc) = config.cutoff_frequency() else {
        return Ok(x.clone());
    };
    if x.is_empty() {
        return Ok(x.clone());
    }
    let a = sh_pole(fc, x.sample_rate());
    if a == 0.0 {
        return Ok(x.clone());
    }
    let mut y = x.samples()[0];
    let out = x
        .samples()
        .iter()
        .map(|&v| {
            y = a * y + (1.0 - a) * v;
            y
        })
        .collect();
    x.with_samples(out)
}

/// Pole of the matched one-pole filter.
pub(crate) fn sh_pole(fc: f64, rate: f64) -> f64 {
    let fm = fc.min(rate / 4.0);
    let g2 = 1.0 / (1.0 + (fm / fc).powi(2));
    if 1.0 - g2 < 1e-15 {
        return 0.0;
    }
    let theta = 2.0 * PI * fm / rate;
    // |H|^2 = (1-a)^2 / (1 - 2a cos(theta) + a^2) = g2, solved for a in (0, 1).
    let c = (1.0 - g2 * theta.cos()) / (1.0 - g2);
    c - (c * c - 1.0).sqrt()
}

/// Magnitude response of [`sh_filter`] at frequency `f` for simulation rate `rate`.
pub fn sh_gain(config: &AdcConfig, f: f64, rate: f64) -> f64 {
    let Some(fc) = config.cutoff_frequency() else {
        return 1.0;
    };
    let a = sh_pole(fc, rate);
    let theta = 2.0 * PI * f / rate;
    (1.0 - a) / (1.0 - 2.0 * a * theta.cos() + a * a).sqrt()
}

/// Pointwise `sum_n a_n x^n` for `coeffs = [a_1, a_2, ...]`.
pub fn nonlinear_amp(coeffs: &[f64], x: &Trace) -> Result<Trace> {
    if coeffs.is_empty() {
        return Err(Error::invalid("amplifier needs at least one coefficient"));
    }
    if coeffs == [1.0] {
        return Ok(x.clone());
    }
    x.map(|v| coeffs.iter().rev().fold(0.0, |acc, a| (acc + a) * v))
}

/// Hard clip to the configured ESD clamp levels.
pub fn esd_clamp(config: &AdcConfig, x: &Trace) -> Result<Trace> {
    let lo = config.clamp_lo.unwrap_or(f64::NEG_INFINITY);
    let hi = config.clamp_hi.unwrap_or(f64::INFINITY);
    if !(lo < hi) {
        return Err(Error::invalid("clamp_lo must be below clamp_hi"));
    }
    x.map(|v| v.clamp(lo, hi))
}

/// Sample `x` at `t_k = t0 + k / f_s` and quantize.
///
/// The analog value is read at the conversion start by linear interpolation
/// and reported at `t_k + tau`.
pub fn sample_and_quantize(config: &AdcConfig, x: &Trace) -> Result<DigitizedTrace> {
    config.validate()?;
    if x.sample_rate() < config.f_s * (1.0 - 1e-12) {
        return Err(Error::invalid(format!(
            "input rate {} Hz is below the ADC rate {} Hz",
            x.sample_rate(),
            config.f_s
        )));
    }
    if x.len() < 2 || x.duration() < 1.0 / config.f_s {
        return Err(Error::invalid(
            "input is shorter than one sampling interval",
        ));
    }
    let span = (x.len() - 1) as f64 / x.sample_rate();
    let count = (span * config.f_s * (1.0 + 1e-12)).floor() as usize + 1;
    let ratio = x.sample_rate() / config.f_s;
    let integer_ratio = (ratio - ratio.round()).abs() < 1e-9 && ratio.round() >= 1.0;
    let step = ratio.round() as usize;

    let mut codes = Vec::with_capacity(count);
    let mut volts = Vec::with_capacity(count);
    for k in 0..count {
        let analog = if integer_ratio {
            x.samples()[(k * step).min(x.len() - 1)]
        } else {
            let t = x.t0() + k as f64 / config.f_s;
            x.value_at(t).unwrap_or(x.samples()[x.len() - 1])
        };
        let code = config.volts_to_code(analog);
        codes.push(code);
        volts.push(config.code_to_volts(code));
    }
    Ok(DigitizedTrace {
        codes,
        volts: Trace::with_start(volts, config.f_s, x.t0() + config.tau)?,
        q: config.q(),
    })
}

/// Full chain: `quantize(clamp(amp(sh(H_C(v) + s + n))))`.
///
/// `v` and `s` must share sample rate and length; the noise is drawn at that
/// rate from `seed`, so equal seeds give bit-equal outputs.
pub fn digitize_pipeline(
    config: &AdcConfig,
    channel: &ChannelModel,
    v: &Trace,
    s: &Trace,
    noise: &NoiseModel,
    seed: u64,
) -> Result<DigitizedTrace> {
    config.validate()?;
    noise.validate()?;
    if v.sample_rate() != s.sample_rate() {
        return Err(Error::invalid(format!(
            "adversarial rate {} Hz differs from sensor rate {} Hz",
            v.sample_rate(),
            s.sample_rate()
        )));
    }
    if v.len() != s.len() {
        return Err(Error::invalid(format!(
            "adversarial trace has {} samples, sensor trace {}",
            v.len(),
            s.len()
        )));
    }
    let coupled = apply_channel(channel, v)?;
    let n = noise.draw(v.len(), seed);
    let summed: Vec<f64> = coupled
        .samples()
        .iter()
        .zip(s.samples())
        .zip(&n)
        .map(|((a, b), c)| a + b + c)
        .collect();
    let x = v.with_samples(summed)?;
    let x = sh_filter(config, &x)?;
    let x = nonlinear_amp(&config.amp_coeffs, &x)?;
    let x = esd_clamp(config, &x)?;
    sample_and_quantize(config, &x)
}
