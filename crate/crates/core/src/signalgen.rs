//! Target waveforms `w(t)` and amplitude-modulated adversarial signals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;

/// One sinusoidal term of a composite tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub freq: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Target waveform description.
///
/// `exp_sine` is `amplitude * exp(sin(2 pi f t + phase))`, the better fit for
/// demodulated outputs carrying even-order distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToneSpec {
    Zero,
    Sine {
        freq: f64,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    ExpSine {
        freq: f64,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    Composite {
        components: Vec<Component>,
    },
}

fn unit() -> f64 {
    1.0
}

impl ToneSpec {
    pub fn sine(freq: f64, amplitude: f64) -> Self {
        ToneSpec::Sine {
            freq,
            amplitude,
            phase: 0.0,
        }
    }

    pub fn exp_sine(freq: f64, amplitude: f64) -> Self {
        ToneSpec::ExpSine {
            freq,
            amplitude,
            phase: 0.0,
        }
    }

    /// Fundamental plus harmonics `k * freq` at the given relative amplitudes.
    pub fn harmonic_mix(freq: f64, amplitude: f64, harmonics: &[(u32, f64, f64)]) -> Self {
        let mut components = vec![Component {
            freq,
            amplitude,
            phase: 0.0,
        }];
        components.extend(harmonics.iter().map(|&(k, rel, phase)| Component {
            freq: k as f64 * freq,
            amplitude: rel * amplitude,
            phase,
        }));
        ToneSpec::Composite { components }
    }

    /// Short name used in reports (`zero`, `sine`, `exp_sine`, `composite`).
    pub fn name(&self) -> &'static str {
        match self {
            ToneSpec::Zero => "zero",
            ToneSpec::Sine { .. } => "sine",
            ToneSpec::ExpSine { .. } => "exp_sine",
            ToneSpec::Composite { .. } => "composite",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |f: f64, a: f64| {
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::invalid(format!("tone frequency must be >= 0, got {f}")));
            }
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::invalid(format!("tone amplitude must be >= 0, got {a}")));
            }
            Ok(())
        };
        match self {
            ToneSpec::Zero => Ok(()),
            ToneSpec::Sine {
                freq,
                amplitude,
                phase,
            }
            | ToneSpec::ExpSine {
                freq,
                amplitude,
                phase,
            } => {
                check(*freq, *amplitude)?;
                if !phase.is_finite() {
                    return Err(Error::invalid("tone phase must be finite"));
                }
                Ok(())
            }
            ToneSpec::Composite { components } => {
                for c in components {
                    check(c.freq, c.amplitude)?;
                    if !c.phase.is_finite() {
                        return Err(Error::invalid("tone phase must be finite"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Highest frequency present. `exp_sine` is not band-limited; its
    /// fundamental is reported.
    pub fn max_frequency(&self) -> f64 {
        match self {
            ToneSpec::Zero => 0.0,
            ToneSpec::Sine { freq, .. } | ToneSpec::ExpSine { freq, .. } => *freq,
            ToneSpec::Composite { components } => {
                components.iter().map(|c| c.freq).fold(0.0, f64::max)
            }
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            ToneSpec::Zero => 0.0,
            ToneSpec::Sine {
                freq,
                amplitude,
                phase,
            } => amplitude * (2.0 * PI * freq * t + phase).sin(),
            ToneSpec::ExpSine {
                freq,
                amplitude,
                phase,
            } => amplitude * (2.0 * PI * freq * t + phase).sin().exp(),
            ToneSpec::Composite { components } => components
                .iter()
                .map(|c| c.amplitude * (2.0 * PI * c.freq * t + c.phase).sin())
                .sum(),
        }
    }

    /// Analytic value range over a full period, `(min, max)`.
    pub fn range(&self) -> (f64, f64) {
        match self {
            ToneSpec::Zero => (0.0, 0.0),
            ToneSpec::Sine { amplitude, .. } => (-amplitude, *amplitude),
            ToneSpec::ExpSine { amplitude, .. } => {
                (amplitude * (-1.0f64).exp(), amplitude * 1.0f64.exp())
            }
            ToneSpec::Composite { components } => {
                let bound: f64 = components.iter().map(|c| c.amplitude).sum();
                (-bound, bound)
            }
        }
    }
}

/// Sample `spec` at `k / sample_rate` for `k < round(duration * sample_rate)`.
///
/// Sampling below twice the highest component frequency is allowed but
/// logged as a warning.
pub fn synthesize(spec: &ToneSpec, sample_rate: f64, duration: f64) -> Result<Trace> {
    spec.validate()?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!("duration must be > 0, got {duration}")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid(format!("sample rate must be > 0, got {sample_rate}")));
    }
    if sample_rate <= 2.0 * spec.max_frequency() {
        log::warn!(
            "synthesizing a {} Hz component at {} Hz aliases",
            spec.max_frequency(),
            sample_rate
        );
    }
    let count = ((duration * sample_rate).round() as usize).max(1);
    let samples = (0..count)
        .map(|k| spec.value_at(k as f64 / sample_rate))
        .collect();
    Trace::new(samples, sample_rate)
}

/// Amplitude-modulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmSpec {
    /// Carrier frequency in Hz.
    pub carrier: f64,
    /// Modulation depth in `[0, 1]`.
    pub depth: f64,
    /// Peak voltage bound of the transmitted signal.
    pub v_pk: f64,
}

impl AmSpec {
    pub fn new(carrier: f64, depth: f64, v_pk: f64) -> Result<Self> {
        let spec = Self {
            carrier,
            depth,
            v_pk,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec whose unmodulated carrier has amplitude `carrier_amplitude`,
    /// i.e. `v_pk = carrier_amplitude * (1 + depth)`.
    ///
    /// Signal generators quote their level for the carrier; this is the
    /// parameterization under which demodulated amplitude is linear in depth.
    pub fn from_carrier_level(carrier: f64, depth: f64, carrier_amplitude: f64) -> Result<Self> {
        Self::new(carrier, depth, carrier_amplitude * (1.0 + depth))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier.is_finite() && self.carrier > 0.0) {
            return Err(Error::invalid(format!(
                "carrier frequency must be > 0, got {}",
                self.carrier
            )));
        }
        if !(0.0..=1.0).contains(&self.depth) {
            return Err(Error::invalid(format!(
                "modulation depth must lie in [0, 1], got {}",
                self.depth
            )));
        }
        if !(self.v_pk.is_finite() && self.v_pk >= 0.0) {
            return Err(Error::invalid(format!("v_pk must be >= 0, got {}", self.v_pk)));
        }
        Ok(())
    }

    /// Amplitude of the unmodulated carrier, `v_pk / (1 + depth)`.
    pub fn carrier_amplitude(&self) -> f64 {
        self.v_pk / (1.0 + self.depth)
    }
}

/// Rescale `samples` from `[min, max]` onto `[-1, 1]`; constant input maps to 0.
pub fn normalize_unit(samples: &[f64]) -> Vec<f64> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; samples.len()];
    }
    samples
        .iter()
        .map(|&v| (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0))
        .collect()
}

/// `v(t) = v_pk * (1 + depth * w_hat(t)) * cos(2 pi f_c t) / (1 + depth)`.
///
/// `w_hat` is `w` rescaled onto `[-1, 1]`, evaluated at the output rate by
/// linear interpolation when the rates differ. Dividing by `1 + depth`
/// keeps `|v(t)| <= v_pk`.
pub fn am_modulate(w: &Trace, spec: &AmSpec, output_rate: f64) -> Result<Trace> {
    spec.validate()?;
    w.require_non_empty("am_modulate")?;
    if !(output_rate.is_finite() && output_rate >= 2.0 * spec.carrier) {
        return Err(Error::invalid(format!(
            "output rate {output_rate} Hz cannot represent a {} Hz carrier",
            spec.carrier
        )));
    }
    if output_rate < 10.0 * spec.carrier {
        log::warn!(
            "output rate {output_rate} Hz is below 10x the {} Hz carrier",
            spec.carrier
        );
    }

    let envelope_source = if w.sample_rate() == output_rate {
        w.clone()
    } else {
        let count = ((w.duration() * output_rate).round() as usize).max(1);
        let last = w.samples()[w.len() - 1];
        let samples = (0..count)
            .map(|k| w.value_at(w.t0() + k as f64 / output_rate).unwrap_or(last))
            .collect();
        Trace::with_start(samples, output_rate, w.t0())?
    };
    let w_hat = normalize_unit(envelope_source.samples());

    let scale = spec.v_pk / (1.0 + spec.depth);
    let samples = w_hat
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let t = envelope_source.time_of(k);
            scale * (1.0 + spec.depth * u) * (2.0 * PI * spec.carrier * t).cos()
        })
        .collect();
    Trace::with_start(samples, output_rate, w.t0())
}

/// Root-mean-square voltage of a trace.
pub fn v_rms(trace: &Trace) -> Result<f64> {
    trace.require_non_empty("v_rms")?;
    Ok(trace.rms())
}

/// Peak voltage of a signal at `dbm` into 50 ohms.
pub fn dbm_to_vpk(dbm: f64) -> f64 {
    (2.0 * 50.0 * 10f64.powf((dbm - 30.0) / 10.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_samples() {
        let t = synthesize(&ToneSpec::sine(1.0, 1.0), 1000.0, 1.0).unwrap();
        assert_eq!(t.len(), 1000);
        assert_eq!(t.samples()[0], 0.0);
        assert!((t.samples()[250] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exp_sine_range() {
        let t = synthesize(&ToneSpec::exp_sine(1.0, 1.0), 1000.0, 1.0).unwrap();
        let max = t.samples().iter().cloned().fold(f64::MIN, f64::max);
        let min = t.samples().iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 1f64.exp()).abs() < 1e-12);
        assert!((min - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_tone() {
        let t = synthesize(&ToneSpec::Zero, 100.0, 0.5).unwrap();
        assert_eq!(t.samples(), &[0.0; 50]);
    }

    #[test]
    fn bad_duration() {
        assert!(synthesize(&ToneSpec::Zero, 100.0, 0.0).is_err());
        assert!(synthesize(&ToneSpec::Zero, 100.0, -1.0).is_err());
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = ToneSpec::harmonic_mix(3.0, 0.7, &[(2, 0.4, 0.3), (3, 0.4, 1.1)]);
        let a = synthesize(&spec, 1234.0, 2.0).unwrap();
        let b = synthesize(&spec, 1234.0, 2.0).unwrap();
        assert!(a
            .samples()
            .iter()
            .zip(b.samples())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_depth_is_pure_carrier() {
        let w = synthesize(&ToneSpec::sine(10.0, 1.0), 10_000.0, 0.1).unwrap();
        let spec = AmSpec::new(1000.0, 0.0, 0.7).unwrap();
        let v = am_modulate(&w, &spec, 10_000.0).unwrap();
        for (k, &x) in v.samples().iter().enumerate() {
            let want = 0.7 * (2.0 * PI * 1000.0 * k as f64 / 10_000.0).cos();
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn full_depth_envelope() {
        // A square envelope at +1 then -1.
        let w = Trace::new(vec![1.0, 1.0, -1.0, -1.0], 4.0).unwrap();
        let spec = AmSpec::new(0.5, 1.0, 2.0).unwrap();
        let v = am_modulate(&w, &spec, 4.0).unwrap();
        // cos(2 pi 0.5 k / 4) at k = 0, 1 -> 1, cos(pi/4).
        assert!((v.samples()[0] - 2.0).abs() < 1e-12);
        assert_eq!(v.samples()[2], 0.0);
        assert_eq!(v.samples()[3], 0.0);
    }

    #[test]
    fn carrier_must_be_representable() {
        let w = Trace::new(vec![0.0; 8], 8.0).unwrap();
        let spec = AmSpec::new(100.0, 0.5, 1.0).unwrap();
        assert!(am_modulate(&w, &spec, 150.0).is_err());
        assert!(am_modulate(&w, &spec, 200.0).is_ok());
    }

    #[test]
    fn depth_is_validated() {
        assert!(AmSpec::new(1.0, 1.5, 1.0).is_err());
        assert!(AmSpec::new(0.0, 0.5, 1.0).is_err());
        assert!(AmSpec::new(1.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn sidebands_at_carrier_plus_minus_tone() {
        let fs = 8000.0;
        let w = synthesize(&ToneSpec::sine(50.0, 1.0), fs, 1.0).unwrap();
        let v = am_modulate(&w, &AmSpec::new(1000.0, 0.5, 1.0).unwrap(), fs).unwrap();
        let s = crate::trace::spectrum(&v).unwrap();
        let total: f64 = s.bins.iter().map(|b| b.magnitude * b.magnitude).sum();
        let lines: f64 = [950.0, 1000.0, 1050.0]
            .iter()
            .map(|&f| s.magnitude_at(f).powi(2))
            .sum();
        assert!(lines / total > 0.999, "line fraction {}", lines / total);
        // Sideband amplitude is depth / 2 of the carrier.
        let ratio = s.magnitude_at(1050.0) / s.magnitude_at(1000.0);
        assert!((ratio - 0.25).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn rms_values() {
        let sine = synthesize(&ToneSpec::sine(5.0, 1.0), 1000.0, 1.0).unwrap();
        assert!((v_rms(&sine).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let dc = Trace::new(vec![2.0; 10], 1.0).unwrap();
        assert_eq!(v_rms(&dc).unwrap(), 2.0);
        assert!(v_rms(&Trace::new(vec![], 1.0).unwrap()).is_err());
    }

    #[test]
    fn carrier_rms_from_peak() {
        // Unmodulated carrier at V_pk = 0.2 * sqrt(2) has an RMS of 0.2 V.
        let w = Trace::new(vec![0.0; 10_000], 100_000.0).unwrap();
        let spec = AmSpec::new(1000.0, 0.0, 0.2 * 2f64.sqrt()).unwrap();
        let v = am_modulate(&w, &spec, 100_000.0).unwrap();
        assert!((v_rms(&v).unwrap() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn dbm_conversion() {
        // 0 dBm into 50 ohms is 1 mW, 0.2236 V RMS.
        assert!((dbm_to_vpk(0.0) - 0.316_227_766).abs() < 1e-8);
        assert!((dbm_to_vpk(10.0) / dbm_to_vpk(0.0) - 10f64.sqrt()).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn am_respects_peak_bound(
                depth in 0.0f64..=1.0,
                v_pk in 0.0f64..10.0,
                carrier in 10.0f64..400.0,
                harmonics in prop::collection::vec((2u32..6, 0.0f64..2.0, 0.0f64..6.3), 0..4),
                exp in any::<bool>(),
            ) {
                let tone = if exp {
                    ToneSpec::exp_sine(3.0, 1.0)
                } else {
                    ToneSpec::harmonic_mix(3.0, 1.0, &harmonics)
                };
                let w = synthesize(&tone, 4000.0, 0.5).unwrap();
                let spec = AmSpec::new(carrier, depth, v_pk).unwrap();
                let v = am_modulate(&w, &spec, 4000.0).unwrap();
                let peak = v.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                prop_assert!(peak <= v_pk + 1e-9);
            }
        }
    }
}
