//! Experiment configuration file.
//!
//! The format is TOML. Every section is optional; a subcommand reports the
//! sections it needs when they are missing. Command-line flags override the
//! file.
//!
//! ```toml
//! seed = 7                      # master seed
//! mode = "eq5_with_q"           # or "strict_pseudocode"
//!
//! [adc]
//! preset = "atmega328p"         # optional starting point
//! time_scale = 1000.0           # optional, see AdcConfig::time_scaled
//! n_bits = 10                   # any AdcConfig field overrides the preset
//! amp_coeffs = [1.0, 0.5]
//!
//! [channel]                     # ChannelModel, identity when absent
//! kind = "band_attenuator"
//! bands = [{ f_lo = 0.0, f_hi = 1e6, attenuation_db = 6.0 }]
//! distance_ratio = 1.0
//!
//! [tone]                        # target waveform w(t)
//! kind = "sine"                 # zero | sine | exp_sine | composite
//! freq = 1.0
//!
//! [am]                          # omit to inject the tone at baseband
//! carrier = 5000.0
//! depth = 1.0
//! v_pk = 1.0                    # exactly one of v_pk, power_dbm, carrier_level
//!
//! [noise]                       # zero | gaussian | empirical
//! kind = "gaussian"
//! sigma = 0.001
//!
//! [sensor]                      # legitimate sensor signal s(t), zero when absent
//! kind = "sine"
//! freq = 0.2
//!
//! [simulation]
//! duration = 4.0                # seconds of ADC output
//!
//! [sweep]
//! carriers = [1e3, 2e3]
//! powers = [0.0, 10.0]
//! power_unit = "dbm"            # or "vpk"
//! depths = [1.0]
//! capture_len = 1024
//! threads = 4                   # optional
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sigstrength::adcmodel::AdcConfig;
use sigstrength::channel::ChannelModel;
use sigstrength::noise::NoiseModel;
use sigstrength::security::Mode;
use sigstrength::signalgen::{dbm_to_vpk, AmSpec, ToneSpec};
use sigstrength::sweep::PowerUnit;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub adc: Option<AdcSection>,
    pub channel: Option<ChannelModel>,
    pub tone: Option<ToneSpec>,
    pub am: Option<AmSection>,
    pub noise: Option<NoiseModel>,
    pub sensor: Option<ToneSpec>,
    #[serde(default)]
    pub simulation: SimulationSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Preset name plus per-field overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcSection {
    pub preset: Option<String>,
    pub time_scale: Option<f64>,
    pub name: Option<String>,
    pub n_bits: Option<u32>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub f_s: Option<f64>,
    pub tau: Option<f64>,
    pub r_sh: Option<f64>,
    pub c_sh: Option<f64>,
    pub amp_coeffs: Option<Vec<f64>>,
    pub clamp_lo: Option<f64>,
    pub clamp_hi: Option<f64>,
    /// Drop the sample-and-hold filter even when the preset has one.
    #[serde(default)]
    pub no_sample_hold: bool,
    /// Drop both ESD clamps.
    #[serde(default)]
    pub no_clamps: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmSection {
    pub carrier: f64,
    #[serde(default = "full_depth")]
    pub depth: f64,
    pub v_pk: Option<f64>,
    pub power_dbm: Option<f64>,
    /// Amplitude of the unmodulated carrier.
    pub carrier_level: Option<f64>,
}

fn full_depth() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_duration")]
    pub duration: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            duration: default_duration(),
        }
    }
}

fn default_duration() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub carriers: Vec<f64>,
    pub powers: Vec<f64>,
    #[serde(default)]
    pub power_unit: PowerUnit,
    #[serde(default = "full_depth_axis")]
    pub depths: Vec<f64>,
    #[serde(default = "default_capture_len")]
    pub capture_len: usize,
    pub threads: Option<usize>,
}

fn full_depth_axis() -> Vec<f64> {
    vec![1.0]
}

fn default_capture_len() -> usize {
    1024
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn invalid(field: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {err}"))
}

fn missing(field: &str) -> CliError {
    CliError::Config(format!("{field}: section is required for this command"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn adc(&self) -> Result<AdcConfig, CliError> {
        self.adc.as_ref().ok_or_else(|| missing("adc"))?.build()
    }

    pub fn channel(&self) -> Result<ChannelModel, CliError> {
        let channel = self.channel.clone().unwrap_or_default();
        channel.validate().map_err(|e| invalid("channel", e))?;
        Ok(channel)
    }

    pub fn tone(&self) -> Result<ToneSpec, CliError> {
        let tone = self.tone.clone().ok_or_else(|| missing("tone"))?;
        tone.validate().map_err(|e| invalid("tone", e))?;
        Ok(tone)
    }

    pub fn sensor(&self) -> Result<ToneSpec, CliError> {
        let sensor = self.sensor.clone().unwrap_or(ToneSpec::Zero);
        sensor.validate().map_err(|e| invalid("sensor", e))?;
        Ok(sensor)
    }

    pub fn noise(&self) -> Result<NoiseModel, CliError> {
        let noise = self.noise.clone().unwrap_or(NoiseModel::Zero);
        noise.validate().map_err(|e| invalid("noise", e))?;
        Ok(noise)
    }

    pub fn am(&self) -> Result<Option<AmSpec>, CliError> {
        self.am.as_ref().map(AmSection::build).transpose()
    }

    pub fn sweep(&self) -> Result<&SweepSection, CliError> {
        let sweep = self.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
        for (name, axis) in [
            ("carriers", &sweep.carriers),
            ("powers", &sweep.powers),
            ("depths", &sweep.depths),
        ] {
            if axis.is_empty() {
                return Err(invalid(&format!("sweep.{name}"), "axis is empty"));
            }
        }
        if sweep.capture_len < 2 {
            return Err(invalid("sweep.capture_len", "must be at least 2"));
        }
        if sweep.threads == Some(0) {
            return Err(invalid("sweep.threads", "must be at least 1"));
        }
        Ok(sweep)
    }

    pub fn duration(&self) -> Result<f64, CliError> {
        let d = self.simulation.duration;
        if !(d.is_finite() && d > 0.0) {
            return Err(invalid("simulation.duration", format!("must be > 0, got {d}")));
        }
        Ok(d)
    }
}

impl AdcSection {
    pub fn build(&self) -> Result<AdcConfig, CliError> {
        let mut cfg = match &self.preset {
            Some(name) => AdcConfig::preset(name).map_err(|e| invalid("adc.preset", e))?,
            None => {
                let need = |v: Option<f64>, field: &str| v.ok_or_else(|| missing(field));
                AdcConfig {
                    name: None,
                    n_bits: self.n_bits.ok_or_else(|| missing("adc.n_bits"))?,
                    v_min: need(self.v_min, "adc.v_min")?,
                    v_max: need(self.v_max, "adc.v_max")?,
                    f_s: need(self.f_s, "adc.f_s")?,
                    tau: 0.0,
                    r_sh: None,
                    c_sh: None,
                    amp_coeffs: vec![1.0],
                    clamp_lo: None,
                    clamp_hi: None,
                }
            }
        };
        if let Some(scale) = self.time_scale {
            cfg = cfg.time_scaled(scale).map_err(|e| invalid("adc.time_scale", e))?;
        }
        macro_rules! overlay {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        overlay!(name, n_bits, v_min, v_max, f_s, tau, r_sh, c_sh, amp_coeffs, clamp_lo, clamp_hi);
        if self.no_sample_hold {
            cfg.r_sh = None;
            cfg.c_sh = None;
        }
        if self.no_clamps {
            cfg.clamp_lo = None;
            cfg.clamp_hi = None;
        }
        cfg.validate().map_err(|e| invalid("adc", e))?;
        Ok(cfg)
    }
}

impl AmSection {
    pub fn build(&self) -> Result<AmSpec, CliError> {
        let given = [self.v_pk, self.power_dbm, self.carrier_level]
            .iter()
            .filter(|v| v.is_some())
            .count();
        if given != 1 {
            return Err(invalid(
                "am",
                "give exactly one of v_pk, power_dbm, carrier_level",
            ));
        }
        let spec = match (self.v_pk, self.power_dbm, self.carrier_level) {
            (Some(v), _, _) => AmSpec::new(self.carrier, self.depth, v),
            (_, Some(dbm), _) => AmSpec::new(self.carrier, self.depth, dbm_to_vpk(dbm)),
            (_, _, Some(level)) => AmSpec::from_carrier_level(self.carrier, self.depth, level),
            _ => unreachable!("exactly one level is set"),
        };
        spec.map_err(|e| invalid("am", e))
    }
}
