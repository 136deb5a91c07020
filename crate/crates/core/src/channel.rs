//! Circuit transfer function `H_C`: piecewise-constant band attenuation plus
//! free-space distance scaling.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;

/// One attenuation band, applied to frequencies `f_lo <= f < f_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub f_lo: f64,
    pub f_hi: f64,
    pub attenuation_db: f64,
}

impl Band {
    pub fn new(f_lo: f64, f_hi: f64, attenuation_db: f64) -> Self {
        Self {
            f_lo,
            f_hi,
            attenuation_db,
        }
    }

    /// A band covering every frequency.
    pub fn all(attenuation_db: f64) -> Self {
        Self::new(0.0, f64::INFINITY, attenuation_db)
    }

    fn contains(&self, f: f64) -> bool {
        self.f_lo <= f && f < self.f_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Identity,
    BandAttenuator,
    Table,
}

/// Empirically characterized coupling between the adversary and the ADC pin.
///
/// Frequencies outside every band pass at 0 dB. The distance penalty applies
/// to all frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    #[serde(default)]
    pub kind: ChannelKind,
    #[serde(default)]
    pub bands: Vec<Band>,
    #[serde(default = "unit_ratio")]
    pub distance_ratio: f64,
}

fn unit_ratio() -> f64 {
    1.0
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl ChannelModel {
    pub fn identity() -> Self {
        Self {
            kind: ChannelKind::Identity,
            bands: Vec::new(),
            distance_ratio: 1.0,
        }
    }

    pub fn band_attenuator(bands: Vec<Band>) -> Result<Self> {
        let model = Self {
            kind: ChannelKind::BandAttenuator,
            bands,
            distance_ratio: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Flat attenuation at every frequency.
    pub fn flat(attenuation_db: f64) -> Result<Self> {
        Self::band_attenuator(vec![Band::all(attenuation_db)])
    }

    pub fn with_distance_ratio(mut self, ratio: f64) -> Result<Self> {
        self.distance_ratio = ratio;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_ratio.is_finite() && self.distance_ratio > 0.0) {
            return Err(Error::invalid(format!(
                "distance ratio must be > 0, got {}",
                self.distance_ratio
            )));
        }
        for b in &self.bands {
            if !(b.f_lo >= 0.0 && b.f_lo < b.f_hi) {
                return Err(Error::invalid(format!(
                    "band [{}, {}) is empty or negative",
                    b.f_lo, b.f_hi
                )));
            }
            if !(b.attenuation_db >= 0.0) {
                return Err(Error::invalid(format!(
                    "band attenuation must be >= 0 dB, got {}",
                    b.attenuation_db
                )));
            }
        }
        let mut sorted = self.bands.clone();
        sorted.sort_by(|a, b| a.f_lo.total_cmp(&b.f_lo));
        for pair in sorted.windows(2) {
            if pair[1].f_lo < pair[0].f_hi {
                return Err(Error::invalid(format!(
                    "bands [{}, {}) and [{}, {}) overlap",
                    pair[0].f_lo, pair[0].f_hi, pair[1].f_lo, pair[1].f_hi
                )));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.distance_ratio == 1.0 && self.bands.iter().all(|b| b.attenuation_db == 0.0)
    }

    /// Total attenuation in dB at frequency `f`, distance penalty included.
    pub fn attenuation_db(&self, f: f64) -> f64 {
        let band = self
            .bands
            .iter()
            .find(|b| b.contains(f))
            .map_or(0.0, |b| b.attenuation_db);
        band + friis_penalty(self.distance_ratio)
    }

    /// Linear amplitude gain at frequency `f`.
    pub fn gain(&self, f: f64) -> f64 {
        db_to_gain(self.attenuation_db(f))
    }

    /// A single channel equivalent to applying `self` and then `other`.
    pub fn compose(&self, other: &ChannelModel) -> Result<ChannelModel> {
        let mut edges: Vec<f64> = self
            .bands
            .iter()
            .chain(&other.bands)
            .flat_map(|b| [b.f_lo, b.f_hi])
            .collect();
        edges.push(0.0);
        edges.sort_by(f64::total_cmp);
        edges.dedup();

        let band_db = |m: &ChannelModel, f: f64| {
            m.bands
                .iter()
                .find(|b| b.contains(f))
                .map_or(0.0, |b| b.attenuation_db)
        };
        let mut bands: Vec<Band> = Vec::new();
        for pair in edges.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let db = band_db(self, lo) + band_db(other, lo);
            if db == 0.0 {
                continue;
            }
            match bands.last_mut() {
                Some(last) if last.f_hi == lo && last.attenuation_db == db => last.f_hi = hi,
                _ => bands.push(Band::new(lo, hi, db)),
            }
        }
        let model = ChannelModel {
            kind: ChannelKind::BandAttenuator,
            bands,
            distance_ratio: self.distance_ratio * other.distance_ratio,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Extra attenuation in dB when the adversary is `distance_ratio` times
/// farther away than the reference position: 6 dB per doubling.
pub fn friis_penalty(distance_ratio: f64) -> f64 {
    20.0 * distance_ratio.log10()
}

pub(crate) fn db_to_gain(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}

/// Apply `H_C` to a trace.
///
/// Each DFT bin is scaled by the gain at its frequency (negative-frequency
/// bins mirror their positive twin), so the operation is linear and keeps
/// real signals real. The identity model returns the input unchanged.
pub fn apply_channel(model: &ChannelModel, v: &Trace) -> Result<Trace> {
    model.validate()?;
    if model.is_identity() || v.is_empty() {
        return Ok(v.clone());
    }
    let scalar = db_to_gain(friis_penalty(model.distance_ratio));
    if model.bands.iter().all(|b| b.attenuation_db == 0.0) {
        return v.map(|x| x * scalar);
    }

    let n = v.len();
    let fs = v.sample_rate();
    let gains: Vec<f64> = (0..n)
        .map(|k| {
            let bin = k.min(n - k);
            model.gain(bin as f64 * fs / n as f64)
        })
        .collect();
    if gains.iter().all(|&g| g == gains[0]) {
        let g = gains[0];
        return v.map(|x| x * g);
    }

    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = v.samples().iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (c, g) in buf.iter_mut().zip(&gains) {
        *c *= g;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    v.with_samples(buf.iter().map(|c| c.re * scale).collect())
}
