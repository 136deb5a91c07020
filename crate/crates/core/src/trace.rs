//! Uniformly sampled signals and their file formats.
//!
//! A [`Trace`] is the unit every other module consumes and produces: the
//! sensor signal, the adversarial waveform, the noise realization and the
//! digitized ADC output are all traces. Traces are immutable once built.
//!
//! Two on-disk formats are supported:
//!
//! * CSV, `time_seconds,value` per row with an optional header line. The
//!   sample rate is recovered from the timestamps, which must be uniform to
//!   within 1 ppm.
//! * WAV, mono 16-bit PCM only. Samples map linearly onto `[-1, 1)` by
//!   dividing by 32768.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum relative deviation of a CSV timestamp interval from the mean interval.
pub const CSV_JITTER_TOLERANCE: f64 = 1e-6;

/// A uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<f64>,
    sample_rate: f64,
    t0: f64,
}

impl Trace {
    /// Build a trace starting at `t = 0`.
    ///
    /// Fails when the rate is not a positive finite number or any sample is
    /// NaN or infinite. An empty sample vector is accepted; operations that
    /// need data reject it themselves.
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::with_start(samples, sample_rate, 0.0)
    }

    pub fn with_start(samples: Vec<f64>, sample_rate: f64, t0: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate}"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("start time must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
            t0,
        })
    }

    /// All-zero trace of `len` samples.
    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Length in seconds, `len / sample_rate`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Timestamp of sample `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }

    /// Same samples and rate, shifted start time.
    pub fn shifted_to(&self, t0: f64) -> Self {
        Self {
            samples: self.samples.clone(),
            sample_rate: self.sample_rate,
            t0,
        }
    }

    /// Replace the samples, keeping rate and start time.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::with_start(samples, self.sample_rate, self.t0)
    }

    /// Pointwise map, keeping rate and start time.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_samples(self.samples.iter().map(|&v| f(v)).collect())
    }

    /// Linearly interpolated value at time `t`, `None` outside the sampled span.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let n = self.samples.len();
        if n == 0 {
            return None;
        }
        let pos = (t - self.t0) * self.sample_rate;
        let last = (n - 1) as f64;
        // Accept positions a hair outside the span caused by rounding of `t`.
        let slack = 1e-9 * last.max(1.0);
        if pos < -slack || pos > last + slack {
            return None;
        }
        let pos = pos.clamp(0.0, last);
        let i = pos.floor() as usize;
        if i + 1 >= n {
            return Some(self.samples[n - 1]);
        }
        let frac = pos - i as f64;
        if frac == 0.0 {
            return Some(self.samples[i]);
        }
        Some(self.samples[i] + (self.samples[i + 1] - self.samples[i]) * frac)
    }

    /// Linear resampling onto a grid at `sample_rate` covering the same span.
    pub fn resample_linear(&self, sample_rate: f64) -> Result<Self> {
        self.require_non_empty("resample")?;
        if sample_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let span = (self.len() - 1) as f64 / self.sample_rate;
        let count = (span * sample_rate + 1e-9).floor() as usize + 1;
        let samples = (0..count)
            .map(|k| {
                self.value_at(self.t0 + k as f64 / sample_rate)
                    .unwrap_or(self.samples[self.len() - 1])
            })
            .collect();
        Self::with_start(samples, sample_rate, self.t0)
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    /// Root-mean-square of the samples (including any DC component).
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::invalid(format!("{what}: trace is empty")))
        } else {
            Ok(())
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Supported trace file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Wav,
}

impl TraceFormat {
    /// Guess the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("wav") => TraceFormat::Wav,
            _ => TraceFormat::Csv,
        }
    }
}

pub fn read_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Trace> {
    let path = path.as_ref();
    match format {
        TraceFormat::Csv => parse_csv(&fs::read_to_string(path)?),
        TraceFormat::Wav => parse_wav(&fs::read(path)?),
    }
}

/// Write `trace` as CSV with a `time_seconds,value` header.
///
/// Values use the shortest representation that parses back to the same
/// `f64`, so a read after write reproduces the samples exactly.
pub fn write_trace(trace: &Trace, path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    if format != TraceFormat::Csv {
        return Err(Error::invalid("only CSV output is supported"));
    }
    trace.require_non_empty("write_trace")?;
    fs::write(path, format_csv(trace))?;
    Ok(())
}

pub fn format_csv(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.len() * 32 + 32);
    out.push_str("time_seconds,value\n");
    for (i, v) in trace.samples.iter().enumerate() {
        let _ = writeln!(out, "{:?},{:?}", trace.time_of(i), v);
    }
    out
}

/// Parse CSV text of `time_seconds,value` rows.
pub fn parse_csv(text: &str) -> Result<Trace> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut line_numbers = Vec::new();
    let mut seen_first = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let is_first = !seen_first;
        seen_first = true;
        if is_first && fields[0].parse::<f64>().is_err() {
            // Header row.
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::Parse {
                location: format!("line {line_no}"),
                message: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    location: format!("line {line_no}"),
                    message: format!("invalid {what} {s:?}"),
                })
        };
        times.push(parse(fields[0], "time")?);
        values.push(parse(fields[1], "value")?);
        line_numbers.push(line_no);
    }

    if times.len() < 2 {
        return Err(Error::Format(
            "at least two rows are needed to determine the sample rate".into(),
        ));
    }
    let n = times.len();
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Format("timestamps must be increasing".into()));
    }
    for i in 1..n {
        let step = times[i] - times[i - 1];
        if ((step - dt) / dt).abs() > CSV_JITTER_TOLERANCE {
            return Err(Error::Format(format!(
                "non-uniform timestamps at line {}: step {step} s vs mean {dt} s",
                line_numbers[i]
            )));
        }
    }
    Trace::with_start(values, 1.0 / dt, times[0])
}

fn wav_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("byte {offset}"),
        message: message.into(),
    }
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| wav_err(at, "unexpected end of file"))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| wav_err(at, "unexpected end of file"))
}

/// Parse a RIFF/WAVE byte stream holding mono 16-bit PCM.
pub fn parse_wav(bytes: &[u8]) -> Result<Trace> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(wav_err(0, "missing RIFF tag"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(wav_err(8, "missing WAVE tag"));
    }

    let mut pos = 12;
    let mut format: Option<(u32, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(body, "fmt chunk shorter than 16 bytes"));
                }
                let tag = read_u16(bytes, body)?;
                let channels = read_u16(bytes, body + 2)?;
                let rate = read_u32(bytes, body + 4)?;
                let bits = read_u16(bytes, body + 14)?;
                if tag != 1 {
                    return Err(Error::Format(format!(
                        "byte {body}: only PCM (format tag 1) is supported, found {tag}"
                    )));
                }
                if channels != 1 {
                    return Err(Error::Format(format!(
                        "byte {}: only mono is supported, found {channels} channels",
                        body + 2
                    )));
                }
                if bits != 16 {
                    return Err(Error::Format(format!(
                        "byte {}: only 16-bit samples are supported, found {bits}",
                        body + 14
                    )));
                }
                if rate == 0 {
                    return Err(wav_err(body + 4, "zero sample rate"));
                }
                format = Some((rate, body));
            }
            b"data" => {
                let (rate, _) = format.ok_or_else(|| wav_err(pos, "data chunk before fmt chunk"))?;
                let end = body
                    .checked_add(size)
                    .filter(|&e| e <= bytes.len())
                    .ok_or_else(|| wav_err(body, "data chunk runs past end of file"))?;
                if !size.is_multiple_of(2) {
                    return Err(wav_err(body, "odd data chunk size for 16-bit samples"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
                    .collect();
                return Trace::new(samples, rate as f64);
            }
            _ => {}
        }
        // Chunks are padded to an even length.
        pos = body + size + (size & 1);
    }
    Err(wav_err(pos.min(bytes.len()), "no data chunk found"))
}

/// Window applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    pub frequency: f64,
    pub magnitude: f64,
}

/// One-sided amplitude spectrum from DC up to Nyquist.
///
/// Magnitudes are normalized so that a sinusoid of amplitude `A` sitting
/// exactly on a bin reports `A` in that bin and a constant `c` reports `|c|`
/// at DC. With the rectangular window this gives
/// `sum(x^2) = n * (m_0^2 + sum(m_k^2) / 2 + m_nyq^2)`, see
/// [`Spectrum::signal_energy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bins: Vec<SpectrumBin>,
    pub resolution: f64,
    pub length: usize,
    pub window: Window,
}

impl Spectrum {
    /// Energy of the source trace reconstructed from the magnitudes.
    pub fn signal_energy(&self) -> f64 {
        let n = self.length;
        self.bins
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let m2 = b.magnitude * b.magnitude;
                if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                    m2
                } else {
                    m2 / 2.0
                }
            })
            .sum::<f64>()
            * n as f64
    }

    /// Index of the largest bin, skipping DC when `skip_dc`.
    pub fn dominant_index(&self, skip_dc: bool) -> Option<usize> {
        let start = usize::from(skip_dc);
        self.bins
            .iter()
            .enumerate()
            .skip(start)
            .fold(None, |best: Option<(usize, f64)>, (i, b)| match best {
                Some((_, m)) if m >= b.magnitude => best,
                _ => Some((i, b.magnitude)),
            })
            .map(|(i, _)| i)
    }

    pub fn dominant(&self, skip_dc: bool) -> Option<SpectrumBin> {
        self.dominant_index(skip_dc).map(|i| self.bins[i])
    }

    /// Index of the bin nearest to `frequency`.
    pub fn index_of(&self, frequency: f64) -> usize {
        let k = (frequency / self.resolution).round().max(0.0) as usize;
        k.min(self.bins.len().saturating_sub(1))
    }

    /// Magnitude in the bin nearest to `frequency`.
    pub fn magnitude_at(&self, frequency: f64) -> f64 {
        self.bins
            .get(self.index_of(frequency))
            .map_or(0.0, |b| b.magnitude)
    }

    /// CSV with a `frequency_hz,magnitude` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.bins.len() * 32 + 24);
        out.push_str("frequency_hz,magnitude\n");
        for b in &self.bins {
            let _ = writeln!(out, "{:?},{:?}", b.frequency, b.magnitude);
        }
        out
    }
}

/// Rectangular-window spectrum of `trace`.
pub fn spectrum(trace: &Trace) -> Result<Spectrum> {
    spectrum_with_window(trace, Window::Rectangular)
}

pub fn spectrum_with_window(trace: &Trace, window: Window) -> Result<Spectrum> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::invalid("spectrum needs at least two samples"));
    }
    let weights: Vec<f64> = match window {
        Window::Rectangular => vec![1.0; n],
        Window::Hann => (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect(),
    };
    let gain: f64 = weights.iter().sum();

    let mut buf: Vec<Complex<f64>> = trace
        .samples()
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| Complex::new(x * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let resolution = trace.sample_rate() / n as f64;
    let bins = (0..=n / 2)
        .map(|k| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            let scale = if edge { 1.0 } else { 2.0 };
            SpectrumBin {
                frequency: k as f64 * resolution,
                magnitude: scale * buf[k].norm() / gain,
            }
        })
        .collect();
    Ok(Spectrum {
        bins,
        resolution,
        length: n,
        window,
    })
}
