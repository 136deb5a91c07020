//! Injection campaigns: grids over carrier, power and depth, critical-voltage
//! bisection and the existential probe over a finite waveform family.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adcmodel::AdcConfig;
use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::instrument::{capture, BenchClient, DEFAULT_TIMEOUT};
use crate::noise::NoiseModel;
use crate::security::{compare, is_universally_secure, CompareOptions, MeasurementSet, Mode};
use crate::signalgen::{dbm_to_vpk, synthesize, AmSpec, ToneSpec};
use crate::similarity::similarity;
use crate::trace::{rms, Trace};

/// Unit of the power axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerUnit {
    /// dBm into 50 ohms.
    #[default]
    Dbm,
    /// Peak volts.
    Vpk,
}

impl PowerUnit {
    pub fn to_vpk(self, power: f64) -> f64 {
        match self {
            PowerUnit::Dbm => dbm_to_vpk(power),
            PowerUnit::Vpk => power,
        }
    }

    fn wire_suffix(self) -> &'static str {
        match self {
            PowerUnit::Dbm => "DBM",
            PowerUnit::Vpk => "VPK",
        }
    }
}

/// Where captures come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    #[default]
    InProcess,
    /// A bench server at `address`, configured with the same ADC, channel
    /// and noise as the sweep.
    Remote {
        address: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT.as_millis() as u64
}

/// Inputs of [`run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub adc: AdcConfig,
    #[serde(default)]
    pub channel: ChannelModel,
    pub tone: ToneSpec,
    pub noise: NoiseModel,
    pub seed: u64,
    pub carriers: Vec<f64>,
    pub powers: Vec<f64>,
    #[serde(default)]
    pub power_unit: PowerUnit,
    pub depths: Vec<f64>,
    /// ADC samples per capture.
    pub capture_len: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// One grid cell. Metrics are `None` when the cell failed or a metric is
/// undefined (for instance a flat capture has no correlation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub carrier_hz: f64,
    pub power: f64,
    pub depth: f64,
    pub similarity: Option<f64>,
    pub eps: Option<f64>,
    /// AC RMS of the reference capture.
    pub v_rms_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Results of a sweep, cells ordered carrier-major, then power, then depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub carriers: Vec<f64>,
    pub powers: Vec<f64>,
    pub power_unit: PowerUnit,
    pub depths: Vec<f64>,
    pub cells: Vec<SweepCell>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:?}"))
}

impl SweepGrid {
    pub fn cell(&self, carrier: usize, power: usize, depth: usize) -> &SweepCell {
        let idx = (carrier * self.powers.len() + power) * self.depths.len() + depth;
        &self.cells[idx]
    }

    /// One row per cell: `carrier_hz,power,depth,similarity,eps,vrms`.
    /// Undefined metrics are written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("carrier_hz,power,depth,similarity,eps,vrms\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:?},{:?},{:?},{},{},{}\n",
                c.carrier_hz,
                c.power,
                c.depth,
                opt(c.similarity),
                opt(c.eps),
                opt(c.v_rms_out)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one capture, derived from the sweep seed and the cell's
/// coordinates only, so results do not depend on grid order.
pub fn cell_seed(seed: u64, carrier: f64, v_pk: f64, depth: f64, capture: u64) -> u64 {
    [carrier.to_bits(), v_pk.to_bits(), depth.to_bits(), capture]
        .into_iter()
        .fold(mix(seed), |acc, x| mix(acc ^ x))
}

/// Tone as it can be expressed on the wire, if it can.
fn wire_tone(tone: &ToneSpec) -> Option<(&'static str, f64)> {
    match *tone {
        ToneSpec::Zero => Some(("ZERO", 0.0)),
        ToneSpec::Sine {
            freq,
            amplitude,
            phase,
        } if amplitude == 1.0 && phase == 0.0 => Some(("SINE", freq)),
        ToneSpec::ExpSine {
            freq,
            amplitude,
            phase,
        } if amplitude == 1.0 && phase == 0.0 => Some(("EXPSINE", freq)),
        _ => None,
    }
}

/// A capture failure: `Cell` is recorded and the sweep goes on, `Fatal`
/// aborts it.
enum CaptureError {
    Cell(String),
    Fatal(Error),
}

struct Capturer<'a> {
    config: &'a SweepConfig,
}

impl Capturer<'_> {
    fn in_process(&self, am: &AmSpec, seeds: [u64; 2]) -> std::result::Result<[Trace; 2], CaptureError> {
        let c = self.config;
        let one = |seed| {
            capture(&c.adc, &c.channel, &c.noise, &c.tone, am, seed, c.capture_len)
                .map_err(|e| CaptureError::Cell(e.to_string()))
        };
        Ok([one(seeds[0])?, one(seeds[1])?])
    }

    fn remote(
        &self,
        address: &str,
        timeout: Duration,
        power: f64,
        am: &AmSpec,
        seeds: [u64; 2],
    ) -> std::result::Result<[Trace; 2], CaptureError> {
        let c = self.config;
        let fatal = CaptureError::Fatal;
        let (kind, freq) = wire_tone(&c.tone).ok_or_else(|| {
            fatal(Error::invalid(
                "remote sweeps need a unit-amplitude, zero-phase sine, exp_sine or zero tone",
            ))
        })?;
        let mut client = BenchClient::connect(address, timeout).map_err(fatal)?;
        let rate = client.sample_rate().map_err(fatal)?;
        let setters = [
            format!("FREQ {:?}", am.carrier),
            format!("POW {:?}{}", power, c.power_unit.wire_suffix()),
            format!("AM:DEPTH {:?}", am.depth),
            format!("AM:FREQ {freq:?}"),
            format!("TONE {kind}"),
            "OUTP ON".to_string(),
        ];
        for cmd in &setters {
            match client.command(cmd) {
                Ok(_) => {}
                Err(Error::Protocol(msg)) => return Err(CaptureError::Cell(msg)),
                Err(e) => return Err(fatal(e)),
            }
        }
        let mut out = Vec::with_capacity(2);
        for seed in seeds {
            client.command(&format!("SEED {seed}")).map_err(fatal)?;
            match client.capture(c.capture_len, rate).map_err(fatal)? {
                Ok(t) => out.push(t),
                Err(reason) => return Err(CaptureError::Cell(reason)),
            }
        }
        let b = out.pop().expect("two captures");
        let a = out.pop().expect("two captures");
        Ok([a, b])
    }
}

fn ac_rms(t: &Trace) -> f64 {
    let m = t.mean();
    rms(&t.samples().iter().map(|v| v - m).collect::<Vec<_>>())
}

/// Similarity and critical selective threshold of two captures against the
/// ideal tone sampled at the ADC rate.
fn score(config: &SweepConfig, captures: &[Trace; 2]) -> (Option<f64>, Option<f64>, Vec<String>) {
    let mut problems = Vec::new();
    let ideal = match synthesize(
        &config.tone,
        config.adc.f_s,
        captures[0].len() as f64 / config.adc.f_s,
    ) {
        Ok(t) => t,
        Err(e) => return (None, None, vec![e.to_string()]),
    };
    let sim = match similarity(&captures[0], &ideal) {
        Ok(r) => Some(r.rho),
        Err(e) => {
            problems.push(format!("similarity: {e}"));
            None
        }
    };
    let set = MeasurementSet {
        reference: captures[0].clone(),
        estimation: vec![captures[1].clone()],
        validation: Vec::new(),
    };
    let name = config.tone.name().to_string();
    let options = CompareOptions {
        mode: config.mode,
        q: config.adc.q(),
        ..Default::default()
    };
    let eps = match compare(&set, &[(name.clone(), ideal)], &options) {
        Ok(report) => report.eps_selective.get(&name).copied(),
        Err(e) => {
            problems.push(format!("eps: {e}"));
            None
        }
    };
    (sim, eps, problems)
}

fn validate_axes(config: &SweepConfig) -> Result<()> {
    for (name, axis) in [
        ("carriers", &config.carriers),
        ("powers", &config.powers),
        ("depths", &config.depths),
    ] {
        if axis.is_empty() {
            return Err(Error::invalid(format!("sweep axis '{name}' is empty")));
        }
        if axis.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sweep axis '{name}' has a non-finite value")));
        }
    }
    if config.capture_len < 2 {
        return Err(Error::invalid("capture_len must be at least 2"));
    }
    config.adc.validate()?;
    config.channel.validate()?;
    config.noise.validate()?;
    config.tone.validate()
}

/// Evaluate every grid cell.
///
/// Each cell takes two captures with seeds derived from its coordinates and
/// reports the similarity of the first to the ideal tone, the critical
/// selective threshold from the pair, and the AC RMS of the first. Cell
/// failures are recorded in the cell; transport failures of the remote
/// backend abort the sweep with the cell's coordinates.
pub fn run_sweep(config: &SweepConfig, backend: &Backend) -> Result<SweepGrid> {
    validate_axes(config)?;
    if let Backend::Remote { .. } = backend {
        if wire_tone(&config.tone).is_none() {
            return Err(Error::invalid(
                "remote sweeps need a unit-amplitude, zero-phase sine, exp_sine or zero tone",
            ));
        }
    }
    let coords: Vec<(f64, f64, f64)> = config
        .carriers
        .iter()
        .flat_map(|&c| {
            config
                .powers
                .iter()
                .flat_map(move |&p| config.depths.iter().map(move |&d| (c, p, d)))
        })
        .collect();
    let total = coords.len();
    let done = std::sync::atomic::AtomicUsize::new(0);

    let run_cell = |&(carrier, power, depth): &(f64, f64, f64)| -> Result<SweepCell> {
        let mut cell = SweepCell {
            carrier_hz: carrier,
            power,
            depth,
            similarity: None,
            eps: None,
            v_rms_out: None,
            error: None,
        };
        let v_pk = config.power_unit.to_vpk(power);
        let seeds = [
            cell_seed(config.seed, carrier, v_pk, depth, 0),
            cell_seed(config.seed, carrier, v_pk, depth, 1),
        ];
        let captured = match AmSpec::new(carrier, depth, v_pk) {
            Err(e) => Err(CaptureError::Cell(e.to_string())),
            Ok(am) => {
                let capturer = Capturer { config };
                match backend {
                    Backend::InProcess => capturer.in_process(&am, seeds),
                    Backend::Remote {
                        address,
                        timeout_ms,
                    } => capturer.remote(
                        address,
                        Duration::from_millis(*timeout_ms),
                        power,
                        &am,
                        seeds,
                    ),
                }
            }
        };
        match captured {
            Ok(traces) => {
                cell.v_rms_out = Some(ac_rms(&traces[0]));
                let (sim, eps, problems) = score(config, &traces);
                cell.similarity = sim;
                cell.eps = eps;
                if !problems.is_empty() {
                    cell.error = Some(problems.join("; "));
                }
            }
            Err(CaptureError::Cell(msg)) => cell.error = Some(msg),
            Err(CaptureError::Fatal(e)) => {
                let at = format!("cell (carrier {carrier} Hz, power {power}, depth {depth})");
                return Err(match e {
                    Error::Transport(m) => Error::Transport(format!("{at}: {m}")),
                    Error::Protocol(m) => Error::Protocol(format!("{at}: {m}")),
                    other => other,
                });
            }
        }
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        log::info!("sweep cell {n}/{total} done");
        Ok(cell)
    };

    let cells: Result<Vec<SweepCell>> = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?
            .install(|| coords.par_iter().map(run_cell).collect()),
        None => coords.par_iter().map(run_cell).collect(),
    };
    Ok(SweepGrid {
        carriers: config.carriers.clone(),
        powers: config.powers.clone(),
        power_unit: config.power_unit,
        depths: config.depths.clone(),
        cells: cells?,
    })
}

/// Which security notion a voltage bisection tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityKind {
    Universal,
    Selective,
    Existential,
}

/// Fixed attack parameters for voltage searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSetup {
    pub carrier: f64,
    pub depth: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// ADC samples per capture.
    pub capture_len: usize,
    #[serde(default)]
    pub mode: Mode,
}

/// Result of [`critical_voltage`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalVoltage {
    pub eps: f64,
    /// Upper end of the final bracket: the smallest voltage found insecure.
    pub v_c: f64,
    pub kind: SecurityKind,
    /// Final bracket `(secure, insecure)`.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

/// Number of amplitude steps an adversary with budget `V` tries: `V k / 4`.
pub const BUDGET_STEPS: u32 = 4;

fn check_representable(adc: &AdcConfig, tone: &ToneSpec) -> Result<()> {
    tone.validate()?;
    let f = tone.max_frequency();
    if f > adc.f_s / 2.0 {
        return Err(Error::invalid(format!(
            "{} tone at {f} Hz is above the Nyquist frequency {} Hz",
            tone.name(),
            adc.f_s / 2.0
        )));
    }
    let (lo, hi) = tone.range();
    if lo < adc.v_min || hi > adc.v_max {
        return Err(Error::invalid(format!(
            "{} tone spans [{lo}, {hi}] V, outside the ADC range [{}, {}] V",
            tone.name(),
            adc.v_min,
            adc.v_max
        )));
    }
    Ok(())
}

/// Noise seed of a voltage-search capture. It ignores the amplitude, so every
/// probed voltage sees the same noise realization and verdicts change only
/// because the voltage did.
fn attack_seed(setup: &AttackSetup, capture: u64) -> u64 {
    cell_seed(setup.seed, setup.carrier, 0.0, setup.depth, capture)
}

/// Critical selective threshold of `tone` for one transmitted amplitude,
/// from two captures.
fn selective_eps(
    adc: &AdcConfig,
    channel: &ChannelModel,
    tone: &ToneSpec,
    setup: &AttackSetup,
    v_pk: f64,
) -> Result<f64> {
    let am = AmSpec::new(setup.carrier, setup.depth, v_pk)?;
    let seeds = [attack_seed(setup, 0), attack_seed(setup, 1)];
    let take = |seed| capture(adc, channel, &setup.noise, tone, &am, seed, setup.capture_len);
    let (a, b) = (take(seeds[0])?, take(seeds[1])?);
    let ideal = synthesize(tone, adc.f_s, a.len() as f64 / adc.f_s)?;
    let set = MeasurementSet {
        reference: a,
        estimation: vec![b],
        validation: Vec::new(),
    };
    let name = tone.name().to_string();
    let report = compare(
        &set,
        &[(name.clone(), ideal)],
        &CompareOptions {
            mode: setup.mode,
            q: adc.q(),
            ..Default::default()
        },
    )?;
    Ok(report.eps_selective[&name])
}

/// Whether a single transmitted amplitude leaves the system secure.
fn secure_at_amplitude(
    adc: &AdcConfig,
    channel: &ChannelModel,
    tone: &ToneSpec,
    setup: &AttackSetup,
    eps: f64,
    kind: SecurityKind,
    v_pk: f64,
) -> Result<bool> {
    match kind {
        SecurityKind::Universal => {
            let am = AmSpec::new(setup.carrier, setup.depth, v_pk)?;
            let t = capture(adc, channel, &setup.noise, tone, &am, attack_seed(setup, 0), setup.capture_len)?;
            // The sensor signal is absent, so the sampling error is the output.
            let errors: Vec<f64> = t.samples().iter().map(|v| v.abs()).collect();
            is_universally_secure(&errors, adc.q(), &setup.noise, eps)
        }
        SecurityKind::Selective | SecurityKind::Existential => {
            Ok(eps > selective_eps(adc, channel, tone, setup, v_pk)?)
        }
    }
}

/// Verdict for an adversary allowed any peak voltage up to `v_pk`, probed at
/// `v_pk k / 4` for `k = 1..=4`.
pub fn secure_at(
    adc: &AdcConfig,
    channel: &ChannelModel,
    family: &[ToneSpec],
    setup: &AttackSetup,
    eps: f64,
    kind: SecurityKind,
    v_pk: f64,
) -> Result<bool> {
    let member_secure = |tone: &ToneSpec| -> Result<bool> {
        for k in 1..=BUDGET_STEPS {
            let v = v_pk * k as f64 / BUDGET_STEPS as f64;
            if !secure_at_amplitude(adc, channel, tone, setup, eps, kind, v)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    match kind {
        SecurityKind::Existential => {
            for tone in family {
                if member_secure(tone)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        _ => {
            let tone = family
                .first()
                .ok_or_else(|| Error::invalid("no waveform given"))?;
            member_secure(tone)
        }
    }
}

/// Bisect on the adversary's peak voltage until the verdict flip is located
/// within `tol`.
///
/// `family` is the single target for universal and selective searches
/// (the modulating tone for universal) and the waveform family for the
/// existential one. Fails with a bracket error naming the offending end
/// when `v_lo` is not secure or `v_hi` is not insecure.
#[allow(clippy::too_many_arguments)]
pub fn critical_voltage(
    adc: &AdcConfig,
    channel: &ChannelModel,
    family: &[ToneSpec],
    setup: &AttackSetup,
    eps: f64,
    kind: SecurityKind,
    v_lo: f64,
    v_hi: f64,
    tol: f64,
) -> Result<CriticalVoltage> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!("eps must lie in [0, 1), got {eps}")));
    }
    if !(v_lo >= 0.0 && v_lo < v_hi && v_hi.is_finite()) {
        return Err(Error::invalid(format!(
            "voltage bracket must satisfy 0 <= v_lo < v_hi, got [{v_lo}, {v_hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be > 0"));
    }
    if family.is_empty() {
        return Err(Error::invalid("no waveform given"));
    }
    if kind != SecurityKind::Universal {
        for t in family {
            check_representable(adc, t)?;
        }
    }
    let verdict = |v: f64| secure_at(adc, channel, family, setup, eps, kind, v);
    if !verdict(v_lo)? {
        return Err(Error::Bracket(format!(
            "lower end {v_lo} V is already insecure"
        )));
    }
    if verdict(v_hi)? {
        return Err(Error::Bracket(format!(
            "upper end {v_hi} V is still secure"
        )));
    }
    let (mut lo, mut hi) = (v_lo, v_hi);
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        if verdict(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalVoltage {
        eps,
        v_c: hi,
        kind,
        bracket: (lo, hi),
        iterations,
    })
}

/// Per-waveform outcome of [`existential_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeVerdict {
    pub waveform: String,
    /// Largest critical selective threshold over the probed amplitudes.
    pub eps_c: f64,
    pub secure: bool,
}

/// Existential security against a finite waveform family at budget `v_pk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub verdicts: Vec<ProbeVerdict>,
    /// True when at least one member cannot be injected.
    pub existentially_secure: bool,
}

/// Selective verdict for every family member; the system is existentially
/// secure with respect to the family when any member resists injection.
pub fn existential_probe(
    adc: &AdcConfig,
    channel: &ChannelModel,
    family: &[ToneSpec],
    setup: &AttackSetup,
    eps: f64,
    v_pk: f64,
) -> Result<ProbeResult> {
    if family.is_empty() {
        return Err(Error::invalid("waveform family is empty"));
    }
    for t in family {
        check_representable(adc, t)?;
    }
    let verdicts = family
        .par_iter()
        .map(|tone| -> Result<ProbeVerdict> {
            let mut worst = 0.0f64;
            for k in 1..=BUDGET_STEPS {
                let v = v_pk * k as f64 / BUDGET_STEPS as f64;
                worst = worst.max(selective_eps(adc, channel, tone, setup, v)?);
            }
            Ok(ProbeVerdict {
                waveform: tone.name().to_string(),
                eps_c: worst,
                secure: eps > worst,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let existentially_secure = verdicts.iter().any(|v| v.secure);
    Ok(ProbeResult {
        verdicts,
        existentially_secure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SweepConfig {
        let mut adc = AdcConfig::new(12, -1.0, 1.0, 1000.0).unwrap();
        adc.amp_coeffs = vec![0.0, 1.0];
        SweepConfig {
            adc,
            channel: ChannelModel::identity(),
            tone: ToneSpec::sine(10.0, 1.0),
            noise: NoiseModel::gaussian(0.002).unwrap(),
            seed: 7,
            carriers: vec![3250.0, 6250.0],
            powers: vec![0.5, 0.8],
            power_unit: PowerUnit::Vpk,
            depths: vec![0.5, 1.0],
            capture_len: 500,
            mode: Mode::Eq5WithQ,
            threads: Some(2),
        }
    }

    #[test]
    fn grid_shape_and_order() {
        let cfg = config();
        let grid = run_sweep(&cfg, &Backend::InProcess).unwrap();
        assert_eq!(grid.cells.len(), 8);
        let c = grid.cell(1, 0, 1);
        assert_eq!((c.carrier_hz, c.power, c.depth), (6250.0, 0.5, 1.0));
        assert_eq!(grid.to_csv().lines().count(), 9);
        for c in &grid.cells {
            let s = c.similarity.unwrap();
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn cells_independent_of_order() {
        let cfg = config();
        let a = run_sweep(&cfg, &Backend::InProcess).unwrap();
        let mut rev = cfg.clone();
        rev.carriers.reverse();
        rev.depths.reverse();
        rev.threads = Some(1);
        let b = run_sweep(&rev, &Backend::InProcess).unwrap();
        for cell in &a.cells {
            let twin = b
                .cells
                .iter()
                .find(|c| (c.carrier_hz, c.power, c.depth) == (cell.carrier_hz, cell.power, cell.depth))
                .unwrap();
            assert_eq!(cell, twin);
        }
    }

    #[test]
    fn empty_axis_rejected() {
        let mut cfg = config();
        cfg.carriers.clear();
        assert!(matches!(run_sweep(&cfg, &Backend::InProcess), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bad_cells_are_recorded() {
        let mut cfg = config();
        cfg.depths = vec![0.5, 2.0];
        let grid = run_sweep(&cfg, &Backend::InProcess).unwrap();
        let bad: Vec<_> = grid.cells.iter().filter(|c| c.error.is_some()).collect();
        assert_eq!(bad.len(), 4);
        assert!(bad.iter().all(|c| c.similarity.is_none() && c.depth == 2.0));
        assert!(grid.to_csv().contains("NaN"));
    }

    #[test]
    fn unreachable_remote_reports_cell() {
        let cfg = config();
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let backend = Backend::Remote {
            address: addr,
            timeout_ms: 500,
        };
        match run_sweep(&cfg, &backend) {
            Err(Error::Transport(msg)) => assert!(msg.contains("carrier"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seeds_depend_on_coordinates() {
        let a = cell_seed(1, 10.0, 0.5, 1.0, 0);
        assert_eq!(a, cell_seed(1, 10.0, 0.5, 1.0, 0));
        assert_ne!(a, cell_seed(1, 10.0, 0.5, 1.0, 1));
        assert_ne!(a, cell_seed(2, 10.0, 0.5, 1.0, 0));
        assert_ne!(a, cell_seed(1, 10.0, 0.5, 0.9, 0));
    }

    #[test]
    fn representability() {
        let adc = AdcConfig::new(12, -1.0, 1.0, 100.0).unwrap();
        assert!(check_representable(&adc, &ToneSpec::sine(10.0, 1.0)).is_ok());
        assert!(check_representable(&adc, &ToneSpec::sine(60.0, 1.0)).is_err());
        assert!(check_representable(&adc, &ToneSpec::sine(10.0, 2.0)).is_err());
        assert!(check_representable(&adc, &ToneSpec::exp_sine(10.0, 1.0)).is_err());
    }
}
