//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use sigstrength::adcmodel::digitize_pipeline;
use sigstrength::instrument::{serve, BenchPreset};
use sigstrength::noise::estimate_sigma;
use sigstrength::security::{compare, CompareOptions, MeasurementSet, Mode, SecurityReport};
use sigstrength::signalgen::{am_modulate, synthesize, ToneSpec};
use sigstrength::similarity::{similarity, SimilarityResult};
use sigstrength::sweep::{run_sweep, Backend, SweepConfig};
use sigstrength::trace::{read_trace, spectrum, write_trace, Trace, TraceFormat};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Flags shared by every subcommand, already merged over the config file.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub mode: Mode,
    pub out: PathBuf,
}

impl Context {
    fn output_path(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::output(&self.out, e))?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.output_path(name)?;
        fs::write(&path, contents).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }
}

/// Second seed of a simulation, used only for the noise estimate.
fn companion_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    q: f64,
    sigma_estimate: f64,
    samples: usize,
    sample_rate: f64,
    dominant_hz: Option<f64>,
    similarity: Option<SimilarityResult>,
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let adc = cfg.adc()?;
    let channel = cfg.channel()?;
    let noise = cfg.noise()?;
    let tone = cfg.tone()?;
    let sensor = cfg.sensor()?;
    let am = cfg.am()?;
    let duration = cfg.duration()?;

    let band_edge = match &am {
        Some(am) => am.carrier,
        None => tone.max_frequency().max(sensor.max_frequency()),
    };
    let rate = adc.simulation_rate(band_edge);
    let w = synthesize(&tone, rate, duration)?;
    let v = match &am {
        Some(am) => am_modulate(&w, am, rate)?,
        None => w,
    };
    let s = synthesize(&sensor, rate, duration)?;
    let run = |seed| digitize_pipeline(&adc, &channel, &v, &s, &noise, seed);
    let digitized = run(ctx.seed)?;
    let companion = run(companion_seed(ctx.seed))?;
    let diff: Vec<f64> = digitized
        .volts
        .samples()
        .iter()
        .zip(companion.volts.samples())
        .map(|(a, b)| a - b)
        .collect();
    // A difference of two independent captures carries twice the variance.
    let sigma_estimate = estimate_sigma(&diff) / 2f64.sqrt();

    let trace_path = ctx.output_path("trace.csv")?;
    write_trace(&digitized.volts, &trace_path, TraceFormat::Csv)?;
    let sp = spectrum(&digitized.volts)?;
    let spectrum_path = ctx.write("spectrum.csv", &sp.to_csv())?;

    let ideal = synthesize(&tone, adc.f_s, duration)?.shifted_to(digitized.volts.t0());
    let sim = match similarity(&digitized.volts, &ideal) {
        Ok(r) => Some(r),
        Err(sigstrength::Error::Degenerate(msg)) => {
            log::warn!("similarity undefined: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let summary = SimulationSummary {
        q: digitized.q,
        sigma_estimate,
        samples: digitized.volts.len(),
        sample_rate: digitized.volts.sample_rate(),
        dominant_hz: sp.dominant(true).map(|b| b.frequency),
        similarity: sim,
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    ctx.write("summary.json", &summary_json)?;

    println!("samples        {} at {} Hz", summary.samples, summary.sample_rate);
    println!("Q              {:.6e} V", summary.q);
    println!("sigma estimate {:.6e} V", summary.sigma_estimate);
    match summary.dominant_hz {
        Some(f) => println!("dominant line  {f:.4} Hz"),
        None => println!("dominant line  none"),
    }
    match &summary.similarity {
        Some(r) => println!("similarity     {:.6} (lag {} samples)", r.rho, r.lag),
        None => println!("similarity     undefined"),
    }
    println!("wrote {} and {}", trace_path.display(), spectrum_path.display());
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Trace, CliError> {
    read_trace(path, TraceFormat::from_path(path)).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

/// Named ideal waveforms for `kinds` at `freq`, sampled like `like`.
fn ideal_traces(kinds: &[String], freq: Option<f64>, like: &Trace) -> Result<Vec<(String, Trace)>, CliError> {
    let duration = like.duration();
    let mut out = Vec::new();
    for kind in kinds {
        let spec = match kind.as_str() {
            "zero" => ToneSpec::Zero,
            "sine" | "exp_sine" => {
                let f = freq.ok_or_else(|| {
                    CliError::Usage(format!("ideal '{kind}' needs --freq or a [tone] section"))
                })?;
                if kind == "sine" {
                    ToneSpec::sine(f, 1.0)
                } else {
                    ToneSpec::exp_sine(f, 1.0)
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown ideal '{other}' (expected sine, exp_sine or zero)"
                )))
            }
        };
        let trace = synthesize(&spec, like.sample_rate(), duration)?.shifted_to(like.t0());
        out.push((kind.clone(), trace));
    }
    Ok(out)
}

fn tone_frequency(cfg: &ExperimentConfig) -> Option<f64> {
    cfg.tone.as_ref().and_then(|t| match t {
        ToneSpec::Zero => None,
        ToneSpec::Sine { freq, .. } | ToneSpec::ExpSine { freq, .. } => Some(*freq),
        ToneSpec::Composite { .. } => Some(t.max_frequency()),
    })
}

pub struct AnalyzeArgs {
    pub traces: Vec<PathBuf>,
    pub ideals: Vec<String>,
    pub freq: Option<f64>,
    pub estimation: Option<usize>,
    pub q: Option<f64>,
}

pub fn analyze(ctx: &Context, args: &AnalyzeArgs) -> Result<SecurityReport, CliError> {
    if args.traces.len() < 2 {
        return Err(CliError::Usage(format!(
            "analyze needs at least two traces, got {}",
            args.traces.len()
        )));
    }
    let traces = args
        .traces
        .iter()
        .map(|p| load_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &traces[0];
    for (trace, path) in traces.iter().zip(&args.traces).skip(1) {
        if trace.len() != first.len() || trace.sample_rate() != first.sample_rate() {
            return Err(CliError::Input {
                path: path.clone(),
                source: sigstrength::Error::Format(format!(
                    "{} samples at {} Hz, but {} has {} samples at {} Hz",
                    trace.len(),
                    trace.sample_rate(),
                    args.traces[0].display(),
                    first.len(),
                    first.sample_rate()
                )),
            });
        }
    }
    let n_est = args.estimation.unwrap_or((traces.len() / 2).max(1));
    if n_est == 0 || n_est >= traces.len() {
        return Err(CliError::Usage(format!(
            "--estimation must be between 1 and {}",
            traces.len() - 1
        )));
    }
    let freq = args.freq.or_else(|| tone_frequency(&ctx.config));
    let kinds = if args.ideals.is_empty() {
        if freq.is_some() {
            vec!["sine".to_string(), "exp_sine".to_string()]
        } else {
            Vec::new()
        }
    } else {
        args.ideals.clone()
    };
    let ideals = ideal_traces(&kinds, freq, first)?;
    let q = match (args.q, &ctx.config.adc) {
        (Some(q), _) => q,
        (None, Some(_)) => ctx.config.adc()?.q(),
        (None, None) => 0.0,
    };
    let set = MeasurementSet::partition(traces, n_est)?;
    let options = CompareOptions {
        mode: ctx.mode,
        q,
        ..CompareOptions::default()
    };
    let report = compare(&set, &ideals, &options)?;
    let path = ctx.write("report.json", &report.to_json())?;

    println!("mode           {}", report.mode);
    println!("sigma (pooled) {:.6e}", report.sigma_noise);
    println!("Q              {:.6e}", report.q);
    for (name, eps) in &report.eps_selective {
        println!("eps_c {name:<12} {eps:.4}");
    }
    println!("eps universal  {:.4}", report.eps_universal);
    println!("wrote {}", path.display());
    Ok(report)
}

pub fn similarity_cmd(
    ctx: &Context,
    measured: &Path,
    ideal_file: Option<&Path>,
    ideal_kind: Option<&str>,
    freq: Option<f64>,
) -> Result<SimilarityResult, CliError> {
    let m = load_trace(measured)?;
    let ideal = match (ideal_file, ideal_kind) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give either an ideal file or --ideal, not both".into()))
        }
        (Some(path), None) => load_trace(path)?,
        (None, kind) => {
            let kind = kind.unwrap_or("sine").to_string();
            let freq = freq.or_else(|| tone_frequency(&ctx.config));
            ideal_traces(&[kind], freq, &m)?.remove(0).1
        }
    };
    let r = similarity(&m, &ideal)?;
    ctx.write(
        "similarity.json",
        &serde_json::to_string_pretty(&r).expect("result serializes"),
    )?;
    println!("rho {:.6}", r.rho);
    println!("lag {} samples", r.lag);
    println!("aligned length {}", r.aligned_length);
    Ok(r)
}

pub fn sweep_config(ctx: &Context) -> Result<SweepConfig, CliError> {
    let cfg = &ctx.config;
    let sweep = cfg.sweep()?;
    Ok(SweepConfig {
        adc: cfg.adc()?,
        channel: cfg.channel()?,
        tone: cfg.tone()?,
        noise: cfg.noise()?,
        seed: ctx.seed,
        carriers: sweep.carriers.clone(),
        powers: sweep.powers.clone(),
        power_unit: sweep.power_unit,
        depths: sweep.depths.clone(),
        capture_len: sweep.capture_len,
        mode: ctx.mode,
        threads: sweep.threads,
    })
}

pub fn sweep(ctx: &Context, remote: Option<&str>, timeout: Duration) -> Result<(), CliError> {
    let config = sweep_config(ctx)?;
    let backend = match remote {
        Some(address) => Backend::Remote {
            address: address.to_string(),
            timeout_ms: timeout.as_millis() as u64,
        },
        None => Backend::InProcess,
    };
    let cells = config.carriers.len() * config.powers.len() * config.depths.len();
    let where_ = remote.map_or_else(|| "in process".to_string(), |a| format!("against {a}"));
    eprintln!("sweeping {cells} cells {where_}");
    let start = Instant::now();
    let grid = run_sweep(&config, &backend)?;
    let failed = grid.cells.iter().filter(|c| c.error.is_some()).count();
    eprintln!(
        "finished {cells} cells in {:.2} s ({failed} failed)",
        start.elapsed().as_secs_f64()
    );
    let csv = ctx.write("grid.csv", &grid.to_csv())?;
    let json = ctx.write("grid.json", &grid.to_json())?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

pub fn serve_cmd(ctx: &Context, bind: &str) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let am = cfg
        .am()?
        .ok_or_else(|| CliError::Config("am: section is required for this command".into()))?;
    let preset = BenchPreset {
        adc: cfg.adc()?,
        channel: cfg.channel()?,
        noise: cfg.noise()?,
        tone: cfg.tone()?,
        am,
        seed: ctx.seed,
    };
    let handle = serve(bind, preset)?;
    println!("listening on {}", handle.local_addr());
    std::io::stdout().flush().ok();
    handle.wait();
    Ok(())
}
