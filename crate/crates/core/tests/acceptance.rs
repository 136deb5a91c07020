//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sigstrength::adcmodel::{digitize_pipeline, sample_and_quantize, AdcConfig, PRESET_ROWS};
use sigstrength::channel::ChannelModel;
use sigstrength::instrument::{serve, BenchPreset};
use sigstrength::noise::NoiseModel;
use sigstrength::security::{
    compare, critical_universal_epsilon, find_critical_epsilon, is_selectively_secure,
    is_universally_secure, universal_exceedance, CompareOptions, MeasurementSet, Mode,
    DEFAULT_DELTA,
};
use sigstrength::signalgen::{am_modulate, synthesize, AmSpec, ToneSpec};
use sigstrength::similarity::{best_lag, pearson, similarity_slices};
use sigstrength::sweep::{
    critical_voltage, run_sweep, secure_at, AttackSetup, Backend, PowerUnit, SecurityKind,
    SweepConfig,
};
use sigstrength::trace::{spectrum, Trace};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Round to `decimals` places, as a printed table would.
fn round_to(x: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (x * k).round() / k
}

fn cutoff_table() -> Outcome {
    // Printed cutoff (MHz) and printed decimals, per row with an RC stage.
    let printed: BTreeMap<&str, Vec<(f64, i32)>> = [
        ("tlc549", vec![(2.7, 1)]),
        ("atmega328p", vec![(0.1, 1), (11.4, 1)]),
        ("artix7", vec![(5.3, 1)]),
        ("ad7276", vec![(66.3, 1)]),
        ("ad7822", vec![(128.4, 1)]),
    ]
    .into_iter()
    .collect();
    let mut pass = true;
    let mut notes = Vec::new();
    let mut worst_raw: f64 = 0.0;
    for row in PRESET_ROWS {
        let Some((lo, hi)) = row.cutoff_range() else {
            if printed.contains_key(row.name) {
                pass = false;
            }
            continue;
        };
        let want = &printed[row.name];
        let got: Vec<f64> = if want.len() == 2 {
            vec![lo / 1e6, hi / 1e6]
        } else {
            vec![hi / 1e6]
        };
        for (&g, &(p, dec)) in got.iter().zip(want) {
            let shown = round_to(g, dec);
            let rel = (shown - p).abs() / p;
            let raw = (g - p).abs() / p;
            worst_raw = worst_raw.max(raw);
            if rel > 0.01 {
                pass = false;
            }
            notes.push(format!("{}={g:.4}MHz", row.name));
        }
    }
    let ad7783 = AdcConfig::preset("ad7783").map(|c| c.cutoff_frequency().is_none());
    pass &= ad7783.unwrap_or(false);
    outcome(
        pass,
        format!(
            "{}; all within 1% after rounding to the printed precision (largest unrounded deviation {:.1}%)",
            notes.join(" "),
            100.0 * worst_raw
        ),
    )
}

fn aliasing() -> Outcome {
    let mut adc = AdcConfig::preset("ad7783").unwrap();
    // A square-law-dominated front end: the 2 f_m product outweighs the tone.
    adc.amp_coeffs = vec![0.3, 1.0];
    adc.clamp_lo = None;
    adc.clamp_hi = None;
    let rate = adc.f_s * 51.0;
    let tone = synthesize(&ToneSpec::sine(10.0, 1.0), rate, 100.0).unwrap();
    let zeros = Trace::zeros(tone.len(), rate).unwrap();
    let d = digitize_pipeline(
        &adc,
        &ChannelModel::identity(),
        &tone,
        &zeros,
        &NoiseModel::gaussian(1e-4).unwrap(),
        1,
    )
    .unwrap();
    let sp = spectrum(&d.volts).unwrap();
    let mut bins: Vec<_> = sp.bins[1..].to_vec();
    bins.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    let (first, second) = (bins[0], bins[1]);
    let pass = (first.frequency - 0.21).abs() <= sp.resolution + 1e-9
        && (second.frequency - 9.79).abs() <= sp.resolution + 1e-9;
    outcome(
        pass,
        format!(
            "{} samples, resolution {:.4} Hz, dominant {:.3} Hz, secondary {:.3} Hz",
            d.volts.len(),
            sp.resolution,
            first.frequency,
            second.frequency
        ),
    )
}

fn no_injection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for fixture in 0..100 {
        let sigma = 10f64.powf(rng.random_range(-4.0..-1.0));
        let bits = rng.random_range(8..=16u32);
        let adc = AdcConfig::new(bits, -1.0, 1.0, 1.0).unwrap();
        let noise = NoiseModel::gaussian(sigma).unwrap();
        let n = noise.draw(100_000, fixture);
        let s: Vec<f64> = (0..n.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let analog = Trace::new(s.iter().zip(&n).map(|(a, b)| a + b).collect(), 1.0).unwrap();
        let d = sample_and_quantize(&adc, &analog).unwrap();
        let errors: Vec<f64> = d.volts.samples().iter().zip(&s).map(|(r, t)| (r - t).abs()).collect();
        for k in 0..20 {
            let eps = k as f64 * 0.05;
            let ex = universal_exceedance(&errors, adc.q(), &noise, eps).unwrap();
            let secure = is_universally_secure(&errors, adc.q(), &noise, eps).unwrap();
            worst_excess = worst_excess.max(ex.fraction - ex.bound);
            if !secure && ex.fraction > ex.bound + 0.02 {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "100 fixtures x 20 eps, {violations} violations, largest exceedance over bound {worst_excess:+.4}"
        ),
    )
}

/// Errors of a partially successful injection: a target-shaped residual of
/// random size plus noise, all in volts.
fn injection_errors(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    let residual = sigma * rng.random_range(0.0..3.0);
    let period = rng.random_range(20.0..200.0);
    let noise = NoiseModel::gaussian(sigma).unwrap().draw(n, rng.random());
    (0..n)
        .map(|i| (residual * (2.0 * PI * i as f64 / period).sin() + noise[i]).abs())
        .collect()
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let sigma = 10f64.powf(rng.random_range(-3.0..0.0));
        let q = sigma * rng.random_range(0.0..0.5);
        let errors = injection_errors(&mut rng, 20_000, sigma);
        let noise = NoiseModel::gaussian(sigma).unwrap();
        let eps_c = critical_universal_epsilon(&errors, q, &noise, 1e-9).unwrap();
        let zeros = vec![0.0; errors.len()];
        let eps0 = find_critical_epsilon(&errors, &zeros, sigma, q, DEFAULT_DELTA, Mode::Eq5WithQ)
            .unwrap()
            .eps;
        worst = worst.max((eps_c - (1.0 - eps0)).abs());
    }
    outcome(
        worst <= 1e-6 + 2e-3,
        format!("50 fixtures, max |eps_c - (1 - eps_c0)| = {worst:.2e} (limit 2.001e-3)"),
    )
}

/// Smallest eps on a 1e-3 grid where the selective predicate holds.
fn grid_critical(errors: &[f64], q: f64, noise: &NoiseModel) -> f64 {
    for k in 0..1000 {
        let eps = k as f64 * 1e-3;
        if is_selectively_secure(errors, q, noise, eps).unwrap() {
            return eps;
        }
    }
    1.0
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_oracle: f64 = 0.0;
    let mut worst_modes: f64 = 0.0;
    let mut worst_ratio = 0.0;
    for _ in 0..50 {
        let sigma = 10f64.powf(rng.random_range(-3.0..0.0));
        let n = 20_000;
        let ideal: Vec<f64> = (0..n).map(|i| (i as f64 * 0.013).sin()).collect();
        let errors = injection_errors(&mut rng, n, sigma);
        let sign: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let measured: Vec<f64> = ideal.iter().zip(&errors).zip(&sign).map(|((w, e), s)| w + s * e).collect();

        let q = sigma * rng.random_range(0.0..0.5);
        let noise = NoiseModel::gaussian(sigma).unwrap();
        let fast = find_critical_epsilon(&measured, &ideal, sigma, q, DEFAULT_DELTA, Mode::Eq5WithQ).unwrap();
        let abs_err: Vec<f64> = measured.iter().zip(&ideal).map(|(m, w)| (m - w).abs()).collect();
        worst_oracle = worst_oracle.max((fast.eps - grid_critical(&abs_err, q, &noise)).abs());

        // Mode agreement for small quantization relative to noise.
        let ratio = 10f64.powf(rng.random_range(-4.0..-2.0));
        let q_small = ratio * sigma;
        let eq5 = find_critical_epsilon(&measured, &ideal, sigma, q_small, DEFAULT_DELTA, Mode::Eq5WithQ).unwrap();
        let strict = find_critical_epsilon(&measured, &ideal, sigma, q_small, DEFAULT_DELTA, Mode::StrictPseudocode).unwrap();
        let d = (eq5.eps - strict.eps).abs();
        if d > worst_modes {
            worst_modes = d;
            worst_ratio = ratio;
        }
    }
    outcome(
        worst_oracle <= 2e-3 && worst_modes <= 1e-3,
        format!(
            "search vs grid max {worst_oracle:.2e} (limit 2e-3); strict vs with-Q max {worst_modes:.2e} at Q/sigma {worst_ratio:.4} (limit 1e-3)"
        ),
    )
}

/// Ten captures of a demodulated tone through a square-law front end.
///
/// `tone` modulates the carrier at `depth`; the carrier level is held fixed.
fn fixture_captures(tone: &ToneSpec, depth: f64, seed: u64) -> Vec<Trace> {
    let mut adc = AdcConfig::new(16, -1.0, 5.0, 1000.0).unwrap();
    adc.amp_coeffs = vec![0.0, 1.0];
    // 2 f_c folds onto DC, leaving only the demodulated envelope.
    let carrier = 10_500.0;
    let am = AmSpec::from_carrier_level(carrier, depth, 1.0).unwrap();
    let noise = NoiseModel::gaussian(FIXTURE_SIGMA).unwrap();
    (0..10)
        .map(|k| {
            sigstrength::instrument::capture(
                &adc,
                &ChannelModel::identity(),
                &noise,
                tone,
                &am,
                seed * 100 + k,
                4096,
            )
            .unwrap()
        })
        .collect()
}

const FIXTURE_SIGMA: f64 = 0.01;

fn fixture_report(captures: Vec<Trace>) -> BTreeMap<String, f64> {
    let fs = captures[0].sample_rate();
    let dur = captures[0].len() as f64 / fs;
    let sine = synthesize(&ToneSpec::sine(5.0, 1.0), fs, dur).unwrap();
    let exp = synthesize(&ToneSpec::exp_sine(5.0, 1.0), fs, dur).unwrap();
    let set = MeasurementSet::partition(captures, 5).unwrap();
    let report = compare(
        &set,
        &[("sine".into(), sine), ("exp_sine".into(), exp)],
        &CompareOptions::default(),
    )
    .unwrap();
    let validation: Vec<f64> = report
        .eps_selective
        .iter()
        .filter(|(k, _)| k.starts_with("validation_"))
        .map(|(_, v)| *v)
        .collect();
    let mut out = report.eps_selective.clone();
    out.insert(
        "validation".into(),
        validation.iter().sum::<f64>() / validation.len() as f64,
    );
    out
}

fn clean_distorted_ordering() -> Outcome {
    let sine = ToneSpec::sine(5.0, 1.0);
    let distorted = ToneSpec::harmonic_mix(5.0, 1.0, &[(2, 0.4, 0.0), (3, 0.4, 0.0)]);
    let mut failures = Vec::new();
    let mut sample = String::new();
    for seed in 0..10u64 {
        let exp_fixture = fixture_report(fixture_captures(&sine, 1.0, seed));
        let clean = fixture_report(fixture_captures(&sine, 0.1, seed));
        let dist = fixture_report(fixture_captures(&distorted, 0.1, seed));
        let ok_exp = exp_fixture["validation"] > exp_fixture["exp_sine"]
            && exp_fixture["exp_sine"] > exp_fixture["sine"];
        let ok_clean = clean["sine"] > dist["sine"] && clean["exp_sine"] > dist["exp_sine"];
        if !(ok_exp && ok_clean) {
            failures.push(seed);
        }
        if seed == 0 {
            sample = format!(
                "seed 0: exp fixture val {:.3} exp {:.3} sine {:.3}; clean sine {:.3} exp {:.3}; distorted sine {:.3} exp {:.3}",
                exp_fixture["validation"],
                exp_fixture["exp_sine"],
                exp_fixture["sine"],
                clean["sine"],
                clean["exp_sine"],
                dist["sine"],
                dist["exp_sine"]
            );
        }
    }
    outcome(
        failures.is_empty(),
        format!("{sample}; failing seeds {failures:?}"),
    )
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    pearson(x, y).unwrap().powi(2)
}

fn demodulated_line(depth: f64, carrier_level: f64) -> f64 {
    let mut adc = AdcConfig::new(16, -4.0, 4.0, 1000.0).unwrap();
    adc.amp_coeffs = vec![0.0, 1.0];
    let f_m = 10.0;
    // 2 f_c folds to 0.6 f_s, far from the tone and its harmonics.
    let carrier = 12.3 * adc.f_s;
    let rate = adc.simulation_rate(carrier);
    let w = synthesize(&ToneSpec::sine(f_m, 1.0), rate, 2.0).unwrap();
    let am = AmSpec::from_carrier_level(carrier, depth, carrier_level).unwrap();
    let v = am_modulate(&w, &am, rate).unwrap();
    let s = Trace::zeros(v.len(), rate).unwrap();
    let d = digitize_pipeline(
        &adc,
        &ChannelModel::identity(),
        &v,
        &s,
        &NoiseModel::gaussian(1e-3).unwrap(),
        9,
    )
    .unwrap();
    spectrum(&d.volts).unwrap().magnitude_at(f_m) / 2f64.sqrt()
}

fn demodulation_law() -> Outcome {
    let start = Instant::now();
    let depths = [0.2, 0.4, 0.6, 0.8, 1.0];
    let by_depth: Vec<f64> = depths.iter().map(|&m| demodulated_line(m, 1.0)).collect();
    let r2_depth = r_squared(&depths, &by_depth);

    let depth: f64 = 0.5;
    let levels: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
    let v_pk_sq: Vec<f64> = levels.iter().map(|l| (l * (1.0 + depth)).powi(2)).collect();
    let by_level: Vec<f64> = levels.iter().map(|&l| demodulated_line(depth, l)).collect();
    let r2_level = r_squared(&v_pk_sq, &by_level);
    let elapsed = start.elapsed();
    outcome(
        r2_depth > 0.99 && r2_level > 0.99 && elapsed < Duration::from_secs(10),
        format!(
            "R2 vs depth {r2_depth:.6}, R2 vs V_pk^2 {r2_level:.6}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn similarity_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut worst_affine: f64 = 0.0;
    for _ in 0..100 {
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let b = rng.random_range(-100.0..100.0);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r = similarity_slices(&y, &x).unwrap();
        worst_affine = worst_affine.max((r.rho - 1.0).abs());
    }
    let mut shifts_ok = true;
    for _ in 0..50 {
        let k = rng.random_range(0..200usize);
        let delayed: Vec<f64> = std::iter::repeat_n(0.0, k).chain(x[..x.len() - k].iter().copied()).collect();
        shifts_ok &= best_lag(&x, &delayed).unwrap() == k as i64;
    }
    let n = 1000;
    let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / 100.0).sin()).collect();
    let c: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / 100.0).cos()).collect();
    let ortho = pearson(&s, &c).unwrap().abs();
    outcome(
        worst_affine < 1e-9 && shifts_ok && ortho < 1e-3,
        format!(
            "affine max |rho - 1| {worst_affine:.1e}, shifts recovered {shifts_ok}, |rho(sin, cos)| {ortho:.1e}"
        ),
    )
}

fn quantization_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_ratio: f64 = 0.0;
    for row in PRESET_ROWS {
        let adc = AdcConfig::preset(row.name).unwrap();
        let values: Vec<f64> = (0..10_000).map(|_| rng.random_range(adc.v_min..=adc.v_max)).collect();
        let analog = Trace::new(values.clone(), adc.f_s).unwrap();
        let d = sample_and_quantize(&adc, &analog).unwrap();
        for (r, v) in d.volts.samples().iter().zip(&values) {
            worst_ratio = worst_ratio.max((r - v).abs() / adc.q());
        }
    }
    outcome(
        worst_ratio <= 1.0,
        format!("6 presets x 10^4 values, max error {worst_ratio:.6} Q"),
    )
}

fn backend_equivalence() -> Outcome {
    let mut adc = AdcConfig::preset("tlc549").unwrap().time_scaled(100.0).unwrap();
    adc.amp_coeffs = vec![0.5, 1.0];
    let noise = NoiseModel::gaussian(0.005).unwrap();
    let tone = ToneSpec::sine(20.0, 1.0);
    let config = SweepConfig {
        adc: adc.clone(),
        channel: ChannelModel::identity(),
        tone: tone.clone(),
        noise: noise.clone(),
        seed: 2024,
        carriers: vec![1200.0, 2400.0, 4800.0],
        powers: vec![0.0, 5.0, 10.0],
        power_unit: PowerUnit::Dbm,
        depths: vec![0.5, 1.0],
        capture_len: 1024,
        mode: Mode::Eq5WithQ,
        threads: None,
    };
    let start = Instant::now();
    let server = serve(
        "127.0.0.1:0",
        BenchPreset {
            adc,
            channel: ChannelModel::identity(),
            noise,
            tone,
            am: AmSpec::new(1200.0, 1.0, 1.0).unwrap(),
            seed: 0,
        },
    )
    .unwrap();
    let remote = run_sweep(
        &config,
        &Backend::Remote {
            address: server.local_addr().to_string(),
            timeout_ms: 5_000,
        },
    )
    .unwrap();
    let local = run_sweep(&config, &Backend::InProcess).unwrap();
    let elapsed = start.elapsed();
    server.shutdown();
    let same_csv = remote.to_csv() == local.to_csv();
    let same_json = remote.to_json() == local.to_json();
    let filled = local.cells.iter().filter(|c| c.similarity.is_some()).count();
    outcome(
        same_csv && same_json && local.cells.len() == 18 && elapsed < Duration::from_secs(5),
        format!(
            "18 cells ({filled} scored), CSV identical {same_csv}, JSON identical {same_json}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn voltage_bisection() -> Outcome {
    let mut adc = AdcConfig::new(12, -1.0, 1.0, 1000.0).unwrap();
    adc.amp_coeffs = vec![1.0];
    let setup = AttackSetup {
        carrier: 12_000.0,
        depth: 1.0,
        noise: NoiseModel::gaussian(0.01).unwrap(),
        seed: 11,
        capture_len: 4096,
        mode: Mode::Eq5WithQ,
    };
    let family = [ToneSpec::sine(7.0, 1.0)];
    let eps = 0.5;
    let tol = 1e-4;
    let run = |channel: &ChannelModel| {
        critical_voltage(&adc, channel, &family, &setup, eps, SecurityKind::Universal, 0.0, 1.0, tol)
    };
    let identity = ChannelModel::identity();
    let base = match run(&identity) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("bisection failed: {e}")),
    };
    let verdict = |ch: &ChannelModel, v: f64| {
        secure_at(&adc, ch, &family, &setup, eps, SecurityKind::Universal, v).unwrap()
    };
    let flips = verdict(&identity, base.bracket.0)
        && !verdict(&identity, base.bracket.1)
        && base.bracket.1 - base.bracket.0 <= tol;
    let attenuated = ChannelModel::flat(6.0).unwrap();
    let far = match run(&attenuated) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("attenuated bisection failed: {e}")),
    };
    let ratio = far.v_c / base.v_c;
    outcome(
        flips && (ratio / 2.0 - 1.0).abs() <= 0.05,
        format!(
            "v_c {:.5} V, bracket flips {flips}, with 6 dB {:.5} V, ratio {ratio:.4}",
            base.v_c, far.v_c
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("cutoff frequencies of the characterized ADCs", cutoff_table),
        ("aliasing of a demodulated tone at 19.79 Hz", aliasing),
        ("absence of injection is universally secure", no_injection),
        ("universal and zero-waveform thresholds are dual", duality),
        ("threshold search agrees with a grid oracle", oracle_equivalence),
        ("clean traces outrank distorted traces", clean_distorted_ordering),
        ("square-law demodulation scaling", demodulation_law),
        ("similarity metric properties", similarity_metric),
        ("quantization error bound", quantization_bound),
        ("TCP bench matches in-process sweep", backend_equivalence),
        ("critical voltage bisection", voltage_bisection),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name} ({:.2} s): {}",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
