use sigstrength::adcmodel::AdcConfig;
use sigstrength::channel::ChannelModel;
use sigstrength::noise::NoiseModel;
use sigstrength::security::{compare, estimate_noise, CompareOptions, MeasurementSet, Mode};
use sigstrength::signalgen::{synthesize, ToneSpec};
use sigstrength::sweep::{critical_voltage, existential_probe, AttackSetup, SecurityKind};
use sigstrength::trace::Trace;

fn tone(n: usize, rate: f64) -> Vec<f64> {
    synthesize(&ToneSpec::sine(3.0, 1.0), rate, n as f64 / rate).unwrap().into_samples()
}

#[test]
fn pooled_sigma_recovers_added_noise() {
    // Estimation traces are the reference plus independent noise, so the
    // pooled differences carry exactly that noise.
    let rate = 500.0;
    let reference = tone(20_000, rate);
    let sigma = 0.05;
    let estimation = (0..4)
        .map(|k| {
            let n = NoiseModel::gaussian(sigma).unwrap().draw(reference.len(), k);
            Trace::new(reference.iter().zip(&n).map(|(a, b)| a + b).collect(), rate).unwrap()
        })
        .collect();
    let set = MeasurementSet {
        reference: Trace::new(reference, rate).unwrap(),
        estimation,
        validation: Vec::new(),
    };
    let est = estimate_noise(&set).unwrap();
    assert!((est.sigma / sigma - 1.0).abs() < 0.03, "sigma {}", est.sigma);
}

#[test]
fn validation_captures_are_indistinguishable() {
    let rate = 500.0;
    let clean = tone(20_000, rate);
    let traces: Vec<Trace> = (0..6)
        .map(|k| {
            let n = NoiseModel::gaussian(0.05).unwrap().draw(clean.len(), 100 + k);
            Trace::new(clean.iter().zip(&n).map(|(a, b)| a + b).collect(), rate).unwrap()
        })
        .collect();
    let set = MeasurementSet::partition(traces, 3).unwrap();
    let ideal = Trace::new(clean.clone(), rate).unwrap();
    let report = compare(&set, &[("sine".into(), ideal)], &CompareOptions::default()).unwrap();
    for (name, eps) in &report.eps_selective {
        if name.starts_with("validation_") {
            assert!(*eps > 0.9, "{name}: {eps}");
        }
    }
    assert!(report.eps_selective["sine"] > 0.9);
    // Only samples near the zero crossings resemble the zero waveform.
    assert!(report.eps_selective["zero"] < 0.2, "{:?}", report.eps_selective);
    assert!((report.eps_universal - (1.0 - report.eps_selective["zero"])).abs() < 1e-12);
    assert_eq!(report.mode, Mode::Eq5WithQ);
}

fn setup(sigma: f64) -> AttackSetup {
    AttackSetup {
        carrier: 12_000.0,
        depth: 1.0,
        noise: NoiseModel::gaussian(sigma).unwrap(),
        seed: 5,
        capture_len: 2048,
        mode: Mode::Eq5WithQ,
    }
}

#[test]
fn bracket_that_does_not_straddle_names_the_end() {
    let adc = AdcConfig::new(12, -1.0, 1.0, 1000.0).unwrap();
    let family = [ToneSpec::sine(7.0, 1.0)];
    // Even 1 uV of injection is far below the noise, so both ends are secure.
    let err = critical_voltage(
        &adc,
        &ChannelModel::identity(),
        &family,
        &setup(0.01),
        0.5,
        SecurityKind::Universal,
        0.0,
        1e-6,
        1e-8,
    )
    .unwrap_err();
    assert!(matches!(err, sigstrength::Error::Bracket(_)), "{err}");
}

#[test]
fn existential_verdict_depends_on_the_front_end() {
    // At 12.5 f_s a linear stage puts the envelope around f_s / 2, so every
    // member resists; a square-law stage folds 2 f_c onto DC and leaves the
    // envelope itself.
    let mut setup = setup(0.01);
    setup.carrier = 12_500.0;
    let linear = AdcConfig::new(12, -1.0, 1.0, 1000.0).unwrap();
    let family = [ToneSpec::sine(7.0, 1.0), ToneSpec::exp_sine(7.0, 0.3)];
    let probe = existential_probe(&linear, &ChannelModel::identity(), &family, &setup, 0.5, 0.5).unwrap();
    assert!(probe.existentially_secure);
    assert!(probe.verdicts.iter().all(|v| v.secure));

    let mut square = linear.clone();
    square.amp_coeffs = vec![0.0, 1.0];
    // Shallow modulation keeps the squared envelope close to a pure sine.
    setup.depth = 0.05;
    let probe = existential_probe(&square, &ChannelModel::identity(), &family[..1], &setup, 0.5, 0.9).unwrap();
    assert!(!probe.existentially_secure, "{probe:?}");
}
