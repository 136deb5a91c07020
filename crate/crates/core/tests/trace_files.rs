use sigstrength::trace::{read_trace, write_trace, Trace, TraceFormat};

fn write_wav(path: &std::path::Path, rate: u32, samples: &[i16]) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn wav_written_by_hound_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tone.wav");
    let samples: Vec<i16> = (0..4410)
        .map(|i| ((i as f64 * 0.05).sin() * 20_000.0) as i16)
        .collect();
    write_wav(&path, 44_100, &samples);
    let t = read_trace(&path, TraceFormat::from_path(&path)).unwrap();
    assert_eq!(t.sample_rate(), 44_100.0);
    assert_eq!(t.len(), samples.len());
    for (a, &b) in t.samples().iter().zip(&samples) {
        assert_eq!(*a, b as f64 / 32768.0);
    }
}

#[test]
fn stereo_wav_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stereo.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for _ in 0..8 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let err = read_trace(&path, TraceFormat::Wav).unwrap_err();
    assert!(matches!(err, sigstrength::Error::Format(_)), "{err}");
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let samples: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() / 3.0 + 1e-17 * i as f64).collect();
    let t = Trace::with_start(samples, 12_345.678, 0.125).unwrap();
    write_trace(&t, &path, TraceFormat::Csv).unwrap();
    let back = read_trace(&path, TraceFormat::Csv).unwrap();
    assert_eq!(back.samples(), t.samples());
    assert!((back.sample_rate() - t.sample_rate()).abs() / t.sample_rate() < 1e-9);
    assert!((back.t0() - t.t0()).abs() < 1e-12);
}
