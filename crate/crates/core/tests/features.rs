use std::f64::consts::PI;

use fastmel_core::audio::{
    frame_count, hz_to_mel, load_mel, load_wav, mel_points, samples_to_mel, save_mel,
    stft_magnitude, wav_to_mel, write_wav_pcm16, MelParams, Window,
};
use fastmel_core::graph::model::UniformInit;
use fastmel_core::Error;

fn sine(freq: f64, sr: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin())
        .collect()
}

/// One-sided spectrum energy with the DC and Nyquist bins counted once.
fn one_sided_energy(col: &[f64], n_fft: usize) -> f64 {
    let last = col.len() - 1;
    let sum: f64 = col
        .iter()
        .enumerate()
        .map(|(k, m)| {
            if k == 0 || k == last {
                m * m
            } else {
                2.0 * m * m
            }
        })
        .sum();
    sum / n_fft as f64
}

#[test]
fn on_bin_sine_concentrates_in_its_bin() {
    let (n_fft, sr) = (512, 16000.0);
    for k0 in [5usize, 32, 100, 200] {
        let f = k0 as f64 * sr / n_fft as f64;
        let x = sine(f, sr, 4 * n_fft, 0.7);
        let spec = stft_magnitude(&x, n_fft, 128, Window::Rectangular).unwrap();
        for t in 0..spec.cols() {
            let col = spec.column(t);
            let share = 2.0 * col[k0] * col[k0] / n_fft as f64 / one_sided_energy(&col, n_fft);
            assert!(share >= 0.9, "bin {k0} frame {t}: {share}");
        }
    }
}

#[test]
fn hann_main_lobe_holds_the_sine() {
    let (n_fft, sr) = (1024, 22050.0);
    let k0 = 93;
    let x = sine(k0 as f64 * sr / n_fft as f64, sr, 3 * n_fft, 0.5);
    let spec = stft_magnitude(&x, n_fft, 256, Window::Hann).unwrap();
    let col = spec.column(1);
    let lobe: f64 = (k0 - 1..=k0 + 1)
        .map(|k| 2.0 * col[k] * col[k] / n_fft as f64)
        .sum();
    assert!(lobe / one_sided_energy(&col, n_fft) >= 0.9);
}

#[test]
fn parseval_holds_per_frame() {
    let mut rng = UniformInit::new(17);
    for &n_fft in &[64usize, 256, 1024] {
        for window in [Window::Hann, Window::Rectangular] {
            let x: Vec<f64> = (0..3 * n_fft).map(|_| rng.symmetric(1.0)).collect();
            let hop = n_fft / 4;
            let spec = stft_magnitude(&x, n_fft, hop, window).unwrap();
            let w = window.coefficients(n_fft);
            for t in 0..spec.cols() {
                let time: f64 = (0..n_fft).map(|i| (x[t * hop + i] * w[i]).powi(2)).sum();
                let freq = one_sided_energy(&spec.column(t), n_fft);
                assert!(
                    (time - freq).abs() <= 1e-3 * time,
                    "{n_fft} {window:?} frame {t}: {time} vs {freq}"
                );
            }
        }
    }
}

#[test]
fn framing_count_matches_enumeration() {
    let mut rng = UniformInit::new(23);
    for _ in 0..100 {
        let n_fft = 1 << (1 + rng.below(10));
        let hop = 1 + rng.below(n_fft);
        let n = rng.below(5 * n_fft);
        let mut starts = 0;
        while starts * hop + n_fft <= n {
            starts += 1;
        }
        let expected = (starts > 0).then_some(starts);
        assert_eq!(
            frame_count(n, n_fft, hop),
            expected,
            "n {n} n_fft {n_fft} hop {hop}"
        );
        if let Some(frames) = expected {
            let x = vec![0.0f64; n];
            assert_eq!(
                stft_magnitude(&x, n_fft, hop, Window::Hann).unwrap().cols(),
                frames
            );
        }
    }
}

#[test]
fn sine_lands_in_the_nearest_mel_band() {
    let sr = 22050u32;
    let x: Vec<f32> = sine(1000.0, sr as f64, 8192, 0.5)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let mel = samples_to_mel(&x, sr, &MelParams::default()).unwrap();
    let pts = mel_points(80, 0.0, sr as f64 / 2.0);
    let target = hz_to_mel(1000.0);
    let nearest = (0..80)
        .min_by(|&a, &b| {
            (pts[a + 1] - target)
                .abs()
                .total_cmp(&(pts[b + 1] - target).abs())
        })
        .unwrap();
    let col: Vec<f32> = mel.bins.column(mel.frames() / 2);
    let peak = (0..80).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
    assert!(
        peak.abs_diff(nearest) <= 1,
        "peak {peak}, expected near {nearest}"
    );
}

#[test]
fn pcm16_fixture_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tone.wav");
    let x: Vec<f32> = sine(440.0, 16000.0, 4000, 0.6)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    write_wav_pcm16(&p, &x, 16000, 1).unwrap();
    let (y, sr) = load_wav(&p).unwrap();
    assert_eq!(sr, 16000);
    assert_eq!(y.len(), x.len());
    for (a, b) in x.iter().zip(&y) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
}

#[test]
fn stereo_is_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("st.wav");
    write_wav_pcm16(&p, &[0.5, -0.5, 0.25, 0.75], 8000, 2).unwrap();
    let (y, _) = load_wav(&p).unwrap();
    assert_eq!(y, vec![0.0, 0.5]);
}

#[test]
fn float_wav_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 22050,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    for v in [0.1f32, -0.2, 0.3] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(load_wav(&p).unwrap().0, vec![0.1, -0.2, 0.3]);
}

#[test]
fn eight_bit_pcm_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("u8.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 8,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    w.write_sample(3i8).unwrap();
    w.finalize().unwrap();
    assert!(matches!(load_wav(&p), Err(Error::UnsupportedCodec(_))));
}

#[test]
fn garbage_is_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.wav");
    std::fs::write(&p, b"RIFF\x04\x00\x00\x00WAVEjunk").unwrap();
    assert!(load_wav(&p).is_err());
}

#[test]
fn mel_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    let x: Vec<f32> = sine(300.0, 22050.0, 6000, 0.4)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    write_wav_pcm16(&wav, &x, 22050, 1).unwrap();
    let mel = wav_to_mel(&wav, &MelParams::default()).unwrap();
    assert_eq!(mel.n_mels(), 80);
    assert_eq!(mel.frames(), frame_count(6000, 1024, 256).unwrap());
    let out = dir.path().join("a.fdt1");
    save_mel(&out, &mel).unwrap();
    assert_eq!(load_mel(&out).unwrap(), mel);
    // WAV paths are accepted wherever a mel file is.
    assert_eq!(load_mel(&wav).unwrap().bins, mel.bins);
}
