//! WAV ingestion and mel-spectrogram extraction.
//!
//! Frames are taken without centring padding, so a signal of `n` samples
//! yields `1 + (n - n_fft) / hop` frames. Spectra are magnitudes unless
//! power is requested; scaling the input by `c >= 0` scales every magnitude
//! mel bin by exactly `c` up to rounding.

use std::collections::BTreeMap;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram<T = f32> {
    /// `[n_mels, T]`, non-negative.
    pub bins: Tensor<T>,
    pub sample_rate: u32,
    pub hop: usize,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl<T: Scalar> MelSpectrogram<T> {
    pub fn n_mels(&self) -> usize {
        self.bins.rows()
    }

    pub fn frames(&self) -> usize {
        self.bins.cols()
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => file_err(path)(io),
        hound::Error::Unsupported => Error::UnsupportedCodec(format!("{}", path.display())),
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    }
}

/// Reads PCM16 or IEEE float32 WAV, averaging channels to mono. PCM16 is
/// scaled by `1/32768`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::MalformedWav(format!(
            "{}: no samples",
            path.display()
        )));
    }
    let mono = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes interleaved samples in `[-1, 1]` as PCM16.
pub fn write_wav_pcm16(
    path: impl AsRef<Path>,
    samples: &[f32],
    sample_rate: u32,
    channels: u16,
) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Number of frames without centring, or `None` if the signal is shorter
/// than one frame.
pub fn frame_count(n_samples: usize, n_fft: usize, hop: usize) -> Option<usize> {
    (n_samples >= n_fft && hop > 0).then(|| 1 + (n_samples - n_fft) / hop)
}

/// Magnitude spectrogram `[n_fft/2 + 1, T]`.
pub fn stft_magnitude<T: Scalar>(
    samples: &[T],
    n_fft: usize,
    hop: usize,
    window: Window,
) -> Result<Tensor<T>> {
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_fft must be a power of two, got {n_fft}"
        )));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::InvalidArgument(format!(
            "hop must be in 1..={n_fft}, got {hop}"
        )));
    }
    let frames = frame_count(samples.len(), n_fft, hop).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{} samples are too few for one {n_fft}-sample frame",
            samples.len()
        ))
    })?;
    let win: Vec<T> = window.coefficients(n_fft).into_iter().map(T::lit).collect();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let mut out = Tensor::zeros(&[bins, frames]);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n_fft];
    for t in 0..frames {
        let frame = &samples[t * hop..t * hop + n_fft];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&win) {
            *b = Complex::new(s * w, T::zero());
        }
        fft.process(&mut buf);
        for (k, c) in buf[..bins].iter().enumerate() {
            out.row_mut(k)[t] = c.norm();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge and centre frequencies of `n_mels` triangles: `n_mels + 2` points
/// equally spaced on the mel scale.
pub fn mel_points(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters `[n_mels, n_fft/2 + 1]`; `slaney_norm` scales each
/// triangle by `2 / (f_hi - f_lo)`.
pub fn mel_filterbank(
    n_fft: usize,
    sample_rate: u32,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    slaney_norm: bool,
) -> Result<Tensor<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= fmin < fmax <= {nyquist} and n_mels > 0, got fmin {fmin}, fmax {fmax}, n_mels {n_mels}"
        )));
    }
    let pts = mel_points(n_mels, fmin, fmax);
    let bins = n_fft / 2 + 1;
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
    Ok(Tensor::from_fn2(n_mels, bins, |m, k| {
        let (lo, c, hi) = (pts[m], pts[m + 1], pts[m + 2]);
        let f = bin_hz(k);
        let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
        if slaney_norm {
            w * 2.0 / (hi - lo)
        } else {
            w
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MelParams {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax: Option<f64>,
    pub window: Window,
    /// Feed power (magnitude squared) instead of magnitude to the filterbank.
    pub power: bool,
    pub slaney_norm: bool,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: None,
            window: Window::Hann,
            power: false,
            slaney_norm: false,
        }
    }
}

/// Mel spectrogram of a sample buffer.
pub fn samples_to_mel(samples: &[f32], sample_rate: u32, p: &MelParams) -> Result<MelSpectrogram> {
    let fmax = p.fmax.unwrap_or(sample_rate as f64 / 2.0);
    let fb = mel_filterbank(p.n_fft, sample_rate, p.n_mels, p.fmin, fmax, p.slaney_norm)?;
    let x: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut spec = stft_magnitude(&x, p.n_fft, p.hop, p.window)?;
    if p.power {
        spec = spec.map(|v| v * v);
    }
    let frames = spec.cols();
    let mut mel = Tensor::<f32>::zeros(&[p.n_mels, frames]);
    for m in 0..p.n_mels {
        let w = fb.row(m);
        for t in 0..frames {
            let v: f64 = (0..w.len()).map(|k| w[k] * spec.at2(k, t)).sum();
            mel.row_mut(m)[t] = v as f32;
        }
    }
    Ok(MelSpectrogram {
        bins: mel,
        sample_rate,
        hop: p.hop,
        n_fft: p.n_fft,
        fmin: p.fmin,
        fmax,
    })
}

pub fn wav_to_mel(path: impl AsRef<Path>, p: &MelParams) -> Result<MelSpectrogram> {
    let (samples, sr) = load_wav(path)?;
    samples_to_mel(&samples, sr, p)
}

/// Writes tensor `mel` with meta keys `sr`, `hop`, `n_fft`, `fmin`, `fmax`.
pub fn save_mel(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let mut meta = BTreeMap::new();
    meta.insert("sr".to_string(), mel.sample_rate.to_string());
    meta.insert("hop".to_string(), mel.hop.to_string());
    meta.insert("n_fft".to_string(), mel.n_fft.to_string());
    meta.insert("fmin".to_string(), mel.fmin.to_string());
    meta.insert("fmax".to_string(), mel.fmax.to_string());
    write_container(path, &[("mel".to_string(), mel.bins.clone())], &meta)
}

/// Reads a mel container, or extracts one with default parameters when the
/// path ends in `.wav`. Missing meta keys fall back to the extraction
/// defaults.
pub fn load_mel(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
    {
        return wav_to_mel(path, &MelParams::default());
    }
    let c = read_container(path)?;
    let bins = c
        .get("mel")
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no `mel` tensor", path.display())))?
        .clone();
    if bins.rank() != 2 {
        return Err(Error::Shape(format!(
            "{}: mel must be [n_mels, T]",
            path.display()
        )));
    }
    fn meta<V: std::str::FromStr>(m: &BTreeMap<String, String>, k: &str, default: V) -> Result<V> {
        m.get(k).map_or(Ok(default), |s| {
            s.parse()
                .map_err(|_| Error::CorruptContainer(format!("bad `{k}` meta value `{s}`")))
        })
    }
    let sr = meta(&c.meta, "sr", 22050u32)?;
    Ok(MelSpectrogram {
        sample_rate: sr,
        hop: meta(&c.meta, "hop", 256usize)?,
        n_fft: meta(&c.meta, "n_fft", 1024usize)?,
        fmin: meta(&c.meta, "fmin", 0.0f64)?,
        fmax: meta(&c.meta, "fmax", sr as f64 / 2.0)?,
        bins,
    })
}
