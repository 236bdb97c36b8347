use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
pub const N_MELS: usize = 224;
/// Power values below this are clamped before taking logarithms.
pub const POWER_FLOOR: f64 = 1e-10;
/// Dynamic range kept below the per-file maximum, in dB.
pub const DB_RANGE: f64 = 80.0;

/// Power spectrogram `|STFT|²` of shape `[n_fft/2 + 1, frames]`.
///
/// Frames are centered: the signal is reflection-padded by `n_fft/2` on both
/// sides, giving `1 + ⌊len/hop⌋` frames. A periodic Hann window is used.
pub fn stft_power(samples: &[f64], n_fft: usize, hop: usize) -> Result<Tensor> {
    let pad = n_fft / 2;
    if samples.len() <= pad {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is too short for a {n_fft}-point centered window",
            samples.len()
        )));
    }
    let n = samples.len();
    let padded: Vec<f64> = (0..n + 2 * pad)
        .map(|i| {
            let j = i as isize - pad as isize;
            let j = if j < 0 {
                -j
            } else if j >= n as isize {
                2 * (n as isize - 1) - j
            } else {
                j
            };
            samples[j as usize]
        })
        .collect();
    let window: Vec<f64> = (0..n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
        .collect();
    let frames = 1 + (padded.len() - n_fft) / hop;
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut out = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for (b, (&x, &w)) in buf
            .iter_mut()
            .zip(padded[start..start + n_fft].iter().zip(&window))
        {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            out[k * frames + t] = c.norm_sqr();
        }
    }
    Tensor::new(vec![bins, frames], out)
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * f_sp
    }
}

/// `n_mels + 2` band edges equally spaced on the mel scale.
pub fn mel_frequencies(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters of shape `[n_mels, n_fft/2 + 1]` with area
/// normalization `2 / (f_right − f_left)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Tensor {
    let bins = n_fft / 2 + 1;
    let edges = mel_frequencies(n_mels, 0.0, sample_rate as f64 / 2.0);
    let fft_freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mut w = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (r - l);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let rise = (f - l) / (c - l);
            let fall = (r - f) / (r - c);
            w[m * bins + k] = norm * rise.min(fall).max(0.0);
        }
    }
    Tensor::from_parts(vec![n_mels, bins], w)
}

/// `10·log10(max(S, floor))` referenced to the maximum of `S`, clipped
/// [`DB_RANGE`] below the peak. An input with no power above the floor maps
/// to a constant `-DB_RANGE`.
pub fn power_to_db(power: &Tensor) -> Tensor {
    let peak = power.data().iter().copied().fold(0.0, f64::max);
    if peak < POWER_FLOOR {
        return Tensor::full(power.shape(), -DB_RANGE);
    }
    let reference = 10.0 * peak.log10();
    let db = power.map(|s| 10.0 * s.max(POWER_FLOOR).log10() - reference);
    let top = db.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    db.map(|v| v.max(top - DB_RANGE))
}

/// Log-mel spectrogram `[224, frames]` in dB.
pub fn log_mel(wave: &Waveform) -> Result<Tensor> {
    if wave.samples.is_empty() {
        return Err(Error::InvalidArgument("empty waveform".into()));
    }
    let power = stft_power(&wave.samples, N_FFT, HOP)?;
    let fb = mel_filterbank(wave.sample_rate, N_FFT, N_MELS);
    let mel = crate::tensor::ops::matmul(&fb, &power)?;
    let db = power_to_db(&mel);
    if !db.all_finite() {
        return Err(Error::NonFinite("log_mel".into()));
    }
    Ok(db)
}
