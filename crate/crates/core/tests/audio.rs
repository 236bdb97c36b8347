use std::f64::consts::PI;
use std::path::Path;

use moedep::audio::{
    delta, load_audio, log_mel, make_feature_image, mel_filterbank, min_max_normalize,
    resize_bilinear, stft_power, Task, Waveform, DB_RANGE, HOP, IMAGE_SIZE, N_FFT, N_MELS,
    SAMPLE_RATE,
};
use moedep::tensor::RngStream;
use moedep::Tensor;
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> Vec<f64> {
    let n = (rate as f64 * secs) as usize;
    (0..n)
        .map(|t| amp * (2.0 * PI * freq * t as f64 / rate as f64).sin())
        .collect()
}

fn write_i16(path: &Path, rate: u32, channels: &[Vec<f64>]) {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for t in 0..channels[0].len() {
        for c in channels {
            w.write_sample((c[t] * 32767.0).round() as i16).unwrap();
        }
    }
    w.finalize().unwrap();
}

/// Frequency (Hz) of the largest magnitude in the full-length spectrum.
fn dominant_frequency(samples: &[f64], rate: u32) -> f64 {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    let half = buf.len() / 2;
    let bin = (1..half)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap();
    bin as f64 * rate as f64 / samples.len() as f64
}

#[test]
fn one_second_mono_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    write_i16(&p, 16_000, &[sine(440.0, 16_000, 1.0, 0.5)]);
    let w = load_audio(&p).unwrap();
    assert_eq!(w.samples.len(), 16_000);
    assert_eq!(w.sample_rate, SAMPLE_RATE);
    assert!(w.samples.iter().all(|s| s.abs() <= 1.0));
}

#[test]
fn opposite_stereo_channels_cancel() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    let x = sine(300.0, 16_000, 0.5, 0.7);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    write_i16(&p, 16_000, &[x, neg]);
    let w = load_audio(&p).unwrap();
    assert!(w.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn float_wav_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    for s in [0.25f32, -0.5, 0.125] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(load_audio(&p).unwrap().samples, vec![0.25, -0.5, 0.125]);
}

#[test]
fn resampled_sine_keeps_its_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("8k.wav");
    write_i16(&p, 8_000, &[sine(1000.0, 8_000, 1.0, 0.5)]);
    let w = load_audio(&p).unwrap();
    assert_eq!(w.sample_rate, 16_000);
    assert_eq!(w.samples.len(), 16_000);
    assert_eq!(dominant_frequency(&w.samples, 16_000), 1000.0);
    // Also through the STFT used for features.
    let power = stft_power(&w.samples, N_FFT, HOP).unwrap();
    let bins = power.shape()[0];
    let frames = power.shape()[1];
    let mid = frames / 2;
    let peak = (0..bins)
        .max_by(|&a, &b| power.get(&[a, mid]).total_cmp(&power.get(&[b, mid])))
        .unwrap();
    assert_eq!(peak as f64 * 16_000.0 / N_FFT as f64, 1000.0);
}

#[test]
fn unreadable_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.wav");
    std::fs::write(&p, b"not a wav").unwrap();
    assert!(load_audio(&p).is_err());
    assert!(load_audio(dir.path().join("missing.wav")).is_err());
}

#[test]
fn silence_sits_on_the_floor() {
    let w = Waveform::new(vec![0.0; 32_000], SAMPLE_RATE).unwrap();
    let m = log_mel(&w).unwrap();
    assert!(m.data().iter().all(|&v| v == -DB_RANGE));
    let img = make_feature_image(&w, Task::Reading).unwrap();
    assert!(img.channels.data()[..IMAGE_SIZE * IMAGE_SIZE]
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn two_seconds_give_63_frames() {
    let w = Waveform::new(sine(440.0, 16_000, 2.0, 0.5), SAMPLE_RATE).unwrap();
    assert_eq!(log_mel(&w).unwrap().shape(), &[N_MELS, 63]);
}

#[test]
fn too_short_waveform_is_rejected() {
    let w = Waveform::new(vec![0.1; 100], SAMPLE_RATE).unwrap();
    assert!(log_mel(&w).is_err());
}

/// Slaney mel scale, written out independently of the library.
fn slaney_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    if hz < 1000.0 {
        hz / f_sp
    } else {
        1000.0 / f_sp + (hz / 1000.0).ln() / (6.4f64.ln() / 27.0)
    }
}

fn slaney_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_mel = 1000.0 / f_sp;
    if mel < min_log_mel {
        mel * f_sp
    } else {
        1000.0 * ((mel - min_log_mel) * (6.4f64.ln() / 27.0)).exp()
    }
}

#[test]
fn one_khz_sine_peaks_in_the_band_centred_nearest_1khz() {
    let top = slaney_mel(8000.0);
    let centers: Vec<f64> = (1..=N_MELS)
        .map(|b| slaney_hz(top * b as f64 / (N_MELS + 1) as f64))
        .collect();
    let expected = (0..N_MELS)
        .min_by(|&a, &b| {
            (centers[a] - 1000.0)
                .abs()
                .total_cmp(&(centers[b] - 1000.0).abs())
        })
        .unwrap();

    let w = Waveform::new(sine(1000.0, 16_000, 2.0, 0.5), SAMPLE_RATE).unwrap();
    let m = log_mel(&w).unwrap();
    let frames = m.shape()[1];
    for t in 2..frames - 2 {
        let peak = (0..N_MELS)
            .max_by(|&a, &b| m.get(&[a, t]).total_cmp(&m.get(&[b, t])))
            .unwrap();
        assert_eq!(peak, expected, "frame {t}");
    }
}

#[test]
fn filterbank_shape_and_coverage() {
    let fb = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS);
    assert_eq!(fb.shape(), &[N_MELS, N_FFT / 2 + 1]);
    assert!(fb.data().iter().all(|&v| v >= 0.0));
    for b in 0..N_MELS {
        assert!(fb.row(b).iter().any(|&v| v > 0.0), "band {b} is empty");
    }
}

#[test]
fn delta_of_constant_is_zero() {
    let x = Tensor::full(&[3, 12], 4.5);
    assert!(delta(&x, 1).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(delta(&x, 2).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn delta_of_ramp_is_one_inside() {
    let t = 20;
    let x = Tensor::from_fn(&[1, t], |i| i as f64);
    let d = delta(&x, 1).unwrap();
    for i in 4..t - 4 {
        assert!((d.data()[i] - 1.0).abs() < 1e-10);
    }
}

fn delta_oracle(x: &Tensor) -> Tensor {
    let (bands, frames) = (x.shape()[0], x.shape()[1]);
    let at = |b: usize, t: isize| x.get(&[b, t.clamp(0, frames as isize - 1) as usize]);
    let denom = 2.0 * (1..=4).map(|n| (n * n) as f64).sum::<f64>();
    Tensor::from_fn(&[bands, frames], |i| {
        let (b, t) = (i / frames, (i % frames) as isize);
        (1..=4)
            .map(|n| n as f64 * (at(b, t + n) - at(b, t - n)))
            .sum::<f64>()
            / denom
    })
}

#[test]
fn delta_matches_regression_formula() {
    let mut rng = RngStream::new(3, 0);
    for frames in [1, 3, 9, 30] {
        let x = Tensor::from_fn(&[5, frames], |_| rng.normal());
        let d1 = delta(&x, 1).unwrap();
        assert!(d1.max_abs_diff(&delta_oracle(&x)) < 1e-12);
        let d2 = delta(&x, 2).unwrap();
        assert!(d2.max_abs_diff(&delta_oracle(&delta_oracle(&x))) < 1e-12);
    }
}

#[test]
fn square_resize_is_identity() {
    let mut rng = RngStream::new(4, 0);
    let x = Tensor::from_fn(&[IMAGE_SIZE, IMAGE_SIZE], |_| rng.normal());
    assert!(
        resize_bilinear(&x, IMAGE_SIZE, IMAGE_SIZE)
            .unwrap()
            .max_abs_diff(&x)
            < 1e-12
    );
}

#[test]
fn resize_hits_corners_and_midpoints() {
    let x = Tensor::matrix(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = resize_bilinear(&x, 3, 3).unwrap();
    assert_eq!(y.data(), &[0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
}

#[test]
fn min_max_of_constant_is_zero() {
    let x = Tensor::full(&[4, 4], 7.0);
    assert!(min_max_normalize(&x).data().iter().all(|&v| v == 0.0));
}

#[test]
fn feature_image_contract() {
    let mut rng = RngStream::new(5, 0);
    let samples: Vec<f64> = sine(700.0, 16_000, 2.0, 0.3)
        .into_iter()
        .map(|s| s + 0.05 * rng.normal())
        .collect();
    let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
    let img = make_feature_image(&w, Task::Interview).unwrap();
    assert_eq!(img.channels.shape(), &[3, IMAGE_SIZE, IMAGE_SIZE]);
    assert_eq!(img.task, Task::Interview);
    assert!(img.channels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let again = make_feature_image(&w, Task::Interview).unwrap();
    assert_eq!(img.channels.data(), again.channels.data());
}

#[test]
fn amplitude_scaling_leaves_log_mel_channel_unchanged() {
    let mut rng = RngStream::new(6, 0);
    let base: Vec<f64> = sine(500.0, 16_000, 1.0, 0.2)
        .into_iter()
        .map(|s| s + 0.02 * rng.normal())
        .collect();
    let img = make_feature_image(
        &Waveform::new(base.clone(), SAMPLE_RATE).unwrap(),
        Task::Reading,
    )
    .unwrap();
    for alpha in [0.1, 0.5, 3.0] {
        let scaled: Vec<f64> = base.iter().map(|s| alpha * s).collect();
        let other = make_feature_image(&Waveform::new(scaled, SAMPLE_RATE).unwrap(), Task::Reading)
            .unwrap();
        let n = IMAGE_SIZE * IMAGE_SIZE;
        let diff = img.channels.data()[..n]
            .iter()
            .zip(&other.channels.data()[..n])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "alpha {alpha}: {diff}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn delta_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, frames in 1usize..40) {
        let mut rng = RngStream::new(seed, 0);
        let x = Tensor::from_fn(&[3, frames], |_| rng.normal());
        let y = Tensor::from_fn(&[3, frames], |_| rng.normal());
        let lhs = delta(&x.scale(a).add(&y.scale(b)).unwrap(), 2).unwrap();
        let rhs = delta(&x, 2).unwrap().scale(a).add(&delta(&y, 2).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }
}
