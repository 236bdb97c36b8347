use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Working sample rate of the front-end.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a PCM WAV file (16-bit integer or 32-bit float, any channel count),
/// averages channels and resamples to [`SAMPLE_RATE`].
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let audio_err = |detail: String| Error::Audio {
        path: path.to_path_buf(),
        detail,
    };
    let reader = WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(audio_err("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(audio_err(format!(
                "unsupported encoding: {bits}-bit {fmt:?}"
            )))
        }
    }
    .map_err(|e| audio_err(e.to_string()))?;

    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    let wave = Waveform::new(mono, spec.sample_rate)?;
    Ok(resample(&wave, SAMPLE_RATE))
}

/// Writes mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav_i16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| Error::Audio {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut writer = WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(audio_err)?;
    }
    writer.finalize().map_err(audio_err)
}

/// Zero crossings of the sinc kernel on each side, measured at the lower of
/// the two rates.
const SINC_HALF_ZEROS: f64 = 32.0;

/// Band-limited resampling by windowed-sinc interpolation (Hann window).
pub fn resample(wave: &Waveform, target_rate: u32) -> Waveform {
    if wave.sample_rate == target_rate || wave.samples.is_empty() {
        return Waveform {
            samples: wave.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_HALF_ZEROS / cutoff;
    let n_in = wave.samples.len();
    let n_out = (n_in as f64 * ratio).ceil() as usize;
    let x = &wave.samples;

    let samples = (0..n_out)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = ((t - half_width).ceil().max(0.0)) as usize;
            let hi = ((t + half_width).floor() as usize).min(n_in - 1);
            let mut acc = 0.0;
            for (n, &xn) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - n as f64;
                let window = 0.5 * (1.0 + (PI * d / half_width).cos());
                acc += xn * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect();
    Waveform {
        samples,
        sample_rate: target_rate,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}
