//! Seeded synthetic two-class tone dataset.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{write_manifest, Label, ManifestEntry};
use crate::audio::{write_wav_i16, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    /// Fraction of subjects in the depression class.
    pub class_balance: f64,
    /// Tone pairs in Hz, indexed `[class][task]` with task 0 = reading, 1 = interview.
    pub tones: [[[f64; 2]; 2]; 2],
    /// Standard deviation of additive Gaussian noise.
    pub noise_level: f64,
    pub seed: u64,
    pub duration_secs: f64,
    /// Peak amplitude of each tone.
    pub tone_amplitude: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 40,
            class_balance: 0.5,
            tones: [
                [[400.0, 900.0], [600.0, 1200.0]],
                [[700.0, 1500.0], [1000.0, 2000.0]],
            ],
            noise_level: 0.05,
            seed: 7,
            duration_secs: 2.0,
            tone_amplitude: 0.4,
        }
    }
}

impl SyntheticSpec {
    /// Number of depression-class subjects.
    pub fn n_positive(&self) -> usize {
        (self.n_subjects as f64 * self.class_balance).round() as usize
    }

    /// Waveform for subject `index` of class `label`, task 0 (reading) or 1 (interview).
    pub fn waveform(&self, index: usize, label: Label, task: usize) -> Waveform {
        let mut rng = RngStream::new(self.seed, 0)
            .split(index as u64)
            .split(task as u64);
        let n = (self.duration_secs * SAMPLE_RATE as f64).round() as usize;
        let tones = self.tones[label.index()][task];
        let phases: Vec<f64> = tones
            .iter()
            .map(|_| rng.uniform_range(0.0, 2.0 * PI))
            .collect();
        let samples = (0..n)
            .map(|t| {
                let time = t as f64 / SAMPLE_RATE as f64;
                let clean: f64 = tones
                    .iter()
                    .zip(&phases)
                    .map(|(&f, &p)| self.tone_amplitude * (2.0 * PI * f * time + p).sin())
                    .sum();
                let noise = if self.noise_level > 0.0 {
                    self.noise_level * rng.normal()
                } else {
                    0.0
                };
                clean + noise
            })
            .collect();
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }
}

/// Writes `2 × n_subjects` WAV files and `manifest.csv` into `out_dir`;
/// returns the manifest path. Control subjects come first.
pub fn synth_dataset(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    if !(0.0..=1.0).contains(&spec.class_balance) || spec.n_subjects == 0 {
        return Err(Error::InvalidArgument(
            "need n_subjects > 0 and class_balance in [0, 1]".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_control = spec.n_subjects - spec.n_positive();
    let mut entries = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let label = if i < n_control {
            Label::Control
        } else {
            Label::Depression
        };
        let id = format!("s{i:03}");
        let mut paths = [PathBuf::new(), PathBuf::new()];
        for (task, name) in ["reading", "interview"].iter().enumerate() {
            let p = out_dir.join(format!("{id}_{name}.wav"));
            write_wav_i16(&p, &spec.waveform(i, label, task))?;
            paths[task] = p;
        }
        let [reading, interview] = paths;
        entries.push(ManifestEntry {
            subject_id: id,
            reading_path: Some(reading),
            interview_path: Some(interview),
            label,
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
