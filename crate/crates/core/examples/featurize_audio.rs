//! Turns a two-tone clip into the three-channel spectrogram image and shows
//! where the tones land in the mel filterbank.
//!
//! ```text
//! cargo run --example featurize_audio -- [path/to/file.wav]
//! ```

use std::f64::consts::PI;

use moedep::audio::{
    delta, load_audio, log_mel, make_feature_image, mel_frequencies, Task, Waveform, HOP, N_MELS,
    SAMPLE_RATE,
};

fn main() -> moedep::Result<()> {
    let wave = match std::env::args().nth(1) {
        Some(path) => load_audio(path)?,
        None => {
            let sr = SAMPLE_RATE as f64;
            let samples = (0..2 * SAMPLE_RATE as usize)
                .map(|t| {
                    let t = t as f64 / sr;
                    0.4 * (2.0 * PI * 440.0 * t).sin() + 0.3 * (2.0 * PI * 1000.0 * t).sin()
                })
                .collect();
            Waveform::new(samples, SAMPLE_RATE)?
        }
    };
    println!(
        "{} samples at {} Hz ({:.2}s)",
        wave.samples.len(),
        wave.sample_rate,
        wave.duration_secs()
    );

    let mel = log_mel(&wave)?;
    let frames = mel.shape()[1];
    println!(
        "log-mel {N_MELS}×{frames} (1 + {} / {HOP} frames)",
        wave.samples.len()
    );

    // Average energy per band over time; the two loudest bands should sit at the tones.
    let energy: Vec<f64> = (0..N_MELS)
        .map(|b| mel.data()[b * frames..(b + 1) * frames].iter().sum::<f64>() / frames as f64)
        .collect();
    let mut bands: Vec<usize> = (0..N_MELS).collect();
    bands.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]));
    let centers = mel_frequencies(N_MELS + 2, 0.0, wave.sample_rate as f64 / 2.0);
    for &b in bands.iter().take(4) {
        println!(
            "band {b:3} centered at {:7.1} Hz: mean {:6.1} dB",
            centers[b + 1],
            energy[b]
        );
    }

    let d1 = delta(&mel, 1)?;
    let d2 = delta(&mel, 2)?;
    let range = |t: &moedep::Tensor| {
        let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    println!(
        "delta range {:?}, delta-delta range {:?}",
        range(&d1),
        range(&d2)
    );

    let image = make_feature_image(&wave, Task::Reading)?;
    println!(
        "feature image {:?} for the {} task",
        image.channels.shape(),
        image.task.as_str()
    );
    for (c, name) in ["log-mel", "delta", "delta-delta"].iter().enumerate() {
        let n = 224 * 224;
        let ch = &image.channels.data()[c * n..(c + 1) * n];
        let mean = ch.iter().sum::<f64>() / n as f64;
        println!("  channel {c} ({name}): mean {mean:.3}");
    }
    Ok(())
}
