//! Audio loading and the three-channel spectrogram image.
//!
//! The pipeline is `load_audio` → [`log_mel`] → [`delta`] (twice) →
//! [`make_feature_image`], which resizes every channel to 224×224 and
//! min-max normalizes it.

mod features;
mod spectrogram;
mod wav;

pub use features::{
    delta, make_feature_image, min_max_normalize, resize_bilinear, FeatureImage, Task, IMAGE_SIZE,
};
pub use spectrogram::{
    hz_to_mel, log_mel, mel_filterbank, mel_frequencies, mel_to_hz, power_to_db, stft_power,
    DB_RANGE, HOP, N_FFT, N_MELS, POWER_FLOOR,
};
pub use wav::{load_audio, resample, write_wav_i16, Waveform, SAMPLE_RATE};
