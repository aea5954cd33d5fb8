//! Audio decoding and log-mel feature extraction.
//!
//! The default configuration turns a 5 s, 44.1 kHz clip into a
//! 431 × 40 dB spectrogram (Hann 1024 / hop 512, centered frames, HTK mel
//! scale over 0–22 050 Hz), which [`shape_to_input`] then pads or truncates
//! and z-scores into the network input.

mod mel;
mod spectrogram;
mod wav;

pub use mel::{hann_window, hz_to_mel, log_mel, mel_to_hz, LogMelExtractor, MelConfig, MelFilterbank};
pub use spectrogram::{fix_duration, shape_to_input, LogMelSpectrogram, NORMALIZE_STD_GUARD};
pub use wav::{decode_wav, encode_wav_pcm16, load_wav, quantize_pcm16, write_wav, AudioClip};

/// Frames fed to the CNN path.
pub const CNN_TARGET_FRAMES: usize = 431;
/// Frames used when flattening spectrograms for PCA (40 × 428 = 17 120 features).
pub const PCA_TARGET_FRAMES: usize = 428;
/// Clip length used throughout the ESC-50 protocol.
pub const CLIP_SECONDS: f64 = 5.0;
