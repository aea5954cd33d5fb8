//! STFT power spectrogram, HTK mel filterbank and dB conversion.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::spectrogram::LogMelSpectrogram;
use super::wav::AudioClip;
use crate::error::{Error, Result};

/// STFT and mel parameters. Defaults produce 431 frames × 40 mel bins from a
/// 5 s clip at 44.1 kHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Power floor applied before `10·log10`.
    pub power_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 512,
            n_mels: 40,
            f_min: 0.0,
            f_max: 22_050.0,
            power_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return bad("n_fft must be an even number >= 2");
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return bad("win_length must lie in 1..=n_fft");
        }
        if self.hop_length == 0 {
            return bad("hop_length must be positive");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive");
        }
        if !(self.f_min >= 0.0 && self.f_max > self.f_min && self.f_max <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= f_min < f_max <= sample_rate / 2");
        }
        if !(self.power_floor > 0.0) {
            return bad("power_floor must be positive");
        }
        Ok(())
    }

    /// dB value of a fully floored bin.
    pub fn db_floor(&self) -> f64 {
        10.0 * self.power_floor.log10()
    }

    /// Number of frames produced for `n_samples` input samples (centered framing).
    pub fn frame_count(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop_length
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the HTK mel scale, peak gain 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
    f_min: f64,
    f_max: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let n_bins = cfg.n_bins();
        let mel_lo = hz_to_mel(cfg.f_min);
        let mel_hi = hz_to_mel(cfg.f_max);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;

        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (b, w) in row.iter_mut().enumerate() {
                let f = b as f64 * bin_hz;
                let up = (f - lo) / (center - lo);
                let down = (hi - f) / (hi - center);
                *w = up.min(down).max(0.0);
            }
            if row.iter().all(|&w| w == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer mels or a larger n_fft"
                )));
            }
        }
        Ok(Self {
            n_mels: cfg.n_mels,
            n_bins,
            weights,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
            f_min: cfg.f_min,
            f_max: cfg.f_max,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Row-major `n_mels × n_bins` gain matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, mel: usize) -> &[f64] {
        &self.weights[mel * self.n_bins..(mel + 1) * self.n_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn frequency_range(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }

    /// Index of the filter whose center frequency is closest to `hz`.
    pub fn nearest_bin(&self, hz: f64) -> usize {
        self.centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable log-mel extractor holding the filterbank, window and FFT plan.
pub struct LogMelExtractor {
    cfg: MelConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor").field("cfg", &self.cfg).finish()
    }
}

impl LogMelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let filterbank = MelFilterbank::new(&cfg)?;
        // Window is centered inside the FFT frame when shorter than n_fft.
        let mut window = vec![0.0; cfg.n_fft];
        let offset = (cfg.n_fft - cfg.win_length) / 2;
        window[offset..offset + cfg.win_length].copy_from_slice(&hann_window(cfg.win_length));
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg,
            filterbank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Power spectrogram `|STFT|²`, row-major `frames × (n_fft/2 + 1)`.
    pub fn power_spectrogram(&self, clip: &AudioClip) -> Result<(usize, Vec<f64>)> {
        let cfg = &self.cfg;
        if clip.sample_rate() != cfg.sample_rate {
            return Err(Error::SampleRate {
                found: clip.sample_rate(),
                expected: cfg.sample_rate,
            });
        }
        let x = clip.samples();
        if x.len() < cfg.n_fft {
            return Err(Error::InsufficientAudio {
                samples: x.len(),
                required: cfg.n_fft,
            });
        }
        let pad = cfg.n_fft / 2;
        let padded = reflect_pad(x, pad);
        let n_frames = cfg.frame_count(x.len());
        let n_bins = cfg.n_bins();

        let mut power = vec![0.0; n_frames * n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            let start = t * cfg.hop_length;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power[t * n_bins..(t + 1) * n_bins].iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
        }
        Ok((n_frames, power))
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<LogMelSpectrogram> {
        let (n_frames, power) = self.power_spectrogram(clip)?;
        let n_bins = self.filterbank.n_bins();
        let n_mels = self.filterbank.n_mels();
        let mut values = Vec::with_capacity(n_frames * n_mels);
        for frame in power.chunks_exact(n_bins) {
            for m in 0..n_mels {
                let e: f64 = self.filterbank.row(m).iter().zip(frame).map(|(w, p)| w * p).sum();
                values.push(10.0 * e.max(self.cfg.power_floor).log10());
            }
        }
        LogMelSpectrogram::new(values, n_frames, n_mels)
    }
}

/// Computes the log-mel spectrogram of a clip (`frames × n_mels`, dB).
pub fn log_mel(clip: &AudioClip, cfg: &MelConfig) -> Result<LogMelSpectrogram> {
    LogMelExtractor::new(cfg.clone())?.extract(clip)
}

/// Mirror padding that excludes the edge sample (`[3,2,1 | 1,2,3,4 | 3,2]`-style
/// with edge excluded, i.e. `x[pad], …, x[1], x[0], …`).
fn reflect_pad(x: &[f32], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let period = 2 * (n - 1).max(1);
    (0..x.len() + 2 * pad)
        .map(|i| {
            let mut j = (i as isize - pad as isize).rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            x[j as usize] as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, amp: f32) -> AudioClip {
        let sr = 44_100;
        let n = (secs * sr as f64).round() as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32)
            .collect();
        AudioClip::new(s, sr).unwrap()
    }

    #[test]
    fn reflect_padding_matches_numpy_reflect() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        assert_eq!(reflect_pad(&x, 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn five_seconds_gives_431_frames() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.frame_count(220_500), 431);
        let spec = log_mel(&sine(440.0, 5.0, 0.5), &cfg).unwrap();
        assert_eq!((spec.n_frames(), spec.n_mels()), (431, 40));
    }

    #[test]
    fn filterbank_rows_nonzero_and_nonnegative() {
        let fb = MelFilterbank::new(&MelConfig::default()).unwrap();
        assert_eq!(fb.n_bins(), 513);
        for m in 0..fb.n_mels() {
            let row = fb.row(m);
            assert!(row.iter().all(|w| w.is_finite() && *w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn degenerate_filterbank_rejected() {
        let cfg = MelConfig {
            n_mels: 400,
            n_fft: 64,
            win_length: 64,
            ..MelConfig::default()
        };
        assert!(matches!(MelFilterbank::new(&cfg), Err(Error::InvalidParameter(_))));
    }

    fn peak_bin(row: &[f64]) -> usize {
        (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
    }

    #[test]
    fn tone_energy_concentrates_in_nearest_mel_bin() {
        let ex = LogMelExtractor::new(MelConfig::default()).unwrap();
        let target = ex.filterbank().nearest_bin(440.0);
        assert!((ex.filterbank().centers_hz()[target] - 440.0).abs() < 50.0);

        // 48 511 samples hold exactly 484 periods between the first and last
        // sample, so the cosine peaks at both ends and reflect padding
        // continues it smoothly.
        let n = 48_511;
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44_100.0).cos() as f32)
            .collect();
        let spec = ex.extract(&AudioClip::new(s, 44_100).unwrap()).unwrap();
        for t in 0..spec.n_frames() {
            assert_eq!(peak_bin(spec.frame(t)), target, "frame {t}");
        }

        // Arbitrary phase: frames whose window lies inside the clip.
        let spec = ex.extract(&sine(440.0, 1.0, 0.5)).unwrap();
        for t in 2..spec.n_frames() - 2 {
            assert_eq!(peak_bin(spec.frame(t)), target, "frame {t}");
        }
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(vec![0.0; 44_100], 44_100).unwrap();
        let spec = log_mel(&clip, &cfg).unwrap();
        assert!(spec.values().iter().all(|&v| v == cfg.db_floor()));
        assert_eq!(cfg.db_floor(), -100.0);
    }

    #[test]
    fn doubling_amplitude_adds_six_db() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f32> = (0..22_050).map(|_| rng.random_range(-0.4f32..0.4)).collect();
        let clip = AudioClip::new(s, 44_100).unwrap();
        let cfg = MelConfig::default();
        let a = log_mel(&clip, &cfg).unwrap();
        let b = log_mel(&clip.scaled(2.0), &cfg).unwrap();
        let expected = 10.0 * 4f64.log10();
        assert!((expected - 6.0206).abs() < 1e-4);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((y - x - expected).abs() < 1e-6, "{x} -> {y}");
        }
    }

    #[test]
    fn short_clip_and_wrong_rate_rejected() {
        let cfg = MelConfig::default();
        let short = AudioClip::new(vec![0.1; 1000], 44_100).unwrap();
        assert!(matches!(log_mel(&short, &cfg), Err(Error::InsufficientAudio { .. })));
        let wrong = AudioClip::new(vec![0.1; 48_000], 48_000).unwrap();
        assert!(matches!(log_mel(&wrong, &cfg), Err(Error::SampleRate { .. })));
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 440.0, 1000.0, 22_050.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
