use std::io::{Read, Write};
use std::path::Path;

use super::wav::AudioClip;
use crate::error::{Error, Result};

const LMSP_MAGIC: &[u8; 4] = b"LMSP";

/// Standard deviation below which `shape_to_input` outputs all zeros.
pub const NORMALIZE_STD_GUARD: f64 = 1e-8;

/// `frames × mels` matrix of dB values, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    values: Vec<f64>,
    n_frames: usize,
    n_mels: usize,
}

impl LogMelSpectrogram {
    pub fn new(values: Vec<f64>, n_frames: usize, n_mels: usize) -> Result<Self> {
        if values.len() != n_frames * n_mels {
            return Err(Error::Shape(format!(
                "{} values for a {n_frames}×{n_mels} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            values,
            n_frames,
            n_mels,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.values[t * self.n_mels + m]
    }

    /// Writes the flat binary form: `"LMSP"`, u32 frames, u32 mels, then
    /// frame-major little-endian f32 values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(LMSP_MAGIC)?;
        w.write_all(&(self.n_frames as u32).to_le_bytes())?;
        w.write_all(&(self.n_mels as u32).to_le_bytes())?;
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        let mut u = [0u8; 4];
        let short = |e: std::io::Error| Error::Decode(format!("truncated LMSP file: {e}"));
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != LMSP_MAGIC {
            return Err(Error::Decode("bad LMSP magic".into()));
        }
        r.read_exact(&mut u).map_err(short)?;
        let n_frames = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u).map_err(short)?;
        let n_mels = u32::from_le_bytes(u) as usize;
        let mut raw = vec![0u8; n_frames * n_mels * 4];
        r.read_exact(&mut raw).map_err(short)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Self::new(values, n_frames, n_mels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_binary(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// One frame per line, comma-separated, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in 0..self.n_frames {
            let line: Vec<String> = self.frame(t).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Truncates or zero-pads at the end to exactly `round(seconds · sample_rate)` samples.
pub fn fix_duration(clip: &AudioClip, seconds: f64) -> Result<AudioClip> {
    if !(seconds > 0.0) {
        return Err(Error::InvalidParameter(format!("duration must be positive, got {seconds}")));
    }
    let target = (seconds * clip.sample_rate() as f64).round() as usize;
    if target == 0 {
        return Err(Error::InvalidParameter("duration rounds to zero samples".into()));
    }
    let mut samples = clip.samples().to_vec();
    samples.resize(target, 0.0);
    AudioClip::new(samples, clip.sample_rate())
}

/// Pads (with `pad_db`) or truncates the time axis to `target_frames`, then
/// z-scores over all entries using the population standard deviation.
pub fn shape_to_input(
    spec: &LogMelSpectrogram,
    target_frames: usize,
    pad_db: f64,
) -> Result<LogMelSpectrogram> {
    if target_frames == 0 {
        return Err(Error::InvalidParameter("target_frames must be positive".into()));
    }
    let f = spec.n_mels;
    let keep = spec.n_frames.min(target_frames);
    let mut values = Vec::with_capacity(target_frames * f);
    values.extend_from_slice(&spec.values[..keep * f]);
    values.resize(target_frames * f, pad_db);

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < NORMALIZE_STD_GUARD {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    LogMelSpectrogram::new(values, target_frames, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, mels: usize) -> LogMelSpectrogram {
        let v = (0..frames * mels).map(|i| (i as f64 * 0.37).sin() * 20.0 - 40.0).collect();
        LogMelSpectrogram::new(v, frames, mels).unwrap()
    }

    fn stats(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    #[test]
    fn fix_duration_truncates_and_pads() {
        let sr = 44_100;
        let six = AudioClip::new(vec![0.25; 6 * sr], sr as u32).unwrap();
        assert_eq!(fix_duration(&six, 5.0).unwrap().len(), 220_500);

        let five = AudioClip::new(vec![0.25; 5 * sr], sr as u32).unwrap();
        assert_eq!(fix_duration(&five, 5.0).unwrap(), five);

        let four = AudioClip::new(vec![0.25; 4 * sr], sr as u32).unwrap();
        let fixed = fix_duration(&four, 5.0).unwrap();
        assert_eq!(fixed.len(), 220_500);
        assert!(fixed.samples()[176_400..].iter().all(|&s| s == 0.0));
        assert_eq!(fixed.samples()[176_400..].len(), 44_100);
        assert_eq!(fixed.samples()[176_399], 0.25);

        assert!(fix_duration(&four, 0.0).is_err());
    }

    #[test]
    fn shape_identity_length_normalizes() {
        let s = ramp(431, 40);
        let out = shape_to_input(&s, 431, -100.0).unwrap();
        assert_eq!((out.n_frames(), out.n_mels()), (431, 40));
        let (m, sd) = stats(out.values());
        assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_truncates_keeping_first_frames() {
        let s = ramp(500, 40);
        let out = shape_to_input(&s, 431, -100.0).unwrap();
        assert_eq!(out.n_frames(), 431);
        // The normalized output is an affine image of the first 431 raw frames.
        let kept = LogMelSpectrogram::new(s.values()[..431 * 40].to_vec(), 431, 40).unwrap();
        let direct = shape_to_input(&kept, 431, -100.0).unwrap();
        assert_eq!(out, direct);
    }

    #[test]
    fn shape_pads_with_floor() {
        let s = ramp(10, 4);
        let out = shape_to_input(&s, 12, -100.0).unwrap();
        assert_eq!(out.n_frames(), 12);
        let last = out.frame(11);
        assert!(last.iter().all(|&v| v == last[0]));
        assert!(last[0] < out.values()[..40].iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn constant_spectrogram_normalizes_to_zero() {
        let s = LogMelSpectrogram::new(vec![-37.5; 40 * 5], 5, 40).unwrap();
        let out = shape_to_input(&s, 5, -37.5).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_and_csv_formats() {
        let s = LogMelSpectrogram::new(vec![1.0, -2.5, 3.25, 0.0, 5.5, -100.0], 3, 2).unwrap();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LMSP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 12 + 6 * 4);
        assert_eq!(LogMelSpectrogram::read_binary(&buf[..]).unwrap(), s);

        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "1,-2.5\n3.25,0\n5.5,-100\n");

        assert!(LogMelSpectrogram::read_binary(&b"XXXX"[..]).is_err());
        assert!(LogMelSpectrogram::read_binary(&buf[..20]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn fix_duration_idempotent(len in 1usize..4000, secs in 0.01f64..0.1) {
            let clip = AudioClip::new((0..len).map(|i| (i as f32 * 0.01).sin()).collect(), 44_100).unwrap();
            let once = fix_duration(&clip, secs).unwrap();
            let twice = fix_duration(&once, secs).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }

        #[test]
        fn shape_output_is_standardized(frames in 2usize..60, target in 1usize..80, seed in 0u64..1000) {
            let v: Vec<f64> = (0..frames * 40).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f64 * 0.1 - 60.0).collect();
            let s = LogMelSpectrogram::new(v, frames, 40).unwrap();
            let out = shape_to_input(&s, target, -100.0).unwrap();
            proptest::prop_assert_eq!(out.n_frames(), target);
            proptest::prop_assert_eq!(out.n_mels(), 40);
            let (m, sd) = stats(out.values());
            proptest::prop_assert!(m.abs() < 1e-6);
            proptest::prop_assert!((sd - 1.0).abs() < 1e-6);
        }
    }
}
