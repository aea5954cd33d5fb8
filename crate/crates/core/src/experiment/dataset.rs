use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::FeatureConfig;
use super::manifest::DatasetManifest;
use super::synth::SyntheticDataset;
use crate::error::{Error, Result};
use crate::features::{decode_wav, fix_duration, shape_to_input, AudioClip, LogMelExtractor, LogMelSpectrogram};
use crate::pca::Matrix;
use crate::tensor::Tensor4;

/// Raw dB spectrograms, one per manifest entry, plus the settings that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub manifest: DatasetManifest,
    pub spectrograms: Vec<LogMelSpectrogram>,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionStats {
    pub cache_hits: usize,
    pub extracted: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn clip_features(extractor: &LogMelExtractor, clip: &AudioClip, cfg: &FeatureConfig) -> Result<LogMelSpectrogram> {
    extractor.extract(&fix_duration(clip, cfg.clip_seconds)?)
}

impl FeatureDataset {
    /// `clips` parallel to `manifest.entries()`.
    pub fn from_clips(manifest: DatasetManifest, clips: &[AudioClip], features: &FeatureConfig) -> Result<Self> {
        features.validate()?;
        if clips.len() != manifest.len() {
            return Err(Error::Shape(format!("{} clips for {} manifest entries", clips.len(), manifest.len())));
        }
        let extractor = LogMelExtractor::new(features.mel.clone())?;
        let spectrograms = clips
            .iter()
            .map(|c| clip_features(&extractor, c, features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            spectrograms,
            features: features.clone(),
        })
    }

    pub fn from_synthetic(data: &SyntheticDataset, features: &FeatureConfig) -> Result<Self> {
        Self::from_clips(data.manifest.clone(), &data.clips, features)
    }

    pub fn len(&self) -> usize {
        self.spectrograms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectrograms.is_empty()
    }

    pub fn n_mels(&self) -> usize {
        self.features.mel.n_mels
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.manifest.entries()[i].target).collect()
    }

    fn shaped(&self, i: usize, frames: usize) -> Result<LogMelSpectrogram> {
        shape_to_input(&self.spectrograms[i], frames, self.features.mel.db_floor())
    }

    /// `n × 1 × frames × n_mels` normalized CNN inputs.
    pub fn cnn_inputs(&self, indices: &[usize]) -> Result<Tensor4> {
        let frames = self.features.cnn_frames;
        let mut data = Vec::with_capacity(indices.len() * frames * self.n_mels());
        for &i in indices {
            data.extend_from_slice(self.shaped(i, frames)?.values());
        }
        Tensor4::new(indices.len(), 1, frames, self.n_mels(), data)
    }

    /// One flattened, normalized spectrogram per row.
    pub fn pca_matrix(&self, indices: &[usize]) -> Result<Matrix> {
        let d = self.features.pca_frames * self.n_mels();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.shaped(i, self.features.pca_frames)?.values());
        }
        Matrix::from_vec(indices.len(), d, data)
    }
}

/// Cache file for an audio file's bytes under the given extraction settings.
pub fn cache_key(audio_bytes: &[u8], features: &FeatureConfig) -> String {
    let mut h = Sha256::new();
    h.update(Sha256::digest(audio_bytes));
    h.update(features.extraction_digest());
    format!("{}.lmsp", hex(&h.finalize()))
}

/// Loads every manifest entry from `audio_dir` and extracts its spectrogram,
/// reusing and filling `cache_dir` when given.
pub fn extract_features(
    audio_dir: impl AsRef<Path>,
    manifest: &DatasetManifest,
    features: &FeatureConfig,
    cache_dir: Option<&Path>,
) -> Result<(FeatureDataset, ExtractionStats)> {
    features.validate()?;
    let extractor = LogMelExtractor::new(features.mel.clone())?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut stats = ExtractionStats::default();
    let mut spectrograms = Vec::with_capacity(manifest.len());
    for entry in manifest.entries() {
        let path: PathBuf = audio_dir.as_ref().join(&entry.filename);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let cached = cache_dir.map(|d| d.join(cache_key(&bytes, features)));
        if let Some(c) = cached.as_ref().filter(|c| c.is_file()) {
            spectrograms.push(LogMelSpectrogram::load(c)?);
            stats.cache_hits += 1;
            continue;
        }
        let clip = decode_wav(bytes.as_slice()).map_err(|e| match e {
            Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let spec = clip_features(&extractor, &clip, features)?;
        if let Some(c) = &cached {
            spec.save(c)?;
        }
        spectrograms.push(spec);
        stats.extracted += 1;
    }
    log::info!(
        "features: {} extracted, {} from cache",
        stats.extracted,
        stats.cache_hits
    );
    Ok((
        FeatureDataset {
            manifest: manifest.clone(),
            spectrograms,
            features: features.clone(),
        },
        stats,
    ))
}
