use serde::{Deserialize, Serialize};

use super::manifest::N_FOLDS;
use crate::error::{Error, Result};
use crate::features::{MelConfig, CLIP_SECONDS, CNN_TARGET_FRAMES, PCA_TARGET_FRAMES};
use crate::network::{NetworkConfig, TrainingConfig};
use crate::pooling::PoolingSpec;

/// Model family plus its single hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineSpec {
    /// CNN with global average pooling.
    BaselineGap,
    SsrpB { window: usize },
    SsrpT { top_k: usize },
    /// Standardize, project onto the components covering `variance`, then a
    /// CNN over the `k × 1` projection with global average pooling.
    PcaCnn { variance: f64 },
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::PcaCnn { variance } if !(variance > 0.0 && variance <= 1.0) => Err(Error::InvalidParameter(
                format!("variance threshold must lie in (0, 1], got {variance}"),
            )),
            Self::SsrpB { window: 0 } | Self::SsrpT { top_k: 0 } => {
                Err(Error::InvalidParameter("W and K must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn pooling(&self) -> PoolingSpec {
        match *self {
            Self::SsrpB { window } => PoolingSpec::SsrpB { window },
            Self::SsrpT { top_k } => PoolingSpec::SsrpT { top_k },
            Self::BaselineGap | Self::PcaCnn { .. } => PoolingSpec::Gap,
        }
    }

    /// Model column of the result tables.
    pub fn model_label(&self) -> &'static str {
        match self {
            Self::BaselineGap => "CNN (baseline, GAP)",
            Self::SsrpB { .. } => "CNN + SSRP-B",
            Self::SsrpT { .. } => "CNN + SSRP-T",
            Self::PcaCnn { .. } => "PCA + CNN",
        }
    }

    /// Pooling column of the comparison table.
    pub fn pooling_label(&self) -> &'static str {
        match self {
            Self::BaselineGap => "Baseline",
            Self::SsrpB { .. } => "SSRP-B",
            Self::SsrpT { .. } => "SSRP-T",
            Self::PcaCnn { .. } => "PCA",
        }
    }

    pub fn hyper_label(&self) -> String {
        match *self {
            Self::BaselineGap => "-".into(),
            Self::SsrpB { window } => format!("W={window}"),
            Self::SsrpT { top_k } => format!("K={top_k}"),
            Self::PcaCnn { variance } => format!("variance={variance}"),
        }
    }
}

/// How clips become network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mel: MelConfig,
    /// Clips are truncated or zero-padded to this length before extraction.
    pub clip_seconds: f64,
    /// Time frames of the CNN input.
    pub cnn_frames: usize,
    /// Time frames flattened for PCA.
    pub pca_frames: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            clip_seconds: CLIP_SECONDS,
            cnn_frames: CNN_TARGET_FRAMES,
            pca_frames: PCA_TARGET_FRAMES,
        }
    }
}

impl FeatureConfig {
    /// Frames and clip length matched to `seconds`-long clips.
    pub fn for_duration(seconds: f64) -> Self {
        let mel = MelConfig::default();
        let frames = mel.frame_count((seconds * mel.sample_rate as f64).round() as usize);
        Self {
            mel,
            clip_seconds: seconds,
            cnn_frames: frames,
            pca_frames: frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if !(self.clip_seconds > 0.0) || self.cnn_frames == 0 || self.pca_frames == 0 {
            return Err(Error::InvalidParameter(
                "clip length and frame counts must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the extraction-relevant settings.
    pub fn extraction_digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let key = (&self.mel, self.clip_seconds);
        Sha256::digest(serde_json::to_vec(&key).expect("config serializes")).into()
    }
}

/// Everything one cross-validated run needs. Network input shape and class
/// count are taken from the data; pooling comes from `pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub pipeline: PipelineSpec,
    pub seed: u64,
    /// Held-out folds to run, each in 1–5.
    pub folds: Vec<u8>,
    pub features: FeatureConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    /// Run folds on separate threads. Results do not depend on this.
    pub parallel_folds: bool,
    /// Fit the PCA pipeline's standardizer and projection on every clip,
    /// validation folds included. Leaks; off by default.
    pub pca_fit_all_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineSpec::SsrpT { top_k: 12 },
            seed: 0,
            folds: (1..=N_FOLDS).collect(),
            features: FeatureConfig::default(),
            network: NetworkConfig::esc50(PoolingSpec::SsrpT { top_k: 12 }),
            training: TrainingConfig::default(),
            parallel_folds: false,
            pca_fit_all_data: false,
        }
    }
}

impl RunConfig {
    /// Laptop-scale settings for 1 s synthetic clips: narrow network, short
    /// training, small batches.
    pub fn desk(pipeline: PipelineSpec) -> Self {
        Self {
            pipeline,
            features: FeatureConfig::for_duration(1.0),
            network: NetworkConfig {
                conv_filters: vec![4, 8, 16],
                dense_units: 32,
                n_classes: 4,
                ..NetworkConfig::default()
            },
            training: TrainingConfig {
                epochs: 60,
                batch_size: 8,
                ..TrainingConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn with_pipeline(&self, pipeline: PipelineSpec) -> Self {
        Self {
            pipeline,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.features.validate()?;
        self.training.validate()?;
        if self.folds.is_empty() {
            return Err(Error::InvalidParameter("no folds requested".into()));
        }
        if let Some(f) = self.folds.iter().find(|f| !(1..=N_FOLDS).contains(*f)) {
            return Err(Error::InvalidParameter(format!("fold {f} outside 1–{N_FOLDS}")));
        }
        let mut sorted = self.folds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.folds.len() {
            return Err(Error::InvalidParameter("folds listed twice".into()));
        }
        Ok(())
    }

    /// Network for inputs of `time × freq` and `n_classes` classes.
    pub fn network_for(&self, time: usize, freq: usize, n_classes: usize) -> NetworkConfig {
        NetworkConfig {
            input_time: time,
            input_freq: freq,
            n_classes,
            pooling: self.pipeline.pooling(),
            ..self.network.clone()
        }
    }

    /// `seed + fold`.
    pub fn fold_seed(&self, fold: u8) -> u64 {
        self.seed.wrapping_add(fold as u64)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("run config: {e}")))
    }
}

/// The hyperparameter grid of the SSRP sweep: W ∈ {2, 4, 6, 8}, K ∈ {4, 8, 10, 12, 14, 16}.
pub fn table_grid() -> Vec<PipelineSpec> {
    let b = [2, 4, 6, 8].map(|window| PipelineSpec::SsrpB { window });
    let t = [4, 8, 10, 12, 14, 16].map(|top_k| PipelineSpec::SsrpT { top_k });
    b.into_iter().chain(t).collect()
}

/// A sweep file: shared settings plus the pipelines to run in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub base: RunConfig,
    /// Prepend the standard W/K grid.
    pub standard_grid: bool,
    pub pipelines: Vec<PipelineSpec>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            standard_grid: true,
            pipelines: Vec::new(),
        }
    }
}

impl SweepGrid {
    pub fn configs(&self) -> Vec<RunConfig> {
        let grid = if self.standard_grid { table_grid() } else { Vec::new() };
        grid.into_iter()
            .chain(self.pipelines.iter().cloned())
            .map(|p| self.base.with_pipeline(p))
            .collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("sweep grid: {e}")))
    }
}
