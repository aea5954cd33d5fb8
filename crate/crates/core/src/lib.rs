//! Log-mel front end, PCA baseline, sparse salient region pooling (SSRP) and
//! a small CNN trained from scratch, plus the cross-validation harness that
//! compares them.

pub mod error;
pub mod experiment;
pub mod features;
pub mod network;
pub mod pca;
pub mod pooling;
pub mod tensor;

pub use error::{Error, Result};
pub use experiment::{
    DatasetManifest, FeatureConfig, FeatureDataset, PipelineSpec, RunConfig, RunResult, SweepGrid, SyntheticSpec,
};
pub use features::{AudioClip, LogMelSpectrogram, MelConfig};
pub use network::{NetworkConfig, NetworkParams, TrainingConfig};
pub use pca::{Matrix, PcaModel};
pub use pooling::PoolingSpec;
pub use tensor::{ChannelFreqMatrix, FeatureMap, Tensor4};
