//! The convolutional backbone: layers, explicit backpropagation, mixup and
//! momentum SGD.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod mixup;
pub mod model;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, read_params, save_checkpoint, write_params, CheckpointMeta};
pub use config::{count_params, BlockShape, NetworkConfig, ParamCount, ShapeTrace};
pub use layers::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, conv2d_backward, conv2d_forward, conv2d_map,
    cross_entropy_soft, softmax, softmax_cross_entropy_grad,
};
pub use mixup::{mix_with_lambda, mixup_batch, mixup_with_permutation, sample_lambda, MixedBatch};
pub use model::{backward, forward, predict, update_batchnorm_statistics, ForwardCache, ForwardOutput, Mode};
pub use params::{init_params, sgd_momentum_step, Gradients, NetworkParams, Param};
pub use train::{accuracy, train, EpochRecord, LabelledSet, TrainHistory, TrainState, TrainingConfig};
