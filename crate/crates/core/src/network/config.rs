use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{pool_factor, PoolingSpec};

/// Architecture of the convolutional backbone.
///
/// Each entry of `conv_filters` is a block `conv k×k (same) → BN → ReLU`,
/// followed by non-overlapping average pooling for the blocks listed in
/// `pool_after` (1-based). Global pooling, a ReLU hidden layer with dropout,
/// and a softmax output layer close the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Time frames of the single-channel input.
    pub input_time: usize,
    /// Frequency bins of the single-channel input.
    pub input_freq: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub pool_after: Vec<usize>,
    pub pooling: PoolingSpec,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub n_classes: usize,
    pub bn_epsilon: f64,
    /// Weight of the old value in the running-statistics update.
    pub bn_momentum: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::esc50(PoolingSpec::SsrpT { top_k: 12 })
    }
}

impl NetworkConfig {
    /// Full-size backbone on 431 × 40 log-mel input with 50 classes.
    pub fn esc50(pooling: PoolingSpec) -> Self {
        Self {
            input_time: 431,
            input_freq: 40,
            conv_filters: vec![32, 64, 128],
            kernel_size: 3,
            pool_after: vec![1, 2],
            pooling,
            dense_units: 128,
            dropout_rate: 0.5,
            n_classes: 50,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    /// The 2-class, 8 × 6 input, filters (2, 3, 4) network used for gradient checks.
    pub fn tiny(pooling: PoolingSpec) -> Self {
        Self {
            input_time: 8,
            input_freq: 6,
            conv_filters: vec![2, 3, 4],
            dense_units: 5,
            n_classes: 2,
            ..Self::esc50(pooling)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.input_time == 0 || self.input_freq == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if self.conv_filters.iter().any(|&c| c == 0) {
            return bad("every conv layer needs at least one filter".into());
        }
        if let Some(&l) = self.pool_after.iter().find(|&&l| l == 0 || l > self.conv_filters.len()) {
            return bad(format!("pool_after refers to missing conv layer {l}"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.dense_units == 0 {
            return bad("dense layer needs at least one unit".into());
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("batchnorm epsilon must be positive and momentum in [0, 1)".into());
        }
        let trace = self.trace_shapes()?;
        self.pooling.validate_for_time(trace.pooled_time)
    }

    /// Propagates the input shape through the backbone.
    pub fn trace_shapes(&self) -> Result<ShapeTrace> {
        let (mut c, mut t, mut f) = (1usize, self.input_time, self.input_freq);
        let mut blocks = Vec::with_capacity(self.conv_filters.len());
        for (i, &filters) in self.conv_filters.iter().enumerate() {
            let input = (c, t, f);
            c = filters;
            let pool = if self.pool_after.contains(&(i + 1)) {
                let p = (pool_factor(t), pool_factor(f));
                t /= p.0;
                f /= p.1;
                p
            } else {
                (1, 1)
            };
            blocks.push(BlockShape {
                input,
                conv_output: (c, input.1, input.2),
                pool,
                output: (c, t, f),
            });
        }
        Ok(ShapeTrace {
            blocks,
            pooled_channels: c,
            pooled_time: t,
            pooled_freq: f,
            flattened: c * f,
        })
    }

    /// Stable digest of the configuration (hex SHA-256 of its JSON form).
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockShape {
    pub input: (usize, usize, usize),
    pub conv_output: (usize, usize, usize),
    /// Pool factors along (time, freq); `(1, 1)` when the block does not pool.
    pub pool: (usize, usize),
    pub output: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeTrace {
    pub blocks: Vec<BlockShape>,
    pub pooled_channels: usize,
    /// Time length seen by the global pooling operator.
    pub pooled_time: usize,
    pub pooled_freq: usize,
    /// Length of the vector entering the hidden dense layer.
    pub flattened: usize,
}

/// Trainable parameter counts, layer by layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub layers: Vec<(String, usize)>,
    pub total: usize,
}

/// Counts trainable scalars: conv kernels and biases, batchnorm γ/β and
/// dense weights and biases. Running statistics are excluded.
pub fn count_params(cfg: &NetworkConfig) -> ParamCount {
    let k2 = cfg.kernel_size * cfg.kernel_size;
    let mut layers = Vec::new();
    let mut c_in = 1;
    for (i, &c_out) in cfg.conv_filters.iter().enumerate() {
        layers.push((format!("conv{}", i + 1), k2 * c_in * c_out + c_out));
        layers.push((format!("bn{}", i + 1), 2 * c_out));
        c_in = c_out;
    }
    let flattened = cfg
        .trace_shapes()
        .map(|t| t.flattened)
        .unwrap_or(c_in * cfg.input_freq);
    layers.push(("dense_hidden".into(), flattened * cfg.dense_units + cfg.dense_units));
    layers.push(("dense_output".into(), cfg.dense_units * cfg.n_classes + cfg.n_classes));
    let total = layers.iter().map(|(_, n)| n).sum();
    ParamCount { layers, total }
}
