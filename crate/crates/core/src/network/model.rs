use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, conv2d_backward, conv2d_backward_params, conv2d_forward,
    dense_backward, dense_forward, dropout_mask, relu_inplace, softmax, update_running_stats, BatchNormCache,
};
use super::params::{Gradients, NetworkParams};
use crate::error::{Error, Result};
use crate::pooling::{avg_pool, avg_pool_backward, global_pool_backward, global_pool_forward, PooledOutput, Selection};
use crate::tensor::{ChannelFreqMatrix, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor4,
    /// Absent in eval mode.
    bn: Option<BatchNormCache>,
    pool: (usize, usize),
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    mode: Mode,
    batch: usize,
    blocks: Vec<BlockCache>,
    global_input: Tensor4,
    pooled: Vec<PooledOutput>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    dropout: Option<Vec<f64>>,
    dropped: Vec<f64>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Per-block batch mean and biased variance (train mode only).
    pub fn batch_statistics(&self) -> Vec<(&[f64], &[f64])> {
        self.blocks
            .iter()
            .filter_map(|b| b.bn.as_ref().map(|c| (c.mean.as_slice(), c.var.as_slice())))
            .collect()
    }

    /// Piecewise-linear region of the forward pass: every ReLU sign and
    /// every pooling selection. Equal signatures mean the loss is smooth
    /// along the segment between two parameter points.
    pub fn activation_signature(&self, params: &NetworkParams) -> Vec<u8> {
        let mut sig = Vec::new();
        for (b, p) in self.blocks.iter().zip(&params.blocks) {
            if let Some(bn) = &b.bn {
                for n in 0..bn.x_hat.n {
                    for c in 0..bn.x_hat.c {
                        let (g, be) = (p.gamma.value[c], p.beta.value[c]);
                        sig.extend(bn.x_hat.plane(n, c).iter().map(|h| (g * h + be > 0.0) as u8));
                    }
                }
            }
        }
        for po in &self.pooled {
            match &po.selection {
                Selection::All => {}
                Selection::WindowStarts { starts, .. } => sig.extend(starts.iter().flat_map(|s| s.to_le_bytes())),
                Selection::TopK { indices, .. } => sig.extend(indices.iter().flat_map(|s| s.to_le_bytes())),
            }
        }
        sig.extend(self.hidden.iter().map(|h| (*h > 0.0) as u8));
        sig
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `batch × n_classes`, row-major.
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub cache: ForwardCache,
}

fn check_input(params: &NetworkParams, x: &Tensor4) -> Result<()> {
    let cfg = &params.config;
    if x.n == 0 || (x.c, x.t, x.f) != (1, cfg.input_time, cfg.input_freq) {
        return Err(Error::Shape(format!(
            "input batch is {:?}, network expects (n ≥ 1, 1, {}, {})",
            x.shape(),
            cfg.input_time,
            cfg.input_freq
        )));
    }
    Ok(())
}

fn pool_batch(x: &Tensor4, pt: usize, pf: usize) -> Result<Tensor4> {
    let maps = (0..x.n).map(|i| avg_pool(&x.sample_map(i), pt, pf)).collect::<Result<Vec<_>>>()?;
    Tensor4::from_maps(&maps)
}

/// conv → BN → ReLU (→ avg-pool) blocks, global pooling, dense + ReLU,
/// dropout, dense, softmax. Train mode draws the dropout mask from `rng`;
/// eval mode never touches it.
pub fn forward<R: Rng + ?Sized>(params: &NetworkParams, x: &Tensor4, mode: Mode, rng: &mut R) -> Result<ForwardOutput> {
    check_input(params, x)?;
    let cfg = &params.config;
    let trace = cfg.trace_shapes()?;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let mut cur = x.clone();
    for (p, shape) in params.blocks.iter().zip(&trace.blocks) {
        let conv = conv2d_forward(&cur, &p.kernel.value, &p.bias.value, p.c_out(), p.kernel_size())?;
        let (mut y, bn) = match mode {
            Mode::Train => {
                let (y, c) = batchnorm_train(&conv, &p.gamma.value, &p.beta.value, cfg.bn_epsilon)?;
                (y, Some(c))
            }
            Mode::Eval => (
                batchnorm_eval(&conv, &p.gamma.value, &p.beta.value, &p.running_mean, &p.running_var, cfg.bn_epsilon)?,
                None,
            ),
        };
        drop(conv);
        relu_inplace(&mut y.data);
        if shape.pool != (1, 1) {
            y = pool_batch(&y, shape.pool.0, shape.pool.1)?;
        }
        blocks.push(BlockCache {
            input: std::mem::replace(&mut cur, y),
            bn,
            pool: shape.pool,
        });
    }
    let n = x.n;
    let mut pooled = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * trace.flattened);
    for i in 0..n {
        let out = global_pool_forward(&cfg.pooling, &cur.sample_map(i))?;
        flat.extend_from_slice(&out.values.data);
        pooled.push(out);
    }
    let mut hidden = dense_forward(&flat, n, &params.hidden.weight.value, &params.hidden.bias.value)?;
    relu_inplace(&mut hidden);
    let (dropped, dropout) = match mode {
        Mode::Train if cfg.dropout_rate > 0.0 => {
            let mask = dropout_mask(hidden.len(), cfg.dropout_rate, rng);
            (hidden.iter().zip(&mask).map(|(h, m)| h * m).collect(), Some(mask))
        }
        _ => (hidden.clone(), None),
    };
    let logits = dense_forward(&dropped, n, &params.output.weight.value, &params.output.bias.value)?;
    let probs = softmax(&logits, cfg.n_classes);
    Ok(ForwardOutput {
        logits,
        probs,
        cache: ForwardCache {
            version: params.version,
            mode,
            batch: n,
            blocks,
            global_input: cur,
            pooled,
            flat,
            hidden,
            dropout,
            dropped,
        },
    })
}

/// Eval-mode class probabilities, evaluated in chunks of `chunk` samples.
pub fn predict(params: &NetworkParams, x: &Tensor4, chunk: usize) -> Result<Vec<f64>> {
    let chunk = chunk.max(1);
    let mut probs = Vec::with_capacity(x.n * params.config.n_classes);
    // Never drawn from in eval mode.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut start = 0;
    while start < x.n {
        let idx: Vec<usize> = (start..(start + chunk).min(x.n)).collect();
        probs.extend(forward(params, &x.select(&idx), Mode::Eval, &mut rng)?.probs);
        start += chunk;
    }
    Ok(probs)
}

/// Gradients of every trainable tensor given `dL/dlogits`.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
    if cache.mode != Mode::Train {
        return Err(Error::Contract("backward needs a train-mode forward cache".into()));
    }
    if cache.version != params.version {
        return Err(Error::Contract(format!(
            "stale forward cache: parameters at version {}, cache from version {}",
            params.version, cache.version
        )));
    }
    let cfg = &params.config;
    let n = cache.batch;
    if grad_logits.len() != n * cfg.n_classes {
        return Err(Error::Shape(format!(
            "{} logit gradients for a {n}×{} output",
            grad_logits.len(),
            cfg.n_classes
        )));
    }
    let (mut d_dropped, dwo, dbo) = dense_backward(&cache.dropped, n, &params.output.weight.value, cfg.n_classes, grad_logits)?;
    if let Some(mask) = &cache.dropout {
        d_dropped.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }
    for (d, h) in d_dropped.iter_mut().zip(&cache.hidden) {
        if *h <= 0.0 {
            *d = 0.0;
        }
    }
    let (dflat, dwh, dbh) = dense_backward(&cache.flat, n, &params.hidden.weight.value, cfg.dense_units, &d_dropped)?;

    let gi = &cache.global_input;
    let row = gi.c * gi.f;
    let mut maps = Vec::with_capacity(n);
    for i in 0..n {
        let g = ChannelFreqMatrix::new(gi.c, gi.f, dflat[i * row..(i + 1) * row].to_vec())?;
        maps.push(global_pool_backward(&cfg.pooling, &gi.sample_map(i), &cache.pooled[i], &g)?);
    }
    let mut grad = Tensor4::from_maps(&maps)?;

    let mut block_grads = Vec::with_capacity(params.blocks.len());
    for (bi, (b, p)) in cache.blocks.iter().zip(&params.blocks).enumerate().rev() {
        let bn = b.bn.as_ref().expect("train-mode cache");
        let xh = &bn.x_hat;
        if b.pool != (1, 1) {
            let shape = (xh.c, xh.t, xh.f);
            let maps = (0..n)
                .map(|i| avg_pool_backward(shape, b.pool.0, b.pool.1, &grad.sample_map(i)))
                .collect::<Result<Vec<_>>>()?;
            grad = Tensor4::from_maps(&maps)?;
        }
        for s in 0..n {
            for c in 0..xh.c {
                let (g, be) = (p.gamma.value[c], p.beta.value[c]);
                for (d, h) in grad.plane_mut(s, c).iter_mut().zip(xh.plane(s, c)) {
                    if g * h + be <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        let (dconv, dgamma, dbeta) = batchnorm_backward(bn, &p.gamma.value, &grad)?;
        let (dk, dbias) = if bi == 0 {
            conv2d_backward_params(&b.input, &p.kernel.value, p.c_out(), p.kernel_size(), &dconv)?
        } else {
            let (dx, dk, db) = conv2d_backward(&b.input, &p.kernel.value, p.c_out(), p.kernel_size(), &dconv)?;
            grad = dx;
            (dk, db)
        };
        block_grads.push([dk, dbias, dgamma, dbeta]);
    }
    block_grads.reverse();
    let mut tensors: Vec<Vec<f64>> = block_grads.into_iter().flatten().collect();
    tensors.extend([dwh, dbh, dwo, dbo]);
    Ok(Gradients { tensors })
}

/// Folds a train-mode forward pass's batch statistics into the running estimates.
pub fn update_batchnorm_statistics(params: &mut NetworkParams, cache: &ForwardCache) -> Result<()> {
    if cache.mode != Mode::Train {
        return Err(Error::Contract("running statistics come from train-mode passes only".into()));
    }
    let m = params.config.bn_momentum;
    for (p, b) in params.blocks.iter_mut().zip(&cache.blocks) {
        let bn = b.bn.as_ref().expect("train-mode cache");
        update_running_stats(&mut p.running_mean, &mut p.running_var, bn, m);
    }
    Ok(())
}
