use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{argmax_rows, cross_entropy_soft, softmax_cross_entropy_grad};
use super::mixup::mixup_with_permutation;
use super::model::{backward, forward, predict, update_batchnorm_statistics, Mode};
use super::params::{sgd_momentum_step, NetworkParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// `0` disables mixup.
    pub mixup_alpha: f64,
    /// Also score the clean training set after every epoch.
    pub record_train_accuracy: bool,
    /// Stop once training accuracy reaches this value (implies recording it).
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 700,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            mixup_alpha: 0.2,
            record_train_accuracy: false,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.mixup_alpha >= 0.0) {
            return Err(Error::InvalidParameter(
                "need learning rate > 0, momentum in [0, 1) and mixup alpha ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSet {
    pub inputs: Tensor4,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabelledSet {
    pub fn new(inputs: Tensor4, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != inputs.n {
            return Err(Error::Shape(format!("{} labels for {} inputs", labels.len(), inputs.n)));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Validation(format!("label {l} outside 0..{n_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn one_hot(&self, indices: &[usize]) -> Vec<f64> {
        let mut y = vec![0.0; indices.len() * self.n_classes];
        for (r, &i) in indices.iter().enumerate() {
            y[r * self.n_classes + self.labels[i]] = 1.0;
        }
        y
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Parameters plus the bookkeeping that makes training resumable.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: NetworkParams,
    /// Epochs completed.
    pub epoch: usize,
    pub rng_seed: u64,
    pub mode: Mode,
}

impl TrainState {
    pub fn new(params: NetworkParams, rng_seed: u64) -> Self {
        Self {
            params,
            epoch: 0,
            rng_seed,
            mode: Mode::Eval,
        }
    }

    /// Epoch RNG depends only on `(seed, epoch)`, so resumed and uninterrupted runs agree.
    fn epoch_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed ^ (self.epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch loss on the (mixed) training targets.
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn validation_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.validation_accuracy).collect()
    }

    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.train_accuracy)
    }
}

/// Fraction of samples whose eval-mode argmax equals the label.
pub fn accuracy(params: &NetworkParams, set: &LabelledSet, chunk: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("accuracy of an empty set".into()));
    }
    let probs = predict(params, &set.inputs, chunk)?;
    let pred = argmax_rows(&probs, params.config.n_classes);
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch SGD with optional mixup.
///
/// Mini-batches of a single sample are skipped because batch statistics
/// are undefined for them. Validation accuracy is recorded every epoch
/// when `validation` is given.
pub fn train(
    state: &mut TrainState,
    cfg: &TrainingConfig,
    data: &LabelledSet,
    validation: Option<&LabelledSet>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.n_classes != state.params.config.n_classes {
        return Err(Error::Shape(format!(
            "training set has {} classes, network has {}",
            data.n_classes, state.params.config.n_classes
        )));
    }
    if data.len() < 2 {
        return Err(Error::DegenerateBatch(data.len()));
    }
    let classes = data.n_classes;
    let eval_chunk = cfg.batch_size;
    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        let mut rng = state.epoch_rng();
        state.epoch += 1;
        state.mode = Mode::Train;
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                log::debug!("epoch {epoch}: skipping a trailing batch of one sample");
                continue;
            }
            let x = data.inputs.select(idx);
            let y = data.one_hot(idx);
            let (x, y) = if cfg.mixup_alpha > 0.0 {
                let m = mixup_with_permutation(&x, &y, cfg.mixup_alpha, &mut rng)?;
                (m.inputs, m.targets)
            } else {
                (x, y)
            };
            let out = forward(&state.params, &x, Mode::Train, &mut rng)?;
            let loss = cross_entropy_soft(&out.probs, &y, classes);
            let loss = match loss {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(Error::Divergence { epoch, loss: l }),
                Err(_) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
            };
            let grads = backward(&state.params, &out.cache, &softmax_cross_entropy_grad(&out.probs, &y, classes))?;
            if grads.tensors.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
            update_batchnorm_statistics(&mut state.params, &out.cache)?;
            sgd_momentum_step(&mut state.params, &grads, cfg.learning_rate, cfg.momentum)?;
            loss_sum += loss;
            batches += 1;
        }
        state.mode = Mode::Eval;
        let train_accuracy = if cfg.record_train_accuracy || cfg.stop_at_train_accuracy.is_some() {
            Some(accuracy(&state.params, data, eval_chunk)?)
        } else {
            None
        };
        let validation_accuracy = validation.map(|v| accuracy(&state.params, v, eval_chunk)).transpose()?;
        let loss = loss_sum / batches.max(1) as f64;
        log::debug!("epoch {epoch}: loss {loss:.5} train {train_accuracy:?} val {validation_accuracy:?}");
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            train_accuracy,
            validation_accuracy,
        });
        if let (Some(target), Some(acc)) = (cfg.stop_at_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::config::NetworkConfig;
    use crate::network::params::init_params;
    use crate::pooling::PoolingSpec;
    use rand::Rng;

    /// Two classes distinguished by where a bright patch sits in time.
    fn toy_set(n: usize, seed: u64) -> LabelledSet {
        let cfg = NetworkConfig::tiny(PoolingSpec::Gap);
        let (t, f) = (cfg.input_time, cfg.input_freq);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * t * f);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            for ti in 0..t {
                for fi in 0..f {
                    let bright = if label == 0 { fi < f / 2 } else { fi >= f / 2 };
                    data.push(if bright { 1.0 } else { 0.0 } + 0.3 * rng.random_range(-1.0..1.0) + 0.01 * ti as f64);
                }
            }
            labels.push(label);
        }
        LabelledSet::new(Tensor4::new(n, 1, t, f, data).unwrap(), labels, 2).unwrap()
    }

    fn desk_cfg() -> TrainingConfig {
        TrainingConfig {
            epochs: 30,
            batch_size: 8,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let data = toy_set(16, 1);
        let params = init_params(&NetworkConfig::tiny(PoolingSpec::SsrpT { top_k: 2 }), 2).unwrap();
        let mut state = TrainState::new(params, 3);
        let cfg = TrainingConfig {
            stop_at_train_accuracy: Some(1.0),
            epochs: 200,
            ..desk_cfg()
        };
        let h = train(&mut state, &cfg, &data, Some(&toy_set(8, 9))).unwrap();
        assert_eq!(h.final_train_accuracy(), Some(1.0));
        assert_eq!(h.validation_trajectory().len(), h.epochs.len());
        assert_eq!(state.epoch, h.epochs.len());
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_set(10, 4);
        let run = || {
            let params = init_params(&NetworkConfig::tiny(PoolingSpec::SsrpB { window: 2 }), 5).unwrap();
            let mut state = TrainState::new(params, 6);
            let h = train(&mut state, &TrainingConfig { epochs: 3, ..desk_cfg() }, &data, Some(&data)).unwrap();
            (h, state.params)
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let data = toy_set(10, 4);
        let params = init_params(&NetworkConfig::tiny(PoolingSpec::Gap), 5).unwrap();
        let mut a = TrainState::new(params.clone(), 6);
        train(&mut a, &TrainingConfig { epochs: 4, ..desk_cfg() }, &data, None).unwrap();
        let mut b = TrainState::new(params, 6);
        train(&mut b, &TrainingConfig { epochs: 2, ..desk_cfg() }, &data, None).unwrap();
        train(&mut b, &TrainingConfig { epochs: 2, ..desk_cfg() }, &data, None).unwrap();
        assert_eq!(a.params.trainable(), b.params.trainable());
    }

    #[test]
    fn zero_epochs_leave_parameters_untouched() {
        let data = toy_set(4, 4);
        let params = init_params(&NetworkConfig::tiny(PoolingSpec::Gap), 5).unwrap();
        let mut s = TrainState::new(params.clone(), 6);
        let h = train(&mut s, &TrainingConfig { epochs: 0, ..desk_cfg() }, &data, None).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(s.params, params);
    }

    #[test]
    fn huge_learning_rate_diverges_with_epoch() {
        let data = toy_set(8, 4);
        let params = init_params(&NetworkConfig::tiny(PoolingSpec::Gap), 5).unwrap();
        let mut s = TrainState::new(params, 6);
        let cfg = TrainingConfig {
            learning_rate: 1e300,
            epochs: 5,
            mixup_alpha: 0.0,
            ..desk_cfg()
        };
        match train(&mut s, &cfg, &data, None) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn labelled_set_validation() {
        let x = Tensor4::zeros(2, 1, 8, 6);
        assert!(LabelledSet::new(x.clone(), vec![0], 2).is_err());
        assert!(LabelledSet::new(x, vec![0, 2], 2).is_err());
    }
}
