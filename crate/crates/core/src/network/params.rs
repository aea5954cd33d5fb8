use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::config::NetworkConfig;
use crate::error::{Error, Result};

/// A trainable tensor and its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl Param {
    fn filled(name: String, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![v; n],
            velocity: vec![0.0; n],
        }
    }

    fn from_values(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let velocity = vec![0.0; value.len()];
        Self {
            name,
            shape,
            value,
            velocity,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// `conv → BN` parameters of one block. Kernel layout is `[c_out, c_in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernel: Param,
    pub bias: Param,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    /// Entries stay ≥ 0.
    pub running_var: Vec<f64>,
}

impl ConvBlock {
    pub fn c_out(&self) -> usize {
        self.kernel.shape[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape[2]
    }
}

/// Fully connected layer; weight layout is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub blocks: Vec<ConvBlock>,
    pub hidden: Dense,
    pub output: Dense,
    /// Bumped on every parameter update; forward caches record it.
    pub(crate) version: u64,
}

/// Draws `n` He-normal samples, `N(0, 2 / fan_in)`.
pub fn he_normal<R: rand::Rng + ?Sized>(fan_in: usize, n: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// He-normal weights, zero biases, `γ = 1`, `β = 0`, running mean 0 and
/// variance 1. Deterministic in `seed`.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = cfg.kernel_size;
    let mut blocks = Vec::with_capacity(cfg.conv_filters.len());
    let mut c_in = 1;
    for (i, &c_out) in cfg.conv_filters.iter().enumerate() {
        let l = i + 1;
        let fan_in = c_in * k * k;
        let kernel = Param::from_values(
            format!("conv{l}.kernel"),
            vec![c_out, c_in, k, k],
            he_normal(fan_in, c_out * fan_in, &mut rng),
        );
        blocks.push(ConvBlock {
            kernel,
            bias: Param::filled(format!("conv{l}.bias"), vec![c_out], 0.0),
            gamma: Param::filled(format!("bn{l}.gamma"), vec![c_out], 1.0),
            beta: Param::filled(format!("bn{l}.beta"), vec![c_out], 0.0),
            running_mean: vec![0.0; c_out],
            running_var: vec![1.0; c_out],
        });
        c_in = c_out;
    }
    let flat = cfg.trace_shapes()?.flattened;
    let dense = |name: &str, inp: usize, out: usize, rng: &mut ChaCha20Rng| Dense {
        weight: Param::from_values(format!("{name}.weight"), vec![out, inp], he_normal(inp, out * inp, rng)),
        bias: Param::filled(format!("{name}.bias"), vec![out], 0.0),
    };
    let hidden = dense("dense_hidden", flat, cfg.dense_units, &mut rng);
    let output = dense("dense_output", cfg.dense_units, cfg.n_classes, &mut rng);
    Ok(NetworkParams {
        config: cfg.clone(),
        blocks,
        hidden,
        output,
        version: 0,
    })
}

impl NetworkParams {
    /// Trainable tensors in declaration order.
    pub fn trainable(&self) -> Vec<&Param> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 4);
        for b in &self.blocks {
            out.extend([&b.kernel, &b.bias, &b.gamma, &b.beta]);
        }
        out.extend([&self.hidden.weight, &self.hidden.bias, &self.output.weight, &self.output.bias]);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 4);
        for b in &mut self.blocks {
            out.extend([&mut b.kernel, &mut b.bias, &mut b.gamma, &mut b.beta]);
        }
        out.extend([
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]);
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|p| p.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks every outstanding forward cache stale.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    /// Zero-valued gradients shaped like the trainable tensors.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.trainable().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// Gradients of the trainable tensors, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Classical heavy-ball step: `v ← m·v + g`, `p ← p − lr·v`.
pub fn sgd_momentum_step(params: &mut NetworkParams, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
    {
        let trainable = params.trainable();
        if trainable.len() != grads.tensors.len()
            || trainable.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("gradients do not match the parameter layout".into()));
        }
    }
    for (p, g) in params.trainable_mut().into_iter().zip(&grads.tensors) {
        for ((w, v), &gi) in p.value.iter_mut().zip(p.velocity.iter_mut()).zip(g) {
            *v = momentum * *v + gi;
            *w -= lr * *v;
        }
    }
    params.touch();
    Ok(())
}
