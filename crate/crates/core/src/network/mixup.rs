use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// A convex combination of two labelled batches.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Tensor4,
    /// Soft labels, `batch × classes`.
    pub targets: Vec<f64>,
    pub lambda: f64,
}

/// Draws `λ ~ Beta(α, α)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidParameter(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `x = λ·x_a + (1 − λ)·x_b`, `y = λ·y_a + (1 − λ)·y_b`.
pub fn mix_with_lambda(x_a: &Tensor4, y_a: &[f64], x_b: &Tensor4, y_b: &[f64], lambda: f64) -> Result<MixedBatch> {
    if x_a.shape() != x_b.shape() {
        return Err(Error::Shape(format!(
            "mixup batches differ in shape: {:?} vs {:?}",
            x_a.shape(),
            x_b.shape()
        )));
    }
    if y_a.len() != y_b.len() || x_a.n == 0 || y_a.len() % x_a.n != 0 {
        return Err(Error::Shape(format!(
            "mixup labels have {} and {} entries for {} samples",
            y_a.len(),
            y_b.len(),
            x_a.n
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("mixup λ must lie in [0, 1], got {lambda}")));
    }
    let mu = 1.0 - lambda;
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| lambda * p + mu * q).collect() };
    Ok(MixedBatch {
        inputs: Tensor4::new(x_a.n, x_a.c, x_a.t, x_a.f, mix(&x_a.data, &x_b.data))?,
        targets: mix(y_a, y_b),
        lambda,
    })
}

/// Samples λ and mixes the two batches.
pub fn mixup_batch<R: Rng + ?Sized>(
    x_a: &Tensor4,
    y_a: &[f64],
    x_b: &Tensor4,
    y_b: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch> {
    let lambda = sample_lambda(alpha, rng)?;
    mix_with_lambda(x_a, y_a, x_b, y_b, lambda)
}

/// Mixes a batch with a random permutation of itself under a single λ.
pub fn mixup_with_permutation<R: Rng + ?Sized>(x: &Tensor4, y: &[f64], alpha: f64, rng: &mut R) -> Result<MixedBatch> {
    let classes = if x.n == 0 { 0 } else { y.len() / x.n };
    let lambda = sample_lambda(alpha, rng)?;
    let mut perm: Vec<usize> = (0..x.n).collect();
    perm.shuffle(rng);
    let x_b = x.select(&perm);
    let y_b: Vec<f64> = perm.iter().flat_map(|&i| y[i * classes..(i + 1) * classes].iter().copied()).collect();
    mix_with_lambda(x, y, &x_b, &y_b, lambda)
}
