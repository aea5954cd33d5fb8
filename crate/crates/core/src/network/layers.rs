//! Batched layer kernels with explicit backward passes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Tensor4};

/// Probability rows must sum to 1 within this tolerance.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;
/// Lower clamp on predicted probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_kernel(x_c: usize, weight: &[f64], bias: &[f64], c_out: usize, k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::Shape(format!("kernel size must be odd, got {k}")));
    }
    if weight.len() != c_out * x_c * k * k {
        return Err(Error::Shape(format!(
            "kernel holds {} weights, a {c_out}×{x_c}×{k}×{k} kernel needs {}",
            weight.len(),
            c_out * x_c * k * k
        )));
    }
    if bias.len() != c_out {
        return Err(Error::Shape(format!("{} biases for {c_out} filters", bias.len())));
    }
    Ok(())
}

/// Valid output range `[lo, hi)` along an axis of length `n` for kernel offset `d − pad`.
#[inline]
fn valid_range(n: usize, d: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(d);
    let hi = (n + pad).saturating_sub(d).min(n);
    (lo, hi.max(lo))
}

/// Stride-1, zero "same"-padded 2-D convolution (cross-correlation).
///
/// `weight` is `[c_out, c_in, k, k]`, `x` is `n × c_in × t × f`.
pub fn conv2d_forward(x: &Tensor4, weight: &[f64], bias: &[f64], c_out: usize, k: usize) -> Result<Tensor4> {
    check_kernel(x.c, weight, bias, c_out, k)?;
    let (n_n, c_in, t_n, f_n) = x.shape();
    let pad = k / 2;
    let mut y = Tensor4::zeros(n_n, c_out, t_n, f_n);
    for n in 0..n_n {
        for co in 0..c_out {
            let out = y.plane_mut(n, co);
            out.fill(bias[co]);
            for ci in 0..c_in {
                let inp = x.plane(n, ci);
                for dt in 0..k {
                    let (t_lo, t_hi) = valid_range(t_n, dt, pad);
                    for df in 0..k {
                        let w = weight[((co * c_in + ci) * k + dt) * k + df];
                        if w == 0.0 {
                            continue;
                        }
                        let (f_lo, f_hi) = valid_range(f_n, df, pad);
                        for t in t_lo..t_hi {
                            let src_t = t + dt - pad;
                            let o = &mut out[t * f_n + f_lo..t * f_n + f_hi];
                            let s = &inp[src_t * f_n + f_lo + df - pad..src_t * f_n + f_hi + df - pad];
                            for (a, b) in o.iter_mut().zip(s) {
                                *a += w * b;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d_forward`]: `(dx, dweight, dbias)`.
pub fn conv2d_backward(
    x: &Tensor4,
    weight: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let (dx, dw, db) = conv2d_backward_impl(x, weight, c_out, k, grad_out, true)?;
    Ok((dx.expect("requested"), dw, db))
}

/// Kernel and bias gradients only; the input gradient is not formed.
pub fn conv2d_backward_params(
    x: &Tensor4,
    weight: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &Tensor4,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, dw, db) = conv2d_backward_impl(x, weight, c_out, k, grad_out, false)?;
    Ok((dw, db))
}

fn conv2d_backward_impl(
    x: &Tensor4,
    weight: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &Tensor4,
    want_dx: bool,
) -> Result<(Option<Tensor4>, Vec<f64>, Vec<f64>)> {
    let (n_n, c_in, t_n, f_n) = x.shape();
    if grad_out.shape() != (n_n, c_out, t_n, f_n) {
        return Err(Error::Shape(format!(
            "conv gradient is {:?}, expected {:?}",
            grad_out.shape(),
            (n_n, c_out, t_n, f_n)
        )));
    }
    check_kernel(c_in, weight, &vec![0.0; c_out], c_out, k)?;
    let pad = k / 2;
    let mut dx = Tensor4::zeros(if want_dx { n_n } else { 0 }, c_in, t_n, f_n);
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; c_out];
    for n in 0..n_n {
        for co in 0..c_out {
            let g = grad_out.plane(n, co);
            db[co] += g.iter().sum::<f64>();
            for ci in 0..c_in {
                let inp = x.plane(n, ci);
                for dt in 0..k {
                    let (t_lo, t_hi) = valid_range(t_n, dt, pad);
                    for df in 0..k {
                        let wi = ((co * c_in + ci) * k + dt) * k + df;
                        let w = weight[wi];
                        let (f_lo, f_hi) = valid_range(f_n, df, pad);
                        let mut acc = 0.0;
                        for t in t_lo..t_hi {
                            let src_t = t + dt - pad;
                            let go = &g[t * f_n + f_lo..t * f_n + f_hi];
                            let s0 = src_t * f_n + f_lo + df - pad;
                            let s = &inp[s0..s0 + go.len()];
                            acc += go.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                            if want_dx {
                                let dxp = dx.plane_mut(n, ci);
                                for (d, gv) in dxp[s0..s0 + go.len()].iter_mut().zip(go) {
                                    *d += w * gv;
                                }
                            }
                        }
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
    Ok((want_dx.then_some(dx), dw, db))
}

/// Single-map convolution, for direct use outside a batch.
pub fn conv2d_map(x: &FeatureMap, weight: &[f64], bias: &[f64], c_out: usize, k: usize) -> Result<FeatureMap> {
    let batch = Tensor4::from_maps(std::slice::from_ref(x))?;
    Ok(conv2d_forward(&batch, weight, bias, c_out, k)?.sample_map(0))
}

/// Batch-norm state a backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    /// Normalized input before the affine transform.
    pub x_hat: Tensor4,
    pub inv_std: Vec<f64>,
    /// Per-channel batch mean and biased variance.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_channels(x: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != x.c || beta.len() != x.c {
        return Err(Error::Shape(format!(
            "batchnorm has {}/{} affine entries for {} channels",
            gamma.len(),
            beta.len(),
            x.c
        )));
    }
    Ok(())
}

/// Training-mode batch norm with per-channel batch statistics.
pub fn batchnorm_train(x: &Tensor4, gamma: &[f64], beta: &[f64], eps: f64) -> Result<(Tensor4, BatchNormCache)> {
    check_channels(x, gamma, beta)?;
    if x.n < 2 {
        return Err(Error::DegenerateBatch(x.n));
    }
    let m = (x.n * x.plane_len()) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let mut s = 0.0;
        for n in 0..x.n {
            s += x.plane(n, c).iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for n in 0..x.n {
            v += x.plane(n, c).iter().map(|a| (a - mu) * (a - mu)).sum::<f64>();
        }
        mean[c] = mu;
        var[c] = v / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let (mu, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (h, o) in x_hat.plane_mut(n, c).iter_mut().zip(y.plane_mut(n, c).iter_mut()) {
                *h = (*h - mu) * is;
                *o = g * *h + b;
            }
        }
    }
    Ok((
        y,
        BatchNormCache {
            x_hat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Eval-mode batch norm using running statistics.
pub fn batchnorm_eval(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor4> {
    check_channels(x, gamma, beta)?;
    if running_mean.len() != x.c || running_var.len() != x.c {
        return Err(Error::Shape("running statistics do not match the channel count".into()));
    }
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let scale = gamma[c] / (running_var[c] + eps).sqrt();
            let shift = beta[c] - running_mean[c] * scale;
            y.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(y)
}

/// Gradients of [`batchnorm_train`]: `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(cache: &BatchNormCache, gamma: &[f64], grad_out: &Tensor4) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let xh = &cache.x_hat;
    if grad_out.shape() != xh.shape() {
        return Err(Error::Shape(format!(
            "batchnorm gradient is {:?}, expected {:?}",
            grad_out.shape(),
            xh.shape()
        )));
    }
    let m = (xh.n * xh.plane_len()) as f64;
    let mut dgamma = vec![0.0; xh.c];
    let mut dbeta = vec![0.0; xh.c];
    for n in 0..xh.n {
        for c in 0..xh.c {
            for (g, h) in grad_out.plane(n, c).iter().zip(xh.plane(n, c)) {
                dgamma[c] += g * h;
                dbeta[c] += g;
            }
        }
    }
    let mut dx = Tensor4::zeros(xh.n, xh.c, xh.t, xh.f);
    for n in 0..xh.n {
        for c in 0..xh.c {
            let a = gamma[c] * cache.inv_std[c] / m;
            let (sg, sgh) = (dbeta[c], dgamma[c]);
            let (g, h) = (grad_out.plane(n, c), xh.plane(n, c));
            for ((d, gv), hv) in dx.plane_mut(n, c).iter_mut().zip(g).zip(h) {
                *d = a * (m * gv - sg - hv * sgh);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// `r ← m·r + (1 − m)·batch` for both running statistics.
pub fn update_running_stats(running_mean: &mut [f64], running_var: &mut [f64], cache: &BatchNormCache, momentum: f64) {
    for (r, b) in running_mean.iter_mut().zip(&cache.mean) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
    for (r, b) in running_var.iter_mut().zip(&cache.var) {
        *r = (momentum * *r + (1.0 - momentum) * b).max(0.0);
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward_inplace(output: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `y = x·Wᵀ + b` for `x` of shape `rows × in`, `W` of shape `out × in`.
pub fn dense_forward(x: &[f64], rows: usize, weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let out_dim = bias.len();
    if out_dim == 0 || weight.len() % out_dim != 0 {
        return Err(Error::Shape("dense weight does not match its bias".into()));
    }
    let in_dim = weight.len() / out_dim;
    if x.len() != rows * in_dim {
        return Err(Error::Shape(format!(
            "dense input has {} values, expected {rows}×{in_dim}",
            x.len()
        )));
    }
    let mut y = Vec::with_capacity(rows * out_dim);
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let wr = &weight[o * in_dim..(o + 1) * in_dim];
            y.push(bias[o] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Ok(y)
}

/// Gradients of [`dense_forward`]: `(dx, dweight, dbias)`.
pub fn dense_backward(x: &[f64], rows: usize, weight: &[f64], out_dim: usize, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let in_dim = weight.len() / out_dim;
    if grad_out.len() != rows * out_dim || x.len() != rows * in_dim {
        return Err(Error::Shape("dense gradient does not match the layer".into()));
    }
    let mut dx = vec![0.0; rows * in_dim];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let g = grad_out[r * out_dim + o];
            db[o] += g;
            let wr = &weight[o * in_dim..(o + 1) * in_dim];
            let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    Ok((dx, dw, db))
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 − rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Row-wise numerically stable softmax over `rows × classes` logits.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn check_distributions(rows: &[f64], classes: usize, what: &str) -> Result<()> {
    for (i, row) in rows.chunks(classes).enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::Contract(format!("{what} row {i} is not a distribution (sum {s})")));
        }
    }
    Ok(())
}

/// Mean over rows of `−Σ_j y_j·log(max(p_j, 1e-12))`.
pub fn cross_entropy_soft(probs: &[f64], targets: &[f64], classes: usize) -> Result<f64> {
    if classes == 0 || probs.len() != targets.len() || probs.len() % classes != 0 || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets over {classes} classes",
            probs.len(),
            targets.len()
        )));
    }
    check_distributions(probs, classes, "prediction")?;
    check_distributions(targets, classes, "target")?;
    let rows = probs.len() / classes;
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(p, y)| if *y == 0.0 { 0.0 } else { -y * p.max(PROB_FLOOR).ln() })
        .sum();
    Ok(total / rows as f64)
}

/// Gradient of the mean soft cross-entropy with respect to the logits: `(p − y) / N`.
pub fn softmax_cross_entropy_grad(probs: &[f64], targets: &[f64], classes: usize) -> Vec<f64> {
    let rows = (probs.len() / classes) as f64;
    probs.iter().zip(targets).map(|(p, y)| (p - y) / rows).collect()
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(values: &[f64], classes: usize) -> Vec<usize> {
    values
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, c: usize, t: usize, f: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * c * t * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::new(n, c, t, f, data).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Naive convolution straight from the definition.
    fn conv_reference(x: &Tensor4, w: &[f64], b: &[f64], c_out: usize, k: usize) -> Tensor4 {
        let p = (k / 2) as isize;
        let mut y = Tensor4::zeros(x.n, c_out, x.t, x.f);
        for n in 0..x.n {
            for co in 0..c_out {
                for t in 0..x.t {
                    for f in 0..x.f {
                        let mut s = b[co];
                        for ci in 0..x.c {
                            for dt in 0..k {
                                for df in 0..k {
                                    let st = t as isize + dt as isize - p;
                                    let sf = f as isize + df as isize - p;
                                    if st >= 0 && sf >= 0 && (st as usize) < x.t && (sf as usize) < x.f {
                                        s += w[((co * x.c + ci) * k + dt) * k + df]
                                            * x.plane(n, ci)[st as usize * x.f + sf as usize];
                                    }
                                }
                            }
                        }
                        y.plane_mut(n, co)[t * x.f + f] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn identity_kernel_copies_channel() {
        let x = random_batch(1, 1, 5, 4, 1).sample_map(0);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let y = conv2d_map(&x, &w, &[0.0], 1, 3).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant_map() {
        let x = FeatureMap::from_fn(1, 5, 5, |_, _, _| 1.5);
        let y = conv2d_map(&x, &[1.0; 9], &[0.0], 1, 3).unwrap();
        for t in 1..4 {
            for f in 1..4 {
                assert_eq!(y.get(0, t, f), 13.5);
            }
        }
        assert_eq!(y.get(0, 0, 0), 6.0);
    }

    #[test]
    fn bias_only_kernel() {
        let x = random_batch(1, 2, 4, 3, 2).sample_map(0);
        let y = conv2d_map(&x, &[0.0; 18], &[0.7], 1, 3).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.7));
        assert_eq!(y.shape(), (1, 4, 3));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = random_batch(1, 2, 4, 3, 2);
        assert!(matches!(conv2d_forward(&x, &[0.0; 9], &[0.0], 1, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_reference() {
        let x = random_batch(2, 3, 5, 4, 3);
        let w: Vec<f64> = random_batch(1, 1, 1, 4 * 3 * 9, 4).data;
        let b = vec![0.1, -0.2, 0.3, 0.0];
        let y = conv2d_forward(&x, &w, &b, 4, 3).unwrap();
        let r = conv_reference(&x, &w, &b, 4, 3);
        for (a, e) in y.data.iter().zip(&r.data) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random_batch(2, 2, 4, 3, 5);
        let w: Vec<f64> = random_batch(1, 1, 1, 3 * 2 * 9, 6).data;
        let b = vec![0.1, 0.2, 0.3];
        let g = random_batch(2, 3, 4, 3, 7);
        let loss = |x: &Tensor4, w: &[f64], b: &[f64]| -> f64 {
            let y = conv2d_forward(x, w, b, 3, 3).unwrap();
            y.data.iter().zip(&g.data).map(|(a, c)| a * c).sum()
        };
        let (dx, dw, db) = conv2d_backward(&x, &w, 3, 3, &g).unwrap();
        let h = 1e-5;
        for i in (0..w.len()).step_by(5) {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
            assert!(rel_err(fd, dw[i]) < 1e-6, "w[{i}]");
        }
        for i in 0..3 {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += h;
            bm[i] -= h;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            assert!(rel_err(fd, db[i]) < 1e-6);
        }
        for i in (0..x.data.len()).step_by(3) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[i] += h;
            xm.data[i] -= h;
            let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
            assert!(rel_err(fd, dx.data[i]) < 1e-6, "x[{i}]");
        }
    }

    #[test]
    fn batchnorm_normalizes_per_channel() {
        let x = random_batch(4, 3, 5, 2, 8);
        let (y, _) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_zero_gamma_gives_beta() {
        let x = random_batch(3, 2, 3, 3, 9);
        let (y, _) = batchnorm_train(&x, &[0.0; 2], &[5.0; 2], 1e-5).unwrap();
        assert!(y.data.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batchnorm_rejects_single_sample() {
        let x = random_batch(1, 2, 3, 3, 9);
        assert!(matches!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2], 1e-5), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let x = random_batch(2, 4, 3, 2, 10);
        let gamma = vec![0.5, 1.5, -1.0, 2.0];
        let beta = vec![0.1, 0.0, -0.3, 0.2];
        let g = random_batch(2, 4, 3, 2, 11);
        let loss = |x: &Tensor4, gm: &[f64], bt: &[f64]| -> f64 {
            let (y, _) = batchnorm_train(x, gm, bt, 1e-5).unwrap();
            y.data.iter().zip(&g.data).map(|(a, c)| a * c).sum()
        };
        let (_, cache) = batchnorm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let (dx, dg, db) = batchnorm_backward(&cache, &gamma, &g).unwrap();
        let h = 1e-5;
        for i in 0..x.data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[i] += h;
            xm.data[i] -= h;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
            assert!(rel_err(fd, dx.data[i]) < 1e-4, "x[{i}]: {fd} vs {}", dx.data[i]);
        }
        for c in 0..4 {
            let (mut gp, mut gm) = (gamma.clone(), gamma.clone());
            gp[c] += h;
            gm[c] -= h;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!(rel_err(fd, dg[c]) < 1e-4);
            let (mut bp, mut bm) = (beta.clone(), beta.clone());
            bp[c] += h;
            bm[c] -= h;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!(rel_err(fd, db[c]) < 1e-4);
        }
    }

    #[test]
    fn eval_batchnorm_uses_running_stats() {
        let x = random_batch(1, 2, 2, 2, 12);
        let y = batchnorm_eval(&x, &[2.0, 1.0], &[0.5, 0.0], &[0.0, 1.0], &[1.0, 4.0], 0.0).unwrap();
        for (i, (&a, &b)) in y.plane(0, 0).iter().zip(x.plane(0, 0)).enumerate() {
            assert!((a - (2.0 * b + 0.5)).abs() < 1e-15, "{i}");
        }
        for (&a, &b) in y.plane(0, 1).iter().zip(x.plane(0, 1)) {
            assert!((a - (b - 1.0) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let cache = BatchNormCache {
            x_hat: Tensor4::zeros(2, 1, 1, 1),
            inv_std: vec![1.0],
            mean: vec![2.0],
            var: vec![3.0],
        };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        update_running_stats(&mut m, &mut v, &cache, 0.9);
        assert!((m[0] - 0.2).abs() < 1e-15);
        assert!((v[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let x = random_batch(1, 1, 3, 4, 13).data;
        let w = random_batch(1, 1, 2, 4, 14).data;
        let b = vec![0.3, -0.1];
        let g = vec![0.5, -1.0, 2.0, 0.1, 0.0, 1.0];
        let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            dense_forward(x, 3, w, b).unwrap().iter().zip(&g).map(|(a, c)| a * c).sum()
        };
        let (dx, dw, db) = dense_backward(&x, 3, &w, 2, &g).unwrap();
        let h = 1e-6;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            assert!(rel_err((loss(&x, &p, &b) - loss(&x, &m, &b)) / (2.0 * h), dw[i]) < 1e-7);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!(rel_err((loss(&p, &w, &b) - loss(&m, &w, &b)) / (2.0 * h), dx[i]) < 1e-7);
        }
        assert_eq!(db, vec![0.5 + 2.0 + 0.0, -1.0 + 0.1 + 1.0]);
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mask = dropout_mask(100_000, 0.5, &mut rng);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
        assert!(dropout_mask(10, 0.0, &mut rng).iter().all(|&m| m == 1.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, 1001.0, -5.0, 0.0, 0.0, 0.0], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((p[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_prediction_loss_is_ln_classes() {
        let p = vec![1.0 / 50.0; 50];
        let mut y = vec![0.0; 50];
        y[7] = 1.0;
        let l = cross_entropy_soft(&p, &y, 50).unwrap();
        assert!((l - 50f64.ln()).abs() < 1e-12);
        assert!((l - 3.912).abs() < 1e-3);
    }

    #[test]
    fn perfect_prediction_loss_is_zero() {
        let y = vec![0.0, 1.0, 0.0];
        assert!(cross_entropy_soft(&y, &y, 3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn soft_target_is_mean_of_hard_losses() {
        let p = softmax(&[0.3, -1.2, 2.0, 0.5], 4);
        let ea = [0.0, 1.0, 0.0, 0.0];
        let eb = [0.0, 0.0, 0.0, 1.0];
        let soft: Vec<f64> = ea.iter().zip(&eb).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let l = cross_entropy_soft(&p, &soft, 4).unwrap();
        let la = cross_entropy_soft(&p, &ea, 4).unwrap();
        let lb = cross_entropy_soft(&p, &eb, 4).unwrap();
        assert!((l - 0.5 * (la + lb)).abs() < 1e-12);
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(matches!(cross_entropy_soft(&[0.5, 0.6], &[1.0, 0.0], 2), Err(Error::Contract(_))));
        assert!(matches!(cross_entropy_soft(&[0.5, 0.5], &[0.7, 0.0], 2), Err(Error::Contract(_))));
        assert!(matches!(cross_entropy_soft(&[0.5, 0.5], &[1.0], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let z = vec![0.2, -0.4, 1.1, 0.0, 0.3, -0.9];
        let y = vec![0.1, 0.9, 0.0, 0.0, 0.0, 1.0];
        let loss = |z: &[f64]| cross_entropy_soft(&softmax(z, 3), &y, 3).unwrap();
        let g = softmax_cross_entropy_grad(&softmax(&z, 3), &y, 3);
        let h = 1e-6;
        for i in 0..z.len() {
            let (mut p, mut m) = (z.clone(), z.clone());
            p[i] += h;
            m[i] -= h;
            assert!(rel_err((loss(&p) - loss(&m)) / (2.0 * h), g[i]) < 1e-7);
        }
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax_rows(&[1.0, 3.0, 3.0, 0.0, 0.0, 0.0], 3), vec![1, 0]);
    }
}
