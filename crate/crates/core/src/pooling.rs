//! Global temporal pooling operators and the in-backbone average pooling.
//!
//! Every global operator maps a `C × T × F` feature map to a `C × F` matrix
//! by reducing the time axis independently for each `(c, f)` slice:
//!
//! * **GAP**: the temporal mean.
//! * **SSRP-B** (window `W`): the largest mean over all length-`W` windows,
//!   stride 1. The winning window start is kept for the backward pass.
//! * **SSRP-T** (top `K`): the mean of the `K` largest single-frame
//!   activations. The selected frame indices are kept for the backward pass.
//! * **Max**: the temporal maximum (SSRP-T with `K = 1`).
//!
//! Ties always resolve to the smallest time index. Window and top-K sums are
//! accumulated in ascending time order and divided by the count, so the
//! degenerate settings (`W = T`, `K = T`, `W = 1`, `K = 1`) reproduce GAP and
//! the temporal max bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ChannelFreqMatrix, FeatureMap};

/// Global pooling applied after the last convolution block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolingSpec {
    Gap,
    SsrpB { window: usize },
    SsrpT { top_k: usize },
    Max,
}

impl PoolingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PoolingSpec::SsrpB { window: 0 } => {
                Err(Error::InvalidParameter("SSRP-B window must be at least 1".into()))
            }
            PoolingSpec::SsrpT { top_k: 0 } => Err(Error::InvalidParameter("SSRP-T K must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Checks the spec against the time length it will see.
    pub fn validate_for_time(&self, time: usize) -> Result<()> {
        self.validate()?;
        match *self {
            PoolingSpec::SsrpB { window } if window > time => Err(Error::WindowTooLarge { window, time }),
            PoolingSpec::SsrpT { top_k } if top_k > time => Err(Error::TopKTooLarge { k: top_k, time }),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PoolingSpec::Gap => "GAP".into(),
            PoolingSpec::SsrpB { .. } => "SSRP-B".into(),
            PoolingSpec::SsrpT { .. } => "SSRP-T".into(),
            PoolingSpec::Max => "Max".into(),
        }
    }

    pub fn hyper_label(&self) -> String {
        match self {
            PoolingSpec::SsrpB { window } => format!("W={window}"),
            PoolingSpec::SsrpT { top_k } => format!("K={top_k}"),
            _ => "-".into(),
        }
    }
}

impl std::fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolingSpec::SsrpB { .. } | PoolingSpec::SsrpT { .. } => {
                write!(f, "{}({})", self.label(), self.hyper_label())
            }
            _ => f.write_str(&self.label()),
        }
    }
}

/// What the forward pass selected, per `(c, f)` slice in `c`-major order.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Every frame contributes equally (GAP).
    All,
    /// Start index of the winning window.
    WindowStarts { window: usize, starts: Vec<usize> },
    /// `k` selected frame indices per slice, ascending within the slice.
    TopK { k: usize, indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledOutput {
    pub values: ChannelFreqMatrix,
    pub selection: Selection,
    /// `(C, T, F)` of the pooled input.
    pub input_shape: (usize, usize, usize),
}

impl PooledOutput {
    pub fn window_start(&self, c: usize, f: usize) -> Option<usize> {
        match &self.selection {
            Selection::WindowStarts { starts, .. } => Some(starts[c * self.values.freq + f]),
            _ => None,
        }
    }

    pub fn top_k_indices(&self, c: usize, f: usize) -> Option<&[usize]> {
        match &self.selection {
            Selection::TopK { k, indices } => {
                let s = (c * self.values.freq + f) * k;
                Some(&indices[s..s + k])
            }
            _ => None,
        }
    }
}

fn check_grad_shape(x: &FeatureMap, out: &PooledOutput, grad_out: &ChannelFreqMatrix) -> Result<()> {
    if out.input_shape != x.shape() {
        return Err(Error::Shape(format!(
            "pooled output came from a {:?} map, got {:?}",
            out.input_shape,
            x.shape()
        )));
    }
    if grad_out.channels != x.channels() || grad_out.freq != x.freq() || grad_out.data.len() != x.channels() * x.freq() {
        return Err(Error::Shape(format!(
            "gradient is {}×{}, expected {}×{}",
            grad_out.channels,
            grad_out.freq,
            x.channels(),
            x.freq()
        )));
    }
    Ok(())
}

/// SSRP-B: max over window starts of the length-`window` temporal mean.
pub fn ssrp_b_forward(x: &FeatureMap, window: usize) -> Result<PooledOutput> {
    let (c_n, t_n, f_n) = x.shape();
    if window < 1 {
        return Err(Error::InvalidParameter("SSRP-B window must be at least 1".into()));
    }
    if window > t_n {
        return Err(Error::WindowTooLarge { window, time: t_n });
    }
    let mut values = ChannelFreqMatrix::zeros(c_n, f_n);
    let mut starts = Vec::with_capacity(c_n * f_n);
    let w = window as f64;
    for c in 0..c_n {
        for f in 0..f_n {
            let mut best = f64::NEG_INFINITY;
            let mut best_start = 0;
            for t0 in 0..=t_n - window {
                let mut sum = 0.0;
                for t in t0..t0 + window {
                    sum += x.get(c, t, f);
                }
                let mean = sum / w;
                if mean > best {
                    best = mean;
                    best_start = t0;
                }
            }
            values.set(c, f, best);
            starts.push(best_start);
        }
    }
    Ok(PooledOutput {
        values,
        selection: Selection::WindowStarts { window, starts },
        input_shape: x.shape(),
    })
}

/// Routes `grad_out(c, f) / W` to each frame of the selected window.
pub fn ssrp_b_backward(
    x: &FeatureMap,
    out: &PooledOutput,
    grad_out: &ChannelFreqMatrix,
    window: usize,
) -> Result<FeatureMap> {
    check_grad_shape(x, out, grad_out)?;
    let starts = match &out.selection {
        Selection::WindowStarts { window: w, starts } if *w == window => starts,
        _ => {
            return Err(Error::Contract(format!(
                "pooled output was not produced by SSRP-B with W = {window}"
            )))
        }
    };
    let (c_n, t_n, f_n) = x.shape();
    let mut grad = FeatureMap::zeros(c_n, t_n, f_n);
    let w = window as f64;
    for c in 0..c_n {
        for f in 0..f_n {
            let g = grad_out.get(c, f) / w;
            let t0 = starts[c * f_n + f];
            for t in t0..t0 + window {
                grad.set(c, t, f, g);
            }
        }
    }
    Ok(grad)
}

/// SSRP-T: mean of the `top_k` largest frames per slice.
pub fn ssrp_t_forward(x: &FeatureMap, top_k: usize) -> Result<PooledOutput> {
    let (c_n, t_n, f_n) = x.shape();
    if top_k < 1 {
        return Err(Error::InvalidParameter("SSRP-T K must be at least 1".into()));
    }
    if top_k > t_n {
        return Err(Error::TopKTooLarge { k: top_k, time: t_n });
    }
    let mut values = ChannelFreqMatrix::zeros(c_n, f_n);
    let mut indices = Vec::with_capacity(c_n * f_n * top_k);
    let mut order: Vec<usize> = Vec::with_capacity(t_n);
    let k = top_k as f64;
    for c in 0..c_n {
        for f in 0..f_n {
            order.clear();
            order.extend(0..t_n);
            let key = |t: &usize| x.get(c, *t, f);
            let by_rank = |a: &usize, b: &usize| key(b).total_cmp(&key(a)).then(a.cmp(b));
            if top_k < t_n {
                order.select_nth_unstable_by(top_k - 1, by_rank);
            }
            let chosen = &mut order[..top_k];
            chosen.sort_unstable();
            let sum: f64 = chosen.iter().map(|&t| x.get(c, t, f)).sum();
            values.set(c, f, sum / k);
            indices.extend_from_slice(chosen);
        }
    }
    Ok(PooledOutput {
        values,
        selection: Selection::TopK { k: top_k, indices },
        input_shape: x.shape(),
    })
}

/// Routes `grad_out(c, f) / K` to each selected frame.
pub fn ssrp_t_backward(
    x: &FeatureMap,
    out: &PooledOutput,
    grad_out: &ChannelFreqMatrix,
    top_k: usize,
) -> Result<FeatureMap> {
    check_grad_shape(x, out, grad_out)?;
    let indices = match &out.selection {
        Selection::TopK { k, indices } if *k == top_k => indices,
        _ => {
            return Err(Error::Contract(format!(
                "pooled output was not produced by SSRP-T with K = {top_k}"
            )))
        }
    };
    let (c_n, t_n, f_n) = x.shape();
    let mut grad = FeatureMap::zeros(c_n, t_n, f_n);
    let k = top_k as f64;
    for c in 0..c_n {
        for f in 0..f_n {
            let g = grad_out.get(c, f) / k;
            let s = (c * f_n + f) * top_k;
            for &t in &indices[s..s + top_k] {
                grad.set(c, t, f, g);
            }
        }
    }
    Ok(grad)
}

/// Temporal mean per `(c, f)`.
pub fn gap_forward(x: &FeatureMap) -> ChannelFreqMatrix {
    let (c_n, t_n, f_n) = x.shape();
    let mut out = ChannelFreqMatrix::zeros(c_n, f_n);
    for c in 0..c_n {
        for f in 0..f_n {
            let mut sum = 0.0;
            for t in 0..t_n {
                sum += x.get(c, t, f);
            }
            out.set(c, f, sum / t_n as f64);
        }
    }
    out
}

pub fn gap_backward(x: &FeatureMap, grad_out: &ChannelFreqMatrix) -> Result<FeatureMap> {
    let (c_n, t_n, f_n) = x.shape();
    if grad_out.channels != c_n || grad_out.freq != f_n {
        return Err(Error::Shape(format!(
            "gradient is {}×{}, expected {c_n}×{f_n}",
            grad_out.channels, grad_out.freq
        )));
    }
    Ok(FeatureMap::from_fn(c_n, t_n, f_n, |c, _, f| grad_out.get(c, f) / t_n as f64))
}

/// Dispatches the forward pass of any global pooling spec.
pub fn global_pool_forward(spec: &PoolingSpec, x: &FeatureMap) -> Result<PooledOutput> {
    match *spec {
        PoolingSpec::Gap => Ok(PooledOutput {
            values: gap_forward(x),
            selection: Selection::All,
            input_shape: x.shape(),
        }),
        PoolingSpec::SsrpB { window } => ssrp_b_forward(x, window),
        PoolingSpec::SsrpT { top_k } => ssrp_t_forward(x, top_k),
        PoolingSpec::Max => ssrp_t_forward(x, 1),
    }
}

pub fn global_pool_backward(
    spec: &PoolingSpec,
    x: &FeatureMap,
    out: &PooledOutput,
    grad_out: &ChannelFreqMatrix,
) -> Result<FeatureMap> {
    match *spec {
        PoolingSpec::Gap => {
            check_grad_shape(x, out, grad_out)?;
            gap_backward(x, grad_out)
        }
        PoolingSpec::SsrpB { window } => ssrp_b_backward(x, out, grad_out, window),
        PoolingSpec::SsrpT { top_k } => ssrp_t_backward(x, out, grad_out, top_k),
        PoolingSpec::Max => ssrp_t_backward(x, out, grad_out, 1),
    }
}

/// Pool factor along one axis: 2 when the axis can be halved, else 1.
pub fn pool_factor(len: usize) -> usize {
    if len >= 2 {
        2
    } else {
        1
    }
}

/// Non-overlapping mean pooling with window `pt × pf`; trailing remainder dropped.
pub fn avg_pool(x: &FeatureMap, pt: usize, pf: usize) -> Result<FeatureMap> {
    let (c_n, t_n, f_n) = x.shape();
    if pt == 0 || pf == 0 || t_n < pt || f_n < pf {
        return Err(Error::Shape(format!(
            "cannot {pt}×{pf}-pool a {c_n}×{t_n}×{f_n} map"
        )));
    }
    let (to, fo) = (t_n / pt, f_n / pf);
    let area = (pt * pf) as f64;
    Ok(FeatureMap::from_fn(c_n, to, fo, |c, t, f| {
        let mut sum = 0.0;
        for dt in 0..pt {
            for df in 0..pf {
                sum += x.get(c, t * pt + dt, f * pf + df);
            }
        }
        sum / area
    }))
}

/// Spreads each output gradient uniformly over its pooling block.
pub fn avg_pool_backward(input_shape: (usize, usize, usize), pt: usize, pf: usize, grad_out: &FeatureMap) -> Result<FeatureMap> {
    let (c_n, t_n, f_n) = input_shape;
    if grad_out.shape() != (c_n, t_n / pt, f_n / pf) {
        return Err(Error::Shape(format!(
            "pool gradient is {:?}, expected {:?}",
            grad_out.shape(),
            (c_n, t_n / pt, f_n / pf)
        )));
    }
    let area = (pt * pf) as f64;
    let mut grad = FeatureMap::zeros(c_n, t_n, f_n);
    for c in 0..c_n {
        for t in 0..t_n / pt {
            for f in 0..f_n / pf {
                let g = grad_out.get(c, t, f) / area;
                for dt in 0..pt {
                    for df in 0..pf {
                        grad.set(c, t * pt + dt, f * pf + df, g);
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// 2×2 non-overlapping average pooling; odd trailing row/column dropped.
pub fn avg_pool_2x2(x: &FeatureMap) -> Result<FeatureMap> {
    avg_pool(x, 2, 2)
}

pub fn avg_pool_2x2_backward(input_shape: (usize, usize, usize), grad_out: &FeatureMap) -> Result<FeatureMap> {
    avg_pool_backward(input_shape, 2, 2, grad_out)
}
