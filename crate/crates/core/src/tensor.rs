//! Activation containers shared by the pooling operators and the network.

use crate::error::{Error, Result};

/// A `channels × time × freq` activation tensor, row-major with frequency
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    time: usize,
    freq: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, time: usize, freq: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || time == 0 || freq == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {channels}×{time}×{freq}"
            )));
        }
        if data.len() != channels * time * freq {
            return Err(Error::Shape(format!(
                "{} values for a {channels}×{time}×{freq} feature map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature map has non-finite entries".into()));
        }
        Ok(Self {
            channels,
            time,
            freq,
            data,
        })
    }

    pub fn zeros(channels: usize, time: usize, freq: usize) -> Self {
        Self {
            channels,
            time,
            freq,
            data: vec![0.0; channels * time * freq],
        }
    }

    pub fn from_fn(channels: usize, time: usize, freq: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * time * freq);
        for c in 0..channels {
            for t in 0..time {
                for q in 0..freq {
                    data.push(f(c, t, q));
                }
            }
        }
        Self {
            channels,
            time,
            freq,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn freq(&self) -> usize {
        self.freq
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.time, self.freq)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, f: usize) -> usize {
        (c * self.time + t) * self.freq + f
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, f: usize) -> f64 {
        self.data[self.index(c, t, f)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, f: usize, v: f64) {
        let i = self.index(c, t, f);
        self.data[i] = v;
    }

    /// The temporal series at `(c, f)`.
    pub fn series(&self, c: usize, f: usize) -> Vec<f64> {
        (0..self.time).map(|t| self.get(c, t, f)).collect()
    }

    /// Adds `delta` to every entry.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v += delta);
        out
    }
}

/// A `channels × freq` matrix produced by global temporal pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFreqMatrix {
    pub channels: usize,
    pub freq: usize,
    pub data: Vec<f64>,
}

impl ChannelFreqMatrix {
    pub fn zeros(channels: usize, freq: usize) -> Self {
        Self {
            channels,
            freq,
            data: vec![0.0; channels * freq],
        }
    }

    pub fn new(channels: usize, freq: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * freq {
            return Err(Error::Shape(format!(
                "{} values for a {channels}×{freq} pooled matrix",
                data.len()
            )));
        }
        Ok(Self { channels, freq, data })
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize) -> f64 {
        self.data[c * self.freq + f]
    }

    #[inline]
    pub fn set(&mut self, c: usize, f: usize, v: f64) {
        self.data[c * self.freq + f] = v;
    }
}

/// A batch of feature maps: `batch × channels × time × freq`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub f: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, t: usize, f: usize) -> Self {
        Self {
            n,
            c,
            t,
            f,
            data: vec![0.0; n * c * t * f],
        }
    }

    pub fn new(n: usize, c: usize, t: usize, f: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * t * f {
            return Err(Error::Shape(format!(
                "{} values for a {n}×{c}×{t}×{f} batch",
                data.len()
            )));
        }
        Ok(Self { n, c, t, f, data })
    }

    /// Stacks equally shaped maps.
    pub fn from_maps(maps: &[FeatureMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("cannot batch zero feature maps".into()))?;
        let (c, t, f) = first.shape();
        let mut data = Vec::with_capacity(maps.len() * c * t * f);
        for (i, m) in maps.iter().enumerate() {
            if m.shape() != (c, t, f) {
                return Err(Error::Shape(format!(
                    "map {i} is {:?}, expected {:?}",
                    m.shape(),
                    (c, t, f)
                )));
            }
            data.extend_from_slice(m.as_slice());
        }
        Ok(Self {
            n: maps.len(),
            c,
            t,
            f,
            data,
        })
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.t * self.f
    }

    pub fn plane_len(&self) -> usize {
        self.t * self.f
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn sample_map(&self, i: usize) -> FeatureMap {
        FeatureMap {
            channels: self.c,
            time: self.t,
            freq: self.f,
            data: self.sample(i).to_vec(),
        }
    }

    /// `(n, c)` plane as a `t × f` slice.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let s = (n * self.c + c) * p;
        &self.data[s..s + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let s = (n * self.c + c) * p;
        &mut self.data[s..s + p]
    }

    /// Gathers the given samples into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            n: indices.len(),
            c: self.c,
            t: self.t,
            f: self.f,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.t, self.f)
    }
}
