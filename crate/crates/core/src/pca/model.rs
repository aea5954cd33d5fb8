use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigendecomposition;
use super::matrix::Matrix;
use super::standardize::Standardizer;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

const PCAM_MAGIC: &[u8; 4] = b"PCAM";
/// Eigenvalues above `-NEGATIVE_EIGEN_TOLERANCE` are clamped to zero.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-10;

/// Sample covariance `XᵀX / (n − 1)`. Columns are mean-centered first unless
/// `centered` says they already are.
pub fn covariance(data: &Matrix, centered: bool) -> Result<Matrix> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples { got: n, required: 2 });
    }
    let x = if centered { data.clone() } else { center_columns(data) };
    let mut sigma = x.gram_columns();
    sigma.scale(1.0 / (n - 1) as f64);
    Ok(sigma)
}

pub fn center_columns(data: &Matrix) -> Matrix {
    let (n, d) = data.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = data.clone();
    for r in 0..n {
        for (x, m) in out.row_mut(r).iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    out
}

/// Smallest `k` whose cumulative share of `eigenvalues` reaches `threshold`.
pub fn select_k_by_variance(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "variance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if eigenvalues.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::Contract("eigenvalues must be finite and non-negative".into()));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Contract("eigenvalues must be sorted in descending order".into()));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let mut cum = 0.0;
    for (i, &l) in eigenvalues.iter().enumerate() {
        cum += l;
        if cum / total >= threshold {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Cumulative explained-variance curve as `(component_index, cumulative_ratio)`,
/// 1-based, ending at exactly 1.0.
pub fn variance_curve(eigenvalues: &[f64]) -> Result<Vec<(usize, f64)>> {
    if eigenvalues.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::Contract("eigenvalues must be finite and non-negative".into()));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let mut cum = 0.0;
    Ok(eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            cum += l;
            (i + 1, cum / total)
        })
        .collect())
}

/// Writes the cumulative explained-variance curve as CSV.
pub fn emit_variance_curve(eigenvalues: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let curve = variance_curve(eigenvalues)?;
    let mut out = String::from("component_index,cumulative_explained_variance\n");
    for (i, c) in curve {
        out.push_str(&format!("{i},{c}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Lays a projected vector out as a single-channel `k × 1` map
/// (time axis = component index, frequency axis = 1).
pub fn reshape_for_cnn(z: &[f64]) -> Result<FeatureMap> {
    if z.is_empty() {
        return Err(Error::InvalidParameter("cannot reshape an empty projection".into()));
    }
    FeatureMap::new(1, z.len(), 1, z.to_vec())
}

/// Which eigenproblem to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenRoute {
    /// Gram when `n < d`, direct otherwise.
    #[default]
    Auto,
    /// Eigendecompose the `d × d` covariance.
    Direct,
    /// Eigendecompose the `n × n` matrix `XXᵀ/(n−1)` and map back with `Xᵀu`.
    Gram,
}

/// Full spectrum of centered data: all eigenvalues (descending, clamped at
/// zero) and the feature-space eigenvectors that could be recovered, as the
/// columns of a `d × m` matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub vectors: Matrix,
    pub total_variance: f64,
}

fn clamp_eigenvalues(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&l| {
            if l < -NEGATIVE_EIGEN_TOLERANCE * values[0].abs().max(1.0) {
                Err(Error::Contract(format!("covariance has negative eigenvalue {l}")))
            } else {
                Ok(l.max(0.0))
            }
        })
        .collect()
}

fn fix_sign(v: &mut [f64]) {
    let pivot = v.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigenpairs of the covariance of already-centered data.
pub fn spectrum(centered: &Matrix, route: EigenRoute) -> Result<Spectrum> {
    let (n, d) = centered.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples { got: n, required: 2 });
    }
    let use_gram = match route {
        EigenRoute::Auto => n < d,
        EigenRoute::Direct => false,
        EigenRoute::Gram => true,
    };
    if !use_gram {
        let sigma = covariance(centered, true)?;
        let total_variance = sigma.trace();
        let eig = symmetric_eigendecomposition(&sigma)?;
        return Ok(Spectrum {
            eigenvalues: clamp_eigenvalues(&eig.values)?,
            vectors: eig.vectors,
            total_variance,
        });
    }

    let mut gram = centered.gram_rows();
    gram.scale(1.0 / (n - 1) as f64);
    let total_variance = gram.trace();
    let eig = symmetric_eigendecomposition(&gram)?;
    let eigenvalues = clamp_eigenvalues(&eig.values)?;
    let cutoff = eigenvalues[0] * 1e-12;
    let mappable = eigenvalues.iter().take_while(|&&l| l > cutoff && l > 0.0).count();

    let mut vectors = Matrix::zeros(d, mappable);
    for i in 0..mappable {
        let u = eig.vector(i);
        let mut w = vec![0.0; d];
        for (r, &ur) in u.iter().enumerate() {
            for (wj, x) in w.iter_mut().zip(centered.row(r)) {
                *wj += ur * x;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|x| *x /= norm);
        fix_sign(&mut w);
        for (j, x) in w.into_iter().enumerate() {
            vectors[(j, i)] = x;
        }
    }
    Ok(Spectrum {
        eigenvalues,
        vectors,
        total_variance,
    })
}

/// Standardization statistics plus the top-`k` principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub standardizer: Standardizer,
    /// `d × k`, orthonormal columns.
    pub projection: Matrix,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub total_variance: f64,
    /// Every eigenvalue of the fitted covariance (descending); drives the variance curve.
    pub spectrum: Vec<f64>,
    pub threshold: f64,
}

impl PcaModel {
    /// Standardizes `data` and keeps enough components to explain `threshold`
    /// of the variance.
    pub fn fit(data: &Matrix, threshold: f64, route: EigenRoute) -> Result<Self> {
        let standardizer = Standardizer::fit(data)?;
        let x = standardizer.transform(data)?;
        Self::fit_standardized(standardizer, &x, threshold, route)
    }

    /// Fits on data already transformed by `standardizer`.
    pub fn fit_standardized(
        standardizer: Standardizer,
        x: &Matrix,
        threshold: f64,
        route: EigenRoute,
    ) -> Result<Self> {
        let spec = spectrum(&center_columns(x), route)?;
        let mut k = select_k_by_variance(&spec.eigenvalues, threshold)?;
        if k > spec.vectors.cols() {
            log::warn!(
                "variance threshold needs {k} components but only {} are recoverable; clamping",
                spec.vectors.cols()
            );
            k = spec.vectors.cols();
        }
        Self::from_spectrum(standardizer, spec, k, threshold)
    }

    /// Keeps exactly `k` components.
    pub fn fit_with_k(data: &Matrix, k: usize, route: EigenRoute) -> Result<Self> {
        let standardizer = Standardizer::fit(data)?;
        let x = standardizer.transform(data)?;
        let spec = spectrum(&center_columns(&x), route)?;
        if k == 0 || k > spec.vectors.cols() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} outside 1..={}",
                spec.vectors.cols()
            )));
        }
        let covered = spec.eigenvalues[..k].iter().sum::<f64>() / spec.total_variance;
        Self::from_spectrum(standardizer, spec, k, covered)
    }

    fn from_spectrum(standardizer: Standardizer, spec: Spectrum, k: usize, threshold: f64) -> Result<Self> {
        let d = spec.vectors.rows();
        let mut projection = Matrix::zeros(d, k);
        for j in 0..d {
            projection.row_mut(j).copy_from_slice(&spec.vectors.row(j)[..k]);
        }
        let eigenvalues = spec.eigenvalues[..k].to_vec();
        let explained_variance_ratio = eigenvalues.iter().map(|l| l / spec.total_variance).collect();
        Ok(Self {
            standardizer,
            projection,
            eigenvalues,
            explained_variance_ratio,
            total_variance: spec.total_variance,
            spectrum: spec.eigenvalues,
            threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn k(&self) -> usize {
        self.projection.cols()
    }

    /// `Z = X·W` for standardized `X`.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "data has {} features, model expects {}",
                x.cols(),
                self.dim()
            )));
        }
        x.matmul(&self.projection)
    }

    /// Standardizes raw data with the fitted statistics, then projects.
    pub fn transform(&self, raw: &Matrix) -> Result<Matrix> {
        self.project(&self.standardizer.transform(raw)?)
    }

    /// `X̂ = Z·Wᵀ` in standardized space.
    pub fn reconstruct(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.k() {
            return Err(Error::Shape(format!(
                "projection has {} components, model has {}",
                z.cols(),
                self.k()
            )));
        }
        z.matmul(&self.projection.transpose())
    }

    pub fn summary(&self) -> PcaSummary {
        PcaSummary {
            d: self.dim(),
            k: self.k(),
            threshold: self.threshold,
            total_variance: self.total_variance,
            explained_variance_ratio: self.explained_variance_ratio.clone(),
            cumulative_explained_variance: self.explained_variance_ratio.iter().sum(),
            dimensionality_reduction: 1.0 - self.k() as f64 / self.dim() as f64,
            spectrum: self.spectrum.clone(),
        }
    }

    /// Flat binary form: `"PCAM"`, u32 d, u32 k, then f64 mean, std, W
    /// (row-major `d × k`) and λ, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(PCAM_MAGIC)?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.k() as u32).to_le_bytes())?;
        let all = self
            .standardizer
            .mean
            .iter()
            .chain(&self.standardizer.std)
            .chain(self.projection.as_slice())
            .chain(&self.eigenvalues);
        for v in all {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary form; `summary` supplies the bookkeeping the binary
    /// layout does not carry (total variance, threshold, spectrum).
    pub fn read_binary<R: Read>(mut r: R, summary: &PcaSummary) -> Result<Self> {
        let short = |e: std::io::Error| Error::Decode(format!("truncated PCAM file: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != PCAM_MAGIC {
            return Err(Error::Decode("bad PCAM magic".into()));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u).map_err(short)?;
        let d = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u).map_err(short)?;
        let k = u32::from_le_bytes(u) as usize;
        if summary.d != d || summary.k != k {
            return Err(Error::Validation(format!(
                "PCAM header says d={d}, k={k} but summary says d={}, k={}",
                summary.d, summary.k
            )));
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; count * 8];
            r.read_exact(&mut raw).map_err(short)?;
            Ok(raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect())
        };
        let mean = read_f64s(d)?;
        let std = read_f64s(d)?;
        let projection = Matrix::from_vec(d, k, read_f64s(d * k)?)?;
        let eigenvalues = read_f64s(k)?;
        let explained_variance_ratio = eigenvalues.iter().map(|l| l / summary.total_variance).collect();
        Ok(Self {
            standardizer: Standardizer { mean, std },
            projection,
            eigenvalues,
            explained_variance_ratio,
            total_variance: summary.total_variance,
            spectrum: summary.spectrum.clone(),
            threshold: summary.threshold,
        })
    }

    /// Writes `<stem>.pcam` and `<stem>.json`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let bin = stem.with_extension("pcam");
        let json = stem.with_extension("json");
        let mut buf = Vec::new();
        self.write_binary(&mut buf).map_err(|e| Error::io(&bin, e))?;
        std::fs::write(&bin, buf).map_err(|e| Error::io(&bin, e))?;
        let text = serde_json::to_string_pretty(&self.summary())
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let bin = stem.with_extension("pcam");
        let json = stem.with_extension("json");
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let summary: PcaSummary =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::read_binary(&bytes[..], &summary)
    }
}

/// JSON sidecar describing a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub d: usize,
    pub k: usize,
    pub threshold: f64,
    pub total_variance: f64,
    pub explained_variance_ratio: Vec<f64>,
    pub cumulative_explained_variance: f64,
    pub dimensionality_reduction: f64,
    #[serde(default)]
    pub spectrum: Vec<f64>,
}
