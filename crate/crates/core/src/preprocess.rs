// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature conditioning.
//!
//! Clustering and unary features go through signed root, l2 normalization
//! and PCA. Pairwise features only get a per-dimension 0-1 rescale of the
//! raw values.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::FeatureStream;

pub const PCA_MAGIC: &[u8; 4] = b"PCAM";
pub const PCA_VERSION: u32 = 1;

/// Relative slack when comparing cumulative variance against the target fraction.
const VARIANCE_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub alpha: f64,
    pub variance_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            variance_fraction: 0.95,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.variance_fraction > 0.0 && self.variance_fraction <= 1.0) {
            return Err(Error::config(format!(
                "variance fraction must be in (0, 1], got {}",
                self.variance_fraction
            )));
        }
        Ok(())
    }
}

/// `sign(x)|x|^alpha` per element, then scaled to unit l2 norm.
/// The zero vector maps to itself.
pub fn signed_root_l2(v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::validation("empty vector"));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::config(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if let Some(col) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Data {
            row: 0,
            col,
            message: format!("non-finite value {}", v[col]),
        });
    }
    let mut out: Vec<f64> = v
        .iter()
        .map(|&x| x.signum() * x.abs().powf(alpha))
        .collect();
    // signum(0.0) is 1.0, but 0^alpha is 0 so zeros stay zero.
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

pub fn signed_root_l2_stream(x: &FeatureStream, alpha: f64) -> Result<FeatureStream> {
    let mut data = Vec::with_capacity(x.as_flat().len());
    for row in x.rows() {
        data.extend(signed_root_l2(row, alpha)?);
    }
    x.with_values(x.dim(), data)
}

/// Per-dimension affine map onto `[0, 1]`. Constant dimensions map to 0.
pub fn minmax_normalize(x: &FeatureStream) -> FeatureStream {
    let dim = x.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut data = Vec::with_capacity(x.as_flat().len());
    for row in x.rows() {
        data.extend(row.iter().enumerate().map(|(j, &v)| {
            let range = hi[j] - lo[j];
            if range > 0.0 {
                ((v - lo[j]) / range).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }));
    }
    x.with_values(dim, data)
        .expect("rescaled values of a valid stream are finite")
}

/// Principal component projection fitted on one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `in_dim x out_dim`, row-major; columns are orthonormal.
    components: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    explained_ratio: Vec<f64>,
    retained_variance: f64,
    degenerate: bool,
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Component `j` as a vector of length `in_dim`.
    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.in_dim)
            .map(|i| self.components[i * self.out_dim + j])
            .collect()
    }

    /// Explained-variance ratio of each retained component.
    pub fn explained_ratio(&self) -> &[f64] {
        &self.explained_ratio
    }

    pub fn retained_variance(&self) -> f64 {
        self.retained_variance
    }

    /// True when the fitting data had zero total variance.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.out_dim];
        for (i, (&x, &m)) in v.iter().zip(&self.mean).enumerate() {
            let c = x - m;
            let row = &self.components[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &g) in out.iter_mut().zip(row) {
                *o += c * g;
            }
        }
        Ok(out)
    }

    pub fn apply(&self, x: &FeatureStream) -> Result<FeatureStream> {
        if x.dim() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                found: x.dim(),
            });
        }
        let mut data = Vec::with_capacity(x.len() * self.out_dim);
        for row in x.rows() {
            data.extend(self.project(row)?);
        }
        x.with_values(self.out_dim, data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<pca writer>", e);
        w.write_all(PCA_MAGIC).map_err(io)?;
        w.write_all(&PCA_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.in_dim as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&(self.out_dim as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&[u8::from(self.degenerate)]).map_err(io)?;
        w.write_all(&self.retained_variance.to_le_bytes())
            .map_err(io)?;
        for v in self
            .mean
            .iter()
            .chain(&self.components)
            .chain(&self.explained_ratio)
        {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::format(None, format!("pca model: {what}"));
        let mut head = [0u8; 25];
        r.read_exact(&mut head)
            .map_err(|_| bad("truncated header"))?;
        if &head[0..4] != PCA_MAGIC {
            return Err(bad("bad magic, expected PCAM"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != PCA_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let in_dim = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let out_dim = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
        let degenerate = head[24] != 0;
        let mut rv = [0u8; 8];
        r.read_exact(&mut rv).map_err(|_| bad("truncated header"))?;
        let retained_variance = f64::from_le_bytes(rv);
        if in_dim == 0 || out_dim == 0 || out_dim > in_dim {
            return Err(bad(&format!("invalid shape {in_dim}x{out_dim}")));
        }
        let count = in_dim + in_dim * out_dim + out_dim;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| bad("truncated payload"))?;
        let mut values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mean: Vec<f64> = values.by_ref().take(in_dim).collect();
        let components: Vec<f64> = values.by_ref().take(in_dim * out_dim).collect();
        let explained_ratio: Vec<f64> = values.collect();
        Ok(Self {
            mean,
            components,
            in_dim,
            out_dim,
            explained_ratio,
            retained_variance,
            degenerate,
        })
    }
}

/// Fits the smallest PCA whose cumulative explained variance reaches
/// `variance_fraction`. Each component is sign-fixed so its
/// largest-magnitude loading is positive.
pub fn fit_pca(x: &FeatureStream, variance_fraction: f64) -> Result<PcaModel> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::config(format!(
            "variance fraction must be in (0, 1], got {variance_fraction}"
        )));
    }
    let (t, d) = (x.len(), x.dim());
    if t < 2 {
        return Err(Error::validation("PCA needs at least two frames"));
    }
    let mut mean = vec![0.0; d];
    for row in x.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let centered = DMatrix::from_fn(t, d, |i, j| x.row(i)[j] - mean[j]);
    let scale = 1.0 / (t as f64 - 1.0);
    let total: f64 = centered.iter().map(|v| v * v).sum::<f64>() * scale;

    if total <= 0.0 {
        let mut components = vec![0.0; d];
        components[0] = 1.0;
        return Ok(PcaModel {
            mean,
            components,
            in_dim: d,
            out_dim: 1,
            explained_ratio: vec![0.0],
            retained_variance: 1.0,
            degenerate: true,
        });
    }

    // Eigen-decompose whichever of the covariance (d x d) or Gram (t x t)
    // matrix is smaller; both share the nonzero spectrum.
    let (eigenvalues, vectors) = if d <= t {
        let cov = centered.transpose() * &centered * scale;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let gram = &centered * centered.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        let vt = centered.transpose() * &eig.eigenvectors;
        (eig.eigenvalues, vt)
    };

    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));

    let floor = total * 1e-12;
    let target = variance_fraction * total * (1.0 - VARIANCE_SLACK);
    let mut kept = Vec::new();
    let mut cumulative = 0.0;
    for &idx in &order {
        let lambda = eigenvalues[idx];
        if lambda <= floor {
            break;
        }
        kept.push(idx);
        cumulative += lambda;
        if cumulative >= target {
            break;
        }
    }
    if kept.is_empty() {
        kept.push(order[0]);
        cumulative = eigenvalues[order[0]].max(0.0);
    }

    let out_dim = kept.len();
    let mut components = vec![0.0; d * out_dim];
    for (j, &idx) in kept.iter().enumerate() {
        let mut col: Vec<f64> = vectors.column(idx).iter().copied().collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        col.iter_mut().for_each(|v| *v /= norm);
        let pivot =
            col.iter().enumerate().fold(
                0,
                |best, (i, v)| if v.abs() > col[best].abs() { i } else { best },
            );
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, v) in col.into_iter().enumerate() {
            components[i * out_dim + j] = v;
        }
    }

    let explained_ratio = kept.iter().map(|&idx| eigenvalues[idx] / total).collect();
    Ok(PcaModel {
        mean,
        components,
        in_dim: d,
        out_dim,
        explained_ratio,
        retained_variance: (cumulative / total).min(1.0),
        degenerate: false,
    })
}

/// The two feature views used by the segmenters.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Signed root, l2, PCA.
    pub unary: FeatureStream,
    /// Raw values rescaled to `[0, 1]`.
    pub pairwise: FeatureStream,
    pub pca: Option<PcaModel>,
}

/// Runs both conditioning chains on a raw stream. Single-frame streams skip PCA.
pub fn prepare(raw: &FeatureStream, cfg: &PreprocessConfig) -> Result<Prepared> {
    cfg.validate()?;
    let rooted = signed_root_l2_stream(raw, cfg.alpha)?;
    let (unary, pca) = if raw.len() >= 2 {
        let model = fit_pca(&rooted, cfg.variance_fraction)?;
        (model.apply(&rooted)?, Some(model))
    } else {
        (rooted, None)
    };
    Ok(Prepared {
        unary,
        pairwise: minmax_normalize(raw),
        pca,
    })
}
