use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

pub const PCA_MAGIC: &[u8; 8] = b"PCAM0001";

/// Principal subspace of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// One orthonormal component per row.
    pub components: DMatrix<f64>,
    /// Variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Total variance of the training data (sum over features).
    pub total_variance: f64,
}

/// Fit the top-`q` principal components by SVD of the centred data.
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn pca_fit(x: &DMatrix<f64>, q: usize) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::Data("PCA needs at least 2 samples".into()));
    }
    if q < 1 || q > (n - 1).min(p) {
        return Err(Error::InvalidConfig(format!(
            "q = {q} outside 1..={}",
            (n - 1).min(p)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "PCA input contains non-finite entries".into(),
        ));
    }
    let mean = x.row_mean().transpose();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let total_ss = xc.norm_squared();
    if total_ss == 0.0 {
        return Err(Error::Numerical("PCA input has zero variance".into()));
    }
    let svd = SVD::new(xc, false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut components = DMatrix::zeros(q, p);
    let mut explained_variance = Vec::with_capacity(q);
    for (r, &src) in order.iter().take(q).enumerate() {
        let mut row = vt.row(src).into_owned();
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            row.neg_mut();
        }
        components.set_row(r, &row);
        let s = svd.singular_values[src];
        explained_variance.push(s * s / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance: total_ss / (n - 1) as f64,
    })
}

/// Project samples (rows of `x`) onto the model's components.
pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::Shape(format!(
            "expected {} features, got {}",
            model.mean.len(),
            x.ncols()
        )));
    }
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= model.mean.transpose();
    }
    Ok(xc * model.components.transpose())
}

impl PcaModel {
    pub fn q(&self) -> usize {
        self.components.nrows()
    }

    /// Map scores back to feature space.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = scores * &self.components;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }

    /// `PCAM0001 | u32 q | u32 n_features | mean | components (row-major) |
    /// explained variances | total variance`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (q, p) = self.components.shape();
        let mut out = Vec::with_capacity(16 + 8 * (p + q * p + q + 1));
        out.extend_from_slice(PCA_MAGIC);
        out.extend_from_slice(&(q as u32).to_le_bytes());
        out.extend_from_slice(&(p as u32).to_le_bytes());
        let push = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
        self.mean.iter().for_each(|&v| push(&mut out, v));
        for r in 0..q {
            self.components
                .row(r)
                .iter()
                .for_each(|&v| push(&mut out, v));
        }
        self.explained_variance
            .iter()
            .for_each(|&v| push(&mut out, v));
        push(&mut out, self.total_variance);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != PCA_MAGIC {
            return Err("missing PCAM0001 header".into());
        }
        let q = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let p = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let count = p + q * p + q + 1;
        if bytes.len() != 16 + 8 * count {
            return Err(format!("length does not match q={q}, n_features={p}"));
        }
        let v: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(PcaModel {
            mean: DVector::from_column_slice(&v[..p]),
            components: DMatrix::from_row_slice(q, p, &v[p..p + q * p]),
            explained_variance: v[p + q * p..p + q * p + q].to_vec(),
            total_variance: v[count - 1],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
