//! Dimensionality reduction and clustering of morphology feature vectors.

mod affinity;
mod kmeans;
mod pca;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use affinity::{affinity_propagation, AffinityConfig};
pub use kmeans::{elbow_select, kmeans, kmeans_with, ElbowResult, KMeansConfig};
pub use pca::{pca_fit, pca_transform, PcaModel, PCA_MAGIC};

/// Feature matrix (one sample per row) with an identifier per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, ids: Vec<String>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::Data(format!(
                "a dataset needs at least 2 samples, got {}",
                x.nrows()
            )));
        }
        if ids.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} ids for {} samples",
                ids.len(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "dataset contains non-finite entries".into(),
            ));
        }
        Ok(Dataset { x, ids })
    }

    /// Build from equally long rows; ids default to the row index.
    pub fn from_rows(rows: &[Vec<f64>], ids: Option<Vec<String>>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) || p == 0 {
            return Err(Error::Shape(
                "rows must be nonempty and equally long".into(),
            ));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        let ids = ids.unwrap_or_else(|| (0..rows.len()).map(|i| i.to_string()).collect());
        Self::new(x, ids)
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }
}

/// Outcome of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster index in `0..k` per sample.
    pub labels: Vec<usize>,
    pub k: usize,
    /// k-means centroids, one per row.
    pub centers: Option<DMatrix<f64>>,
    /// Affinity-propagation exemplars (sample indices), one per cluster.
    pub exemplars: Option<Vec<usize>>,
    /// Within-cluster sum of squares (k-means).
    pub wcss: Option<f64>,
    /// Per-iteration wcss of the winning k-means restart.
    pub wcss_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub run_id: String,
    pub label: usize,
}

/// Write `run_id,label` rows.
pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["run_id", "label"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major copy of a matrix, for cache-friendly per-sample loops.
pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}
