//! Stage glue shared by the command-line tool: manifest-driven feature
//! loading, labelling, per-slice classifier training and scatter export.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpc::{
    augment, evaluate, gpc_fit, optimize_length_scale, split_train_test, AugmentationConfig,
    GpcModel, LabeledPoint,
};
use crate::imaging::{load_rgb, preprocess_to};
use crate::mlkit::{Dataset, LabelRow};
use crate::morphology::classify_morphology;
use crate::snapshot::read_snapshot_cells;
use crate::sweep::{read_manifest, RunRecord};

fn manifest_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or_else(|| Path::new("."))
}

/// Dataset-eligible rows of a manifest.
pub fn eligible_records(manifest: &Path) -> Result<Vec<RunRecord>> {
    let rows: Vec<RunRecord> = read_manifest(manifest)?
        .into_iter()
        .filter(RunRecord::is_dataset_eligible)
        .collect();
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{} has no dataset-eligible runs",
            manifest.display()
        )));
    }
    Ok(rows)
}

/// Feature vectors of the eligible runs' images, resampled to `side` x `side`.
pub fn load_features(manifest: &Path, side: u32) -> Result<(Vec<RunRecord>, Dataset)> {
    let rows = eligible_records(manifest)?;
    let dir = manifest_dir(manifest);
    let feats = rows
        .iter()
        .map(|r| preprocess_to(&load_rgb(&dir.join(&r.image_path))?, side, side))
        .collect::<Result<Vec<_>>>()?;
    let ids = rows.iter().map(|r| r.run_id.clone()).collect();
    let ds = Dataset::from_rows(&feats, Some(ids))?;
    Ok((rows, ds))
}

/// Rule-based morphology class of every eligible run's final snapshot.
pub fn rule_labels(manifest: &Path) -> Result<Vec<LabelRow>> {
    let dir = manifest_dir(manifest);
    eligible_records(manifest)?
        .iter()
        .map(|r| {
            let f = read_snapshot_cells(&dir.join(&r.snapshot_path))?;
            Ok(LabelRow {
                run_id: r.run_id.clone(),
                label: classify_morphology(&f).class_id(),
            })
        })
        .collect()
}

/// Join labels with manifest rows, grouped by χ case in manifest order.
pub fn labeled_slices(
    records: &[RunRecord],
    labels: &[LabelRow],
) -> Result<Vec<([f64; 3], Vec<LabeledPoint>)>> {
    let by_id: BTreeMap<&str, usize> = labels
        .iter()
        .map(|l| (l.run_id.as_str(), l.label))
        .collect();
    let mut slices: Vec<([f64; 3], Vec<LabeledPoint>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let Some(&label) = by_id.get(r.run_id.as_str()) else {
            continue;
        };
        let p = LabeledPoint::new(r.a0, r.b0, label, r.chi(), i);
        match slices.iter_mut().find(|(c, _)| *c == r.chi()) {
            Some((_, pts)) => pts.push(p),
            None => slices.push((r.chi(), vec![p])),
        }
    }
    if slices.is_empty() {
        return Err(Error::Data("no labelled runs match the manifest".into()));
    }
    Ok(slices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub chi: [f64; 3],
    pub n_original: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Training points after augmentation.
    pub n_augmented: usize,
    pub dropped: usize,
    pub classes: Vec<usize>,
    pub length_scale: f64,
    pub accuracy: f64,
}

/// Kernel length scale used when training a slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthScale {
    Fixed(f64),
    /// Maximise the marginal likelihood of the augmented training set over
    /// 25 log-spaced candidates in [0.01, 10].
    Optimized,
}

/// Split originals, augment the training side only, fit and score.
pub fn train_slice(
    chi: [f64; 3],
    points: &[LabeledPoint],
    test_fraction: f64,
    seed: u64,
    length_scale: LengthScale,
    aug: &AugmentationConfig,
) -> Result<(GpcModel, SliceReport)> {
    let (train, test) = split_train_test(points, test_fraction, seed)?;
    let augmented = augment(&train, aug);
    let ell = match length_scale {
        LengthScale::Fixed(ell) => ell,
        LengthScale::Optimized => optimize_length_scale(&augmented.points, 0.01, 10.0, 25)?,
    };
    let model = gpc_fit(&augmented.points, ell)?;
    let accuracy = evaluate(&model, &test)?;
    let report = SliceReport {
        chi,
        n_original: points.len(),
        n_train: train.len(),
        n_test: test.len(),
        n_augmented: augmented.points.len(),
        dropped: augmented.dropped,
        classes: model.classes.clone(),
        length_scale: ell,
        accuracy,
    };
    Ok((model, report))
}

const SCATTER_COLORS: [[u8; 3]; 8] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [166, 86, 40],
    [247, 129, 191],
    [80, 80, 80],
];

/// Scatter of the first two score columns, one 5x5 marker per sample
/// coloured by label, on a white `size` x `size` canvas.
pub fn scatter_image(scores: &DMatrix<f64>, labels: &[usize], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if scores.nrows() == 0 {
        return img;
    }
    let col = |j: usize| -> Vec<f64> {
        if j < scores.ncols() {
            scores.column(j).iter().copied().collect()
        } else {
            vec![0.0; scores.nrows()]
        }
    };
    let (xs, ys) = (col(0), col(1));
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, dx), (y0, dy)) = (span(&xs), span(&ys));
    let margin = 8.0;
    let usable = size as f64 - 2.0 * margin - 1.0;
    for i in 0..xs.len() {
        let px = (margin + (xs[i] - x0) / dx * usable).round() as i64;
        let py = (size as f64 - 1.0 - margin - (ys[i] - y0) / dy * usable).round() as i64;
        let c = Rgb(SCATTER_COLORS[labels[i] % SCATTER_COLORS.len()]);
        for oy in -2..=2 {
            for ox in -2..=2 {
                let (x, y) = (px + ox, py + oy);
                if x >= 0 && y >= 0 && (x as u32) < size && (y as u32) < size {
                    img.put_pixel(x as u32, y as u32, c);
                }
            }
        }
    }
    img
}
