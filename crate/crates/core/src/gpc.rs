//! Gaussian-process classification from initial composition (a0, b0) to
//! morphology label: one-vs-rest Laplace-approximated binary classifiers
//! with an RBF kernel.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GPC_MAGIC: &[u8; 8] = b"GPCM0001";
pub const DEFAULT_LENGTH_SCALE: f64 = 1.0;
pub const JITTER: f64 = 1e-8;
pub const NEWTON_TOL: f64 = 1e-6;
pub const NEWTON_MAX_ITER: usize = 100;
/// Compositions at or beyond this a0 + b0 are not simulated.
pub const MAP_MASK: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub a0: f64,
    pub b0: f64,
    pub label: usize,
    pub chi_case: [f64; 3],
    /// Index of the original point this one descends from.
    pub origin: usize,
}

impl LabeledPoint {
    pub fn new(a0: f64, b0: f64, label: usize, chi_case: [f64; 3], origin: usize) -> Self {
        LabeledPoint {
            a0,
            b0,
            label,
            chi_case,
            origin,
        }
    }

    pub fn in_simplex(&self) -> bool {
        in_simplex(self.a0, self.b0)
    }
}

fn in_simplex(a0: f64, b0: f64) -> bool {
    a0 > 0.0 && b0 > 0.0 && a0 + b0 < 1.0
}

/// Diagonal perturbation magnitudes. The i-th magnitude is applied with a
/// positive sign for even i and a negative sign for odd i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub epsilons: Vec<f64>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            epsilons: vec![0.002, 0.005],
        }
    }
}

impl AugmentationConfig {
    /// Signed diagonal offsets applied to (a0, b0).
    pub fn offsets(&self) -> Vec<f64> {
        self.epsilons
            .iter()
            .enumerate()
            .map(|(i, &e)| if i % 2 == 0 { e } else { -e })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub points: Vec<LabeledPoint>,
    /// Perturbed copies discarded for leaving the simplex.
    pub dropped: usize,
}

/// Each point plus one diagonally shifted copy per offset, same label and
/// origin.
pub fn augment(data: &[LabeledPoint], cfg: &AugmentationConfig) -> Augmented {
    let offsets = cfg.offsets();
    let mut points = Vec::with_capacity(data.len() * (1 + offsets.len()));
    let mut dropped = 0;
    for p in data {
        points.push(*p);
        for &d in &offsets {
            let q = LabeledPoint {
                a0: p.a0 + d,
                b0: p.b0 + d,
                ..*p
            };
            if q.in_simplex() {
                points.push(q);
            } else {
                dropped += 1;
            }
        }
    }
    Augmented { points, dropped }
}

/// Shuffle original points and hold out `test_fraction` of them (at least
/// one, and at least one left for training).
pub fn split_train_test(
    data: &[LabeledPoint],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledPoint>, Vec<LabeledPoint>)> {
    if data.len() < 2 {
        return Err(Error::Data("need at least 2 points to split".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((data.len() as f64 * test_fraction).round() as usize).clamp(1, data.len() - 1);
    let test = idx[..n_test].iter().map(|&i| data[i]).collect();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    train.sort_unstable();
    Ok((train.into_iter().map(|i| data[i]).collect(), test))
}

fn rbf(x: [f64; 2], y: [f64; 2], ell: f64) -> f64 {
    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    (-d2 / (2.0 * ell * ell)).exp()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-z)), stable for large |z|.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Laplace approximation of one binary problem at its posterior mode.
#[derive(Debug, Clone)]
struct BinaryGp {
    /// Latent posterior mode.
    f_hat: DVector<f64>,
    /// Gradient of the log likelihood at the mode.
    grad: DVector<f64>,
    w_sqrt: DVector<f64>,
    /// Lower Cholesky factor of I + W^½ K W^½.
    l: DMatrix<f64>,
}

impl BinaryGp {
    /// Likelihood terms at `f` for targets `t` in {0, 1}.
    fn terms(f: &DVector<f64>, t: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let pi = f.map(sigmoid);
        let grad = t - &pi;
        let w = pi.map(|p| p * (1.0 - p));
        let loglik = f
            .iter()
            .zip(t.iter())
            .map(|(&f, &t)| -log1p_exp_neg(if t > 0.5 { f } else { -f }))
            .sum();
        (grad, w, loglik)
    }

    fn factor(k: &DMatrix<f64>, w: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let sw = w.map(f64::sqrt);
        let n = k.nrows();
        let b = DMatrix::from_fn(n, n, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) + sw[i] * k[(i, j)] * sw[j]
        });
        let l = Cholesky::new(b)
            .ok_or_else(|| Error::Numerical("Laplace system is not positive definite".into()))?
            .unpack();
        Ok((sw, l))
    }

    /// Newton iterations on the latent posterior until the gradient
    /// `grad log p(y|f) - K^-1 f` falls below `NEWTON_TOL` in max-norm.
    fn fit(k: &DMatrix<f64>, t: &DVector<f64>) -> std::result::Result<Self, String> {
        let n = k.nrows();
        let mut a = DVector::zeros(n);
        let mut f = DVector::zeros(n);
        let psi = |a: &DVector<f64>, f: &DVector<f64>| -0.5 * a.dot(f) + Self::terms(f, t).2;
        for _ in 0..=NEWTON_MAX_ITER {
            let (grad, w, _) = Self::terms(&f, t);
            if (&grad - &a).amax() < NEWTON_TOL {
                let (w_sqrt, l) = Self::factor(k, &w).map_err(|e| e.to_string())?;
                return Ok(BinaryGp {
                    f_hat: f,
                    grad,
                    w_sqrt,
                    l,
                });
            }
            let (sw, l) = Self::factor(k, &w).map_err(|e| e.to_string())?;
            let b = w.component_mul(&f) + &grad;
            let kb = k * &b;
            let rhs = sw.component_mul(&kb);
            let z = l.solve_lower_triangular(&rhs).ok_or("singular factor")?;
            let z = l
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or("singular factor")?;
            let mut a_new = b - sw.component_mul(&z);
            let mut f_new = k * &a_new;
            let old = psi(&a, &f);
            let mut tries = 0;
            while psi(&a_new, &f_new) < old && tries < 20 {
                a_new = 0.5 * (&a + &a_new);
                f_new = k * &a_new;
                tries += 1;
            }
            a = a_new;
            f = f_new;
        }
        Err(format!(
            "Newton did not converge in {NEWTON_MAX_ITER} iterations"
        ))
    }

    /// Latent predictive mean and variance at a query with kernel vector `ks`.
    fn latent(&self, ks: &DVector<f64>) -> (f64, f64) {
        let mean = ks.dot(&self.grad);
        let v = self
            .l
            .solve_lower_triangular(&self.w_sqrt.component_mul(ks))
            .expect("triangular factor has a nonzero diagonal");
        (mean, (1.0 - v.norm_squared()).max(0.0))
    }
}

/// One-vs-rest Laplace GP classifier.
#[derive(Debug, Clone)]
pub struct GpcModel {
    pub inputs: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub classes: Vec<usize>,
    pub length_scale: f64,
    binaries: Vec<BinaryGp>,
}

fn kernel_matrix(x: &[[f64; 2]], ell: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        rbf(x[i], x[j], ell) + if i == j { JITTER } else { 0.0 }
    })
}

fn fit_binaries(
    inputs: &[[f64; 2]],
    labels: &[usize],
    classes: &[usize],
    ell: f64,
) -> Result<Vec<BinaryGp>> {
    if classes.len() < 2 {
        return Ok(Vec::new());
    }
    let k = kernel_matrix(inputs, ell);
    classes
        .iter()
        .map(|&c| {
            let t = DVector::from_iterator(
                labels.len(),
                labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }),
            );
            BinaryGp::fit(&k, &t).map_err(|e| Error::Numerical(format!("class {c}: {e}")))
        })
        .collect()
}

/// Fit one binary classifier per class (class vs rest).
///
/// A single-class training set yields a model that predicts that class with
/// probability one everywhere.
pub fn gpc_fit(data: &[LabeledPoint], length_scale: f64) -> Result<GpcModel> {
    if !(length_scale.is_finite() && length_scale > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "length scale must be positive, got {length_scale}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("no training points".into()));
    }
    if let Some(p) = data.iter().find(|p| !p.in_simplex()) {
        return Err(Error::Data(format!(
            "training point ({}, {}) outside the simplex",
            p.a0, p.b0
        )));
    }
    let mut classes: Vec<usize> = data.iter().map(|p| p.label).collect();
    classes.sort_unstable();
    classes.dedup();
    for &c in &classes {
        let count = data.iter().filter(|p| p.label == c).count();
        if classes.len() > 1 && count < 3 {
            return Err(Error::Data(format!(
                "class {c} has {count} training points; at least 3 are required"
            )));
        }
    }
    let inputs: Vec<[f64; 2]> = data.iter().map(|p| [p.a0, p.b0]).collect();
    let labels: Vec<usize> = data.iter().map(|p| p.label).collect();
    let binaries = fit_binaries(&inputs, &labels, &classes, length_scale)?;
    Ok(GpcModel {
        inputs,
        labels,
        classes,
        length_scale,
        binaries,
    })
}

/// Laplace approximation of the log marginal likelihood, summed over the
/// one-vs-rest problems. A single-class set has no binary problems and
/// scores zero.
pub fn log_marginal_likelihood(data: &[LabeledPoint], length_scale: f64) -> Result<f64> {
    let model = gpc_fit(data, length_scale)?;
    Ok(model
        .classes
        .iter()
        .zip(&model.binaries)
        .map(|(&c, b)| {
            let t = DVector::from_iterator(
                model.labels.len(),
                model.labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }),
            );
            let loglik = BinaryGp::terms(&b.f_hat, &t).2;
            let log_det: f64 = b.l.diagonal().iter().map(|d| d.ln()).sum();
            -0.5 * b.f_hat.dot(&b.grad) + loglik - log_det
        })
        .sum())
}

/// Length scale maximising the Laplace marginal likelihood over `n`
/// log-spaced candidates in `[lo, hi]`. Candidates whose fit fails are
/// skipped.
pub fn optimize_length_scale(data: &[LabeledPoint], lo: f64, hi: f64, n: usize) -> Result<f64> {
    if !(0.0 < lo && lo < hi && hi.is_finite() && n >= 2) {
        return Err(Error::InvalidConfig(format!(
            "length-scale search over [{lo}, {hi}] with {n} candidates"
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n {
        let ell = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp();
        match log_marginal_likelihood(data, ell) {
            Ok(lml) if best.map_or(true, |(_, b)| lml > b) => best = Some((ell, lml)),
            Ok(_) => {}
            Err(e) => log::debug!("length scale {ell}: {e}"),
        }
    }
    best.map(|(ell, _)| ell)
        .ok_or_else(|| Error::Numerical("no candidate length scale could be fitted".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Normalised probability per class, in `model.classes` order.
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

impl GpcModel {
    /// Latent mode of the binary classifier for `classes[i]`.
    pub fn latent_mode(&self, i: usize) -> Option<&DVector<f64>> {
        self.binaries.get(i).map(|b| &b.f_hat)
    }

    /// Predict one composition.
    pub fn predict_one(&self, a0: f64, b0: f64) -> Prediction {
        if self.classes.len() == 1 {
            return Prediction {
                label: self.classes[0],
                probs: vec![1.0],
            };
        }
        let ks = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|&x| rbf(x, [a0, b0], self.length_scale)),
        );
        let raw: Vec<f64> = self
            .binaries
            .iter()
            .map(|b| {
                let (m, v) = b.latent(&ks);
                let kappa = 1.0 / (1.0 + std::f64::consts::PI * v / 8.0).sqrt();
                sigmoid(kappa * m)
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        Prediction {
            label: self.classes[best],
            probs,
        }
    }

    /// `GPCM0001 | u32 n | u32 n_classes | f64 length_scale | n x (a0, b0) |
    /// n x u64 label | n_classes x u64 class | n_classes x n latent modes`,
    /// little-endian. Factorisations are rebuilt on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.inputs.len();
        let mut out = Vec::new();
        out.extend_from_slice(GPC_MAGIC);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.length_scale.to_le_bytes());
        for x in &self.inputs {
            out.extend_from_slice(&x[0].to_le_bytes());
            out.extend_from_slice(&x[1].to_le_bytes());
        }
        for &l in self.labels.iter().chain(&self.classes) {
            out.extend_from_slice(&(l as u64).to_le_bytes());
        }
        for b in &self.binaries {
            b.f_hat
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 24 || &bytes[..8] != GPC_MAGIC {
            return Err("missing GPCM0001 header".into());
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let modes = if c > 1 { c * n } else { 0 };
        if bytes.len() != 24 + 8 * (2 * n + n + c + modes) {
            return Err(format!("length does not match n={n}, classes={c}"));
        }
        let words: Vec<[u8; 8]> = bytes[16..]
            .chunks_exact(8)
            .map(|w| w.try_into().unwrap())
            .collect();
        let length_scale = f64::from_le_bytes(words[0]);
        let inputs = (0..n)
            .map(|i| {
                [
                    f64::from_le_bytes(words[1 + 2 * i]),
                    f64::from_le_bytes(words[2 + 2 * i]),
                ]
            })
            .collect::<Vec<_>>();
        let ints = |start: usize, len: usize| -> Vec<usize> {
            (start..start + len)
                .map(|i| u64::from_le_bytes(words[i]) as usize)
                .collect()
        };
        let labels = ints(1 + 2 * n, n);
        let classes = ints(1 + 3 * n, c);
        let k = kernel_matrix(&inputs, length_scale);
        let base = 1 + 3 * n + c;
        let mut binaries = Vec::new();
        if c > 1 {
            for (ci, &cls) in classes.iter().enumerate() {
                let f = DVector::from_iterator(
                    n,
                    (0..n).map(|i| f64::from_le_bytes(words[base + ci * n + i])),
                );
                let t = DVector::from_iterator(
                    n,
                    labels.iter().map(|&l| if l == cls { 1.0 } else { 0.0 }),
                );
                let (grad, w, _) = BinaryGp::terms(&f, &t);
                let (w_sqrt, l) = BinaryGp::factor(&k, &w).map_err(|e| e.to_string())?;
                binaries.push(BinaryGp {
                    f_hat: f,
                    grad,
                    w_sqrt,
                    l,
                });
            }
        }
        Ok(GpcModel {
            inputs,
            labels,
            classes,
            length_scale,
            binaries,
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

/// Labels and normalised class probabilities for each query (a0, b0).
pub fn gpc_predict(model: &GpcModel, points: &[[f64; 2]]) -> (Vec<usize>, Vec<Vec<f64>>) {
    points
        .iter()
        .map(|p| {
            let pr = model.predict_one(p[0], p[1]);
            (pr.label, pr.probs)
        })
        .unzip()
}

/// Fraction of test points whose predicted label matches.
pub fn evaluate(model: &GpcModel, test: &[LabeledPoint]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let hits = test
        .iter()
        .filter(|p| model.predict_one(p.a0, p.b0).label == p.label)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub a0: f64,
    pub b0: f64,
    /// `None` where a0 + b0 is at or beyond the composition margin.
    pub label: Option<usize>,
    pub max_prob: f64,
}

/// Predicted labels on a uniform grid, a0 varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub na: usize,
    pub nb: usize,
    pub cells: Vec<MapCell>,
    pub classes: Vec<usize>,
}

pub const DEFAULT_A0_RANGE: (f64, f64) = (0.1, 0.8);
pub const DEFAULT_B0_RANGE: (f64, f64) = (0.1, 0.45);

/// Qualitative palette; classes take colours in `model.classes` order.
const PALETTE: [[u8; 3]; 12] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [255, 255, 51],
    [166, 86, 40],
    [247, 129, 191],
    [153, 153, 153],
    [102, 194, 165],
    [141, 160, 203],
    [27, 158, 119],
];
const MASK_COLOR: [u8; 3] = [255, 255, 255];

pub fn prediction_map(
    model: &GpcModel,
    a0_range: (f64, f64),
    b0_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<PredictionMap> {
    let (na, nb) = resolution;
    if na < 2 || nb < 2 {
        return Err(Error::InvalidConfig(
            "map resolution must be at least 2 per axis".into(),
        ));
    }
    for (lo, hi) in [a0_range, b0_range] {
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "range ({lo}, {hi}) not inside (0, 1)"
            )));
        }
    }
    let at = |r: (f64, f64), i: usize, n: usize| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64;
    let mut cells = Vec::with_capacity(na * nb);
    for j in 0..nb {
        let b0 = at(b0_range, j, nb);
        for i in 0..na {
            let a0 = at(a0_range, i, na);
            cells.push(if a0 + b0 >= MAP_MASK {
                MapCell {
                    a0,
                    b0,
                    label: None,
                    max_prob: f64::NAN,
                }
            } else {
                let p = model.predict_one(a0, b0);
                MapCell {
                    a0,
                    b0,
                    label: Some(p.label),
                    max_prob: p.max_prob(),
                }
            });
        }
    }
    Ok(PredictionMap {
        na,
        nb,
        cells,
        classes: model.classes.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub label: usize,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub masked: String,
    pub classes: Vec<LegendEntry>,
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

impl PredictionMap {
    fn color(&self, label: Option<usize>) -> [u8; 3] {
        match label.and_then(|l| self.classes.iter().position(|&c| c == l)) {
            Some(i) => PALETTE[i % PALETTE.len()],
            None => MASK_COLOR,
        }
    }

    /// Rows `a0,b0,label,max_prob`; masked cells have empty label and
    /// probability.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a0", "b0", "label", "max_prob"])?;
        for c in &self.cells {
            let (l, p) = match c.label {
                Some(l) => (l.to_string(), c.max_prob.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([c.a0.to_string(), c.b0.to_string(), l, p])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One pixel per grid point, a0 to the right and b0 upwards.
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.na as u32, self.nb as u32, |x, y| {
            let j = self.nb - 1 - y as usize;
            Rgb(self.color(self.cells[j * self.na + x as usize].label))
        })
    }

    pub fn legend(&self) -> Legend {
        Legend {
            masked: hex(MASK_COLOR),
            classes: self
                .classes
                .iter()
                .map(|&l| LegendEntry {
                    label: l,
                    color: hex(self.color(Some(l))),
                })
                .collect(),
        }
    }

    /// Write the PNG and its legend to `<png stem>.legend.json`.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)?;
        let legend = path.with_extension("legend.json");
        let text = serde_json::to_string_pretty(&self.legend())?;
        std::fs::write(&legend, text).map_err(|e| Error::io(&legend, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHI: [f64; 3] = [0.003; 3];

    fn toy() -> Vec<LabeledPoint> {
        let orig = [
            LabeledPoint::new(0.2, 0.2, 0, CHI, 0),
            LabeledPoint::new(0.6, 0.3, 1, CHI, 1),
        ];
        augment(&orig, &AugmentationConfig::default()).points
    }

    #[test]
    fn augmentation_is_threefold() {
        let pts = toy();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].a0, 0.202);
        assert!((pts[2].b0 - 0.195).abs() < 1e-15);
        assert!(pts.iter().all(|p| p.label == p.origin));
    }

    #[test]
    fn augmentation_drops_out_of_simplex() {
        let p = [LabeledPoint::new(0.004, 0.5, 0, CHI, 0)];
        let out = augment(&p, &AugmentationConfig::default());
        assert_eq!((out.points.len(), out.dropped), (2, 1));
    }

    #[test]
    fn separable_toy_is_learned() {
        let pts = toy();
        let m = gpc_fit(&pts, 1.0).unwrap();
        assert_eq!(evaluate(&m, &pts).unwrap(), 1.0);
    }

    #[test]
    fn class_with_too_few_points_rejected() {
        let mut pts = toy();
        pts.truncate(4);
        assert!(gpc_fit(&pts, 1.0).is_err());
        assert!(gpc_fit(&toy(), 0.0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let pts: Vec<_> = (0..10)
            .map(|i| LabeledPoint::new(0.1 + 0.03 * i as f64, 0.2, i % 2, CHI, i))
            .collect();
        let (tr, te) = split_train_test(&pts, 0.2, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(te.iter().all(|t| tr.iter().all(|p| p.origin != t.origin)));
        assert_eq!(split_train_test(&pts, 0.2, 4).unwrap(), (tr, te));
    }

    #[test]
    fn model_round_trips_through_bytes() {
        let m = gpc_fit(&toy(), 1.0).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..8], b"GPCM0001");
        let back = GpcModel::from_bytes(&b).unwrap();
        assert_eq!(back.to_bytes(), b);
        for q in [[0.3, 0.3], [0.5, 0.1]] {
            assert_eq!(back.predict_one(q[0], q[1]), m.predict_one(q[0], q[1]));
        }
    }

    #[test]
    fn map_masks_and_legend() {
        let m = gpc_fit(&toy(), 1.0).unwrap();
        let map = prediction_map(&m, DEFAULT_A0_RANGE, DEFAULT_B0_RANGE, (8, 8)).unwrap();
        let last = map.cells.last().unwrap();
        assert!((last.a0 - 0.8).abs() < 1e-12 && (last.b0 - 0.45).abs() < 1e-12);
        assert_eq!(last.label, None);
        assert!(map.cells[0].label.is_some());
        assert_eq!(map.legend().classes.len(), 2);
        assert_eq!(map.to_image().get_pixel(7, 0).0, MASK_COLOR);
    }
}
