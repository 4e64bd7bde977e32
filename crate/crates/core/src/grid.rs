//! Structured-grid fields and the discrete operators used by the transport
//! equations.
//!
//! Cells are stored row-major (`j * nx + i`). The x axis is periodic; the y
//! axis is zero-flux, handled by mirroring the boundary cell into the ghost
//! position on the fly. No ghost layer is ever stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centred grid over `[0, lx) x [0, ly)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let g = GridSpec { nx, ny, lx, ly };
        g.validate()?;
        Ok(g)
    }

    /// Square grid with `n` cells per side over a domain of side `len`.
    pub fn square(n: usize, len: f64) -> Result<Self> {
        Self::new(n, n, len, len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 4x4 cells, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.lx.is_finite() && self.lx > 0.0 && self.ly.is_finite() && self.ly > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "domain lengths must be positive, got {} x {}",
                self.lx, self.ly
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Cell-centre coordinates of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }
}

/// Boundary treatment. Only one combination exists: periodic in x,
/// zero-flux (Neumann) in y.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoundarySpec;

/// A real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at cell {pos}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        ScalarField { grid, values }
    }

    /// Wraps values without the finiteness scan; used on hot paths where the
    /// caller checks separately.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Area-weighted integral over the domain.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance over cells.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Periodic shift by `k` cells along x: `out(i, j) = self(i - k, j)`.
    pub fn shift_x(&self, k: usize) -> ScalarField {
        let g = self.grid;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                out[g.idx((i + k) % g.nx, j)] = self.values[g.idx(i, j)];
            }
        }
        ScalarField::from_raw(g, out)
    }
}

/// The two transported mole fractions. The third follows from `c = 1 - a - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub a: ScalarField,
    pub b: ScalarField,
}

impl FieldPair {
    pub fn new(a: ScalarField, b: ScalarField) -> Result<Self> {
        if a.grid != b.grid {
            return Err(Error::Shape("a and b live on different grids".into()));
        }
        Ok(FieldPair { a, b })
    }

    pub fn uniform(grid: GridSpec, a0: f64, b0: f64) -> Self {
        FieldPair {
            a: ScalarField::constant(grid, a0),
            b: ScalarField::constant(grid, b0),
        }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.a.grid
    }

    pub fn c(&self) -> ScalarField {
        let values = self
            .a
            .values
            .iter()
            .zip(&self.b.values)
            .map(|(a, b)| 1.0 - a - b)
            .collect();
        ScalarField::from_raw(self.a.grid, values)
    }

    /// True when every cell has `a, b, c` inside `[0, 1]`.
    pub fn is_physical(&self) -> bool {
        self.a.values.iter().zip(&self.b.values).all(|(&a, &b)| {
            let c = 1.0 - a - b;
            (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && (0.0..=1.0).contains(&c)
        })
    }

    /// Exchange the roles of species A and B.
    pub fn swapped(&self) -> FieldPair {
        FieldPair {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &FieldPair) -> f64 {
        self.a
            .max_abs_diff(&other.a)
            .max(self.b.max_abs_diff(&other.b))
    }
}

/// 5-point Laplacian written into `out`.
pub(crate) fn laplacian_into(g: &GridSpec, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let idx2 = 1.0 / (g.dx() * g.dx());
    let idy2 = 1.0 / (g.dy() * g.dy());
    for j in 0..ny {
        let row = j * nx;
        let down = if j == 0 { row } else { row - nx };
        let up = if j + 1 == ny { row } else { row + nx };
        for i in 0..nx {
            let il = if i == 0 { nx - 1 } else { i - 1 };
            let ir = if i + 1 == nx { 0 } else { i + 1 };
            let fc = f[row + i];
            out[row + i] = (f[row + il] - 2.0 * fc + f[row + ir]) * idx2
                + (f[down + i] - 2.0 * fc + f[up + i]) * idy2;
        }
    }
}

/// Conservative `div(m grad mu)` written into `out`, with face mobility taken
/// as the arithmetic mean of the two adjacent cells. Faces on the y
/// boundaries carry no flux.
pub(crate) fn div_mobility_grad_into(g: &GridSpec, m: &[f64], mu: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    div_mobility_grad_add(g, m, mu, out);
}

/// As [`div_mobility_grad_into`] but accumulating into `out`. Each face flux
/// is computed once and applied with opposite signs to its two cells.
pub(crate) fn div_mobility_grad_add(g: &GridSpec, m: &[f64], mu: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let hx = 0.5 / (g.dx() * g.dx());
    let hy = 0.5 / (g.dy() * g.dy());
    for j in 0..ny {
        let r = j * nx..(j + 1) * nx;
        let (mr, ur, or) = (&m[r.clone()], &mu[r.clone()], &mut out[r]);
        for i in 0..nx - 1 {
            let f = hx * (mr[i] + mr[i + 1]) * (ur[i + 1] - ur[i]);
            or[i] += f;
            or[i + 1] -= f;
        }
        let f = hx * (mr[nx - 1] + mr[0]) * (ur[0] - ur[nx - 1]);
        or[nx - 1] += f;
        or[0] -= f;
    }
    for j in 0..ny - 1 {
        let lo = j * nx;
        let hi = lo + nx;
        let (o_lo, o_hi) = out[lo..hi + nx].split_at_mut(nx);
        for i in 0..nx {
            let f = hy * (m[lo + i] + m[hi + i]) * (mu[hi + i] - mu[lo + i]);
            o_lo[i] += f;
            o_hi[i] -= f;
        }
    }
}

/// 5-point Laplacian, periodic in x and mirrored (zero-flux) in y.
pub fn laplacian(f: &ScalarField, _bc: BoundarySpec) -> ScalarField {
    let mut out = vec![0.0; f.values.len()];
    laplacian_into(&f.grid, &f.values, &mut out);
    ScalarField::from_raw(f.grid, out)
}

/// Conservative flux-form divergence of `m * grad(mu)`.
pub fn div_mobility_grad(m: &ScalarField, mu: &ScalarField, _bc: BoundarySpec) -> ScalarField {
    assert_eq!(m.grid, mu.grid, "mobility and potential on different grids");
    let mut out = vec![0.0; mu.values.len()];
    div_mobility_grad_into(&mu.grid, &m.values, &mu.values, &mut out);
    ScalarField::from_raw(mu.grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(g: GridSpec, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
        let v = (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect();
        ScalarField::from_values(g, v).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_degenerate() {
        assert!(GridSpec::new(3, 8, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 1.0, f64::NAN).is_err());
        assert!(GridSpec::new(4, 4, 1.0, 1.0).is_ok());
    }

    #[test]
    fn field_rejects_wrong_length_and_nan() {
        let g = GridSpec::square(4, 1.0).unwrap();
        assert!(ScalarField::from_values(g, vec![0.0; 15]).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::INFINITY;
        assert!(ScalarField::from_values(g, v).is_err());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = GridSpec::square(16, 40.0).unwrap();
        let f = ScalarField::constant(g, 0.3);
        let l = laplacian(&f, BoundarySpec);
        assert!(l.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn laplacian_sine_eigenfunction() {
        let g = GridSpec::square(64, 40.0).unwrap();
        let k = 2.0 * PI / g.lx;
        let f = ScalarField::from_fn(g, |x, _| (k * x).sin());
        let l = laplacian(&f, BoundarySpec);
        let dx = g.dx();
        let mut err: f64 = 0.0;
        for (lv, fv) in l.values().iter().zip(f.values()) {
            err = err.max((lv + k * k * fv).abs());
        }
        // Truncation error of the 5-point stencil is k^4 dx^2 / 12.
        assert!(err < k.powi(4) * dx * dx / 12.0 * 1.01, "err = {err}");
    }

    #[test]
    fn laplacian_linear_in_neumann_direction() {
        // Hand evaluation on a 4x4 grid with dy = 1: f = y at centres
        // 0.5, 1.5, 2.5, 3.5. Row 0 ghost mirrors 0.5 so lap = (1.5 - 0.5) = 1,
        // the top row gives -1, interior rows vanish.
        let g = GridSpec::square(4, 4.0).unwrap();
        let f = ScalarField::from_fn(g, |_, y| y);
        let l = laplacian(&f, BoundarySpec);
        for i in 0..4 {
            assert_eq!(l.get(i, 0), 1.0);
            assert_eq!(l.get(i, 1), 0.0);
            assert_eq!(l.get(i, 2), 0.0);
            assert_eq!(l.get(i, 3), -1.0);
        }
    }

    #[test]
    fn div_mobility_constant_mu_is_zero() {
        let g = GridSpec::square(8, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_field(g, &mut rng, 0.0, 1.0);
        let mu = ScalarField::constant(g, -2.5);
        let d = div_mobility_grad(&m, &mu, BoundarySpec);
        assert!(d.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_mobility_reduces_to_laplacian() {
        let g = GridSpec::new(12, 8, 5.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_field(g, &mut rng, -1.0, 1.0);
        let one = ScalarField::constant(g, 1.0);
        let d = div_mobility_grad(&one, &mu, BoundarySpec);
        let l = laplacian(&mu, BoundarySpec);
        assert!(d.max_abs_diff(&l) < 1e-12);
    }

    #[test]
    fn div_mobility_grad_is_conservative() {
        let g = GridSpec::square(16, 40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let m = random_field(g, &mut rng, 0.0, 2.0);
            let mu = random_field(g, &mut rng, -1.0, 1.0);
            let d = div_mobility_grad(&m, &mu, BoundarySpec);
            let l1: f64 = d.values().iter().map(|v| v.abs()).sum::<f64>() * g.cell_area();
            assert!(
                d.integral().abs() <= 1e-12 * l1,
                "{} vs {}",
                d.integral(),
                l1
            );
        }
    }

    #[test]
    fn laplacian_is_symmetric() {
        let g = GridSpec::new(10, 7, 3.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_field(g, &mut rng, -1.0, 1.0);
        let h = random_field(g, &mut rng, -1.0, 1.0);
        let lf = laplacian(&f, BoundarySpec);
        let lh = laplacian(&h, BoundarySpec);
        let s1: f64 = f.values().iter().zip(lh.values()).map(|(a, b)| a * b).sum();
        let s2: f64 = h.values().iter().zip(lf.values()).map(|(a, b)| a * b).sum();
        let scale: f64 = f
            .values()
            .iter()
            .zip(lh.values())
            .map(|(a, b)| (a * b).abs())
            .sum();
        assert!((s1 - s2).abs() <= 1e-12 * scale);
    }

    #[test]
    fn laplacian_commutes_with_x_shift() {
        let g = GridSpec::new(9, 6, 3.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(g, &mut rng, -1.0, 1.0);
        for k in 0..g.nx {
            let a = laplacian(&f.shift_x(k), BoundarySpec);
            let b = laplacian(&f, BoundarySpec).shift_x(k);
            assert_eq!(a, b);
        }
    }
}
