//! Flory–Huggins free energy of a ternary blend, gradient-energy
//! coefficients, chemical-potential differences and the total Gibbs
//! functional on a grid.
//!
//! Energies are in units of RT. The gradient energy is assembled from
//! one-sided differences across cell faces, so the chemical potentials built
//! from the 5-point Laplacian are the exact discrete variational derivatives
//! of [`gibbs_total`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, FieldPair, GridSpec, ScalarField};

/// Mole fractions are clamped into `[LN_FLOOR, 1 - LN_FLOOR]` inside
/// logarithms only.
pub const LN_FLOOR: f64 = 1e-9;

/// Physical parameters of the blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendParams {
    /// Chain lengths (degree of polymerisation).
    pub n_a: f64,
    pub n_b: f64,
    pub n_c: f64,
    /// Flory–Huggins interaction parameters.
    pub chi_ab: f64,
    pub chi_ac: f64,
    pub chi_bc: f64,
    /// Radius of gyration [m].
    pub r_g: f64,
    /// Characteristic length used to scale space [m].
    pub d_p: f64,
    /// Reference diffusivity [m^2/s].
    pub d_ab: f64,
}

impl Default for BlendParams {
    fn default() -> Self {
        BlendParams {
            n_a: 1000.0,
            n_b: 1000.0,
            n_c: 1000.0,
            chi_ab: 0.006,
            chi_ac: 0.006,
            chi_bc: 0.006,
            r_g: 200e-10,
            d_p: 200e-10,
            d_ab: 1e-11,
        }
    }
}

impl BlendParams {
    pub fn with_chi(mut self, chi_ab: f64, chi_ac: f64, chi_bc: f64) -> Self {
        self.chi_ab = chi_ab;
        self.chi_ac = chi_ac;
        self.chi_bc = chi_bc;
        self
    }

    pub fn with_chain_length(mut self, n: f64) -> Self {
        self.n_a = n;
        self.n_b = n;
        self.n_c = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("n_a", self.n_a), ("n_b", self.n_b), ("n_c", self.n_c)] {
            if !(n.is_finite() && n >= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "params.{name} must be >= 1, got {n}"
                )));
            }
        }
        for (name, x) in [
            ("chi_ab", self.chi_ab),
            ("chi_ac", self.chi_ac),
            ("chi_bc", self.chi_bc),
        ] {
            if !x.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "params.{name} must be finite"
                )));
            }
        }
        for (name, x) in [("r_g", self.r_g), ("d_p", self.d_p), ("d_ab", self.d_ab)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "params.{name} must be positive, got {x}"
                )));
            }
        }
        Ok(())
    }

    /// Parameters with species A and B exchanged.
    pub fn swapped(&self) -> BlendParams {
        BlendParams {
            n_a: self.n_b,
            n_b: self.n_a,
            chi_ac: self.chi_bc,
            chi_bc: self.chi_ac,
            ..*self
        }
    }

    /// Chain length entering the time scale `t = n d_p^2 / D_AB * t~`.
    /// For unequal chains the arithmetic mean is used.
    pub fn time_scale_chain_length(&self) -> f64 {
        (self.n_a + self.n_b + self.n_c) / 3.0
    }

    /// Seconds per unit of dimensionless time.
    pub fn physical_time_unit(&self) -> f64 {
        self.time_scale_chain_length() * self.d_p * self.d_p / self.d_ab
    }
}

/// Nondimensional gradient-energy coefficients (kappa / d_p^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSet {
    pub k_a: f64,
    pub k_b: f64,
    pub k_ab: f64,
}

impl KappaSet {
    pub fn swapped(&self) -> KappaSet {
        KappaSet {
            k_a: self.k_b,
            k_b: self.k_a,
            k_ab: self.k_ab,
        }
    }
}

pub fn kappa_from_chi(p: &BlendParams) -> KappaSet {
    let r = p.r_g / p.d_p;
    let r2 = r * r;
    KappaSet {
        k_a: 2.0 / 3.0 * r2 * p.chi_ac,
        k_b: 2.0 / 3.0 * r2 * p.chi_bc,
        k_ab: 1.0 / 3.0 * r2 * (p.chi_ac + p.chi_bc - p.chi_ab),
    }
}

#[inline]
fn clamp_ln(x: f64) -> f64 {
    x.clamp(LN_FLOOR, 1.0 - LN_FLOOR).ln()
}

/// Homogeneous free energy density per cell.
pub fn homog_energy(a: f64, b: f64, p: &BlendParams) -> f64 {
    let c = 1.0 - a - b;
    a / p.n_a * clamp_ln(a)
        + b / p.n_b * clamp_ln(b)
        + c / p.n_c * clamp_ln(c)
        + p.chi_ab * a * b
        + p.chi_ac * a * c
        + p.chi_bc * b * c
}

/// Partial derivatives of [`homog_energy`] with `a`, `b`, `c` treated as
/// independent variables.
pub fn dg_partials(a: f64, b: f64, p: &BlendParams) -> (f64, f64, f64) {
    let c = 1.0 - a - b;
    (
        (clamp_ln(a) + 1.0) / p.n_a + p.chi_ab * b + p.chi_ac * c,
        (clamp_ln(b) + 1.0) / p.n_b + p.chi_ab * a + p.chi_bc * c,
        (clamp_ln(c) + 1.0) / p.n_c + p.chi_ac * a + p.chi_bc * b,
    )
}

/// Second derivatives of `g` along the constrained directions, i.e. the
/// Jacobian of `(dg_a - dg_b, dg_a - dg_c, dg_b - dg_c)` with respect to
/// `(a, b)` when `c = 1 - a - b`. Rows are `[d/da, d/db]`.
pub(crate) fn constrained_hessian(a: f64, b: f64, p: &BlendParams) -> [[f64; 2]; 3] {
    let c = 1.0 - a - b;
    let gaa = 1.0 / (p.n_a * a.clamp(LN_FLOOR, 1.0));
    let gbb = 1.0 / (p.n_b * b.clamp(LN_FLOOR, 1.0));
    let gcc = 1.0 / (p.n_c * c.clamp(LN_FLOOR, 1.0));
    // d(dg_x)/da and d(dg_x)/db with dc = -da - db.
    let ga = [gaa - p.chi_ac, p.chi_ab - p.chi_ac];
    let gb = [p.chi_ab - p.chi_bc, gbb - p.chi_bc];
    let gc = [p.chi_ac - gcc, p.chi_bc - gcc];
    [
        [ga[0] - gb[0], ga[1] - gb[1]],
        [ga[0] - gc[0], ga[1] - gc[1]],
        [gb[0] - gc[0], gb[1] - gc[1]],
    ]
}

/// Chemical-potential differences `(mu_ab, mu_ac, mu_bc)`.
pub fn mu_differences(
    f: &FieldPair,
    k: &KappaSet,
    p: &BlendParams,
) -> (ScalarField, ScalarField, ScalarField) {
    let g = *f.grid();
    let n = g.len();
    let mut lap_a = vec![0.0; n];
    let mut lap_b = vec![0.0; n];
    let mut mu = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    mu_into(
        &g,
        f.a.values(),
        f.b.values(),
        k,
        p,
        &mut lap_a,
        &mut lap_b,
        &mut mu,
    );
    let [mab, mac, mbc] = mu;
    (
        ScalarField::from_raw(g, mab),
        ScalarField::from_raw(g, mac),
        ScalarField::from_raw(g, mbc),
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn mu_into(
    g: &GridSpec,
    a: &[f64],
    b: &[f64],
    k: &KappaSet,
    p: &BlendParams,
    lap_a: &mut [f64],
    lap_b: &mut [f64],
    mu: &mut [Vec<f64>; 3],
) {
    laplacian_into(g, a, lap_a);
    laplacian_into(g, b, lap_b);
    let [mab, mac, mbc] = mu;
    for i in 0..a.len() {
        let (ga, gb, gc) = dg_partials(a[i], b[i], p);
        let (la, lb) = (lap_a[i], lap_b[i]);
        mab[i] = ga - gb - (k.k_a - k.k_ab) * la + (k.k_b - k.k_ab) * lb;
        mac[i] = ga - gc - k.k_a * la - k.k_ab * lb;
        mbc[i] = gb - gc - k.k_b * lb - k.k_ab * la;
    }
}

#[inline]
fn face_energy(k: &KappaSet, da: f64, db: f64) -> f64 {
    0.5 * k.k_a * da * da + 0.5 * k.k_b * db * db + k.k_ab * da * db
}

/// Total Gibbs energy of the domain (units of RT per unit depth).
///
/// Gradients live on cell faces: each interior face contributes its
/// difference quotient once, and the zero-flux faces on the y boundaries
/// contribute nothing.
pub fn gibbs_total(f: &FieldPair, k: &KappaSet, p: &BlendParams) -> f64 {
    gibbs_raw(f.grid(), f.a.values(), f.b.values(), k, p)
}

pub(crate) fn gibbs_raw(g: &GridSpec, a: &[f64], b: &[f64], k: &KappaSet, p: &BlendParams) -> f64 {
    let (nx, ny) = (g.nx, g.ny);
    let idx2 = 1.0 / (g.dx() * g.dx());
    let idy2 = 1.0 / (g.dy() * g.dy());
    let mut bulk = 0.0;
    let mut grad_x = 0.0;
    let mut grad_y = 0.0;
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let c = row + i;
            bulk += homog_energy(a[c], b[c], p);
            let r = row + if i + 1 == nx { 0 } else { i + 1 };
            grad_x += face_energy(k, a[r] - a[c], b[r] - b[c]);
            if j + 1 < ny {
                let u = c + nx;
                grad_y += face_energy(k, a[u] - a[c], b[u] - b[c]);
            }
        }
    }
    g.cell_area() * (bulk + grad_x * idx2 + grad_y * idy2)
}
