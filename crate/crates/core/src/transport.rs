//! Implicit time step of the coupled transport system
//!
//! ```text
//! da/dt = n div( ab grad mu_ab + ac grad mu_ac )
//! db/dt = n div(-ab grad mu_ab + bc grad mu_bc )
//! ```
//!
//! discretised with backward Euler. Each outer iteration freezes the
//! mobilities `ab, ac, bc` at the current iterate, linearises the chemical
//! potentials and solves the resulting linear system with right-preconditioned
//! GMRES. The preconditioner is the same operator with constant coefficients,
//! which is diagonalised exactly by the eigenvectors of the 1-D periodic and
//! zero-flux Laplacians.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::energetics::{constrained_hessian, mu_into, BlendParams, KappaSet};
use crate::grid::{div_mobility_grad_add, div_mobility_grad_into, laplacian_into, GridSpec};

/// Controls for the nonlinear and linear solves inside one step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveControls {
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
}

/// Why an implicit step was rejected.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum StepFailure {
    NotConverged { residual: f64 },
    NonFinite,
    OutOfBounds { value: f64 },
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::NotConverged { residual } => {
                write!(f, "nonlinear iteration stalled at residual {residual:.3e}")
            }
            StepFailure::NonFinite => write!(f, "non-finite value in fields"),
            StepFailure::OutOfBounds { value } => {
                write!(f, "mole fraction {value:.4} left [-0.05, 1.05]")
            }
        }
    }
}

pub(crate) const BOUND_LO: f64 = -0.05;
pub(crate) const BOUND_HI: f64 = 1.05;

/// Eigen-decomposition of the 1-D second-difference operators on each axis.
struct AxisBasis {
    /// Orthonormal eigenvectors as columns.
    q: DMatrix<f64>,
    qt: DMatrix<f64>,
    /// Eigenvalues of the negated operator, all >= 0.
    lambda: Vec<f64>,
}

impl AxisBasis {
    fn new(n: usize, h: f64, periodic: bool) -> Self {
        let mut m = DMatrix::<f64>::zeros(n, n);
        let ih2 = 1.0 / (h * h);
        for i in 0..n {
            m[(i, i)] = 2.0 * ih2;
            if i + 1 < n {
                m[(i, i + 1)] = -ih2;
                m[(i + 1, i)] = -ih2;
            }
        }
        if periodic {
            m[(0, n - 1)] = -ih2;
            m[(n - 1, 0)] = -ih2;
        } else {
            // mirrored ghost cells
            m[(0, 0)] = ih2;
            m[(n - 1, n - 1)] = ih2;
        }
        let eig = SymmetricEigen::new(m);
        let lambda = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        AxisBasis {
            qt: eig.eigenvectors.transpose(),
            q: eig.eigenvectors,
            lambda,
        }
    }
}

/// Spectral solver for the constant-coefficient system.
struct Preconditioner {
    bx: AxisBasis,
    by: AxisBasis,
    /// Inverse 2x2 blocks per mode, row-major `[m00, m01, m10, m11]`,
    /// indexed like the cells (`jy * nx + ix`).
    inv: Vec<[f64; 4]>,
}

impl Preconditioner {
    fn new(g: &GridSpec) -> Self {
        Preconditioner {
            bx: AxisBasis::new(g.nx, g.dx(), true),
            by: AxisBasis::new(g.ny, g.dy(), false),
            inv: vec![[1.0, 0.0, 0.0, 1.0]; g.len()],
        }
    }

    /// Rebuild the per-mode blocks for mobilities `mob = [ab, ac, bc]`,
    /// constrained Hessian `h` and time factor `tau = dt * n`.
    fn update(&mut self, mob: [f64; 3], h: &[[f64; 2]; 3], k: &KappaSet, tau: f64) {
        let nx = self.bx.lambda.len();
        let [m_ab, m_ac, m_bc] = mob;
        for (jy, ly) in self.by.lambda.iter().enumerate() {
            for (ix, lx) in self.bx.lambda.iter().enumerate() {
                let lam = lx + ly;
                // mu rows: d(mu)/d(a, b) for this mode
                let r_ab = [
                    h[0][0] + lam * (k.k_a - k.k_ab),
                    h[0][1] - lam * (k.k_b - k.k_ab),
                ];
                let r_ac = [h[1][0] + lam * k.k_a, h[1][1] + lam * k.k_ab];
                let r_bc = [h[2][0] + lam * k.k_ab, h[2][1] + lam * k.k_b];
                let f = tau * lam;
                let j00 = 1.0 + f * (m_ab * r_ab[0] + m_ac * r_ac[0]);
                let j01 = f * (m_ab * r_ab[1] + m_ac * r_ac[1]);
                let j10 = f * (m_bc * r_bc[0] - m_ab * r_ab[0]);
                let j11 = 1.0 + f * (m_bc * r_bc[1] - m_ab * r_ab[1]);
                let det = j00 * j11 - j01 * j10;
                self.inv[jy * nx + ix] = if det.abs() > 1e-300 {
                    [j11 / det, -j01 / det, -j10 / det, j00 / det]
                } else {
                    [1.0, 0.0, 0.0, 1.0]
                };
            }
        }
    }

    /// `out = P^{-1} v` for a stacked `[a; b]` vector.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let nx = self.bx.lambda.len();
        let ny = self.by.lambda.len();
        let n = nx * ny;
        let va = DMatrix::from_row_slice(ny, nx, &v[..n]);
        let vb = DMatrix::from_row_slice(ny, nx, &v[n..]);
        let ha = &self.by.qt * va * &self.bx.q;
        let hb = &self.by.qt * vb * &self.bx.q;
        let mut sa = DMatrix::<f64>::zeros(ny, nx);
        let mut sb = DMatrix::<f64>::zeros(ny, nx);
        for jy in 0..ny {
            for ix in 0..nx {
                let m = &self.inv[jy * nx + ix];
                let (x, y) = (ha[(jy, ix)], hb[(jy, ix)]);
                sa[(jy, ix)] = m[0] * x + m[1] * y;
                sb[(jy, ix)] = m[2] * x + m[3] * y;
            }
        }
        let ra = &self.by.q * sa * &self.bx.qt;
        let rb = &self.by.q * sb * &self.bx.qt;
        for jy in 0..ny {
            for ix in 0..nx {
                out[jy * nx + ix] = ra[(jy, ix)];
                out[n + jy * nx + ix] = rb[(jy, ix)];
            }
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // Pair the a- and b-halves so that exchanging species does not change
    // the summation order.
    let n = x.len() / 2;
    let mut s = 0.0;
    for i in 0..n {
        s += x[i] * y[i] + x[n + i] * y[n + i];
    }
    s
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Reusable state for stepping one grid/parameter combination.
pub(crate) struct Transport {
    grid: GridSpec,
    params: BlendParams,
    kappa: KappaSet,
    /// Time-scale chain length multiplying the fluxes.
    scale: f64,
    precond: Preconditioner,
    // scratch
    lap_a: Vec<f64>,
    lap_b: Vec<f64>,
    mu: [Vec<f64>; 3],
    /// Potentials at the current iterate, kept for the Jacobian.
    mu_cur: [Vec<f64>; 3],
    mob: [Vec<f64>; 3],
    dmob: [Vec<f64>; 3],
    /// Per-cell mobility sensitivities, `[d/da, d/db]` for `ab, ac, bc`.
    mob_grad: Vec<[[f64; 2]; 3]>,
    hess: Vec<[[f64; 2]; 3]>,
    div: [Vec<f64>; 3],
    /// Running count of GMRES iterations.
    pub linear_iterations: usize,
}

impl Transport {
    pub fn new(grid: GridSpec, params: BlendParams, kappa: KappaSet) -> Self {
        let n = grid.len();
        Transport {
            grid,
            params,
            kappa,
            scale: params.time_scale_chain_length(),
            precond: Preconditioner::new(&grid),
            lap_a: vec![0.0; n],
            lap_b: vec![0.0; n],
            mu: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            mu_cur: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            mob: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            dmob: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            mob_grad: vec![[[0.0; 2]; 3]; n],
            hess: vec![[[0.0; 2]; 3]; n],
            div: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            linear_iterations: 0,
        }
    }

    fn set_mobilities(&mut self, u: &[f64]) {
        let n = self.grid.len();
        let [m_ab, m_ac, m_bc] = &mut self.mob;
        for i in 0..n {
            let a = u[i].max(0.0);
            let b = u[n + i].max(0.0);
            let c = (1.0 - u[i] - u[n + i]).max(0.0);
            m_ab[i] = a * b;
            m_ac[i] = a * c;
            m_bc[i] = b * c;
        }
    }

    /// Fluxes `(F_a, F_b)` of the current mobilities and potentials `self.mu`.
    fn flux_divergence(&mut self, out: &mut [f64]) {
        let n = self.grid.len();
        for k in 0..3 {
            div_mobility_grad_into(&self.grid, &self.mob[k], &self.mu[k], &mut self.div[k]);
        }
        let s = self.scale;
        let [d_ab, d_ac, d_bc] = &self.div;
        for i in 0..n {
            out[i] = s * (d_ab[i] + d_ac[i]);
            out[n + i] = s * (d_bc[i] - d_ab[i]);
        }
    }

    /// Nonlinear backward-Euler residual `u - u_old - dt F(u)`.
    fn residual(&mut self, u: &[f64], u_old: &[f64], dt: f64, out: &mut [f64]) {
        let n = self.grid.len();
        self.set_mobilities(u);
        mu_into(
            &self.grid,
            &u[..n],
            &u[n..],
            &self.kappa,
            &self.params,
            &mut self.lap_a,
            &mut self.lap_b,
            &mut self.mu,
        );
        self.flux_divergence(out);
        for i in 0..2 * n {
            out[i] = u[i] - u_old[i] - dt * out[i];
        }
    }

    /// Record everything the Jacobian needs at iterate `u`. Assumes
    /// `self.mu` and `self.mob` were just filled by [`Self::residual`] at `u`.
    fn set_linearisation(&mut self, u: &[f64]) {
        let n = self.grid.len();
        for k in 0..3 {
            self.mu_cur[k].copy_from_slice(&self.mu[k]);
        }
        let pos = |x: f64| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) };
        for i in 0..n {
            let (a, b) = (u[i], u[n + i]);
            self.hess[i] = constrained_hessian(a, b, &self.params);
            let (ap, ai) = pos(a);
            let (bp, bi) = pos(b);
            let (cp, ci) = pos(1.0 - a - b);
            // dc = -da - db
            self.mob_grad[i] = [
                [ai * bp, ap * bi],
                [ai * cp - ap * ci, -ap * ci],
                [-bp * ci, bi * cp - bp * ci],
            ];
        }
    }

    /// Jacobian of the residual applied to `v`: `v - dt * dF(v)`, where
    /// `dF` covers both the potential and the mobility variations.
    fn jacobian_apply(&mut self, v: &[f64], dt: f64, out: &mut [f64]) {
        let n = self.grid.len();
        let k = self.kappa;
        for i in 0..n {
            let (da, db) = (v[i], v[n + i]);
            let mg = &self.mob_grad[i];
            for m in 0..3 {
                self.dmob[m][i] = mg[m][0] * da + mg[m][1] * db;
            }
        }
        laplacian_into(&self.grid, &v[..n], &mut self.lap_a);
        laplacian_into(&self.grid, &v[n..], &mut self.lap_b);
        {
            let [mab, mac, mbc] = &mut self.mu;
            for i in 0..n {
                let (da, db) = (v[i], v[n + i]);
                let (la, lb) = (self.lap_a[i], self.lap_b[i]);
                let h = &self.hess[i];
                mab[i] =
                    h[0][0] * da + h[0][1] * db - (k.k_a - k.k_ab) * la + (k.k_b - k.k_ab) * lb;
                mac[i] = h[1][0] * da + h[1][1] * db - k.k_a * la - k.k_ab * lb;
                mbc[i] = h[2][0] * da + h[2][1] * db - k.k_b * lb - k.k_ab * la;
            }
        }
        for m in 0..3 {
            div_mobility_grad_into(&self.grid, &self.mob[m], &self.mu[m], &mut self.div[m]);
            div_mobility_grad_add(&self.grid, &self.dmob[m], &self.mu_cur[m], &mut self.div[m]);
        }
        let s = self.scale;
        let [d_ab, d_ac, d_bc] = &self.div;
        for i in 0..n {
            out[i] = v[i] - dt * s * (d_ab[i] + d_ac[i]);
            out[n + i] = v[n + i] - dt * s * (d_bc[i] - d_ab[i]);
        }
    }

    fn update_preconditioner(&mut self, u: &[f64], dt: f64) {
        let n = self.grid.len();
        let inv_n = 1.0 / n as f64;
        let mut mob = [0.0; 3];
        for (k, m) in self.mob.iter().enumerate() {
            mob[k] = m.iter().sum::<f64>() * inv_n;
        }
        let mut ma = 0.0;
        let mut mb = 0.0;
        for i in 0..n {
            ma += u[i];
            mb += u[n + i];
        }
        let h = constrained_hessian(ma * inv_n, mb * inv_n, &self.params);
        let tau = dt * self.scale;
        self.precond.update(mob, &h, &self.kappa, tau);
    }

    /// Restarted, right-preconditioned GMRES for `J x = rhs`.
    /// Returns the relative residual reached.
    fn gmres(&mut self, rhs: &[f64], dt: f64, tol: f64, max_iter: usize, x: &mut [f64]) -> f64 {
        const RESTART: usize = 40;
        let len = rhs.len();
        x.iter_mut().for_each(|v| *v = 0.0);
        let beta0 = norm(rhs);
        if beta0 == 0.0 {
            return 0.0;
        }
        let mut r = rhs.to_vec();
        let mut w = vec![0.0; len];
        let mut z = vec![0.0; len];
        let mut total = 0;
        let mut rel = 1.0;
        while total < max_iter {
            let beta = norm(&r);
            rel = beta / beta0;
            if rel <= tol {
                break;
            }
            let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
            let mut hmat = vec![vec![0.0; RESTART]; RESTART + 1];
            let mut cs = vec![0.0; RESTART];
            let mut sn = vec![0.0; RESTART];
            let mut gvec = vec![0.0; RESTART + 1];
            gvec[0] = beta;
            let mut used = 0;
            for j in 0..RESTART {
                self.precond.apply(&basis[j], &mut z);
                self.jacobian_apply(&z, dt, &mut w);
                for i in 0..=j {
                    let hij = dot(&w, &basis[i]);
                    hmat[i][j] = hij;
                    for (wv, bv) in w.iter_mut().zip(&basis[i]) {
                        *wv -= hij * bv;
                    }
                }
                let hn = norm(&w);
                hmat[j + 1][j] = hn;
                for i in 0..j {
                    let t = cs[i] * hmat[i][j] + sn[i] * hmat[i + 1][j];
                    hmat[i + 1][j] = -sn[i] * hmat[i][j] + cs[i] * hmat[i + 1][j];
                    hmat[i][j] = t;
                }
                let denom = hmat[j][j].hypot(hmat[j + 1][j]);
                cs[j] = hmat[j][j] / denom;
                sn[j] = hmat[j + 1][j] / denom;
                hmat[j][j] = denom;
                hmat[j + 1][j] = 0.0;
                gvec[j + 1] = -sn[j] * gvec[j];
                gvec[j] *= cs[j];
                used = j + 1;
                total += 1;
                self.linear_iterations += 1;
                rel = gvec[j + 1].abs() / beta0;
                if rel <= tol || total >= max_iter || hn == 0.0 {
                    break;
                }
                basis.push(w.iter().map(|v| v / hn).collect());
            }
            // back substitution
            let mut y = vec![0.0; used];
            for i in (0..used).rev() {
                let mut s = gvec[i];
                for k in i + 1..used {
                    s -= hmat[i][k] * y[k];
                }
                y[i] = s / hmat[i][i];
            }
            w.iter_mut().for_each(|v| *v = 0.0);
            for (yi, bi) in y.iter().zip(&basis) {
                for (wv, bv) in w.iter_mut().zip(bi) {
                    *wv += yi * bv;
                }
            }
            self.precond.apply(&w, &mut z);
            for (xv, zv) in x.iter_mut().zip(&z) {
                *xv += zv;
            }
            // true residual for the restart
            self.jacobian_apply(x, dt, &mut w);
            for i in 0..len {
                r[i] = rhs[i] - w[i];
            }
            if rel <= tol {
                rel = norm(&r) / beta0;
                break;
            }
        }
        rel
    }

    /// Advance `u` (stacked `[a; b]`) by one implicit step in place.
    /// Returns the number of outer iterations used.
    ///
    /// `prev`, when given, is the state one step earlier and is used for a
    /// linear-extrapolation initial guess.
    pub fn step(
        &mut self,
        u: &mut Vec<f64>,
        prev: Option<&[f64]>,
        ctl: &SolveControls,
    ) -> Result<usize, StepFailure> {
        let len = u.len();
        let u_old = u.clone();
        if let Some(p) = prev {
            for i in 0..len {
                u[i] = 2.0 * u_old[i] - p[i];
            }
        }
        let mut res = vec![0.0; len];
        let mut delta = vec![0.0; len];
        let mut trial = vec![0.0; len];
        let mut trial_res = vec![0.0; len];
        self.residual(u, &u_old, ctl.dt, &mut res);
        let mut rnorm = max_abs(&res);
        let mut iter = 0;
        while rnorm >= ctl.newton_tol {
            if iter >= ctl.newton_max_iter {
                return Err(StepFailure::NotConverged { residual: rnorm });
            }
            iter += 1;
            // `self.mob` holds the mobilities of `u` from the last residual.
            self.set_linearisation(u);
            self.update_preconditioner(u, ctl.dt);
            let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
            // Solve only as accurately as the outer iteration needs.
            let forcing = (0.5 * ctl.newton_tol / rnorm)
                .clamp(1e-3, 1e-1)
                .max(ctl.linear_tol);
            let before = self.linear_iterations;
            let rel = self.gmres(&rhs, ctl.dt, forcing, ctl.linear_max_iter, &mut delta);
            log::trace!(
                "outer {iter} res {rnorm:.3e} gmres {} rel {rel:.2e}",
                self.linear_iterations - before
            );
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(StepFailure::NonFinite);
            }
            // Take the full correction, halving it while the residual grows.
            let mut omega = 1.0;
            loop {
                for i in 0..len {
                    trial[i] = u[i] + omega * delta[i];
                }
                self.residual(&trial, &u_old, ctl.dt, &mut trial_res);
                let tn = max_abs(&trial_res);
                if tn.is_finite() && (tn < rnorm || omega < 1.0 / 64.0) {
                    std::mem::swap(u, &mut trial);
                    std::mem::swap(&mut res, &mut trial_res);
                    rnorm = tn;
                    break;
                }
                omega *= 0.5;
            }
            if !rnorm.is_finite() {
                return Err(StepFailure::NonFinite);
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(StepFailure::NonFinite);
        }
        let n = len / 2;
        for i in 0..n {
            let (a, b) = (u[i], u[n + i]);
            for v in [a, b, 1.0 - a - b] {
                if !(BOUND_LO..=BOUND_HI).contains(&v) {
                    return Err(StepFailure::OutOfBounds { value: v });
                }
            }
        }
        Ok(iter)
    }
}
