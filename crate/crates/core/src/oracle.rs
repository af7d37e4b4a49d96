//! Reference implementations used by the verification suite: dense operator
//! matrices assembled directly from the stencil definitions, and a dense
//! monolithic Newton solve of the full space-time system.
//!
//! Everything here is written against `nalgebra` dense matrices and kept
//! independent of the sparse solver path in [`crate::forward`]; the test
//! suites compare the two routes against each other.

use crate::grid::{CellField, FaceField, GridSpec};
use crate::physics::PhysConfig;
use crate::potential::{mollified_yosida, PotentialParams};
use nalgebra::{DMatrix, DVector};

/// Number of combined face dofs (x-faces then y-faces).
pub fn n_faces(grid: &GridSpec) -> usize {
    grid.n_xfaces() + grid.n_yfaces()
}

fn fx(grid: &GridSpec, i: usize, j: usize) -> usize {
    grid.xface(i, j)
}

fn fy(grid: &GridSpec, i: usize, j: usize) -> usize {
    grid.n_xfaces() + grid.yface(i, j)
}

/// Dense gradient matrix, cells to faces, Neumann closure (boundary rows 0).
pub fn dense_grad(grid: &GridSpec) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_faces(grid), grid.n_cells());
    let (hx, hy) = (grid.hx(), grid.hy());
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            m[(fx(grid, i, j), grid.cell(i, j))] = 1.0 / hx;
            m[(fx(grid, i, j), grid.cell(i - 1, j))] = -1.0 / hx;
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            m[(fy(grid, i, j), grid.cell(i, j))] = 1.0 / hy;
            m[(fy(grid, i, j), grid.cell(i, j - 1))] = -1.0 / hy;
        }
    }
    m
}

/// Dense divergence matrix, faces to cells; boundary-face columns stay zero.
pub fn dense_div(grid: &GridSpec) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(grid.n_cells(), n_faces(grid));
    let (hx, hy) = (grid.hx(), grid.hy());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell(i, j);
            if i > 0 {
                m[(c, fx(grid, i, j))] = -1.0 / hx;
            }
            if i + 1 < grid.nx {
                m[(c, fx(grid, i + 1, j))] = 1.0 / hx;
            }
            if j > 0 {
                m[(c, fy(grid, i, j))] = -1.0 / hy;
            }
            if j + 1 < grid.ny {
                m[(c, fy(grid, i, j + 1))] = 1.0 / hy;
            }
        }
    }
    m
}

/// Dense Neumann Laplacian `div . grad`.
pub fn dense_lap(grid: &GridSpec) -> DMatrix<f64> {
    dense_div(grid) * dense_grad(grid)
}

/// Two-point cell-to-face average with one-sided copies at boundary faces
/// (coefficient interpolation).
pub fn dense_avg_c2f(grid: &GridSpec) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_faces(grid), grid.n_cells());
    for j in 0..grid.ny {
        for i in 0..=grid.nx {
            let r = fx(grid, i, j);
            if i == 0 {
                m[(r, grid.cell(0, j))] = 1.0;
            } else if i == grid.nx {
                m[(r, grid.cell(grid.nx - 1, j))] = 1.0;
            } else {
                m[(r, grid.cell(i - 1, j))] = 0.5;
                m[(r, grid.cell(i, j))] = 0.5;
            }
        }
    }
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            let r = fy(grid, i, j);
            if j == 0 {
                m[(r, grid.cell(i, 0))] = 1.0;
            } else if j == grid.ny {
                m[(r, grid.cell(i, grid.ny - 1))] = 1.0;
            } else {
                m[(r, grid.cell(i, j - 1))] = 0.5;
                m[(r, grid.cell(i, j))] = 0.5;
            }
        }
    }
    m
}

/// Face-to-cell half-weight average (the transport pairing stencil): each
/// cell row holds 1/2 on its four adjacent face columns.
pub fn dense_avg_f2c(grid: &GridSpec) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(grid.n_cells(), n_faces(grid));
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell(i, j);
            m[(c, fx(grid, i, j))] = 0.5;
            m[(c, fx(grid, i + 1, j))] = 0.5;
            m[(c, fy(grid, i, j))] = 0.5;
            m[(c, fy(grid, i, j + 1))] = 0.5;
        }
    }
    m
}

/// Dense symmetric-gradient matrix: rows `xx` at cells, `yy` at cells, `xy`
/// at nodes (single shear row per node).
pub fn dense_symgrad(grid: &GridSpec) -> DMatrix<f64> {
    let n = grid.n_cells();
    let mut m = DMatrix::zeros(2 * n + grid.n_nodes(), n_faces(grid));
    let (hx, hy) = (grid.hx(), grid.hy());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell(i, j);
            m[(c, fx(grid, i + 1, j))] = 1.0 / hx;
            m[(c, fx(grid, i, j))] = -1.0 / hx;
            m[(n + c, fy(grid, i, j + 1))] = 1.0 / hy;
            m[(n + c, fy(grid, i, j))] = -1.0 / hy;
        }
    }
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let r = 2 * n + grid.node(i, j);
            if j == 0 {
                m[(r, fx(grid, i, 0))] += 1.0 / hy;
            } else if j == grid.ny {
                m[(r, fx(grid, i, grid.ny - 1))] += -1.0 / hy;
            } else {
                m[(r, fx(grid, i, j))] += 0.5 / hy;
                m[(r, fx(grid, i, j - 1))] += -0.5 / hy;
            }
            if i == 0 {
                m[(r, fy(grid, 0, j))] += 1.0 / hx;
            } else if i == grid.nx {
                m[(r, fy(grid, grid.nx - 1, j))] += -1.0 / hx;
            } else {
                m[(r, fy(grid, i, j))] += 0.5 / hx;
                m[(r, fy(grid, i - 1, j))] += -0.5 / hx;
            }
        }
    }
    m
}

/// Dense raw advection matrix `A(nu)` on the combined face space; rows only
/// at interior faces, odd reflection across walls.
pub fn dense_advect(grid: &GridSpec, nu: &FaceField) -> DMatrix<f64> {
    let nf = n_faces(grid);
    let mut m = DMatrix::zeros(nf, nf);
    let (hx, hy) = (grid.hx(), grid.hy());
    let nx = grid.nx;
    let ny = grid.ny;
    for j in 0..ny {
        for i in 1..nx {
            let r = fx(grid, i, j);
            let nux = nu.x()[grid.xface(i, j)];
            m[(r, fx(grid, i + 1, j))] += nux * 0.5 / hx;
            m[(r, fx(grid, i - 1, j))] += -nux * 0.5 / hx;
            let nuy = 0.25
                * (nu.y()[grid.yface(i - 1, j)]
                    + nu.y()[grid.yface(i, j)]
                    + nu.y()[grid.yface(i - 1, j + 1)]
                    + nu.y()[grid.yface(i, j + 1)]);
            if j + 1 < ny {
                m[(r, fx(grid, i, j + 1))] += nuy * 0.5 / hy;
            } else {
                m[(r, fx(grid, i, ny - 1))] += -nuy * 0.5 / hy;
            }
            if j > 0 {
                m[(r, fx(grid, i, j - 1))] += -nuy * 0.5 / hy;
            } else {
                m[(r, fx(grid, i, 0))] += nuy * 0.5 / hy;
            }
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let r = fy(grid, i, j);
            let nuy = nu.y()[grid.yface(i, j)];
            m[(r, fy(grid, i, j + 1))] += nuy * 0.5 / hy;
            m[(r, fy(grid, i, j - 1))] += -nuy * 0.5 / hy;
            let nux = 0.25
                * (nu.x()[grid.xface(i, j - 1)]
                    + nu.x()[grid.xface(i + 1, j - 1)]
                    + nu.x()[grid.xface(i, j)]
                    + nu.x()[grid.xface(i + 1, j)]);
            if i + 1 < nx {
                m[(r, fy(grid, i + 1, j))] += nux * 0.5 / hx;
            } else {
                m[(r, fy(grid, nx - 1, j))] += -nux * 0.5 / hx;
            }
            if i > 0 {
                m[(r, fy(grid, i - 1, j))] += -nux * 0.5 / hx;
            } else {
                m[(r, fy(grid, 0, j))] += nux * 0.5 / hx;
            }
        }
    }
    m
}

/// Selection matrix mapping interior-face unknowns into the combined face
/// space (columns ordered `vx` row-major by `(i-1, j)`, then `vy`).
pub fn dense_interior_embed(grid: &GridSpec) -> DMatrix<f64> {
    let mi = grid.n_xfaces_interior() + grid.n_yfaces_interior();
    let mut m = DMatrix::zeros(n_faces(grid), mi);
    // columns follow the solver layout: x interior faces first, then y
    let mut col = 0;
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            m[(fx(grid, i, j), col)] = 1.0;
            col += 1;
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            m[(fy(grid, i, j), col)] = 1.0;
            col += 1;
        }
    }
    m
}

/// Face field as a combined dense vector.
pub fn face_to_vec(grid: &GridSpec, f: &FaceField) -> DVector<f64> {
    let mut v = DVector::zeros(n_faces(grid));
    for (k, val) in f.x().iter().enumerate() {
        v[k] = *val;
    }
    for (k, val) in f.y().iter().enumerate() {
        v[grid.n_xfaces() + k] = *val;
    }
    v
}

pub fn cell_to_vec(f: &CellField) -> DVector<f64> {
    DVector::from_column_slice(f.values())
}

/// Monolithic space-time residual of the semi-discrete system, assembled
/// densely. State layout: step 0 `[phi | mu | ca | cb]`, then for each
/// coupled step `[phi | mu | vx | vy | p | ca | cb | cg]`.
pub struct DenseSystem {
    pub grid: GridSpec,
    pub cfg: PhysConfig,
    pub pot: PotentialParams,
    pub phi_a: CellField,
    pub v_a: FaceField,
    pub controls: Vec<FaceField>,
    // cached operators
    grad: DMatrix<f64>,
    div: DMatrix<f64>,
    lap: DMatrix<f64>,
    avg_c2f: DMatrix<f64>,
    avg_f2c: DMatrix<f64>,
    symgrad: DMatrix<f64>,
    embed: DMatrix<f64>,
}

impl DenseSystem {
    pub fn new(
        cfg: &PhysConfig,
        pot: &PotentialParams,
        phi_a: &CellField,
        v_a: &FaceField,
        controls: &[FaceField],
    ) -> Self {
        let grid = cfg.grid;
        DenseSystem {
            grid,
            cfg: cfg.clone(),
            pot: *pot,
            phi_a: phi_a.clone(),
            v_a: v_a.clone(),
            controls: controls.to_vec(),
            grad: dense_grad(&grid),
            div: dense_div(&grid),
            lap: dense_lap(&grid),
            avg_c2f: dense_avg_c2f(&grid),
            avg_f2c: dense_avg_f2c(&grid),
            symgrad: dense_symgrad(&grid),
            embed: dense_interior_embed(&grid),
        }
    }

    pub fn n_init(&self) -> usize {
        2 * self.grid.n_cells() + 2
    }

    pub fn n_step(&self) -> usize {
        let mi = self.grid.n_xfaces_interior() + self.grid.n_yfaces_interior();
        3 * self.grid.n_cells() + mi + 3
    }

    pub fn n_total(&self) -> usize {
        self.n_init() + (self.cfg.n_time - 1) * self.n_step()
    }

    fn step_offset(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.n_init() + (k - 1) * self.n_step()
        }
    }

    fn gamma_vec(&self, phi: &DVector<f64>) -> DVector<f64> {
        phi.map(|v| mollified_yosida(v, &self.pot))
    }

    /// Full nonlinear residual of the stacked system.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let grid = &self.grid;
        let n = grid.n_cells();
        let mi = grid.n_xfaces_interior() + grid.n_yfaces_interior();
        let tau = self.cfg.tau;
        let kappa = self.pot.kappa();
        let s = self.cfg.rho_slope();
        let mut r = DVector::zeros(self.n_total());

        let phi_a = cell_to_vec(&self.phi_a);
        let va = face_to_vec(grid, &self.v_a);

        let mob = |phi: &DVector<f64>| -> DVector<f64> {
            &self.avg_c2f * phi.map(|v| self.cfg.mobility.eval(v))
        };
        let rho_f = |phi: &DVector<f64>| -> DVector<f64> {
            &self.avg_c2f * phi.map(|v| self.cfg.density_scalar(v))
        };

        // previous-state views per step
        let mut prev_phi;
        let mut prev2_phi;
        let mut prev_mu: DVector<f64>;
        let mut prev_v = va.clone();

        // step 0
        {
            let off = 0;
            let phi = x.rows(off, n).into_owned();
            let mu = x.rows(off + n, n).into_owned();
            let ca = x[off + 2 * n];
            let cb = x[off + 2 * n + 1];
            let mf = mob(&phi_a);
            let gp = &self.grad * &phi_a;
            let trans = &self.avg_f2c * va.component_mul(&gp);
            let diff = &self.div * mf.component_mul(&(&self.grad * &mu));
            let rt = (&phi - &phi_a) / tau + trans - diff;
            let rp = -(&self.lap * &phi) + self.gamma_vec(&phi) - &mu - kappa * &phi_a;
            for c in 0..n {
                r[off + c] = rt[c] + ca;
                r[off + n + c] = rp[c] + cb;
            }
            r[off + 2 * n] = phi.mean();
            r[off + 2 * n + 1] = mu.mean();
            prev2_phi = phi_a.clone();
            prev_phi = phi;
            prev_mu = mu;
        }

        for k in 1..self.cfg.n_time {
            let off = self.step_offset(k);
            let phi = x.rows(off, n).into_owned();
            let mu = x.rows(off + n, n).into_owned();
            let vint = x.rows(off + 2 * n, mi).into_owned();
            let v = &self.embed * &vint;
            let p = x.rows(off + 2 * n + mi, n).into_owned();
            let ca = x[off + 3 * n + mi];
            let cb = x[off + 3 * n + mi + 1];
            let cg = x[off + 3 * n + mi + 2];

            let mf_prev = mob(&prev_phi);
            let gp_prev = &self.grad * &prev_phi;
            let rhof_prev = rho_f(&prev_phi);
            let rhof_prev2 = rho_f(&prev2_phi);
            let mf_prev2 = mob(&prev2_phi);
            let nu = rhof_prev2.component_mul(&prev_v)
                - s * mf_prev2.component_mul(&(&self.grad * &prev_mu));

            let trans = &self.avg_f2c * v.component_mul(&gp_prev);
            let diff = &self.div * mf_prev.component_mul(&(&self.grad * &mu));
            let rt = (&phi - &prev_phi) / tau + trans - diff;
            let rp = -(&self.lap * &phi) + self.gamma_vec(&phi) - &mu - kappa * &prev_phi;
            for c in 0..n {
                r[off + c] = rt[c] + ca;
                r[off + n + c] = rp[c] + cb;
            }

            // momentum on interior faces
            let nu_field = vec_to_face(grid, &nu);
            let a = dense_advect(grid, &nu_field);
            let skew = (&a - a.transpose()) * 0.5;
            let divnu = &self.div * &nu;
            let half_div = &self.avg_f2c.transpose() * &divnu; // 1/2 avg onto faces
            let eta_cells: Vec<f64> = prev_phi.iter().map(|&v| self.cfg.viscosity.eval(v)).collect();
            let eta_cells_field =
                CellField::from_values(grid, eta_cells.clone()).expect("shape");
            let eta_nodes = crate::ops::coeff_at_nodes(grid, &eta_cells_field);
            let mut weights = DVector::zeros(2 * n + grid.n_nodes());
            for c in 0..n {
                weights[c] = 2.0 * eta_cells[c];
                weights[n + c] = 2.0 * eta_cells[c];
            }
            for nd in 0..grid.n_nodes() {
                weights[2 * n + nd] = 4.0 * eta_nodes[nd];
            }
            let eps_v = &self.symgrad * &v;
            let visc = -(&self.symgrad.transpose() * weights.component_mul(&eps_v));

            let u = face_to_vec(grid, &self.controls[k - 1]);
            let mom = (rhof_prev.component_mul(&v) - rhof_prev2.component_mul(&prev_v)) / tau
                + &skew * &v
                + 0.5 * half_div.component_mul(&v)
                - visc
                + &self.grad * &p
                - (&self.avg_c2f * &mu).component_mul(&gp_prev)
                - u;
            let mom_int = &self.embed.transpose() * mom;
            for d in 0..mi {
                r[off + 2 * n + d] = mom_int[d];
            }
            let dv = &self.div * &v;
            for c in 0..n {
                r[off + 2 * n + mi + c] = dv[c] + cg;
            }
            r[off + 3 * n + mi] = phi.mean();
            r[off + 3 * n + mi + 1] = mu.mean();
            r[off + 3 * n + mi + 2] = p.mean();

            prev2_phi = prev_phi;
            prev_phi = phi;
            prev_mu = mu;
            prev_v = v;
        }
        let _ = prev_mu;
        r
    }

    /// Finite-difference Jacobian of [`Self::residual`].
    pub fn fd_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let nt = self.n_total();
        let mut j = DMatrix::zeros(nt, nt);
        let h = 1e-7;
        for col in 0..nt {
            let mut xp = x.clone();
            xp[col] += h;
            let mut xm = x.clone();
            xm[col] -= h;
            let diff = (self.residual(&xp) - self.residual(&xm)) / (2.0 * h);
            j.set_column(col, &diff);
        }
        j
    }

    /// Monolithic Newton with dense LU on the finite-difference Jacobian.
    /// Converges to the stated residual tolerance; the defect-correction
    /// iteration tolerates the O(h) Jacobian error.
    pub fn newton(&self, tol: f64, max_iters: usize) -> Option<DVector<f64>> {
        let mut x = DVector::zeros(self.n_total());
        // warm start: previous states
        for _ in 0..max_iters {
            let r = self.residual(&x);
            if r.amax() <= tol {
                return Some(x);
            }
            let j = self.fd_jacobian(&x);
            let delta = j.lu().solve(&(-&r))?;
            x += delta;
        }
        let r = self.residual(&x);
        if r.amax() <= tol {
            Some(x)
        } else {
            None
        }
    }

    /// Extract the per-step fields from the stacked vector.
    pub fn unpack(
        &self,
        x: &DVector<f64>,
    ) -> (Vec<CellField>, Vec<CellField>, Vec<FaceField>, Vec<CellField>) {
        let grid = &self.grid;
        let n = grid.n_cells();
        let mi = grid.n_xfaces_interior() + grid.n_yfaces_interior();
        let mut phis = Vec::new();
        let mut mus = Vec::new();
        let mut vels = Vec::new();
        let mut pres = Vec::new();
        for k in 0..self.cfg.n_time {
            let off = self.step_offset(k);
            let phi = CellField::from_values(grid, x.rows(off, n).iter().copied().collect())
                .expect("shape");
            let mu = CellField::from_values(grid, x.rows(off + n, n).iter().copied().collect())
                .expect("shape");
            phis.push(phi);
            mus.push(mu);
            if k >= 1 {
                let vint = x.rows(off + 2 * n, mi).into_owned();
                let v = &self.embed * vint;
                vels.push(vec_to_face(grid, &v));
                pres.push(
                    CellField::from_values(
                        grid,
                        x.rows(off + 2 * n + mi, n).iter().copied().collect(),
                    )
                    .expect("shape"),
                );
            }
        }
        (phis, mus, vels, pres)
    }
}

/// Combined dense vector back to a face field.
pub fn vec_to_face(grid: &GridSpec, v: &DVector<f64>) -> FaceField {
    let mut f = FaceField::zeros(grid);
    for k in 0..grid.n_xfaces() {
        f.x_mut()[k] = v[k];
    }
    for k in 0..grid.n_yfaces() {
        f.y_mut()[k] = v[grid.n_xfaces() + k];
    }
    f
}
