//! Discrete differential and interpolation operators on the staggered grid.
//!
//! The operators are built so that the identities the energy estimate needs
//! hold exactly in floating point (up to roundoff):
//!
//! * `div_fc` is the exact negative adjoint of `grad_cc` under the discrete
//!   inner products (boundary fluxes are treated as zero),
//! * advection is split as `D(nu) = S(nu) + (1/2) avg(div nu)` with `S(nu)`
//!   exactly skew-symmetric, so `<D(nu)v, v> = <div nu, |v|^2/2>`,
//! * the transport term `avg(v .* grad phi)` (faces to cells) and the
//!   capillary source `avg(mu) .* grad phi` (cells to faces) are exact
//!   transposes of each other,
//! * the viscous operator is `-E^T (2 eta E v)` for the symmetric-gradient
//!   stencil `E`, so the viscous dissipation identity is exact.

use crate::grid::{CellField, FaceField, GridSpec, TensorField};

/// Centered two-point gradient, cells to faces; homogeneous-Neumann closure
/// (boundary faces carry 0).
pub fn grad_cc(grid: &GridSpec, f: &CellField) -> FaceField {
    assert!(f.matches(grid), "grid shape mismatch");
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut g = FaceField::zeros(grid);
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            g.x_mut()[grid.xface(i, j)] = (f.at(i, j) - f.at(i - 1, j)) / hx;
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            g.y_mut()[grid.yface(i, j)] = (f.at(i, j) - f.at(i, j - 1)) / hy;
        }
    }
    g
}

/// Face-to-cell divergence. Boundary faces are treated as zero-flux
/// regardless of stored values, which makes `<div_fc g, f> = -<g, grad_cc f>`
/// exact for all `f`, `g`.
pub fn div_fc(grid: &GridSpec, g: &FaceField) -> CellField {
    assert!(g.matches(grid), "grid shape mismatch");
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut d = CellField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let gw = if i > 0 { g.x()[grid.xface(i, j)] } else { 0.0 };
            let ge = if i + 1 < grid.nx { g.x()[grid.xface(i + 1, j)] } else { 0.0 };
            let gs = if j > 0 { g.y()[grid.yface(i, j)] } else { 0.0 };
            let gn = if j + 1 < grid.ny { g.y()[grid.yface(i, j + 1)] } else { 0.0 };
            *d.at_mut(i, j) = (ge - gw) / hx + (gn - gs) / hy;
        }
    }
    d
}

/// Five-point Laplacian with homogeneous Neumann closure: `div_fc(grad_cc f)`.
pub fn laplace_neumann(grid: &GridSpec, f: &CellField) -> CellField {
    div_fc(grid, &grad_cc(grid, f))
}

/// Arithmetic two-point average of a cell field onto faces; one-sided copy
/// at boundary faces. Used for coefficient fields (density, mobility).
pub fn avg_cell_to_face(grid: &GridSpec, c: &CellField) -> FaceField {
    assert!(c.matches(grid), "grid shape mismatch");
    let mut out = FaceField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..=grid.nx {
            let v = if i == 0 {
                c.at(0, j)
            } else if i == grid.nx {
                c.at(grid.nx - 1, j)
            } else {
                0.5 * (c.at(i - 1, j) + c.at(i, j))
            };
            out.x_mut()[grid.xface(i, j)] = v;
        }
    }
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            let v = if j == 0 {
                c.at(i, 0)
            } else if j == grid.ny {
                c.at(i, grid.ny - 1)
            } else {
                0.5 * (c.at(i, j - 1) + c.at(i, j))
            };
            out.y_mut()[grid.yface(i, j)] = v;
        }
    }
    out
}

/// Transport term `v . grad(phi)` at cells: average over the four adjacent
/// faces of the facewise product. Exact transpose of [`capillary_source`].
pub fn transport(grid: &GridSpec, v: &FaceField, grad_phi: &FaceField) -> CellField {
    assert!(v.matches(grid) && grad_phi.matches(grid), "grid shape mismatch");
    let mut out = CellField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let fw = grid.xface(i, j);
            let fe = grid.xface(i + 1, j);
            let fs = grid.yface(i, j);
            let fn_ = grid.yface(i, j + 1);
            *out.at_mut(i, j) = 0.5
                * (v.x()[fw] * grad_phi.x()[fw]
                    + v.x()[fe] * grad_phi.x()[fe]
                    + v.y()[fs] * grad_phi.y()[fs]
                    + v.y()[fn_] * grad_phi.y()[fn_]);
        }
    }
    out
}

/// Capillary source `mu * grad(phi)` at faces: two-point average of `mu`
/// times the face gradient. Exact transpose of [`transport`]: for all
/// `v`, `mu`: `<transport(v, g), mu>_cc = <v, capillary_source(mu, g)>_fc`.
pub fn capillary_source(grid: &GridSpec, mu: &CellField, grad_phi: &FaceField) -> FaceField {
    assert!(mu.matches(grid) && grad_phi.matches(grid), "grid shape mismatch");
    let mut out = FaceField::zeros(grid);
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            let f = grid.xface(i, j);
            out.x_mut()[f] = 0.5 * (mu.at(i - 1, j) + mu.at(i, j)) * grad_phi.x()[f];
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            let f = grid.yface(i, j);
            out.y_mut()[f] = 0.5 * (mu.at(i, j - 1) + mu.at(i, j)) * grad_phi.y()[f];
        }
    }
    out
}

/// `|v|^2` at cells: face-to-cell average of the squared components. This is
/// the pairing partner of `div_fc` in the discrete convection identity.
pub fn speed_squared_cells(grid: &GridSpec, v: &FaceField) -> CellField {
    assert!(v.matches(grid), "grid shape mismatch");
    let mut out = CellField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let uw = v.x()[grid.xface(i, j)];
            let ue = v.x()[grid.xface(i + 1, j)];
            let ws = v.y()[grid.yface(i, j)];
            let wn = v.y()[grid.yface(i, j + 1)];
            *out.at_mut(i, j) = 0.5 * (uw * uw + ue * ue) + 0.5 * (ws * ws + wn * wn);
        }
    }
    out
}

/// Cell field averaged onto interior faces with the two-point rule;
/// boundary faces are left zero. Transpose partner of the cell average in
/// [`speed_squared_cells`].
pub fn avg_cell_to_face_interior(grid: &GridSpec, c: &CellField) -> FaceField {
    assert!(c.matches(grid), "grid shape mismatch");
    let mut out = FaceField::zeros(grid);
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            out.x_mut()[grid.xface(i, j)] = 0.5 * (c.at(i - 1, j) + c.at(i, j));
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            out.y_mut()[grid.yface(i, j)] = 0.5 * (c.at(i, j - 1) + c.at(i, j));
        }
    }
    out
}

/// Combined face-dof space used by the advection stencil enumeration:
/// x-faces first, then y-faces.
#[inline]
pub(crate) fn fdof_x(grid: &GridSpec, i: usize, j: usize) -> usize {
    grid.xface(i, j)
}

#[inline]
pub(crate) fn fdof_y(grid: &GridSpec, i: usize, j: usize) -> usize {
    grid.n_xfaces() + grid.yface(i, j)
}

/// Enumerate the raw advection stencil `A(nu) v ~ (nu . grad) v`: emits
/// quadruples `(row, col, nu_face, coef)` meaning
/// `[A(nu) v]_row += coef * nu[nu_face] * v[col]`.
///
/// Rows run over interior faces only. Central differences; odd reflection
/// across no-slip walls for the tangential derivative.
pub(crate) fn for_each_advect_quad(
    grid: &GridSpec,
    mut emit: impl FnMut(usize, usize, usize, f64),
) {
    let (hx, hy) = (grid.hx(), grid.hy());
    let nx = grid.nx;
    let ny = grid.ny;

    // x-velocity rows at interior x-faces.
    for j in 0..ny {
        for i in 1..nx {
            let row = fdof_x(grid, i, j);
            // nu_x * du/dx, centered over neighbors (boundary dofs are zero).
            let nf = fdof_x(grid, i, j);
            emit(row, fdof_x(grid, i + 1, j), nf, 0.5 / hx);
            emit(row, fdof_x(grid, i - 1, j), nf, -0.5 / hx);
            // nu_y averaged from the four surrounding y-faces, times du/dy.
            let nus = [
                fdof_y(grid, i - 1, j),
                fdof_y(grid, i, j),
                fdof_y(grid, i - 1, j + 1),
                fdof_y(grid, i, j + 1),
            ];
            for nf in nus {
                if j + 1 < ny {
                    emit(row, fdof_x(grid, i, j + 1), nf, 0.25 * 0.5 / hy);
                } else {
                    // ghost above the top wall: u(i, ny) = -u(i, ny-1)
                    emit(row, fdof_x(grid, i, ny - 1), nf, -0.25 * 0.5 / hy);
                }
                if j > 0 {
                    emit(row, fdof_x(grid, i, j - 1), nf, -0.25 * 0.5 / hy);
                } else {
                    // ghost below the bottom wall: u(i, -1) = -u(i, 0)
                    emit(row, fdof_x(grid, i, 0), nf, 0.25 * 0.5 / hy);
                }
            }
        }
    }

    // y-velocity rows at interior y-faces.
    for j in 1..ny {
        for i in 0..nx {
            let row = fdof_y(grid, i, j);
            let nf = fdof_y(grid, i, j);
            emit(row, fdof_y(grid, i, j + 1), nf, 0.5 / hy);
            emit(row, fdof_y(grid, i, j - 1), nf, -0.5 / hy);
            let nus = [
                fdof_x(grid, i, j - 1),
                fdof_x(grid, i + 1, j - 1),
                fdof_x(grid, i, j),
                fdof_x(grid, i + 1, j),
            ];
            for nf in nus {
                if i + 1 < nx {
                    emit(row, fdof_y(grid, i + 1, j), nf, 0.25 * 0.5 / hx);
                } else {
                    emit(row, fdof_y(grid, nx - 1, j), nf, -0.25 * 0.5 / hx);
                }
                if i > 0 {
                    emit(row, fdof_y(grid, i - 1, j), nf, -0.25 * 0.5 / hx);
                } else {
                    emit(row, fdof_y(grid, 0, j), nf, 0.25 * 0.5 / hx);
                }
            }
        }
    }
}

#[inline]
fn face_get(grid: &GridSpec, f: &FaceField, dof: usize) -> f64 {
    let nxf = grid.n_xfaces();
    if dof < nxf {
        f.x()[dof]
    } else {
        f.y()[dof - nxf]
    }
}

#[inline]
fn face_add(grid: &GridSpec, f: &mut FaceField, dof: usize, v: f64) {
    let nxf = grid.n_xfaces();
    if dof < nxf {
        f.x_mut()[dof] += v;
    } else {
        f.y_mut()[dof - nxf] += v;
    }
}

/// Raw advection `A(nu) v`; output is zero on boundary faces.
pub(crate) fn advect_apply(grid: &GridSpec, nu: &FaceField, v: &FaceField) -> FaceField {
    let mut out = FaceField::zeros(grid);
    for_each_advect_quad(grid, |row, col, nf, coef| {
        let val = coef * face_get(grid, nu, nf) * face_get(grid, v, col);
        face_add(grid, &mut out, row, val);
    });
    out
}

/// Transpose of the raw advection in the combined face space, restricted to
/// interior faces (boundary entries are dropped).
pub(crate) fn advect_apply_transpose(grid: &GridSpec, nu: &FaceField, v: &FaceField) -> FaceField {
    let mut out = FaceField::zeros(grid);
    for_each_advect_quad(grid, |row, col, nf, coef| {
        let val = coef * face_get(grid, nu, nf) * face_get(grid, v, row);
        face_add(grid, &mut out, col, val);
    });
    out.enforce_noslip(grid);
    out
}

/// `div_fc(nu)` averaged back onto interior faces.
pub fn avg_div_to_faces(grid: &GridSpec, nu: &FaceField) -> FaceField {
    let d = div_fc(grid, nu);
    avg_cell_to_face_interior(grid, &d)
}

/// Energy-consistent convection `D(nu) v = S(nu) v + (1/2) avg(div nu) .* v`
/// where `S(nu) = (A(nu) - A(nu)^T)/2` is exactly skew-symmetric. Satisfies
/// `<D(nu) v, v>_fc = <div_fc nu, speed_squared_cells(v)/2>_cc` exactly.
pub fn convect(grid: &GridSpec, nu: &FaceField, v: &FaceField) -> FaceField {
    assert!(nu.matches(grid) && v.matches(grid), "grid shape mismatch");
    let av = advect_apply(grid, nu, v);
    let atv = advect_apply_transpose(grid, nu, v);
    let half_div = avg_div_to_faces(grid, nu);
    let mut out = FaceField::zeros(grid);
    let nxf = grid.n_xfaces();
    for k in 0..nxf {
        out.x_mut()[k] = 0.5 * (av.x()[k] - atv.x()[k]) + 0.5 * half_div.x()[k] * v.x()[k];
    }
    for k in 0..grid.n_yfaces() {
        out.y_mut()[k] = 0.5 * (av.y()[k] - atv.y()[k]) + 0.5 * half_div.y()[k] * v.y()[k];
    }
    out.enforce_noslip(grid);
    out
}

/// Skew part only: `S(nu) v`.
pub fn convect_skew(grid: &GridSpec, nu: &FaceField, v: &FaceField) -> FaceField {
    let av = advect_apply(grid, nu, v);
    let atv = advect_apply_transpose(grid, nu, v);
    let mut out = FaceField::zeros(grid);
    for k in 0..grid.n_xfaces() {
        out.x_mut()[k] = 0.5 * (av.x()[k] - atv.x()[k]);
    }
    for k in 0..grid.n_yfaces() {
        out.y_mut()[k] = 0.5 * (av.y()[k] - atv.y()[k]);
    }
    out.enforce_noslip(grid);
    out
}

/// Half-weight face-to-cell average: `out[c] = 1/2 sum of the four adjacent
/// face values`. Plain transpose of [`avg_cell_to_face_interior`] once
/// boundary values vanish.
pub fn avg_face_to_cell_half(grid: &GridSpec, f: &FaceField) -> CellField {
    assert!(f.matches(grid), "grid shape mismatch");
    let mut out = CellField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            *out.at_mut(i, j) = 0.5
                * (f.x()[grid.xface(i, j)]
                    + f.x()[grid.xface(i + 1, j)]
                    + f.y()[grid.yface(i, j)]
                    + f.y()[grid.yface(i, j + 1)]);
        }
    }
    out
}

/// Exact transpose of [`avg_cell_to_face`] (one-sided boundary weights
/// included): cells gather 1/2 from interior faces and 1 from adjacent
/// boundary faces.
pub fn avg_cell_to_face_transpose(grid: &GridSpec, f: &FaceField) -> CellField {
    assert!(f.matches(grid), "grid shape mismatch");
    let mut out = CellField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let wx_w = if i == 0 { 1.0 } else { 0.5 };
            let wx_e = if i + 1 == grid.nx { 1.0 } else { 0.5 };
            let wy_s = if j == 0 { 1.0 } else { 0.5 };
            let wy_n = if j + 1 == grid.ny { 1.0 } else { 0.5 };
            *out.at_mut(i, j) = wx_w * f.x()[grid.xface(i, j)]
                + wx_e * f.x()[grid.xface(i + 1, j)]
                + wy_s * f.y()[grid.yface(i, j)]
                + wy_n * f.y()[grid.yface(i, j + 1)];
        }
    }
    out
}

/// Transpose action of `nu -> D(nu) v_known` on a multiplier face field
/// (zero on boundary faces): returns `z` with `z = K(v_known)^T lam` where
/// `K(v) nu = D(nu) v`.
pub fn convect_nu_transpose(grid: &GridSpec, v_known: &FaceField, lam: &FaceField) -> FaceField {
    let mut z = FaceField::zeros(grid);
    let get = |f: &FaceField, dof: usize| face_get(grid, f, dof);
    for_each_advect_quad(grid, |row, col, nf, coef| {
        let val = 0.5 * coef * (get(v_known, col) * get(lam, row) - get(v_known, row) * get(lam, col));
        face_add(grid, &mut z, nf, val);
    });
    // half-divergence part: pairing sum_r lam_r (1/2) v_r avg(div dnu)_r
    let mut w = lam.component_mul(v_known);
    w.scale(0.5);
    let q = avg_face_to_cell_half(grid, &w);
    z.scaled_add(-1.0, &grad_cc(grid, &q));
    z
}

/// Symmetric-gradient stencil entries: emits `(loc, face_dof, coef)` where
/// `loc` indexes the tensor locations `xx` at cells `[0, n)`, `yy` at cells
/// `[n, 2n)`, `xy` at nodes `[2n, 2n + n_nodes)`. The `xy` location stores
/// the single shear value; quadrature multiplies it by 2.
pub(crate) fn for_each_symgrad_entry(grid: &GridSpec, mut emit: impl FnMut(usize, usize, f64)) {
    let (hx, hy) = (grid.hx(), grid.hy());
    let n = grid.n_cells();
    let nx = grid.nx;
    let ny = grid.ny;

    // eps_xx = du/dx at cells
    for j in 0..ny {
        for i in 0..nx {
            let loc = grid.cell(i, j);
            emit(loc, fdof_x(grid, i + 1, j), 1.0 / hx);
            emit(loc, fdof_x(grid, i, j), -1.0 / hx);
        }
    }
    // eps_yy = dw/dy at cells
    for j in 0..ny {
        for i in 0..nx {
            let loc = n + grid.cell(i, j);
            emit(loc, fdof_y(grid, i, j + 1), 1.0 / hy);
            emit(loc, fdof_y(grid, i, j), -1.0 / hy);
        }
    }
    // eps_xy = (du/dy + dw/dx)/2 at nodes; one-sided wall stencils use the
    // no-slip value at the wall itself.
    for j in 0..=ny {
        for i in 0..=nx {
            let loc = 2 * n + grid.node(i, j);
            // du/dy in the x-face column i
            if j == 0 {
                emit(loc, fdof_x(grid, i, 0), 0.5 * 2.0 / hy);
            } else if j == ny {
                emit(loc, fdof_x(grid, i, ny - 1), -0.5 * 2.0 / hy);
            } else {
                emit(loc, fdof_x(grid, i, j), 0.5 / hy);
                emit(loc, fdof_x(grid, i, j - 1), -0.5 / hy);
            }
            // dw/dx in the y-face row j
            if i == 0 {
                emit(loc, fdof_y(grid, 0, j), 0.5 * 2.0 / hx);
            } else if i == nx {
                emit(loc, fdof_y(grid, nx - 1, j), -0.5 * 2.0 / hx);
            } else {
                emit(loc, fdof_y(grid, i, j), 0.5 / hx);
                emit(loc, fdof_y(grid, i - 1, j), -0.5 / hx);
            }
        }
    }
}

/// Symmetric gradient of a face velocity field.
pub fn sym_grad(grid: &GridSpec, v: &FaceField) -> TensorField {
    assert!(v.matches(grid), "grid shape mismatch");
    let n = grid.n_cells();
    let mut t = TensorField::zeros(grid);
    for_each_symgrad_entry(grid, |loc, fdof, coef| {
        let val = coef * face_get(grid, v, fdof);
        if loc < n {
            t.xx[loc] += val;
        } else if loc < 2 * n {
            t.yy[loc - n] += val;
        } else {
            t.xy[loc - 2 * n] += val;
        }
    });
    t.yx.copy_from_slice(&t.xy);
    t
}

/// Viscosity at tensor locations: cells directly, nodes by averaging the
/// adjacent cells (1, 2 or 4 of them at corners/edges).
pub(crate) fn coeff_at_nodes(grid: &GridSpec, c: &CellField) -> Vec<f64> {
    let mut out = vec![0.0; grid.n_nodes()];
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let mut sum = 0.0;
            let mut cnt = 0.0;
            for (ci, cj) in [
                (i.wrapping_sub(1), j.wrapping_sub(1)),
                (i, j.wrapping_sub(1)),
                (i.wrapping_sub(1), j),
                (i, j),
            ] {
                if ci < grid.nx && cj < grid.ny {
                    sum += c.at(ci, cj);
                    cnt += 1.0;
                }
            }
            out[grid.node(i, j)] = sum / cnt;
        }
    }
    out
}

/// Viscous operator `div(2 eta eps(v))` realized as `-E^T (2 eta E v)` so
/// that `<visc_div(eta, v), w>_fc = -<2 eta eps(v), eps(w)>` holds exactly.
/// Output zero on boundary faces.
pub fn visc_div(grid: &GridSpec, eta_cells: &CellField, v: &FaceField) -> FaceField {
    let t = sym_grad(grid, v);
    let eta_n = coeff_at_nodes(grid, eta_cells);
    let n = grid.n_cells();
    let mut out = FaceField::zeros(grid);
    for_each_symgrad_entry(grid, |loc, fdof, coef| {
        // multiplicity 2 on the shear component accounts for eps_yx = eps_xy
        let flux = if loc < n {
            2.0 * eta_cells.values()[loc] * t.xx[loc]
        } else if loc < 2 * n {
            2.0 * eta_cells.values()[loc - n] * t.yy[loc - n]
        } else {
            2.0 * eta_n[loc - 2 * n] * t.xy[loc - 2 * n] * 2.0
        };
        face_add(grid, &mut out, fdof, -coef * flux);
    });
    out.enforce_noslip(grid);
    out
}

/// `int 2 eta |eps(v)|^2` with `|eps|^2 = xx^2 + yy^2 + 2 xy^2`.
pub fn visc_dissipation(grid: &GridSpec, eta_cells: &CellField, v: &FaceField) -> f64 {
    let t = sym_grad(grid, v);
    let eta_n = coeff_at_nodes(grid, eta_cells);
    let w = grid.cell_measure();
    let mut acc = 0.0;
    for (loc, &e) in eta_cells.values().iter().enumerate() {
        acc += 2.0 * e * (t.xx[loc] * t.xx[loc] + t.yy[loc] * t.yy[loc]);
    }
    for (loc, &e) in eta_n.iter().enumerate() {
        acc += 2.0 * e * 2.0 * t.xy[loc] * t.xy[loc];
    }
    w * acc
}

/// `int m |grad mu|^2` with a face-interpolated mobility.
pub fn mobility_dissipation(grid: &GridSpec, m_faces: &FaceField, grad_mu: &FaceField) -> f64 {
    let w = grid.cell_measure();
    let mut acc = 0.0;
    for (a, b) in m_faces.x().iter().zip(grad_mu.x()) {
        acc += a * b * b;
    }
    for (a, b) in m_faces.y().iter().zip(grad_mu.y()) {
        acc += a * b * b;
    }
    w * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_cc, inner_fc};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cell(grid: &GridSpec, rng: &mut ChaCha8Rng) -> CellField {
        let vals = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        CellField::from_values(grid, vals).unwrap()
    }

    fn random_face(grid: &GridSpec, rng: &mut ChaCha8Rng, noslip: bool) -> FaceField {
        let mut f = FaceField::zeros(grid);
        for v in f.x_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in f.y_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        if noslip {
            f.enforce_noslip(grid);
        }
        f
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = GridSpec::unit(6, 5).unwrap();
        let f = CellField::constant(&g, 3.0);
        assert_eq!(grad_cc(&g, &f).linf(), 0.0);
    }

    #[test]
    fn gradient_exact_for_linear_interior() {
        let g = GridSpec::unit(4, 4).unwrap();
        let f = CellField::from_fn(&g, |x, _| x);
        let gr = grad_cc(&g, &f);
        for j in 0..4 {
            for i in 1..4 {
                assert!((gr.x()[g.xface(i, j)] - 1.0).abs() < 1e-14);
            }
            assert_eq!(gr.x()[g.xface(0, j)], 0.0);
            assert_eq!(gr.x()[g.xface(4, j)], 0.0);
        }
        assert_eq!(gr.y().iter().fold(0.0f64, |a, v| a.max(v.abs())), 0.0);
    }

    #[test]
    fn summation_by_parts_exact() {
        let g = GridSpec::new(7, 5, 2.0, 1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let f = random_cell(&g, &mut rng);
            let v = random_face(&g, &mut rng, false);
            let lhs = inner_cc(&g, &div_fc(&g, &v), &f);
            let rhs = -inner_fc(&g, &v, &grad_cc(&g, &f));
            assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs().max(rhs.abs())));
        }
    }

    #[test]
    fn divergence_of_constant_interior_field() {
        let g = GridSpec::unit(4, 4).unwrap();
        let mut v = FaceField::zeros(&g);
        for j in 0..4 {
            for i in 1..4 {
                v.x_mut()[g.xface(i, j)] = 2.0;
            }
        }
        let d = div_fc(&g, &v);
        // telescoping: interior cells zero, first/last columns pick up the flux
        for j in 0..4 {
            assert!((d.at(0, j) - 2.0 / g.hx()).abs() < 1e-13);
            assert!((d.at(3, j) + 2.0 / g.hx()).abs() < 1e-13);
            for i in 1..3 {
                assert_eq!(d.at(i, j), 0.0);
            }
        }
    }

    #[test]
    fn laplacian_spike_stencil() {
        let g = GridSpec::unit(4, 4).unwrap();
        let mut f = CellField::zeros(&g);
        *f.at_mut(1, 1) = 1.0;
        let l = laplace_neumann(&g, &f);
        let expect = -(2.0 / (g.hx() * g.hx()) + 2.0 / (g.hy() * g.hy()));
        assert!((l.at(1, 1) - expect).abs() < 1e-11);
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let g = GridSpec::unit(5, 6).unwrap();
        let f = CellField::constant(&g, -2.5);
        assert_eq!(laplace_neumann(&g, &f).linf(), 0.0);
    }

    #[test]
    fn transport_source_transpose_pair() {
        let g = GridSpec::new(6, 4, 1.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let phi = random_cell(&g, &mut rng);
            let mu = random_cell(&g, &mut rng);
            let v = random_face(&g, &mut rng, true);
            let gp = grad_cc(&g, &phi);
            let lhs = inner_cc(&g, &transport(&g, &v, &gp), &mu);
            let rhs = inner_fc(&g, &v, &capillary_source(&g, &mu, &gp));
            assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn skew_part_is_skew() {
        let g = GridSpec::unit(5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let nu = random_face(&g, &mut rng, false);
            let v = random_face(&g, &mut rng, true);
            let sv = convect_skew(&g, &nu, &v);
            let ip = inner_fc(&g, &sv, &v);
            assert!(ip.abs() < 1e-13, "skew pairing {ip}");
        }
    }

    #[test]
    fn convection_energy_identity() {
        let g = GridSpec::new(5, 5, 1.0, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let nu = random_face(&g, &mut rng, true);
            let v = random_face(&g, &mut rng, true);
            let dv = convect(&g, &nu, &v);
            let lhs = inner_fc(&g, &dv, &v);
            let half_speed = speed_squared_cells(&g, &v).map(|s| 0.5 * s);
            let rhs = inner_cc(&g, &div_fc(&g, &nu), &half_speed);
            assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn convect_zero_nu() {
        let g = GridSpec::unit(4, 4).unwrap();
        let nu = FaceField::zeros(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_face(&g, &mut rng, true);
        assert_eq!(convect(&g, &nu, &v).linf(), 0.0);
    }

    #[test]
    fn sym_grad_zero_and_rotation() {
        let g = GridSpec::unit(6, 6).unwrap();
        let z = FaceField::zeros(&g);
        let t = sym_grad(&g, &z);
        assert!(t.xx.iter().chain(&t.yy).chain(&t.xy).all(|&v| v == 0.0));

        // rigid rotation (-y, x) has zero symmetric gradient away from the
        // one-sided boundary stencils
        let v = FaceField::from_fn_interior(&g, |_, y| -(y - 0.5), |x, _| x - 0.5);
        let t = sym_grad(&g, &v);
        for j in 1..5 {
            for i in 1..5 {
                assert!(t.xx[g.cell(i, j)].abs() < 1e-13);
                assert!(t.yy[g.cell(i, j)].abs() < 1e-13);
            }
        }
        for j in 1..6 {
            for i in 1..6 {
                assert!(t.xy[g.node(i, j)].abs() < 1e-13, "interior node ({i},{j})");
            }
        }
        assert!(t.is_symmetric());
    }

    #[test]
    fn viscous_adjointness() {
        // <visc_div(eta, v), w> = -<2 eta eps(v), eps(w)> exactly
        let g = GridSpec::new(5, 4, 1.0, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let eta = CellField::from_fn(&g, |x, y| 1.0 + 0.3 * (x + y));
        for _ in 0..10 {
            let v = random_face(&g, &mut rng, true);
            let w_ = random_face(&g, &mut rng, true);
            let lhs = inner_fc(&g, &visc_div(&g, &eta, &v), &w_);
            let tv = sym_grad(&g, &v);
            let tw = sym_grad(&g, &w_);
            let eta_n = coeff_at_nodes(&g, &eta);
            let mut rhs = 0.0;
            for c in 0..g.n_cells() {
                rhs += 2.0 * eta.values()[c] * (tv.xx[c] * tw.xx[c] + tv.yy[c] * tw.yy[c]);
            }
            for nd in 0..g.n_nodes() {
                rhs += 2.0 * eta_n[nd] * 2.0 * tv.xy[nd] * tw.xy[nd];
            }
            rhs *= -g.cell_measure();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn convect_nu_transpose_matches_directional_derivative() {
        let g = GridSpec::new(5, 4, 1.0, 1.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let nu = random_face(&g, &mut rng, true);
            let dnu = random_face(&g, &mut rng, true);
            let v = random_face(&g, &mut rng, true);
            let lam = random_face(&g, &mut rng, true);
            // D is linear in nu, so the directional derivative is exact
            let mut nup = nu.clone();
            nup.scaled_add(1.0, &dnu);
            let mut dd = convect(&g, &nup, &v);
            dd.scaled_add(-1.0, &convect(&g, &nu, &v));
            let lhs = inner_fc(&g, &dd, &lam);
            let z = convect_nu_transpose(&g, &v, &lam);
            let rhs = inner_fc(&g, &dnu, &z);
            assert!(
                (lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()),
                "lhs {lhs} rhs {rhs}"
            );
        }
    }

    #[test]
    fn avg_transpose_pairs() {
        let g = GridSpec::unit(5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let c = random_cell(&g, &mut rng);
        let f = random_face(&g, &mut rng, false);
        let lhs = inner_fc(&g, &avg_cell_to_face(&g, &c), &f);
        let rhs = inner_cc(&g, &c, &avg_cell_to_face_transpose(&g, &f));
        assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
        let lhs2 = inner_cc(&g, &avg_face_to_cell_half(&g, &f), &c);
        let rhs2 = inner_fc(&g, &f, &avg_cell_to_face_interior(&g, &c));
        // boundary faces break the pairing unless one side vanishes there
        let mut fi = f.clone();
        fi.enforce_noslip(&g);
        let lhs3 = inner_cc(&g, &avg_face_to_cell_half(&g, &fi), &c);
        let rhs3 = inner_fc(&g, &fi, &avg_cell_to_face_interior(&g, &c));
        assert!((lhs3 - rhs3).abs() < 1e-13 * (1.0 + lhs3.abs()));
        let _ = (lhs2, rhs2);
    }

    #[test]
    fn operators_are_linear() {
        let g = GridSpec::unit(5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f1 = random_cell(&g, &mut rng);
        let f2 = random_cell(&g, &mut rng);
        let (a, b) = (1.7, -0.4);
        let mut comb = f1.clone();
        for (c, (x, y)) in comb
            .values_mut()
            .iter_mut()
            .zip(f1.values().iter().zip(f2.values()))
        {
            *c = a * x + b * y;
        }
        let lhs = grad_cc(&g, &comb);
        let g1 = grad_cc(&g, &f1);
        let g2 = grad_cc(&g, &f2);
        for k in 0..g.n_xfaces() {
            assert!((lhs.x()[k] - (a * g1.x()[k] + b * g2.x()[k])).abs() < 1e-13);
        }
        for k in 0..g.n_yfaces() {
            assert!((lhs.y()[k] - (a * g1.y()[k] + b * g2.y()[k])).abs() < 1e-13);
        }
    }
}
