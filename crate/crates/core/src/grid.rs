//! Uniform 2D MAC staggered grid: scalars at cell centers, velocity
//! components at faces, shear strain at nodes.
//!
//! Index conventions used everywhere in this crate:
//! cells `(i, j)` with `0 <= i < nx`, `0 <= j < ny`, flat index `j*nx + i`;
//! x-faces `(i, j)` with `0 <= i <= nx` (face `i` is the left edge of cell
//! `i`), flat `j*(nx+1) + i`; y-faces `(i, j)` with `0 <= j <= ny`, flat
//! `j*nx + i`; nodes `(i, j)` with `0 <= i <= nx`, `0 <= j <= ny`, flat
//! `j*(nx+1) + i`.

use crate::error::{Error, Result};

/// Geometry of the rectangular domain and its uniform cell partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::config(format!(
                "grid.nx and grid.ny must be >= 2 (got {nx} x {ny})"
            )));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::config(format!(
                "grid.lx and grid.ly must be positive (got {lx} x {ly})"
            )));
        }
        Ok(GridSpec { nx, ny, lx, ly })
    }

    /// Unit-square grid, the default desk-scale domain.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        GridSpec::new(nx, ny, 1.0, 1.0)
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Cell measure hx*hy; every discrete inner product weights by this.
    #[inline]
    pub fn cell_measure(&self) -> f64 {
        self.hx() * self.hy()
    }

    #[inline]
    pub fn domain_measure(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_xfaces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    #[inline]
    pub fn n_yfaces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    /// Interior x-faces carry velocity unknowns (boundary faces are no-slip).
    #[inline]
    pub fn n_xfaces_interior(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    #[inline]
    pub fn n_yfaces_interior(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn xface(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn yface(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        j * (self.nx + 1) + i
    }

    /// Cell-center coordinates.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// x-face center coordinates.
    #[inline]
    pub fn xface_center(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// y-face center coordinates.
    #[inline]
    pub fn yface_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), j as f64 * self.hy())
    }
}

/// Scalar field at cell centers (order parameter, chemical potential,
/// pressure, adjoint scalars).
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &GridSpec) -> Self {
        CellField {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        CellField {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![c; grid.n_cells()],
        }
    }

    /// Sample `f(x, y)` at cell centers.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = CellField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                out.values[grid.cell(i, j)] = f(x, y);
            }
        }
        out
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::config(format!(
                "cell field has {} values, grid wants {}",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(CellField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.values[j * self.nx + i]
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        self.nx == grid.nx && self.ny == grid.ny
    }

    /// Integral mean over the domain (uniform cells, so the plain average).
    pub fn mean(&self) -> f64 {
        neumaier_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// Subtract the mean in place; returns the subtracted value.
    pub fn make_mean_free(&mut self) -> f64 {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
        m
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled_add(&mut self, a: f64, other: &CellField) {
        assert_eq!(self.values.len(), other.values.len());
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CellField {
        CellField {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Vector field with x-components at vertical faces and y-components at
/// horizontal faces (velocity, gradients, controls, adjoint velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    nx: usize,
    ny: usize,
    xcomp: Vec<f64>,
    ycomp: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &GridSpec) -> Self {
        FaceField {
            nx: grid.nx,
            ny: grid.ny,
            xcomp: vec![0.0; grid.n_xfaces()],
            ycomp: vec![0.0; grid.n_yfaces()],
        }
    }

    /// Sample `(fx, fy)(x, y)` at interior face centers; boundary faces
    /// remain zero (no-slip representation).
    pub fn from_fn_interior(
        grid: &GridSpec,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut out = FaceField::zeros(grid);
        for j in 0..grid.ny {
            for i in 1..grid.nx {
                let (x, y) = grid.xface_center(i, j);
                out.xcomp[grid.xface(i, j)] = fx(x, y);
            }
        }
        for j in 1..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.yface_center(i, j);
                out.ycomp[grid.yface(i, j)] = fy(x, y);
            }
        }
        out
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.xcomp
    }

    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.ycomp
    }

    #[inline]
    pub fn x_mut(&mut self) -> &mut [f64] {
        &mut self.xcomp
    }

    #[inline]
    pub fn y_mut(&mut self) -> &mut [f64] {
        &mut self.ycomp
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        self.nx == grid.nx
            && self.ny == grid.ny
            && self.xcomp.len() == grid.n_xfaces()
            && self.ycomp.len() == grid.n_yfaces()
    }

    /// True when all boundary faces carry exactly zero.
    pub fn is_noslip(&self, grid: &GridSpec) -> bool {
        for j in 0..grid.ny {
            if self.xcomp[grid.xface(0, j)] != 0.0 || self.xcomp[grid.xface(grid.nx, j)] != 0.0 {
                return false;
            }
        }
        for i in 0..grid.nx {
            if self.ycomp[grid.yface(i, 0)] != 0.0 || self.ycomp[grid.yface(i, grid.ny)] != 0.0 {
                return false;
            }
        }
        true
    }

    /// Zero out boundary faces in place.
    pub fn enforce_noslip(&mut self, grid: &GridSpec) {
        for j in 0..grid.ny {
            self.xcomp[grid.xface(0, j)] = 0.0;
            self.xcomp[grid.xface(grid.nx, j)] = 0.0;
        }
        for i in 0..grid.nx {
            self.ycomp[grid.yface(i, 0)] = 0.0;
            self.ycomp[grid.yface(i, grid.ny)] = 0.0;
        }
    }

    pub fn linf(&self) -> f64 {
        let a = self.xcomp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.ycomp.iter().fold(a, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.xcomp.iter().chain(self.ycomp.iter()).all(|v| v.is_finite())
    }

    pub fn scaled_add(&mut self, a: f64, other: &FaceField) {
        assert_eq!(self.xcomp.len(), other.xcomp.len());
        for (s, o) in self.xcomp.iter_mut().zip(&other.xcomp) {
            *s += a * o;
        }
        for (s, o) in self.ycomp.iter_mut().zip(&other.ycomp) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in self.xcomp.iter_mut().chain(self.ycomp.iter_mut()) {
            *v *= a;
        }
    }

    /// Entrywise product, componentwise.
    pub fn component_mul(&self, other: &FaceField) -> FaceField {
        assert_eq!(self.xcomp.len(), other.xcomp.len());
        FaceField {
            nx: self.nx,
            ny: self.ny,
            xcomp: self.xcomp.iter().zip(&other.xcomp).map(|(a, b)| a * b).collect(),
            ycomp: self.ycomp.iter().zip(&other.ycomp).map(|(a, b)| a * b).collect(),
        }
    }
}

/// Symmetric 2x2 gradient tensor: normal components at cell centers, shear
/// components at nodes. `xy` and `yx` are kept entrywise equal.
#[derive(Debug, Clone)]
pub struct TensorField {
    pub xx: Vec<f64>,
    pub yy: Vec<f64>,
    pub xy: Vec<f64>,
    pub yx: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        TensorField {
            xx: vec![0.0; grid.n_cells()],
            yy: vec![0.0; grid.n_cells()],
            xy: vec![0.0; grid.n_nodes()],
            yx: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.xy == self.yx
    }
}

/// Compensated (Neumaier) summation; keeps inner products accurate to a few
/// ulps irrespective of cancellation.
pub fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Discrete L2 inner product of cell fields: cell-measure-weighted sum.
pub fn inner_cc(grid: &GridSpec, f: &CellField, g: &CellField) -> f64 {
    assert!(f.matches(grid) && g.matches(grid), "grid shape mismatch");
    let w = grid.cell_measure();
    w * neumaier_sum(f.values.iter().zip(&g.values).map(|(a, b)| a * b))
}

/// Discrete L2 inner product of face fields: every face weighted by the
/// cell measure. Boundary faces participate (they carry zeros for no-slip
/// fields and gradients, so they never contribute for admissible data).
pub fn inner_fc(grid: &GridSpec, u: &FaceField, v: &FaceField) -> f64 {
    assert!(u.matches(grid) && v.matches(grid), "grid shape mismatch");
    let w = grid.cell_measure();
    let sx = neumaier_sum(u.xcomp.iter().zip(&v.xcomp).map(|(a, b)| a * b));
    let sy = neumaier_sum(u.ycomp.iter().zip(&v.ycomp).map(|(a, b)| a * b));
    w * (sx + sy)
}

pub fn norm_cc(grid: &GridSpec, f: &CellField) -> f64 {
    inner_cc(grid, f, f).sqrt()
}

pub fn norm_fc(grid: &GridSpec, v: &FaceField) -> f64 {
    inner_fc(grid, v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_roundtrip() {
        let g = GridSpec::unit(4, 3).unwrap();
        assert_eq!(g.cell(0, 0), 0);
        assert_eq!(g.cell(3, 2), 11);
        assert_eq!(g.xface(4, 2), 2 * 5 + 4);
        assert_eq!(g.yface(3, 3), 3 * 4 + 3);
        assert_eq!(g.n_xfaces(), 15);
        assert_eq!(g.n_yfaces(), 16);
        assert_eq!(g.n_nodes(), 20);
    }

    #[test]
    fn unit_inner_products() {
        let g = GridSpec::unit(8, 8).unwrap();
        let one = CellField::constant(&g, 1.0);
        assert!((inner_cc(&g, &one, &one) - 1.0).abs() < 1e-15);
        let minus = CellField::constant(&g, -1.0);
        assert!((inner_cc(&g, &one, &minus) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_free_projection() {
        let g = GridSpec::unit(5, 7).unwrap();
        let mut f = CellField::from_fn(&g, |x, y| x * x + 3.0 * y);
        f.make_mean_free();
        assert!(f.mean().abs() < 1e-14);
    }

    #[test]
    fn noslip_detection() {
        let g = GridSpec::unit(4, 4).unwrap();
        let mut v = FaceField::zeros(&g);
        assert!(v.is_noslip(&g));
        let idx = g.xface(0, 1);
        v.x_mut()[idx] = 1.0;
        assert!(!v.is_noslip(&g));
        v.enforce_noslip(&g);
        assert!(v.is_noslip(&g));
    }
}
