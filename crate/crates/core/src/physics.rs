//! Physical configuration: densities, coefficient functions, time stepping.

use crate::error::{Error, Result};
use crate::grid::{CellField, GridSpec};
use serde::{Deserialize, Serialize};

/// Scalar coefficient function of the order parameter (mobility or
/// viscosity). Both variants are C^2 with bounded derivatives, as the
/// coefficient assumptions require.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficient {
    Constant { value: f64 },
    /// `base + amplitude * tanh(phi / width)`
    Tanh { base: f64, amplitude: f64, width: f64 },
}

impl Coefficient {
    pub fn eval(&self, phi: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Tanh { base, amplitude, width } => base + amplitude * (phi / width).tanh(),
        }
    }

    pub fn deriv(&self, phi: f64) -> f64 {
        match self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Tanh { amplitude, width, .. } => {
                let t = (phi / width).tanh();
                amplitude / width * (1.0 - t * t)
            }
        }
    }

    pub fn deriv2(&self, phi: f64) -> f64 {
        match self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Tanh { amplitude, width, .. } => {
                let t = (phi / width).tanh();
                -2.0 * amplitude / (width * width) * t * (1.0 - t * t)
            }
        }
    }

    /// Global lower bound of the coefficient value.
    pub fn lower_bound(&self) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Tanh { base, amplitude, .. } => base - amplitude.abs(),
        }
    }

    /// Upper bound over values and first two derivatives.
    pub fn upper_bound(&self) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Tanh { base, amplitude, width } => {
                let v = base + amplitude.abs();
                let d1 = amplitude.abs() / width;
                let d2 = 2.0 * amplitude.abs() / (width * width);
                v.max(d1).max(d2)
            }
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            Coefficient::Constant { value } => {
                if !(*value > 0.0) {
                    return Err(Error::config(format!("{name}: constant coefficient must be > 0")));
                }
            }
            Coefficient::Tanh { width, .. } => {
                if !(*width > 0.0) {
                    return Err(Error::config(format!("{name}: tanh width must be > 0")));
                }
                if !(self.lower_bound() > 0.0) {
                    return Err(Error::config(format!(
                        "{name}: coefficient lower bound {} must be positive",
                        self.lower_bound()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval_field(&self, phi: &CellField) -> CellField {
        phi.map(|v| self.eval(v))
    }

    pub fn deriv_field(&self, phi: &CellField) -> CellField {
        phi.map(|v| self.deriv(v))
    }
}

/// Densities, time step and coefficient functions for one run.
#[derive(Debug, Clone)]
pub struct PhysConfig {
    pub rho1: f64,
    pub rho2: f64,
    /// Time step size.
    pub tau: f64,
    /// Number of time instances `M >= 2`: states are indexed `-1..M-1`.
    pub n_time: usize,
    /// Mean of the unshifted initial order parameter, in (-1, 1).
    pub mean_shift: f64,
    pub mobility: Coefficient,
    pub viscosity: Coefficient,
    pub grid: GridSpec,
}

impl PhysConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho1 > 0.0 && self.rho1 <= self.rho2) {
            return Err(Error::config(format!(
                "densities must satisfy 0 < rho1 <= rho2 (got {} and {})",
                self.rho1, self.rho2
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("time.tau must be positive (got {})", self.tau)));
        }
        if self.n_time < 2 {
            return Err(Error::config(format!(
                "time.n_time must be >= 2 (got {})",
                self.n_time
            )));
        }
        if !(self.mean_shift > -1.0 && self.mean_shift < 1.0) {
            return Err(Error::config(format!(
                "physics.mean_shift must lie in (-1, 1) (got {})",
                self.mean_shift
            )));
        }
        self.mobility.validate("physics.mobility")?;
        self.viscosity.validate("physics.viscosity")?;
        Ok(())
    }

    /// Slope of the affine density map, `(rho2 - rho1)/2`.
    #[inline]
    pub fn rho_slope(&self) -> f64 {
        0.5 * (self.rho2 - self.rho1)
    }

    /// Density of the mixture at a shifted order-parameter value; clamped at
    /// zero so it can never turn negative.
    #[inline]
    pub fn density_scalar(&self, phi: f64) -> f64 {
        (0.5 * (self.rho1 + self.rho2) + self.rho_slope() * (phi + self.mean_shift)).max(0.0)
    }

    /// True when the clamp in [`Self::density_scalar`] is inactive at `phi`.
    #[inline]
    pub fn density_affine_at(&self, phi: f64) -> bool {
        0.5 * (self.rho1 + self.rho2) + self.rho_slope() * (phi + self.mean_shift) > 0.0
    }

    /// Pointwise derivative of the clamped density map.
    #[inline]
    pub fn density_prime_scalar(&self, phi: f64) -> f64 {
        if self.density_affine_at(phi) {
            self.rho_slope()
        } else {
            0.0
        }
    }
}

/// Density field together with the number of cells where the nonnegativity
/// clamp was active. A nonzero count means the run left the regime where
/// the discrete energy estimate is exact, and is reported as a diagnostic.
pub fn density(phi: &CellField, cfg: &PhysConfig) -> (CellField, usize) {
    let out = phi.map(|v| cfg.density_scalar(v));
    let clamped = phi.values().iter().filter(|&&v| !cfg.density_affine_at(v)).count();
    (out, clamped)
}

pub fn density_prime(phi: &CellField, cfg: &PhysConfig) -> CellField {
    phi.map(|v| cfg.density_prime_scalar(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PhysConfig {
        PhysConfig {
            rho1: 1.0,
            rho2: 3.0,
            tau: 0.01,
            n_time: 4,
            mean_shift: 0.0,
            mobility: Coefficient::Constant { value: 1.0 },
            viscosity: Coefficient::Constant { value: 1.0 },
            grid: GridSpec::unit(4, 4).unwrap(),
        }
    }

    #[test]
    fn density_pure_phases() {
        let c = cfg();
        let g = c.grid;
        // psi1 = -1, psi2 = 1 for zero mean shift
        let (rho, n) = density(&CellField::constant(&g, -1.0), &c);
        assert_eq!(n, 0);
        assert!(rho.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let (rho, _) = density(&CellField::constant(&g, 1.0), &c);
        assert!(rho.values().iter().all(|&v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn density_clamp_activates() {
        let c = cfg();
        let g = c.grid;
        // rho = 0 at phi = -(rho1+rho2)/(rho2-rho1) - shift = -2; below that it clamps
        let (rho, n) = density(&CellField::constant(&g, -2.1), &c);
        assert_eq!(n, g.n_cells());
        assert!(rho.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tanh_coefficient_bounds() {
        let m = Coefficient::Tanh {
            base: 1.0,
            amplitude: 0.5,
            width: 1.0,
        };
        m.validate("m").unwrap();
        assert!((m.lower_bound() - 0.5).abs() < 1e-14);
        assert!(m.eval(0.3) > 0.5 && m.eval(0.3) < 1.5);
        let h = 1e-6;
        let fd = (m.eval(0.3 + h) - m.eval(0.3 - h)) / (2.0 * h);
        assert!((fd - m.deriv(0.3)).abs() < 1e-9);
        let fd2 = (m.deriv(0.3 + h) - m.deriv(0.3 - h)) / (2.0 * h);
        assert!((fd2 - m.deriv2(0.3)).abs() < 1e-8);
        let bad = Coefficient::Tanh {
            base: 0.4,
            amplitude: 0.5,
            width: 1.0,
        };
        assert!(bad.validate("m").is_err());
    }
}
