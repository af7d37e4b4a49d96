//! Double-obstacle potential, its Yosida approximation and the mollified
//! Yosida family, all in closed form.
//!
//! The obstacle subdifferential on `K = [psi1, psi2]` has the Yosida
//! approximation `gamma_alpha(s) = (s - proj_K(s)) / alpha`. Convolving with
//! the quartic bump `zeta(s) = (15/16)(1 - s^2)^2` of width `theta` gives a
//! C^1 monotone nonlinearity that vanishes identically on the interior
//! plateau `[psi1 + theta, psi2 - theta]` and agrees with `gamma_alpha`
//! outside the collars `[psi_j - theta, psi_j + theta]`.
//!
//! Since `gamma_alpha` is piecewise linear and `zeta` polynomial, the
//! convolution is piecewise polynomial; the pieces below come from the
//! primitives of `zeta`:
//!
//! ```text
//! Z(u)  = int_{-1}^{u} zeta           = 1/2 + (15/16)u - (5/8)u^3 + (3/16)u^5
//! H(u)  = int_{-1}^{u} (u - t) zeta(t) dt
//!       = 5/32 + u/2 + (15/32)u^2 - (5/32)u^4 + (1/32)u^6
//! H2(u) = int_{-1}^{u} H             = 1/28 + (5/32)u + u^2/4 + (5/32)u^3
//!                                      - (1/32)u^5 + (1/224)u^7
//! ```
//!
//! with `H(1) = 1`, `H'(u) = Z(u)` and `H2(1) = 4/7`.

use crate::error::{Error, Result};
use crate::grid::CellField;
use serde::{Deserialize, Serialize};

/// The obstacle interval `K = [psi1, psi2]` together with the concave-shift
/// coefficient `kappa` of the free energy `Psi(phi) = Psi0(phi) - kappa/2 phi^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleInterval {
    pub psi1: f64,
    pub psi2: f64,
    pub kappa: f64,
}

impl ObstacleInterval {
    pub fn new(psi1: f64, psi2: f64, kappa: f64) -> Result<Self> {
        if !(psi1 < 0.0 && 0.0 < psi2) {
            return Err(Error::config(format!(
                "obstacle interval must satisfy psi1 < 0 < psi2 (got [{psi1}, {psi2}])"
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::config(format!("kappa must be positive (got {kappa})")));
        }
        Ok(ObstacleInterval { psi1, psi2, kappa })
    }

    /// Interval induced by the mean shift: `[-1 - shift, 1 - shift]`.
    pub fn from_mean_shift(mean_shift: f64, kappa: f64) -> Result<Self> {
        ObstacleInterval::new(-1.0 - mean_shift, 1.0 - mean_shift, kappa)
    }

    /// Metric projection of a scalar onto `K`.
    #[inline]
    pub fn proj(&self, s: f64) -> f64 {
        s.clamp(self.psi1, self.psi2)
    }
}

/// Metric projection onto `[psi1, psi2]`.
#[inline]
pub fn proj_k(s: f64, interval: &ObstacleInterval) -> f64 {
    interval.proj(s)
}

/// Plain (unmollified) Yosida approximation of the obstacle subdifferential.
pub fn yosida(s: f64, alpha: f64, interval: &ObstacleInterval) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::config(format!("yosida parameter alpha must be > 0 (got {alpha})")));
    }
    Ok((s - interval.proj(s)) / alpha)
}

/// The mollifier `zeta(s) = (15/16)(1 - s^2)^2` on `[-1, 1]`: even, C^1,
/// unit mass, `0 <= zeta <= 1`.
pub fn mollifier(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s * s;
        15.0 / 16.0 * t * t
    }
}

/// Rule producing the mollifier width `theta(alpha)`; must satisfy
/// `theta(alpha)/alpha -> 0`, so the exponent is required to exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaRule {
    /// `theta = alpha^2` (the default).
    AlphaSquared,
    /// `theta = scale * alpha^exponent` with `exponent > 1`.
    Power { exponent: f64, scale: f64 },
}

impl Default for ThetaRule {
    fn default() -> Self {
        ThetaRule::AlphaSquared
    }
}

impl ThetaRule {
    pub fn theta(&self, alpha: f64) -> f64 {
        match self {
            ThetaRule::AlphaSquared => alpha * alpha,
            ThetaRule::Power { exponent, scale } => scale * alpha.powf(*exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ThetaRule::Power { exponent, scale } = self {
            if !(*exponent > 1.0) {
                return Err(Error::config(format!(
                    "theta rule exponent must be > 1 so theta/alpha -> 0 (got {exponent})"
                )));
            }
            if !(*scale > 0.0) {
                return Err(Error::config(format!("theta rule scale must be > 0 (got {scale})")));
            }
        }
        Ok(())
    }
}

/// Yosida parameter and mollifier width for one continuation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YosidaParams {
    pub alpha: f64,
    pub theta: f64,
}

impl YosidaParams {
    pub fn new(alpha: f64, theta: f64, interval: &ObstacleInterval) -> Result<Self> {
        if !(alpha > 0.0) || !(theta > 0.0) {
            return Err(Error::config(format!(
                "yosida parameters must be positive (alpha {alpha}, theta {theta})"
            )));
        }
        if theta / alpha >= 1.0 {
            return Err(Error::config(format!(
                "mollifier width theta = {theta} must be smaller than alpha = {alpha}"
            )));
        }
        if interval.psi1 + theta >= 0.0 || interval.psi2 - theta <= 0.0 {
            return Err(Error::config(format!(
                "mollifier width theta = {theta} leaves no plateau around 0 in [{}, {}]",
                interval.psi1, interval.psi2
            )));
        }
        Ok(YosidaParams { alpha, theta })
    }

    pub fn from_rule(alpha: f64, rule: &ThetaRule, interval: &ObstacleInterval) -> Result<Self> {
        rule.validate()?;
        YosidaParams::new(alpha, rule.theta(alpha), interval)
    }
}

/// Obstacle interval plus one stage of the mollified Yosida family: the
/// smooth potential the forward solver sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub interval: ObstacleInterval,
    pub yosida: YosidaParams,
}

impl PotentialParams {
    pub fn new(interval: ObstacleInterval, yosida: YosidaParams) -> Self {
        PotentialParams { interval, yosida }
    }

    #[inline]
    pub fn kappa(&self) -> f64 {
        self.interval.kappa
    }
}

#[inline]
fn poly_z(u: f64) -> f64 {
    0.5 + u * (15.0 / 16.0 + u * u * (-5.0 / 8.0 + u * u * (3.0 / 16.0)))
}

#[inline]
fn poly_h(u: f64) -> f64 {
    5.0 / 32.0
        + u * (0.5 + u * (15.0 / 32.0 + u * u * (-5.0 / 32.0 + u * u * (1.0 / 32.0))))
}

#[inline]
fn poly_h2(u: f64) -> f64 {
    1.0 / 28.0
        + u * (5.0 / 32.0
            + u * (0.25 + u * (5.0 / 32.0 + u * u * (-1.0 / 32.0 + u * u * (1.0 / 224.0)))))
}

const H2_ONE: f64 = 4.0 / 7.0;

/// Mollified Yosida approximation `gamma~_alpha(s)`, evaluated in closed form.
pub fn mollified_yosida(s: f64, params: &PotentialParams) -> f64 {
    let ObstacleInterval { psi1, psi2, .. } = params.interval;
    let YosidaParams { alpha, theta } = params.yosida;
    if s <= psi1 - theta {
        (s - psi1) / alpha
    } else if s < psi1 + theta {
        -(theta / alpha) * poly_h((psi1 - s) / theta)
    } else if s <= psi2 - theta {
        0.0
    } else if s < psi2 + theta {
        (theta / alpha) * poly_h((s - psi2) / theta)
    } else {
        (s - psi2) / alpha
    }
}

/// Derivative of [`mollified_yosida`]: `0 <= value <= 1/alpha`, zero on the
/// plateau `[psi1 + theta, psi2 - theta]`.
pub fn mollified_yosida_prime(s: f64, params: &PotentialParams) -> f64 {
    let ObstacleInterval { psi1, psi2, .. } = params.interval;
    let YosidaParams { alpha, theta } = params.yosida;
    if s <= psi1 - theta {
        1.0 / alpha
    } else if s < psi1 + theta {
        poly_z((psi1 - s) / theta) / alpha
    } else if s <= psi2 - theta {
        0.0
    } else if s < psi2 + theta {
        poly_z((s - psi2) / theta) / alpha
    } else {
        1.0 / alpha
    }
}

/// Primitive `psi0_alpha(s) = int_0^s gamma~_alpha`: convex, C^2,
/// nonnegative, zero on the plateau.
pub fn psi0_alpha(s: f64, params: &PotentialParams) -> f64 {
    let ObstacleInterval { psi1, psi2, .. } = params.interval;
    let YosidaParams { alpha, theta } = params.yosida;
    if s <= psi1 - theta {
        let d = s - psi1;
        (theta * theta / alpha) * H2_ONE + (d * d - theta * theta) / (2.0 * alpha)
    } else if s < psi1 + theta {
        (theta * theta / alpha) * poly_h2((psi1 - s) / theta)
    } else if s <= psi2 - theta {
        0.0
    } else if s < psi2 + theta {
        (theta * theta / alpha) * poly_h2((s - psi2) / theta)
    } else {
        let d = s - psi2;
        (theta * theta / alpha) * H2_ONE + (d * d - theta * theta) / (2.0 * alpha)
    }
}

/// Pointwise obstacle violation of a cell field: `(max(psi1 - f, 0)_inf,
/// max(f - psi2, 0)_inf)`.
pub fn obstacle_violation(f: &CellField, interval: &ObstacleInterval) -> (f64, f64) {
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for &v in f.values() {
        lo = lo.max(interval.psi1 - v);
        hi = hi.max(v - interval.psi2);
    }
    (lo.max(0.0), hi.max(0.0))
}

/// The continuation schedule: a strictly decreasing list of Yosida
/// parameters over a fixed obstacle interval.
#[derive(Debug, Clone)]
pub struct PotentialFamily {
    pub interval: ObstacleInterval,
    pub schedule: Vec<f64>,
    pub theta_rule: ThetaRule,
}

impl PotentialFamily {
    pub fn new(interval: ObstacleInterval, schedule: Vec<f64>, theta_rule: ThetaRule) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::config("continuation schedule must be nonempty"));
        }
        for pair in schedule.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::config(format!(
                    "schedule must be strictly decreasing (got {} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        if !(schedule[schedule.len() - 1] > 0.0) {
            return Err(Error::config("schedule values must be positive"));
        }
        theta_rule.validate()?;
        // every stage must admit a valid mollifier width
        for &alpha in &schedule {
            YosidaParams::from_rule(alpha, &theta_rule, &interval)?;
        }
        Ok(PotentialFamily {
            interval,
            schedule,
            theta_rule,
        })
    }

    /// Geometric schedule `alpha0 * factor^n`, n = 0..n_stages.
    pub fn geometric(
        interval: ObstacleInterval,
        alpha0: f64,
        factor: f64,
        n_stages: usize,
    ) -> Result<Self> {
        if !(alpha0 > 0.0) || !(factor > 0.0 && factor < 1.0) || n_stages == 0 {
            return Err(Error::config(format!(
                "geometric schedule needs alpha0 > 0, 0 < factor < 1, n_stages >= 1 \
                 (got alpha0 {alpha0}, factor {factor}, n_stages {n_stages})"
            )));
        }
        let schedule = (0..n_stages).map(|n| alpha0 * factor.powi(n as i32)).collect();
        PotentialFamily::new(interval, schedule, ThetaRule::AlphaSquared)
    }

    pub fn n_stages(&self) -> usize {
        self.schedule.len()
    }

    pub fn stage(&self, n: usize) -> Result<PotentialParams> {
        let alpha = *self
            .schedule
            .get(n)
            .ok_or_else(|| Error::config(format!("stage {n} out of range")))?;
        Ok(PotentialParams::new(
            self.interval,
            YosidaParams::from_rule(alpha, &self.theta_rule, &self.interval)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym_interval() -> ObstacleInterval {
        ObstacleInterval::new(-1.0, 1.0, 1.0).unwrap()
    }

    fn params(alpha: f64, theta: f64) -> PotentialParams {
        PotentialParams::new(sym_interval(), YosidaParams::new(alpha, theta, &sym_interval()).unwrap())
    }

    /// Convolution oracle: composite Simpson of
    /// `int gamma_alpha(s - t) zeta_theta(t) dt` over `[-theta, theta]`.
    fn conv_oracle(s: f64, p: &PotentialParams) -> f64 {
        let theta = p.yosida.theta;
        let n = 40_000;
        let h = 2.0 * theta / n as f64;
        let f = |t: f64| {
            yosida(s - t, p.yosida.alpha, &p.interval).unwrap() * mollifier(t / theta) / theta
        };
        let mut acc = f(-theta) + f(theta);
        for k in 1..n {
            let t = -theta + k as f64 * h;
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        acc * h / 3.0
    }

    /// Quadrature oracle for the primitive: Simpson over the closed-form
    /// integrand (the closed form for gamma~ is itself verified against the
    /// convolution oracle above).
    fn psi0_oracle(s: f64, p: &PotentialParams) -> f64 {
        let n = 40_000;
        let h = s / n as f64;
        let f = |t: f64| mollified_yosida(t, p);
        let mut acc = f(0.0) + f(s);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn projection_examples() {
        let k = sym_interval();
        assert_eq!(proj_k(0.0, &k), 0.0);
        assert_eq!(proj_k(1.7, &k), 1.0);
        let k2 = ObstacleInterval::new(-1.5, 0.5, 1.0).unwrap();
        assert_eq!(proj_k(-2.3, &k2), -1.5);
    }

    #[test]
    fn yosida_examples() {
        let k = sym_interval();
        assert!((yosida(1.1, 0.1, &k).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(yosida(0.0, 0.1, &k).unwrap(), 0.0);
        assert!((yosida(-1.25, 0.05, &k).unwrap() + 5.0).abs() < 1e-10);
        assert!(yosida(1.0, 0.0, &k).is_err());
    }

    #[test]
    fn mollified_plateau_and_linear_tail() {
        let p = params(0.1, 0.01);
        assert_eq!(mollified_yosida(0.0, &p), 0.0);
        assert!((mollified_yosida(1.5, &p) - 5.0).abs() < 1e-12);
        assert_eq!(mollified_yosida_prime(0.0, &p), 0.0);
        assert!((mollified_yosida_prime(1.0 + 2.0 * 0.01, &p) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mollified_matches_convolution_oracle() {
        let p = params(0.1, 0.01);
        for s in [1.0, 0.995, 1.005, -1.0, -0.9985, 0.99, 1.01, -1.01] {
            let closed = mollified_yosida(s, &p);
            let oracle = conv_oracle(s, &p);
            assert!(
                (closed - oracle).abs() < 1e-10,
                "s={s}: closed {closed} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn derivative_matches_finite_difference_at_kink() {
        let p = params(0.1, 0.01);
        for s in [1.0, -1.0, 0.997, -1.003] {
            let h = 1e-6;
            let fd = (mollified_yosida(s + h, &p) - mollified_yosida(s - h, &p)) / (2.0 * h);
            assert!(
                (fd - mollified_yosida_prime(s, &p)).abs() < 1e-6,
                "fd mismatch at {s}"
            );
        }
    }

    #[test]
    fn psi0_zero_and_plateau() {
        let p = params(0.1, 0.01);
        assert_eq!(psi0_alpha(0.0, &p), 0.0);
        assert_eq!(psi0_alpha(0.5, &p), 0.0);
        assert_eq!(psi0_alpha(-0.8, &p), 0.0);
    }

    #[test]
    fn psi0_matches_quadrature_oracle() {
        let p = params(0.1, 0.01);
        for s in [1.1, 1.0, -1.0, -1.2, 0.999, 1.005] {
            let closed = psi0_alpha(s, &p);
            let oracle = psi0_oracle(s, &p);
            assert!(
                (closed - oracle).abs() < 1e-10,
                "s={s}: closed {closed} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn monotone_and_bounded_derivative() {
        let p = params(0.05, 0.0025);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..10_000 {
            let s = -2.0 + 4.0 * k as f64 / 9_999.0;
            let g = mollified_yosida(s, &p);
            assert!(g >= prev - 1e-12, "monotonicity violated at {s}");
            prev = g;
            let gp = mollified_yosida_prime(s, &p);
            assert!((-1e-12..=1.0 / p.yosida.alpha + 1e-12).contains(&gp));
        }
    }

    #[test]
    fn odd_symmetry_for_symmetric_interval() {
        let p = params(0.2, 0.04);
        for k in 0..2000 {
            let s = -1.8 + 3.6 * k as f64 / 1999.0;
            let a = mollified_yosida(s, &p);
            let b = -mollified_yosida(-s, &p);
            assert!((a - b).abs() < 1e-13, "odd symmetry at {s}: {a} vs {b}");
        }
    }

    #[test]
    fn collar_bound_ratio() {
        // |gamma~ - gamma~' * pi| <= C theta/alpha with C = 5/32 for this bump
        for alpha in [0.2, 0.1, 0.05, 0.025] {
            let theta = alpha * alpha;
            let p = params(alpha, theta);
            let mut worst = 0.0f64;
            for k in 0..20_000 {
                let s = -1.5 + 3.0 * k as f64 / 19_999.0;
                let pi = s - p.interval.proj(s);
                let g = mollified_yosida(s, &p) - mollified_yosida_prime(s, &p) * pi;
                worst = worst.max(g.abs());
            }
            let ratio = worst * alpha / theta;
            assert!(
                (ratio - 5.0 / 32.0).abs() < 0.01,
                "alpha {alpha}: collar ratio {ratio}"
            );
        }
    }

    #[test]
    fn psi0_convex_second_differences() {
        let p = params(0.1, 0.01);
        let h = 1e-3;
        for k in 0..4000 {
            let s = -1.5 + 3.0 * k as f64 / 3999.0;
            let dd = psi0_alpha(s + h, &p) - 2.0 * psi0_alpha(s, &p) + psi0_alpha(s - h, &p);
            assert!(dd >= -1e-12, "second difference {dd} at {s}");
        }
    }

    #[test]
    fn violation_examples() {
        let g = crate::grid::GridSpec::unit(4, 4).unwrap();
        let k = sym_interval();
        let f = CellField::zeros(&g);
        assert_eq!(obstacle_violation(&f, &k), (0.0, 0.0));
        let mut f2 = CellField::zeros(&g);
        *f2.at_mut(2, 1) = -1.2;
        let (lo, hi) = obstacle_violation(&f2, &k);
        assert!((lo - 0.2).abs() < 1e-14 && hi == 0.0);
    }

    #[test]
    fn schedule_validation() {
        let k = sym_interval();
        assert!(PotentialFamily::new(k, vec![0.2, 0.2], ThetaRule::AlphaSquared).is_err());
        assert!(PotentialFamily::geometric(k, 0.2, 0.5, 4).is_ok());
        assert!(
            ThetaRule::Power {
                exponent: 1.0,
                scale: 1.0
            }
            .validate()
            .is_err()
        );
    }

    proptest! {
        #[test]
        fn prop_convexity_inequality(a in -1.8f64..1.8, b in -1.8f64..1.8) {
            // gamma~(a)(a - b) >= psi0(a) - psi0(b), the subdifferential
            // inequality the per-step energy estimate relies on
            let p = params(0.1, 0.01);
            let lhs = mollified_yosida(a, &p) * (a - b);
            let rhs = psi0_alpha(a, &p) - psi0_alpha(b, &p);
            prop_assert!(lhs >= rhs - 1e-12);
        }

        #[test]
        fn prop_equals_yosida_outside_collar(s in -3.0f64..3.0) {
            let p = params(0.1, 0.01);
            let inside_collar = (s - p.interval.psi1).abs() < p.yosida.theta
                || (s - p.interval.psi2).abs() < p.yosida.theta;
            if !inside_collar && (s < p.interval.psi1 || s > p.interval.psi2) {
                let y = yosida(s, p.yosida.alpha, &p.interval).unwrap();
                prop_assert!((mollified_yosida(s, &p) - y).abs() < 1e-12);
            }
        }
    }
}
