//! Yosida-parameter continuation: re-optimizes along a decreasing schedule
//! with warm starts and tabulates the residuals whose decay certifies the
//! approach to limiting C-stationarity, the feasibility (obstacle
//! violation) decay, and the energy-estimate slack per stage.

use crate::adjoint::{multiplier_fields, AdjointTrajectory, MultiplierField};
use crate::control::{optimize, ControlParams, OptimizeOpts, OptimizeReport};
use crate::error::{Error, Result};
use crate::forward::{energy_audit, SolverOpts, Trajectory};
use crate::grid::{inner_cc, norm_cc, CellField, FaceField};
use crate::physics::PhysConfig;
use crate::potential::{
    mollified_yosida, mollified_yosida_prime, obstacle_violation, proj_k, ObstacleInterval,
    PotentialFamily, PotentialParams,
};

/// A scalar comparison function with zeros at both obstacles and a known
/// Lipschitz constant; paired against the multiplier fields.
pub struct LambdaTest {
    pub interval: ObstacleInterval,
    pub lipschitz: f64,
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl LambdaTest {
    /// Wraps a user-supplied function after validating the endpoint zeros
    /// and sampling the Lipschitz bound over `[psi1 - 1, psi2 + 1]`.
    pub fn new(
        interval: ObstacleInterval,
        lipschitz: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if f(interval.psi1).abs() > 1e-12 || f(interval.psi2).abs() > 1e-12 {
            return Err(Error::config(
                "lambda test function must vanish at both obstacles",
            ));
        }
        let n = 2000;
        let lo = interval.psi1 - 1.0;
        let hi = interval.psi2 + 1.0;
        let mut prev = f(lo);
        for k in 1..=n {
            let s = lo + (hi - lo) * k as f64 / n as f64;
            let val = f(s);
            let slope = (val - prev).abs() / ((hi - lo) / n as f64);
            if slope > lipschitz * (1.0 + 1e-8) + 1e-12 {
                return Err(Error::config(format!(
                    "sampled slope {slope} exceeds declared Lipschitz constant {lipschitz}"
                )));
            }
            prev = val;
        }
        Ok(LambdaTest {
            interval,
            lipschitz,
            f: Box::new(f),
        })
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn eval_field(&self, phi: &CellField) -> CellField {
        phi.map(|v| self.eval(v))
    }
}

/// Default comparison function: distance to the nearer obstacle,
/// `Lambda(s) = min(|s - psi1|, |s - psi2|)`, Lipschitz constant 1.
pub fn lambda_default(interval: ObstacleInterval) -> LambdaTest {
    LambdaTest {
        interval,
        lipschitz: 1.0,
        f: Box::new(move |s| (s - interval.psi1).abs().min((s - interval.psi2).abs())),
    }
}

/// Per-time-index residuals at one continuation stage.
#[derive(Debug, Clone, Copy)]
pub struct IndexResiduals {
    pub time_index: usize,
    /// `|<a_i, Lambda(phi_i)>|`
    pub a_lambda: f64,
    /// `|<a_i, r_{i-1}>|` and its normalization by `||r_{i-1}||`
    pub a_r: f64,
    pub a_r_norm: f64,
    /// `|<lambda_i, Lambda(phi_i)>|` and its normalization by `||r_{i-1}||`
    pub lambda_lambda: f64,
    pub lambda_lambda_norm: f64,
    /// `<lambda_i, r_{i-1}>`, recorded exactly as computed (no clipping)
    pub sign_ip: f64,
    pub r_norm: f64,
    pub violation_lo: f64,
    pub violation_hi: f64,
    /// share of the strictly-interior set where `|lambda_i|` exceeds the
    /// probe tolerance
    pub exceptional_share: f64,
    /// cell fraction that is feasible up to `tol_act` yet outside the
    /// plateau (the near-biactive band)
    pub biactive: f64,
}

/// One stage of the continuation path.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub stage: usize,
    pub alpha: f64,
    pub theta: f64,
    pub objective: f64,
    pub optimizer_iterations: usize,
    pub optimizer_converged: bool,
    pub rows: Vec<IndexResiduals>,
    pub violation_lo: f64,
    pub violation_hi: f64,
    pub energy_slack_min: f64,
    pub collar_ratio: f64,
    /// stagewise `max(0, -min_i <lambda_i, r_{i-1}>)`
    pub epsilon_n: f64,
}

impl StageRecord {
    pub fn max_a_lambda(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.a_lambda))
    }

    pub fn max_a_r_norm(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.a_r_norm))
    }

    pub fn max_lambda_lambda_norm(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.lambda_lambda_norm))
    }

    pub fn min_sign(&self) -> f64 {
        self.rows.iter().fold(f64::INFINITY, |a, r| a.min(r.sign_ip))
    }

    pub fn max_exceptional(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.exceptional_share))
    }
}

/// Stationarity residuals along the whole continuation path.
#[derive(Debug, Clone)]
pub struct StationarityReport {
    pub stages: Vec<StageRecord>,
}

impl StationarityReport {
    /// First-to-last decay factor of a stagewise aggregate; infinite when
    /// the final value is zero.
    pub fn decay_factor(&self, f: impl Fn(&StageRecord) -> f64) -> f64 {
        let first = f(self.stages.first().expect("nonempty"));
        let last = f(self.stages.last().expect("nonempty"));
        if last == 0.0 {
            f64::INFINITY
        } else {
            first / last
        }
    }
}

/// Everything kept per stage for downstream inspection.
pub struct StageSolution {
    pub params: PotentialParams,
    pub controls: Vec<FaceField>,
    pub traj: Trajectory,
    pub adj: AdjointTrajectory,
    pub optimize_report: OptimizeReport,
}

/// Probe tolerances for the stationarity report.
#[derive(Debug, Clone, Copy)]
pub struct ProbeOpts {
    /// `|lambda_i| <= eps_set_tol` counts as inactive on the interior set.
    pub eps_set_tol: f64,
    /// activity tolerance for the near-biactive band
    pub tol_act: f64,
}

impl Default for ProbeOpts {
    fn default() -> Self {
        ProbeOpts {
            eps_set_tol: 1e-8,
            tol_act: 1e-6,
        }
    }
}

/// Share of the discrete strictly-interior set `{psi1 < phi_i < psi2}` on
/// which `|lambda_i|` exceeds the tolerance; 0 when the set is empty.
pub fn epsilon_inactivity_probe(
    phi: &CellField,
    lambda: &CellField,
    interval: &ObstacleInterval,
    eps_set_tol: f64,
) -> f64 {
    let mut interior = 0usize;
    let mut exceptional = 0usize;
    for (&p, &l) in phi.values().iter().zip(lambda.values()) {
        if p > interval.psi1 && p < interval.psi2 {
            interior += 1;
            if l.abs() > eps_set_tol {
                exceptional += 1;
            }
        }
    }
    if interior == 0 {
        0.0
    } else {
        exceptional as f64 / interior as f64
    }
}

/// Observed collar-bound ratio `max |gamma~ - gamma~' pi| * alpha / theta`
/// over a fine sample; bounded by a constant independent of `alpha`.
pub fn collar_ratio(pot: &PotentialParams) -> f64 {
    let ObstacleInterval { psi1, psi2, .. } = pot.interval;
    let alpha = pot.yosida.alpha;
    let theta = pot.yosida.theta;
    let lo = psi1 - 2.0 * alpha;
    let hi = psi2 + 2.0 * alpha;
    let n = 10_000;
    let mut worst = 0.0f64;
    for k in 0..=n {
        let s = lo + (hi - lo) * k as f64 / n as f64;
        let pi = s - proj_k(s, &pot.interval);
        let g = mollified_yosida(s, pot) - mollified_yosida_prime(s, pot) * pi;
        worst = worst.max(g.abs());
    }
    worst * alpha / theta
}

fn stage_rows(
    traj: &Trajectory,
    adj: &AdjointTrajectory,
    mults: &[MultiplierField],
    lambda_test: &LambdaTest,
    pot: &PotentialParams,
    probes: &ProbeOpts,
) -> Vec<IndexResiduals> {
    let grid = &traj.grid;
    let mut rows = Vec::with_capacity(mults.len());
    for m in mults {
        let i = m.time_index;
        let phi = traj.phi(i as isize);
        let r_prev = adj.r(i as isize - 1);
        let lam_phi = lambda_test.eval_field(phi);
        let r_norm = norm_cc(grid, r_prev);
        let denom = r_norm.max(1e-300);
        let a_lambda = inner_cc(grid, &m.a, &lam_phi).abs();
        let a_r = inner_cc(grid, &m.a, r_prev).abs();
        let lambda_lambda = inner_cc(grid, &m.lambda, &lam_phi).abs();
        let sign_ip = inner_cc(grid, &m.lambda, r_prev);
        let (vlo, vhi) = obstacle_violation(phi, &pot.interval);
        let exceptional =
            epsilon_inactivity_probe(phi, &m.lambda, &pot.interval, probes.eps_set_tol);
        let mut biactive_cells = 0usize;
        for &p in phi.values() {
            let feas = (p - proj_k(p, &pot.interval)).abs() <= probes.tol_act;
            let outside_plateau = p <= pot.interval.psi1 + pot.yosida.theta
                || p >= pot.interval.psi2 - pot.yosida.theta;
            if feas && outside_plateau {
                biactive_cells += 1;
            }
        }
        rows.push(IndexResiduals {
            time_index: i,
            a_lambda,
            a_r,
            a_r_norm: if r_norm == 0.0 { 0.0 } else { a_r / denom },
            lambda_lambda,
            lambda_lambda_norm: if r_norm == 0.0 { 0.0 } else { lambda_lambda / denom },
            sign_ip,
            r_norm,
            violation_lo: vlo,
            violation_hi: vhi,
            exceptional_share: exceptional,
            biactive: biactive_cells as f64 / grid.n_cells() as f64,
        });
    }
    rows
}

/// Outcome of a continuation; `failure` holds the first failed stage with
/// its error when the path was truncated.
pub struct ContinuationOutcome {
    pub solutions: Vec<StageSolution>,
    pub report: StationarityReport,
    pub failure: Option<(usize, Error)>,
}

/// Runs the whole continuation path with warm starts: stage `n >= 1` starts
/// from the previous optimal control.
#[allow(clippy::too_many_arguments)]
pub fn continuation_run(
    family: &PotentialFamily,
    u0: &[FaceField],
    phi_a: &CellField,
    v_a: &FaceField,
    cp: &ControlParams,
    cfg: &PhysConfig,
    solver: &SolverOpts,
    opt_opts: &OptimizeOpts,
    probes: &ProbeOpts,
    lambda_test: &LambdaTest,
) -> Result<ContinuationOutcome> {
    let mut solutions: Vec<StageSolution> = Vec::new();
    let mut stages = Vec::new();
    let mut failure = None;
    let mut warm: Vec<FaceField> = u0.to_vec();

    for n in 0..family.n_stages() {
        let pot = family.stage(n)?;
        let attempt = optimize(&warm, phi_a, v_a, cp, cfg, &pot, solver, opt_opts);
        let (u, traj, adj, opt_report) = match attempt {
            Ok(out) => out,
            Err(e) => {
                failure = Some((n, e));
                break;
            }
        };

        let mults = multiplier_fields(&traj, &adj, &pot);
        let rows = stage_rows(&traj, &adj, &mults, lambda_test, &pot, probes);
        let slacks = energy_audit(&traj, cfg, &pot);
        let (vlo, vhi) = rows.iter().fold((0.0f64, 0.0f64), |(lo, hi), r| {
            (lo.max(r.violation_lo), hi.max(r.violation_hi))
        });
        let objective_value = opt_report
            .iterations
            .last()
            .map(|it| it.objective)
            .unwrap_or(f64::NAN);
        let min_sign = rows.iter().fold(f64::INFINITY, |a, r| a.min(r.sign_ip));
        stages.push(StageRecord {
            stage: n,
            alpha: pot.yosida.alpha,
            theta: pot.yosida.theta,
            objective: objective_value,
            optimizer_iterations: opt_report.iterations.len(),
            optimizer_converged: opt_report.converged,
            rows,
            violation_lo: vlo,
            violation_hi: vhi,
            energy_slack_min: slacks.iter().copied().fold(f64::INFINITY, f64::min),
            collar_ratio: collar_ratio(&pot),
            epsilon_n: (-min_sign).max(0.0),
        });
        warm = u.clone();
        solutions.push(StageSolution {
            params: pot,
            controls: u,
            traj,
            adj,
            optimize_report: opt_report,
        });
    }

    if stages.is_empty() {
        if let Some((n, e)) = failure {
            return Err(Error::config(format!("continuation failed at first stage {n}: {e}")));
        }
        return Err(Error::config("empty continuation schedule"));
    }
    Ok(ContinuationOutcome {
        solutions,
        report: StationarityReport { stages },
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::potential::YosidaParams;

    fn interval() -> ObstacleInterval {
        ObstacleInterval::new(-1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn lambda_default_examples() {
        let l = lambda_default(interval());
        assert_eq!(l.eval(-1.0), 0.0);
        assert_eq!(l.eval(1.0), 0.0);
        assert!((l.eval(0.0) - 1.0).abs() < 1e-15);
        let mut rng_s = 0.37;
        // crude sampled Lipschitz check
        let mut prev_s = -2.0;
        let mut prev_v = l.eval(prev_s);
        for _ in 0..1000 {
            rng_s = (rng_s * 9301.0 + 49297.0) % 1.0;
            let s = -2.0 + 4.0 * rng_s;
            let v = l.eval(s);
            assert!((v - prev_v).abs() <= (s - prev_s).abs() + 1e-12);
            prev_s = s;
            prev_v = v;
        }
    }

    #[test]
    fn lambda_validation_rejects_bad_functions() {
        assert!(LambdaTest::new(interval(), 1.0, |s| s).is_err());
        assert!(LambdaTest::new(interval(), 0.1, |s| s * s - 1.0).is_err());
        // slope reaches 4 on the sampled range [psi1 - 1, psi2 + 1]
        assert!(LambdaTest::new(interval(), 4.5, |s| s * s - 1.0).is_ok());
    }

    #[test]
    fn inactivity_probe_cases() {
        let grid = GridSpec::unit(4, 4).unwrap();
        let k = interval();
        let phi = CellField::constant(&grid, 0.3);
        let lam = CellField::zeros(&grid);
        assert_eq!(epsilon_inactivity_probe(&phi, &lam, &k, 1e-8), 0.0);
        let mut lam2 = CellField::zeros(&grid);
        *lam2.at_mut(0, 0) = 1.0;
        let share = epsilon_inactivity_probe(&phi, &lam2, &k, 1e-8);
        assert!((share - 1.0 / 16.0).abs() < 1e-15);
        // everything outside the interior set: share 0 by convention
        let phi_out = CellField::constant(&grid, 1.5);
        assert_eq!(epsilon_inactivity_probe(&phi_out, &lam2, &k, 1e-8), 0.0);
    }

    #[test]
    fn collar_ratio_stable_across_alpha() {
        let k = interval();
        for alpha in [0.2, 0.1, 0.05, 0.025] {
            let pot = PotentialParams::new(
                k,
                YosidaParams::new(alpha, alpha * alpha, &k).unwrap(),
            );
            let r = collar_ratio(&pot);
            assert!((r - 5.0 / 32.0).abs() < 0.01, "alpha {alpha}: ratio {r}");
        }
    }
}
