//! Tracking objective, admissible box, and the projected-gradient solver
//! for the regularized control problem at a fixed Yosida parameter.

use crate::adjoint::{adjoint_sweep, reduced_gradient, AdjointTrajectory, ObjectiveGradient};
use crate::error::{Error, Result};
use crate::forward::{simulate, SolverOpts, Trajectory};
use crate::grid::{inner_cc, inner_fc, norm_cc, CellField, FaceField, GridSpec};
use crate::physics::PhysConfig;
use crate::potential::PotentialParams;

/// Objective data: desired terminal state, control cost and per-component
/// box bounds (use infinities for unilateral or free problems).
#[derive(Debug, Clone)]
pub struct ControlParams {
    pub phi_d: CellField,
    pub xi: f64,
    pub box_lo: f64,
    pub box_hi: f64,
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        if self.box_lo > self.box_hi {
            return Err(Error::config(format!(
                "control box is empty: lo {} > hi {}",
                self.box_lo, self.box_hi
            )));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::config(format!("xi must be >= 0 (got {})", self.xi)));
        }
        // well-posedness of the reduced problem needs a coercive term or a
        // bounded feasible set
        if self.xi == 0.0 && (self.box_lo.is_infinite() || self.box_hi.is_infinite()) {
            return Err(Error::config(
                "xi = 0 requires a bounded control box for a well-posed problem",
            ));
        }
        if self.phi_d.mean().abs() > 1e-10 {
            return Err(Error::config(format!(
                "desired state must be mean-free (mean {:.3e})",
                self.phi_d.mean()
            )));
        }
        Ok(())
    }

    pub fn box_bounded(&self) -> bool {
        self.box_lo.is_finite() && self.box_hi.is_finite()
    }
}

/// `J(traj, u) = 1/2 ||phi_{M-1} - phi_d||^2 + xi/2 sum_k ||u_k||^2`.
pub fn objective(traj: &Trajectory, controls: &[FaceField], cp: &ControlParams) -> f64 {
    let grid = &traj.grid;
    let m = traj.n_time();
    let mut diff = traj.phi(m as isize - 1).clone();
    diff.scaled_add(-1.0, &cp.phi_d);
    let tracking = 0.5 * inner_cc(grid, &diff, &diff);
    let mut cost = 0.0;
    for u in controls {
        cost += inner_fc(grid, u, u);
    }
    tracking + 0.5 * cp.xi * cost
}

/// Gradient of the objective with respect to the state (field
/// representatives); only the terminal order parameter enters.
pub fn objective_state_gradient(
    traj: &Trajectory,
    cp: &ControlParams,
) -> ObjectiveGradient {
    let grid = &traj.grid;
    let m = traj.n_time();
    let mut g = ObjectiveGradient::zeros(grid, m);
    let mut diff = traj.phi(m as isize - 1).clone();
    diff.scaled_add(-1.0, &cp.phi_d);
    g.dphi[m - 1] = diff;
    g
}

/// Componentwise clamp of the control sequence onto the box; boundary faces
/// stay zero (controls act on interior faces only).
pub fn project_uad(controls: &[FaceField], cp: &ControlParams, grid: &GridSpec) -> Vec<FaceField> {
    controls
        .iter()
        .map(|u| {
            let mut p = u.clone();
            for v in p.x_mut().iter_mut() {
                *v = v.clamp(cp.box_lo, cp.box_hi);
            }
            for v in p.y_mut().iter_mut() {
                *v = v.clamp(cp.box_lo, cp.box_hi);
            }
            p.enforce_noslip(grid);
            p
        })
        .collect()
}

fn control_inner(grid: &GridSpec, a: &[FaceField], b: &[FaceField]) -> f64 {
    a.iter().zip(b).map(|(x, y)| inner_fc(grid, x, y)).sum()
}

fn control_norm(grid: &GridSpec, a: &[FaceField]) -> f64 {
    control_inner(grid, a, a).sqrt()
}

fn control_axpy(dst: &mut [FaceField], alpha: f64, src: &[FaceField]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.scaled_add(alpha, s);
    }
}

/// Optimizer controls.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeOpts {
    pub tol_stat: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
}

impl Default for OptimizeOpts {
    fn default() -> Self {
        OptimizeOpts {
            tol_stat: 1e-6,
            max_iters: 500,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
            initial_step: 1.0,
        }
    }
}

/// One optimizer iteration record.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeIter {
    pub iter: usize,
    pub objective: f64,
    pub stationarity: f64,
    pub step_length: f64,
    pub backtracks: usize,
}

/// Optimization trace plus the termination status.
#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub iterations: Vec<OptimizeIter>,
    pub converged: bool,
    pub forward_solves: usize,
}

/// Stationarity measure `|| u - P(u - g) ||` in the control norm.
fn stationarity_measure(
    grid: &GridSpec,
    u: &[FaceField],
    g: &[FaceField],
    cp: &ControlParams,
) -> f64 {
    let mut trial: Vec<FaceField> = u.to_vec();
    control_axpy(&mut trial, -1.0, g);
    let proj = project_uad(&trial, cp, grid);
    let mut diff: Vec<FaceField> = u.to_vec();
    control_axpy(&mut diff, -1.0, &proj);
    control_norm(grid, &diff)
}

/// Projected gradient with Armijo backtracking and a Barzilai-Borwein trial
/// step. Returns the final control with its primal/adjoint pair for
/// downstream stationarity reporting.
pub fn optimize(
    u0: &[FaceField],
    phi_a: &CellField,
    v_a: &FaceField,
    cp: &ControlParams,
    cfg: &PhysConfig,
    pot: &PotentialParams,
    solver: &SolverOpts,
    opts: &OptimizeOpts,
) -> Result<(Vec<FaceField>, Trajectory, AdjointTrajectory, OptimizeReport)> {
    cp.validate()?;
    let grid = &cfg.grid;
    let mut u = project_uad(u0, cp, grid);
    let mut forward_solves = 0usize;

    let run = |uu: &[FaceField]| -> Result<Trajectory> {
        let (t, _) = simulate(uu, phi_a, v_a, cfg, pot, solver)?;
        Ok(t)
    };

    let mut traj = run(&u)?;
    forward_solves += 1;
    let mut adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, cp), cfg, pot)?;
    let mut grad = reduced_gradient(&u, &adj, cp.xi, grid);
    let mut fval = objective(&traj, &u, cp);

    let mut iterations = Vec::new();
    let mut step = opts.initial_step;
    let mut prev_u: Option<Vec<FaceField>> = None;
    let mut prev_grad: Option<Vec<FaceField>> = None;
    let mut converged = false;

    for it in 0..opts.max_iters {
        let stat = stationarity_measure(grid, &u, &grad, cp);
        if stat <= opts.tol_stat {
            iterations.push(OptimizeIter {
                iter: it,
                objective: fval,
                stationarity: stat,
                step_length: 0.0,
                backtracks: 0,
            });
            converged = true;
            break;
        }

        // Barzilai-Borwein trial step from the previous pair
        if let (Some(pu), Some(pg)) = (&prev_u, &prev_grad) {
            let mut du: Vec<FaceField> = u.to_vec();
            control_axpy(&mut du, -1.0, pu);
            let mut dg: Vec<FaceField> = grad.to_vec();
            control_axpy(&mut dg, -1.0, pg);
            let num = control_inner(grid, &du, &du);
            let den = control_inner(grid, &du, &dg);
            if den > 0.0 && num > 0.0 {
                step = (num / den).clamp(1e-8, 1e8);
            }
        }

        let mut accepted = false;
        let mut backtracks = 0usize;
        let mut t = step;
        let mut trial_u = Vec::new();
        let mut trial_traj = None;
        let mut trial_f = f64::INFINITY;
        while backtracks <= opts.max_backtracks {
            trial_u = u.to_vec();
            control_axpy(&mut trial_u, -t, &grad);
            trial_u = project_uad(&trial_u, cp, grid);
            // Armijo on the projected path: J(u_t) <= J(u) - c <g, u - u_t>
            let mut dir: Vec<FaceField> = u.to_vec();
            control_axpy(&mut dir, -1.0, &trial_u);
            let decrease = control_inner(grid, &grad, &dir);
            let tt = run(&trial_u)?;
            forward_solves += 1;
            trial_f = objective(&tt, &trial_u, cp);
            if trial_f <= fval - opts.armijo_c * decrease {
                trial_traj = Some(tt);
                accepted = true;
                break;
            }
            t *= opts.backtrack_factor;
            backtracks += 1;
        }
        if !accepted {
            return Err(Error::LineSearchStagnation {
                iter: it,
                objective: fval,
            });
        }

        prev_u = Some(u.clone());
        prev_grad = Some(grad.clone());
        u = trial_u;
        traj = trial_traj.expect("accepted step has a trajectory");
        fval = trial_f;
        adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, cp), cfg, pot)?;
        grad = reduced_gradient(&u, &adj, cp.xi, grid);
        iterations.push(OptimizeIter {
            iter: it,
            objective: fval,
            stationarity: stat,
            step_length: t,
            backtracks,
        });
    }

    if !converged {
        let stat = stationarity_measure(grid, &u, &grad, cp);
        converged = stat <= opts.tol_stat;
        iterations.push(OptimizeIter {
            iter: opts.max_iters,
            objective: fval,
            stationarity: stat,
            step_length: 0.0,
            backtracks: 0,
        });
    }

    Ok((
        u,
        traj,
        adj,
        OptimizeReport {
            iterations,
            converged,
            forward_solves,
        },
    ))
}

/// Final stationarity measure of a control against its reduced gradient.
pub fn final_stationarity(
    grid: &GridSpec,
    u: &[FaceField],
    grad: &[FaceField],
    cp: &ControlParams,
) -> f64 {
    stationarity_measure(grid, u, grad, cp)
}

/// Residual of the variational inequality `<g, w - u> >= -tol ||w - u||`
/// over sampled box points; returns the most negative normalized pairing.
pub fn variational_inequality_check(
    grid: &GridSpec,
    u: &[FaceField],
    grad: &[FaceField],
    samples: &[Vec<FaceField>],
) -> f64 {
    let mut worst = f64::INFINITY;
    for w in samples {
        let mut diff: Vec<FaceField> = w.clone();
        control_axpy(&mut diff, -1.0, u);
        let denom = control_norm(grid, &diff).max(1e-300);
        let val = control_inner(grid, grad, &diff) / denom;
        worst = worst.min(val);
    }
    worst
}

/// Mean-free norm distance of the terminal state to the target, for
/// reporting.
pub fn terminal_mismatch(traj: &Trajectory, cp: &ControlParams) -> f64 {
    let m = traj.n_time();
    let mut diff = traj.phi(m as isize - 1).clone();
    diff.scaled_add(-1.0, &cp.phi_d);
    norm_cc(&traj.grid, &diff)
}
