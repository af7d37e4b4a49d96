//! Deterministic experiment runner behind the CLI: builds the scenario from
//! a validated configuration, executes one subcommand, writes the CSV
//! outputs and the manifest, and evaluates the enabled audits.

use crate::adjoint::{adjoint_sweep, reduced_gradient};
use crate::config::{RunConfig, TargetSpec};
use crate::continuation::{continuation_run, lambda_default};
use crate::control::{objective, objective_state_gradient, optimize};
use crate::error::Result;
use crate::forward::simulate;
use crate::grid::{inner_fc, CellField, FaceField};
use crate::io;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    EnergyCheck,
    GradCheck,
    Optimize,
    Continue,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::EnergyCheck => "energycheck",
            Subcommand::GradCheck => "gradcheck",
            Subcommand::Optimize => "optimize",
            Subcommand::Continue => "continue",
        }
    }

    pub fn parse(name: &str) -> Option<Subcommand> {
        match name {
            "simulate" => Some(Subcommand::Simulate),
            "energycheck" => Some(Subcommand::EnergyCheck),
            "gradcheck" => Some(Subcommand::GradCheck),
            "optimize" => Some(Subcommand::Optimize),
            "continue" => Some(Subcommand::Continue),
            _ => None,
        }
    }
}

/// Audit outcome of one run; solver and configuration failures surface as
/// `Err` instead.
#[derive(Debug)]
pub struct RunOutcome {
    pub pass: bool,
    pub failure_reason: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunOutcome {
    fn pass(metrics: BTreeMap<String, f64>) -> Self {
        RunOutcome {
            pass: true,
            failure_reason: None,
            metrics,
        }
    }

    fn fail(reason: String, metrics: BTreeMap<String, f64>) -> Self {
        RunOutcome {
            pass: false,
            failure_reason: Some(reason),
            metrics,
        }
    }
}

/// Builds the tracking target, running the generating control forward when
/// the scenario asks for a controllable target.
pub fn build_target(cfg: &RunConfig) -> Result<CellField> {
    let grid = cfg.grid_spec()?;
    match &cfg.objective.target {
        TargetSpec::Zero => Ok(CellField::zeros(&grid)),
        TargetSpec::Stripes { amplitude, width } => {
            Ok(crate::config::stripe_profile(&grid, *amplitude, *width))
        }
        TargetSpec::FromControl { amplitude } => {
            let phys = cfg.phys_config()?;
            let pot = cfg.stage0()?;
            let (phi_a, v_a) = cfg.initial_state()?;
            let u_hat = cfg.generating_control(*amplitude)?;
            let (traj, _) = simulate(&u_hat, &phi_a, &v_a, &phys, &pot, &cfg.solver_opts())?;
            Ok(traj.phi(traj.n_time() as isize - 1).clone())
        }
    }
}

/// Executes one subcommand into `outdir`, writing outputs and the manifest.
/// Returns the audit outcome; `Err` signals configuration or solver
/// failures (CLI exit codes 4 and 3 respectively; audit failure exits 2).
pub fn execute(sub: Subcommand, cfg: &RunConfig, config_text: &str, outdir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(outdir)?;
    let started = Instant::now();
    let result = dispatch(sub, cfg, outdir);
    let (pass, failure_reason, metrics) = match &result {
        Ok(out) => (out.pass, out.failure_reason.clone(), out.metrics.clone()),
        Err(e) => (false, Some(e.to_string()), BTreeMap::new()),
    };
    let manifest = io::Manifest {
        subcommand: sub.name().to_string(),
        config_sha256: io::sha256_hex(config_text),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        pass,
        failure_reason,
        metrics,
    };
    io::write_manifest(outdir, &manifest)?;
    result
}

fn dispatch(sub: Subcommand, cfg: &RunConfig, outdir: &Path) -> Result<RunOutcome> {
    match sub {
        Subcommand::Simulate => run_simulate(cfg, outdir, false),
        Subcommand::EnergyCheck => run_simulate(cfg, outdir, true),
        Subcommand::GradCheck => run_gradcheck(cfg, outdir),
        Subcommand::Optimize => run_optimize(cfg, outdir),
        Subcommand::Continue => run_continue(cfg, outdir),
    }
}

fn run_simulate(cfg: &RunConfig, outdir: &Path, audit: bool) -> Result<RunOutcome> {
    let phys = cfg.phys_config()?;
    let pot = cfg.stage0()?;
    let (phi_a, v_a) = cfg.initial_state()?;
    let grid = phys.grid;
    let controls = vec![FaceField::zeros(&grid); phys.n_time - 1];
    let (traj, reports) = simulate(&controls, &phi_a, &v_a, &phys, &pot, &cfg.solver_opts())?;
    io::write_trajectory(outdir, &traj)?;
    io::write_reports_csv(outdir, &reports)?;

    let min_slack = reports
        .iter()
        .map(|r| r.energy_slack)
        .fold(f64::INFINITY, f64::min);
    let max_mass = reports.iter().map(|r| r.mass_drift).fold(0.0, f64::max);
    let max_div = reports.iter().map(|r| r.div_inf).fold(0.0, f64::max);
    let clamps: usize = reports.iter().map(|r| r.density_clamps).sum();
    let mut metrics = BTreeMap::new();
    metrics.insert("min_energy_slack".into(), min_slack);
    metrics.insert("max_mass_drift".into(), max_mass);
    metrics.insert("max_div_inf".into(), max_div);
    metrics.insert("density_clamp_cells".into(), clamps as f64);

    if audit {
        if min_slack < -cfg.solver.cert_tol {
            return Ok(RunOutcome::fail(
                format!("energy slack {min_slack:.3e} below -{:.1e}", cfg.solver.cert_tol),
                metrics,
            ));
        }
        if max_mass > cfg.solver.mass_tol {
            return Ok(RunOutcome::fail(
                format!("mass drift {max_mass:.3e} above {:.1e}", cfg.solver.mass_tol),
                metrics,
            ));
        }
        if max_div > cfg.solver.div_tol {
            return Ok(RunOutcome::fail(
                format!("divergence {max_div:.3e} above {:.1e}", cfg.solver.div_tol),
                metrics,
            ));
        }
    }
    Ok(RunOutcome::pass(metrics))
}

fn run_gradcheck(cfg: &RunConfig, outdir: &Path) -> Result<RunOutcome> {
    let phys = cfg.phys_config()?;
    let pot = cfg.stage0()?;
    let (phi_a, v_a) = cfg.initial_state()?;
    let grid = phys.grid;
    let phi_d = build_target(cfg)?;
    let cp = cfg.control_params_with_target(phi_d)?;
    let opts = cfg.solver_opts();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b9));
    let mut random_control = |amp: f64| -> Vec<FaceField> {
        (1..phys.n_time)
            .map(|_| {
                let mut f = FaceField::zeros(&grid);
                for v in f.x_mut().iter_mut() {
                    *v = rng.gen_range(-amp..amp);
                }
                for v in f.y_mut().iter_mut() {
                    *v = rng.gen_range(-amp..amp);
                }
                f.enforce_noslip(&grid);
                f
            })
            .collect()
    };

    let u0 = random_control(cfg.gradcheck.amplitude);
    let (traj, _) = simulate(&u0, &phi_a, &v_a, &phys, &pot, &opts)?;
    let adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, &cp), &phys, &pot)?;
    let grad = reduced_gradient(&u0, &adj, cp.xi, &grid);

    let jred = |u: &[FaceField]| -> Result<f64> {
        let (t, _) = simulate(u, &phi_a, &v_a, &phys, &pot, &opts)?;
        Ok(objective(&t, u, &cp))
    };

    let h = cfg.gradcheck.fd_step;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for d in 0..cfg.gradcheck.n_directions {
        let du = random_control(1.0);
        let analytic: f64 = grad
            .iter()
            .zip(&du)
            .map(|(g, dd)| inner_fc(&grid, g, dd))
            .sum();
        let eval = |t: f64| -> Result<f64> {
            let mut u = u0.clone();
            for (uu, dd) in u.iter_mut().zip(&du) {
                uu.scaled_add(t, dd);
            }
            jred(&u)
        };
        // Richardson combination of two central differences
        let d_h = (eval(h)? - eval(-h)?) / (2.0 * h);
        let d_h2 = (eval(h / 2.0)? - eval(-h / 2.0)?) / h;
        let fd = (4.0 * d_h2 - d_h) / 3.0;
        let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
        worst = worst.max(rel);
        rows.push((d, analytic, fd, rel));
    }
    io::write_gradcheck_csv(outdir, &rows)?;

    let mut metrics = BTreeMap::new();
    metrics.insert("max_rel_error".into(), worst);
    if worst > cfg.gradcheck.tol_rel {
        return Ok(RunOutcome::fail(
            format!(
                "gradient check failed: rel error {worst:.3e} above {:.1e}",
                cfg.gradcheck.tol_rel
            ),
            metrics,
        ));
    }
    Ok(RunOutcome::pass(metrics))
}

fn run_optimize(cfg: &RunConfig, outdir: &Path) -> Result<RunOutcome> {
    let phys = cfg.phys_config()?;
    let pot = cfg.stage0()?;
    let (phi_a, v_a) = cfg.initial_state()?;
    let grid = phys.grid;
    let phi_d = build_target(cfg)?;
    let cp = cfg.control_params_with_target(phi_d)?;
    let u0 = vec![FaceField::zeros(&grid); phys.n_time - 1];

    let (u, traj, _adj, report) = optimize(
        &u0,
        &phi_a,
        &v_a,
        &cp,
        &phys,
        &pot,
        &cfg.solver_opts(),
        &cfg.optimize_opts(),
    )?;
    io::write_optimize_csv(outdir, &report)?;
    io::write_trajectory(outdir, &traj)?;
    for (k, uk) in u.iter().enumerate() {
        io::write_face_snapshot(outdir, "ustar", k + 1, &grid, uk)?;
    }

    let first_obj = report
        .iterations
        .first()
        .map(|i| i.objective)
        .unwrap_or(f64::NAN);
    let final_obj = report
        .iterations
        .last()
        .map(|i| i.objective)
        .unwrap_or(f64::NAN);
    let final_stat = report
        .iterations
        .last()
        .map(|i| i.stationarity)
        .unwrap_or(f64::NAN);
    let mut metrics = BTreeMap::new();
    metrics.insert("initial_objective".into(), first_obj);
    metrics.insert("final_objective".into(), final_obj);
    metrics.insert("final_stationarity".into(), final_stat);
    metrics.insert("iterations".into(), report.iterations.len() as f64);
    metrics.insert("forward_solves".into(), report.forward_solves as f64);

    // monotone descent across accepted iterations
    let mut prev = f64::INFINITY;
    for it in &report.iterations {
        if it.objective > prev + 1e-14 * prev.abs().max(1.0) {
            return Ok(RunOutcome::fail(
                format!("objective increased at iteration {}", it.iter),
                metrics,
            ));
        }
        prev = it.objective;
    }
    if !report.converged {
        return Ok(RunOutcome::fail(
            format!("stationarity {final_stat:.3e} above {:.1e}", cfg.optimizer.tol_stat),
            metrics,
        ));
    }
    Ok(RunOutcome::pass(metrics))
}

fn run_continue(cfg: &RunConfig, outdir: &Path) -> Result<RunOutcome> {
    let phys = cfg.phys_config()?;
    let family = cfg.potential_family()?;
    let (phi_a, v_a) = cfg.initial_state()?;
    let grid = phys.grid;
    let phi_d = build_target(cfg)?;
    let cp = cfg.control_params_with_target(phi_d)?;
    let u0 = vec![FaceField::zeros(&grid); phys.n_time - 1];
    let lambda = lambda_default(family.interval);

    let outcome = continuation_run(
        &family,
        &u0,
        &phi_a,
        &v_a,
        &cp,
        &phys,
        &cfg.solver_opts(),
        &cfg.optimize_opts(),
        &cfg.probe_opts(),
        &lambda,
    )?;
    io::write_stationarity_csv(outdir, &outcome.report)?;
    for (n, sol) in outcome.solutions.iter().enumerate() {
        let stage_dir = outdir.join(format!("stage_{n}"));
        fs::create_dir_all(&stage_dir)?;
        for (k, uk) in sol.controls.iter().enumerate() {
            io::write_face_snapshot(&stage_dir, "ustar", k + 1, &grid, uk)?;
        }
        let m = sol.traj.n_time();
        io::write_cell_snapshot(&stage_dir, "phi_final", m - 1, &grid, sol.traj.phi(m as isize - 1))?;
    }

    let report = &outcome.report;
    let stages = &report.stages;
    let mut metrics = BTreeMap::new();
    metrics.insert("n_stages_completed".into(), stages.len() as f64);
    let decay_a_lambda = report.decay_factor(|s| s.max_a_lambda());
    let decay_a_r = report.decay_factor(|s| s.max_a_r_norm());
    let decay_ll = report.decay_factor(|s| s.max_lambda_lambda_norm());
    metrics.insert("decay_a_lambda".into(), decay_a_lambda);
    metrics.insert("decay_a_r_norm".into(), decay_a_r);
    metrics.insert("decay_lambda_lambda_norm".into(), decay_ll);
    if let Some(last) = stages.last() {
        metrics.insert("final_violation_lo".into(), last.violation_lo);
        metrics.insert("final_violation_hi".into(), last.violation_hi);
        metrics.insert("final_epsilon_n".into(), last.epsilon_n);
    }

    if let Some((n, e)) = &outcome.failure {
        return Ok(RunOutcome::fail(
            format!("continuation truncated at stage {n}: {e}"),
            metrics,
        ));
    }
    if stages.len() != family.n_stages() {
        return Ok(RunOutcome::fail("incomplete continuation".into(), metrics));
    }

    // feasibility decay: stagewise violations nonincreasing
    for pair in stages.windows(2) {
        if pair[1].violation_lo > pair[0].violation_lo + 1e-12
            || pair[1].violation_hi > pair[0].violation_hi + 1e-12
        {
            return Ok(RunOutcome::fail(
                format!(
                    "obstacle violation grew from stage {} to {}",
                    pair[0].stage, pair[1].stage
                ),
                metrics,
            ));
        }
        if pair[1].epsilon_n > pair[0].epsilon_n + 1e-12 {
            return Ok(RunOutcome::fail(
                format!(
                    "sign-condition defect grew from stage {} to {}",
                    pair[0].stage, pair[1].stage
                ),
                metrics,
            ));
        }
    }
    // residual decay pins (first-to-last shrink factors)
    let need = cfg.continuation.min_decay_factor;
    for (name, factor, first, last) in [
        (
            "a_lambda",
            decay_a_lambda,
            stages.first().unwrap().max_a_lambda(),
            stages.last().unwrap().max_a_lambda(),
        ),
        (
            "a_r_norm",
            decay_a_r,
            stages.first().unwrap().max_a_r_norm(),
            stages.last().unwrap().max_a_r_norm(),
        ),
        (
            "lambda_lambda_norm",
            decay_ll,
            stages.first().unwrap().max_lambda_lambda_norm(),
            stages.last().unwrap().max_lambda_lambda_norm(),
        ),
    ] {
        // a vanishing tail trivially satisfies the decay requirement
        if last > 1e-16 && factor < need {
            return Ok(RunOutcome::fail(
                format!(
                    "residual {name} decayed {factor:.2}x (need {need:.2}x, {first:.3e} -> {last:.3e})"
                ),
                metrics,
            ));
        }
    }
    for s in stages {
        if s.collar_ratio > cfg.continuation.max_collar_ratio {
            return Ok(RunOutcome::fail(
                format!(
                    "collar ratio {:.3} above {:.3} at stage {}",
                    s.collar_ratio, cfg.continuation.max_collar_ratio, s.stage
                ),
                metrics,
            ));
        }
        if s.energy_slack_min < -cfg.solver.cert_tol {
            return Ok(RunOutcome::fail(
                format!(
                    "energy slack {:.3e} below -{:.1e} at stage {}",
                    s.energy_slack_min, cfg.solver.cert_tol, s.stage
                ),
                metrics,
            ));
        }
        if !s.optimizer_converged {
            return Ok(RunOutcome::fail(
                format!("optimizer did not reach stationarity at stage {}", s.stage),
                metrics,
            ));
        }
    }
    Ok(RunOutcome::pass(metrics))
}

/// CLI exit code mapping: 0 pass, 2 audit failure, 3 solver failure,
/// 4 configuration error.
pub fn exit_code_for(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(out) if out.pass => 0,
        Ok(_) => 2,
        Err(e) => e.exit_code(),
    }
}
