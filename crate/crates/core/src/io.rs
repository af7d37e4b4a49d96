//! Machine-readable outputs: CSV field snapshots, per-step reports,
//! optimizer traces, stationarity tables, and the run manifest.
//!
//! Snapshot format: one file per field per time index, header line
//! `# field=<name> step=<i> nx=<nx> ny=<ny> hx=<hx> hy=<hy>` followed by the
//! values row-major, one grid row per line, comma separated. Vector fields
//! are written per component with the component array dimensions.

use crate::continuation::StationarityReport;
use crate::control::OptimizeReport;
use crate::error::{Error, Result};
use crate::forward::{StepReport, Trajectory};
use crate::grid::{CellField, FaceField, GridSpec};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn write_array_csv(
    path: &Path,
    name: &str,
    step: usize,
    ncols: usize,
    nrows: usize,
    hx: f64,
    hy: f64,
    values: &[f64],
) -> Result<()> {
    debug_assert_eq!(values.len(), ncols * nrows);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# field={name} step={step} nx={ncols} ny={nrows} hx={hx} hy={hy}"
    );
    for j in 0..nrows {
        let row: Vec<String> = (0..ncols)
            .map(|i| values[j * ncols + i].to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_cell_snapshot(
    dir: &Path,
    name: &str,
    step: usize,
    grid: &GridSpec,
    f: &CellField,
) -> Result<()> {
    let path = dir.join(format!("{name}_{step:04}.csv"));
    write_array_csv(
        &path,
        name,
        step,
        grid.nx,
        grid.ny,
        grid.hx(),
        grid.hy(),
        f.values(),
    )
}

pub fn write_face_snapshot(
    dir: &Path,
    name: &str,
    step: usize,
    grid: &GridSpec,
    f: &FaceField,
) -> Result<()> {
    let px = dir.join(format!("{name}x_{step:04}.csv"));
    write_array_csv(
        &px,
        &format!("{name}x"),
        step,
        grid.nx + 1,
        grid.ny,
        grid.hx(),
        grid.hy(),
        f.x(),
    )?;
    let py = dir.join(format!("{name}y_{step:04}.csv"));
    write_array_csv(
        &py,
        &format!("{name}y"),
        step,
        grid.nx,
        grid.ny + 1,
        grid.hx(),
        grid.hy(),
        f.y(),
    )
}

/// Reads a cell snapshot back (header dimensions must match the grid).
pub fn read_cell_snapshot(path: &Path, grid: &GridSpec) -> Result<CellField> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(grid.n_cells());
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|e| Error::config(format!("bad snapshot value {tok:?}: {e}")))?;
            values.push(v);
        }
    }
    CellField::from_values(grid, values)
}

/// Writes all field snapshots of a trajectory.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    let grid = &traj.grid;
    for k in 0..traj.n_time() {
        write_cell_snapshot(dir, "phi", k, grid, traj.phi(k as isize))?;
        write_cell_snapshot(dir, "mu", k, grid, traj.mu(k))?;
        if k >= 1 {
            write_face_snapshot(dir, "v", k, grid, traj.vel(k))?;
            write_cell_snapshot(dir, "p", k, grid, traj.pres(k))?;
            write_face_snapshot(dir, "u", k, grid, traj.control(k))?;
        }
    }
    Ok(())
}

/// `reports.csv`: one row per time step.
pub fn write_reports_csv(dir: &Path, reports: &[StepReport]) -> Result<()> {
    let mut out = String::from(
        "step,newton_iters,residual,energy,slack,mass_drift,div_inf,violation_lo,violation_hi\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.newton_iters,
            r.final_residual,
            r.energy_after,
            r.energy_slack,
            r.mass_drift,
            r.div_inf,
            r.violation_lo,
            r.violation_hi
        );
    }
    fs::write(dir.join("reports.csv"), out)?;
    Ok(())
}

/// `optimize_report.csv`: the optimizer trace.
pub fn write_optimize_csv(dir: &Path, report: &OptimizeReport) -> Result<()> {
    let mut out = String::from("iteration,objective,stationarity,step_length,backtracks\n");
    for it in &report.iterations {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            it.iter, it.objective, it.stationarity, it.step_length, it.backtracks
        );
    }
    fs::write(dir.join("optimize_report.csv"), out)?;
    Ok(())
}

/// `gradcheck.csv`: adjoint vs finite-difference directional derivatives.
pub fn write_gradcheck_csv(dir: &Path, rows: &[(usize, f64, f64, f64)]) -> Result<()> {
    let mut out = String::from("direction,adjoint_derivative,fd_derivative,rel_error\n");
    for (d, a, f, e) in rows {
        let _ = writeln!(out, "{d},{a},{f},{e}");
    }
    fs::write(dir.join("gradcheck.csv"), out)?;
    Ok(())
}

/// `stationarity.csv` (per stage and time index) plus
/// `stationarity_summary.csv` (stagewise aggregates).
pub fn write_stationarity_csv(dir: &Path, report: &StationarityReport) -> Result<()> {
    let mut out = String::from(
        "stage,alpha,time_index,a_lambda,a_r,a_r_norm,lambda_lambda,lambda_lambda_norm,\
         sign_ip,r_norm,violation_lo,violation_hi,exceptional_share,biactive\n",
    );
    for s in &report.stages {
        for r in &s.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.stage,
                s.alpha,
                r.time_index,
                r.a_lambda,
                r.a_r,
                r.a_r_norm,
                r.lambda_lambda,
                r.lambda_lambda_norm,
                r.sign_ip,
                r.r_norm,
                r.violation_lo,
                r.violation_hi,
                r.exceptional_share,
                r.biactive
            );
        }
    }
    fs::write(dir.join("stationarity.csv"), out)?;

    let mut sum = String::from(
        "stage,alpha,theta,objective,opt_iters,converged,violation_lo,violation_hi,\
         energy_slack_min,collar_ratio,epsilon_n,max_a_lambda,max_a_r_norm,\
         max_lambda_lambda_norm,min_sign,max_exceptional\n",
    );
    for s in &report.stages {
        let _ = writeln!(
            sum,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.stage,
            s.alpha,
            s.theta,
            s.objective,
            s.optimizer_iterations,
            s.optimizer_converged,
            s.violation_lo,
            s.violation_hi,
            s.energy_slack_min,
            s.collar_ratio,
            s.epsilon_n,
            s.max_a_lambda(),
            s.max_a_r_norm(),
            s.max_lambda_lambda_norm(),
            s.min_sign(),
            s.max_exceptional()
        );
    }
    fs::write(dir.join("stationarity_summary.csv"), sum)?;
    Ok(())
}

/// Run metadata written next to the CSVs. Wall time varies run to run; all
/// science outputs live in the (deterministic) CSV files.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
    pub pass: bool,
    pub failure_reason: Option<String>,
    pub metrics: std::collections::BTreeMap<String, f64>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::config(format!("manifest serialization failed: {e}")))?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn sha256_hex(data: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip() {
        let grid = GridSpec::unit(4, 3).unwrap();
        let f = CellField::from_fn(&grid, |x, y| x * 10.0 + y);
        let dir = std::env::temp_dir().join(format!("chns_io_test_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        write_cell_snapshot(&dir, "phi", 3, &grid, &f).unwrap();
        let back = read_cell_snapshot(&dir.join("phi_0003.csv"), &grid).unwrap();
        assert_eq!(f.values(), back.values());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sha_is_stable() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
