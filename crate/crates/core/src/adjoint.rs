//! Discrete adjoint: the backward-in-time transpose sweep of the per-step
//! forward Jacobians, the reduced control gradient, and the multiplier
//! fields entering the stationarity residuals.
//!
//! The sweep solves, for `k = M-1 .. 0`,
//!
//! ```text
//! J_k^T lambda_k = -dJ/dx_k - (dF_{k+1}/dx_k)^T lambda_{k+1}
//!                           - (dF_{k+2}/dx_k)^T lambda_{k+2}
//! ```
//!
//! with `J_k` the converged forward step Jacobian. The multiplier blocks,
//! scaled back to field representatives, are the adjoint states: the
//! transport-row block is `p_{k-1}`, the potential-row block `r_{k-1}`, the
//! momentum-row block `q_{k-1}`, and the divergence-row block the adjoint
//! pressure keeping `q` discretely divergence-free.

use crate::error::Result;
use crate::forward::{jacobian_init, jacobian_step, InitGuess, StepGuess, StepLayout, Trajectory};
use crate::grid::{CellField, FaceField, GridSpec};
use crate::ops;
use crate::physics::{density_prime, PhysConfig};
use crate::potential::{mollified_yosida, mollified_yosida_prime, PotentialParams};
use crate::sparse::SparseLu;

/// Partial derivatives of the objective with respect to the state, as field
/// representatives of the weighted inner products.
#[derive(Debug, Clone)]
pub struct ObjectiveGradient {
    /// d J / d phi_i for i = 0..M-1.
    pub dphi: Vec<CellField>,
    /// d J / d mu_i for i = 0..M-1.
    pub dmu: Vec<CellField>,
    /// d J / d v_j for j = 1..M-1 (entry j-1).
    pub dv: Vec<FaceField>,
}

impl ObjectiveGradient {
    pub fn zeros(grid: &GridSpec, n_time: usize) -> Self {
        ObjectiveGradient {
            dphi: vec![CellField::zeros(grid); n_time],
            dmu: vec![CellField::zeros(grid); n_time],
            dv: vec![FaceField::zeros(grid); n_time - 1],
        }
    }
}

/// Adjoint states, backward indexed per the terminal conventions
/// `p_i = r_i = q_i = 0` for `i >= M-1` and `q_{-1} = 0`.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    grid: GridSpec,
    n_time: usize,
    /// `p_{-1} .. p_{M-2}`; multiplier of the transport row of step `i+1`.
    p: Vec<CellField>,
    /// `r_{-1} .. r_{M-2}`; multiplier of the potential row of step `i+1`.
    r: Vec<CellField>,
    /// `q_0 .. q_{M-2}`; multiplier of the momentum row of step `i+1`.
    q: Vec<FaceField>,
    /// Divergence-row multiplier per coupled step (adjoint pressure).
    adj_pres: Vec<CellField>,
}

impl AdjointTrajectory {
    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// `p_i` for `-1 <= i <= M-2`.
    pub fn p(&self, i: isize) -> &CellField {
        &self.p[(i + 1) as usize]
    }

    /// `r_i` for `-1 <= i <= M-2`.
    pub fn r(&self, i: isize) -> &CellField {
        &self.r[(i + 1) as usize]
    }

    /// `q_i` for `0 <= i <= M-2`.
    pub fn q(&self, i: usize) -> &FaceField {
        &self.q[i]
    }

    /// Adjoint pressure of the coupled step producing state `k >= 1`.
    pub fn adj_pres(&self, k: usize) -> &CellField {
        &self.adj_pres[k - 1]
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// Gathers the transpose-action of `dF_{k+1}/dx_k` applied to the step-(k+1)
/// multiplier, as field contributions on the step-k unknowns.
struct CrossAction {
    phi: CellField,
    mu: CellField,
    /// zero when step k has no velocity unknowns (k = 0)
    v: FaceField,
}

#[allow(clippy::too_many_arguments)]
fn cross_action_next(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    traj: &Trajectory,
    k: usize,
    lam_trans: &CellField,
    lam_pot: &CellField,
    lam_mom: &FaceField,
) -> CrossAction {
    let grid = &cfg.grid;
    let tau = cfg.tau;
    let s = cfg.rho_slope();

    // step k+1 data evaluated at the converged trajectory
    let phi_k = traj.phi(k as isize);
    let v_next = traj.vel(k + 1);
    let mu_next = traj.mu(k + 1);
    let grad_mu_next = ops::grad_cc(grid, mu_next);
    let mprime_k = cfg.mobility.deriv_field(phi_k);
    let etaprime_k = cfg.viscosity.deriv_field(phi_k);
    let rhoprime_k = density_prime(phi_k, cfg);

    let mut out_phi = CellField::zeros(grid);
    let mut out_mu = CellField::zeros(grid);
    let mut out_v = FaceField::zeros(grid);

    // transport_{k+1} wrt phi_k: -(1/tau) lam  +  [Avg diag(v) Grad]^T lam
    //                            + [d(-div(m_f grad mu_{k+1}))/d phi]^T lam
    out_phi.scaled_add(-1.0 / tau, lam_trans);
    let avg_lam = ops::avg_cell_to_face_interior(grid, lam_trans);
    out_phi.scaled_add(
        -1.0,
        &ops::div_fc(grid, &v_next.component_mul(&avg_lam)),
    );
    {
        // mobility chain: + m'(phi) .* AvgT( grad mu_{k+1} .* grad lam )
        let glam = ops::grad_cc(grid, lam_trans);
        let prod = grad_mu_next.component_mul(&glam);
        let gathered = ops::avg_cell_to_face_transpose(grid, &prod);
        for c in 0..grid.n_cells() {
            out_phi.values_mut()[c] += mprime_k.values()[c] * gathered.values()[c];
        }
    }

    // potential_{k+1} wrt phi_k: -kappa lam_pot
    out_phi.scaled_add(-pot.kappa(), lam_pot);

    // momentum_{k+1} wrt phi_k
    {
        // (1/tau) rho_f(phi_k) v_{k+1}: rho' chain
        let prod = v_next.component_mul(lam_mom);
        let gathered = ops::avg_cell_to_face_transpose(grid, &prod);
        for c in 0..grid.n_cells() {
            out_phi.values_mut()[c] += rhoprime_k.values()[c] * gathered.values()[c] / tau;
        }
        // viscosity chain through -div(2 eta eps(v_{k+1}))
        let eps_v = ops::sym_grad(grid, v_next);
        let eps_l = ops::sym_grad(grid, lam_mom);
        let mut cellwise = CellField::zeros(grid);
        for c in 0..grid.n_cells() {
            cellwise.values_mut()[c] =
                2.0 * (eps_v.xx[c] * eps_l.xx[c] + eps_v.yy[c] * eps_l.yy[c]);
        }
        // node shear contributions spread to the adjacent cells
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                let nd = grid.node(i, j);
                let val = 4.0 * eps_v.xy[nd] * eps_l.xy[nd];
                let mut cells = Vec::with_capacity(4);
                for (ci, cj) in [
                    (i.wrapping_sub(1), j.wrapping_sub(1)),
                    (i, j.wrapping_sub(1)),
                    (i.wrapping_sub(1), j),
                    (i, j),
                ] {
                    if ci < grid.nx && cj < grid.ny {
                        cells.push(grid.cell(ci, cj));
                    }
                }
                let share = val / cells.len() as f64;
                for c in cells {
                    cellwise.values_mut()[c] += share;
                }
            }
        }
        for c in 0..grid.n_cells() {
            out_phi.values_mut()[c] += etaprime_k.values()[c] * cellwise.values()[c];
        }
        // capillary source -avg(mu_{k+1}) .* grad phi_k
        let avg_mu = ops::avg_cell_to_face_interior(grid, mu_next);
        out_phi.scaled_add(
            1.0,
            &ops::div_fc(grid, &avg_mu.component_mul(lam_mom)),
        );
    }

    // momentum_{k+1} wrt mu_k and v_k through the lagged flux nu_k
    {
        let z = ops::convect_nu_transpose(grid, v_next, lam_mom);
        let phi_km1 = traj.phi(k as isize - 1);
        let mf_km1 = ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_km1));
        // d nu / d mu_k = -s diag(m_f) Grad  =>  transpose = +s Div(m_f .* z)
        out_mu.scaled_add(s, &ops::div_fc(grid, &mf_km1.component_mul(&z)));
        if k >= 1 {
            let (rho_km1, _) = crate::physics::density(phi_km1, cfg);
            let rhof = ops::avg_cell_to_face(grid, &rho_km1);
            // time term -(1/tau) rho_f(phi_{k-1}) v_k plus flux dependence
            let mut tv = rhof.component_mul(lam_mom);
            tv.scale(-1.0 / tau);
            out_v.scaled_add(1.0, &tv);
            out_v.scaled_add(1.0, &rhof.component_mul(&z));
            out_v.enforce_noslip(grid);
        }
    }

    CrossAction {
        phi: out_phi,
        mu: out_mu,
        v: out_v,
    }
}

/// Transpose-action of `dF_{k+2}/dx_k` (momentum rows only, through the
/// density of the old kinetic term and the lagged flux `nu_{k+1}`).
fn cross_action_next2(
    cfg: &PhysConfig,
    traj: &Trajectory,
    k: usize,
    lam_mom2: &FaceField,
) -> CellField {
    let grid = &cfg.grid;
    let tau = cfg.tau;
    let s = cfg.rho_slope();
    let phi_k = traj.phi(k as isize);
    let v_next = traj.vel(k + 1);
    let mu_next = traj.mu(k + 1);
    let v_next2 = traj.vel(k + 2);
    let rhoprime_k = density_prime(phi_k, cfg);
    let mprime_k = cfg.mobility.deriv_field(phi_k);

    let mut out = CellField::zeros(grid);
    // -(1/tau) rho_f(phi_k) v_{k+1} in the step-(k+2) momentum rows
    let prod = v_next.component_mul(lam_mom2);
    let gathered = ops::avg_cell_to_face_transpose(grid, &prod);
    for c in 0..grid.n_cells() {
        out.values_mut()[c] -= rhoprime_k.values()[c] * gathered.values()[c] / tau;
    }
    // nu_{k+1} = rho_f(phi_k) v_{k+1} - s m_f(phi_k) grad mu_{k+1}
    let z = ops::convect_nu_transpose(grid, v_next2, lam_mom2);
    let gathered_v = ops::avg_cell_to_face_transpose(grid, &v_next.component_mul(&z));
    let grad_mu_next = ops::grad_cc(grid, mu_next);
    let gathered_g = ops::avg_cell_to_face_transpose(grid, &grad_mu_next.component_mul(&z));
    for c in 0..grid.n_cells() {
        out.values_mut()[c] += rhoprime_k.values()[c] * gathered_v.values()[c]
            - s * mprime_k.values()[c] * gathered_g.values()[c];
    }
    out
}

/// Raw multiplier vectors of one step (row space of the step system).
pub(crate) struct StepMultiplier {
    pub lam_trans: CellField,
    pub lam_pot: CellField,
    /// zero field for the initial CH step
    pub lam_mom: FaceField,
    pub lam_div: CellField,
}

/// Runs the backward transpose sweep. `traj` must be a converged forward
/// trajectory at the same potential parameters.
pub fn adjoint_sweep(
    traj: &Trajectory,
    obj_grad: &ObjectiveGradient,
    cfg: &PhysConfig,
    pot: &PotentialParams,
) -> Result<AdjointTrajectory> {
    let grid = &cfg.grid;
    let n_time = traj.n_time();
    let n = grid.n_cells();
    let w = grid.cell_measure();

    let mut mults: Vec<Option<StepMultiplier>> = (0..n_time).map(|_| None).collect();

    for k in (0..n_time).rev() {
        // raw objective gradient wrt the step-k unknowns
        let coupled = k >= 1;
        let lay = StepLayout::new(grid, coupled);
        let mut rhs = vec![0.0; lay.n_dofs()];
        for c in 0..n {
            rhs[lay.phi(c)] = -w * obj_grad.dphi[k].values()[c];
            rhs[lay.mu(c)] = -w * obj_grad.dmu[k].values()[c];
        }
        if coupled {
            let mut dv_rows = vec![0.0; lay.n_dofs()];
            lay.gather_face_rows(grid, &obj_grad.dv[k - 1], &mut dv_rows);
            for d in 2 * n..2 * n + lay.mx + lay.my {
                rhs[d] -= w * dv_rows[d];
            }
        }

        // accumulate cross-step transpose actions
        if k + 1 < n_time {
            let m1 = mults[k + 1].as_ref().expect("sweep order");
            let act = cross_action_next(cfg, pot, traj, k, &m1.lam_trans, &m1.lam_pot, &m1.lam_mom);
            for c in 0..n {
                rhs[lay.phi(c)] -= act.phi.values()[c];
                rhs[lay.mu(c)] -= act.mu.values()[c];
            }
            if coupled {
                let mut v_rows = vec![0.0; lay.n_dofs()];
                lay.gather_face_rows(grid, &act.v, &mut v_rows);
                for d in 2 * n..2 * n + lay.mx + lay.my {
                    rhs[d] -= v_rows[d];
                }
            }
        }
        if k + 2 < n_time {
            let m2 = mults[k + 2].as_ref().expect("sweep order");
            let act_phi = cross_action_next2(cfg, traj, k, &m2.lam_mom);
            for c in 0..n {
                rhs[lay.phi(c)] -= act_phi.values()[c];
            }
        }

        // transpose solve on the converged step Jacobian
        let lam = if coupled {
            let data = traj.step_data(k, cfg);
            let guess = StepGuess {
                phi: traj.phi(k as isize).clone(),
                mu: traj.mu(k).clone(),
                v: traj.vel(k).clone(),
                p: traj.pres(k).clone(),
                ca: 0.0,
                cb: 0.0,
                cg: 0.0,
            };
            let jac = jacobian_step(cfg, pot, &data, &guess);
            let lu = SparseLu::factor(&jac, k)?;
            lu.solve_transpose(&rhs, k)?
        } else {
            let guess = InitGuess {
                phi: traj.phi(0).clone(),
                mu: traj.mu(0).clone(),
                ca: 0.0,
                cb: 0.0,
            };
            let jac = jacobian_init(cfg, pot, traj.phi(-1), &guess);
            let lu = SparseLu::factor(&jac, 0)?;
            lu.solve_transpose(&rhs, 0)?
        };

        // unpack row multipliers into field representatives later; store raw
        let mut lam_trans = CellField::zeros(grid);
        let mut lam_pot = CellField::zeros(grid);
        let mut lam_div = CellField::zeros(grid);
        for c in 0..n {
            lam_trans.values_mut()[c] = lam[lay.phi(c)];
            lam_pot.values_mut()[c] = lam[lay.mu(c)];
            if coupled {
                lam_div.values_mut()[c] = lam[lay.p(c)];
            }
        }
        let lam_mom = if coupled {
            lay.scatter_face(grid, &lam)
        } else {
            FaceField::zeros(grid)
        };
        mults[k] = Some(StepMultiplier {
            lam_trans,
            lam_pot,
            lam_mom,
            lam_div,
        });
    }

    // scale raw multipliers to weighted-inner-product representatives
    let inv_w = 1.0 / w;
    let mut p = Vec::with_capacity(n_time);
    let mut r = Vec::with_capacity(n_time);
    let mut q = Vec::with_capacity(n_time - 1);
    let mut adj_pres = Vec::with_capacity(n_time - 1);
    for (k, m) in mults.into_iter().enumerate() {
        let m = m.expect("complete sweep");
        p.push(m.lam_trans.map(|v| v * inv_w));
        r.push(m.lam_pot.map(|v| v * inv_w));
        if k >= 1 {
            let mut qk = m.lam_mom;
            qk.scale(inv_w);
            q.push(qk);
            adj_pres.push(m.lam_div.map(|v| v * inv_w));
        }
    }
    Ok(AdjointTrajectory {
        grid: *grid,
        n_time,
        p,
        r,
        q,
        adj_pres,
    })
}

/// Reduced control gradient `g_k = xi u_k - q_{k-1}`, `k = 1..M-1`, as
/// weighted-inner-product representatives on interior faces.
pub fn reduced_gradient(
    controls: &[FaceField],
    adj: &AdjointTrajectory,
    xi: f64,
    grid: &GridSpec,
) -> Vec<FaceField> {
    let mut out = Vec::with_capacity(controls.len());
    for (idx, u) in controls.iter().enumerate() {
        let mut g = u.clone();
        g.scale(xi);
        g.scaled_add(-1.0, adj.q(idx));
        g.enforce_noslip(grid);
        out.push(g);
    }
    out
}

/// The discrete multiplier pair of the stationarity system at time index
/// `i`: `a_i = gamma~(phi_i)` and `lambda_i = gamma~'(phi_i) r_{i-1}`.
#[derive(Debug, Clone)]
pub struct MultiplierField {
    pub time_index: usize,
    pub a: CellField,
    pub lambda: CellField,
}

pub fn multiplier_fields(
    traj: &Trajectory,
    adj: &AdjointTrajectory,
    pot: &PotentialParams,
) -> Vec<MultiplierField> {
    let mut out = Vec::with_capacity(traj.n_time());
    for i in 0..traj.n_time() {
        let phi = traj.phi(i as isize);
        let r_prev = adj.r(i as isize - 1);
        let a = phi.map(|v| mollified_yosida(v, pot));
        let mut lambda = phi.map(|v| mollified_yosida_prime(v, pot));
        for (l, rv) in lambda.values_mut().iter_mut().zip(r_prev.values()) {
            *l *= rv;
        }
        out.push(MultiplierField {
            time_index: i,
            a,
            lambda,
        });
    }
    out
}
