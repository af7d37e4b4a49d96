//! Time stepping for the semi-discrete two-phase-flow system.
//!
//! Each step solves the coupled saddle-point system for the new order
//! parameter, chemical potential, velocity and pressure, with all
//! coefficient functions evaluated at lagged states:
//!
//! ```text
//! (phi - phi_prev)/tau + v . grad(phi_prev) - div(m(phi_prev) grad mu) = 0
//! -lap(phi) + gamma~(phi) - mu - kappa phi_prev                        = 0   (mod constants)
//! (rho(phi_prev) v - rho(phi_prev2) v_prev)/tau + D(nu) v
//!     - div(2 eta(phi_prev) eps(v)) + grad p - mu grad(phi_prev)       = u
//! div v                                                                = 0
//! ```
//!
//! with the relative flux
//! `nu = rho(phi_prev2) v_prev - (rho2-rho1)/2 m(phi_prev2) grad mu_prev`.
//! The first instant solves the decoupled Cahn-Hilliard pair with the known
//! initial velocity. Mean-free gauges for `phi`, `mu`, `p` are enforced with
//! scalar multipliers, so the step system is square and the only
//! nonlinearity in the new unknowns is `gamma~(phi)`.

use crate::error::{Error, Result};
use crate::grid::{inner_cc, inner_fc, CellField, FaceField, GridSpec};
use crate::ops;
use crate::physics::{density, PhysConfig};
use crate::potential::{
    mollified_yosida, mollified_yosida_prime, obstacle_violation, psi0_alpha, PotentialParams,
};
use crate::sparse::{SparseLu, Triplets};

/// Newton and linear-solver controls.
#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    /// Absolute tolerance on the sup-norm of the strong-form residual.
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Halve the update on residual increase, up to `max_halvings` times.
    pub damping: bool,
    pub max_halvings: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            newton_tol: 1e-10,
            max_iters: 50,
            damping: true,
            max_halvings: 10,
        }
    }
}

/// Degree-of-freedom and equation layout of one step system.
///
/// Unknowns: `[phi | mu | vx_int | vy_int | p | c_a | c_b | c_g]` for a
/// coupled step, `[phi | mu | c_a | c_b]` for the initial Cahn-Hilliard
/// step. Equation rows use the same offsets (transport, potential,
/// momentum, divergence, means).
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepLayout {
    pub nx: usize,
    pub ny: usize,
    pub n: usize,
    pub mx: usize,
    pub my: usize,
    pub coupled: bool,
}

impl StepLayout {
    pub fn new(grid: &GridSpec, coupled: bool) -> Self {
        StepLayout {
            nx: grid.nx,
            ny: grid.ny,
            n: grid.n_cells(),
            mx: grid.n_xfaces_interior(),
            my: grid.n_yfaces_interior(),
            coupled,
        }
    }

    #[inline]
    pub fn n_dofs(&self) -> usize {
        if self.coupled {
            3 * self.n + self.mx + self.my + 3
        } else {
            2 * self.n + 2
        }
    }

    #[inline]
    pub fn phi(&self, c: usize) -> usize {
        c
    }

    #[inline]
    pub fn mu(&self, c: usize) -> usize {
        self.n + c
    }

    #[inline]
    pub fn vx(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.coupled && i >= 1 && i < self.nx);
        2 * self.n + (i - 1) + j * (self.nx - 1)
    }

    #[inline]
    pub fn vy(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.coupled && j >= 1 && j < self.ny);
        2 * self.n + self.mx + i + (j - 1) * self.nx
    }

    #[inline]
    pub fn p(&self, c: usize) -> usize {
        2 * self.n + self.mx + self.my + c
    }

    #[inline]
    pub fn ca(&self) -> usize {
        if self.coupled {
            3 * self.n + self.mx + self.my
        } else {
            2 * self.n
        }
    }

    #[inline]
    pub fn cb(&self) -> usize {
        self.ca() + 1
    }

    #[inline]
    pub fn cg(&self) -> usize {
        debug_assert!(self.coupled);
        self.ca() + 2
    }

    /// Map a combined face dof (x-faces then y-faces) to its unknown index,
    /// or `None` for boundary faces.
    pub fn face_dof(&self, grid: &GridSpec, fdof: usize) -> Option<usize> {
        let nxf = grid.n_xfaces();
        if fdof < nxf {
            let i = fdof % (self.nx + 1);
            let j = fdof / (self.nx + 1);
            if i >= 1 && i <= self.nx - 1 {
                Some(self.vx(i, j))
            } else {
                None
            }
        } else {
            let d = fdof - nxf;
            let i = d % self.nx;
            let j = d / self.nx;
            if j >= 1 && j <= self.ny - 1 {
                Some(self.vy(i, j))
            } else {
                None
            }
        }
    }

    pub fn scatter_face(&self, grid: &GridSpec, x: &[f64]) -> FaceField {
        let mut f = FaceField::zeros(grid);
        for j in 0..self.ny {
            for i in 1..self.nx {
                f.x_mut()[grid.xface(i, j)] = x[self.vx(i, j)];
            }
        }
        for j in 1..self.ny {
            for i in 0..self.nx {
                f.y_mut()[grid.yface(i, j)] = x[self.vy(i, j)];
            }
        }
        f
    }

    pub fn gather_face_rows(&self, grid: &GridSpec, f: &FaceField, out: &mut [f64]) {
        for j in 0..self.ny {
            for i in 1..self.nx {
                out[self.vx(i, j)] = f.x()[grid.xface(i, j)];
            }
        }
        for j in 1..self.ny {
            for i in 0..self.nx {
                out[self.vy(i, j)] = f.y()[grid.yface(i, j)];
            }
        }
    }
}

/// Lagged-coefficient bundle for one coupled step.
pub(crate) struct StepData {
    pub grad_phi_prev: FaceField,
    pub m_prev_faces: FaceField,
    pub eta_prev: CellField,
    pub rho_prev_faces: FaceField,
    pub rho_prev2_faces: FaceField,
    pub nu: FaceField,
    pub clamp_events: usize,
}

impl StepData {
    pub fn build(
        cfg: &PhysConfig,
        phi_prev: &CellField,
        phi_prev2: &CellField,
        mu_prev: &CellField,
        v_prev: &FaceField,
    ) -> StepData {
        let grid = &cfg.grid;
        let (rho_prev, c1) = density(phi_prev, cfg);
        let (rho_prev2, c2) = density(phi_prev2, cfg);
        let rho_prev_faces = ops::avg_cell_to_face(grid, &rho_prev);
        let rho_prev2_faces = ops::avg_cell_to_face(grid, &rho_prev2);
        let m_prev2_faces = ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_prev2));
        let grad_mu_prev = ops::grad_cc(grid, mu_prev);
        let mut nu = rho_prev2_faces.component_mul(v_prev);
        let mut flux = m_prev2_faces.component_mul(&grad_mu_prev);
        flux.scale(-cfg.rho_slope());
        nu.scaled_add(1.0, &flux);
        StepData {
            grad_phi_prev: ops::grad_cc(grid, phi_prev),
            m_prev_faces: ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_prev)),
            eta_prev: cfg.viscosity.eval_field(phi_prev),
            rho_prev_faces,
            rho_prev2_faces,
            nu,
            clamp_events: c1 + c2,
        }
    }
}

/// Full semi-discrete state: `phi` indexed `-1..=M-1`, `mu`, `vel` indexed
/// `0..=M-1` (with `vel[0]` the initial velocity), pressure and control
/// indexed `1..=M-1`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: GridSpec,
    n_time: usize,
    phi: Vec<CellField>,
    mu: Vec<CellField>,
    vel: Vec<FaceField>,
    pres: Vec<CellField>,
    control: Vec<FaceField>,
}

impl Trajectory {
    pub fn new(grid: GridSpec, n_time: usize, phi_a: CellField, v_a: FaceField) -> Self {
        Trajectory {
            grid,
            n_time,
            phi: vec![phi_a],
            mu: Vec::new(),
            vel: vec![v_a],
            pres: Vec::new(),
            control: Vec::new(),
        }
    }

    #[inline]
    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// `phi_i` for `-1 <= i <= M-1`.
    pub fn phi(&self, i: isize) -> &CellField {
        &self.phi[(i + 1) as usize]
    }

    /// `mu_i` for `0 <= i <= M-1`.
    pub fn mu(&self, i: usize) -> &CellField {
        &self.mu[i]
    }

    /// `v_i` for `0 <= i <= M-1`; `v_0` is the fixed initial velocity.
    pub fn vel(&self, i: usize) -> &FaceField {
        &self.vel[i]
    }

    /// `p_i` for `1 <= i <= M-1`.
    pub fn pres(&self, i: usize) -> &CellField {
        &self.pres[i - 1]
    }

    /// `u_i` for `1 <= i <= M-1`.
    pub fn control(&self, i: usize) -> &FaceField {
        &self.control[i - 1]
    }

    pub fn controls(&self) -> &[FaceField] {
        &self.control
    }

    /// Number of completed states (0 after construction, M once finished).
    pub fn n_completed(&self) -> usize {
        self.mu.len()
    }

    pub(crate) fn push_initial(&mut self, phi0: CellField, mu0: CellField) {
        assert!(self.mu.is_empty());
        self.phi.push(phi0);
        self.mu.push(mu0);
    }

    pub(crate) fn push_step(
        &mut self,
        phi: CellField,
        mu: CellField,
        v: FaceField,
        p: CellField,
        u: FaceField,
    ) {
        self.phi.push(phi);
        self.mu.push(mu);
        self.vel.push(v);
        self.pres.push(p);
        self.control.push(u);
    }

    /// Lagged data for the coupled step which produced state `k >= 1`.
    pub(crate) fn step_data(&self, k: usize, cfg: &PhysConfig) -> StepData {
        assert!(k >= 1);
        StepData::build(
            cfg,
            self.phi(k as isize - 1),
            self.phi(k as isize - 2),
            self.mu(k - 1),
            self.vel(k - 1),
        )
    }
}

/// Per-step certification record.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Time index of the produced state (0 for the initial CH step).
    pub step: usize,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub dissipation_visc: f64,
    pub dissipation_mob: f64,
    /// Sum of the three nonnegative increment terms on the left of the
    /// energy estimate.
    pub increment_terms: f64,
    /// `tau * <u, v>` control work entering the right-hand side.
    pub control_work: f64,
    /// RHS - LHS of the discrete energy estimate; certified when
    /// `>= -cert_tol`.
    pub energy_slack: f64,
    pub mass_drift: f64,
    pub div_inf: f64,
    pub violation_lo: f64,
    pub violation_hi: f64,
    /// Cells where the density clamp was active in the lagged coefficients.
    pub density_clamps: usize,
}

/// Total energy `int rho(phi_prev)|v|^2/2 + int |grad phi|^2/2 + Psi(phi)`
/// with `Psi(phi) = sum psi0_alpha(phi) - kappa/2 sum phi^2` (cell-measure
/// weighted); the kinetic density is face-interpolated.
pub fn energy(
    v: &FaceField,
    phi: &CellField,
    phi_prev: &CellField,
    cfg: &PhysConfig,
    pot: &PotentialParams,
) -> f64 {
    let grid = &cfg.grid;
    let (rho_prev, _) = density(phi_prev, cfg);
    let rho_f = ops::avg_cell_to_face(grid, &rho_prev);
    let kinetic = 0.5 * inner_fc(grid, &rho_f.component_mul(v), v);
    let g = ops::grad_cc(grid, phi);
    let interfacial = 0.5 * inner_fc(grid, &g, &g);
    kinetic + interfacial + bulk_potential(phi, cfg, pot)
}

/// `Psi(phi) = sum psi0_alpha(phi) w - kappa/2 sum phi^2 w`.
pub fn bulk_potential(phi: &CellField, cfg: &PhysConfig, pot: &PotentialParams) -> f64 {
    let w = cfg.grid.cell_measure();
    let mut acc = 0.0;
    for &v in phi.values() {
        acc += psi0_alpha(v, pot) - 0.5 * pot.kappa() * v * v;
    }
    w * acc
}

// ---------------------------------------------------------------------------
// residuals
// ---------------------------------------------------------------------------

pub(crate) struct InitGuess {
    pub phi: CellField,
    pub mu: CellField,
    pub ca: f64,
    pub cb: f64,
}

pub(crate) struct StepGuess {
    pub phi: CellField,
    pub mu: CellField,
    pub v: FaceField,
    pub p: CellField,
    pub ca: f64,
    pub cb: f64,
    pub cg: f64,
}

pub(crate) fn residual_init(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    phi_a: &CellField,
    v_a: &FaceField,
    g: &InitGuess,
) -> Vec<f64> {
    let grid = &cfg.grid;
    let lay = StepLayout::new(grid, false);
    let n = lay.n;
    let mut r = vec![0.0; lay.n_dofs()];

    let grad_phi_a = ops::grad_cc(grid, phi_a);
    let m_faces = ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_a));
    let trans = ops::transport(grid, v_a, &grad_phi_a);
    let diff = ops::div_fc(grid, &m_faces.component_mul(&ops::grad_cc(grid, &g.mu)));
    let lap_phi = ops::laplace_neumann(grid, &g.phi);
    let tau = cfg.tau;
    for c in 0..n {
        r[lay.phi(c)] = (g.phi.values()[c] - phi_a.values()[c]) / tau + trans.values()[c]
            - diff.values()[c]
            + g.ca;
        r[lay.mu(c)] = -lap_phi.values()[c] + mollified_yosida(g.phi.values()[c], pot)
            - g.mu.values()[c]
            - pot.kappa() * phi_a.values()[c]
            + g.cb;
    }
    r[lay.ca()] = g.phi.mean();
    r[lay.cb()] = g.mu.mean();
    r
}

pub(crate) fn residual_step(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    data: &StepData,
    phi_prev: &CellField,
    v_prev: &FaceField,
    u: &FaceField,
    g: &StepGuess,
) -> Vec<f64> {
    let grid = &cfg.grid;
    let lay = StepLayout::new(grid, true);
    let n = lay.n;
    let mut r = vec![0.0; lay.n_dofs()];
    let tau = cfg.tau;

    let trans = ops::transport(grid, &g.v, &data.grad_phi_prev);
    let diff = ops::div_fc(
        grid,
        &data.m_prev_faces.component_mul(&ops::grad_cc(grid, &g.mu)),
    );
    let lap_phi = ops::laplace_neumann(grid, &g.phi);
    for c in 0..n {
        r[lay.phi(c)] = (g.phi.values()[c] - phi_prev.values()[c]) / tau + trans.values()[c]
            - diff.values()[c]
            + g.ca;
        r[lay.mu(c)] = -lap_phi.values()[c] + mollified_yosida(g.phi.values()[c], pot)
            - g.mu.values()[c]
            - pot.kappa() * phi_prev.values()[c]
            + g.cb;
    }

    // momentum residual as a face field, gathered onto interior rows
    let mut mom = data.rho_prev_faces.component_mul(&g.v);
    let mut old = data.rho_prev2_faces.component_mul(v_prev);
    old.scale(-1.0);
    mom.scaled_add(1.0, &old);
    mom.scale(1.0 / tau);
    mom.scaled_add(1.0, &ops::convect(grid, &data.nu, &g.v));
    mom.scaled_add(-1.0, &ops::visc_div(grid, &data.eta_prev, &g.v));
    mom.scaled_add(1.0, &ops::grad_cc(grid, &g.p));
    mom.scaled_add(-1.0, &ops::capillary_source(grid, &g.mu, &data.grad_phi_prev));
    mom.scaled_add(-1.0, u);
    lay.gather_face_rows(grid, &mom, &mut r);

    let divv = ops::div_fc(grid, &g.v);
    for c in 0..n {
        r[lay.p(c)] = divv.values()[c] + g.cg;
    }
    r[lay.ca()] = g.phi.mean();
    r[lay.cb()] = g.mu.mean();
    r[lay.cg()] = g.p.mean();
    r
}

// ---------------------------------------------------------------------------
// Jacobians
// ---------------------------------------------------------------------------

/// Five-point pattern for `-div(coef_faces grad .)` (or the Laplacian when
/// the coefficient is one), scattered through `row_of`/`col_of`.
fn assemble_diffusion(
    grid: &GridSpec,
    coef_faces: Option<&FaceField>,
    sign: f64,
    row_of: impl Fn(usize) -> usize,
    col_of: impl Fn(usize) -> usize,
    t: &mut Triplets,
) {
    let (hx, hy) = (grid.hx(), grid.hy());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell(i, j);
            let mut add = |nb: usize, mf: f64, h2: f64| {
                t.push(row_of(c), col_of(c), sign * mf / h2);
                t.push(row_of(c), col_of(nb), -sign * mf / h2);
            };
            if i > 0 {
                let mf = coef_faces.map_or(1.0, |f| f.x()[grid.xface(i, j)]);
                add(grid.cell(i - 1, j), mf, hx * hx);
            }
            if i + 1 < grid.nx {
                let mf = coef_faces.map_or(1.0, |f| f.x()[grid.xface(i + 1, j)]);
                add(grid.cell(i + 1, j), mf, hx * hx);
            }
            if j > 0 {
                let mf = coef_faces.map_or(1.0, |f| f.y()[grid.yface(i, j)]);
                add(grid.cell(i, j - 1), mf, hy * hy);
            }
            if j + 1 < grid.ny {
                let mf = coef_faces.map_or(1.0, |f| f.y()[grid.yface(i, j + 1)]);
                add(grid.cell(i, j + 1), mf, hy * hy);
            }
        }
    }
}

pub(crate) fn jacobian_init(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    phi_a: &CellField,
    g: &InitGuess,
) -> Triplets {
    let grid = &cfg.grid;
    let lay = StepLayout::new(grid, false);
    let n = lay.n;
    let mut t = Triplets::new(lay.n_dofs(), lay.n_dofs());
    let m_faces = ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_a));

    for c in 0..n {
        t.push(lay.phi(c), lay.phi(c), 1.0 / cfg.tau);
        t.push(lay.phi(c), lay.ca(), 1.0);
        t.push(
            lay.mu(c),
            lay.phi(c),
            mollified_yosida_prime(g.phi.values()[c], pot),
        );
        t.push(lay.mu(c), lay.mu(c), -1.0);
        t.push(lay.mu(c), lay.cb(), 1.0);
        t.push(lay.ca(), lay.phi(c), 1.0 / n as f64);
        t.push(lay.cb(), lay.mu(c), 1.0 / n as f64);
    }
    // -div(m grad mu) in the transport rows, -lap phi in the potential rows
    assemble_diffusion(grid, Some(&m_faces), 1.0, |c| lay.phi(c), |c| lay.mu(c), &mut t);
    assemble_diffusion(grid, None, 1.0, |c| lay.mu(c), |c| lay.phi(c), &mut t);
    t
}

pub(crate) fn jacobian_step(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    data: &StepData,
    g: &StepGuess,
) -> Triplets {
    let grid = &cfg.grid;
    let lay = StepLayout::new(grid, true);
    let n = lay.n;
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut t = Triplets::new(lay.n_dofs(), lay.n_dofs());

    for c in 0..n {
        t.push(lay.phi(c), lay.phi(c), 1.0 / cfg.tau);
        t.push(lay.phi(c), lay.ca(), 1.0);
        t.push(
            lay.mu(c),
            lay.phi(c),
            mollified_yosida_prime(g.phi.values()[c], pot),
        );
        t.push(lay.mu(c), lay.mu(c), -1.0);
        t.push(lay.mu(c), lay.cb(), 1.0);
        t.push(lay.p(c), lay.cg(), 1.0);
        t.push(lay.ca(), lay.phi(c), 1.0 / n as f64);
        t.push(lay.cb(), lay.mu(c), 1.0 / n as f64);
        t.push(lay.cg(), lay.p(c), 1.0 / n as f64);
    }
    assemble_diffusion(grid, Some(&data.m_prev_faces), 1.0, |c| lay.phi(c), |c| lay.mu(c), &mut t);
    assemble_diffusion(grid, None, 1.0, |c| lay.mu(c), |c| lay.phi(c), &mut t);

    // transport rows: d/dv of avg(v .* grad phi_prev)
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell(i, j);
            let faces = [
                (ops::fdof_x(grid, i, j), data.grad_phi_prev.x()[grid.xface(i, j)]),
                (ops::fdof_x(grid, i + 1, j), data.grad_phi_prev.x()[grid.xface(i + 1, j)]),
                (ops::fdof_y(grid, i, j), data.grad_phi_prev.y()[grid.yface(i, j)]),
                (ops::fdof_y(grid, i, j + 1), data.grad_phi_prev.y()[grid.yface(i, j + 1)]),
            ];
            for (fd, gval) in faces {
                if let Some(col) = lay.face_dof(grid, fd) {
                    t.push(lay.phi(c), col, 0.5 * gval);
                }
            }
        }
    }

    // momentum rows
    // time term
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            let row = lay.vx(i, j);
            t.push(row, row, data.rho_prev_faces.x()[grid.xface(i, j)] / cfg.tau);
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            let row = lay.vy(i, j);
            t.push(row, row, data.rho_prev_faces.y()[grid.yface(i, j)] / cfg.tau);
        }
    }

    // skew-split convection: S = (A - A^T)/2 plus half-divergence diagonal
    let nu = &data.nu;
    let nxf = grid.n_xfaces();
    let nu_at = |fd: usize| {
        if fd < nxf {
            nu.x()[fd]
        } else {
            nu.y()[fd - nxf]
        }
    };
    ops::for_each_advect_quad(grid, |rowf, colf, nf, coef| {
        let val = 0.5 * coef * nu_at(nf);
        if let (Some(r), Some(c)) = (lay.face_dof(grid, rowf), lay.face_dof(grid, colf)) {
            t.push(r, c, val);
            t.push(c, r, -val);
        }
    });
    let half_div = ops::avg_div_to_faces(grid, nu);
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            let row = lay.vx(i, j);
            t.push(row, row, 0.5 * half_div.x()[grid.xface(i, j)]);
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            let row = lay.vy(i, j);
            t.push(row, row, 0.5 * half_div.y()[grid.yface(i, j)]);
        }
    }

    // viscous block: +E^T diag(2 eta mult) E (residual carries -div(2 eta eps))
    let eta_nodes = ops::coeff_at_nodes(grid, &data.eta_prev);
    let mut per_loc: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2 * n + grid.n_nodes()];
    ops::for_each_symgrad_entry(grid, |loc, fdof, coef| {
        per_loc[loc].push((fdof, coef));
    });
    for (loc, entries) in per_loc.iter().enumerate() {
        let weight = if loc < n {
            2.0 * data.eta_prev.values()[loc]
        } else if loc < 2 * n {
            2.0 * data.eta_prev.values()[loc - n]
        } else {
            2.0 * eta_nodes[loc - 2 * n] * 2.0
        };
        for &(f1, c1) in entries {
            let Some(r) = lay.face_dof(grid, f1) else { continue };
            for &(f2, c2) in entries {
                if let Some(c) = lay.face_dof(grid, f2) {
                    t.push(r, c, weight * c1 * c2);
                }
            }
        }
    }

    // pressure gradient and capillary source in the momentum rows,
    // divergence rows for the new velocity
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            let row = lay.vx(i, j);
            t.push(row, lay.p(grid.cell(i, j)), 1.0 / hx);
            t.push(row, lay.p(grid.cell(i - 1, j)), -1.0 / hx);
            let gval = data.grad_phi_prev.x()[grid.xface(i, j)];
            t.push(row, lay.mu(grid.cell(i, j)), -0.5 * gval);
            t.push(row, lay.mu(grid.cell(i - 1, j)), -0.5 * gval);
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            let row = lay.vy(i, j);
            t.push(row, lay.p(grid.cell(i, j)), 1.0 / hy);
            t.push(row, lay.p(grid.cell(i, j - 1)), -1.0 / hy);
            let gval = data.grad_phi_prev.y()[grid.yface(i, j)];
            t.push(row, lay.mu(grid.cell(i, j)), -0.5 * gval);
            t.push(row, lay.mu(grid.cell(i, j - 1)), -0.5 * gval);
        }
    }
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let row = lay.p(grid.cell(i, j));
            if i > 0 {
                t.push(row, lay.vx(i, j), -1.0 / hx);
            }
            if i + 1 < grid.nx {
                t.push(row, lay.vx(i + 1, j), 1.0 / hx);
            }
            if j > 0 {
                t.push(row, lay.vy(i, j), -1.0 / hy);
            }
            if j + 1 < grid.ny {
                t.push(row, lay.vy(i, j + 1), 1.0 / hy);
            }
        }
    }
    t
}

// ---------------------------------------------------------------------------
// Newton
// ---------------------------------------------------------------------------

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Solves the initial Cahn-Hilliard pair; returns `(phi0, mu0, report)`.
pub fn initial_ch_step(
    phi_a: &CellField,
    v_a: &FaceField,
    cfg: &PhysConfig,
    pot: &PotentialParams,
    opts: &SolverOpts,
) -> Result<(CellField, CellField, StepReport)> {
    let grid = &cfg.grid;
    let lay = StepLayout::new(grid, false);
    let mut guess = InitGuess {
        phi: phi_a.clone(),
        mu: CellField::zeros(grid),
        ca: 0.0,
        cb: 0.0,
    };

    let mut iters = 0;
    let mut res = f64::INFINITY;
    for it in 0..=opts.max_iters {
        let r = residual_init(cfg, pot, phi_a, v_a, &guess);
        res = linf(&r);
        iters = it;
        if res <= opts.newton_tol {
            break;
        }
        if it == opts.max_iters {
            return Err(Error::NewtonDiverged {
                step: 0,
                iters: it,
                residual: res,
            });
        }
        let jac = jacobian_init(cfg, pot, phi_a, &guess);
        let lu = SparseLu::factor(&jac, 0)?;
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = lu.solve(&neg_r, 0)?;
        apply_init_update(grid, &lay, &mut guess, &delta, 1.0);
        if opts.damping {
            let mut scale = 1.0;
            for _ in 0..opts.max_halvings {
                let rn = linf(&residual_init(cfg, pot, phi_a, v_a, &guess));
                if rn <= res || rn <= opts.newton_tol {
                    break;
                }
                // undo half of the remaining update
                scale *= 0.5;
                apply_init_update(grid, &lay, &mut guess, &delta, -scale);
            }
        }
    }

    let report = init_report(cfg, pot, phi_a, v_a, &guess, iters, res);
    Ok((guess.phi, guess.mu, report))
}

fn apply_init_update(
    grid: &GridSpec,
    lay: &StepLayout,
    g: &mut InitGuess,
    delta: &[f64],
    scale: f64,
) {
    let _ = grid;
    for c in 0..lay.n {
        g.phi.values_mut()[c] += scale * delta[lay.phi(c)];
        g.mu.values_mut()[c] += scale * delta[lay.mu(c)];
    }
    g.ca += scale * delta[lay.ca()];
    g.cb += scale * delta[lay.cb()];
}

fn init_report(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    phi_a: &CellField,
    v_a: &FaceField,
    g: &InitGuess,
    iters: usize,
    res: f64,
) -> StepReport {
    let grid = &cfg.grid;
    let tau = cfg.tau;
    let grad_a = ops::grad_cc(grid, phi_a);
    let grad_0 = ops::grad_cc(grid, &g.phi);
    let mut dphi = g.phi.clone();
    dphi.scaled_add(-1.0, phi_a);
    let grad_d = ops::grad_cc(grid, &dphi);
    let m_faces = ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_a));
    let grad_mu = ops::grad_cc(grid, &g.mu);
    let disp_mob = tau * ops::mobility_dissipation(grid, &m_faces, &grad_mu);
    let transport_work =
        tau * inner_cc(grid, &ops::transport(grid, v_a, &grad_a), &g.mu);
    let inc = 0.5 * inner_fc(grid, &grad_d, &grad_d)
        + 0.5 * pot.kappa() * inner_cc(grid, &dphi, &dphi);
    let lhs = 0.5 * inner_fc(grid, &grad_0, &grad_0) + bulk_potential(&g.phi, cfg, pot) + inc
        + disp_mob;
    let rhs =
        0.5 * inner_fc(grid, &grad_a, &grad_a) + bulk_potential(phi_a, cfg, pot) - transport_work;
    let (vlo, vhi) = obstacle_violation(&g.phi, &pot.interval);
    let (_, clamps) = density(phi_a, cfg);
    StepReport {
        step: 0,
        newton_iters: iters,
        final_residual: res,
        energy_before: energy(v_a, phi_a, phi_a, cfg, pot),
        energy_after: energy(v_a, &g.phi, phi_a, cfg, pot),
        dissipation_visc: 0.0,
        dissipation_mob: disp_mob,
        increment_terms: inc,
        control_work: -transport_work,
        energy_slack: rhs - lhs,
        mass_drift: (g.phi.mean() - phi_a.mean()).abs(),
        div_inf: 0.0,
        violation_lo: vlo,
        violation_hi: vhi,
        density_clamps: clamps,
    }
}

/// Solves the coupled step producing state `k >= 1`. `traj` must hold all
/// states up to `k-1`.
pub fn step(
    k: usize,
    traj: &Trajectory,
    u_k: &FaceField,
    cfg: &PhysConfig,
    pot: &PotentialParams,
    opts: &SolverOpts,
) -> Result<(CellField, CellField, FaceField, CellField, StepReport)> {
    assert!(k >= 1 && traj.n_completed() >= k);
    let grid = &cfg.grid;
    let data = traj.step_data(k, cfg);
    let phi_prev = traj.phi(k as isize - 1);
    let v_prev = traj.vel(k - 1);

    let mut guess = StepGuess {
        phi: phi_prev.clone(),
        mu: traj.mu(k - 1).clone(),
        v: v_prev.clone(),
        p: if k >= 2 {
            traj.pres(k - 1).clone()
        } else {
            CellField::zeros(grid)
        },
        ca: 0.0,
        cb: 0.0,
        cg: 0.0,
    };

    let (iters, residual) =
        newton_step_loop(cfg, pot, &data, phi_prev, v_prev, u_k, &mut guess, opts, k)?;
    let report = step_report(k, cfg, pot, &data, traj, u_k, &guess, iters, residual);
    Ok((guess.phi, guess.mu, guess.v, guess.p, report))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn newton_step_loop(
    cfg: &PhysConfig,
    pot: &PotentialParams,
    data: &StepData,
    phi_prev: &CellField,
    v_prev: &FaceField,
    u_k: &FaceField,
    guess: &mut StepGuess,
    opts: &SolverOpts,
    k: usize,
) -> Result<(usize, f64)> {
    let grid = &cfg.grid;
    let lay = StepLayout::new(grid, true);
    let mut iters = 0;
    let mut res = f64::INFINITY;
    for it in 0..=opts.max_iters {
        let r = residual_step(cfg, pot, data, phi_prev, v_prev, u_k, guess);
        res = linf(&r);
        iters = it;
        if res <= opts.newton_tol {
            break;
        }
        if it == opts.max_iters {
            return Err(Error::NewtonDiverged {
                step: k,
                iters: it,
                residual: res,
            });
        }
        let jac = jacobian_step(cfg, pot, data, guess);
        let lu = SparseLu::factor(&jac, k)?;
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = lu.solve(&neg_r, k)?;
        apply_step_update(grid, &lay, guess, &delta, 1.0);
        if opts.damping {
            let mut scale = 1.0;
            for _ in 0..opts.max_halvings {
                let rn = linf(&residual_step(cfg, pot, data, phi_prev, v_prev, u_k, guess));
                if rn <= res || rn <= opts.newton_tol {
                    break;
                }
                scale *= 0.5;
                apply_step_update(grid, &lay, guess, &delta, -scale);
            }
        }
    }
    Ok((iters, res))
}

fn apply_step_update(
    grid: &GridSpec,
    lay: &StepLayout,
    g: &mut StepGuess,
    delta: &[f64],
    scale: f64,
) {
    for c in 0..lay.n {
        g.phi.values_mut()[c] += scale * delta[lay.phi(c)];
        g.mu.values_mut()[c] += scale * delta[lay.mu(c)];
        g.p.values_mut()[c] += scale * delta[lay.p(c)];
    }
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            g.v.x_mut()[grid.xface(i, j)] += scale * delta[lay.vx(i, j)];
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            g.v.y_mut()[grid.yface(i, j)] += scale * delta[lay.vy(i, j)];
        }
    }
    g.ca += scale * delta[lay.ca()];
    g.cb += scale * delta[lay.cb()];
    g.cg += scale * delta[lay.cg()];
}

fn step_report(
    k: usize,
    cfg: &PhysConfig,
    pot: &PotentialParams,
    data: &StepData,
    traj: &Trajectory,
    u_k: &FaceField,
    g: &StepGuess,
    iters: usize,
    res: f64,
) -> StepReport {
    let grid = &cfg.grid;
    let tau = cfg.tau;
    let phi_prev = traj.phi(k as isize - 1);
    let phi_prev2 = traj.phi(k as isize - 2);
    let v_prev = traj.vel(k - 1);

    let disp_visc = tau * ops::visc_dissipation(grid, &data.eta_prev, &g.v);
    let grad_mu = ops::grad_cc(grid, &g.mu);
    let disp_mob = tau * ops::mobility_dissipation(grid, &data.m_prev_faces, &grad_mu);

    let mut dv = g.v.clone();
    dv.scaled_add(-1.0, v_prev);
    let kin_inc = 0.5 * inner_fc(grid, &data.rho_prev2_faces.component_mul(&dv), &dv);
    let mut dphi = g.phi.clone();
    dphi.scaled_add(-1.0, phi_prev);
    let grad_d = ops::grad_cc(grid, &dphi);
    let inc = kin_inc
        + 0.5 * inner_fc(grid, &grad_d, &grad_d)
        + 0.5 * pot.kappa() * inner_cc(grid, &dphi, &dphi);

    let e_before = energy(v_prev, phi_prev, phi_prev2, cfg, pot);
    let e_after = energy(&g.v, &g.phi, phi_prev, cfg, pot);
    let work = tau * inner_fc(grid, u_k, &g.v);
    let slack = e_before + work - (e_after + inc + disp_visc + disp_mob);
    let (vlo, vhi) = obstacle_violation(&g.phi, &pot.interval);
    StepReport {
        step: k,
        newton_iters: iters,
        final_residual: res,
        energy_before: e_before,
        energy_after: e_after,
        dissipation_visc: disp_visc,
        dissipation_mob: disp_mob,
        increment_terms: inc,
        control_work: work,
        energy_slack: slack,
        mass_drift: (g.phi.mean() - phi_prev.mean()).abs(),
        div_inf: ops::div_fc(grid, &g.v).linf(),
        violation_lo: vlo,
        violation_hi: vhi,
        density_clamps: data.clamp_events,
    }
}

/// Runs the initial Cahn-Hilliard step and all coupled steps.
///
/// `controls` holds `u_1 .. u_{M-1}`.
pub fn simulate(
    controls: &[FaceField],
    phi_a: &CellField,
    v_a: &FaceField,
    cfg: &PhysConfig,
    pot: &PotentialParams,
    opts: &SolverOpts,
) -> Result<(Trajectory, Vec<StepReport>)> {
    let grid = cfg.grid;
    if controls.len() != cfg.n_time - 1 {
        return Err(Error::config(format!(
            "expected {} controls, got {}",
            cfg.n_time - 1,
            controls.len()
        )));
    }
    if phi_a.mean().abs() > 1e-10 {
        return Err(Error::config(format!(
            "initial order parameter must be mean-free (mean {:.3e})",
            phi_a.mean()
        )));
    }
    if !v_a.is_noslip(&grid) {
        return Err(Error::config("initial velocity violates the no-slip boundary"));
    }

    let mut traj = Trajectory::new(grid, cfg.n_time, phi_a.clone(), v_a.clone());
    let mut reports = Vec::with_capacity(cfg.n_time);
    let (phi0, mu0, rep0) = initial_ch_step(phi_a, v_a, cfg, pot, opts)?;
    traj.push_initial(phi0, mu0);
    reports.push(rep0);
    for k in 1..cfg.n_time {
        let u_k = &controls[k - 1];
        let (phi, mu, v, p, rep) = step(k, &traj, u_k, cfg, pot, opts)?;
        traj.push_step(phi, mu, v, p, u_k.clone(), );
        reports.push(rep);
    }
    Ok((traj, reports))
}

/// Recomputes the per-step energy-estimate slacks from a converged
/// trajectory (reporting only; independent of the solve path).
pub fn energy_audit(traj: &Trajectory, cfg: &PhysConfig, pot: &PotentialParams) -> Vec<f64> {
    let grid = &cfg.grid;
    let tau = cfg.tau;
    let mut slacks = Vec::with_capacity(traj.n_completed());

    // initial CH step: kinetic terms cancel, transport work appears on the RHS
    {
        let phi_a = traj.phi(-1);
        let phi0 = traj.phi(0);
        let mu0 = traj.mu(0);
        let v_a = traj.vel(0);
        let grad_a = ops::grad_cc(grid, phi_a);
        let grad_0 = ops::grad_cc(grid, phi0);
        let mut dphi = phi0.clone();
        dphi.scaled_add(-1.0, phi_a);
        let grad_d = ops::grad_cc(grid, &dphi);
        let m_faces = ops::avg_cell_to_face(grid, &cfg.mobility.eval_field(phi_a));
        let disp_mob = tau * ops::mobility_dissipation(grid, &m_faces, &ops::grad_cc(grid, mu0));
        let inc = 0.5 * inner_fc(grid, &grad_d, &grad_d)
            + 0.5 * pot.kappa() * inner_cc(grid, &dphi, &dphi);
        let lhs =
            0.5 * inner_fc(grid, &grad_0, &grad_0) + bulk_potential(phi0, cfg, pot) + inc + disp_mob;
        let rhs = 0.5 * inner_fc(grid, &grad_a, &grad_a) + bulk_potential(phi_a, cfg, pot)
            - tau * inner_cc(grid, &ops::transport(grid, v_a, &grad_a), mu0);
        slacks.push(rhs - lhs);
    }

    for k in 1..traj.n_completed() {
        let data = traj.step_data(k, cfg);
        let phi_prev = traj.phi(k as isize - 1);
        let phi_prev2 = traj.phi(k as isize - 2);
        let v_prev = traj.vel(k - 1);
        let v = traj.vel(k);
        let phi = traj.phi(k as isize);
        let mu = traj.mu(k);
        let u = traj.control(k);

        let disp_visc = tau * ops::visc_dissipation(grid, &data.eta_prev, v);
        let disp_mob =
            tau * ops::mobility_dissipation(grid, &data.m_prev_faces, &ops::grad_cc(grid, mu));
        let mut dv = v.clone();
        dv.scaled_add(-1.0, v_prev);
        let mut dphi = phi.clone();
        dphi.scaled_add(-1.0, phi_prev);
        let grad_d = ops::grad_cc(grid, &dphi);
        let inc = 0.5 * inner_fc(grid, &data.rho_prev2_faces.component_mul(&dv), &dv)
            + 0.5 * inner_fc(grid, &grad_d, &grad_d)
            + 0.5 * pot.kappa() * inner_cc(grid, &dphi, &dphi);
        let lhs = energy(v, phi, phi_prev, cfg, pot) + inc + disp_visc + disp_mob;
        let rhs = energy(v_prev, phi_prev, phi_prev2, cfg, pot) + tau * inner_fc(grid, u, v);
        slacks.push(rhs - lhs);
    }
    slacks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::Coefficient;
    use crate::potential::{ObstacleInterval, YosidaParams};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_cfg(nx: usize, ny: usize, n_time: usize, tau: f64) -> PhysConfig {
        PhysConfig {
            rho1: 1.0,
            rho2: 3.0,
            tau,
            n_time,
            mean_shift: 0.0,
            mobility: Coefficient::Tanh { base: 1.0, amplitude: 0.3, width: 1.0 },
            viscosity: Coefficient::Tanh { base: 1.0, amplitude: -0.4, width: 2.0 },
            grid: GridSpec::unit(nx, ny).unwrap(),
        }
    }

    fn test_pot(kappa: f64) -> PotentialParams {
        let k = ObstacleInterval::new(-1.0, 1.0, kappa).unwrap();
        PotentialParams::new(k, YosidaParams::new(0.1, 0.01, &k).unwrap())
    }

    fn random_mean_free(grid: &GridSpec, amp: f64, rng: &mut ChaCha8Rng) -> CellField {
        let mut f = CellField::zeros(grid);
        for v in f.values_mut() {
            *v = rng.gen_range(-amp..amp);
        }
        f.make_mean_free();
        f
    }

    #[test]
    fn zero_equilibrium() {
        let cfg = test_cfg(4, 4, 4, 0.01);
        let pot = test_pot(4.0);
        let grid = cfg.grid;
        let phi_a = CellField::zeros(&grid);
        let v_a = FaceField::zeros(&grid);
        let controls = vec![FaceField::zeros(&grid); cfg.n_time - 1];
        let (traj, reports) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &SolverOpts::default()).unwrap();
        for k in 0..cfg.n_time {
            assert!(traj.phi(k as isize).linf() < 1e-13);
            assert!(traj.mu(k).linf() < 1e-13);
            assert!(traj.vel(k).linf() < 1e-13);
        }
        for r in &reports {
            assert!(r.newton_iters <= 1, "step {} took {} iterations", r.step, r.newton_iters);
            assert!(r.energy_slack.abs() < 1e-12);
        }
    }

    #[test]
    fn step_jacobian_matches_finite_differences() {
        let cfg = test_cfg(4, 3, 3, 0.05);
        let pot = test_pot(2.0);
        let grid = cfg.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let phi_prev = random_mean_free(&grid, 0.9, &mut rng);
        let phi_prev2 = random_mean_free(&grid, 0.9, &mut rng);
        let mu_prev = random_mean_free(&grid, 0.5, &mut rng);
        let mut v_prev = FaceField::zeros(&grid);
        for v in v_prev.x_mut().iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in v_prev.y_mut().iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        v_prev.enforce_noslip(&grid);
        let data = StepData::build(&cfg, &phi_prev, &phi_prev2, &mu_prev, &v_prev);
        let u = FaceField::zeros(&grid);

        let lay = StepLayout::new(&grid, true);
        let nd = lay.n_dofs();
        let mut guess = StepGuess {
            phi: random_mean_free(&grid, 0.9, &mut rng),
            mu: random_mean_free(&grid, 0.5, &mut rng),
            v: v_prev.clone(),
            p: random_mean_free(&grid, 0.5, &mut rng),
            ca: 0.1,
            cb: -0.2,
            cg: 0.05,
        };
        let jac = jacobian_step(&cfg, &pot, &data, &guess).to_dense();

        let h = 1e-6;
        let mut dx = vec![0.0; nd];
        for v in dx.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let eval = |g: &StepGuess| residual_step(&cfg, &pot, &data, &phi_prev, &v_prev, &u, g);
        apply_step_update(&grid, &lay, &mut guess, &dx, h);
        let rp = eval(&guess);
        apply_step_update(&grid, &lay, &mut guess, &dx, -2.0 * h);
        let rm = eval(&guess);
        apply_step_update(&grid, &lay, &mut guess, &dx, h);
        let jdx = &jac * nalgebra::DVector::from_vec(dx.clone());
        for r in 0..nd {
            let fd = (rp[r] - rm[r]) / (2.0 * h);
            assert!(
                (jdx[r] - fd).abs() < 5e-6 * (1.0 + fd.abs()),
                "row {r}: analytic {} vs fd {fd}",
                jdx[r]
            );
        }
    }

    #[test]
    fn conservation_and_energy_slack_small_run() {
        let cfg = test_cfg(8, 8, 4, 1e-3);
        let pot = test_pot(50.0);
        let grid = cfg.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi_a = random_mean_free(&grid, 0.05, &mut rng);
        let v_a = FaceField::zeros(&grid);
        let controls = vec![FaceField::zeros(&grid); cfg.n_time - 1];
        let opts = SolverOpts { newton_tol: 1e-11, ..Default::default() };
        let (traj, reports) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &opts).unwrap();
        for r in &reports {
            assert!(r.mass_drift < 1e-12, "step {}: mass drift {}", r.step, r.mass_drift);
            assert!(r.div_inf < 1e-10, "step {}: div {}", r.step, r.div_inf);
            assert!(r.energy_slack >= -1e-8, "step {}: slack {}", r.step, r.energy_slack);
            assert_eq!(r.density_clamps, 0);
        }
        let slacks = energy_audit(&traj, &cfg, &pot);
        for (k, s) in slacks.iter().enumerate() {
            assert!(*s >= -1e-8, "audit step {k}: slack {s}");
        }
        // energy chain nonincreasing for u = 0
        for pair in reports.windows(2) {
            assert!(pair[1].energy_after <= pair[0].energy_after + 1e-8);
        }
        // means stay fixed across all time indices
        for k in 0..cfg.n_time {
            assert!(traj.phi(k as isize).mean().abs() < 1e-12);
            assert!(traj.mu(k).mean().abs() < 1e-12);
        }
    }

    #[test]
    fn init_step_from_plateau_state() {
        // phi_a inside the plateau, v_a = 0: gamma~(phi_a) = 0 so mu0 solves
        // -lap phi0 - mu0 - kappa phi_a = const; check mean-freeness and tol
        let cfg = test_cfg(6, 6, 2, 0.01);
        let pot = test_pot(1.0);
        let grid = cfg.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi_a = random_mean_free(&grid, 0.3, &mut rng);
        let v_a = FaceField::zeros(&grid);
        let (phi0, mu0, rep) =
            initial_ch_step(&phi_a, &v_a, &cfg, &pot, &SolverOpts::default()).unwrap();
        assert!(phi0.mean().abs() < 1e-12);
        assert!(mu0.mean().abs() < 1e-12);
        assert!(rep.final_residual <= 1e-10);
        assert!(rep.energy_slack >= -1e-10);
    }
}
