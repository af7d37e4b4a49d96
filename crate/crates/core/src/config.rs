//! Run configuration: strict TOML with documented defaults for every field.
//! Unknown keys are rejected so parameter drift cannot pass silently.

use crate::control::{ControlParams, OptimizeOpts};
use crate::continuation::ProbeOpts;
use crate::error::{Error, Result};
use crate::forward::SolverOpts;
use crate::grid::{CellField, FaceField, GridSpec};
use crate::physics::{Coefficient, PhysConfig};
use crate::potential::{ObstacleInterval, PotentialFamily, PotentialParams, ThetaRule};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            nx: 32,
            ny: 32,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub rho1: f64,
    pub rho2: f64,
    pub mean_shift: f64,
    pub mobility: Coefficient,
    pub viscosity: Coefficient,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection {
            rho1: 1.0,
            rho2: 2.0,
            mean_shift: 0.0,
            mobility: Coefficient::Constant { value: 1.0 },
            viscosity: Coefficient::Constant { value: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    /// Lower/upper obstacle; when omitted they derive from the mean shift
    /// as `-1 - shift` and `1 - shift`.
    pub psi1: Option<f64>,
    pub psi2: Option<f64>,
    pub kappa: f64,
    pub alpha0: f64,
    pub alpha_factor: f64,
    pub n_stages: usize,
    pub theta_rule: ThetaRule,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection {
            psi1: None,
            psi2: None,
            kappa: 100.0,
            alpha0: 0.2,
            alpha_factor: 0.5,
            n_stages: 4,
            theta_rule: ThetaRule::AlphaSquared,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub tau: f64,
    /// Number of time instances M; states are indexed -1..M-1.
    pub n_steps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            tau: 1e-3,
            n_steps: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// Mean-free uniform noise of the given amplitude (seeded).
    Spinodal { amplitude: f64 },
    /// Horizontal double stripe built from tanh profiles, mean-free.
    Stripes { amplitude: f64, width: f64 },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Spinodal { amplitude: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub damping: bool,
    pub max_halvings: usize,
    /// Energy-estimate certification tolerance: audit passes when every
    /// slack is `>= -cert_tol`.
    pub cert_tol: f64,
    pub mass_tol: f64,
    pub div_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            newton_tol: 1e-10,
            max_iters: 50,
            damping: true,
            max_halvings: 10,
            cert_tol: 1e-8,
            mass_tol: 1e-12,
            div_tol: 1e-10,
        }
    }
}

/// How the desired terminal state is produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Track the zero state.
    Zero,
    /// Run the forward model once with a known generating control and track
    /// its terminal state (the controllable scenario).
    FromControl { amplitude: f64 },
    /// Track a stripe pattern directly.
    Stripes { amplitude: f64, width: f64 },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Zero
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub xi: f64,
    pub target: TargetSpec,
    pub box_lo: f64,
    pub box_hi: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            xi: 1e-4,
            target: TargetSpec::Zero,
            box_lo: -10.0,
            box_hi: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub tol_stat: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizeOpts::default();
        OptimizerSection {
            tol_stat: o.tol_stat,
            max_iters: o.max_iters,
            armijo_c: o.armijo_c,
            backtrack_factor: o.backtrack_factor,
            max_backtracks: o.max_backtracks,
            initial_step: o.initial_step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationSection {
    pub eps_set_tol: f64,
    pub tol_act: f64,
    /// Required first-to-last shrink factor of the normalized residuals.
    pub min_decay_factor: f64,
    /// Upper bound accepted for the observed collar ratio.
    pub max_collar_ratio: f64,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        ContinuationSection {
            eps_set_tol: 1e-8,
            tol_act: 1e-6,
            min_decay_factor: 1.5,
            max_collar_ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub n_directions: usize,
    pub fd_step: f64,
    pub tol_rel: f64,
    pub amplitude: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            n_directions: 10,
            fd_step: 1e-4,
            tol_rel: 1e-5,
            amplitude: 0.2,
        }
    }
}

/// The complete run configuration; every field has a documented default and
/// an empty file parses to the full-default config.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub potential: PotentialSection,
    pub time: TimeSection,
    pub initial: InitialData,
    pub solver: SolverSection,
    pub objective: ObjectiveSection,
    pub optimizer: OptimizerSection,
    pub continuation: ContinuationSection,
    pub gradcheck: GradcheckSection,
}

/// Parses and fully validates a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::config(format!("config serialize error: {e}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.phys_config()?.validate()?;
        self.obstacle_interval()?;
        self.potential_family()?;
        if !(self.time.tau > 0.0) {
            return Err(Error::config(format!(
                "time.tau must be positive (got {})",
                self.time.tau
            )));
        }
        if self.time.n_steps < 2 {
            return Err(Error::config(format!(
                "time.n_steps must be >= 2 (got {})",
                self.time.n_steps
            )));
        }
        if self.objective.box_lo > self.objective.box_hi {
            return Err(Error::config(format!(
                "objective.box_lo {} exceeds objective.box_hi {}",
                self.objective.box_lo, self.objective.box_hi
            )));
        }
        if !(self.objective.xi >= 0.0) {
            return Err(Error::config("objective.xi must be >= 0"));
        }
        if self.objective.xi == 0.0
            && (self.objective.box_lo.is_infinite() || self.objective.box_hi.is_infinite())
        {
            return Err(Error::config(
                "objective.xi = 0 requires a bounded control box",
            ));
        }
        if !(self.solver.newton_tol > 0.0) {
            return Err(Error::config("solver.newton_tol must be positive"));
        }
        if !(self.optimizer.tol_stat > 0.0) {
            return Err(Error::config("optimizer.tol_stat must be positive"));
        }
        if !(self.optimizer.backtrack_factor > 0.0 && self.optimizer.backtrack_factor < 1.0) {
            return Err(Error::config(
                "optimizer.backtrack_factor must lie in (0, 1)",
            ));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn phys_config(&self) -> Result<PhysConfig> {
        Ok(PhysConfig {
            rho1: self.physics.rho1,
            rho2: self.physics.rho2,
            tau: self.time.tau,
            n_time: self.time.n_steps,
            mean_shift: self.physics.mean_shift,
            mobility: self.physics.mobility,
            viscosity: self.physics.viscosity,
            grid: self.grid_spec()?,
        })
    }

    pub fn obstacle_interval(&self) -> Result<ObstacleInterval> {
        let psi1 = self.potential.psi1.unwrap_or(-1.0 - self.physics.mean_shift);
        let psi2 = self.potential.psi2.unwrap_or(1.0 - self.physics.mean_shift);
        if psi1 >= psi2 {
            return Err(Error::config(format!(
                "potential.psi1 {psi1} must be below potential.psi2 {psi2}"
            )));
        }
        ObstacleInterval::new(psi1, psi2, self.potential.kappa)
    }

    pub fn potential_family(&self) -> Result<PotentialFamily> {
        let interval = self.obstacle_interval()?;
        if !(self.potential.alpha_factor > 0.0 && self.potential.alpha_factor < 1.0) {
            return Err(Error::config(format!(
                "potential.alpha_factor must lie in (0, 1) (got {})",
                self.potential.alpha_factor
            )));
        }
        if self.potential.n_stages == 0 {
            return Err(Error::config("potential.n_stages must be >= 1"));
        }
        let schedule = (0..self.potential.n_stages)
            .map(|n| self.potential.alpha0 * self.potential.alpha_factor.powi(n as i32))
            .collect();
        PotentialFamily::new(interval, schedule, self.potential.theta_rule)
    }

    /// Potential parameters of the first stage (used by the single-stage
    /// subcommands).
    pub fn stage0(&self) -> Result<PotentialParams> {
        self.potential_family()?.stage(0)
    }

    pub fn solver_opts(&self) -> SolverOpts {
        SolverOpts {
            newton_tol: self.solver.newton_tol,
            max_iters: self.solver.max_iters,
            damping: self.solver.damping,
            max_halvings: self.solver.max_halvings,
        }
    }

    pub fn optimize_opts(&self) -> OptimizeOpts {
        OptimizeOpts {
            tol_stat: self.optimizer.tol_stat,
            max_iters: self.optimizer.max_iters,
            armijo_c: self.optimizer.armijo_c,
            backtrack_factor: self.optimizer.backtrack_factor,
            max_backtracks: self.optimizer.max_backtracks,
            initial_step: self.optimizer.initial_step,
        }
    }

    pub fn probe_opts(&self) -> ProbeOpts {
        ProbeOpts {
            eps_set_tol: self.continuation.eps_set_tol,
            tol_act: self.continuation.tol_act,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Builds the seeded initial data `(phi_a, v_a)`; the order parameter is
    /// mean-free and inside the obstacle interval, the velocity zero.
    pub fn initial_state(&self) -> Result<(CellField, FaceField)> {
        let grid = self.grid_spec()?;
        let interval = self.obstacle_interval()?;
        let mut rng = self.rng();
        let phi = match &self.initial {
            InitialData::Zero => CellField::zeros(&grid),
            InitialData::Spinodal { amplitude } => {
                let mut f = CellField::zeros(&grid);
                for v in f.values_mut() {
                    *v = rng.gen_range(-amplitude..*amplitude);
                }
                f.make_mean_free();
                f
            }
            InitialData::Stripes { amplitude, width } => {
                stripe_profile(&grid, *amplitude, *width)
            }
        };
        let (lo, hi) = crate::potential::obstacle_violation(&phi, &interval);
        if lo > 0.0 || hi > 0.0 {
            return Err(Error::config(format!(
                "initial order parameter violates the obstacle interval by ({lo:.3e}, {hi:.3e})"
            )));
        }
        Ok((phi, FaceField::zeros(&grid)))
    }

    /// The generating control of the controllable scenario: a fixed
    /// divergence-free vortex force scaled by `amplitude`, constant in time.
    pub fn generating_control(&self, amplitude: f64) -> Result<Vec<FaceField>> {
        let grid = self.grid_spec()?;
        let (lx, ly) = (grid.lx, grid.ly);
        let tau = std::f64::consts::TAU;
        let u = FaceField::from_fn_interior(
            &grid,
            move |x, y| amplitude * (tau * y / ly).sin() * (tau * x / lx).cos(),
            move |x, y| -amplitude * (tau * x / lx).sin() * (tau * y / ly).cos(),
        );
        Ok(vec![u; self.time.n_steps - 1])
    }

    /// Assembles the control-problem data; `phi_d` may require one forward
    /// run, performed by the caller through [`TargetSpec`].
    pub fn control_params_with_target(&self, phi_d: CellField) -> Result<ControlParams> {
        let cp = ControlParams {
            phi_d,
            xi: self.objective.xi,
            box_lo: self.objective.box_lo,
            box_hi: self.objective.box_hi,
        };
        cp.validate()?;
        Ok(cp)
    }
}

/// Mean-free horizontal double stripe: high band between 30% and 70% of
/// the height, smoothed over `width`, rescaled so the sup norm equals
/// `amplitude` after the mean-free projection.
pub fn stripe_profile(grid: &GridSpec, amplitude: f64, width: f64) -> CellField {
    let ly = grid.ly;
    let mut f = CellField::from_fn(grid, |_, y| {
        ((y - 0.3 * ly) / width).tanh() * ((0.7 * ly - y) / width).tanh()
    });
    f.make_mean_free();
    let sup = f.linf();
    if sup > 0.0 {
        let scale = amplitude / sup;
        for v in f.values_mut() {
            *v *= scale;
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_full_default() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.grid.nx, 32);
        assert_eq!(cfg.time.n_steps, 6);
        assert_eq!(cfg.seed, 7);
        assert!(matches!(cfg.initial, InitialData::Spinodal { .. }));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(parse_config("[grid]\nnx = 8\nbogus = 1\n").is_err());
        assert!(parse_config("[nonsense]\na = 1\n").is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        let err = parse_config("[time]\ntau = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("time.tau"), "{err}");
        assert!(parse_config("[time]\nn_steps = 1\n").is_err());
        assert!(parse_config("[physics]\nrho1 = 2.0\nrho2 = 1.0\n").is_err());
        assert!(parse_config("[potential]\npsi1 = 1.0\npsi2 = -1.0\n").is_err());
        assert!(parse_config("[objective]\nbox_lo = 2.0\nbox_hi = 1.0\n").is_err());
        assert!(parse_config("[objective]\nxi = 0.0\nbox_lo = -inf\nbox_hi = inf\n").is_err());
    }

    #[test]
    fn config_roundtrip() {
        let text = r#"
seed = 42
[grid]
nx = 16
ny = 16
[physics]
rho1 = 1.0
rho2 = 3.0
mobility = { kind = "tanh", base = 1.0, amplitude = 0.3, width = 1.0 }
[potential]
kappa = 50.0
alpha0 = 0.2
n_stages = 3
[time]
tau = 0.002
n_steps = 4
[initial]
kind = "stripes"
amplitude = 0.9
width = 0.08
"#;
        let cfg = parse_config(text).unwrap();
        let ser = serialize_config(&cfg).unwrap();
        let cfg2 = parse_config(&ser).unwrap();
        let ser2 = serialize_config(&cfg2).unwrap();
        assert_eq!(ser, ser2, "serialize -> parse -> serialize must be stable");
        assert_eq!(cfg.seed, cfg2.seed);
        assert_eq!(cfg.grid.nx, cfg2.grid.nx);
    }

    #[test]
    fn initial_data_stays_inside_interval() {
        let cfg = parse_config("[initial]\nkind = \"stripes\"\namplitude = 0.9\nwidth = 0.05\n")
            .unwrap();
        let (phi, v) = cfg.initial_state().unwrap();
        assert!(phi.mean().abs() < 1e-12);
        assert!(v.linf() == 0.0);
        let k = cfg.obstacle_interval().unwrap();
        let (lo, hi) = crate::potential::obstacle_violation(&phi, &k);
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn determinism_of_seeded_initial_data() {
        let cfg = parse_config("seed = 9\n").unwrap();
        let (a, _) = cfg.initial_state().unwrap();
        let (b, _) = cfg.initial_state().unwrap();
        assert_eq!(a.values(), b.values());
    }
}
