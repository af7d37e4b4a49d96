//! Adjoint verification: the reduced gradient against central finite
//! differences of the reduced objective, per-step transpose exactness, and
//! the structural audits of the adjoint operator blocks.

use chns_core::adjoint::{adjoint_sweep, multiplier_fields, reduced_gradient};
use chns_core::control::{objective, objective_state_gradient, ControlParams};
use chns_core::forward::{simulate, SolverOpts};
use chns_core::grid::{inner_cc, inner_fc, CellField, FaceField, GridSpec};
use chns_core::ops;
use chns_core::physics::{Coefficient, PhysConfig};
use chns_core::potential::{ObstacleInterval, PotentialParams, YosidaParams};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn cfg_8x8(n_time: usize) -> (PhysConfig, PotentialParams) {
    let cfg = PhysConfig {
        rho1: 1.0,
        rho2: 2.0,
        tau: 0.05,
        n_time,
        mean_shift: 0.0,
        mobility: Coefficient::Tanh {
            base: 1.0,
            amplitude: 0.3,
            width: 1.0,
        },
        viscosity: Coefficient::Tanh {
            base: 1.0,
            amplitude: -0.4,
            width: 2.0,
        },
        grid: GridSpec::unit(8, 8).unwrap(),
    };
    let k = ObstacleInterval::new(-1.0, 1.0, 10.0).unwrap();
    let pot = PotentialParams::new(k, YosidaParams::new(0.15, 0.0225, &k).unwrap());
    (cfg, pot)
}

fn random_mean_free(grid: &GridSpec, amp: f64, rng: &mut ChaCha8Rng) -> CellField {
    let mut f = CellField::zeros(grid);
    for v in f.values_mut() {
        *v = rng.gen_range(-amp..amp);
    }
    f.make_mean_free();
    f
}

fn random_noslip(grid: &GridSpec, amp: f64, rng: &mut ChaCha8Rng) -> FaceField {
    let mut f = FaceField::zeros(grid);
    for v in f.x_mut().iter_mut() {
        *v = rng.gen_range(-amp..amp);
    }
    for v in f.y_mut().iter_mut() {
        *v = rng.gen_range(-amp..amp);
    }
    f.enforce_noslip(grid);
    f
}

fn control_inner(grid: &GridSpec, a: &[FaceField], b: &[FaceField]) -> f64 {
    a.iter().zip(b).map(|(x, y)| inner_fc(grid, x, y)).sum()
}

#[test]
fn reduced_gradient_matches_finite_differences() {
    let (cfg, pot) = cfg_8x8(3);
    let grid = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let phi_a = {
        let mut f = random_mean_free(&grid, 0.6, &mut rng);
        for v in f.values_mut() {
            *v = v.clamp(-0.95, 0.95);
        }
        f.make_mean_free();
        f
    };
    let v_a = FaceField::zeros(&grid);
    let cp = ControlParams {
        phi_d: random_mean_free(&grid, 0.5, &mut rng),
        xi: 1e-3,
        box_lo: f64::NEG_INFINITY,
        box_hi: f64::INFINITY,
    };
    let controls: Vec<FaceField> = (1..cfg.n_time)
        .map(|_| random_noslip(&grid, 0.2, &mut rng))
        .collect();

    let opts = SolverOpts {
        newton_tol: 1e-12,
        ..Default::default()
    };
    let (traj, _) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &opts).unwrap();
    let adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, &cp), &cfg, &pot).unwrap();
    let grad = reduced_gradient(&controls, &adj, cp.xi, &grid);

    let jred = |u: &[FaceField]| -> f64 {
        let (t, _) = simulate(u, &phi_a, &v_a, &cfg, &pot, &opts).unwrap();
        objective(&t, u, &cp)
    };

    let mut worst = 0.0f64;
    for dir in 0..10 {
        let du: Vec<FaceField> = (1..cfg.n_time)
            .map(|_| random_noslip(&grid, 1.0, &mut rng))
            .collect();
        let analytic = control_inner(&grid, &grad, &du);

        // central differences at two steps with a Richardson combination
        let h = 1e-4;
        let eval = |t: f64| {
            let mut u = controls.clone();
            for (uu, dd) in u.iter_mut().zip(&du) {
                uu.scaled_add(t, dd);
            }
            jred(&u)
        };
        let d_h = (eval(h) - eval(-h)) / (2.0 * h);
        let d_h2 = (eval(h / 2.0) - eval(-h / 2.0)) / h;
        let fd = (4.0 * d_h2 - d_h) / 3.0;

        let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-5,
            "direction {dir}: adjoint {analytic:.12e} vs fd {fd:.12e} (rel {rel:.3e})"
        );
    }
    println!("gradcheck worst relative error: {worst:.3e}");
}

#[test]
fn adjoint_zero_for_attained_target() {
    // phi_d equal to the reached terminal state and xi = 0 makes the
    // objective gradient vanish, so the whole adjoint must vanish
    let (cfg, pot) = cfg_8x8(3);
    let grid = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let phi_a = random_mean_free(&grid, 0.2, &mut rng);
    let v_a = FaceField::zeros(&grid);
    let controls = vec![FaceField::zeros(&grid); cfg.n_time - 1];
    let opts = SolverOpts::default();
    let (traj, _) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &opts).unwrap();
    let cp = ControlParams {
        phi_d: traj.phi(traj.n_time() as isize - 1).clone(),
        xi: 0.0,
        box_lo: -1.0,
        box_hi: 1.0,
    };
    let adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, &cp), &cfg, &pot).unwrap();
    for i in -1..(traj.n_time() as isize - 1) {
        assert!(adj.p(i).linf() < 1e-11);
        assert!(adj.r(i).linf() < 1e-11);
    }
    for i in 0..traj.n_time() - 1 {
        assert!(adj.q(i).linf() < 1e-11);
    }
}

#[test]
fn adjoint_velocity_divergence_free() {
    let (cfg, pot) = cfg_8x8(4);
    let grid = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let phi_a = random_mean_free(&grid, 0.5, &mut rng);
    let v_a = FaceField::zeros(&grid);
    let controls: Vec<FaceField> = (1..cfg.n_time)
        .map(|_| random_noslip(&grid, 0.3, &mut rng))
        .collect();
    let (traj, _) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &SolverOpts::default()).unwrap();
    let cp = ControlParams {
        phi_d: random_mean_free(&grid, 0.5, &mut rng),
        xi: 1e-2,
        box_lo: -1.0,
        box_hi: 1.0,
    };
    let adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, &cp), &cfg, &pot).unwrap();
    for i in 0..traj.n_time() - 1 {
        let d = ops::div_fc(&grid, adj.q(i));
        assert!(d.linf() < 1e-10, "div q_{i} = {}", d.linf());
    }
}

#[test]
fn multiplier_fields_structure() {
    let (cfg, pot) = cfg_8x8(3);
    let grid = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // keep phi inside the plateau: multipliers vanish identically there
    let phi_a = random_mean_free(&grid, 0.2, &mut rng);
    let v_a = FaceField::zeros(&grid);
    let controls = vec![FaceField::zeros(&grid); cfg.n_time - 1];
    let (traj, _) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &SolverOpts::default()).unwrap();
    let cp = ControlParams {
        phi_d: random_mean_free(&grid, 0.5, &mut rng),
        xi: 1e-2,
        box_lo: -1.0,
        box_hi: 1.0,
    };
    let adj = adjoint_sweep(&traj, &objective_state_gradient(&traj, &cp), &cfg, &pot).unwrap();
    let mults = multiplier_fields(&traj, &adj, &pot);
    assert_eq!(mults.len(), traj.n_time());
    let (lo, hi) = chns_core::potential::obstacle_violation(
        traj.phi(traj.n_time() as isize - 1),
        &pot.interval,
    );
    if lo == 0.0 && hi == 0.0 {
        // plateau run: a and lambda vanish wherever phi is interior
        for m in &mults {
            let phi = traj.phi(m.time_index as isize);
            for (c, &pv) in phi.values().iter().enumerate() {
                if pv > pot.interval.psi1 + pot.yosida.theta
                    && pv < pot.interval.psi2 - pot.yosida.theta
                {
                    assert_eq!(m.a.values()[c], 0.0);
                    assert_eq!(m.lambda.values()[c], 0.0);
                }
            }
        }
    }
    // sign pairing <lambda_i, r_{i-1}> = sum gamma~'(phi) r^2 w >= 0 always
    for m in &mults {
        let r_prev = adj.r(m.time_index as isize - 1);
        let ip = inner_cc(&grid, &m.lambda, r_prev);
        assert!(ip >= -1e-15, "sign pairing {ip}");
    }
}
