//! Dual-route verification: the staggered-grid operators against dense
//! assembled matrices, and the sparse per-step Newton solver against a
//! dense monolithic Newton solve of the full space-time system.

use chns_core::forward::{simulate, SolverOpts};
use chns_core::grid::{CellField, FaceField, GridSpec};
use chns_core::oracle::{
    cell_to_vec, dense_advect, dense_div, dense_grad, dense_lap, dense_symgrad, face_to_vec,
    vec_to_face, DenseSystem,
};
use chns_core::ops;
use chns_core::physics::{Coefficient, PhysConfig};
use chns_core::potential::{ObstacleInterval, PotentialParams, YosidaParams};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_cell(grid: &GridSpec, rng: &mut ChaCha8Rng) -> CellField {
    let vals = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    CellField::from_values(grid, vals).unwrap()
}

fn random_face(grid: &GridSpec, rng: &mut ChaCha8Rng, noslip: bool) -> FaceField {
    let mut f = FaceField::zeros(grid);
    for k in 0..grid.n_xfaces() {
        f.x_mut()[k] = rng.gen_range(-1.0..1.0);
    }
    for k in 0..grid.n_yfaces() {
        f.y_mut()[k] = rng.gen_range(-1.0..1.0);
    }
    if noslip {
        f.enforce_noslip(grid);
    }
    f
}

#[test]
fn gradient_matches_dense_matrix() {
    let grid = GridSpec::new(5, 5, 1.0, 1.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = dense_grad(&grid);
    for _ in 0..5 {
        let f = random_cell(&grid, &mut rng);
        let expect = &g * cell_to_vec(&f);
        let got = face_to_vec(&grid, &ops::grad_cc(&grid, &f));
        assert!((got - expect).amax() < 1e-13);
    }
}

#[test]
fn divergence_matches_negated_gradient_transpose() {
    let grid = GridSpec::new(5, 4, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = dense_div(&grid);
    let gt = dense_grad(&grid).transpose();
    assert!((&d + &gt).amax() < 1e-14, "div must equal -grad^T");
    for _ in 0..5 {
        let v = random_face(&grid, &mut rng, false);
        let expect = &d * face_to_vec(&grid, &v);
        let got = cell_to_vec(&ops::div_fc(&grid, &v));
        assert!((got - expect).amax() < 1e-13);
    }
}

#[test]
fn laplacian_symmetric_nsd_constant_kernel() {
    for (nx, ny) in [(4, 4), (8, 8), (6, 5)] {
        let grid = GridSpec::unit(nx, ny).unwrap();
        let l = dense_lap(&grid);
        assert!((&l - l.transpose()).amax() == 0.0, "laplacian not symmetric");
        let ones = DVector::from_element(grid.n_cells(), 1.0);
        assert!((&l * &ones).amax() < 1e-12, "constants not in kernel");
        let eig = l.symmetric_eigenvalues();
        let mut zero_count = 0;
        for e in eig.iter() {
            assert!(*e <= 1e-9, "positive eigenvalue {e}");
            if e.abs() < 1e-9 {
                zero_count += 1;
            }
        }
        assert_eq!(zero_count, 1, "kernel dimension must be one (constants)");
    }
}

#[test]
fn sym_grad_matches_dense_matrix() {
    let grid = GridSpec::new(5, 5, 1.2, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let e = dense_symgrad(&grid);
    let n = grid.n_cells();
    for _ in 0..5 {
        let v = random_face(&grid, &mut rng, true);
        let expect = &e * face_to_vec(&grid, &v);
        let t = ops::sym_grad(&grid, &v);
        for c in 0..n {
            assert!((t.xx[c] - expect[c]).abs() < 1e-13);
            assert!((t.yy[c] - expect[n + c]).abs() < 1e-13);
        }
        for nd in 0..grid.n_nodes() {
            assert!((t.xy[nd] - expect[2 * n + nd]).abs() < 1e-13);
        }
    }
}

#[test]
fn convect_matches_dense_composition() {
    let grid = GridSpec::unit(5, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let nu = random_face(&grid, &mut rng, true);
        let v = random_face(&grid, &mut rng, true);
        let a = dense_advect(&grid, &nu);
        let skew = (&a - a.transpose()) * 0.5;
        let divnu = dense_div(&grid) * face_to_vec(&grid, &nu);
        let vv = face_to_vec(&grid, &v);
        let mut expect = skew * &vv;
        let divnu_field =
            CellField::from_values(&grid, divnu.iter().copied().collect()).unwrap();
        let avg = ops::avg_cell_to_face_interior(&grid, &divnu_field);
        let avg_vec = face_to_vec(&grid, &avg);
        for k in 0..expect.len() {
            expect[k] += 0.5 * avg_vec[k] * vv[k];
        }
        let mut expect_field = vec_to_face(&grid, &expect);
        expect_field.enforce_noslip(&grid);
        let got = ops::convect(&grid, &nu, &v);
        let diff = face_to_vec(&grid, &got) - face_to_vec(&grid, &expect_field);
        assert!(diff.amax() < 1e-13);
    }
}

fn oracle_cfg(nx: usize, ny: usize, n_time: usize) -> (PhysConfig, PotentialParams) {
    let cfg = PhysConfig {
        rho1: 1.0,
        rho2: 2.5,
        tau: 0.02,
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
        grid: GridSpec::unit(nx, ny).unwrap(),
    };
    let k = ObstacleInterval::new(-1.0, 1.0, 20.0).unwrap();
    let pot = PotentialParams::new(k, YosidaParams::new(0.1, 0.01, &k).unwrap());
    (cfg, pot)
}

fn run_oracle_equivalence(nx: usize, ny: usize, n_time: usize, seed: u64) {
    let (cfg, pot) = oracle_cfg(nx, ny, n_time);
    let grid = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi_a = random_cell(&grid, &mut rng);
    for v in phi_a.values_mut() {
        *v *= 0.4;
    }
    phi_a.make_mean_free();
    let v_a = FaceField::zeros(&grid);
    let mut controls = Vec::new();
    for _ in 1..n_time {
        let mut u = random_face(&grid, &mut rng, true);
        u.scale(0.1);
        controls.push(u);
    }

    let opts = SolverOpts {
        newton_tol: 1e-13,
        ..Default::default()
    };
    let (traj, _) = simulate(&controls, &phi_a, &v_a, &cfg, &pot, &opts).unwrap();

    let sys = DenseSystem::new(&cfg, &pot, &phi_a, &v_a, &controls);
    let x = sys.newton(1e-13, 30).expect("dense Newton did not converge");
    let (phis, mus, vels, pres) = sys.unpack(&x);

    for k in 0..n_time {
        let dphi = cell_to_vec(traj.phi(k as isize)) - cell_to_vec(&phis[k]);
        assert!(dphi.amax() < 1e-10, "phi mismatch at step {k}: {}", dphi.amax());
        let dmu = cell_to_vec(traj.mu(k)) - cell_to_vec(&mus[k]);
        assert!(dmu.amax() < 1e-10, "mu mismatch at step {k}: {}", dmu.amax());
        if k >= 1 {
            let dv = face_to_vec(&grid, traj.vel(k)) - face_to_vec(&grid, &vels[k - 1]);
            assert!(dv.amax() < 1e-10, "v mismatch at step {k}: {}", dv.amax());
            let dp = cell_to_vec(traj.pres(k)) - cell_to_vec(&pres[k - 1]);
            assert!(dp.amax() < 1e-10, "p mismatch at step {k}: {}", dp.amax());
        }
    }
}

#[test]
fn monolithic_oracle_equivalence_4x4() {
    run_oracle_equivalence(4, 4, 3, 31);
}

#[test]
fn monolithic_oracle_equivalence_5x5() {
    run_oracle_equivalence(5, 5, 3, 37);
}
