use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::analysis::{
    build_closed_loop, check_certificate, default_mu_grid, find_certificate, min_reset_horizon, HorizonForm,
    StabilityCertificate, DEFAULT_EPS_BAR,
};
use crate::controller_runtime::ControllerMatrices;
use crate::linalg::{inertia, inverse, spectral_radius, sym_eig};
use crate::plant::batch_reactor;
use crate::presets::reactor_controller_t25;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Symmetric with spectrum in `[lo, hi]`.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Matrix {
    let q = sym_eig(&random_matrix(rng, n, n, 1.0).symmetrize()).unwrap().vectors;
    let d = Matrix::diag(&(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>());
    (&(&q * &d) * &q.transpose()).symmetrize()
}

fn random_plant(rng: &mut ChaCha8Rng, n: usize, n_y: usize, n_u: usize) -> PlantModel {
    PlantModel::new(
        random_matrix(rng, n, n, 1.0),
        random_matrix(rng, n, n_u, 1.0),
        random_matrix(rng, n_y, n, 1.0),
        vec![1.0; n],
    )
    .unwrap()
}

/// `ν` with `𝐏(ν) ≻ 0` and a well-conditioned `I − YX`.
fn random_nu(rng: &mut ChaCha8Rng, n: usize, n_y: usize, n_u: usize) -> SynthesisVariables {
    let y = random_spd(rng, n, 0.5, 2.0);
    let x = &inverse(&y).unwrap().symmetrize() + &random_spd(rng, n, 0.5, 2.0);
    SynthesisVariables::new(
        x.symmetrize(),
        y,
        random_matrix(rng, n, n, 1.0),
        random_matrix(rng, n, n_y, 1.0),
        random_matrix(rng, n_u, n, 1.0),
        random_matrix(rng, n_u, n_y, 1.0),
    )
    .unwrap()
}

/// A plant and full-order controller whose closed loop is Schur stable.
fn random_stable_loop(rng: &mut ChaCha8Rng, n: usize) -> (PlantModel, ControllerMatrices) {
    loop {
        let plant = random_plant(rng, n, 1, 1);
        let a = plant.a().scale(0.6 / spectral_radius(plant.a()).unwrap().max(1e-3));
        let plant = PlantModel::new(a, plant.b().clone(), plant.c().clone(), plant.x0().to_vec()).unwrap();
        let a_c = random_matrix(rng, n, n, 1.0);
        let a_c = a_c.scale(0.5 / spectral_radius(&a_c).unwrap().max(1e-3));
        let ctrl = ControllerMatrices::new(
            a_c,
            random_matrix(rng, n, 1, 0.3),
            random_matrix(rng, 1, n, 0.3),
            random_matrix(rng, 1, 1, 0.3),
        )
        .unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        if spectral_radius(&cl.f).unwrap() < 0.9 {
            return (plant, ctrl);
        }
    }
}

fn scalar_plant(a: f64, b: f64, c: f64) -> PlantModel {
    PlantModel::new(Matrix::diag(&[a]), Matrix::diag(&[b]), Matrix::diag(&[c]), vec![1.0]).unwrap()
}

fn nu_of(x: Matrix, y: Matrix, n_y: usize, n_u: usize) -> SynthesisVariables {
    let n = x.rows();
    SynthesisVariables::new(
        x,
        y,
        Matrix::zeros(n, n),
        Matrix::zeros(n, n_y),
        Matrix::zeros(n_u, n),
        Matrix::zeros(n_u, n_y),
    )
    .unwrap()
}

#[test]
fn p_of_nu_examples() {
    let nu = nu_of(Matrix::identity(3), Matrix::identity(3), 1, 1);
    assert!(sym_eig(&build_p_of_nu(&nu)).unwrap().min().abs() < 1e-12);
    let nu = nu_of(Matrix::identity(3).scale(2.0), Matrix::identity(3).scale(2.0), 1, 1);
    let eig = sym_eig(&build_p_of_nu(&nu)).unwrap().values;
    for (i, v) in eig.iter().enumerate() {
        let want = if i < 3 { 1.0 } else { 3.0 };
        assert!((v - want).abs() < 1e-12, "{eig:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let nu = random_nu(&mut rng, 3, 1, 1);
        assert!(sym_eig(&build_p_of_nu(&nu)).unwrap().min() > 0.0);
    }
}

#[test]
fn f_of_nu_examples() {
    let plant = batch_reactor();
    let nu = nu_of(Matrix::identity(4), Matrix::identity(4), 2, 1);
    let f = build_f_of_nu(&plant, &nu).unwrap();
    let a = plant.a();
    assert_eq!(f.submatrix(0, 0, 4, 4), *a);
    assert_eq!(f.submatrix(0, 4, 4, 4), *a);
    assert_eq!(f.submatrix(4, 0, 4, 4).max_abs(), 0.0);
    assert_eq!(f.submatrix(4, 4, 4, 4), *a);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut nu = random_nu(&mut rng, 4, 2, 1);
    let unactuated = PlantModel::new(a.clone(), Matrix::zeros(4, 1), plant.c().clone(), plant.x0().to_vec()).unwrap();
    let f = build_f_of_nu(&unactuated, &nu).unwrap();
    assert!((&f.submatrix(0, 0, 4, 4) - &(a * &nu.y)).max_abs() < 1e-14);

    nu.k3 = Matrix::zeros(1, 4);
    nu.k4 = Matrix::zeros(1, 2);
    let ft = build_ftilde_of_nu(&plant, &nu).unwrap();
    let ay = a * &nu.y;
    assert!((&ft.submatrix(0, 0, 4, 4) - &ay).max_abs() < 1e-14);
    assert!((&ft.submatrix(0, 4, 4, 4) - a).max_abs() < 1e-14);
    assert!((&ft.submatrix(4, 0, 4, 4) - &(&nu.x * &ay)).max_abs() < 1e-12);
    assert!((&ft.submatrix(4, 4, 4, 4) - &(&nu.x * a)).max_abs() < 1e-12);
}

#[test]
fn ftilde_bottom_row_is_x_times_top_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let plant = random_plant(&mut rng, 3, 2, 2);
    let nu = random_nu(&mut rng, 3, 2, 2);
    let ft = build_ftilde_of_nu(&plant, &nu).unwrap();
    let top = ft.submatrix(0, 0, 3, 6);
    assert!((&ft.submatrix(3, 0, 3, 6) - &(&nu.x * &top)).max_abs() < 1e-12);
    assert!((&top - &build_r_of_nu(&plant, &nu).unwrap()).max_abs() == 0.0);
}

#[test]
fn zero_plant_l_is_block_diagonal() {
    let plant = PlantModel::new(Matrix::zeros(2, 2), Matrix::zeros(2, 1), Matrix::zeros(1, 2), vec![0.0; 2]).unwrap();
    let nu = SynthesisVariables::new(
        Matrix::zeros(2, 2),
        Matrix::zeros(2, 2),
        Matrix::zeros(2, 2),
        Matrix::zeros(2, 1),
        Matrix::zeros(1, 2),
        Matrix::zeros(1, 1),
    )
    .unwrap();
    let l = build_l_of_nu(&plant, &nu, -0.5).unwrap();
    let p = build_p_of_nu(&nu);
    assert_eq!(l.submatrix(0, 0, 4, 4), p.scale(0.5));
    assert_eq!(l.submatrix(4, 4, 4, 4), p);
    assert_eq!(l.submatrix(0, 4, 4, 4).max_abs(), 0.0);
    assert_eq!(l.submatrix(4, 0, 4, 4).max_abs(), 0.0);
}

#[test]
fn ltilde_at_identity_x_matches_inverse_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let plant = random_plant(&mut rng, 3, 1, 1);
    let mut nu = random_nu(&mut rng, 3, 1, 1);
    nu.x = Matrix::identity(3);
    nu.y = Matrix::identity(3).scale(2.0);
    let lt = build_ltilde_of_nu(&plant, &nu, 5.0).unwrap();
    let corner = lt.submatrix(6, 6, 3, 3);
    assert!((&corner - &inverse(&nu.x).unwrap()).max_abs() < 1e-15);
}

#[test]
fn scalar_reconstruction_by_hand() {
    let plant = scalar_plant(2.0, 1.0, 1.0);
    let m = |v: f64| Matrix::diag(&[v]);
    let nu = SynthesisVariables::new(m(1.0), m(2.0), m(0.5), m(0.3), m(0.2), m(-0.4)).unwrap();
    let rec = reconstruct_controller(&plant, &nu).unwrap();
    let (u, v) = (rec.u[(0, 0)], rec.v[(0, 0)]);
    assert!((u * v + 1.0).abs() < 1e-14);
    assert!((v.abs() - 1.0).abs() < 1e-14);
    // with V = 1, U = −1: [−1 1; 0 1]⁻¹ [−3.5 0.3; 0.2 −0.4] [1 0; 2 1]⁻¹ = [5.1 −0.7; 1.0 −0.4]
    let s = v.signum();
    let c = &rec.controller;
    assert!((c.a_c()[(0, 0)] - 5.1).abs() < 1e-12);
    assert!((c.b_c()[(0, 0)] - s * -0.7).abs() < 1e-12);
    assert!((c.c_c()[(0, 0)] - s * 1.0).abs() < 1e-12);
    assert!((c.d_c()[(0, 0)] + 0.4).abs() < 1e-12);
    let back = apply_change_of_variables(&rec.p, &rec.controller, &plant).unwrap();
    assert!(back.max_abs_diff(&nu) < 1e-12);
}

#[test]
fn reconstruction_requires_positive_p_of_nu() {
    let plant = scalar_plant(2.0, 1.0, 1.0);
    let m = |v: f64| Matrix::diag(&[v]);
    let nu = SynthesisVariables::new(m(1.0), m(1.0), m(0.0), m(0.0), m(0.0), m(0.0)).unwrap();
    assert!(matches!(reconstruct_controller(&plant, &nu), Err(SynthesisError::NotPositiveDefinite(_))));
    let nu = SynthesisVariables::new(m(1.0), m(-1.0), m(0.0), m(0.0), m(0.0), m(0.0)).unwrap();
    assert!(!check_synthesis_certificate(&plant, &nu, -0.5, 2.0, 1e-8).unwrap().p_positive.passed);
}

#[test]
fn reverse_round_trip_with_given_u() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (plant, ctrl) = random_stable_loop(&mut rng, 3);
    let p = random_spd(&mut rng, 6, 0.5, 3.0);
    let nu = apply_change_of_variables(&p, &ctrl, &plant).unwrap();
    let rec = reconstruct_with_u(&plant, &nu, &p.submatrix(0, 3, 3, 3)).unwrap();
    assert!((&rec.p - &p).max_abs() < 1e-9);
    let stacked = |c: &ControllerMatrices| Matrix::block(&[&[c.a_c(), c.b_c()], &[c.c_c(), c.d_c()]]);
    assert!((&stacked(&rec.controller) - &stacked(&ctrl)).max_abs() < 1e-9);
}

#[test]
fn nu_json_round_trip_and_shape_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let nu = random_nu(&mut rng, 2, 1, 1);
    let json = serde_json::to_string(&nu).unwrap();
    assert!(json.contains("\"K2\""));
    let back: SynthesisVariables = serde_json::from_str(&json).unwrap();
    assert!(back.max_abs_diff(&nu) == 0.0);
    let bad = SynthesisVariables::new(
        Matrix::identity(2),
        Matrix::identity(2),
        Matrix::zeros(2, 2),
        Matrix::zeros(1, 2),
        Matrix::zeros(1, 2),
        Matrix::zeros(1, 1),
    );
    assert!(matches!(bad, Err(SynthesisError::Dimension(_))));
    assert!(build_f_of_nu(&batch_reactor(), &nu).is_err());
}

fn analysis_certificate(rec: &ReconstructedController, mu: f64, delta: f64) -> StabilityCertificate {
    StabilityCertificate {
        p: rec.p.clone(),
        mu,
        delta,
        eps_small: sym_eig(&rec.p).unwrap().min(),
        eps_bar: DEFAULT_EPS_BAR,
        t: min_reset_horizon(delta, mu, DEFAULT_EPS_BAR, HorizonForm::PeriodMinusOne).unwrap(),
    }
}

#[test]
fn reactor_controller_maps_to_a_valid_nu() {
    let plant = batch_reactor();
    let ctrl = reactor_controller_t25();
    let cl = build_closed_loop(&plant, &ctrl).unwrap();
    let cert = find_certificate(&cl, &default_mu_grid(30), DEFAULT_EPS_BAR).unwrap().certificate().unwrap().clone();
    let (nu, delta) = nu_from_certificate(&plant, &ctrl, &cert.p).unwrap();
    let sc = check_synthesis_certificate(&plant, &nu, cert.mu, delta, 1e-8).unwrap();
    assert!(sc.passed(), "{sc:?}");
    let rec = reconstruct_controller(&plant, &nu).unwrap();
    let rec_cl = build_closed_loop(&plant, &rec.controller).unwrap();
    let v = check_certificate(&rec_cl, &analysis_certificate(&rec, cert.mu, delta), 1e-8).unwrap();
    assert!(v.passed(), "{v:?}");
    let rho_orig = spectral_radius(&cl.f).unwrap();
    let rho_rec = spectral_radius(&rec_cl.f).unwrap();
    assert!((rho_orig - rho_rec).abs() < 1e-8);
}

#[test]
fn inverse_lower_bound_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let x = random_spd(&mut rng, 3, 0.05, 5.0);
        let gap = &inverse(&x).unwrap() - &(&Matrix::identity(3).scale(2.0) - &x);
        assert!(sym_eig(&gap.symmetrize()).unwrap().min() >= -1e-10);
    }
}

fn solver_cfg(grid: Vec<f64>) -> SolverConfig {
    SolverConfig { mu_grid: grid, max_iterations: 3000, restarts: 1, ..SolverConfig::default() }
}

#[test]
fn double_integrator_is_synthesizable() {
    let plant = PlantModel::new(
        Matrix::from_rows(&[[1.0, 0.1], [0.0, 1.0]]),
        Matrix::column(&[0.005, 0.1]),
        Matrix::from_rows(&[[1.0, 0.0]]),
        vec![1.0, 0.0],
    )
    .unwrap();
    let out = feasibility_search(&plant, &solver_cfg(vec![-0.2, -0.1, -0.05])).unwrap();
    let SynthesisOutcome::Feasible { nu, mu, delta, t, .. } = out else { panic!("{out:?}") };
    assert!(check_synthesis_certificate(&plant, &nu, mu, delta, 1e-8).unwrap().passed());
    let rec = reconstruct_controller(&plant, &nu).unwrap();
    let cl = build_closed_loop(&plant, &rec.controller).unwrap();
    assert!(spectral_radius(&cl.f).unwrap() < 1.0);
    let cert = analysis_certificate(&rec, mu, delta);
    assert_eq!(cert.t, t);
    assert!(check_certificate(&cl, &cert, 1e-8).unwrap().passed());
}

#[test]
fn undetectable_unstable_mode_is_infeasible() {
    let plant = PlantModel::new(
        Matrix::diag(&[1.2, 0.5]),
        Matrix::column(&[1.0, 1.0]),
        Matrix::from_rows(&[[0.0, 1.0]]),
        vec![1.0, 1.0],
    )
    .unwrap();
    let cfg = SolverConfig { max_iterations: 500, ..solver_cfg(vec![-0.3, -0.1]) };
    let out = feasibility_search(&plant, &cfg).unwrap();
    assert!(matches!(out, SynthesisOutcome::Infeasible { .. }), "{out:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_is_identity_and_split_invariant(seed in any::<u64>(), n in 1usize..=4, n_y in 1usize..=2, n_u in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, n, n_y, n_u);
        let nu = random_nu(&mut rng, n, n_y, n_u);
        for split in [FactorSplit::Balanced, FactorSplit::Left] {
            let rec = reconstruct_with_split(&plant, &nu, split).unwrap();
            let residual = (&(&rec.v * &rec.u.transpose()) - &(&Matrix::identity(n) - &(&nu.y * &nu.x))).max_abs();
            prop_assert!(residual <= 1e-8);
            prop_assert!(sym_eig(&rec.p).unwrap().min() > 0.0);
            let back = apply_change_of_variables(&rec.p, &rec.controller, &plant).unwrap();
            prop_assert!(back.max_abs_diff(&nu) <= 1e-8, "split {:?}: {}", split, back.max_abs_diff(&nu));
        }
    }

    #[test]
    fn congruence_preserves_signatures(seed in any::<u64>(), mu in -0.9f64..-0.05, delta in 1.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, 2, 1, 1);
        let nu = random_nu(&mut rng, 2, 1, 1);
        let rec = reconstruct_controller(&plant, &nu).unwrap();
        let cl = build_closed_loop(&plant, &rec.controller).unwrap();
        let p = &rec.p;
        let pf = p * &cl.f;
        let pft = p * &cl.f_tilde;
        let big_l = Matrix::block(&[&[&p.scale(1.0 + mu), &pf.transpose()], &[&pf, p]]);
        let big_lt = Matrix::block(&[&[&p.scale(delta), &pft.transpose()], &[&pft, p]]);
        prop_assert_eq!(inertia(&build_p_of_nu(&nu)).unwrap(), inertia(p).unwrap());
        prop_assert_eq!(inertia(&build_l_of_nu(&plant, &nu, mu).unwrap().symmetrize()).unwrap(), inertia(&big_l.symmetrize()).unwrap());
        prop_assert_eq!(inertia(&build_s_of_nu(&plant, &nu, delta).unwrap().symmetrize()).unwrap(), inertia(&big_lt.symmetrize()).unwrap());
    }

    #[test]
    fn certified_nu_yields_certified_loop(seed in any::<u64>(), mu in -0.5f64..-0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (plant, ctrl) = random_stable_loop(&mut rng, 2);
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        prop_assume!(spectral_radius(&cl.f).unwrap().powi(2) < 1.0 + mu);
        let p = crate::linalg::solve_discrete_lyapunov(&cl.f, &Matrix::identity(4), 1.0 + mu).unwrap();
        let (nu, delta) = nu_from_certificate(&plant, &ctrl, &p).unwrap();
        prop_assert!(check_synthesis_certificate(&plant, &nu, mu, delta, 1e-8).unwrap().passed());
        let rec = reconstruct_controller(&plant, &nu).unwrap();
        let rec_cl = build_closed_loop(&plant, &rec.controller).unwrap();
        let v = check_certificate(&rec_cl, &analysis_certificate(&rec, mu, delta), 1e-8).unwrap();
        prop_assert!(v.passed(), "{:?}", v);
    }

    #[test]
    fn ltilde_implies_s(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, 3, 2, 1);
        let y = random_spd(&mut rng, 3, 0.6, 2.0);
        let x = &inverse(&y).unwrap().symmetrize() + &random_spd(&mut rng, 3, 0.01, 0.2);
        let mut nu = random_nu(&mut rng, 3, 2, 1);
        nu.x = x.symmetrize();
        nu.y = y;
        prop_assume!(sym_eig(&nu.x).unwrap().max() < 1.95);
        let delta = minimal_delta(&plant, &nu).unwrap().unwrap() * rng.gen_range(1.0..1.5);
        prop_assert!(sym_eig(&build_ltilde_of_nu(&plant, &nu, delta).unwrap().symmetrize()).unwrap().min() >= -1e-9);
        prop_assert!(sym_eig(&build_s_of_nu(&plant, &nu, delta).unwrap().symmetrize()).unwrap().min() >= -1e-9);
    }
}
