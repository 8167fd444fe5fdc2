use lqmfg::limit::{limit_strategy_gains, solve_limit_full, LimitSolution};
use lqmfg::linalg::{max_abs, max_abs_diff, min_eigenvalue};
use lqmfg::model::{random_params, GameParams};
use lqmfg::ode::{Outcome, SolveOptions, TimeGrid, Tolerances};
use lqmfg::tracking::{
    optimal_laws, solve_p0, solve_p1, solve_tracking, solve_tracking_blocks, verify_consistency,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn example1_with_offsets() -> GameParams {
    let mut p = GameParams::example1().with_scalar_noise(1.0, 1.0);
    p.eta0[0] = 1.0;
    p.eta[0] = -0.5;
    p
}

fn limit(p: &GameParams, grid: &TimeGrid, opts: &SolveOptions) -> LimitSolution {
    solve_limit_full(p, grid, opts).unwrap().0.solved().unwrap()
}

#[test]
fn example1_tracking_reproduces_limit_blocks() {
    let p = example1_with_offsets();
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let opts = SolveOptions::default();
    let l = limit(&p, &grid, &opts);
    let bt = solve_tracking(&p, &grid, &opts).unwrap();
    let report = verify_consistency(&l, &bt, &opts).unwrap();
    assert!(report.pass, "{report:?}");
    assert!(report.max_residual < 1e-6);
}

#[test]
fn consistency_on_random_solvable_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = SolveOptions::default();
    let mut checked = 0;
    while checked < 8 {
        let n = 1 + checked % 2;
        let p = random_params(&mut rng, n, 1.0);
        let grid = TimeGrid::new(1.0, 101).unwrap();
        let Outcome::Solved(l) = solve_limit_full(&p, &grid, &opts).unwrap().0 else {
            continue;
        };
        let bt = solve_tracking(&p, &grid, &opts).unwrap();
        let report = verify_consistency(&l, &bt, &opts).unwrap();
        assert!(report.pass, "set {checked}: {}", report.max_residual);
        checked += 1;
    }
}

#[test]
fn block_equations_agree_with_full_riccati() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_params(&mut rng, 2, 1.0);
    let grid = TimeGrid::new(1.0, 51).unwrap();
    let opts = SolveOptions::tight();
    let full = solve_tracking(&p, &grid, &opts).unwrap();
    let blocks = solve_tracking_blocks(&p, &grid, &opts).unwrap();
    for k in 0..grid.len() {
        assert!(max_abs_diff(&full.pp0(k), &blocks.pp0(k)) < 1e-8);
        assert!(max_abs_diff(&full.pp(k), &blocks.pp(k)) < 1e-8);
        assert!((full.ss0(k) - blocks.ss0(k)).amax() < 1e-8);
        assert!((full.ss(k) - blocks.ss(k)).amax() < 1e-8);
    }
}

#[test]
fn perturbed_lambda_fails_the_check() {
    let p = GameParams::example1();
    let grid = TimeGrid::new(p.horizon, 241).unwrap();
    let opts = SolveOptions::default();
    let mut l = limit(&p, &grid, &opts);
    let bt = solve_tracking(&p, &grid, &opts).unwrap();
    assert!(verify_consistency(&l, &bt, &opts).unwrap().pass);
    let range = l.riccati.trajectory.layout().spec("La").range();
    for k in 0..grid.len() {
        for v in &mut l.riccati.trajectory.state_mut(k)[range.clone()] {
            *v += 1e-3;
        }
    }
    let report = verify_consistency(&l, &bt, &opts).unwrap();
    assert!(!report.pass);
    assert!(report.residuals["La"] >= 1e-3 - 1e-12);
}

#[test]
fn zero_weights_give_zero_solution() {
    let p = GameParams::zeros(2, 1, 1, 1.0);
    let grid = TimeGrid::new(1.0, 11).unwrap();
    let opts = SolveOptions::default();
    let l = limit(&p, &grid, &opts);
    let bt = solve_tracking(&p, &grid, &opts).unwrap();
    let report = verify_consistency(&l, &bt, &opts).unwrap();
    assert_eq!(report.max_residual, 0.0);
    let laws = optimal_laws(&p, &bt).unwrap();
    assert!(laws.kii.iter().all(|m| max_abs(m) == 0.0));
    assert!(laws.ki.iter().all(|v| v.amax() == 0.0));
}

#[test]
fn optimal_laws_match_limit_strategies() {
    let p = example1_with_offsets();
    let grid = TimeGrid::new(p.horizon, 601).unwrap();
    let opts = SolveOptions::default();
    let l = limit(&p, &grid, &opts);
    let limit_gains = limit_strategy_gains(&p, &l.riccati, &l.offsets).unwrap();
    let laws = optimal_laws(&p, &solve_tracking(&p, &grid, &opts).unwrap()).unwrap();
    for k in 0..grid.len() {
        for (a, b) in [
            (&laws.k00, &limit_gains.k00),
            (&laws.k0bar, &limit_gains.k0bar),
            (&laws.ki0, &limit_gains.ki0),
            (&laws.kii, &limit_gains.kii),
            (&laws.kibar, &limit_gains.kibar),
        ] {
            assert!(max_abs_diff(&a[k], &b[k]) < 1e-6);
        }
        assert!((&laws.k0[k] - &limit_gains.k0[k]).amax() < 1e-6);
        assert!((&laws.ki[k] - &limit_gains.ki[k]).amax() < 1e-6);
    }
    assert_eq!(max_abs(&laws.kii[grid.len() - 1]), 0.0);
}

#[test]
fn riccati_solutions_are_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(&mut rng, 2, 0.8);
    let grid = TimeGrid::new(0.8, 41).unwrap();
    let opts = SolveOptions::default();
    let p0 = solve_p0(&p, &grid, &opts).unwrap();
    let p1 = solve_p1(&p, &grid, &opts).unwrap();
    for k in 0..grid.len() {
        assert!(min_eigenvalue(&p0.matrix("PP0", k)) > -1e-9);
        assert!(min_eigenvalue(&p1.matrix("PP", k)) > -1e-9);
    }
}

#[test]
fn residual_shrinks_with_tolerance() {
    let p = example1_with_offsets();
    let grid = TimeGrid::new(p.horizon, 241).unwrap();
    let residual = |tol: Tolerances| {
        let opts = SolveOptions::with_tol(tol);
        let l = limit(&p, &grid, &opts);
        let bt = solve_tracking(&p, &grid, &opts).unwrap();
        verify_consistency(&l, &bt, &opts).unwrap().max_residual
    };
    let loose = residual(Tolerances::with_rtol_atol(1e-6, 1e-8));
    let tight = residual(Tolerances::with_rtol_atol(1e-9, 1e-11));
    assert!(tight < loose);
}
