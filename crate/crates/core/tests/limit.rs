use lqmfg::finite_n::{rescale_offsets, solve_structured_full};
use lqmfg::limit::{
    asymptotic_costs, limit_strategy_gains, solve_limit_costs, solve_limit_full, solve_limit_offsets,
    solve_limit_riccati, LIMIT_SYMMETRIC,
};
use lqmfg::linalg::{asymmetry, max_abs};
use lqmfg::model::{random_params, GameParams, InitialLaw};
use lqmfg::ode::{SolveOptions, TimeGrid};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar game whose cross couplings are all zero.
fn decoupled(qf: f64, eta: f64, etaf: f64) -> GameParams {
    let mut p = GameParams::zeros(1, 1, 1, 3.0);
    p.a0 = s(0.4);
    p.b0 = s(1.5);
    p.q0 = s(1.0);
    p.r0 = s(2.0);
    p.a = s(-0.3);
    p.b = s(0.8);
    p.q = s(2.5);
    p.r = s(0.5);
    p.qf = s(qf);
    p.q0f = s(0.6);
    p.eta = DVector::from_element(1, eta);
    p.etaf = DVector::from_element(1, etaf);
    p
}

/// Solution of `λ' = Mλ² − 2aλ − q`, `λ(T) = qf`, at time `t`.
fn scalar_riccati(a: f64, m: f64, q: f64, qf: f64, horizon: f64, t: f64) -> f64 {
    let d = (a * a + m * q).sqrt();
    let plus = (a + d) / m;
    let v0 = 1.0 / (qf - plus);
    let tau = horizon - t;
    let v = (v0 + m / (2.0 * d)) * (2.0 * d * tau).exp() - m / (2.0 * d);
    plus + 1.0 / v
}

#[test]
fn decoupled_blocks_match_scalar_riccati() {
    let p = decoupled(0.3, 0.0, 0.0);
    let grid = TimeGrid::new(p.horizon, 301).unwrap();
    let (l, _) = solve_limit_riccati(&p, &grid, &SolveOptions::default()).unwrap();
    let l = l.solved().unwrap();
    let m0 = 1.5 * 1.5 / 2.0;
    let m = 0.8 * 0.8 / 0.5;
    for k in 0..grid.len() {
        let t = grid.time(k);
        let l10 = l.block("L1_0", k)[(0, 0)];
        let l1 = l.block("L1", k)[(0, 0)];
        assert!((l10 - scalar_riccati(0.4, m0, 1.0, 0.6, 3.0, t)).abs() < 1e-6, "t = {t}");
        assert!((l1 - scalar_riccati(-0.3, m, 2.5, 0.3, 3.0, t)).abs() < 1e-6, "t = {t}");
        for name in ["L2_0", "L3_0", "L0", "L2", "L3", "La", "Lb"] {
            assert!(max_abs(&l.block(name, k)) <= 1e-10, "{name} at t = {t}");
        }
    }
}

#[test]
fn decoupled_tracking_offset_has_closed_form() {
    // With Qf at the stationary root, Λ1 stays constant and α1 solves a
    // constant-coefficient linear equation.
    let (a, m, q): (f64, f64, f64) = (-0.3, 0.8 * 0.8 / 0.5, 2.5);
    let d = (a * a + m * q).sqrt();
    let root = (a + d) / m;
    let (eta, etaf) = (0.7, -1.2);
    let p = decoupled(root, eta, etaf);
    let grid = TimeGrid::new(p.horizon, 301).unwrap();
    let (l, _) = solve_limit_riccati(&p, &grid, &SolveOptions::default()).unwrap();
    let l = l.solved().unwrap();
    let a1 = solve_limit_offsets(&p, &l, &SolveOptions::default()).unwrap();
    let end = -root * etaf;
    for k in 0..grid.len() {
        let t = grid.time(k);
        let expect = (end + q * eta / d) * (d * (t - p.horizon)).exp() - q * eta / d;
        assert!((a1.alpha("a1", k)[0] - expect).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn chi0_equals_quadrature_of_lambda() {
    let p = GameParams::example1().with_scalar_noise(1.0, 1.0);
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let sol = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
    let h = grid.spacing();
    // Composite Simpson over 1200 intervals.
    let f = |k: usize| sol.riccati.block("L1_0", k)[(0, 0)];
    let last = grid.len() - 1;
    let mut integral = f(0) + f(last);
    for k in 1..last {
        integral += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k);
    }
    integral *= h / 3.0;
    assert!((sol.costs.chi("chi0", 0) - integral).abs() < 1e-6);
}

#[test]
fn separate_offset_and_cost_solves_agree_with_joint_solve() {
    let mut p = GameParams::example1().with_scalar_noise(1.0, 0.5);
    p.eta0[0] = 1.0;
    p.eta[0] = -0.5;
    let grid = TimeGrid::new(p.horizon, 241).unwrap();
    let opts = SolveOptions::default();
    let full = solve_limit_full(&p, &grid, &opts).unwrap().0.solved().unwrap();
    let (l, _) = solve_limit_riccati(&p, &grid, &opts).unwrap();
    let l = l.solved().unwrap();
    let a = solve_limit_offsets(&p, &l, &opts).unwrap();
    let c = solve_limit_costs(&p, &l, &a, &opts).unwrap();
    for k in 0..grid.len() {
        assert!((a.alpha("a2", k) - full.offsets.alpha("a2", k)).amax() < 1e-12);
        assert!((c.chi("chi", k) - full.costs.chi("chi", k)).abs() < 1e-12);
    }
}

#[test]
fn offsets_and_costs_approach_finite_population() {
    let mut p = GameParams::example1().with_scalar_noise(1.0, 1.0);
    p.eta0[0] = 1.0;
    p.eta[0] = 1.0;
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let opts = SolveOptions::default();
    let lim = solve_limit_full(&p, &grid, &opts).unwrap().0.solved().unwrap();
    let n_players = 200;
    let (_, o) = solve_structured_full(&p, n_players, &grid, &opts).unwrap().solved().unwrap();
    let view = rescale_offsets(&o);
    let bound = 5.0 / n_players as f64;
    for k in 0..grid.len() {
        for name in ["a0_0", "a1_0", "a0", "a1", "a2"] {
            let diff = (view.matrix(name, k).column(0) - lim.offsets.alpha(name, k)).amax();
            assert!(diff < bound, "{name} at {k}: {diff}");
        }
    }
    // The cost constants integrate an O(1/N) term over the whole horizon, so
    // check the rate rather than an absolute band.
    let (_, o2) = solve_structured_full(&p, 2 * n_players, &grid, &opts).unwrap().solved().unwrap();
    for (r, chi) in [("r0", "chi0"), ("r1", "chi")] {
        let e1 = o.r(r, 0) - lim.costs.chi(chi, 0);
        let e2 = o2.r(r, 0) - lim.costs.chi(chi, 0);
        assert!((1.9..=2.1).contains(&(e1 / e2)), "{r}: {e1} vs {e2}");
        assert!(e1.abs() * (n_players as f64) < 100.0);
    }
}

#[test]
fn asymptotic_costs_specialize() {
    let p = GameParams::example1().with_scalar_noise(1.0, 1.0);
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let sol = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
    let law = InitialLaw::scalar(0.0, 1.0, 0.0, 0.0);
    let j = asymptotic_costs(&sol.riccati, &sol.offsets, &sol.costs, &law).unwrap();
    let expect = sol.riccati.block("L1_0", 0)[(0, 0)] + sol.costs.chi("chi0", 0);
    assert!((j.j0 - expect).abs() < 1e-14);

    let zero = GameParams::zeros(2, 1, 1, 1.0);
    let grid = TimeGrid::new(1.0, 11).unwrap();
    let sol = solve_limit_full(&zero, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
    let law = InitialLaw {
        mu0: DVector::from_element(2, 1.0),
        sigma0: DMatrix::identity(2, 2),
        mu: DVector::from_element(2, -1.0),
        sigma: DMatrix::identity(2, 2),
    };
    let j = asymptotic_costs(&sol.riccati, &sol.offsets, &sol.costs, &law).unwrap();
    assert_eq!((j.j0, j.j1), (0.0, 0.0));
    let g = limit_strategy_gains(&zero, &sol.riccati, &sol.offsets).unwrap();
    assert!(g.kii.iter().chain(&g.k00).all(|m| max_abs(m) == 0.0));
}

#[test]
fn symmetric_blocks_stay_symmetric_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let p = random_params(&mut rng, 2, 1.0);
        let grid = TimeGrid::new(1.0, 51).unwrap();
        let opts = SolveOptions {
            symmetrize: false,
            ..SolveOptions::default()
        };
        let (l, _) = solve_limit_riccati(&p, &grid, &opts).unwrap();
        let Some(l) = l.solved() else { continue };
        for k in 0..grid.len() {
            for name in LIMIT_SYMMETRIC {
                let m = l.block(name, k);
                assert!(asymmetry(&m) <= 1e-9 * max_abs(&m).max(1.0));
            }
        }
    }
}

#[test]
fn verdicts_survive_tolerance_halving() {
    for p in [GameParams::example1(), GameParams::example2()] {
        let grid = TimeGrid::new(p.horizon, 241).unwrap();
        let base = SolveOptions::default();
        let halved = SolveOptions::with_tol(base.tol.halved());
        let (_, v1) = solve_limit_riccati(&p, &grid, &base).unwrap();
        let (_, v2) = solve_limit_riccati(&p, &grid, &halved).unwrap();
        assert_eq!(v1.solvable, v2.solvable);
        if let Some((lo, hi)) = v2.escape_interval() {
            assert!(0.5 < lo && hi < 1.0);
        }
    }
}
