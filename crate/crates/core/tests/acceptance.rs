//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are always shown.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use lqmfg::cli::main_with;
use lqmfg::convergence::compare_convergence;
use lqmfg::finite_n::{
    assemble_dense, solve_dense_oracle, solve_structured, solve_structured_full, DenseSolution,
    SYMMETRIC_BLOCKS,
};
use lqmfg::limit::{
    asymptotic_costs, limit_strategy_gains, solve_limit_full, solve_limit_riccati, LIMIT_SYMMETRIC,
};
use lqmfg::linalg::{asymmetry, block, max_abs, max_abs_diff, max_abs_vec};
use lqmfg::model::{random_params, GameParams, InitialLaw, Scenario};
use lqmfg::ode::{Outcome, SolveOptions, TimeGrid};
use lqmfg::sim::{predicted_value, simulate, FeedbackSchedule, SimConfig, SimMode};
use lqmfg::tracking::{solve_tracking, verify_consistency};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

type Check = Result<String, String>;

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name).display().to_string()
}

fn cli(args: &[&str], out: &Path) -> i32 {
    let mut all: Vec<String> = std::iter::once("lqmfg").chain(args.iter().copied()).map(String::from).collect();
    all.extend(["--out".to_string(), out.display().to_string()]);
    main_with(all)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn seconds(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn example1_reproduction() -> Check {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    let code = cli(&["check", &example("ex1.json")], tmp.path());
    let elapsed = start.elapsed();
    ensure(code == 0, format!("exit code {code}"))?;
    let v = read_json(&tmp.path().join("verdict.json"));
    let sup = v["sup_norm"].as_f64().unwrap_or(f64::INFINITY);
    ensure(v["solvable"] == true && sup < 1e8, format!("verdict {v}"))?;

    let p = Scenario::from_path(example("ex1.json")).unwrap().params;
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let l = solve_limit_riccati(&p, &grid, &SolveOptions::default()).unwrap().0.solved().ok_or("escaped")?;
    let finite = (0..grid.len()).all(|k| l.trajectory.state(k).iter().all(|x| x.is_finite()));
    ensure(finite && l.trajectory.sup_l1() < 1e8, "non-finite Λ")?;
    ensure(seconds(elapsed) < 5.0, format!("took {elapsed:?}"))?;
    Ok(format!("solvable, sup l1 = {sup:.4}, {:.2} s", seconds(elapsed)))
}

fn example2_reproduction() -> Check {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    let code = cli(&["check", &example("ex2.json")], tmp.path());
    let elapsed = start.elapsed();
    ensure(code == 1, format!("exit code {code}"))?;
    let v = read_json(&tmp.path().join("verdict.json"));
    let lo = v["escape_lo"].as_f64().ok_or("no bracket")?;
    let hi = v["escape_hi"].as_f64().ok_or("no bracket")?;
    ensure(0.5 < lo && hi < 1.0 && hi - lo <= 2.5e-3, format!("bracket ({lo}, {hi})"))?;
    ensure(seconds(elapsed) < 5.0, format!("took {elapsed:?}"))?;
    Ok(format!("escape in ({lo:.5}, {hi:.5}), {:.2} s", seconds(elapsed)))
}

/// Largest spread within each class of blocks that should coincide.
fn pattern_defect(d: &DenseSolution, k: usize, n: usize) -> f64 {
    let players = d.n_players + 1;
    let (p0, p1) = (d.p(0, k), d.p(1, k));
    let b0 = |i, j| block(&p0, i, j, n, n);
    let b1 = |i, j| block(&p1, i, j, n, n);
    let mut worst: f64 = 0.0;
    for j in 1..players {
        worst = worst.max(max_abs_diff(&b0(0, j), &b0(0, 1)));
        for l in 1..players {
            // Includes the diagonal minor blocks, which equal the off-diagonal ones.
            worst = worst.max(max_abs_diff(&b0(j, l), &b0(1, 1)));
        }
    }
    for j in 2..players {
        worst = worst.max(max_abs_diff(&b1(0, j), &b1(0, 2)));
        worst = worst.max(max_abs_diff(&b1(1, j), &b1(1, 2)));
        for l in 2..players {
            worst = worst.max(max_abs_diff(&b1(j, l), &b1(2, 2)));
        }
    }
    worst
}

fn structured_vs_dense() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolveOptions::tight();
    let (mut cases, mut worst, mut pattern): (usize, f64, f64) = (0, 0.0, 0.0);
    let mut attempts = 0;
    while cases < 24 {
        attempts += 1;
        ensure(attempts < 200, "too few solvable random sets")?;
        let n = 1 + cases % 2;
        let n_players = 2 + cases % 3;
        let p = random_params(&mut rng, n, 1.0);
        let grid = TimeGrid::new(p.horizon, 21).unwrap();
        let (Outcome::Solved(dense), Outcome::Solved((s, o))) = (
            solve_dense_oracle(&p, n_players, &grid, &opts).unwrap(),
            solve_structured_full(&p, n_players, &grid, &opts).unwrap(),
        ) else {
            continue;
        };
        let asm = assemble_dense(&s, &o).unwrap();
        for k in 0..grid.len() {
            for j in 0..=n_players {
                worst = worst.max(max_abs_diff(&asm.p(j.min(1), k), &dense.p(j.min(1), k)));
                worst = worst.max(max_abs_vec(&(asm.s(j.min(1), k) - dense.s(j.min(1), k))));
                worst = worst.max((asm.r(j.min(1), k) - dense.r(j.min(1), k)).abs());
            }
            pattern = pattern.max(pattern_defect(&dense, k, n));
        }
        cases += 1;
    }
    ensure(worst < 1e-8, format!("max deviation {worst:e}"))?;
    ensure(pattern < 1e-8, format!("block pattern defect {pattern:e}"))?;
    Ok(format!("{cases} sets, max deviation {worst:.1e}, pattern defect {pattern:.1e}"))
}

fn one_over_n_convergence() -> Check {
    let ns = [20, 40, 80, 160];
    let tmp = TempDir::new().unwrap();
    let code = cli(&["compare", &example("ex1.json"), "--Ns", "20,40,80,160"], tmp.path());
    ensure(code == 0, format!("exit code {code}"))?;
    let m = read_json(&tmp.path().join("manifest.json"));
    ensure(m["verdicts"]["rate_within_1_5_2_5"] == true, "Riccati blocks off rate")?;

    // Nonzero η so that every offset is exercised as well.
    let mut p = Scenario::from_path(example("ex1.json")).unwrap().params;
    p.eta0[0] = 1.0;
    p.eta[0] = 1.0;
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let table = compare_convergence(&p, &ns, &grid, &SolveOptions::default()).unwrap();
    ensure(table.rate_within(1.5, 2.5), table.to_csv())?;
    let ratios: Vec<f64> = table
        .rows
        .iter()
        .filter_map(|r| r.ratios.as_ref())
        .flatten()
        .copied()
        .filter(|r| r.is_finite())
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(format!("ratios in [{lo:.3}, {hi:.3}], monotone"))
}

fn theorem_consistency() -> Check {
    let tmp = TempDir::new().unwrap();
    let code = cli(&["consistency", &example("ex1.json")], tmp.path());
    ensure(code == 0, format!("exit code {code}"))?;
    let ex1 = read_json(&tmp.path().join("consistency.json"))["max_residual"].as_f64().unwrap();
    ensure(ex1 < 1e-6, format!("Example 1 residual {ex1:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let opts = SolveOptions::default();
    let (mut checked, mut worst, mut attempts): (usize, f64, usize) = (0, 0.0, 0);
    while checked < 20 {
        attempts += 1;
        ensure(attempts < 200, "too few solvable random sets")?;
        let p = random_params(&mut rng, 1 + checked % 2, 1.0);
        let grid = TimeGrid::new(p.horizon, 101).unwrap();
        let Outcome::Solved(l) = solve_limit_full(&p, &grid, &opts).unwrap().0 else {
            continue;
        };
        let bt = solve_tracking(&p, &grid, &opts).unwrap();
        let report = verify_consistency(&l, &bt, &opts).unwrap();
        ensure(report.pass, format!("random set {checked}: {:e}", report.max_residual))?;
        worst = worst.max(report.max_residual);
        checked += 1;
    }

    let p = GameParams::example1();
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let mut l = solve_limit_full(&p, &grid, &opts).unwrap().0.solved().unwrap();
    let bt = solve_tracking(&p, &grid, &opts).unwrap();
    let range = l.riccati.trajectory.layout().spec("La").range();
    for k in 0..grid.len() {
        for v in &mut l.riccati.trajectory.state_mut(k)[range.clone()] {
            *v += 1e-3;
        }
    }
    let faulted = verify_consistency(&l, &bt, &opts).unwrap();
    ensure(!faulted.pass, "perturbed Λa passed the check")?;
    Ok(format!(
        "Example 1 residual {ex1:.1e}, {checked} random sets max {worst:.1e}, fault residual {:.1e} rejected",
        faulted.max_residual
    ))
}

fn value_function_monte_carlo() -> Check {
    let start = Instant::now();
    let p = GameParams::example1().with_scalar_noise(1.0, 1.0);
    let law = InitialLaw::scalar(0.0, 1.0, 0.0, 1.0);
    let dt = 1e-3;
    let grid = TimeGrid::new(p.horizon, 12001).unwrap();
    let (s, o) = solve_structured_full(&p, 3, &grid, &SolveOptions::default())
        .unwrap()
        .solved()
        .ok_or("N = 3 system escaped")?;
    let dense = assemble_dense(&s, &o).unwrap();
    let v0 = predicted_value(&dense.p(0, 0), &dense.s(0, 0), dense.r(0, 0), &law);
    let v1 = predicted_value(&dense.p(1, 0), &dense.s(1, 0), dense.r(1, 0), &law);
    let sched = FeedbackSchedule::nash(&p, &s, &o).unwrap();
    let cfg = SimConfig {
        n_players: 3,
        num_paths: 20_000,
        dt,
        seed: 1,
        law,
        mode: SimMode::NashExact,
    };
    let r = simulate(&p, &sched, &cfg).unwrap();
    let elapsed = start.elapsed();
    let (e0, e1) = ((r.j0.mean - v0).abs(), (r.j1.mean - v1).abs());
    ensure(e0 <= 3.0 * r.j0.stderr + 0.05, format!("J0 {} vs {v0}", r.j0.mean))?;
    ensure(e1 <= 3.0 * r.j1.stderr + 0.05, format!("J1 {} vs {v1}", r.j1.mean))?;
    ensure(seconds(elapsed) < 60.0, format!("took {elapsed:?}"))?;
    Ok(format!(
        "J0 {:.4} ± {:.4} vs {v0:.4}, J1 {:.4} ± {:.4} vs {v1:.4}, {:.1} s",
        r.j0.mean,
        r.j0.stderr,
        r.j1.mean,
        r.j1.stderr,
        seconds(elapsed)
    ))
}

fn asymptotic_cost_agreement() -> Check {
    let scenario = Scenario::from_path(example("ex1_noise.json")).unwrap();
    let (p, law) = (scenario.params, scenario.law);
    let grid = TimeGrid::new(p.horizon, 1201).unwrap();
    let l = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().ok_or("limit escaped")?;
    let j = asymptotic_costs(&l.riccati, &l.offsets, &l.costs, &law).unwrap();
    let gains = limit_strategy_gains(&p, &l.riccati, &l.offsets).unwrap();
    let n_players = 100;
    let cfg = SimConfig {
        n_players,
        num_paths: 2000,
        dt: 0.01,
        seed: 5,
        law,
        mode: SimMode::Decentralized,
    };
    let r = simulate(&p, &FeedbackSchedule::decentralized(&p, &gains), &cfg).unwrap();
    let band = (3.0 * r.j0.stderr).max(0.5 / (n_players as f64).sqrt()) * (1.0 + j.j0.abs());
    let err = (r.j0.mean - j.j0).abs();
    ensure(err <= band, format!("J0 {} vs {} (band {band})", r.j0.mean, j.j0))?;
    Ok(format!("J0 {:.4} ± {:.4} vs J0_inf {:.4}, |diff| {err:.4} ≤ {band:.4}", r.j0.mean, r.j0.stderr, j.j0))
}

fn scalar_riccati(a: f64, m: f64, q: f64, qf: f64, horizon: f64, t: f64) -> f64 {
    let d = (a * a + m * q).sqrt();
    let plus = (a + d) / m;
    let v0 = 1.0 / (qf - plus);
    let v = (v0 + m / (2.0 * d)) * (2.0 * d * (horizon - t)).exp() - m / (2.0 * d);
    plus + 1.0 / v
}

fn property_suites() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let unprojected = SolveOptions {
        symmetrize: false,
        ..SolveOptions::default()
    };
    let mut sym: f64 = 0.0;
    for _ in 0..6 {
        let p = random_params(&mut rng, 2, 1.0);
        let grid = TimeGrid::new(1.0, 51).unwrap();
        if let Some(l) = solve_limit_riccati(&p, &grid, &unprojected).unwrap().0.solved() {
            for k in 0..grid.len() {
                for name in LIMIT_SYMMETRIC {
                    let m = l.block(name, k);
                    sym = sym.max(asymmetry(&m) / max_abs(&m).max(1.0));
                }
            }
        }
        if let Some(s) = solve_structured(&p, 4, &grid, &unprojected).unwrap().solved() {
            for k in 0..grid.len() {
                for name in SYMMETRIC_BLOCKS {
                    let m = s.block(name, k);
                    sym = sym.max(asymmetry(&m) / max_abs(&m).max(1.0));
                }
            }
        }
    }
    ensure(sym <= 1e-9, format!("asymmetry {sym:e}"))?;

    let zero = GameParams::zeros(2, 1, 1, 1.0);
    let grid = TimeGrid::new(1.0, 11).unwrap();
    let opts = SolveOptions::default();
    let l = solve_limit_full(&zero, &grid, &opts).unwrap().0.solved().ok_or("zero game escaped")?;
    let (s, o) = solve_structured_full(&zero, 3, &grid, &opts).unwrap().solved().ok_or("zero game escaped")?;
    let bt = solve_tracking(&zero, &grid, &opts).unwrap();
    let zmax = [&l.riccati.trajectory, &l.offsets.trajectory, &l.costs.trajectory, &s.trajectory, &o.trajectory, &bt.trajectory]
        .iter()
        .map(|t| t.sup_l1())
        .fold(0.0, f64::max);
    ensure(zmax <= 1e-12, format!("zero data gave {zmax:e}"))?;

    let mut p = GameParams::zeros(1, 1, 1, 3.0);
    let s1 = |v: f64| DMatrix::from_element(1, 1, v);
    (p.a0, p.b0, p.q0, p.r0, p.q0f) = (s1(0.4), s1(1.5), s1(1.0), s1(2.0), s1(0.6));
    (p.a, p.b, p.q, p.r, p.qf) = (s1(-0.3), s1(0.8), s1(2.5), s1(0.5), s1(0.3));
    let grid = TimeGrid::new(3.0, 301).unwrap();
    let l = solve_limit_riccati(&p, &grid, &opts).unwrap().0.solved().ok_or("decoupled escaped")?;
    let mut closed: f64 = 0.0;
    for k in 0..grid.len() {
        let t = grid.time(k);
        closed = closed.max((l.block("L1_0", k)[(0, 0)] - scalar_riccati(0.4, 1.125, 1.0, 0.6, 3.0, t)).abs());
        closed = closed.max((l.block("L1", k)[(0, 0)] - scalar_riccati(-0.3, 1.28, 2.5, 0.3, 3.0, t)).abs());
    }
    ensure(closed <= 1e-6, format!("closed form deviation {closed:e}"))?;

    let mut regression = vec![GameParams::example1(), GameParams::example2()];
    regression.extend((0..4).map(|_| random_params(&mut rng, 1, 2.0)));
    let mut flips = 0;
    let mut shift: f64 = 0.0;
    for p in &regression {
        let grid = TimeGrid::new(p.horizon, 241).unwrap();
        let base = SolveOptions::default();
        let halved = SolveOptions::with_tol(base.tol.halved());
        let (_, v1) = solve_limit_riccati(p, &grid, &base).unwrap();
        let (_, v2) = solve_limit_riccati(p, &grid, &halved).unwrap();
        if v1.solvable != v2.solvable {
            flips += 1;
        }
        if let (Some((a, _)), Some((b, _))) = (v1.escape_interval(), v2.escape_interval()) {
            shift = shift.max((a - b).abs() / (base.tol.bracket_width_frac * p.horizon));
        }
    }
    ensure(flips == 0 && shift < 1.0, format!("{flips} flips, bracket shift {shift} widths"))?;
    let elapsed = start.elapsed();
    ensure(seconds(elapsed) < 180.0, format!("took {elapsed:?}"))?;
    Ok(format!(
        "asymmetry {sym:.1e}, zero data {zmax:.1e}, closed form {closed:.1e}, {} verdicts stable, {:.1} s",
        regression.len(),
        seconds(elapsed)
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("Example 1 reproduction", example1_reproduction),
        ("Example 2 reproduction", example2_reproduction),
        ("structured vs dense oracle", structured_vs_dense),
        ("O(1/N) convergence", one_over_n_convergence),
        ("consistency of the limiting control problems", theorem_consistency),
        ("value-function Monte Carlo", value_function_monte_carlo),
        ("asymptotic-cost agreement", asymptotic_cost_agreement),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
