//! Monte Carlo estimate of the Nash costs for three minor players, compared
//! with the value functions at the initial law.

use std::time::Instant;

use lqmfg::finite_n::{assemble_dense, solve_structured_full};
use lqmfg::model::{GameParams, InitialLaw};
use lqmfg::ode::{SolveOptions, TimeGrid};
use lqmfg::sim::{predicted_value, simulate, FeedbackSchedule, SimConfig, SimMode};

fn main() -> lqmfg::error::Result<()> {
    let p = GameParams::example1().with_scalar_noise(1.0, 1.0);
    let law = InitialLaw::scalar(0.0, 1.0, 0.0, 1.0);
    let dt = 2e-3;
    let grid = TimeGrid::with_spacing(p.horizon, dt)?;
    let (s, o) = solve_structured_full(&p, 3, &grid, &SolveOptions::default())?.into_result()?;
    let dense = assemble_dense(&s, &o)?;
    let v0 = predicted_value(&dense.p(0, 0), &dense.s(0, 0), dense.r(0, 0), &law);
    let v1 = predicted_value(&dense.p(1, 0), &dense.s(1, 0), dense.r(1, 0), &law);

    let cfg = SimConfig {
        n_players: 3,
        num_paths: 5000,
        dt,
        seed: 42,
        law,
        mode: SimMode::NashExact,
    };
    let start = Instant::now();
    let r = simulate(&p, &FeedbackSchedule::nash(&p, &s, &o)?, &cfg)?;
    println!("{} paths in {:.2?}", cfg.num_paths, start.elapsed());
    println!("J0 = {:.4} ± {:.4}  value function {v0:.4}", r.j0.mean, r.j0.stderr);
    println!("J1 = {:.4} ± {:.4}  value function {v1:.4}", r.j1.mean, r.j1.stderr);
    Ok(())
}
