//! Players use the limiting feedback laws in a large but finite population.
//! The realized major cost approaches its limit and the empirical mean
//! tracks the mean field state at rate `1/N`.

use lqmfg::limit::{asymptotic_costs, limit_strategy_gains, solve_limit_full};
use lqmfg::model::Scenario;
use lqmfg::ode::{SolveOptions, TimeGrid};
use lqmfg::sim::{deviation_sweep, simulate, FeedbackSchedule, SimConfig, SimMode};

fn main() -> lqmfg::error::Result<()> {
    let Scenario { params: p, law } = Scenario::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ex1_noise.json"))?;
    let dt = 0.01;
    let grid = TimeGrid::with_spacing(p.horizon, dt)?;
    let l = solve_limit_full(&p, &grid, &SolveOptions::default())?.0.into_result()?;
    let limit = asymptotic_costs(&l.riccati, &l.offsets, &l.costs, &law)?;
    let sched = FeedbackSchedule::decentralized(&p, &limit_strategy_gains(&p, &l.riccati, &l.offsets)?);

    let cfg = SimConfig {
        n_players: 100,
        num_paths: 500,
        dt,
        seed: 3,
        law,
        mode: SimMode::Decentralized,
    };
    let r = simulate(&p, &sched, &cfg)?;
    println!("N = 100: J0 = {:.4} ± {:.4}, limit {:.4}", r.j0.mean, r.j0.stderr, limit.j0);
    println!("         J1 = {:.4} ± {:.4}, limit {:.4}", r.j1.mean, r.j1.stderr, limit.j1);

    println!("E sup |mean - mean field|²:");
    for (n, d) in deviation_sweep(&p, &sched, &[25, 50, 100, 200], &SimConfig { num_paths: 200, ..cfg })? {
        println!("  N = {n:4}  {:.4e} ± {:.1e}   N·value = {:.4}", d.mean_sq_sup, d.stderr, n as f64 * d.mean_sq_sup);
    }
    Ok(())
}
