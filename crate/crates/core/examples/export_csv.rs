//! Write limit trajectories and a few simulated paths as CSV.

use std::fs;
use std::path::PathBuf;

use lqmfg::export::write_trajectory_csv;
use lqmfg::limit::{limit_strategy_gains, solve_limit_full, LIMIT_BLOCKS};
use lqmfg::model::Scenario;
use lqmfg::ode::{SolveOptions, TimeGrid};
use lqmfg::sim::{path_csv, FeedbackSchedule, SimConfig, SimMode};

fn main() -> lqmfg::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/export".into()));
    fs::create_dir_all(&out)?;
    let Scenario { params: p, law } = Scenario::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ex1_noise.json"))?;
    let grid = TimeGrid::with_spacing(p.horizon, 0.01)?;
    let l = solve_limit_full(&p, &grid, &SolveOptions::default())?.0.into_result()?;
    write_trajectory_csv(&out.join("lambda.csv"), &l.riccati.trajectory, &LIMIT_BLOCKS)?;

    let sched = FeedbackSchedule::decentralized(&p, &limit_strategy_gains(&p, &l.riccati, &l.offsets)?);
    let cfg = SimConfig {
        n_players: 50,
        num_paths: 3,
        dt: 0.01,
        seed: 0,
        law,
        mode: SimMode::Decentralized,
    };
    fs::write(out.join("paths.csv"), path_csv(&p, &sched, &cfg, 3, 10)?)?;
    println!("wrote {} and {}", out.join("lambda.csv").display(), out.join("paths.csv").display());
    Ok(())
}
