//! Solvability verdicts for the two bundled scenarios.

use lqmfg::limit::solve_limit_riccati;
use lqmfg::model::Scenario;
use lqmfg::ode::{SolveOptions, TimeGrid};

fn main() -> lqmfg::error::Result<()> {
    for name in ["ex1.json", "ex2.json"] {
        let path = format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"));
        let p = Scenario::from_path(path)?.params;
        let grid = TimeGrid::new(p.horizon, 1201)?;
        let (_, verdict) = solve_limit_riccati(&p, &grid, &SolveOptions::default())?;
        match verdict.escape_interval() {
            None => println!("{name}: solvable on [0, {}], sup l1 = {:.4}", p.horizon, verdict.sup_norm),
            Some((lo, hi)) => println!("{name}: finite escape time in ({lo:.6}, {hi:.6})"),
        }
    }
    Ok(())
}
