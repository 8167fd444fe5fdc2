//! Sup-norm distance between the rescaled finite-N blocks and the limit,
//! for a doubling sequence of population sizes.

use lqmfg::convergence::compare_convergence;
use lqmfg::model::GameParams;
use lqmfg::ode::{SolveOptions, TimeGrid};

fn main() -> lqmfg::error::Result<()> {
    let p = GameParams::example1();
    let grid = TimeGrid::new(p.horizon, 1201)?;
    let table = compare_convergence(&p, &[20, 40, 80, 160], &grid, &SolveOptions::default())?;
    println!("{:>5} {:>12} {:>8}", "N", "max error", "ratio");
    for (i, row) in table.rows.iter().enumerate() {
        let err = table.max_error(i).map_or("escaped".into(), |e| format!("{e:.4e}"));
        let ratio = table.max_ratio(i).map_or(String::new(), |r| format!("{r:.4}"));
        println!("{:>5} {err:>12} {ratio:>8}", row.n_players);
    }
    println!("every ratio in [1.5, 2.5]: {}", table.rate_within(1.5, 2.5));
    Ok(())
}
