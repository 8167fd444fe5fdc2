//! Exact Nash solution for a small population, checked against the solver
//! that works on the full stacked state.

use lqmfg::finite_n::{assemble_dense, solve_dense_oracle, solve_structured_full};
use lqmfg::linalg::max_abs_diff;
use lqmfg::model::GameParams;
use lqmfg::ode::{SolveOptions, TimeGrid};

fn main() -> lqmfg::error::Result<()> {
    let p = GameParams::example1();
    let opts = SolveOptions::tight();
    let grid = TimeGrid::new(p.horizon, 121)?;
    for n_players in [2, 3, 5] {
        let (s, o) = solve_structured_full(&p, n_players, &grid, &opts)?.into_result()?;
        let fast = assemble_dense(&s, &o)?;
        let dense = solve_dense_oracle(&p, n_players, &grid, &opts)?.into_result()?;
        let diff = (0..grid.len())
            .flat_map(|k| [max_abs_diff(&fast.p(0, k), &dense.p(0, k)), max_abs_diff(&fast.p(1, k), &dense.p(1, k))])
            .fold(0.0, f64::max);
        println!(
            "N = {n_players}: Pi1_0(0) = {:.8}, Pi1(0) = {:.8}, max |structured - dense| = {diff:.2e}",
            s.block("Pi1_0", 0)[(0, 0)],
            s.block("Pi1", 0)[(0, 0)],
        );
    }
    Ok(())
}
