//! The limiting Riccati blocks, offsets and constants for a scenario with
//! nonzero targets, plus the costs a player expects as `N` grows.

use lqmfg::limit::{asymptotic_costs, limit_strategy_gains, solve_limit_full, LIMIT_BLOCKS, LIMIT_OFFSETS};
use lqmfg::model::{GameParams, InitialLaw};
use lqmfg::ode::{SolveOptions, TimeGrid};
use nalgebra::DVector;

fn main() -> lqmfg::error::Result<()> {
    let one = DVector::from_element(1, 1.0);
    let p = GameParams::example1().with_etas(one.clone(), one.clone(), one.clone(), one);
    let grid = TimeGrid::new(p.horizon, 1201)?;
    let l = solve_limit_full(&p, &grid, &SolveOptions::default())?.0.into_result()?;

    println!("at t = 0:");
    for name in LIMIT_BLOCKS {
        println!("  {name:5} {:.8}", l.riccati.block(name, 0)[(0, 0)]);
    }
    for name in LIMIT_OFFSETS {
        println!("  {name:5} {:.8}", l.offsets.alpha(name, 0)[0]);
    }
    println!("  chi0  {:.8}", l.costs.chi("chi0", 0));
    println!("  chi   {:.8}", l.costs.chi("chi", 0));

    let g = limit_strategy_gains(&p, &l.riccati, &l.offsets)?;
    println!("major feedback at t = 0: K00 = {:.6}, K0bar = {:.6}", g.k00[0][(0, 0)], g.k0bar[0][(0, 0)]);

    let law = InitialLaw::scalar(1.0, 0.5, 1.0, 0.5);
    let j = asymptotic_costs(&l.riccati, &l.offsets, &l.costs, &law)?;
    println!("asymptotic costs: J0 = {:.6}, J1 = {:.6}", j.j0, j.j1);
    Ok(())
}
