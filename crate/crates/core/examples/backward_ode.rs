//! Backward integration of a scalar Riccati equation that blows up.
//!
//! `y' = -y²` with `y(2) = 1` has the solution `1 / (t - 1)`, which escapes
//! at `t = 1`. The first run stops at `t = 1.5`, the second reports the bracket.

use std::sync::Arc;

use lqmfg::ode::{integrate_backward, FlatState, FnSystem, IntegrationOutcome, Layout, Tolerances, TimeGrid};

fn main() -> lqmfg::error::Result<()> {
    let layout = Arc::new(Layout::new().scalar("y"));
    let mut terminal = FlatState::zeros(layout);
    terminal.set_scalar("y", 1.0);
    let sys = FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0] * y[0]);
    let tol = Tolerances::default();

    let grid = TimeGrid::with_start(1.5, 2.0, 6)?;
    if let IntegrationOutcome::Solved { trajectory, .. } = integrate_backward(&sys, &terminal, &grid, &tol)? {
        for k in 0..trajectory.len() {
            let t = grid.time(k);
            let y = trajectory.scalar("y", k);
            println!("t = {t:.2}  y = {y:.10}  exact = {:.10}", 1.0 / (t - 1.0));
        }
    }

    let grid = TimeGrid::new(2.0, 21)?;
    match integrate_backward(&sys, &terminal, &grid, &tol)? {
        IntegrationOutcome::Escaped(e) => println!("escape in ({:.9}, {:.9})", e.t_lo, e.t_hi),
        IntegrationOutcome::Solved { .. } => println!("no escape"),
    }
    Ok(())
}
