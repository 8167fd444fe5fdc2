//! The two tracking problems solved on their own reproduce the limit system.

use lqmfg::limit::solve_limit_full;
use lqmfg::model::GameParams;
use lqmfg::ode::{SolveOptions, TimeGrid};
use lqmfg::tracking::{solve_tracking, verify_consistency};

fn main() -> lqmfg::error::Result<()> {
    let p = GameParams::example1();
    let opts = SolveOptions::default();
    let grid = TimeGrid::new(p.horizon, 1201)?;
    let l = solve_limit_full(&p, &grid, &opts)?.0.into_result()?;
    let bt = solve_tracking(&p, &grid, &opts)?;
    println!("PP0(0) =\n{}", bt.pp0(0));
    let report = verify_consistency(&l, &bt, &opts)?;
    for (name, r) in &report.residuals {
        println!("{name:5} {r:.3e}");
    }
    println!("max {:.3e} against {:.1e}: {}", report.max_residual, report.threshold, if report.pass { "PASS" } else { "FAIL" });
    Ok(())
}
