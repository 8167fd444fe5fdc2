//! Plain-text output of trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::ode::Trajectory;

/// CSV of the named blocks, one row per grid point. Columns are `t` and
/// then `name[i][j]` for every component, values with 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory, names: &[&str]) -> String {
    let layout = traj.layout();
    let mut out = String::from("t");
    for name in names {
        let spec = layout.spec(name);
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                write!(out, ",{name}[{i}][{j}]").expect("string write");
            }
        }
    }
    out.push('\n');
    for k in 0..traj.len() {
        write!(out, "{:.16e}", traj.grid().time(k)).expect("string write");
        let state = traj.state(k);
        for name in names {
            for v in &state[layout.spec(name).range()] {
                write!(out, ",{v:.16e}").expect("string write");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, names: &[&str]) -> Result<()> {
    fs::write(path, trajectory_csv(traj, names))?;
    Ok(())
}
