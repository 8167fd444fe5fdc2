//! The exact game with `N` minor players.
//!
//! [`solve_structured`] integrates nine `n×n` blocks whatever `N` is;
//! [`solve_dense_oracle`] integrates every player's full `(N+1)n` system and
//! is only practical for small `N`. [`assemble_dense`] turns the former into
//! the latter's format so the two can be compared entry by entry.

mod dense;
mod gains;
mod structured;

use std::sync::Arc;

pub use dense::{solve_dense_oracle, DenseSolution, StackedModel, DENSE_MAX_PLAYERS};
pub use gains::{assemble_dense, assemble_p0, assemble_p1, conjugate_player, nash_gains, NashGains};
pub use structured::{
    solve_structured, solve_structured_full, solve_structured_offsets, StructuredOffsets, StructuredRiccati,
    COST_BLOCKS, OFFSET_BLOCKS, RICCATI_BLOCKS, SYMMETRIC_BLOCKS,
};

use crate::ode::{Layout, Trajectory};

/// Names of the rescaled blocks, in the order of [`RICCATI_BLOCKS`].
pub const RESCALED_BLOCKS: [&str; 9] = ["L1_0", "L2_0", "L3_0", "L0", "L1", "L2", "L3", "La", "Lb"];
/// Power of `N` applied to each Riccati block.
const RESCALE_POWERS: [i32; 9] = [0, 1, 2, 0, 0, 1, 2, 0, 1];

/// Names of the rescaled offsets, in the order of [`OFFSET_BLOCKS`].
pub const RESCALED_OFFSETS: [&str; 5] = ["a0_0", "a1_0", "a0", "a1", "a2"];
const OFFSET_POWERS: [i32; 5] = [0, 1, 0, 0, 1];

fn rename_scaled(traj: &Trajectory, from: &[&str], to: &[&str], factors: &[f64]) -> Trajectory {
    let layout = from.iter().zip(to).fold(Layout::new(), |l, (f, t)| {
        let spec = traj.layout().spec(f);
        l.matrix(t, spec.rows, spec.cols)
    });
    let layout = Arc::new(layout);
    let mut data = Vec::with_capacity(traj.len() * layout.len());
    for k in 0..traj.len() {
        let state = traj.state(k);
        for (name, factor) in from.iter().zip(factors) {
            data.extend(state[traj.layout().spec(name).range()].iter().map(|v| v * factor));
        }
    }
    Trajectory::from_parts(*traj.grid(), layout, data)
}

/// `Λᴺ` view of the Π blocks: each block multiplied by `N`, `N²` or 1 so
/// that it has a finite limit as `N → ∞`.
pub fn rescale(s: &StructuredRiccati) -> Trajectory {
    let nn = s.n_players as f64;
    let factors: Vec<f64> = RESCALE_POWERS.iter().map(|&k| nn.powi(k)).collect();
    rename_scaled(&s.trajectory, &RICCATI_BLOCKS, &RESCALED_BLOCKS, &factors)
}

/// `αᴺ` view of the θ offsets.
pub fn rescale_offsets(o: &StructuredOffsets) -> Trajectory {
    let nn = o.n_players as f64;
    let factors: Vec<f64> = OFFSET_POWERS.iter().map(|&k| nn.powi(k)).collect();
    rename_scaled(&o.trajectory, &OFFSET_BLOCKS, &RESCALED_OFFSETS, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GameParams;
    use crate::ode::{SolveOptions, TimeGrid};

    #[test]
    fn rescale_multiplies_by_powers_of_n() {
        let p = GameParams::example1();
        let grid = TimeGrid::new(1.0, 11).unwrap();
        let mut p = p;
        p.horizon = 1.0;
        let s = solve_structured(&p, 7, &grid, &SolveOptions::default())
            .unwrap()
            .solved()
            .unwrap();
        let view = rescale(&s);
        for k in [0, 5, 10] {
            assert_eq!(view.matrix("L2_0", k), s.block("Pi2_0", k) * 7.0);
            assert_eq!(view.matrix("L3", k), s.block("Pi3", k) * 49.0);
            assert_eq!(view.matrix("La", k), s.block("Pia", k));
        }
    }
}
