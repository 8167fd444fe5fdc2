//! Brute-force finite-N system over the full `(N+1)n` state.
//!
//! Every player's `P_j`, `S_j`, `r_j` is integrated separately from the
//! stacked-state matrices `Â`, `D̂`, `𝔹_k`, `K_j`, `ℚ_j`. Nothing here uses
//! the block structure, so it serves as an oracle for the structured solver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::GameParams;
use crate::ode::{
    integrate_backward, FlatState, IntegrationOutcome, Layout, OdeSystem, Outcome, SolveOptions,
    TimeGrid, Trajectory,
};

/// Largest `N` accepted by the oracle.
pub const DENSE_MAX_PLAYERS: usize = 8;

/// `P_j`, `S_j`, `r_j` for `j = 0..stored` on a grid.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    pub n_players: usize,
    /// Number of players whose value functions are stored (`N + 1` for the
    /// oracle, 2 for an assembled solution).
    pub stored: usize,
    pub trajectory: Trajectory,
}

pub(crate) fn dense_layout(dim: usize, stored: usize) -> Layout {
    let mut layout = Layout::new();
    for j in 0..stored {
        layout = layout.matrix(&format!("P{j}"), dim, dim);
    }
    for j in 0..stored {
        layout = layout.vector(&format!("S{j}"), dim);
    }
    for j in 0..stored {
        layout = layout.scalar(&format!("r{j}"));
    }
    layout
}

impl DenseSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    /// Side length `(N+1)n` of the `P_j`.
    pub fn dim(&self) -> usize {
        self.trajectory.layout().spec("P0").rows
    }

    pub fn p(&self, j: usize, k: usize) -> DMatrix<f64> {
        self.trajectory.matrix(&format!("P{j}"), k)
    }

    pub fn s(&self, j: usize, k: usize) -> DVector<f64> {
        self.trajectory.vector(&format!("S{j}"), k)
    }

    pub fn r(&self, j: usize, k: usize) -> f64 {
        self.trajectory.scalar(&format!("r{j}"), k)
    }
}

/// Stacked-state matrices of the `(N+1)`-player game.
pub struct StackedModel {
    pub n_players: usize,
    pub n: usize,
    pub a_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    /// `𝔹_k R_k⁻¹ 𝔹_kᵀ` for `k = 0..=N`.
    pub m_hat: Vec<DMatrix<f64>>,
    /// `K_j` and `K_jf` for `j = 0..=N`.
    pub k: Vec<DMatrix<f64>>,
    pub k_f: Vec<DMatrix<f64>>,
    /// `ℚ_j` and `ℚ_jf`.
    pub q: Vec<DMatrix<f64>>,
    pub q_f: Vec<DMatrix<f64>>,
    /// `K_jᵀ Q η` source of the offsets.
    pub source: Vec<DVector<f64>>,
    pub eta_cost: Vec<f64>,
}

fn ones(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_element(rows, cols, 1.0)
}

fn unit(len: usize, i: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(len, 1);
    e[(i, 0)] = 1.0;
    e
}

impl StackedModel {
    pub fn new(p: &GameParams, n_players: usize) -> Result<Self> {
        if n_players < 2 {
            return Err(Error::InvalidInput(format!(
                "the finite game needs N >= 2 minor players, got {n_players}"
            )));
        }
        let dc = p.derive_coeffs()?;
        let (n, nn) = (p.n, n_players as f64);
        let players = n_players + 1;
        let dim = players * n;

        let mut diag = DMatrix::zeros(players, players);
        diag[(0, 0)] = 1.0;
        let mut a_hat = diag.kronecker(&p.a0);
        let mut minor_diag = DMatrix::identity(players, players);
        minor_diag[(0, 0)] = 0.0;
        a_hat += minor_diag.kronecker(&p.a);
        let mut coupling = DMatrix::zeros(dim, dim);
        coupling
            .view_mut((0, n), (n, n_players * n))
            .copy_from(&ones(1, n_players).kronecker(&(&p.f0 / nn)));
        coupling
            .view_mut((n, 0), (n_players * n, n))
            .copy_from(&ones(n_players, 1).kronecker(&p.g));
        coupling
            .view_mut((n, n), (n_players * n, n_players * n))
            .copy_from(&ones(n_players, n_players).kronecker(&(&p.f / nn)));
        a_hat += coupling;

        let n2 = p.n2;
        let mut d_hat = DMatrix::zeros(dim, players * n2);
        d_hat.view_mut((0, 0), (n, n2)).copy_from(&p.d0);
        for i in 1..players {
            d_hat.view_mut((i * n, i * n2), (n, n2)).copy_from(&p.d);
        }

        let mut m_hat = Vec::with_capacity(players);
        let b0 = unit(players, 0).kronecker(&p.b0);
        m_hat.push(&b0 * &dc.r0_inv * b0.transpose());
        for k in 1..players {
            let bk = unit(players, k).kronecker(&p.b);
            m_hat.push(&bk * &dc.r_inv * bk.transpose());
        }

        let major_k = |gamma0: &DMatrix<f64>| {
            let mut sel = DMatrix::zeros(1, players);
            sel[(0, 0)] = 1.0;
            let mut avg = ones(1, players);
            avg[(0, 0)] = 0.0;
            sel.kronecker(&DMatrix::identity(n, n)) - avg.kronecker(&(gamma0 / nn))
        };
        let minor_k = |i: usize, gamma1: &DMatrix<f64>, gamma2: &DMatrix<f64>| {
            let own = unit(players, i).transpose().kronecker(&DMatrix::identity(n, n));
            let major = unit(players, 0).transpose().kronecker(gamma1);
            let mut avg = ones(1, players);
            avg[(0, 0)] = 0.0;
            own - major - avg.kronecker(&(gamma2 / nn))
        };
        let mut k = vec![major_k(&p.gamma0)];
        let mut k_f = vec![major_k(&p.gamma0f)];
        for i in 1..players {
            k.push(minor_k(i, &p.gamma1, &p.gamma2));
            k_f.push(minor_k(i, &p.gamma1f, &p.gamma2f));
        }
        let weight = |j: usize| if j == 0 { (&p.q0, &p.q0f) } else { (&p.q, &p.qf) };
        let q = (0..players).map(|j| k[j].transpose() * weight(j).0 * &k[j]).collect();
        let q_f = (0..players).map(|j| k_f[j].transpose() * weight(j).1 * &k_f[j]).collect();
        let source = (0..players)
            .map(|j| {
                if j == 0 {
                    k[0].transpose() * &p.q0 * &p.eta0
                } else {
                    k[j].transpose() * &p.q * &p.eta
                }
            })
            .collect();
        let eta_cost = (0..players)
            .map(|j| {
                if j == 0 {
                    p.eta0.dot(&(&p.q0 * &p.eta0))
                } else {
                    p.eta.dot(&(&p.q * &p.eta))
                }
            })
            .collect();
        Ok(Self {
            n_players,
            n,
            a_hat,
            d_hat,
            m_hat,
            k,
            k_f,
            q,
            q_f,
            source,
            eta_cost,
        })
    }

    pub fn dim(&self) -> usize {
        (self.n_players + 1) * self.n
    }
}

struct DenseSystem {
    model: StackedModel,
    layout: Arc<Layout>,
    names_p: Vec<String>,
    names_s: Vec<String>,
    names_r: Vec<String>,
    symmetrize: bool,
}

impl OdeSystem for DenseSystem {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let md = &self.model;
        let players = md.n_players + 1;
        let p: Vec<DMatrix<f64>> = self.names_p.iter().map(|n| self.layout.read_matrix(y, n)).collect();
        let s: Vec<DVector<f64>> = self.names_s.iter().map(|n| self.layout.read_vector(y, n)).collect();
        let a = &md.a_hat;
        let m = &md.m_hat;

        // Σ_k 𝕄_k P_k, Σ_k P_k 𝕄_k, Σ_k 𝕄_k S_k over the minor players.
        let mut sum_mp = DMatrix::zeros(md.dim(), md.dim());
        let mut sum_pm = DMatrix::zeros(md.dim(), md.dim());
        let mut sum_ms = DVector::zeros(md.dim());
        for k in 1..players {
            sum_mp += &m[k] * &p[k];
            sum_pm += &p[k] * &m[k];
            sum_ms += &m[k] * &s[k];
        }

        for j in 0..players {
            let pj = &p[j];
            let sj = &s[j];
            let (dp, ds, dr) = if j == 0 {
                let dp = -(pj * a + a.transpose() * pj) + pj * &m[0] * pj + (pj * &sum_mp + &sum_pm * pj) - &md.q[0];
                let ds = -a.transpose() * sj + pj * &m[0] * sj + &sum_pm * sj + pj * &sum_ms + &md.source[0];
                let dr = sj.dot(&(&m[0] * sj)) + 2.0 * sj.dot(&sum_ms) - md.eta_cost[0]
                    - (md.d_hat.transpose() * pj * &md.d_hat).trace();
                (dp, ds, dr)
            } else {
                let p0 = &p[0];
                let s0 = &s[0];
                let dp = -(pj * a + a.transpose() * pj) - pj * &m[j] * pj
                    + (pj * &m[0] * p0 + p0 * &m[0] * pj)
                    + (pj * &sum_mp + &sum_pm * pj)
                    - &md.q[j];
                let ds = -a.transpose() * sj + p0 * &m[0] * sj + pj * &m[0] * s0 - pj * &m[j] * sj
                    + &sum_pm * sj
                    + pj * &sum_ms
                    + &md.source[j];
                let dr = 2.0 * sj.dot(&(&m[0] * s0)) + 2.0 * sj.dot(&sum_ms) - sj.dot(&(&m[j] * sj))
                    - md.eta_cost[j]
                    - (md.d_hat.transpose() * pj * &md.d_hat).trace();
                (dp, ds, dr)
            };
            self.layout.write_matrix(dy, &self.names_p[j], &dp);
            self.layout.write_vector(dy, &self.names_s[j], &ds);
            self.layout.write_scalar(dy, &self.names_r[j], dr);
        }
    }

    fn project(&self, y: &mut [f64]) -> bool {
        if self.symmetrize {
            let names: Vec<&str> = self.names_p.iter().map(String::as_str).collect();
            self.layout.symmetrize_blocks(y, &names);
        }
        self.symmetrize
    }
}

/// Solve the full coupled system for all `N + 1` players.
pub fn solve_dense_oracle(
    p: &GameParams,
    n_players: usize,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<Outcome<DenseSolution>> {
    if n_players > DENSE_MAX_PLAYERS {
        return Err(Error::InvalidInput(format!(
            "dense oracle is limited to N <= {DENSE_MAX_PLAYERS}, got {n_players}"
        )));
    }
    let model = StackedModel::new(p, n_players)?;
    let players = n_players + 1;
    let layout = Arc::new(dense_layout(model.dim(), players));
    let names = |prefix: &str| (0..players).map(|j| format!("{prefix}{j}")).collect::<Vec<_>>();
    let mut terminal = FlatState::zeros(layout.clone());
    for j in 0..players {
        let (qf, eta_f) = if j == 0 { (&p.q0f, &p.eta0f) } else { (&p.qf, &p.etaf) };
        terminal.set_matrix(&format!("P{j}"), &model.q_f[j]);
        terminal.set_vector(&format!("S{j}"), &(-model.k_f[j].transpose() * qf * eta_f));
        terminal.set_scalar(&format!("r{j}"), eta_f.dot(&(qf * eta_f)));
    }
    let sys = DenseSystem {
        model,
        layout,
        names_p: names("P"),
        names_s: names("S"),
        names_r: names("r"),
        symmetrize: opts.symmetrize,
    };
    Ok(match integrate_backward(&sys, &terminal, grid, &opts.tol)? {
        IntegrationOutcome::Solved { trajectory, .. } => Outcome::Solved(DenseSolution {
            n_players,
            stored: players,
            trajectory,
        }),
        IntegrationOutcome::Escaped(e) => Outcome::Escaped(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{block, block_swap, max_abs, max_abs_diff};

    fn solve(p: &GameParams, n_players: usize) -> DenseSolution {
        let grid = TimeGrid::new(p.horizon, 41).unwrap();
        solve_dense_oracle(p, n_players, &grid, &SolveOptions::tight())
            .unwrap()
            .solved()
            .unwrap()
    }

    #[test]
    fn a_hat_matches_the_scalar_dynamics() {
        let p = GameParams::example1();
        let md = StackedModel::new(&p, 2).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.25, 0.25, 0.4, 0.6, 0.1, 0.4, 0.1, 0.6],
        );
        assert!(max_abs_diff(&md.a_hat, &expected) < 1e-15);
    }

    #[test]
    fn n2_block_pattern_of_p0() {
        let mut p = GameParams::example1();
        p.horizon = 2.0;
        let sol = solve(&p, 2);
        for k in [0, 20, 40] {
            let p0 = sol.p(0, k);
            let b = |i, j| block(&p0, i, j, 1, 1);
            assert!(max_abs_diff(&b(0, 1), &b(0, 2)) < 1e-9);
            assert!(max_abs_diff(&b(1, 1), &b(2, 2)) < 1e-9);
            assert!(max_abs_diff(&b(1, 2), &b(2, 1)) < 1e-9);
            assert!(max_abs_diff(&b(1, 1), &b(1, 2)) < 1e-9);
        }
    }

    #[test]
    fn zero_weights_give_zero_solution() {
        let mut p = GameParams::example1().with_scalar_noise(1.0, 1.0);
        for m in [&mut p.q0, &mut p.q, &mut p.gamma0, &mut p.gamma1, &mut p.gamma2] {
            m.fill(0.0);
        }
        let sol = solve(&p, 3);
        for k in 0..sol.grid().len() {
            for j in 0..4 {
                assert_eq!(max_abs(&sol.p(j, k)), 0.0);
                assert_eq!(sol.r(j, k), 0.0);
            }
        }
    }

    #[test]
    fn p2_is_p1_conjugated() {
        let mut p = GameParams::example1();
        p.horizon = 2.0;
        let sol = solve(&p, 3);
        let j = block_swap(4, 1, 1, 2);
        for k in [0, 20] {
            let conj = &j * sol.p(1, k) * &j;
            assert!(max_abs_diff(&sol.p(2, k), &conj) < 1e-8);
        }
    }

    #[test]
    fn too_many_players_is_rejected() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        assert!(solve_dense_oracle(&GameParams::example1(), 9, &grid, &SolveOptions::default()).is_err());
    }
}
