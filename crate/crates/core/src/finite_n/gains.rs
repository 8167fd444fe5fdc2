use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::dense::{dense_layout, DenseSolution};
use super::structured::{StructuredOffsets, StructuredRiccati};
use crate::error::{Error, Result};
use crate::linalg::{block_swap, set_block};
use crate::model::GameParams;
use crate::ode::{TimeGrid, Trajectory};

/// Full `P0` from its three distinct blocks.
pub fn assemble_p0(pi1: &DMatrix<f64>, pi2: &DMatrix<f64>, pi3: &DMatrix<f64>, n_players: usize) -> DMatrix<f64> {
    let n = pi1.nrows();
    let players = n_players + 1;
    let mut out = DMatrix::zeros(players * n, players * n);
    set_block(&mut out, 0, 0, pi1);
    let pi2t = pi2.transpose();
    for j in 1..players {
        set_block(&mut out, 0, j, pi2);
        set_block(&mut out, j, 0, &pi2t);
        for l in 1..players {
            set_block(&mut out, j, l, pi3);
        }
    }
    out
}

/// Full `P1` from its six distinct blocks `(Π0, Πa, Πb, Π1, Π2, Π3)`.
pub fn assemble_p1(blocks: [&DMatrix<f64>; 6], n_players: usize) -> DMatrix<f64> {
    let [p0, pa, pb, p1, p2, p3] = blocks;
    let n = p0.nrows();
    let players = n_players + 1;
    let mut out = DMatrix::zeros(players * n, players * n);
    set_block(&mut out, 0, 0, p0);
    set_block(&mut out, 0, 1, pa);
    set_block(&mut out, 1, 0, &pa.transpose());
    set_block(&mut out, 1, 1, p1);
    let (pbt, p2t) = (pb.transpose(), p2.transpose());
    for j in 2..players {
        set_block(&mut out, 0, j, pb);
        set_block(&mut out, j, 0, &pbt);
        set_block(&mut out, 1, j, p2);
        set_block(&mut out, j, 1, &p2t);
        for l in 2..players {
            set_block(&mut out, j, l, p3);
        }
    }
    out
}

fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(*p);
        offset += p.len();
    }
    out
}

/// `P0, P1, S0, S1, r0, r1` in the dense format from the structured blocks.
pub fn assemble_dense(s: &StructuredRiccati, o: &StructuredOffsets) -> Result<DenseSolution> {
    if s.grid() != o.grid() || s.n_players != o.n_players {
        return Err(Error::GridMismatch(
            "structured Riccati blocks and offsets come from different solves".into(),
        ));
    }
    let n_players = s.n_players;
    let n = s.block("Pi0", 0).nrows();
    let dim = (n_players + 1) * n;
    let layout = Arc::new(dense_layout(dim, 2));
    let grid = *s.grid();
    let mut data = vec![0.0; grid.len() * layout.len()];
    for k in 0..grid.len() {
        let b = |name| s.block(name, k);
        let p0 = assemble_p0(&b("Pi1_0"), &b("Pi2_0"), &b("Pi3_0"), n_players);
        let p1 = assemble_p1(
            [&b("Pi0"), &b("Pia"), &b("Pib"), &b("Pi1"), &b("Pi2"), &b("Pi3")],
            n_players,
        );
        let th = |name| o.theta(name, k);
        let (u0, u1) = (th("th0_0"), th("th1_0"));
        let (v0, v1, v2) = (th("th0"), th("th1"), th("th2"));
        let mut s0_parts = vec![&u0];
        s0_parts.extend(std::iter::repeat_n(&u1, n_players));
        let mut s1_parts = vec![&v0, &v1];
        s1_parts.extend(std::iter::repeat_n(&v2, n_players - 1));

        let state = &mut data[k * layout.len()..(k + 1) * layout.len()];
        layout.write_matrix(state, "P0", &p0);
        layout.write_matrix(state, "P1", &p1);
        layout.write_vector(state, "S0", &stack(&s0_parts));
        layout.write_vector(state, "S1", &stack(&s1_parts));
        layout.write_scalar(state, "r0", o.r("r0", k));
        layout.write_scalar(state, "r1", o.r("r1", k));
    }
    Ok(DenseSolution {
        n_players,
        stored: 2,
        trajectory: Trajectory::from_parts(grid, layout, data),
    })
}

/// `(P_i, S_i)` for minor player `i ≥ 1` from player 1's by exchanging block
/// rows and columns 1 and `i`.
pub fn conjugate_player(
    p1: &DMatrix<f64>,
    s1: &DVector<f64>,
    i: usize,
    n: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    if i == 1 {
        return (p1.clone(), s1.clone());
    }
    let blocks = p1.nrows() / n;
    let j = block_swap(blocks, n, 1, i);
    (&j * p1 * &j, &j * s1)
}

/// Affine feedback schedules `u_j = −(K_j X + k_j)` on a grid.
#[derive(Clone, Debug)]
pub struct NashGains {
    pub n_players: usize,
    pub grid: TimeGrid,
    /// `gains[k][j]` is `K_j` (`n1 × (N+1)n`) at grid point `k`.
    pub gains: Vec<Vec<DMatrix<f64>>>,
    /// `offsets[k][j]` is `k_j` at grid point `k`.
    pub offsets: Vec<Vec<DVector<f64>>>,
}

impl NashGains {
    pub fn gain(&self, j: usize, k: usize) -> &DMatrix<f64> {
        &self.gains[k][j]
    }

    pub fn offset(&self, j: usize, k: usize) -> &DVector<f64> {
        &self.offsets[k][j]
    }
}

/// `K_j = R_j⁻¹ 𝔹_jᵀ P_j`, `k_j = R_j⁻¹ 𝔹_jᵀ S_j` for every player.
///
/// Minor players beyond those stored in `dense` are obtained by
/// [`conjugate_player`].
pub fn nash_gains(dense: &DenseSolution, p: &GameParams) -> Result<NashGains> {
    let dc = p.derive_coeffs()?;
    let n = p.n;
    let n_players = dense.n_players;
    let players = n_players + 1;
    // R_j⁻¹ 𝔹_jᵀ only touches block row j.
    let w0 = &dc.r0_inv * p.b0.transpose();
    let w = &dc.r_inv * p.b.transpose();
    let grid = *dense.grid();
    let mut gains = Vec::with_capacity(grid.len());
    let mut offsets = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let mut gk = Vec::with_capacity(players);
        let mut ok = Vec::with_capacity(players);
        let p0 = dense.p(0, k);
        let s0 = dense.s(0, k);
        gk.push(&w0 * p0.rows(0, n));
        ok.push(&w0 * s0.rows(0, n));
        let (p1, s1) = (dense.p(1, k), dense.s(1, k));
        for i in 1..players {
            let (pi, si) = if i < dense.stored {
                (dense.p(i, k), dense.s(i, k))
            } else {
                conjugate_player(&p1, &s1, i, n)
            };
            gk.push(&w * pi.rows(i * n, n));
            ok.push(&w * si.rows(i * n, n));
        }
        gains.push(gk);
        offsets.push(ok);
    }
    Ok(NashGains {
        n_players,
        grid,
        gains,
        offsets,
    })
}
