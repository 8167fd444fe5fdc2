//! The two limiting control problems: the major player against the frozen
//! mean field (P0, state `(X0, X̄)`) and a representative minor player
//! (P1, state `(X0, X1, X̄)`).
//!
//! Their coefficients depend on `Λ` and `α`, so every solve here carries the
//! limit system along in the same state vector instead of interpolating a
//! stored solution.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::limit::{
    alpha_rhs, lambda_rhs, terminal_alpha, terminal_lambda, Alpha, Coefs, Lambda, LimitGains, LimitSolution,
    LIMIT_BLOCKS, LIMIT_OFFSETS, LIMIT_SYMMETRIC,
};
use crate::linalg::{block, max_abs_diff, set_block, vec_block};
use crate::model::GameParams;
use crate::ode::{integrate_backward, FlatState, IntegrationOutcome, Layout, OdeSystem, SolveOptions, TimeGrid, Trajectory};

/// Residuals above this fail [`verify_consistency`].
pub const CONSISTENCY_THRESHOLD: f64 = 1e-6;

const PHI0_BLOCKS: [&str; 3] = ["Phi1_0", "Phi2_0", "Phi3_0"];
const PHI_BLOCKS: [&str; 6] = ["Phi0", "Phia", "Phib", "Phi1", "Phi2", "Phi3"];
const BETA_BLOCKS: [&str; 5] = ["b0_0", "b1_0", "b0", "b1", "b2"];

fn stack_rows(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, parts[0].ncols());
    let mut r = 0;
    for m in parts {
        out.view_mut((r, 0), (m.nrows(), m.ncols())).copy_from(*m);
        r += m.nrows();
    }
    out
}

fn stack_vec(parts: &[&DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(parts.iter().map(|v| v.len()).sum());
    let mut r = 0;
    for v in parts {
        out.rows_mut(r, v.len()).copy_from(*v);
        r += v.len();
    }
    out
}

fn block_matrix(n: usize, blocks: &[&[&DMatrix<f64>]]) -> DMatrix<f64> {
    let k = blocks.len();
    let mut out = DMatrix::zeros(k * n, k * n);
    for (i, row) in blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            set_block(&mut out, i, j, b);
        }
    }
    out
}

/// Coefficients of (P0) at one instant.
///
/// The state is `(X0, X̄)`; dynamics are `AA0·x + BB0·u0 + forcing`.
#[derive(Clone, Debug, PartialEq)]
pub struct P0Assembly {
    pub aa0: DMatrix<f64>,
    pub bb0: DMatrix<f64>,
    pub qq0: DMatrix<f64>,
    /// Additive drift term `−[0; Mα1]`.
    pub forcing: DVector<f64>,
    /// Linear cost weight `[I; −Γ0ᵀ]Q0η0`.
    pub linear: DVector<f64>,
    pub pp0_t: DMatrix<f64>,
    pub ss0_t: DVector<f64>,
}

/// Coefficients of (P1) at one instant; state `(X0, X1, X̄)`.
#[derive(Clone, Debug, PartialEq)]
pub struct P1Assembly {
    pub aa: DMatrix<f64>,
    pub bb: DMatrix<f64>,
    pub qq: DMatrix<f64>,
    pub qq_f: DMatrix<f64>,
    /// Additive drift term `f = −[M0α0⁰; 0; Mα1]`.
    pub forcing: DVector<f64>,
    /// Linear cost weight `[−Γ1ᵀ; I; −Γ2ᵀ]Qη`.
    pub linear: DVector<f64>,
    pub ss_t: DVector<f64>,
}

fn p0_at(c: &Coefs, x: &Lambda, al: &Alpha) -> P0Assembly {
    let p = &c.p;
    let n = p.n;
    let m = &c.dc.m;
    let lower_left = &p.g - m * x.la.transpose();
    let lower_right = &p.a + &p.f - m * (&x.l1 + &x.l2);
    let aa0 = block_matrix(n, &[&[&p.a0, &p.f0], &[&lower_left, &lower_right]]);
    let bb0 = stack_rows(&[&p.b0, &DMatrix::zeros(n, p.n1)]);
    let sel = stack_rows(&[&DMatrix::identity(n, n), &-p.gamma0.transpose()]);
    let sel_f = stack_rows(&[&DMatrix::identity(n, n), &-p.gamma0f.transpose()]);
    P0Assembly {
        aa0,
        bb0,
        qq0: &sel * &p.q0 * sel.transpose(),
        forcing: -stack_vec(&[&DVector::zeros(n), &(m * &al.a1)]),
        linear: &sel * &p.q0 * &p.eta0,
        pp0_t: &sel_f * &p.q0f * sel_f.transpose(),
        ss0_t: -(&sel_f * &p.q0f * &p.eta0f),
    }
}

fn p1_at(c: &Coefs, x: &Lambda, al: &Alpha) -> P1Assembly {
    let p = &c.p;
    let n = p.n;
    let (m0, m) = (&c.dc.m0, &c.dc.m);
    let zero = DMatrix::zeros(n, n);
    let r1 = [&p.a0 - m0 * &x.l10, zero.clone(), &p.f0 - m0 * &x.l20];
    let r3 = [&p.g - m * x.la.transpose(), zero.clone(), &p.a + &p.f - m * (&x.l1 + &x.l2)];
    let aa = block_matrix(
        n,
        &[&[&r1[0], &r1[1], &r1[2]], &[&p.g, &p.a, &p.f], &[&r3[0], &r3[1], &r3[2]]],
    );
    let bb = stack_rows(&[&DMatrix::zeros(n, p.n1), &p.b, &DMatrix::zeros(n, p.n1)]);
    let id = DMatrix::identity(n, n);
    let sel = stack_rows(&[&-p.gamma1.transpose(), &id, &-p.gamma2.transpose()]);
    let sel_f = stack_rows(&[&-p.gamma1f.transpose(), &id, &-p.gamma2f.transpose()]);
    P1Assembly {
        aa,
        bb,
        qq: &sel * &p.q * sel.transpose(),
        qq_f: &sel_f * &p.qf * sel_f.transpose(),
        forcing: -stack_vec(&[&(m0 * &al.a00), &DVector::zeros(n), &(m * &al.a1)]),
        linear: &sel * &p.q * &p.eta,
        ss_t: -(&sel_f * &p.qf * &p.etaf),
    }
}

fn coefs(p: &GameParams) -> Result<Coefs> {
    Ok(Coefs {
        p: p.clone(),
        dc: p.derive_coeffs()?,
    })
}

fn limit_point(l: &LimitSolution, k: usize) -> (Lambda, Alpha) {
    (
        Lambda::read(l.riccati.trajectory.layout(), l.riccati.trajectory.state(k)),
        Alpha::read(l.offsets.trajectory.layout(), l.offsets.trajectory.state(k)),
    )
}

/// (P0) coefficients at every grid point of a solved limit system.
pub fn assemble_p0(p: &GameParams, l: &LimitSolution) -> Result<Vec<P0Assembly>> {
    let c = coefs(p)?;
    Ok((0..l.riccati.grid().len())
        .map(|k| {
            let (x, al) = limit_point(l, k);
            p0_at(&c, &x, &al)
        })
        .collect())
}

/// (P1) coefficients at every grid point of a solved limit system.
pub fn assemble_p1(p: &GameParams, l: &LimitSolution) -> Result<Vec<P1Assembly>> {
    let c = coefs(p)?;
    Ok((0..l.riccati.grid().len())
        .map(|k| {
            let (x, al) = limit_point(l, k);
            p1_at(&c, &x, &al)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Form {
    /// `PP0, SS0, PP, SS` as full matrices.
    Monolithic,
    /// Φ and β blocks integrated one by one.
    Blocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Which {
    P0,
    P1,
    Both,
}

struct TrackingSystem {
    coefs: Coefs,
    layout: Arc<Layout>,
    form: Form,
    which: Which,
    symmetric: Vec<&'static str>,
    symmetrize: bool,
    m0_hat: DMatrix<f64>,
    m_hat: DMatrix<f64>,
}

impl TrackingSystem {
    fn p0(&self) -> bool {
        self.which != Which::P1
    }

    fn p1(&self) -> bool {
        self.which != Which::P0
    }

    fn monolithic(&self, x: &Lambda, al: &Alpha, y: &[f64], dy: &mut [f64]) {
        let l = &self.layout;
        if self.p0() {
            let asm = p0_at(&self.coefs, x, al);
            let pp = l.read_matrix(y, "PP0");
            let ss = l.read_vector(y, "SS0");
            let at = asm.aa0.transpose();
            let pm = &pp * &self.m0_hat;
            let dp = -&at * &pp - &pp * &asm.aa0 + &pm * &pp - &asm.qq0;
            let ds = -&at * &ss + &pm * &ss - &pp * &asm.forcing + &asm.linear;
            l.write_matrix(dy, "PP0", &dp);
            l.write_vector(dy, "SS0", &ds);
        }
        if self.p1() {
            let asm = p1_at(&self.coefs, x, al);
            let pp = l.read_matrix(y, "PP");
            let ss = l.read_vector(y, "SS");
            let at = asm.aa.transpose();
            let pm = &pp * &self.m_hat;
            let dp = -&at * &pp - &pp * &asm.aa + &pm * &pp - &asm.qq;
            let ds = -&at * &ss + &pm * &ss - &pp * &asm.forcing + &asm.linear;
            l.write_matrix(dy, "PP", &dp);
            l.write_vector(dy, "SS", &ds);
        }
    }

    fn blocks(&self, x: &Lambda, al: &Alpha, y: &[f64], dy: &mut [f64]) {
        let l = &self.layout;
        let p = &self.coefs.p;
        let (m0, m) = (&self.coefs.dc.m0, &self.coefs.dc.m);
        let (at, a0t, gt, f0t, ft) = (
            p.a.transpose(),
            p.a0.transpose(),
            p.g.transpose(),
            p.f0.transpose(),
            p.f.transpose(),
        );
        let gt_la = &gt - &x.la * m;
        let bar = &p.a + &p.f - m * (&x.l1 + &x.l2);
        let bar_t = &at + &ft - (&x.l1 + x.l2.transpose()) * m;
        if self.p0() {
            let r = |name| l.read_matrix(y, name);
            let (f1, f2, f3) = (r("Phi1_0"), r("Phi2_0"), r("Phi3_0"));
            let b00 = l.read_vector(y, "b0_0");
            let b10 = l.read_vector(y, "b1_0");
            let d1 = &f1 * m0 * &f1 - &a0t * &f1 - &f1 * &p.a0 - &gt_la * f2.transpose() - &f2 * gt_la.transpose()
                - &p.q0;
            let d2 = -&a0t * &f2 - &gt_la * &f3 - &f1 * &p.f0 - &f2 * &bar + &f1 * m0 * &f2 + &p.q0 * &p.gamma0;
            let d3 = f2.transpose() * m0 * &f2 - &f0t * &f2 - f2.transpose() * &p.f0 - &bar_t * &f3 - &f3 * &bar
                - p.gamma0.transpose() * &p.q0 * &p.gamma0;
            let q0e = &p.q0 * &p.eta0;
            let db00 = (&f1 * m0 - &a0t) * &b00 - &gt_la * &b10 + &f2 * m * &al.a1 + &q0e;
            let db10 = (f2.transpose() * m0 - &f0t) * &b00 - &bar_t * &b10 + &f3 * m * &al.a1
                - p.gamma0.transpose() * &q0e;
            l.write_matrix(dy, "Phi1_0", &d1);
            l.write_matrix(dy, "Phi2_0", &d2);
            l.write_matrix(dy, "Phi3_0", &d3);
            l.write_vector(dy, "b0_0", &db00);
            l.write_vector(dy, "b1_0", &db10);
        }
        if self.p1() {
            let r = |name| l.read_matrix(y, name);
            let (f0, fa, fb, f1, f2, f3) = (r("Phi0"), r("Phia"), r("Phib"), r("Phi1"), r("Phi2"), r("Phi3"));
            let rv = |name| l.read_vector(y, name);
            let (b0, b1, b2) = (rv("b0"), rv("b1"), rv("b2"));
            let a0_l = &a0t - &x.l10 * m0;
            let f0_l = &p.f0 - m0 * &x.l20;
            let d0 = &fa * m * fa.transpose() - &gt * fa.transpose() - &fa * &p.g
                - p.gamma1.transpose() * &p.q * &p.gamma1
                - &a0_l * &f0
                - &f0 * a0_l.transpose()
                - &gt_la * fb.transpose()
                - &fb * gt_la.transpose();
            let d1 = &f1 * m * &f1 - &at * &f1 - &f1 * &p.a - &p.q;
            let d2 = -&at * &f2 - &f1 * &p.f - fa.transpose() * &f0_l - &f2 * &bar + &f1 * m * &f2
                + &p.q * &p.gamma2;
            let d3 = f2.transpose() * m * &f2 - &ft * &f2 - f2.transpose() * &p.f - f0_l.transpose() * &fb
                - fb.transpose() * &f0_l
                - &bar_t * &f3
                - &f3 * &bar
                - p.gamma2.transpose() * &p.q * &p.gamma2;
            let da = -&fa * &p.a - &gt * &f1 - &a0_l * &fa - &gt_la * f2.transpose() + &fa * m * &f1
                + p.gamma1.transpose() * &p.q;
            let db = -&f0 * &f0_l - &gt * &f2 - &fa * &p.f + &fa * m * &f2 - &a0_l * &fb - &gt_la * &f3 - &fb * &bar
                - p.gamma1.transpose() * &p.q * &p.gamma2;
            let qe = &p.q * &p.eta;
            let m0a = m0 * &al.a00;
            let ma = m * &al.a1;
            let db0 = (&fa * m - &gt) * &b1 - &a0_l * &b0 - &gt_la * &b2 + &f0 * &m0a + &fb * &ma
                - p.gamma1.transpose() * &qe;
            let db1 = (&f1 * m - &at) * &b1 + fa.transpose() * &m0a + &f2 * &ma + &qe;
            let db2 = (f2.transpose() * m - &ft) * &b1 - f0_l.transpose() * &b0 - &bar_t * &b2
                + fb.transpose() * &m0a
                + &f3 * &ma
                - p.gamma2.transpose() * &qe;
            for (name, v) in [("Phi0", &d0), ("Phia", &da), ("Phib", &db), ("Phi1", &d1), ("Phi2", &d2), ("Phi3", &d3)] {
                l.write_matrix(dy, name, v);
            }
            l.write_vector(dy, "b0", &db0);
            l.write_vector(dy, "b1", &db1);
            l.write_vector(dy, "b2", &db2);
        }
    }
}

impl OdeSystem for TrackingSystem {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let x = Lambda::read(&self.layout, y);
        let al = Alpha::read(&self.layout, y);
        lambda_rhs(&self.coefs, &x).write(&self.layout, dy);
        alpha_rhs(&self.coefs, &x, &al).write(&self.layout, dy);
        match self.form {
            Form::Monolithic => self.monolithic(&x, &al, y, dy),
            Form::Blocks => self.blocks(&x, &al, y, dy),
        }
    }

    fn project(&self, y: &mut [f64]) -> bool {
        if self.symmetrize {
            self.layout.symmetrize_blocks(y, &self.symmetric);
        }
        self.symmetrize
    }
}

fn build(p: &GameParams, form: Form, which: Which, opts: &SolveOptions) -> Result<(TrackingSystem, FlatState)> {
    let c = coefs(p)?;
    let n = p.n;
    let mut layout = LIMIT_BLOCKS.iter().fold(Layout::new(), |l, name| l.matrix(name, n, n));
    layout = LIMIT_OFFSETS.iter().fold(layout, |l, name| l.vector(name, n));
    let mut symmetric: Vec<&'static str> = LIMIT_SYMMETRIC.to_vec();
    let p0 = which != Which::P1;
    let p1 = which != Which::P0;
    match form {
        Form::Monolithic => {
            if p0 {
                layout = layout.matrix("PP0", 2 * n, 2 * n).vector("SS0", 2 * n);
                symmetric.push("PP0");
            }
            if p1 {
                layout = layout.matrix("PP", 3 * n, 3 * n).vector("SS", 3 * n);
                symmetric.push("PP");
            }
        }
        Form::Blocks => {
            if p0 {
                layout = PHI0_BLOCKS.iter().fold(layout, |l, name| l.matrix(name, n, n));
                layout = BETA_BLOCKS[..2].iter().fold(layout, |l, name| l.vector(name, n));
                symmetric.extend(["Phi1_0", "Phi3_0"]);
            }
            if p1 {
                layout = PHI_BLOCKS.iter().fold(layout, |l, name| l.matrix(name, n, n));
                layout = BETA_BLOCKS[2..].iter().fold(layout, |l, name| l.vector(name, n));
                symmetric.extend(["Phi0", "Phi1", "Phi3"]);
            }
        }
    }
    let layout = Arc::new(layout);
    let mut terminal = FlatState::zeros(layout.clone());
    let x = terminal_lambda(p);
    let al = terminal_alpha(p);
    x.write(&layout, &mut terminal.values);
    al.write(&layout, &mut terminal.values);
    let a0 = p0_at(&c, &x, &al);
    let a1 = p1_at(&c, &x, &al);
    match form {
        Form::Monolithic => {
            if p0 {
                terminal.set_matrix("PP0", &a0.pp0_t);
                terminal.set_vector("SS0", &a0.ss0_t);
            }
            if p1 {
                terminal.set_matrix("PP", &a1.qq_f);
                terminal.set_vector("SS", &a1.ss_t);
            }
        }
        Form::Blocks => {
            if p0 {
                for (i, j, name) in [(0, 0, "Phi1_0"), (0, 1, "Phi2_0"), (1, 1, "Phi3_0")] {
                    terminal.set_matrix(name, &block(&a0.pp0_t, i, j, n, n));
                }
                terminal.set_vector("b0_0", &vec_block(&a0.ss0_t, 0, n));
                terminal.set_vector("b1_0", &vec_block(&a0.ss0_t, 1, n));
            }
            if p1 {
                for (i, j, name) in [
                    (0, 0, "Phi0"),
                    (0, 1, "Phia"),
                    (0, 2, "Phib"),
                    (1, 1, "Phi1"),
                    (1, 2, "Phi2"),
                    (2, 2, "Phi3"),
                ] {
                    terminal.set_matrix(name, &block(&a1.qq_f, i, j, n, n));
                }
                for (i, name) in ["b0", "b1", "b2"].iter().enumerate() {
                    terminal.set_vector(name, &vec_block(&a1.ss_t, i, n));
                }
            }
        }
    }
    let zero = DMatrix::zeros(n, n);
    let m0_hat = block_matrix(n, &[&[&c.dc.m0, &zero], &[&zero, &zero]]);
    let m_hat = block_matrix(n, &[&[&zero, &zero, &zero], &[&zero, &c.dc.m, &zero], &[&zero, &zero, &zero]]);
    Ok((
        TrackingSystem {
            coefs: c,
            layout,
            form,
            which,
            symmetric,
            symmetrize: opts.symmetrize,
            m0_hat,
            m_hat,
        },
        terminal,
    ))
}

fn run(p: &GameParams, form: Form, which: Which, grid: &TimeGrid, opts: &SolveOptions) -> Result<Trajectory> {
    let (sys, terminal) = build(p, form, which, opts)?;
    match integrate_backward(&sys, &terminal, grid, &opts.tol)? {
        IntegrationOutcome::Solved { trajectory, .. } => Ok(trajectory),
        IntegrationOutcome::Escaped(e) => Err(Error::Contract(format!(
            "tracking problem escaped in ({}, {}); the limit system has no solution on this horizon",
            e.t_lo, e.t_hi
        ))),
    }
}

/// `(PP0, SS0)` of (P0) along with `(PP, SS)` of (P1), in block form.
#[derive(Clone, Debug)]
pub struct BlockTrackingSolution {
    pub n: usize,
    /// Holds `PP0`, `SS0`, `PP`, `SS`.
    pub trajectory: Trajectory,
}

impl BlockTrackingSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn pp0(&self, k: usize) -> DMatrix<f64> {
        self.trajectory.matrix("PP0", k)
    }

    pub fn ss0(&self, k: usize) -> DVector<f64> {
        self.trajectory.vector("SS0", k)
    }

    pub fn pp(&self, k: usize) -> DMatrix<f64> {
        self.trajectory.matrix("PP", k)
    }

    pub fn ss(&self, k: usize) -> DVector<f64> {
        self.trajectory.vector("SS", k)
    }

    /// A named `n×n` Φ block (`Phi1_0`, `Phi2_0`, `Phi3_0`, `Phi0`, `Phia`,
    /// `Phib`, `Phi1`, `Phi2`, `Phi3`).
    pub fn phi(&self, name: &str, k: usize) -> DMatrix<f64> {
        let n = self.n;
        match name {
            "Phi1_0" => block(&self.pp0(k), 0, 0, n, n),
            "Phi2_0" => block(&self.pp0(k), 0, 1, n, n),
            "Phi3_0" => block(&self.pp0(k), 1, 1, n, n),
            "Phi0" => block(&self.pp(k), 0, 0, n, n),
            "Phia" => block(&self.pp(k), 0, 1, n, n),
            "Phib" => block(&self.pp(k), 0, 2, n, n),
            "Phi1" => block(&self.pp(k), 1, 1, n, n),
            "Phi2" => block(&self.pp(k), 1, 2, n, n),
            "Phi3" => block(&self.pp(k), 2, 2, n, n),
            other => panic!("no block named {other}"),
        }
    }

    /// A named β offset (`b0_0`, `b1_0`, `b0`, `b1`, `b2`).
    pub fn beta(&self, name: &str, k: usize) -> DVector<f64> {
        let n = self.n;
        match name {
            "b0_0" => vec_block(&self.ss0(k), 0, n),
            "b1_0" => vec_block(&self.ss0(k), 1, n),
            "b0" => vec_block(&self.ss(k), 0, n),
            "b1" => vec_block(&self.ss(k), 1, n),
            "b2" => vec_block(&self.ss(k), 2, n),
            other => panic!("no offset named {other}"),
        }
    }
}

/// Solve (P0) alone; the result has `PP0` and `SS0`.
pub fn solve_p0(p: &GameParams, grid: &TimeGrid, opts: &SolveOptions) -> Result<Trajectory> {
    Ok(run(p, Form::Monolithic, Which::P0, grid, opts)?.select(&["PP0", "SS0"]))
}

/// Solve (P1) alone; the result has `PP` and `SS`.
pub fn solve_p1(p: &GameParams, grid: &TimeGrid, opts: &SolveOptions) -> Result<Trajectory> {
    Ok(run(p, Form::Monolithic, Which::P1, grid, opts)?.select(&["PP", "SS"]))
}

/// Both problems through the full `2n`/`3n` Riccati equations.
pub fn solve_tracking(p: &GameParams, grid: &TimeGrid, opts: &SolveOptions) -> Result<BlockTrackingSolution> {
    Ok(BlockTrackingSolution {
        n: p.n,
        trajectory: run(p, Form::Monolithic, Which::Both, grid, opts)?.select(&["PP0", "SS0", "PP", "SS"]),
    })
}

/// Both problems through the per-block Φ and β equations, reassembled into
/// full matrices.
pub fn solve_tracking_blocks(p: &GameParams, grid: &TimeGrid, opts: &SolveOptions) -> Result<BlockTrackingSolution> {
    let n = p.n;
    let traj = run(p, Form::Blocks, Which::Both, grid, opts)?;
    let layout = Arc::new(
        Layout::new()
            .matrix("PP0", 2 * n, 2 * n)
            .vector("SS0", 2 * n)
            .matrix("PP", 3 * n, 3 * n)
            .vector("SS", 3 * n),
    );
    let mut data = Vec::with_capacity(grid.len() * layout.len());
    for k in 0..grid.len() {
        let m = |name| traj.matrix(name, k);
        let v = |name| traj.vector(name, k);
        let (f1, f2, f3) = (m("Phi1_0"), m("Phi2_0"), m("Phi3_0"));
        let pp0 = block_matrix(n, &[&[&f1, &f2], &[&f2.transpose(), &f3]]);
        let (g0, ga, gb, g1, g2, g3) = (m("Phi0"), m("Phia"), m("Phib"), m("Phi1"), m("Phi2"), m("Phi3"));
        let pp = block_matrix(
            n,
            &[
                &[&g0, &ga, &gb],
                &[&ga.transpose(), &g1, &g2],
                &[&gb.transpose(), &g2.transpose(), &g3],
            ],
        );
        let mut state = vec![0.0; layout.len()];
        layout.write_matrix(&mut state, "PP0", &pp0);
        layout.write_vector(&mut state, "SS0", &stack_vec(&[&v("b0_0"), &v("b1_0")]));
        layout.write_matrix(&mut state, "PP", &pp);
        layout.write_vector(&mut state, "SS", &stack_vec(&[&v("b0"), &v("b1"), &v("b2")]));
        data.extend(state);
    }
    Ok(BlockTrackingSolution {
        n,
        trajectory: Trajectory::from_parts(*grid, layout, data),
    })
}

/// Sup-norm residuals between the tracking solution and the limit system.
#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub pass: bool,
    pub max_residual: f64,
    pub threshold: f64,
    /// Keyed by the limit block each piece is compared with.
    pub residuals: BTreeMap<String, f64>,
    pub rtol: f64,
    pub atol: f64,
}

/// Compare `PP0 = [Λ1⁰ Λ2⁰; Λ2⁰ᵀ Λ3⁰]`, `SS0 = [α0⁰; α1⁰]`,
/// `PP = [Λ0 Λa Λb; Λaᵀ Λ1 Λ2; Λbᵀ Λ2ᵀ Λ3]`, `SS = [α0; α1; α2]`.
pub fn verify_consistency(
    l: &LimitSolution,
    bt: &BlockTrackingSolution,
    opts: &SolveOptions,
) -> Result<ConsistencyReport> {
    if l.riccati.grid() != bt.grid() || l.offsets.grid() != bt.grid() {
        return Err(Error::GridMismatch(
            "tracking and limit solutions are on different grids".into(),
        ));
    }
    let n = bt.n;
    let mut residuals: BTreeMap<String, f64> = LIMIT_BLOCKS
        .iter()
        .chain(&LIMIT_OFFSETS)
        .map(|s| (s.to_string(), 0.0))
        .collect();
    let mut bump = |name: &str, v: f64| {
        let e = residuals.get_mut(name).expect("known block");
        *e = e.max(v);
    };
    let p0_map = [(0, 0, "L1_0", false), (0, 1, "L2_0", false), (1, 0, "L2_0", true), (1, 1, "L3_0", false)];
    let p1_map = [
        (0, 0, "L0", false),
        (0, 1, "La", false),
        (0, 2, "Lb", false),
        (1, 0, "La", true),
        (1, 1, "L1", false),
        (1, 2, "L2", false),
        (2, 0, "Lb", true),
        (2, 1, "L2", true),
        (2, 2, "L3", false),
    ];
    for k in 0..bt.grid().len() {
        let (pp0, pp) = (bt.pp0(k), bt.pp(k));
        for (big, map) in [(&pp0, &p0_map[..]), (&pp, &p1_map[..])] {
            for &(i, j, name, transpose) in map {
                let lam = l.riccati.block(name, k);
                let lam = if transpose { lam.transpose() } else { lam };
                bump(name, max_abs_diff(&block(big, i, j, n, n), &lam));
            }
        }
        let (ss0, ss) = (bt.ss0(k), bt.ss(k));
        for (big, names) in [(&ss0, &LIMIT_OFFSETS[..2]), (&ss, &LIMIT_OFFSETS[2..])] {
            for (i, name) in names.iter().enumerate() {
                bump(name, (vec_block(big, i, n) - l.offsets.alpha(name, k)).amax());
            }
        }
    }
    let max_residual = residuals.values().copied().fold(0.0, f64::max);
    Ok(ConsistencyReport {
        pass: max_residual < CONSISTENCY_THRESHOLD,
        max_residual,
        threshold: CONSISTENCY_THRESHOLD,
        residuals,
        rtol: opts.tol.rtol,
        atol: opts.tol.atol,
    })
}

/// Feedback schedules of `u0*` and `u1*`, in the same form as the limit
/// strategy gains.
pub fn optimal_laws(p: &GameParams, bt: &BlockTrackingSolution) -> Result<LimitGains> {
    let dc = p.derive_coeffs()?;
    let w0 = &dc.r0_inv * p.b0.transpose();
    let w = &dc.r_inv * p.b.transpose();
    let grid = *bt.grid();
    let len = grid.len();
    let mut out = LimitGains {
        grid,
        k00: Vec::with_capacity(len),
        k0bar: Vec::with_capacity(len),
        k0: Vec::with_capacity(len),
        ki0: Vec::with_capacity(len),
        kii: Vec::with_capacity(len),
        kibar: Vec::with_capacity(len),
        ki: Vec::with_capacity(len),
    };
    for k in 0..len {
        out.k00.push(&w0 * bt.phi("Phi1_0", k));
        out.k0bar.push(&w0 * bt.phi("Phi2_0", k));
        out.k0.push(&w0 * bt.beta("b0_0", k));
        out.ki0.push(&w * bt.phi("Phia", k).transpose());
        out.kii.push(&w * bt.phi("Phi1", k));
        out.kibar.push(&w * bt.phi("Phi2", k));
        out.ki.push(&w * bt.beta("b1", k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::solve_limit_full;

    #[test]
    fn example1_terminal_drift_block() {
        let p = GameParams::example1();
        let grid = TimeGrid::new(p.horizon, 121).unwrap();
        let l = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
        let asm = assemble_p0(&p, &l).unwrap();
        let last = asm.last().unwrap();
        assert!((last.aa0[(1, 1)] - 0.7).abs() < 1e-15);
        let asm1 = assemble_p1(&p, &l).unwrap();
        assert_eq!(asm1[0].aa[(1, 1)], p.a[(0, 0)]);
    }

    #[test]
    fn zero_limit_gives_plain_drift() {
        let mut p = GameParams::zeros(2, 1, 1, 1.0);
        p.a0 = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        p.f0 = DMatrix::identity(2, 2) * 0.5;
        p.g = DMatrix::identity(2, 2) * -0.2;
        p.a = DMatrix::identity(2, 2) * 0.7;
        p.f = DMatrix::identity(2, 2) * 0.05;
        let grid = TimeGrid::new(1.0, 11).unwrap();
        let l = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
        let asm = assemble_p0(&p, &l).unwrap();
        let expect = block_matrix(2, &[&[&p.a0, &p.f0], &[&p.g, &(&p.a + &p.f)]]);
        assert_eq!(asm[3].aa0, expect);
    }
}
