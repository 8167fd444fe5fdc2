//! Symmetry-reduced finite-N system.
//!
//! `P0` and `P1` are described by block classes. For `P0` the classes are
//! `{major, minor}` with blocks `Pi1_0`, `Pi2_0`, `Pi3_0`. For `P1` they are
//! `{major, self, other}` with blocks
//!
//! ```text
//! (major, major) Pi0   (major, self) Pia   (major, other) Pib
//! (self, self)   Pi1   (self, other) Pi2   (other, other) Pi3
//! ```
//!
//! and transposes below the diagonal. The right-hand sides are the dense
//! Riccati equations evaluated on one representative block of each class,
//! with the other players' matrices `Pk` obtained from `P1` by the block
//! permutation that swaps player 1 and player k.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::GameParams;
use crate::ode::{
    integrate_backward, FlatState, IntegrationOutcome, Layout, OdeSystem, Outcome, SolveOptions,
    TimeGrid, Trajectory,
};

pub const RICCATI_BLOCKS: [&str; 9] = [
    "Pi1_0", "Pi2_0", "Pi3_0", "Pi0", "Pi1", "Pi2", "Pi3", "Pia", "Pib",
];
pub const SYMMETRIC_BLOCKS: [&str; 5] = ["Pi1_0", "Pi3_0", "Pi0", "Pi1", "Pi3"];
pub const OFFSET_BLOCKS: [&str; 5] = ["th0_0", "th1_0", "th0", "th1", "th2"];
pub const COST_BLOCKS: [&str; 2] = ["r0", "r1"];

/// The nine Π blocks on a grid.
#[derive(Clone, Debug)]
pub struct StructuredRiccati {
    pub n_players: usize,
    pub trajectory: Trajectory,
}

/// θ offsets and r constants on a grid.
#[derive(Clone, Debug)]
pub struct StructuredOffsets {
    pub n_players: usize,
    pub trajectory: Trajectory,
}

impl StructuredRiccati {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn block(&self, name: &str, k: usize) -> DMatrix<f64> {
        self.trajectory.matrix(name, k)
    }
}

impl StructuredOffsets {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn theta(&self, name: &str, k: usize) -> DVector<f64> {
        self.trajectory.vector(name, k)
    }

    pub fn r(&self, name: &str, k: usize) -> f64 {
        self.trajectory.scalar(name, k)
    }
}

struct Coefs {
    n: usize,
    players: f64,
    a0: DMatrix<f64>,
    a: DMatrix<f64>,
    f0: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    m0: DMatrix<f64>,
    m: DMatrix<f64>,
    q0: DMatrix<f64>,
    q: DMatrix<f64>,
    gamma0: DMatrix<f64>,
    gamma1: DMatrix<f64>,
    gamma2: DMatrix<f64>,
    eta0: DVector<f64>,
    eta: DVector<f64>,
    d0: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Coefs {
    fn new(p: &GameParams, n_players: usize) -> Result<Self> {
        let dc = p.derive_coeffs()?;
        Ok(Self {
            n: p.n,
            players: n_players as f64,
            a0: p.a0.clone(),
            a: p.a.clone(),
            f0: p.f0.clone(),
            f: p.f.clone(),
            g: p.g.clone(),
            m0: dc.m0,
            m: dc.m,
            q0: p.q0.clone(),
            q: p.q.clone(),
            gamma0: p.gamma0.clone(),
            gamma1: p.gamma1.clone(),
            gamma2: p.gamma2.clone(),
            eta0: p.eta0.clone(),
            eta: p.eta.clone(),
            d0: p.d0.clone(),
            d: p.d.clone(),
        })
    }

    /// Row weight of the major player's cost on class `r`.
    fn k0(&self, gamma0: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
        if r == 0 {
            DMatrix::identity(self.n, self.n)
        } else {
            -gamma0 / self.players
        }
    }

    /// Row weight of player 1's cost on class `r`.
    fn k1(&self, gamma1: &DMatrix<f64>, gamma2: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
        match r {
            0 => -gamma1,
            1 => DMatrix::identity(self.n, self.n) - gamma2 / self.players,
            _ => -gamma2 / self.players,
        }
    }
}

/// Representative blocks read from a flat state.
struct Blocks {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    p0: DMatrix<f64>,
    pa: DMatrix<f64>,
    pb: DMatrix<f64>,
    p1: DMatrix<f64>,
    p2: DMatrix<f64>,
    p3: DMatrix<f64>,
}

impl Blocks {
    fn read(layout: &Layout, y: &[f64]) -> Self {
        let r = |name| layout.read_matrix(y, name);
        Self {
            a: r("Pi1_0"),
            b: r("Pi2_0"),
            c: r("Pi3_0"),
            p0: r("Pi0"),
            pa: r("Pia"),
            pb: r("Pib"),
            p1: r("Pi1"),
            p2: r("Pi2"),
            p3: r("Pi3"),
        }
    }

    fn write(&self, layout: &Layout, dy: &mut [f64]) {
        for (name, m) in [
            ("Pi1_0", &self.a),
            ("Pi2_0", &self.b),
            ("Pi3_0", &self.c),
            ("Pi0", &self.p0),
            ("Pia", &self.pa),
            ("Pib", &self.pb),
            ("Pi1", &self.p1),
            ("Pi2", &self.p2),
            ("Pi3", &self.p3),
        ] {
            layout.write_matrix(dy, name, m);
        }
    }

    /// `P0` block between classes; 0 is the major player, anything else a
    /// minor player.
    fn p0c(&self, r: usize, s: usize) -> DMatrix<f64> {
        match (r.min(1), s.min(1)) {
            (0, 0) => self.a.clone(),
            (0, _) => self.b.clone(),
            (_, 0) => self.b.transpose(),
            _ => self.c.clone(),
        }
    }

    /// `P1` block between classes 0 (major), 1 (self), 2 (other minor).
    fn p1c(&self, r: usize, s: usize) -> DMatrix<f64> {
        match (r, s) {
            (0, 0) => self.p0.clone(),
            (0, 1) => self.pa.clone(),
            (0, _) => self.pb.clone(),
            (1, 0) => self.pa.transpose(),
            (1, 1) => self.p1.clone(),
            (1, _) => self.p2.clone(),
            (_, 0) => self.pb.transpose(),
            (_, 1) => self.p2.transpose(),
            _ => self.p3.clone(),
        }
    }
}

fn terminal_blocks(c: &Coefs, p: &GameParams) -> Blocks {
    let k0 = |r| c.k0(&p.gamma0f, r);
    let p0 = |r, s| k0(r).transpose() * &p.q0f * k0(s);
    let k1 = |r| c.k1(&p.gamma1f, &p.gamma2f, r);
    let p1 = |r, s| k1(r).transpose() * &p.qf * k1(s);
    Blocks {
        a: p0(0, 0),
        b: p0(0, 1),
        c: p0(1, 1),
        p0: p1(0, 0),
        pa: p1(0, 1),
        pb: p1(0, 2),
        p1: p1(1, 1),
        p2: p1(1, 2),
        p3: p1(2, 2),
    }
}

fn riccati_rhs(c: &Coefs, x: &Blocks) -> Blocks {
    let nn = c.players;
    let p0c = |r, s| x.p0c(r, s);
    let p1c = |r, s| x.p1c(r, s);

    // Major player.
    let tau = |r| p0c(r, 1) * nn;
    let y0 = |r: usize, s: usize| {
        if s == 0 {
            p0c(r, 0) * &c.a0 + tau(r) * &c.g
        } else {
            p0c(r, 0) * &c.f0 / nn + p0c(r, 1) * &c.a + tau(r) * &c.f / nn
        }
    };
    let others = &x.p1 + &x.p2 * (nn - 1.0);
    let z0 = |r: usize, s: usize| {
        if s == 0 {
            tau(r) * &c.m * x.pa.transpose()
        } else {
            p0c(r, 1) * &c.m * &others
        }
    };
    let d0 = |r: usize, s: usize| {
        -(y0(r, s) + y0(s, r).transpose()) + p0c(r, 0) * &c.m0 * p0c(0, s) + z0(r, s)
            + z0(s, r).transpose()
            - c.k0(&c.gamma0, r).transpose() * &c.q0 * c.k0(&c.gamma0, s)
    };

    // Player 1.
    let sigma = |r| p1c(r, 1) + p1c(r, 2) * (nn - 1.0);
    let y1 = |r: usize, s: usize| {
        if s == 0 {
            p1c(r, 0) * &c.a0 + sigma(r) * &c.g
        } else {
            p1c(r, 0) * &c.f0 / nn + p1c(r, s) * &c.a + sigma(r) * &c.f / nn
        }
    };
    let z1 = |r: usize, s: usize| {
        if s == 0 {
            sigma(r) * &c.m * x.pa.transpose()
        } else {
            p1c(r, s) * &c.m * &x.p1 + (sigma(r) - p1c(r, s)) * &c.m * &x.p2
        }
    };
    let k1 = |r| c.k1(&c.gamma1, &c.gamma2, r);
    let d1 = |r: usize, s: usize| {
        -(y1(r, s) + y1(s, r).transpose()) - p1c(r, 1) * &c.m * p1c(1, s)
            + p1c(r, 0) * &c.m0 * p0c(0, s)
            + (p1c(s, 0) * &c.m0 * p0c(0, r)).transpose()
            + z1(r, s)
            + z1(s, r).transpose()
            - k1(r).transpose() * &c.q * k1(s)
    };

    Blocks {
        a: d0(0, 0),
        b: d0(0, 1),
        c: d0(1, 1),
        p0: d1(0, 0),
        pa: d1(0, 1),
        pb: d1(0, 2),
        p1: d1(1, 1),
        p2: d1(1, 2),
        p3: d1(2, 2),
    }
}

/// Offsets `S0 = (u0, u1, …, u1)`, `S1 = (v0, v1, v2, …, v2)`.
struct Offsets {
    u0: DVector<f64>,
    u1: DVector<f64>,
    v0: DVector<f64>,
    v1: DVector<f64>,
    v2: DVector<f64>,
}

impl Offsets {
    fn read(layout: &Layout, y: &[f64]) -> Self {
        let r = |name| layout.read_vector(y, name);
        Self {
            u0: r("th0_0"),
            u1: r("th1_0"),
            v0: r("th0"),
            v1: r("th1"),
            v2: r("th2"),
        }
    }
}

fn terminal_offsets(c: &Coefs, p: &GameParams) -> Offsets {
    let w0 = &p.q0f * &p.eta0f;
    let w = &p.qf * &p.etaf;
    let k0 = |r| c.k0(&p.gamma0f, r);
    let k1 = |r| c.k1(&p.gamma1f, &p.gamma2f, r);
    Offsets {
        u0: -k0(0).transpose() * &w0,
        u1: -k0(1).transpose() * &w0,
        v0: -k1(0).transpose() * &w,
        v1: -k1(1).transpose() * &w,
        v2: -k1(2).transpose() * &w,
    }
}

/// `(Âᵀ S)` on class `r` for an offset with major entry `s0`, class entry
/// `sr` and minor sum `total`.
fn ahat_t(c: &Coefs, r: usize, s0: &DVector<f64>, sr: &DVector<f64>, total: &DVector<f64>) -> DVector<f64> {
    if r == 0 {
        c.a0.transpose() * s0 + c.g.transpose() * total
    } else {
        c.f0.transpose() * s0 / c.players + c.a.transpose() * sr + c.f.transpose() * total / c.players
    }
}

fn offsets_rhs(c: &Coefs, x: &Blocks, o: &Offsets) -> Offsets {
    let nn = c.players;
    let p0c = |r, s| x.p0c(r, s);
    let p1c = |r, s| x.p1c(r, s);

    let total0 = &o.u1 * nn;
    let u_class = |r: usize| if r == 0 { &o.u0 } else { &o.u1 };
    let rho = |r: usize| {
        if r == 0 {
            &x.pa * nn
        } else {
            &x.p1 + x.p2.transpose() * (nn - 1.0)
        }
    };
    let q0eta0 = &c.q0 * &c.eta0;
    let ds0 = |r: usize| {
        -ahat_t(c, r, &o.u0, u_class(r), &total0)
            + p0c(r, 0) * &c.m0 * &o.u0
            + rho(r) * &c.m * &o.u1
            + p0c(r, 1) * &c.m * &o.v1 * nn
            + c.k0(&c.gamma0, r).transpose() * &q0eta0
    };

    let total1 = &o.v1 + &o.v2 * (nn - 1.0);
    let v_class = |r: usize| match r {
        0 => &o.v0,
        1 => &o.v1,
        _ => &o.v2,
    };
    let sigma = |r| p1c(r, 1) + p1c(r, 2) * (nn - 1.0);
    let cross = |r: usize| match r {
        0 => &x.pa * &c.m * &total1,
        1 => &x.p1 * &c.m * &o.v1 + x.p2.transpose() * &c.m * &o.v2 * (nn - 1.0),
        _ => {
            x.p2.transpose() * &c.m * &o.v1
                + &x.p1 * &c.m * &o.v2
                + x.p2.transpose() * &c.m * &o.v2 * (nn - 2.0)
        }
    };
    let qeta = &c.q * &c.eta;
    let ds1 = |r: usize| {
        -ahat_t(c, r, &o.v0, v_class(r), &total1)
            + p0c(r, 0) * &c.m0 * &o.v0
            + p1c(r, 0) * &c.m0 * &o.u0
            - p1c(r, 1) * &c.m * &o.v1
            + cross(r)
            + sigma(r) * &c.m * &o.v1
            + c.k1(&c.gamma1, &c.gamma2, r).transpose() * &qeta
    };

    Offsets {
        u0: ds0(0),
        u1: ds0(1),
        v0: ds1(0),
        v1: ds1(1),
        v2: ds1(2),
    }
}

fn trace_quad(d: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (d.transpose() * p * d).trace()
}

fn costs_rhs(c: &Coefs, x: &Blocks, o: &Offsets) -> (f64, f64) {
    let nn = c.players;
    let dr0 = o.u0.dot(&(&c.m0 * &o.u0)) + 2.0 * nn * o.u1.dot(&(&c.m * &o.v1))
        - c.eta0.dot(&(&c.q0 * &c.eta0))
        - trace_quad(&c.d0, &x.a)
        - nn * trace_quad(&c.d, &x.c);
    let dr1 = 2.0 * o.v0.dot(&(&c.m0 * &o.u0))
        + o.v1.dot(&(&c.m * &o.v1))
        + 2.0 * (nn - 1.0) * o.v2.dot(&(&c.m * &o.v1))
        - c.eta.dot(&(&c.q * &c.eta))
        - trace_quad(&c.d0, &x.p0)
        - trace_quad(&c.d, &x.p1)
        - (nn - 1.0) * trace_quad(&c.d, &x.p3);
    (dr0, dr1)
}

struct StructuredSystem {
    coefs: Coefs,
    layout: Arc<Layout>,
    with_offsets: bool,
    symmetrize: bool,
}

impl OdeSystem for StructuredSystem {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let x = Blocks::read(&self.layout, y);
        riccati_rhs(&self.coefs, &x).write(&self.layout, dy);
        if self.with_offsets {
            let o = Offsets::read(&self.layout, y);
            let d = offsets_rhs(&self.coefs, &x, &o);
            for (name, v) in [
                ("th0_0", &d.u0),
                ("th1_0", &d.u1),
                ("th0", &d.v0),
                ("th1", &d.v1),
                ("th2", &d.v2),
            ] {
                self.layout.write_vector(dy, name, v);
            }
            let (dr0, dr1) = costs_rhs(&self.coefs, &x, &o);
            self.layout.write_scalar(dy, "r0", dr0);
            self.layout.write_scalar(dy, "r1", dr1);
        }
    }

    fn project(&self, y: &mut [f64]) -> bool {
        if self.symmetrize {
            self.layout.symmetrize_blocks(y, &SYMMETRIC_BLOCKS);
        }
        self.symmetrize
    }
}

fn riccati_layout(n: usize) -> Layout {
    RICCATI_BLOCKS
        .iter()
        .fold(Layout::new(), |l, name| l.matrix(name, n, n))
}

fn build(p: &GameParams, n_players: usize, with_offsets: bool, opts: &SolveOptions) -> Result<(StructuredSystem, FlatState)> {
    if n_players < 2 {
        return Err(Error::InvalidInput(format!(
            "the finite game needs N >= 2 minor players, got {n_players}"
        )));
    }
    let coefs = Coefs::new(p, n_players)?;
    let mut layout = riccati_layout(p.n);
    if with_offsets {
        layout = OFFSET_BLOCKS
            .iter()
            .fold(layout, |l, name| l.vector(name, p.n))
            .scalar("r0")
            .scalar("r1");
    }
    let layout = Arc::new(layout);
    let mut terminal = FlatState::zeros(layout.clone());
    terminal_blocks(&coefs, p).write(&layout, &mut terminal.values);
    if with_offsets {
        let o = terminal_offsets(&coefs, p);
        for (name, v) in [
            ("th0_0", &o.u0),
            ("th1_0", &o.u1),
            ("th0", &o.v0),
            ("th1", &o.v1),
            ("th2", &o.v2),
        ] {
            terminal.set_vector(name, v);
        }
        terminal.set_scalar("r0", p.eta0f.dot(&(&p.q0f * &p.eta0f)));
        terminal.set_scalar("r1", p.etaf.dot(&(&p.qf * &p.etaf)));
    }
    let sys = StructuredSystem {
        coefs,
        layout,
        with_offsets,
        symmetrize: opts.symmetrize,
    };
    Ok((sys, terminal))
}

/// Solve the nine-block Riccati system for `N` minor players.
pub fn solve_structured(
    p: &GameParams,
    n_players: usize,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<Outcome<StructuredRiccati>> {
    let (sys, terminal) = build(p, n_players, false, opts)?;
    Ok(match integrate_backward(&sys, &terminal, grid, &opts.tol)? {
        IntegrationOutcome::Solved { trajectory, .. } => Outcome::Solved(StructuredRiccati {
            n_players,
            trajectory,
        }),
        IntegrationOutcome::Escaped(e) => Outcome::Escaped(e),
    })
}

/// Riccati blocks, θ offsets and r constants integrated as one system.
pub fn solve_structured_full(
    p: &GameParams,
    n_players: usize,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<Outcome<(StructuredRiccati, StructuredOffsets)>> {
    let (sys, terminal) = build(p, n_players, true, opts)?;
    Ok(match integrate_backward(&sys, &terminal, grid, &opts.tol)? {
        IntegrationOutcome::Solved { trajectory, .. } => {
            let riccati = trajectory.select(&RICCATI_BLOCKS);
            let mut names: Vec<&str> = OFFSET_BLOCKS.to_vec();
            names.extend(COST_BLOCKS);
            let offsets = trajectory.select(&names);
            Outcome::Solved((
                StructuredRiccati {
                    n_players,
                    trajectory: riccati,
                },
                StructuredOffsets {
                    n_players,
                    trajectory: offsets,
                },
            ))
        }
        IntegrationOutcome::Escaped(e) => Outcome::Escaped(e),
    })
}

/// θ and r along an already solved Riccati trajectory.
///
/// The offsets are linear along `s`, but are integrated together with the
/// Riccati blocks so that no interpolation of `s` enters the result.
pub fn solve_structured_offsets(
    p: &GameParams,
    s: &StructuredRiccati,
    opts: &SolveOptions,
) -> Result<StructuredOffsets> {
    match solve_structured_full(p, s.n_players, s.grid(), opts)? {
        Outcome::Solved((_, offsets)) => Ok(offsets),
        Outcome::Escaped(e) => Err(Error::Contract(format!(
            "Riccati blocks for N = {} escape in ({}, {}); offsets need a solved system",
            s.n_players, e.t_lo, e.t_hi
        ))),
    }
}
