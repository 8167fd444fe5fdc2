//! The infinite-population system.
//!
//! Nine `n×n` blocks `Λ`, five offsets `α` and two cost constants `χ`. The
//! game is asymptotically solvable exactly when the `Λ` system has a
//! solution on the whole horizon, so [`solve_limit_riccati`] doubles as the
//! solvability test.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DerivedCoeffs, GameParams, InitialLaw};
use crate::ode::{
    integrate_backward, FlatState, IntegrationOutcome, Layout, OdeSystem, Outcome, SolveOptions,
    TimeGrid, Trajectory,
};

pub const LIMIT_BLOCKS: [&str; 9] = ["L1_0", "L2_0", "L3_0", "L0", "L1", "L2", "L3", "La", "Lb"];
pub const LIMIT_SYMMETRIC: [&str; 5] = ["L1_0", "L3_0", "L0", "L1", "L3"];
pub const LIMIT_OFFSETS: [&str; 5] = ["a0_0", "a1_0", "a0", "a1", "a2"];
pub const LIMIT_COSTS: [&str; 2] = ["chi0", "chi"];

#[derive(Clone, Debug)]
pub struct LimitRiccati {
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug)]
pub struct LimitOffsets {
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug)]
pub struct LimitCosts {
    pub trajectory: Trajectory,
}

/// Riccati blocks, offsets and cost constants on one grid.
#[derive(Clone, Debug)]
pub struct LimitSolution {
    pub riccati: LimitRiccati,
    pub offsets: LimitOffsets,
    pub costs: LimitCosts,
}

impl LimitRiccati {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn block(&self, name: &str, k: usize) -> DMatrix<f64> {
        self.trajectory.matrix(name, k)
    }
}

impl LimitOffsets {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn alpha(&self, name: &str, k: usize) -> DVector<f64> {
        self.trajectory.vector(name, k)
    }
}

impl LimitCosts {
    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn chi(&self, name: &str, k: usize) -> f64 {
        self.trajectory.scalar(name, k)
    }
}

/// Outcome of the solvability test, in the form written to disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolvabilityVerdict {
    pub solvable: bool,
    pub escape_lo: Option<f64>,
    pub escape_hi: Option<f64>,
    /// Largest l₁ norm of the Λ state seen during integration.
    pub sup_norm: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl SolvabilityVerdict {
    pub fn escape_interval(&self) -> Option<(f64, f64)> {
        self.escape_lo.zip(self.escape_hi)
    }
}

pub(crate) struct Coefs {
    pub(crate) p: GameParams,
    pub(crate) dc: DerivedCoeffs,
}

pub(crate) struct Lambda {
    pub(crate) l10: DMatrix<f64>,
    pub(crate) l20: DMatrix<f64>,
    pub(crate) l30: DMatrix<f64>,
    pub(crate) l0: DMatrix<f64>,
    pub(crate) l1: DMatrix<f64>,
    pub(crate) l2: DMatrix<f64>,
    pub(crate) l3: DMatrix<f64>,
    pub(crate) la: DMatrix<f64>,
    pub(crate) lb: DMatrix<f64>,
}

impl Lambda {
    pub(crate) fn read(layout: &Layout, y: &[f64]) -> Self {
        let r = |name| layout.read_matrix(y, name);
        Self {
            l10: r("L1_0"),
            l20: r("L2_0"),
            l30: r("L3_0"),
            l0: r("L0"),
            l1: r("L1"),
            l2: r("L2"),
            l3: r("L3"),
            la: r("La"),
            lb: r("Lb"),
        }
    }

    pub(crate) fn write(&self, layout: &Layout, dy: &mut [f64]) {
        for (name, m) in [
            ("L1_0", &self.l10),
            ("L2_0", &self.l20),
            ("L3_0", &self.l30),
            ("L0", &self.l0),
            ("L1", &self.l1),
            ("L2", &self.l2),
            ("L3", &self.l3),
            ("La", &self.la),
            ("Lb", &self.lb),
        ] {
            layout.write_matrix(dy, name, m);
        }
    }
}

pub(crate) fn terminal_lambda(p: &GameParams) -> Lambda {
    Lambda {
        l10: p.q0f.clone(),
        l20: -&p.q0f * &p.gamma0f,
        l30: p.gamma0f.transpose() * &p.q0f * &p.gamma0f,
        l0: p.gamma1f.transpose() * &p.qf * &p.gamma1f,
        l1: p.qf.clone(),
        l2: -&p.qf * &p.gamma2f,
        l3: p.gamma2f.transpose() * &p.qf * &p.gamma2f,
        la: -p.gamma1f.transpose() * &p.qf,
        lb: p.gamma1f.transpose() * &p.qf * &p.gamma2f,
    }
}

pub(crate) fn lambda_rhs(c: &Coefs, x: &Lambda) -> Lambda {
    let p = &c.p;
    let (m0, m) = (&c.dc.m0, &c.dc.m);
    let (a0, a, f0, f, g) = (&p.a0, &p.a, &p.f0, &p.f, &p.g);
    let gt = g.transpose();
    let l_sum = &x.l1 + &x.l2;
    let l_sum_t = &x.l1 + x.l2.transpose();
    // M(Λ1+Λ2) − A − F and its transpose counterpart.
    let drift = m * &l_sum - a - f;
    let drift_t = &l_sum_t * m - a.transpose() - f.transpose();
    let lam_m_g = &x.la * m - &gt;
    let l10_m0_a0 = &x.l10 * m0 - a0.transpose();

    let l10 = &x.l10 * m0 * &x.l10 - (&x.l10 * a0 + a0.transpose() * &x.l10)
        + &x.l20 * (m * x.la.transpose() - g)
        + &lam_m_g * x.l20.transpose()
        - &p.q0;
    let l20 = &l10_m0_a0 * &x.l20 + &x.l20 * &drift - &x.l10 * f0 + &lam_m_g * &x.l30 + &p.q0 * &p.gamma0;
    let l30 = x.l20.transpose() * m0 * &x.l20 - x.l20.transpose() * f0 - f0.transpose() * &x.l20
        + &x.l30 * &drift
        + &drift_t * &x.l30
        - p.gamma0.transpose() * &p.q0 * &p.gamma0;
    let l0 = &x.la * m * x.la.transpose() - &x.lb * g - &gt * x.lb.transpose()
        + &x.l0 * (m0 * &x.l10 - a0)
        + &l10_m0_a0 * &x.l0
        - &x.la * (g - m * x.lb.transpose())
        - (&gt - &x.lb * m) * x.la.transpose()
        - p.gamma1.transpose() * &p.q * &p.gamma1;
    let l1 = &x.l1 * m * &x.l1 - &x.l1 * a - a.transpose() * &x.l1 - &p.q;
    let l2 = x.la.transpose() * (m0 * &x.l20 - f0) - &x.l1 * f + (&x.l1 * m - a.transpose()) * &x.l2
        + &x.l2 * &drift
        + &p.q * &p.gamma2;
    let l3 = x.lb.transpose() * m0 * &x.l20 + x.l20.transpose() * m0 * &x.lb + x.l2.transpose() * m * &x.l2
        - x.lb.transpose() * f0
        - f0.transpose() * &x.lb
        - x.l2.transpose() * f
        - f.transpose() * &x.l2
        + &x.l3 * &drift
        + &drift_t * &x.l3
        - p.gamma2.transpose() * &p.q * &p.gamma2;
    let la = &l10_m0_a0 * &x.la + &x.la * (m * &x.l1 - a) - &gt * &x.l1 + &lam_m_g * x.l2.transpose()
        + p.gamma1.transpose() * &p.q;
    let lb = &x.l0 * m0 * &x.l20 + &lam_m_g * (&x.l2 + &x.l3) - &x.l0 * f0 - &x.la * f + &x.lb * &drift
        + &l10_m0_a0 * &x.lb
        - p.gamma1.transpose() * &p.q * &p.gamma2;
    Lambda {
        l10,
        l20,
        l30,
        l0,
        l1,
        l2,
        l3,
        la,
        lb,
    }
}

pub(crate) struct Alpha {
    pub(crate) a00: DVector<f64>,
    pub(crate) a10: DVector<f64>,
    pub(crate) a0: DVector<f64>,
    pub(crate) a1: DVector<f64>,
    pub(crate) a2: DVector<f64>,
}

impl Alpha {
    pub(crate) fn read(layout: &Layout, y: &[f64]) -> Self {
        let r = |name| layout.read_vector(y, name);
        Self {
            a00: r("a0_0"),
            a10: r("a1_0"),
            a0: r("a0"),
            a1: r("a1"),
            a2: r("a2"),
        }
    }

    pub(crate) fn write(&self, layout: &Layout, dy: &mut [f64]) {
        for (name, v) in [
            ("a0_0", &self.a00),
            ("a1_0", &self.a10),
            ("a0", &self.a0),
            ("a1", &self.a1),
            ("a2", &self.a2),
        ] {
            layout.write_vector(dy, name, v);
        }
    }
}

pub(crate) fn terminal_alpha(p: &GameParams) -> Alpha {
    let w0 = &p.q0f * &p.eta0f;
    let w = &p.qf * &p.etaf;
    Alpha {
        a00: -&w0,
        a10: p.gamma0f.transpose() * &w0,
        a0: p.gamma1f.transpose() * &w,
        a1: -&w,
        a2: p.gamma2f.transpose() * &w,
    }
}

pub(crate) fn alpha_rhs(c: &Coefs, x: &Lambda, al: &Alpha) -> Alpha {
    let p = &c.p;
    let (m0, m) = (&c.dc.m0, &c.dc.m);
    let gt = p.g.transpose();
    let (f0t, ft, at) = (p.f0.transpose(), p.f.transpose(), p.a.transpose());
    let l10_m0_a0 = &x.l10 * m0 - p.a0.transpose();
    let lam_m_g = &x.la * m - &gt;
    let q0eta0 = &p.q0 * &p.eta0;
    let qeta = &p.q * &p.eta;
    let drift_t = (&x.l1 + x.l2.transpose()) * m - &at - &ft;

    Alpha {
        a00: &l10_m0_a0 * &al.a00 + &lam_m_g * &al.a10 + &x.l20 * m * &al.a1 + &q0eta0,
        a10: (x.l20.transpose() * m0 - &f0t) * &al.a00 + &drift_t * &al.a10 + &x.l30 * m * &al.a1
            - p.gamma0.transpose() * &q0eta0,
        a0: &l10_m0_a0 * &al.a0
            + ((&x.la + &x.lb) * m - &gt) * &al.a1
            + &x.l0 * m0 * &al.a00
            + &lam_m_g * &al.a2
            - p.gamma1.transpose() * &qeta,
        a1: ((&x.l1 + &x.l2) * m - &at) * &al.a1 + x.la.transpose() * m0 * &al.a00 + &qeta,
        a2: (x.l20.transpose() * m0 - &f0t) * &al.a0
            + &drift_t * &al.a2
            + x.lb.transpose() * m0 * &al.a00
            + ((x.l2.transpose() + &x.l3) * m - &ft) * &al.a1
            - p.gamma2.transpose() * &qeta,
    }
}

fn chi_rhs(c: &Coefs, x: &Lambda, al: &Alpha) -> (f64, f64) {
    let p = &c.p;
    let (m0, m) = (&c.dc.m0, &c.dc.m);
    let tr = |d: &DMatrix<f64>, l: &DMatrix<f64>| (d.transpose() * l * d).trace();
    let chi0 = al.a00.dot(&(m0 * &al.a00)) + 2.0 * al.a10.dot(&(m * &al.a1))
        - p.eta0.dot(&(&p.q0 * &p.eta0))
        - tr(&p.d0, &x.l10);
    let chi = 2.0 * al.a0.dot(&(m0 * &al.a00)) + 2.0 * al.a2.dot(&(m * &al.a1)) + al.a1.dot(&(m * &al.a1))
        - p.eta.dot(&(&p.q * &p.eta))
        - tr(&p.d0, &x.l0)
        - tr(&p.d, &x.l1);
    (chi0, chi)
}

struct LimitSystem {
    coefs: Coefs,
    layout: Arc<Layout>,
    with_offsets: bool,
    symmetrize: bool,
}

impl OdeSystem for LimitSystem {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let x = Lambda::read(&self.layout, y);
        lambda_rhs(&self.coefs, &x).write(&self.layout, dy);
        if self.with_offsets {
            let al = Alpha::read(&self.layout, y);
            alpha_rhs(&self.coefs, &x, &al).write(&self.layout, dy);
            let (chi0, chi) = chi_rhs(&self.coefs, &x, &al);
            self.layout.write_scalar(dy, "chi0", chi0);
            self.layout.write_scalar(dy, "chi", chi);
        }
    }

    fn project(&self, y: &mut [f64]) -> bool {
        if self.symmetrize {
            self.layout.symmetrize_blocks(y, &LIMIT_SYMMETRIC);
        }
        self.symmetrize
    }
}

fn build(p: &GameParams, with_offsets: bool, opts: &SolveOptions) -> Result<(LimitSystem, FlatState)> {
    let n = p.n;
    let mut layout = LIMIT_BLOCKS.iter().fold(Layout::new(), |l, name| l.matrix(name, n, n));
    if with_offsets {
        layout = LIMIT_OFFSETS
            .iter()
            .fold(layout, |l, name| l.vector(name, n))
            .scalar("chi0")
            .scalar("chi");
    }
    let layout = Arc::new(layout);
    let mut terminal = FlatState::zeros(layout.clone());
    terminal_lambda(p).write(&layout, &mut terminal.values);
    if with_offsets {
        terminal_alpha(p).write(&layout, &mut terminal.values);
        terminal.set_scalar("chi0", p.eta0f.dot(&(&p.q0f * &p.eta0f)));
        terminal.set_scalar("chi", p.etaf.dot(&(&p.qf * &p.etaf)));
    }
    let sys = LimitSystem {
        coefs: Coefs {
            p: p.clone(),
            dc: p.derive_coeffs()?,
        },
        layout,
        with_offsets,
        symmetrize: opts.symmetrize,
    };
    Ok((sys, terminal))
}

fn verdict(outcome: &IntegrationOutcome, opts: &SolveOptions) -> SolvabilityVerdict {
    let escape = match outcome {
        IntegrationOutcome::Escaped(e) => Some((e.t_lo, e.t_hi)),
        IntegrationOutcome::Solved { .. } => None,
    };
    SolvabilityVerdict {
        solvable: escape.is_none(),
        escape_lo: escape.map(|e| e.0),
        escape_hi: escape.map(|e| e.1),
        sup_norm: outcome.max_norm(),
        rtol: opts.tol.rtol,
        atol: opts.tol.atol,
    }
}

/// Integrate the nine-block limit Riccati system and decide asymptotic
/// solvability.
pub fn solve_limit_riccati(
    p: &GameParams,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<(Outcome<LimitRiccati>, SolvabilityVerdict)> {
    let (sys, terminal) = build(p, false, opts)?;
    let outcome = integrate_backward(&sys, &terminal, grid, &opts.tol)?;
    let v = verdict(&outcome, opts);
    let out = match outcome {
        IntegrationOutcome::Solved { trajectory, .. } => Outcome::Solved(LimitRiccati { trajectory }),
        IntegrationOutcome::Escaped(e) => Outcome::Escaped(e),
    };
    Ok((out, v))
}

/// Λ, α and χ integrated as one system.
pub fn solve_limit_full(
    p: &GameParams,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<(Outcome<LimitSolution>, SolvabilityVerdict)> {
    let (sys, terminal) = build(p, true, opts)?;
    let outcome = integrate_backward(&sys, &terminal, grid, &opts.tol)?;
    let v = verdict(&outcome, opts);
    let out = match outcome {
        IntegrationOutcome::Solved { trajectory, .. } => Outcome::Solved(LimitSolution {
            riccati: LimitRiccati {
                trajectory: trajectory.select(&LIMIT_BLOCKS),
            },
            offsets: LimitOffsets {
                trajectory: trajectory.select(&LIMIT_OFFSETS),
            },
            costs: LimitCosts {
                trajectory: trajectory.select(&LIMIT_COSTS),
            },
        }),
        IntegrationOutcome::Escaped(e) => Outcome::Escaped(e),
    };
    Ok((out, v))
}

fn resolve_full(p: &GameParams, grid: &TimeGrid, opts: &SolveOptions) -> Result<LimitSolution> {
    match solve_limit_full(p, grid, opts)?.0 {
        Outcome::Solved(s) => Ok(s),
        Outcome::Escaped(e) => Err(Error::Contract(format!(
            "limit system escapes in ({}, {}); offsets need a solved system",
            e.t_lo, e.t_hi
        ))),
    }
}

/// α along a solved Λ (re-integrated jointly with Λ on the same grid).
pub fn solve_limit_offsets(p: &GameParams, l: &LimitRiccati, opts: &SolveOptions) -> Result<LimitOffsets> {
    Ok(resolve_full(p, l.grid(), opts)?.offsets)
}

/// χ along solved Λ and α.
pub fn solve_limit_costs(
    p: &GameParams,
    l: &LimitRiccati,
    a: &LimitOffsets,
    opts: &SolveOptions,
) -> Result<LimitCosts> {
    if l.grid() != a.grid() {
        return Err(Error::GridMismatch("Λ and α are on different grids".into()));
    }
    Ok(resolve_full(p, l.grid(), opts)?.costs)
}

/// Limits of the equilibrium costs of the major player and of a minor
/// player as `N → ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AsymptoticCosts {
    pub j0: f64,
    pub j1: f64,
}

/// Evaluate the limiting cost formulas at `t = 0` for the given initial law.
pub fn asymptotic_costs(
    l: &LimitRiccati,
    a: &LimitOffsets,
    c: &LimitCosts,
    law: &InitialLaw,
) -> Result<AsymptoticCosts> {
    if l.grid() != a.grid() || l.grid() != c.grid() {
        return Err(Error::GridMismatch("Λ, α and χ are on different grids".into()));
    }
    let b = |name| l.block(name, 0);
    let al = |name| a.alpha(name, 0);
    let (mu0, mu) = (&law.mu0, &law.mu);
    let quad = |x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>| x.dot(&(m * y));

    let j0 = quad(mu0, &b("L1_0"), mu0) + 2.0 * quad(mu0, &b("L2_0"), mu) + quad(mu, &b("L3_0"), mu)
        + 2.0 * (mu0.dot(&al("a0_0")) + mu.dot(&al("a1_0")))
        + (b("L1_0") * &law.sigma0).trace()
        + c.chi("chi0", 0);
    let j1 = quad(mu0, &b("L0"), mu0)
        + 2.0 * quad(mu0, &b("La"), mu)
        + 2.0 * quad(mu0, &b("Lb"), mu)
        + quad(mu, &(b("L1") + b("L2") * 2.0 + b("L3")), mu)
        + 2.0 * (mu0.dot(&al("a0")) + mu.dot(&al("a1")) + mu.dot(&al("a2")))
        + (b("L0") * &law.sigma0 + b("L1") * &law.sigma).trace()
        + c.chi("chi", 0);
    Ok(AsymptoticCosts { j0, j1 })
}

/// Decentralized strategies on a grid:
/// `ǔ0 = −(K00 X0 + K0bar X̄ + k0)`, `ǔi = −(Ki0 X0 + Kii Xi + Kibar X̄ + ki)`.
#[derive(Clone, Debug)]
pub struct LimitGains {
    pub grid: TimeGrid,
    pub k00: Vec<DMatrix<f64>>,
    pub k0bar: Vec<DMatrix<f64>>,
    pub k0: Vec<DVector<f64>>,
    pub ki0: Vec<DMatrix<f64>>,
    pub kii: Vec<DMatrix<f64>>,
    pub kibar: Vec<DMatrix<f64>>,
    pub ki: Vec<DVector<f64>>,
}

pub fn limit_strategy_gains(p: &GameParams, l: &LimitRiccati, a: &LimitOffsets) -> Result<LimitGains> {
    if l.grid() != a.grid() {
        return Err(Error::GridMismatch("Λ and α are on different grids".into()));
    }
    let dc = p.derive_coeffs()?;
    let w0 = &dc.r0_inv * p.b0.transpose();
    let w = &dc.r_inv * p.b.transpose();
    let grid = *l.grid();
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
        out.k00.push(&w0 * l.block("L1_0", k));
        out.k0bar.push(&w0 * l.block("L2_0", k));
        out.k0.push(&w0 * a.alpha("a0_0", k));
        out.ki0.push(&w * l.block("La", k).transpose());
        out.kii.push(&w * l.block("L1", k));
        out.kibar.push(&w * l.block("L2", k));
        out.ki.push(&w * a.alpha("a1", k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn example1_is_solvable() {
        let p = GameParams::example1();
        let grid = TimeGrid::new(p.horizon, 1201).unwrap();
        let (out, v) = solve_limit_riccati(&p, &grid, &SolveOptions::default()).unwrap();
        assert!(out.is_solved() && v.solvable);
        assert!(v.sup_norm < 1e8);
    }

    #[test]
    fn example2_escapes_between_half_and_one() {
        let p = GameParams::example2();
        let grid = TimeGrid::new(p.horizon, 1201).unwrap();
        let (_, v) = solve_limit_riccati(&p, &grid, &SolveOptions::default()).unwrap();
        let (lo, hi) = v.escape_interval().expect("escape");
        assert!(0.5 < lo && hi < 1.0, "({lo}, {hi})");
        assert!(hi - lo <= 2.5e-3);
    }

    #[test]
    fn zero_eta_and_noise_give_zero_offsets_and_costs() {
        let p = GameParams::example1();
        let grid = TimeGrid::new(p.horizon, 121).unwrap();
        let sol = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
        for k in 0..grid.len() {
            for name in LIMIT_OFFSETS {
                assert_eq!(sol.offsets.alpha(name, k).amax(), 0.0);
            }
            assert_eq!(sol.costs.chi("chi0", k), 0.0);
            assert_eq!(sol.costs.chi("chi", k), 0.0);
        }
    }

    #[test]
    fn gains_vanish_at_horizon_for_example1() {
        let p = GameParams::example1();
        let grid = TimeGrid::new(p.horizon, 121).unwrap();
        let sol = solve_limit_full(&p, &grid, &SolveOptions::default()).unwrap().0.solved().unwrap();
        let g = limit_strategy_gains(&p, &sol.riccati, &sol.offsets).unwrap();
        let last = grid.len() - 1;
        for m in [&g.k00[last], &g.k0bar[last], &g.ki0[last], &g.kii[last], &g.kibar[last]] {
            assert_eq!(max_abs(m), 0.0);
        }
    }
}
