//! Monte Carlo simulation of the `(N+1)`-player closed loop.
//!
//! Two families of feedback are supported: the exact Nash feedback of the
//! `N`-player game and the decentralized limit strategies, where the
//! unknown population mean is replaced by the deterministic `X̄†` driven by
//! the major player's state. Paths are independent, each with its own
//! ChaCha stream, so results do not depend on how paths are scheduled.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite_n::{NashGains, StructuredOffsets, StructuredRiccati};
use crate::limit::LimitGains;
use crate::linalg::pairwise_sum;
use crate::model::{GameParams, InitialLaw};
use crate::ode::TimeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    #[serde(rename = "nash")]
    NashExact,
    Decentralized,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    pub n_players: usize,
    pub num_paths: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(skip)]
    pub law: InitialLaw,
    pub mode: SimMode,
}

impl SimConfig {
    fn steps(&self, horizon: f64) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if self.num_paths < 2 {
            return Err(Error::InvalidInput(format!(
                "at least 2 paths are needed for a standard error, got {}",
                self.num_paths
            )));
        }
        if self.n_players < 1 {
            return Err(Error::InvalidInput("at least one minor player is needed".into()));
        }
        let steps = (horizon / self.dt).round();
        if (steps * self.dt - horizon).abs() > 1e-12 * horizon.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidInput(format!(
                "dt = {} does not divide the horizon {horizon}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub num_paths: usize,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len();
        let mean = pairwise_sum(samples) / m as f64;
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean).powi(2)).collect();
        let var = if m > 1 { pairwise_sum(&sq) / (m - 1) as f64 } else { f64::NAN };
        Self {
            mean,
            stderr: (var / m as f64).sqrt(),
            num_paths: m,
        }
    }
}

/// Estimate of `E sup_t |X⁽ᴺ⁾(t) − X̄†(t)|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeviationStat {
    pub mean_sq_sup: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimReport {
    #[serde(rename = "J0")]
    pub j0: CostEstimate,
    /// Cost of a minor player; each path contributes the average over its
    /// `N` minors.
    #[serde(rename = "J1")]
    pub j1: CostEstimate,
    pub deviation: Option<DeviationStat>,
    pub config: SimConfig,
}

/// Affine feedback of every player in the form
///
/// `u0 = −(c00 X0 + c0s ΣXj + c0d X̄† + c0k)`,
/// `ui = −(ci0 X0 + cii Xi + cis ΣXj + cid X̄† + cik)`,
///
/// on a time grid. Matrices are `n1 × n`.
#[derive(Clone, Debug)]
pub struct FeedbackSchedule {
    pub grid: TimeGrid,
    pub mode: SimMode,
    pub n_players: Option<usize>,
    pub(crate) coef: Vec<Coef>,
    pub(crate) mean_field: Option<Vec<MeanFieldCoef>>,
}

#[derive(Clone, Debug)]
pub(crate) struct Coef {
    c00: DMatrix<f64>,
    c0s: DMatrix<f64>,
    c0d: DMatrix<f64>,
    c0k: DVector<f64>,
    ci0: DMatrix<f64>,
    cii: DMatrix<f64>,
    cis: DMatrix<f64>,
    cid: DMatrix<f64>,
    cik: DVector<f64>,
}

/// `dX̄† = (drift X̄† + coupling X0 + offset) dt`.
#[derive(Clone, Debug)]
pub(crate) struct MeanFieldCoef {
    drift: DMatrix<f64>,
    coupling: DMatrix<f64>,
    offset: DVector<f64>,
}

fn mean_field_from(p: &GameParams, g: &LimitGains) -> Vec<MeanFieldCoef> {
    (0..g.grid.len())
        .map(|k| MeanFieldCoef {
            drift: &p.a + &p.f - &p.b * (&g.kii[k] + &g.kibar[k]),
            coupling: &p.g - &p.b * &g.ki0[k],
            offset: -(&p.b * &g.ki[k]),
        })
        .collect()
}

impl FeedbackSchedule {
    /// Exact Nash feedback from the structured blocks.
    pub fn nash(p: &GameParams, s: &StructuredRiccati, o: &StructuredOffsets) -> Result<Self> {
        if s.grid() != o.grid() {
            return Err(Error::GridMismatch("Riccati blocks and offsets differ in grid".into()));
        }
        let dc = p.derive_coeffs()?;
        let w0 = &dc.r0_inv * p.b0.transpose();
        let w = &dc.r_inv * p.b.transpose();
        let (n, n1) = (p.n, p.n1);
        let z = DMatrix::zeros(n1, n);
        let coef = (0..s.grid().len())
            .map(|k| {
                let b = |name| s.block(name, k);
                let other = &w * b("Pi2");
                Coef {
                    c00: &w0 * b("Pi1_0"),
                    c0s: &w0 * b("Pi2_0"),
                    c0d: z.clone(),
                    c0k: &w0 * o.theta("th0_0", k),
                    ci0: &w * b("Pia").transpose(),
                    cii: &w * b("Pi1") - &other,
                    cis: other,
                    cid: z.clone(),
                    cik: &w * o.theta("th1", k),
                }
            })
            .collect();
        Ok(Self {
            grid: *s.grid(),
            mode: SimMode::NashExact,
            n_players: Some(s.n_players),
            coef,
            mean_field: None,
        })
    }

    /// Exact Nash feedback read off full gain matrices `K_j`. Assumes the
    /// block structure of the Nash solution (all minors treated alike).
    pub fn from_nash_gains(g: &NashGains, n: usize) -> Self {
        let coef = g
            .gains
            .iter()
            .zip(&g.offsets)
            .map(|(gk, ok)| {
                let n1 = gk[0].nrows();
                let col = |m: &DMatrix<f64>, j: usize| m.columns(j * n, n).into_owned();
                let other = if g.n_players > 1 { col(&gk[1], 2) } else { DMatrix::zeros(n1, n) };
                Coef {
                    c00: col(&gk[0], 0),
                    c0s: col(&gk[0], 1),
                    c0d: DMatrix::zeros(n1, n),
                    c0k: ok[0].clone(),
                    ci0: col(&gk[1], 0),
                    cii: col(&gk[1], 1) - &other,
                    cis: other,
                    cid: DMatrix::zeros(n1, n),
                    cik: ok[1].clone(),
                }
            })
            .collect();
        Self {
            grid: g.grid,
            mode: SimMode::NashExact,
            n_players: Some(g.n_players),
            coef,
            mean_field: None,
        }
    }

    /// Decentralized limit strategies with `X̄†` in place of the mean.
    pub fn decentralized(p: &GameParams, g: &LimitGains) -> Self {
        let z = DMatrix::zeros(p.n1, p.n);
        let coef = (0..g.grid.len())
            .map(|k| Coef {
                c00: g.k00[k].clone(),
                c0s: z.clone(),
                c0d: g.k0bar[k].clone(),
                c0k: g.k0[k].clone(),
                ci0: g.ki0[k].clone(),
                cii: g.kii[k].clone(),
                cis: z.clone(),
                cid: g.kibar[k].clone(),
                cik: g.ki[k].clone(),
            })
            .collect();
        Self {
            grid: g.grid,
            mode: SimMode::Decentralized,
            n_players: None,
            coef,
            mean_field: Some(mean_field_from(p, g)),
        }
    }

    /// Attach `X̄†` dynamics so that the deviation statistic is also
    /// reported for Nash feedback.
    pub fn with_mean_field(mut self, p: &GameParams, g: &LimitGains) -> Result<Self> {
        if g.grid != self.grid {
            return Err(Error::GridMismatch("limit gains are on a different grid".into()));
        }
        self.mean_field = Some(mean_field_from(p, g));
        Ok(self)
    }
}

/// Flat per-step coefficients, interpolated once and shared by all paths.
struct Tables {
    n: usize,
    n1: usize,
    stride: usize,
    data: Vec<f64>,
    mean_field: bool,
}

const MATS: usize = 7;

impl Tables {
    fn build(sched: &FeedbackSchedule, steps: usize, dt: f64, n: usize, n1: usize) -> Self {
        let mat = n1 * n;
        let mf = n * n * 2 + n;
        let mean_field = sched.mean_field.is_some();
        let stride = MATS * mat + 2 * n1 + if mean_field { mf } else { 0 };
        let mut data = vec![0.0; (steps + 1) * stride];
        let g = &sched.grid;
        let last = g.len() - 1;
        for s in 0..=steps {
            let t = (s as f64 * dt).min(g.t_end());
            let pos = ((t - g.t_start()) / g.spacing()).max(0.0);
            let k = (pos.floor() as usize).min(last.saturating_sub(1));
            let w = if last == 0 { 0.0 } else { (pos - k as f64).clamp(0.0, 1.0) };
            let k1 = (k + 1).min(last);
            let out = &mut data[s * stride..(s + 1) * stride];
            let mut off = 0;
            let mut put = |a: &[f64], b: &[f64], off: &mut usize| {
                for (i, (x, y)) in a.iter().zip(b).enumerate() {
                    out[*off + i] = (1.0 - w) * x + w * y;
                }
                *off += a.len();
            };
            let (c, d) = (&sched.coef[k], &sched.coef[k1]);
            // Matrices are stored column-major as nalgebra keeps them.
            for (a, b) in [
                (&c.c00, &d.c00),
                (&c.c0s, &d.c0s),
                (&c.c0d, &d.c0d),
                (&c.ci0, &d.ci0),
                (&c.cii, &d.cii),
                (&c.cis, &d.cis),
                (&c.cid, &d.cid),
            ] {
                put(a.as_slice(), b.as_slice(), &mut off);
            }
            put(c.c0k.as_slice(), d.c0k.as_slice(), &mut off);
            put(c.cik.as_slice(), d.cik.as_slice(), &mut off);
            if let Some(mfc) = &sched.mean_field {
                let (c, d) = (&mfc[k], &mfc[k1]);
                put(c.drift.as_slice(), d.drift.as_slice(), &mut off);
                put(c.coupling.as_slice(), d.coupling.as_slice(), &mut off);
                put(c.offset.as_slice(), d.offset.as_slice(), &mut off);
            }
        }
        Self {
            n,
            n1,
            stride,
            data,
            mean_field,
        }
    }

    fn at(&self, s: usize) -> StepCoef<'_> {
        let row = &self.data[s * self.stride..(s + 1) * self.stride];
        let mat = self.n1 * self.n;
        let m = |i: usize| &row[i * mat..(i + 1) * mat];
        let base = MATS * mat;
        let (mf_drift, mf_coupling, mf_offset) = if self.mean_field {
            let o = base + 2 * self.n1;
            let nn = self.n * self.n;
            (
                &row[o..o + nn],
                &row[o + nn..o + 2 * nn],
                &row[o + 2 * nn..o + 2 * nn + self.n],
            )
        } else {
            (&row[0..0], &row[0..0], &row[0..0])
        };
        StepCoef {
            c00: m(0),
            c0s: m(1),
            c0d: m(2),
            ci0: m(3),
            cii: m(4),
            cis: m(5),
            cid: m(6),
            c0k: &row[base..base + self.n1],
            cik: &row[base + self.n1..base + 2 * self.n1],
            mf_drift,
            mf_coupling,
            mf_offset,
        }
    }
}

struct StepCoef<'a> {
    c00: &'a [f64],
    c0s: &'a [f64],
    c0d: &'a [f64],
    ci0: &'a [f64],
    cii: &'a [f64],
    cis: &'a [f64],
    cid: &'a [f64],
    c0k: &'a [f64],
    cik: &'a [f64],
    mf_drift: &'a [f64],
    mf_coupling: &'a [f64],
    mf_offset: &'a [f64],
}

/// `out += m x` lane by lane. `m` is column-major with `rows` rows; `x`
/// and `out` store component `k` of every lane in `[k * lanes, (k + 1) * lanes)`.
#[inline]
fn gemv(m: &[f64], rows: usize, x: &[f64], out: &mut [f64], lanes: usize) {
    let cols = m.len() / rows;
    for j in 0..cols {
        let xj = &x[j * lanes..(j + 1) * lanes];
        for r in 0..rows {
            let c = m[j * rows + r];
            if c == 0.0 {
                continue;
            }
            let o = &mut out[r * lanes..(r + 1) * lanes];
            for (o, x) in o.iter_mut().zip(xj) {
                *o += c * x;
            }
        }
    }
}

/// `acc += xᵀ m x` lane by lane for a column-major `n × n` matrix.
#[inline]
fn quad(m: &[f64], n: usize, x: &[f64], acc: &mut [f64], lanes: usize) {
    for j in 0..n {
        let xj = &x[j * lanes..(j + 1) * lanes];
        for i in 0..n {
            let c = m[j * n + i];
            if c == 0.0 {
                continue;
            }
            let xi = &x[i * lanes..(i + 1) * lanes];
            for ((a, u), v) in acc.iter_mut().zip(xi).zip(xj) {
                *a += c * u * v;
            }
        }
    }
}

/// `out = v` broadcast over lanes.
#[inline]
fn fill(out: &mut [f64], v: &[f64], lanes: usize) {
    for (k, x) in v.iter().enumerate() {
        out[k * lanes..(k + 1) * lanes].fill(*x);
    }
}

/// Model matrices flattened column-major.
struct Model {
    n: usize,
    n1: usize,
    n2: usize,
    a0: Vec<f64>,
    b0: Vec<f64>,
    f0: Vec<f64>,
    d0: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    d: Vec<f64>,
    q0: Vec<f64>,
    r0: Vec<f64>,
    gamma0: Vec<f64>,
    eta0: Vec<f64>,
    q0f: Vec<f64>,
    gamma0f: Vec<f64>,
    eta0f: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    gamma1: Vec<f64>,
    gamma2: Vec<f64>,
    eta: Vec<f64>,
    qf: Vec<f64>,
    gamma1f: Vec<f64>,
    gamma2f: Vec<f64>,
    etaf: Vec<f64>,
    chol0: Vec<f64>,
    chol: Vec<f64>,
    mu0: Vec<f64>,
    mu: Vec<f64>,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// A square root `L` with `L Lᵀ = Σ` for a PSD `Σ`, tolerant of
/// singular matrices.
fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(s.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    e.eigenvectors * d
}

impl Model {
    fn new(p: &GameParams, law: &InitialLaw) -> Self {
        Self {
            n: p.n,
            n1: p.n1,
            n2: p.n2,
            a0: flat(&p.a0),
            b0: flat(&p.b0),
            f0: flat(&p.f0),
            d0: flat(&p.d0),
            a: flat(&p.a),
            b: flat(&p.b),
            f: flat(&p.f),
            g: flat(&p.g),
            d: flat(&p.d),
            q0: flat(&p.q0),
            r0: flat(&p.r0),
            gamma0: flat(&p.gamma0),
            eta0: p.eta0.as_slice().to_vec(),
            q0f: flat(&p.q0f),
            gamma0f: flat(&p.gamma0f),
            eta0f: p.eta0f.as_slice().to_vec(),
            q: flat(&p.q),
            r: flat(&p.r),
            gamma1: flat(&p.gamma1),
            gamma2: flat(&p.gamma2),
            eta: p.eta.as_slice().to_vec(),
            qf: flat(&p.qf),
            gamma1f: flat(&p.gamma1f),
            gamma2f: flat(&p.gamma2f),
            etaf: p.etaf.as_slice().to_vec(),
            chol0: flat(&psd_sqrt(&law.sigma0)),
            chol: flat(&psd_sqrt(&law.sigma)),
            mu0: law.mu0.as_slice().to_vec(),
            mu: law.mu.as_slice().to_vec(),
        }
    }
}

/// Paths advanced together; one lane per path.
const LANES: usize = 64;

/// Lane-major buffers of one batch.
struct Batch {
    lanes: usize,
    rngs: Vec<ChaCha8Rng>,
    x0: Vec<f64>,
    xs: Vec<f64>,
    dag: Vec<f64>,
    sum: Vec<f64>,
    mean: Vec<f64>,
    u0: Vec<f64>,
    ui: Vec<f64>,
    base: Vec<f64>,
    target: Vec<f64>,
    common: Vec<f64>,
    dx0: Vec<f64>,
    dxi: Vec<f64>,
    ddag: Vec<f64>,
    tmp: Vec<f64>,
    noise: Vec<f64>,
    running: Vec<f64>,
    j0: Vec<f64>,
    ji: Vec<f64>,
    dev: Vec<f64>,
}

impl Batch {
    fn new(m: &Model, players: usize, seed: u64, first: usize, lanes: usize) -> Self {
        let (n, n1) = (m.n, m.n1);
        let v = |len: usize| vec![0.0; len * lanes];
        let rngs = (first..first + lanes)
            .map(|path| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path as u64);
                rng
            })
            .collect();
        Self {
            lanes,
            rngs,
            x0: v(n),
            xs: v(players * n),
            dag: v(n),
            sum: v(n),
            mean: v(n),
            u0: v(n1),
            ui: v(n1),
            base: v(n1),
            target: v(n),
            common: v(n),
            dx0: v(n),
            dxi: v(n),
            ddag: v(n),
            tmp: v(n),
            noise: v(m.n2.max(n)),
            running: v(1),
            j0: v(1),
            ji: v(1),
            dev: v(1),
        }
    }

    /// `noise[k, p] = scale ξ` with `ξ` standard normal from lane `p`'s stream.
    fn draw(&mut self, dim: usize, scale: f64) {
        let lanes = self.lanes;
        for (p, rng) in self.rngs.iter_mut().enumerate() {
            for k in 0..dim {
                self.noise[k * lanes + p] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

fn initial_state(out: &mut [f64], mu: &[f64], chol: &[f64], noise: &[f64], lanes: usize) {
    let n = mu.len();
    fill(out, mu, lanes);
    gemv(chol, n, &noise[..n * lanes], out, lanes);
}

struct PathResult {
    j0: f64,
    j1: f64,
    dev: f64,
}

/// One row of a per-path dump.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub path: usize,
    pub t: f64,
    pub x0: Vec<f64>,
    pub mean: Vec<f64>,
    pub dag: Vec<f64>,
}

struct Sim<'a> {
    m: &'a Model,
    tab: &'a Tables,
    players: usize,
    steps: usize,
    dt: f64,
    seed: u64,
}

impl Sim<'_> {
    fn record(&self, b: &Batch, first: usize, s: usize, rows: &mut Vec<PathSample>) {
        let lanes = b.lanes;
        let col = |v: &[f64], p: usize| (0..self.m.n).map(|k| v[k * lanes + p]).collect();
        for p in 0..lanes {
            rows.push(PathSample {
                path: first + p,
                t: s as f64 * self.dt,
                x0: col(&b.x0, p),
                mean: col(&b.mean, p),
                dag: col(&b.dag, p),
            });
        }
    }

    fn update_mean(&self, b: &mut Batch) {
        let width = self.m.n * b.lanes;
        b.sum.fill(0.0);
        for xi in b.xs.chunks_exact(width) {
            for (s, x) in b.sum.iter_mut().zip(xi) {
                *s += x;
            }
        }
        let nn = self.players as f64;
        for (m, s) in b.mean.iter_mut().zip(&b.sum) {
            *m = s / nn;
        }
    }

    fn track_deviation(&self, b: &mut Batch) {
        let lanes = b.lanes;
        for p in 0..lanes {
            let d2: f64 = (0..self.m.n)
                .map(|k| (b.mean[k * lanes + p] - b.dag[k * lanes + p]).powi(2))
                .sum();
            b.dev[p] = b.dev[p].max(d2);
        }
    }

    fn check_finite(&self, b: &Batch, first: usize, s: usize) -> Result<()> {
        let lanes = b.lanes;
        for p in 0..lanes {
            let bad = !(b.j0[p].is_finite() && b.ji[p].is_finite())
                || (0..self.m.n).any(|k| !b.x0[k * lanes + p].is_finite());
            if bad {
                return Err(Error::NonFiniteState {
                    path: first + p,
                    time: s as f64 * self.dt,
                });
            }
        }
        Ok(())
    }

    fn batch(&self, first: usize, lanes: usize, mut rows: Option<(&mut Vec<PathSample>, usize)>) -> Result<Vec<PathResult>> {
        let m = self.m;
        let (n, n1, n2) = (m.n, m.n1, m.n2);
        let mf = self.tab.mean_field;
        let dt = self.dt;
        let mut b = Batch::new(m, self.players, self.seed, first, lanes);

        b.draw(n, 1.0);
        initial_state(&mut b.x0, &m.mu0, &m.chol0, &b.noise, lanes);
        for i in 0..self.players {
            b.draw(n, 1.0);
            initial_state(&mut b.xs[i * n * lanes..(i + 1) * n * lanes], &m.mu, &m.chol, &b.noise, lanes);
        }
        fill(&mut b.dag, &m.mu, lanes);
        self.update_mean(&mut b);

        let sqrt_dt = dt.sqrt();
        for s in 0..self.steps {
            let c = self.tab.at(s);
            if mf {
                self.track_deviation(&mut b);
            }
            if let Some((out, stride)) = rows.as_mut() {
                if s % *stride == 0 {
                    self.record(&b, first, s, out);
                }
            }

            // Major player's control and running cost.
            fill(&mut b.u0, c.c0k, lanes);
            gemv(c.c00, n1, &b.x0, &mut b.u0, lanes);
            gemv(c.c0s, n1, &b.sum, &mut b.u0, lanes);
            if mf {
                gemv(c.c0d, n1, &b.dag, &mut b.u0, lanes);
            }
            b.u0.iter_mut().for_each(|u| *u = -*u);
            fill(&mut b.target, &m.eta0, lanes);
            gemv(&m.gamma0, n, &b.mean, &mut b.target, lanes);
            for ((t, x), g) in b.tmp.iter_mut().zip(&b.x0).zip(&b.target) {
                *t = x - g;
            }
            b.running.fill(0.0);
            quad(&m.q0, n, &b.tmp, &mut b.running, lanes);
            quad(&m.r0, n1, &b.u0, &mut b.running, lanes);
            for (j, r) in b.j0.iter_mut().zip(&b.running) {
                *j += dt * r;
            }

            // Major drift, the part of the minor drift shared by every minor,
            // and the parts of the minor controls and targets that do not
            // depend on Xi.
            b.dx0.fill(0.0);
            gemv(&m.a0, n, &b.x0, &mut b.dx0, lanes);
            gemv(&m.b0, n, &b.u0, &mut b.dx0, lanes);
            gemv(&m.f0, n, &b.mean, &mut b.dx0, lanes);
            b.common.fill(0.0);
            gemv(&m.f, n, &b.mean, &mut b.common, lanes);
            gemv(&m.g, n, &b.x0, &mut b.common, lanes);
            fill(&mut b.base, c.cik, lanes);
            gemv(c.ci0, n1, &b.x0, &mut b.base, lanes);
            gemv(c.cis, n1, &b.sum, &mut b.base, lanes);
            if mf {
                gemv(c.cid, n1, &b.dag, &mut b.base, lanes);
            }
            fill(&mut b.target, &m.eta, lanes);
            gemv(&m.gamma1, n, &b.x0, &mut b.target, lanes);
            gemv(&m.gamma2, n, &b.mean, &mut b.target, lanes);
            if mf {
                fill(&mut b.ddag, c.mf_offset, lanes);
                gemv(c.mf_drift, n, &b.dag, &mut b.ddag, lanes);
                gemv(c.mf_coupling, n, &b.x0, &mut b.ddag, lanes);
            }

            // Euler–Maruyama step, major first.
            for (x, d) in b.x0.iter_mut().zip(&b.dx0) {
                *x += dt * d;
            }
            b.draw(n2, sqrt_dt);
            gemv(&m.d0, n, &b.noise[..n2 * lanes], &mut b.x0, lanes);

            b.running.fill(0.0);
            for i in 0..self.players {
                let range = i * n * lanes..(i + 1) * n * lanes;
                let xi = &b.xs[range.clone()];
                b.ui.copy_from_slice(&b.base);
                gemv(c.cii, n1, xi, &mut b.ui, lanes);
                b.ui.iter_mut().for_each(|u| *u = -*u);
                for ((t, x), g) in b.tmp.iter_mut().zip(xi).zip(&b.target) {
                    *t = x - g;
                }
                quad(&m.q, n, &b.tmp, &mut b.running, lanes);
                quad(&m.r, n1, &b.ui, &mut b.running, lanes);
                b.dxi.copy_from_slice(&b.common);
                gemv(&m.a, n, xi, &mut b.dxi, lanes);
                gemv(&m.b, n, &b.ui, &mut b.dxi, lanes);
                b.draw(n2, sqrt_dt);
                let xi = &mut b.xs[range];
                for (x, d) in xi.iter_mut().zip(&b.dxi) {
                    *x += dt * d;
                }
                gemv(&m.d, n, &b.noise[..n2 * lanes], xi, lanes);
            }
            for (j, r) in b.ji.iter_mut().zip(&b.running) {
                *j += dt * r;
            }
            if mf {
                for (x, d) in b.dag.iter_mut().zip(&b.ddag) {
                    *x += dt * d;
                }
            }
            self.update_mean(&mut b);
            if s % 256 == 255 {
                self.check_finite(&b, first, s + 1)?;
            }
        }

        // Terminal costs.
        if mf {
            self.track_deviation(&mut b);
        }
        if let Some((out, _)) = rows.as_mut() {
            self.record(&b, first, self.steps, out);
        }
        fill(&mut b.target, &m.eta0f, lanes);
        gemv(&m.gamma0f, n, &b.mean, &mut b.target, lanes);
        for ((t, x), g) in b.tmp.iter_mut().zip(&b.x0).zip(&b.target) {
            *t = x - g;
        }
        quad(&m.q0f, n, &b.tmp, &mut b.j0, lanes);
        fill(&mut b.target, &m.etaf, lanes);
        gemv(&m.gamma1f, n, &b.x0, &mut b.target, lanes);
        gemv(&m.gamma2f, n, &b.mean, &mut b.target, lanes);
        for i in 0..self.players {
            let xi = &b.xs[i * n * lanes..(i + 1) * n * lanes];
            for ((t, x), g) in b.tmp.iter_mut().zip(xi).zip(&b.target) {
                *t = x - g;
            }
            quad(&m.qf, n, &b.tmp, &mut b.ji, lanes);
        }
        self.check_finite(&b, first, self.steps)?;
        let nn = self.players as f64;
        Ok((0..lanes)
            .map(|p| PathResult {
                j0: b.j0[p],
                j1: b.ji[p] / nn,
                dev: b.dev[p],
            })
            .collect())
    }

    fn run(&self, paths: usize) -> Result<Vec<PathResult>> {
        let batches: Vec<Vec<PathResult>> = (0..paths.div_ceil(LANES))
            .into_par_iter()
            .map(|k| {
                let first = k * LANES;
                self.batch(first, LANES.min(paths - first), None)
            })
            .collect::<Result<_>>()?;
        Ok(batches.into_iter().flatten().collect())
    }
}

fn prepare(
    p: &GameParams,
    sched: &FeedbackSchedule,
    cfg: &SimConfig,
) -> Result<(Model, Tables, usize)> {
    let law = cfg.law.clone().validate(p.n).map_err(Error::Validation)?;
    let steps = cfg.steps(p.horizon)?;
    if let Some(np) = sched.n_players {
        if np != cfg.n_players {
            return Err(Error::InvalidInput(format!(
                "feedback was computed for N = {np}, simulation asks for N = {}",
                cfg.n_players
            )));
        }
    }
    if cfg.mode != sched.mode {
        return Err(Error::InvalidInput("feedback does not match the simulation mode".into()));
    }
    let g = &sched.grid;
    if (g.t_end() - p.horizon).abs() > 1e-12 * p.horizon.max(1.0) || g.t_start() != 0.0 {
        return Err(Error::GridMismatch(format!(
            "feedback grid [{}, {}] does not cover [0, {}]",
            g.t_start(),
            g.t_end(),
            p.horizon
        )));
    }
    if g.len() > 1 && g.spacing() > cfg.dt * (1.0 + 1e-9) {
        return Err(Error::GridMismatch(format!(
            "feedback grid spacing {} is coarser than dt = {}",
            g.spacing(),
            cfg.dt
        )));
    }
    let model = Model::new(p, &law);
    let tab = Tables::build(sched, steps, cfg.dt, p.n, p.n1);
    Ok((model, tab, steps))
}

/// Simulate `cfg.num_paths` independent paths and estimate both costs.
pub fn simulate(p: &GameParams, sched: &FeedbackSchedule, cfg: &SimConfig) -> Result<SimReport> {
    let (model, tab, steps) = prepare(p, sched, cfg)?;
    let sim = Sim {
        m: &model,
        tab: &tab,
        players: cfg.n_players,
        steps,
        dt: cfg.dt,
        seed: cfg.seed,
    };
    let results = sim.run(cfg.num_paths)?;
    let col = |f: fn(&PathResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    let deviation = tab.mean_field.then(|| {
        let e = CostEstimate::from_samples(&col(|r| r.dev));
        DeviationStat {
            mean_sq_sup: e.mean,
            stderr: e.stderr,
        }
    });
    Ok(SimReport {
        j0: CostEstimate::from_samples(&col(|r| r.j0)),
        j1: CostEstimate::from_samples(&col(|r| r.j1)),
        deviation,
        config: cfg.clone(),
    })
}

/// Sampled trajectories `(t, X0, X⁽ᴺ⁾, X̄†)` of the first `paths` paths,
/// every `stride` steps, as CSV. Uses the same random streams as
/// [`simulate`].
pub fn path_csv(
    p: &GameParams,
    sched: &FeedbackSchedule,
    cfg: &SimConfig,
    paths: usize,
    stride: usize,
) -> Result<String> {
    let (model, tab, steps) = prepare(p, sched, cfg)?;
    let sim = Sim {
        m: &model,
        tab: &tab,
        players: cfg.n_players,
        steps,
        dt: cfg.dt,
        seed: cfg.seed,
    };
    let n = p.n;
    let mut out = String::from("path,t");
    for prefix in ["X0", "XN", "Xdag"] {
        for i in 0..n {
            write!(out, ",{prefix}[{i}]").expect("string write");
        }
    }
    out.push('\n');
    let mut rows = Vec::new();
    let paths = paths.min(cfg.num_paths);
    if paths > 0 {
        sim.batch(0, paths, Some((&mut rows, stride.max(1))))?;
    }
    rows.sort_by_key(|r| r.path);
    for r in rows {
        write!(out, "{},{:.16e}", r.path, r.t).expect("string write");
        for v in r.x0.iter().chain(&r.mean).chain(&r.dag) {
            write!(out, ",{v:.16e}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Deviation statistic of the decentralized closed loop for several
/// population sizes.
pub fn deviation_sweep(
    p: &GameParams,
    sched: &FeedbackSchedule,
    ns: &[usize],
    cfg: &SimConfig,
) -> Result<Vec<(usize, DeviationStat)>> {
    if sched.mean_field.is_none() {
        return Err(Error::InvalidInput("deviation needs X̄† dynamics".into()));
    }
    ns.iter()
        .map(|&n| {
            let cfg = SimConfig {
                n_players: n,
                ..cfg.clone()
            };
            let r = simulate(p, sched, &cfg)?;
            Ok((n, r.deviation.expect("mean field attached")))
        })
        .collect()
}

/// `E[xᵀPx] + 2Sᵀ E[x] + r` for `x` with independent blocks drawn from
/// the initial law: the value a player expects at time zero.
pub fn predicted_value(pj: &DMatrix<f64>, sj: &DVector<f64>, rj: f64, law: &InitialLaw) -> f64 {
    let n = law.mu0.len();
    let blocks = pj.nrows() / n;
    let mut mean = DVector::zeros(pj.nrows());
    let mut cov = DMatrix::zeros(pj.nrows(), pj.nrows());
    mean.rows_mut(0, n).copy_from(&law.mu0);
    cov.view_mut((0, 0), (n, n)).copy_from(&law.sigma0);
    for j in 1..blocks {
        mean.rows_mut(j * n, n).copy_from(&law.mu);
        cov.view_mut((j * n, j * n), (n, n)).copy_from(&law.sigma);
    }
    (pj * &cov).trace() + mean.dot(&(pj * &mean)) + 2.0 * sj.dot(&mean) + rj
}
