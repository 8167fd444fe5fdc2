//! Backward integration of terminal-value ODE systems.
//!
//! Every Riccati-type system in this crate is posed with data at the horizon
//! `T` and integrated towards `t = 0`. The integrator is the Dormand–Prince
//! 5(4) embedded pair with standard step-size control. Accepted steps are
//! resampled onto a uniform [`TimeGrid`] by cubic Hermite interpolation.
//!
//! A run either reaches the initial time ([`IntegrationOutcome::Solved`]) or
//! is declared to have a finite escape time ([`IntegrationOutcome::Escaped`])
//! once the l₁ norm of the state crosses `blowup_threshold` or the step size
//! collapses below `min_step_frac · T`. Escape brackets are narrowed by
//! bisection over the stopping time.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l1_norm, symmetrize_slice};

/// Uniform grid `t_start = t_0 < … < t_{m-1} = t_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    num_points: usize,
}

impl TimeGrid {
    /// Grid on `[0, horizon]`.
    pub fn new(horizon: f64, num_points: usize) -> Result<Self> {
        Self::with_start(0.0, horizon, num_points)
    }

    pub fn with_start(t_start: f64, t_end: f64, num_points: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(Error::InvalidInput(format!(
                "time grid needs t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        if num_points < 2 {
            return Err(Error::InvalidInput(
                "time grid needs at least two points".into(),
            ));
        }
        Ok(Self {
            t_start,
            t_end,
            num_points,
        })
    }

    /// Grid on `[0, horizon]` with spacing at most `dt`.
    pub fn with_spacing(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("grid spacing must be positive".into()));
        }
        let intervals = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon, intervals + 1)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn len(&self) -> usize {
        self.num_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn spacing(&self) -> f64 {
        self.span() / (self.num_points - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.num_points {
            self.t_end
        } else {
            self.t_start + k as f64 * self.spacing()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_points).map(|k| self.time(k))
    }
}

/// One named block inside a flat state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named-block descriptor for a flat state. Matrices are stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layout {
    blocks: Vec<BlockSpec>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(mut self, name: &str, rows: usize, cols: usize) -> Self {
        assert!(
            self.get(name).is_none(),
            "duplicate block name {name} in layout"
        );
        self.blocks.push(BlockSpec {
            name: name.to_string(),
            offset: self.len,
            rows,
            cols,
        });
        self.len += rows * cols;
        self
    }

    pub fn vector(self, name: &str, len: usize) -> Self {
        self.matrix(name, len, 1)
    }

    pub fn scalar(self, name: &str) -> Self {
        self.matrix(name, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn get(&self, name: &str) -> Option<&BlockSpec> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn spec(&self, name: &str) -> &BlockSpec {
        self.get(name)
            .unwrap_or_else(|| panic!("no block named {name} in layout"))
    }

    pub fn read_matrix(&self, values: &[f64], name: &str) -> DMatrix<f64> {
        let b = self.spec(name);
        DMatrix::from_row_slice(b.rows, b.cols, &values[b.range()])
    }

    pub fn read_vector(&self, values: &[f64], name: &str) -> DVector<f64> {
        let b = self.spec(name);
        DVector::from_column_slice(&values[b.range()])
    }

    pub fn read_scalar(&self, values: &[f64], name: &str) -> f64 {
        values[self.spec(name).offset]
    }

    pub fn write_matrix(&self, values: &mut [f64], name: &str, m: &DMatrix<f64>) {
        let b = self.spec(name);
        assert_eq!((b.rows, b.cols), m.shape(), "shape mismatch for {name}");
        let out = &mut values[b.range()];
        for i in 0..b.rows {
            for j in 0..b.cols {
                out[i * b.cols + j] = m[(i, j)];
            }
        }
    }

    pub fn write_vector(&self, values: &mut [f64], name: &str, v: &DVector<f64>) {
        let b = self.spec(name);
        assert_eq!(b.len(), v.len(), "length mismatch for {name}");
        values[b.range()].copy_from_slice(v.as_slice());
    }

    pub fn write_scalar(&self, values: &mut [f64], name: &str, v: f64) {
        values[self.spec(name).offset] = v;
    }

    /// Column labels `name[i][j]`, one per scalar component.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len);
        for b in &self.blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out.push(format!("{}[{i}][{j}]", b.name));
                }
            }
        }
        out
    }
}

/// A flat real vector together with its block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatState {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl FlatState {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn matrix(&self, name: &str) -> DMatrix<f64> {
        self.layout.read_matrix(&self.values, name)
    }

    pub fn vector(&self, name: &str) -> DVector<f64> {
        self.layout.read_vector(&self.values, name)
    }

    pub fn scalar(&self, name: &str) -> f64 {
        self.layout.read_scalar(&self.values, name)
    }

    pub fn set_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.layout.write_matrix(&mut self.values, name, m);
    }

    pub fn set_vector(&mut self, name: &str, v: &DVector<f64>) {
        self.layout.write_vector(&mut self.values, name, v);
    }

    pub fn set_scalar(&mut self, name: &str, v: f64) {
        self.layout.write_scalar(&mut self.values, name, v);
    }
}

/// States sampled on every point of a [`TimeGrid`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    grid: TimeGrid,
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_parts(grid: TimeGrid, layout: Arc<Layout>, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.len() * layout.len());
        Self { grid, layout, data }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let d = self.layout.len();
        &self.data[k * d..(k + 1) * d]
    }

    pub fn state_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.layout.len();
        &mut self.data[k * d..(k + 1) * d]
    }

    pub fn flat_state(&self, k: usize) -> FlatState {
        FlatState {
            values: self.state(k).to_vec(),
            layout: self.layout.clone(),
        }
    }

    pub fn matrix(&self, name: &str, k: usize) -> DMatrix<f64> {
        self.layout.read_matrix(self.state(k), name)
    }

    pub fn vector(&self, name: &str, k: usize) -> DVector<f64> {
        self.layout.read_vector(self.state(k), name)
    }

    pub fn scalar(&self, name: &str, k: usize) -> f64 {
        self.layout.read_scalar(self.state(k), name)
    }

    /// Largest l₁ norm over the grid.
    pub fn sup_l1(&self) -> f64 {
        (0..self.len())
            .map(|k| l1_norm(self.state(k)))
            .fold(0.0, f64::max)
    }

    /// Keep only the named blocks, in the given order.
    pub fn select(&self, names: &[&str]) -> Trajectory {
        let mut layout = Layout::new();
        for name in names {
            let b = self.layout.spec(name);
            layout = layout.matrix(name, b.rows, b.cols);
        }
        let layout = Arc::new(layout);
        let mut data = Vec::with_capacity(self.len() * layout.len());
        for k in 0..self.len() {
            let state = self.state(k);
            for name in names {
                data.extend_from_slice(&state[self.layout.spec(name).range()]);
            }
        }
        Trajectory::from_parts(self.grid, layout, data)
    }
}

/// Integrator controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// l₁ norm above which a solution is declared to have escaped.
    pub blowup_threshold: f64,
    /// Steps shorter than `min_step_frac · T` count as an escape.
    pub min_step_frac: f64,
    /// Escape brackets are refined to width `bracket_width_frac · T`.
    pub bracket_width_frac: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            blowup_threshold: 1e8,
            min_step_frac: 1e-12,
            bracket_width_frac: 1e-3,
        }
    }
}

impl Tolerances {
    pub fn with_rtol_atol(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// Tolerances tightened for oracle comparisons.
    pub fn tight() -> Self {
        Self::with_rtol_atol(1e-12, 1e-14)
    }

    pub fn halved(&self) -> Self {
        Self {
            rtol: self.rtol * 0.5,
            atol: self.atol * 0.5,
            ..*self
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidInput("rtol and atol must be positive".into()));
        }
        if !(self.min_step_frac > 0.0 && self.bracket_width_frac > 0.0) {
            return Err(Error::InvalidInput(
                "step and bracket fractions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A vector field `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Projection applied after each accepted step. Returns `true` when `y`
    /// was modified.
    fn project(&self, _y: &mut [f64]) -> bool {
        false
    }
}

/// Adapter turning a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Escape {
    /// The solution is unbounded somewhere in `(t_lo, t_hi)`.
    pub t_lo: f64,
    /// Integration from `T` down to `t_hi` succeeds.
    pub t_hi: f64,
    pub max_norm: f64,
}

impl Escape {
    pub fn width(&self) -> f64 {
        self.t_hi - self.t_lo
    }
}

#[derive(Clone, Debug)]
pub enum IntegrationOutcome {
    Solved {
        trajectory: Trajectory,
        max_norm: f64,
    },
    Escaped(Escape),
}

impl IntegrationOutcome {
    pub fn is_solved(&self) -> bool {
        matches!(self, Self::Solved { .. })
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            Self::Solved { trajectory, .. } => Some(trajectory),
            Self::Escaped(_) => None,
        }
    }

    pub fn into_trajectory(self) -> Result<Trajectory> {
        match self {
            Self::Solved { trajectory, .. } => Ok(trajectory),
            Self::Escaped(e) => Err(Error::Escaped {
                t_lo: e.t_lo,
                t_hi: e.t_hi,
            }),
        }
    }

    pub fn max_norm(&self) -> f64 {
        match self {
            Self::Solved { max_norm, .. } => *max_norm,
            Self::Escaped(e) => e.max_norm,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 5_000_000;

enum March {
    Reached,
    Escaped { t_lo: f64, t_hi: f64 },
}

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    dense: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; d]),
            tmp: vec![0.0; d],
            y_new: vec![0.0; d],
            err: vec![0.0; d],
            dense: vec![0.0; d],
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn initial_step<S: OdeSystem>(sys: &S, t: f64, y: &[f64], f0: &[f64], tol: &Tolerances, span: f64) -> f64 {
    // Hairer–Nørsett–Wanner starting step heuristic.
    let d = y.len().max(1) as f64;
    let scale = |i: usize| tol.atol + tol.rtol * y[i].abs();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / scale(i)).powi(2)).sum::<f64>() / d).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / scale(i)).powi(2)).sum::<f64>() / d).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(yi, fi)| yi - h0 * fi).collect();
    let mut f1 = vec![0.0; y.len()];
    sys.rhs(t - h0, &y1, &mut f1);
    if !all_finite(&f1) {
        return (h0 * 1e-3).min(span);
    }
    let d2 = (f1
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / scale(i)).powi(2))
        .sum::<f64>()
        / d)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

// Continuous extension of order 4 for the Dormand–Prince pair.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step, with what is needed to evaluate the dense output.
struct Step<'a> {
    t_old: f64,
    y_old: &'a [f64],
    f_old: &'a [f64],
    t_new: f64,
    /// End value before projection (the interpolant's right end).
    y_raw: &'a [f64],
    f_raw: &'a [f64],
    /// End value after projection (stored at exact grid hits).
    y_new: &'a [f64],
    dense: &'a [f64],
}

impl Step<'_> {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let h = self.t_new - self.t_old;
        let s = (t - self.t_old) / h;
        let s1 = 1.0 - s;
        for i in 0..out.len() {
            let dy = self.y_raw[i] - self.y_old[i];
            let r3 = h * self.f_old[i] - dy;
            let r4 = dy - h * self.f_raw[i] - r3;
            out[i] = self.y_old[i] + s * (dy + s1 * (r3 + s * (r4 + s1 * self.dense[i])));
        }
    }
}

/// Integrate from `(t_end, y_end)` down to `t_stop`, calling `sink` with
/// every accepted step.
fn march<S, K>(
    sys: &S,
    y_end: &[f64],
    t_end: f64,
    t_stop: f64,
    span: f64,
    tol: &Tolerances,
    max_norm: &mut f64,
    mut sink: K,
) -> March
where
    S: OdeSystem,
    K: FnMut(&Step<'_>),
{
    let d = y_end.len();
    let mut ws = Workspace::new(d);
    let mut y = y_end.to_vec();
    let mut f = vec![0.0; d];
    sys.rhs(t_end, &y, &mut f);
    let mut t = t_end;
    *max_norm = max_norm.max(l1_norm(&y));
    if t <= t_stop {
        return March::Reached;
    }
    let min_step = tol.min_step_frac * span;
    let mut h = initial_step(sys, t, &y, &f, tol, t_end - t_stop);
    let mut last_rejected = false;

    for _ in 0..MAX_STEPS {
        let remaining = t - t_stop;
        let mut final_step = false;
        if h >= remaining {
            h = remaining;
            final_step = true;
        }
        if h < min_step && !final_step {
            return March::Escaped {
                t_lo: (t - min_step).max(t_stop),
                t_hi: t,
            };
        }
        // Stages with negative step -h.
        let hs = -h;
        let Workspace {
            k,
            tmp,
            y_new,
            err,
            dense,
        } = &mut ws;
        k[0].copy_from_slice(&f);
        for i in 0..d {
            tmp[i] = y[i] + hs * A21 * k[0][i];
        }
        sys.rhs(t + C2 * hs, tmp, &mut k[1]);
        for i in 0..d {
            tmp[i] = y[i] + hs * (A31 * k[0][i] + A32 * k[1][i]);
        }
        sys.rhs(t + C3 * hs, tmp, &mut k[2]);
        for i in 0..d {
            tmp[i] = y[i] + hs * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        sys.rhs(t + C4 * hs, tmp, &mut k[3]);
        for i in 0..d {
            tmp[i] = y[i] + hs * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        sys.rhs(t + C5 * hs, tmp, &mut k[4]);
        for i in 0..d {
            tmp[i] = y[i]
                + hs * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
        }
        sys.rhs(t + hs, tmp, &mut k[5]);
        for i in 0..d {
            y_new[i] = y[i]
                + hs * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        let t_new = if final_step { t_stop } else { t + hs };
        let (k_last, k_rest) = k.split_last_mut().expect("seven stages");
        sys.rhs(t_new, y_new, k_last);
        for i in 0..d {
            err[i] = hs
                * (E1 * k_rest[0][i] + E3 * k_rest[2][i] + E4 * k_rest[3][i] + E5 * k_rest[4][i]
                    + E6 * k_rest[5][i]
                    + E7 * k_last[i]);
        }
        let finite = all_finite(y_new) && all_finite(k_last);
        let err_norm = if finite {
            let sum: f64 = (0..d)
                .map(|i| {
                    let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                    (err[i] / sc).powi(2)
                })
                .sum();
            (sum / d.max(1) as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err_norm <= 1.0 {
            let mut f_new = k_last.clone();
            let mut y_acc = y_new.clone();
            if sys.project(&mut y_acc) {
                sys.rhs(t_new, &y_acc, &mut f_new);
            }
            let norm = l1_norm(&y_acc);
            if !(norm <= tol.blowup_threshold) || !all_finite(&f_new) {
                *max_norm = max_norm.max(if norm.is_finite() { norm } else { f64::INFINITY });
                return March::Escaped { t_lo: t_new, t_hi: t };
            }
            *max_norm = max_norm.max(norm);
            for i in 0..d {
                dense[i] = hs
                    * (D1 * k_rest[0][i] + D3 * k_rest[2][i] + D4 * k_rest[3][i] + D5 * k_rest[4][i]
                        + D6 * k_rest[5][i]
                        + D7 * k_last[i]);
            }
            sink(&Step {
                t_old: t,
                y_old: &y,
                f_old: &f,
                t_new,
                y_raw: y_new,
                f_raw: k_last,
                y_new: &y_acc,
                dense,
            });
            y = y_acc;
            f = f_new;
            t = t_new;
            if final_step {
                return March::Reached;
            }
            let fac = if err_norm == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            h *= if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
        } else {
            let fac = if err_norm.is_finite() {
                (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, 1.0)
            } else {
                FAC_MIN
            };
            h *= fac;
            last_rejected = true;
        }
    }
    March::Escaped { t_lo: t_stop, t_hi: t }
}

fn check_terminal<S: OdeSystem>(sys: &S, terminal: &[f64], t_end: f64) -> Result<()> {
    if sys.dim() != terminal.len() {
        return Err(Error::InvalidInput(format!(
            "terminal state has length {}, system dimension is {}",
            terminal.len(),
            sys.dim()
        )));
    }
    if !all_finite(terminal) {
        return Err(Error::InvalidInput("terminal state is not finite".into()));
    }
    let mut f = vec![0.0; terminal.len()];
    sys.rhs(t_end, terminal, &mut f);
    if !all_finite(&f) {
        return Err(Error::InvalidInput(
            "vector field is not finite at the terminal point".into(),
        ));
    }
    Ok(())
}

/// Integrate `sys` backward from its terminal value at `grid.t_end()` down
/// to `grid.t_start()`.
///
/// On escape the bracket is refined to width `bracket_width_frac · T`.
pub fn integrate_backward<S: OdeSystem>(
    sys: &S,
    terminal: &FlatState,
    grid: &TimeGrid,
    tol: &Tolerances,
) -> Result<IntegrationOutcome> {
    tol.check()?;
    let t_end = grid.t_end();
    let t_start = grid.t_start();
    check_terminal(sys, &terminal.values, t_end)?;
    let d = terminal.values.len();
    if !(tol.blowup_threshold > l1_norm(&terminal.values)) {
        return Err(Error::InvalidInput(
            "blow-up threshold must exceed the terminal norm".into(),
        ));
    }

    let m = grid.len();
    let mut data = vec![0.0; m * d];
    data[(m - 1) * d..].copy_from_slice(&terminal.values);
    // Next grid index (descending) still to be filled.
    let mut next = m as isize - 2;
    let mut max_norm = 0.0;
    let outcome = march(
        sys,
        &terminal.values,
        t_end,
        t_start,
        grid.span(),
        tol,
        &mut max_norm,
        |step| {
            while next >= 0 {
                let k = next as usize;
                let tk = grid.time(k);
                if tk < step.t_new {
                    break;
                }
                let out = &mut data[k * d..(k + 1) * d];
                if tk == step.t_new {
                    out.copy_from_slice(step.y_new);
                } else {
                    step.eval(tk, out);
                }
                next -= 1;
            }
        },
    );
    match outcome {
        March::Reached => Ok(IntegrationOutcome::Solved {
            trajectory: Trajectory::from_parts(*grid, terminal.layout.clone(), data),
            max_norm,
        }),
        March::Escaped { t_lo, t_hi } => {
            let width = tol.bracket_width_frac * grid.span();
            let (t_lo, t_hi) = if t_hi - t_lo > width {
                bisect_escape(sys, &terminal.values, t_end, grid.span(), (t_lo, t_hi), tol)
            } else {
                (t_lo, t_hi)
            };
            Ok(IntegrationOutcome::Escaped(Escape {
                t_lo,
                t_hi,
                max_norm,
            }))
        }
    }
}

fn reaches<S: OdeSystem>(sys: &S, terminal: &[f64], t_end: f64, span: f64, t_stop: f64, tol: &Tolerances) -> bool {
    let mut max_norm = 0.0;
    matches!(
        march(sys, terminal, t_end, t_stop, span, tol, &mut max_norm, |_| {}),
        March::Reached
    )
}

fn bisect_escape<S: OdeSystem>(
    sys: &S,
    terminal: &[f64],
    t_end: f64,
    span: f64,
    (mut lo, mut hi): (f64, f64),
    tol: &Tolerances,
) -> (f64, f64) {
    let width = tol.bracket_width_frac * span;
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if reaches(sys, terminal, t_end, span, mid, tol) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Narrow a coarse escape bracket `(t_lo, t_hi)` by bisection on the
/// stopping time. The horizon `t_end` is where `terminal` is imposed and
/// `span` is the length used to scale the bracket width.
pub fn refine_escape_bracket<S: OdeSystem>(
    sys: &S,
    terminal: &FlatState,
    t_end: f64,
    span: f64,
    coarse: (f64, f64),
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    tol.check()?;
    check_terminal(sys, &terminal.values, t_end)?;
    let (lo, hi) = coarse;
    if !(lo < hi && hi <= t_end) {
        return Err(Error::Contract(format!(
            "({lo}, {hi}) is not an interval below the horizon {t_end}"
        )));
    }
    if !reaches(sys, &terminal.values, t_end, span, hi, tol) {
        return Err(Error::Contract(format!(
            "integration escapes before reaching t_hi = {hi}"
        )));
    }
    if reaches(sys, &terminal.values, t_end, span, lo, tol) {
        return Err(Error::Contract(format!(
            "no escape between {lo} and {hi}"
        )));
    }
    Ok(bisect_escape(sys, &terminal.values, t_end, span, (lo, hi), tol))
}

/// Tolerances plus the post-step symmetrization switch used by the Riccati
/// solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: Tolerances,
    /// Replace symmetric blocks by `(X + Xᵀ)/2` after every accepted step.
    pub symmetrize: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            symmetrize: true,
        }
    }
}

impl SolveOptions {
    pub fn tight() -> Self {
        Self {
            tol: Tolerances::tight(),
            symmetrize: true,
        }
    }

    pub fn with_tol(tol: Tolerances) -> Self {
        Self {
            tol,
            symmetrize: true,
        }
    }
}

/// Result of a solve that may hit a finite escape time.
#[derive(Clone, Debug)]
pub enum Outcome<T> {
    Solved(T),
    Escaped(Escape),
}

impl<T> Outcome<T> {
    pub fn is_solved(&self) -> bool {
        matches!(self, Self::Solved(_))
    }

    pub fn solved(self) -> Option<T> {
        match self {
            Self::Solved(v) => Some(v),
            Self::Escaped(_) => None,
        }
    }

    /// The solution, or [`Error::Escaped`].
    pub fn into_result(self) -> Result<T> {
        match self {
            Self::Solved(v) => Ok(v),
            Self::Escaped(e) => Err(Error::Escaped {
                t_lo: e.t_lo,
                t_hi: e.t_hi,
            }),
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Outcome<U> {
        match self {
            Self::Solved(v) => Outcome::Solved(f(v)),
            Self::Escaped(e) => Outcome::Escaped(e),
        }
    }
}

impl Layout {
    /// Symmetrize the named square blocks of `values` in place.
    pub fn symmetrize_blocks(&self, values: &mut [f64], names: &[&str]) {
        for name in names {
            let spec = self.spec(name);
            symmetrize_slice(&mut values[spec.range()], spec.rows);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_layout() -> Arc<Layout> {
        Arc::new(Layout::new().scalar("x"))
    }

    fn scalar(v: f64) -> FlatState {
        FlatState {
            values: vec![v],
            layout: scalar_layout(),
        }
    }

    #[test]
    fn zero_field_keeps_terminal_value() {
        let layout = Arc::new(Layout::new().matrix("X", 2, 2).vector("v", 3));
        let mut terminal = FlatState::zeros(layout.clone());
        terminal.values.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 2.5);
        let sys = FnSystem::new(layout.len(), |_, _, dy: &mut [f64]| dy.fill(0.0));
        let grid = TimeGrid::new(3.0, 31).unwrap();
        let out = integrate_backward(&sys, &terminal, &grid, &Tolerances::default()).unwrap();
        let traj = out.trajectory().unwrap();
        for k in 0..grid.len() {
            assert_eq!(traj.state(k), terminal.values.as_slice());
        }
    }

    #[test]
    fn quadratic_blows_up_at_one() {
        // x' = -x², x(2) = 1  =>  x(t) = 1 / (t - 1).
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0] * y[0]);
        let grid = TimeGrid::new(2.0, 201).unwrap();
        let tol = Tolerances::default();
        match integrate_backward(&sys, &scalar(1.0), &grid, &tol).unwrap() {
            IntegrationOutcome::Escaped(e) => {
                assert!(e.t_lo < 1.0 + 1e-6 && 1.0 <= e.t_hi + 1e-6, "{e:?}");
                assert!(e.width() <= tol.bracket_width_frac * 2.0);
            }
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn linear_matches_exponential() {
        let a = -0.7;
        let c = 2.0;
        let horizon = 5.0;
        let sys = FnSystem::new(1, move |_, y: &[f64], dy: &mut [f64]| dy[0] = a * y[0]);
        let grid = TimeGrid::new(horizon, 101).unwrap();
        let tol = Tolerances::default();
        let out = integrate_backward(&sys, &scalar(c), &grid, &tol).unwrap();
        let traj = out.trajectory().unwrap();
        let bound = 100.0 * tol.rtol * c * (a * horizon).abs().exp();
        for (k, t) in grid.times().enumerate() {
            let exact = c * (a * (t - horizon)).exp();
            let err = (traj.scalar("x", k) - exact).abs();
            assert!(err <= bound, "t = {t}: err {err:e} > {bound:e}");
        }
    }

    #[test]
    fn non_finite_terminal_field_is_invalid_input() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = 1.0 / (y[0] - 1.0));
        let grid = TimeGrid::new(1.0, 11).unwrap();
        let err = integrate_backward(&sys, &scalar(1.0), &grid, &Tolerances::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn refine_narrows_quadratic_bracket() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0] * y[0]);
        let tol = Tolerances::default();
        let (lo, hi) = refine_escape_bracket(&sys, &scalar(1.0), 2.0, 2.0, (0.5, 1.5), &tol).unwrap();
        assert!(hi - lo <= 0.002);
        assert!(lo <= 1.0 + 1e-6 && 1.0 <= hi + 1e-6, "({lo}, {hi})");
    }

    #[test]
    fn refine_without_escape_is_contract_violation() {
        let sys = FnSystem::new(1, |_, _: &[f64], dy: &mut [f64]| dy[0] = 0.0);
        let err = refine_escape_bracket(&sys, &scalar(1.0), 2.0, 2.0, (0.5, 1.5), &Tolerances::default())
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = TimeGrid::new(12.0, 1201).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(1200), 12.0);
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        let g = TimeGrid::with_spacing(12.0, 1e-3).unwrap();
        assert_eq!(g.len(), 12001);
    }
}
