//! Distance between the rescaled finite-`N` solution and the limit system.

use crate::error::{Error, Result};
use crate::finite_n::{rescale, rescale_offsets, solve_structured_full, RESCALED_BLOCKS, RESCALED_OFFSETS};
use crate::limit::{solve_limit_full, LimitSolution};
use crate::model::GameParams;
use crate::ode::{Outcome, SolveOptions, TimeGrid, Trajectory};

#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub n_players: usize,
    /// `None` when the finite-`N` system escaped.
    pub errors: Option<Vec<f64>>,
    /// `errors` of the previous row divided by these, per column.
    pub ratios: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    /// Block names the error columns refer to.
    pub columns: Vec<String>,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn max_error(&self, row: usize) -> Option<f64> {
        self.rows[row].errors.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max))
    }

    /// Ratio of successive maximal errors.
    pub fn max_ratio(&self, row: usize) -> Option<f64> {
        if row == 0 {
            return None;
        }
        Some(self.max_error(row - 1)? / self.max_error(row)?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Every error decreases from one row to the next and every ratio lies
    /// in `[lo, hi]`. Columns that are identically zero are skipped.
    pub fn rate_within(&self, lo: f64, hi: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let (Some(a), Some(b)) = (&w[0].errors, &w[1].errors) else {
                return false;
            };
            a.iter().zip(b).all(|(&x, &y)| {
                if x == 0.0 && y == 0.0 {
                    return true;
                }
                let r = x / y;
                y < x && (lo..=hi).contains(&r)
            })
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("N");
        for c in &self.columns {
            out.push_str(&format!(",err_{c}"));
        }
        for c in &self.columns {
            out.push_str(&format!(",ratio_{c}"));
        }
        out.push_str(",max_err,ratio\n");
        let cell = |v: Option<f64>| v.filter(|x| x.is_finite()).map(|x| format!("{x:.16e}")).unwrap_or_default();
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&row.n_players.to_string());
            for c in 0..self.columns.len() {
                out.push(',');
                out.push_str(&cell(row.errors.as_ref().map(|e| e[c])));
            }
            for c in 0..self.columns.len() {
                out.push(',');
                out.push_str(&cell(row.ratios.as_ref().map(|r| r[c])));
            }
            out.push(',');
            match &row.errors {
                Some(_) => out.push_str(&cell(self.max_error(i))),
                None => out.push_str("escaped"),
            }
            out.push(',');
            out.push_str(&cell(self.max_ratio(i)));
            out.push('\n');
        }
        out
    }
}

fn sup_distance(a: &Trajectory, b: &Trajectory, name: &str) -> f64 {
    let spec = a.layout().spec(name).range();
    let other = b.layout().spec(name).range();
    (0..a.len())
        .flat_map(|k| {
            a.state(k)[spec.clone()]
                .iter()
                .zip(&b.state(k)[other.clone()])
                .map(|(x, y)| (x - y).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Sup-norm error of every rescaled block and offset against the limit, for
/// each `N` in `ns`.
pub fn compare_convergence(
    p: &GameParams,
    ns: &[usize],
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<ConvergenceTable> {
    let limit = match solve_limit_full(p, grid, opts)?.0 {
        Outcome::Solved(l) => l,
        Outcome::Escaped(e) => return Err(Error::Escaped { t_lo: e.t_lo, t_hi: e.t_hi }),
    };
    compare_against(p, &limit, ns, opts)
}

pub fn compare_against(
    p: &GameParams,
    limit: &LimitSolution,
    ns: &[usize],
    opts: &SolveOptions,
) -> Result<ConvergenceTable> {
    let grid = limit.riccati.grid();
    let columns: Vec<String> = RESCALED_BLOCKS.iter().chain(&RESCALED_OFFSETS).map(|s| s.to_string()).collect();
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ns.len());
    for &n_players in ns {
        let errors = match solve_structured_full(p, n_players, grid, opts)? {
            Outcome::Solved((s, o)) => {
                let (view, offsets) = (rescale(&s), rescale_offsets(&o));
                let mut e: Vec<f64> = RESCALED_BLOCKS
                    .iter()
                    .map(|b| sup_distance(&view, &limit.riccati.trajectory, b))
                    .collect();
                e.extend(
                    RESCALED_OFFSETS
                        .iter()
                        .map(|b| sup_distance(&offsets, &limit.offsets.trajectory, b)),
                );
                Some(e)
            }
            Outcome::Escaped(_) => None,
        };
        let ratios = match (rows.last().and_then(|r| r.errors.as_ref()), &errors) {
            (Some(prev), Some(cur)) => Some(prev.iter().zip(cur).map(|(a, b)| a / b).collect()),
            _ => None,
        };
        rows.push(ConvergenceRow {
            n_players,
            errors,
            ratios,
        });
    }
    Ok(ConvergenceTable { columns, rows })
}
