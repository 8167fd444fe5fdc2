//! The `lqmfg` command line.
//!
//! Exit codes: 0 for success or a solvable system, 1 for a negative
//! mathematical verdict (finite escape, failed consistency check), 2 for
//! usage and input errors. Every command writes `manifest.json` into its
//! output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};
use serde::Serialize;
use serde_json::json;

use crate::convergence::compare_against;
use crate::error::{Error, Result};
use crate::export::write_trajectory_csv;
use crate::finite_n::{
    assemble_dense, solve_structured_full, COST_BLOCKS, OFFSET_BLOCKS, RICCATI_BLOCKS,
};
use crate::limit::{
    asymptotic_costs, limit_strategy_gains, solve_limit_full, LimitSolution, SolvabilityVerdict,
    LIMIT_BLOCKS, LIMIT_COSTS, LIMIT_OFFSETS,
};
use crate::model::Scenario;
use crate::ode::{Outcome, SolveOptions, TimeGrid, Tolerances};
use crate::sim::{path_csv, predicted_value, simulate, FeedbackSchedule, SimConfig, SimMode, SimReport};
use crate::tracking::{solve_tracking, verify_consistency};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "lqmfg", version, about = "Linear-quadratic mean field games with a major player")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (JSON).
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Points of the output grid on [0, T].
    #[arg(long, default_value_t = 1201)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub atol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Nash,
    Decentralized,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide asymptotic solvability from the limit Riccati system.
    Check(Common),
    /// Write Λ, α and χ trajectories, and the finite-N blocks with --N.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N")]
        n_players: Option<usize>,
    },
    /// Sup-norm distance of the rescaled finite-N solution to the limit.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long = "Ns", value_delimiter = ',', default_values_t = [20, 40, 80, 160])]
        ns: Vec<usize>,
    },
    /// Check the limit system against the two limiting control problems.
    Consistency(Common),
    /// Monte Carlo estimate of realized costs.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N")]
        n_players: usize,
        #[arg(long, default_value_t = 20000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Nash)]
        mode: ModeArg,
        /// Write sampled trajectories of the first K paths.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
        /// Keep every K-th step in the path dump.
        #[arg(long, default_value_t = 10)]
        dump_stride: usize,
    },
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_path: String,
    pub tolerances: serde_json::Value,
    pub grid: serde_json::Value,
    pub outputs: Vec<String>,
    pub verdicts: serde_json::Value,
}

struct Run {
    command: &'static str,
    common: Common,
    scenario: Scenario,
    grid: TimeGrid,
    opts: SolveOptions,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, common: Common) -> Result<Self> {
        let scenario = Scenario::from_path(&common.config)?;
        let grid = TimeGrid::new(scenario.params.horizon, common.grid_points)?;
        let opts = SolveOptions::with_tol(Tolerances::with_rtol_atol(common.rtol, common.atol));
        fs::create_dir_all(&common.out)?;
        info!("{command}: {} on {} grid points", common.config.display(), common.grid_points);
        Ok(Self {
            command,
            common,
            scenario,
            grid,
            opts,
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn write_csv(&mut self, name: &str, traj: &crate::ode::Trajectory, blocks: &[&str]) -> Result<()> {
        let path = self.path(name);
        write_trajectory_csv(&path, traj, blocks)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn finish(self, verdicts: serde_json::Value) -> Result<()> {
        let tol = &self.opts.tol;
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            command: self.command.to_string(),
            config_path: self.common.config.display().to_string(),
            tolerances: json!({
                "rtol": tol.rtol,
                "atol": tol.atol,
                "blowup_threshold": tol.blowup_threshold,
                "min_step_frac": tol.min_step_frac,
                "bracket_width_frac": tol.bracket_width_frac,
            }),
            grid: json!({
                "t_start": self.grid.t_start(),
                "t_end": self.grid.t_end(),
                "points": self.grid.len(),
                "spacing": self.grid.spacing(),
            }),
            outputs: self.outputs,
            verdicts,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.common.out.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    fn limit(&self) -> Result<(Outcome<LimitSolution>, SolvabilityVerdict)> {
        solve_limit_full(&self.scenario.params, &self.grid, &self.opts)
    }
}

fn escape_note(v: &SolvabilityVerdict) -> String {
    match v.escape_interval() {
        Some((lo, hi)) => format!("finite escape time in ({lo:.6}, {hi:.6})"),
        None => "no escape".into(),
    }
}

fn check(common: Common) -> Result<i32> {
    let mut run = Run::new("check", common)?;
    let (_, verdict) = crate::limit::solve_limit_riccati(&run.scenario.params, &run.grid, &run.opts)?;
    let text = serde_json::to_string_pretty(&verdict)?;
    println!("{text}");
    run.write("verdict.json", &(text + "\n"))?;
    run.finish(json!({ "limit": verdict }))?;
    Ok(if verdict.solvable { 0 } else { 1 })
}

fn solve(common: Common, n_players: Option<usize>) -> Result<i32> {
    if let Some(n) = n_players {
        if n < 2 {
            return Err(Error::InvalidInput(format!("--N must be at least 2, got {n}")));
        }
    }
    let mut run = Run::new("solve", common)?;
    let mut code = 0;
    let (limit, verdict) = run.limit()?;
    match &limit {
        Outcome::Solved(l) => {
            for name in LIMIT_BLOCKS {
                run.write_csv(&format!("{name}.csv"), &l.riccati.trajectory, &[name])?;
            }
            run.write_csv("alpha.csv", &l.offsets.trajectory, &LIMIT_OFFSETS)?;
            run.write_csv("chi.csv", &l.costs.trajectory, &LIMIT_COSTS)?;
            println!("limit system solved on [0, {}]", run.grid.t_end());
        }
        Outcome::Escaped(_) => {
            eprintln!("limit system: {}", escape_note(&verdict));
            code = 1;
        }
    }
    let mut finite = serde_json::Value::Null;
    if let Some(n) = n_players {
        match solve_structured_full(&run.scenario.params, n, &run.grid, &run.opts)? {
            Outcome::Solved((s, o)) => {
                for name in RICCATI_BLOCKS {
                    run.write_csv(&format!("{name}.csv"), &s.trajectory, &[name])?;
                }
                run.write_csv("theta.csv", &o.trajectory, &OFFSET_BLOCKS)?;
                run.write_csv("r.csv", &o.trajectory, &COST_BLOCKS)?;
                println!("N = {n} system solved on [0, {}]", run.grid.t_end());
                finite = json!({ "N": n, "solvable": true });
            }
            Outcome::Escaped(e) => {
                eprintln!("N = {n} system: finite escape time in ({:.6}, {:.6})", e.t_lo, e.t_hi);
                finite = json!({ "N": n, "solvable": false, "escape_lo": e.t_lo, "escape_hi": e.t_hi });
                code = 1;
            }
        }
    }
    run.finish(json!({ "limit": verdict, "finite_n": finite }))?;
    Ok(code)
}

fn compare(common: Common, ns: Vec<usize>) -> Result<i32> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::InvalidInput("--Ns needs positive population sizes".into()));
    }
    let mut run = Run::new("compare", common)?;
    let (limit, verdict) = run.limit()?;
    let Outcome::Solved(l) = limit else {
        eprintln!("limit system not solvable: {}", escape_note(&verdict));
        run.finish(json!({ "limit": verdict }))?;
        return Ok(1);
    };
    let table = compare_against(&run.scenario.params, &l, &ns, &run.opts)?;
    let csv = table.to_csv();
    print!("{csv}");
    run.write("convergence.csv", &csv)?;
    let escaped: Vec<usize> = table.rows.iter().filter(|r| r.errors.is_none()).map(|r| r.n_players).collect();
    let rate = (ns.len() > 1).then(|| table.rate_within(1.5, 2.5));
    run.finish(json!({ "limit": verdict, "escaped_N": escaped, "rate_within_1_5_2_5": rate }))?;
    Ok(0)
}

fn consistency(common: Common) -> Result<i32> {
    let mut run = Run::new("consistency", common)?;
    let (limit, verdict) = run.limit()?;
    let Outcome::Solved(l) = limit else {
        eprintln!("limit system not solvable: {}", escape_note(&verdict));
        run.finish(json!({ "limit": verdict }))?;
        return Ok(1);
    };
    let bt = solve_tracking(&run.scenario.params, &run.grid, &run.opts)?;
    let report = verify_consistency(&l, &bt, &run.opts)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    run.write("consistency.json", &(text + "\n"))?;
    let pass = report.pass;
    run.finish(json!({ "limit": verdict, "consistency": report }))?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    #[serde(flatten)]
    report: &'a SimReport,
    /// Value-function average for Nash feedback, limiting costs for the
    /// decentralized strategies.
    predicted: serde_json::Value,
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    common: Common,
    n_players: usize,
    paths: usize,
    dt: f64,
    seed: u64,
    mode: ModeArg,
    dump_paths: usize,
    dump_stride: usize,
) -> Result<i32> {
    if paths < 2 {
        return Err(Error::InvalidInput(format!(
            "at least 2 paths are needed for a standard error, got {paths}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let mut run = Run::new("simulate", common)?;
    let p = run.scenario.params.clone();
    let law = run.scenario.law.clone();
    // The feedback grid has the simulation step as its spacing.
    let steps = (p.horizon / dt).round() as usize;
    let gain_grid = TimeGrid::new(p.horizon, steps.max(1) + 1)?;
    let cfg = SimConfig {
        n_players,
        num_paths: paths,
        dt,
        seed,
        law: law.clone(),
        mode: match mode {
            ModeArg::Nash => SimMode::NashExact,
            ModeArg::Decentralized => SimMode::Decentralized,
        },
    };
    let (sched, predicted) = match mode {
        ModeArg::Nash => match solve_structured_full(&p, n_players, &gain_grid, &run.opts)? {
            Outcome::Solved((s, o)) => {
                let dense = assemble_dense(&s, &o)?;
                let v0 = predicted_value(&dense.p(0, 0), &dense.s(0, 0), dense.r(0, 0), &law);
                let v1 = predicted_value(&dense.p(1, 0), &dense.s(1, 0), dense.r(1, 0), &law);
                (FeedbackSchedule::nash(&p, &s, &o)?, json!({ "J0": v0, "J1": v1 }))
            }
            Outcome::Escaped(e) => {
                eprintln!("N = {n_players} system: finite escape time in ({:.6}, {:.6})", e.t_lo, e.t_hi);
                run.finish(json!({ "finite_n": { "N": n_players, "solvable": false } }))?;
                return Ok(1);
            }
        },
        ModeArg::Decentralized => match solve_limit_full(&p, &gain_grid, &run.opts)? {
            (Outcome::Solved(l), _) => {
                let g = limit_strategy_gains(&p, &l.riccati, &l.offsets)?;
                let j = asymptotic_costs(&l.riccati, &l.offsets, &l.costs, &law)?;
                (FeedbackSchedule::decentralized(&p, &g), json!({ "J0": j.j0, "J1": j.j1 }))
            }
            (Outcome::Escaped(_), verdict) => {
                eprintln!("limit system not solvable: {}", escape_note(&verdict));
                run.finish(json!({ "limit": verdict }))?;
                return Ok(1);
            }
        },
    };
    let report = simulate(&p, &sched, &cfg)?;
    let text = serde_json::to_string_pretty(&EstimateReport {
        report: &report,
        predicted: predicted.clone(),
    })?;
    println!("{text}");
    run.write("estimate.json", &(text + "\n"))?;
    if dump_paths > 0 {
        let csv = path_csv(&p, &sched, &cfg, dump_paths, dump_stride)?;
        run.write("paths.csv", &csv)?;
    }
    run.finish(json!({ "J0": report.j0, "J1": report.j1, "predicted": predicted }))?;
    Ok(0)
}

/// Execute a parsed command. Errors are returned, not printed.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Check(c) => check(c),
        Command::Solve { common, n_players } => solve(common, n_players),
        Command::Compare { common, ns } => compare(common, ns),
        Command::Consistency(c) => consistency(c),
        Command::Simulate {
            common,
            n_players,
            paths,
            dt,
            seed,
            mode,
            dump_paths,
            dump_stride,
        } => simulate_cmd(common, n_players, paths, dt, seed, mode, dump_paths, dump_stride),
    }
}

/// Exit code for an error: 2 for bad input, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::InvalidInput(_) | Error::Json(_) | Error::Io(_) | Error::GridMismatch(_) => 2,
        Error::Escaped { .. } | Error::Contract(_) | Error::Consistency(_) | Error::NonFiniteState { .. } => 1,
    }
}

fn init_logging() {
    let level = match std::env::var("MFG_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        Ok("info") => LevelFilter::Info,
        _ => LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

/// Parse `args`, run, print any error and return the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Whether `path` holds a manifest listing only files that exist.
pub fn manifest_outputs_exist(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let outputs = v["outputs"].as_array().cloned().unwrap_or_default();
    Ok(outputs.iter().all(|o| o.as_str().is_some_and(|p| Path::new(p).exists())))
}
