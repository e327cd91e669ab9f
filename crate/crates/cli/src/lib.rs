//! `glbulk`: command-line harness over `glbulk-core` with a content-addressed result store.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod store;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use glbulk_core::cell::BoundaryCondition;
use glbulk_core::gl::FieldMode;
use glbulk_core::local::Form;

use crate::commands::{run, Outcome, A_FILE, PSI_FILE};
use crate::config::{parse_list, Command, DomainKind, RunConfig};
use crate::error::CliError;
use crate::plot::{emit_plot_data, PlotKind};
use crate::store::{ResultStore, RunStatus};

pub const WORKERS_ENV: &str = "GLBULK_WORKERS";
pub const STORE_ENV: &str = "GLBULK_STORE";
pub const DEFAULT_STORE: &str = "glbulk-runs";

#[derive(Debug, Parser)]
#[command(name = "glbulk", version, about = "Bulk Ginzburg-Landau energy: cell problems, g(b), radial sectors, 2D solves")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, display_order = 100)]
    pub config: Option<PathBuf>,
    /// Result store root (default: $GLBULK_STORE, then ./glbulk-runs).
    #[arg(long, global = true, display_order = 100)]
    pub store: Option<PathBuf>,
    /// Worker threads (default: $GLBULK_WORKERS, then the config, then all cores).
    #[arg(long, global = true, display_order = 100)]
    pub workers: Option<usize>,
    /// Seed of the random starts.
    #[arg(long, global = true, display_order = 100)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Minimize one cell problem.
    #[command(allow_negative_numbers = true)]
    Cell {
        /// Reduced field.
        #[arg(long)]
        b: Option<f64>,
        /// Side of the square cell.
        #[arg(long)]
        r: Option<f64>,
        /// dirichlet or neumann.
        #[arg(long)]
        bc: Option<BoundaryCondition>,
        /// Nodes per side.
        #[arg(long)]
        n: Option<usize>,
        /// Random starts.
        #[arg(long)]
        starts: Option<usize>,
        /// Copy of the result CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bulk energy and one-sided derivatives on a grid of b.
    #[command(allow_negative_numbers = true)]
    Gcurve {
        /// start:stop:count
        #[arg(long)]
        b_grid: Option<String>,
        /// Comma-separated cell sides.
        #[arg(long)]
        ladder: Option<String>,
        /// Comma-separated property checks that decide the exit status.
        #[arg(long)]
        assert: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Radial-sector energies g_m.
    #[command(allow_negative_numbers = true)]
    Radial {
        /// Single winding number.
        #[arg(long, allow_hyphen_values = true)]
        m: Option<i64>,
        #[arg(long)]
        b: Option<f64>,
        /// Comma-separated disc radii.
        #[arg(long = "R-ladder")]
        r_ladder: Option<String>,
        /// lo:hi
        #[arg(long, allow_hyphen_values = true)]
        scan_m: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize the full 2D functional.
    #[command(allow_negative_numbers = true)]
    Solve {
        #[arg(long, value_enum)]
        domain: Option<DomainKind>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Applied field over kappa.
        #[arg(long)]
        b: Option<f64>,
        /// coupled or frozen.
        #[arg(long)]
        mode: Option<FieldMode>,
        /// Nodes per side (default: resolves the magnetic length).
        #[arg(long)]
        n: Option<usize>,
        /// Directory for psi.csv and a.csv.
        #[arg(long)]
        dump_fields: Option<PathBuf>,
        /// Copy of the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a solved state against the bulk curve.
    #[command(allow_negative_numbers = true)]
    Verify {
        /// state.json or a solve run directory.
        #[arg(long)]
        state: Option<PathBuf>,
        /// gcurve CSV or a gcurve run directory.
        #[arg(long)]
        gcurve: Option<PathBuf>,
        /// `auto`, or `x1,x2,side` triples separated by `;`.
        #[arg(long)]
        windows: Option<String>,
        /// Interior margin as a fraction of the domain.
        #[arg(long)]
        margin: Option<f64>,
        /// Which form of the kinetic and density targets is asserted: stated or weighted.
        #[arg(long)]
        form: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one command over a list of parameter values.
    #[command(allow_negative_numbers = true)]
    Sweep {
        /// Command to sweep (cell, gcurve, radial, solve, verify).
        #[arg(long, value_enum)]
        over: Option<Command>,
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        /// Verify every solved state against this gcurve CSV.
        #[arg(long)]
        verify_gcurve: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flat CSV of stored results for plotting.
    #[command(allow_negative_numbers = true)]
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Comma-separated run directories or hashes (default: every matching run in the store).
        #[arg(long)]
        runs: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn json_value(token: &str) -> serde_json::Value {
    let t = token.trim();
    serde_json::from_str(t).unwrap_or_else(|_| serde_json::Value::String(t.to_string()))
}

/// Applies the flags of `cmd` on top of `cfg`; `None` for `plot`, which is not a stored run.
fn merge(cfg: &mut RunConfig, cmd: Cmd) -> Result<Option<Command>, CliError> {
    let command = match cmd {
        Cmd::Cell { b, r, bc, n, starts, out } => {
            set(&mut cfg.cell.b, b);
            set(&mut cfg.cell.r, r);
            set(&mut cfg.cell.bc, bc);
            set(&mut cfg.cell.n, n);
            set(&mut cfg.cell.starts, starts);
            set(&mut cfg.out, out);
            Command::Cell
        }
        Cmd::Gcurve { b_grid, ladder, assert, out } => {
            set(&mut cfg.gcurve.b_grid, b_grid);
            set(&mut cfg.gcurve.ladder, ladder.as_deref().map(parse_list).transpose()?);
            let names = assert.map(|s| s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect());
            set(&mut cfg.gcurve.assert, names);
            set(&mut cfg.out, out);
            Command::Gcurve
        }
        Cmd::Radial { m, b, r_ladder, scan_m, out } => {
            set(&mut cfg.radial.m, m);
            set(&mut cfg.radial.b, b);
            set(&mut cfg.radial.r_ladder, r_ladder.as_deref().map(parse_list).transpose()?);
            set(&mut cfg.radial.scan_m, scan_m);
            set(&mut cfg.out, out);
            Command::Radial
        }
        Cmd::Solve { domain, radius, kappa, b, mode, n, dump_fields, out } => {
            set(&mut cfg.solve.domain, domain);
            set(&mut cfg.solve.radius, radius);
            set(&mut cfg.solve.kappa, kappa);
            set(&mut cfg.solve.b, b);
            set(&mut cfg.solve.mode, mode);
            set(&mut cfg.solve.n, n);
            set(&mut cfg.dump_fields, dump_fields);
            set(&mut cfg.out, out);
            Command::Solve
        }
        Cmd::Verify { state, gcurve, windows, margin, form, out } => {
            set(&mut cfg.verify.state, state);
            set(&mut cfg.verify.gcurve, gcurve);
            set(&mut cfg.verify.windows, windows);
            set(&mut cfg.verify.margin, margin);
            let form = match form.as_deref() {
                None => None,
                Some("stated") => Some(Form::Stated),
                Some("weighted") => Some(Form::Weighted),
                Some(other) => return Err(CliError::Config(format!("unknown form '{other}'"))),
            };
            set(&mut cfg.verify.form, form);
            set(&mut cfg.out, out);
            Command::Verify
        }
        Cmd::Sweep { over, parameter, values, verify_gcurve, out } => {
            set(&mut cfg.sweep.command, over);
            set(&mut cfg.sweep.parameter, parameter);
            set(&mut cfg.sweep.values, values.map(|v| v.split(',').map(json_value).collect()));
            set(&mut cfg.sweep.verify_gcurve, verify_gcurve);
            set(&mut cfg.out, out);
            Command::Sweep
        }
        Cmd::Plot { .. } => return Ok(None),
    };
    Ok(Some(command))
}

fn workers(cli: Option<usize>, cfg: Option<usize>) -> Result<Option<usize>, CliError> {
    if cli.is_some() {
        return Ok(cli);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{WORKERS_ENV}='{v}' is not a count"))),
        Err(_) => Ok(cfg),
    }
}

fn store_root(cli: Option<PathBuf>, cfg: Option<PathBuf>) -> PathBuf {
    cli.or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from)).or(cfg).unwrap_or_else(|| DEFAULT_STORE.into())
}

fn copy(from: &Path, to: &Path) -> Result<(), CliError> {
    if let Some(parent) = to.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::copy(from, to).map(|_| ()).map_err(CliError::io(to))
}

fn export(outcome: &Outcome, cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(out) = &cfg.out {
        copy(&outcome.primary(), out)?;
    }
    if let (Some(dir), Command::Solve) = (&cfg.dump_fields, outcome.record.config.command) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        for name in [PSI_FILE, A_FILE] {
            copy(&outcome.dir.join(name), &dir.join(name))?;
        }
    }
    Ok(())
}

/// Parses, runs and reports; returns the process exit status.
pub fn execute(cli: Cli) -> Result<RunStatus, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if let Some(n) = workers(cli.workers, cfg.workers)? {
        if n == 0 {
            return Err(CliError::Config("worker count must be positive".into()));
        }
        // Only the first pool of a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let store = ResultStore::open(store_root(cli.store.clone(), cfg.store.clone()))?;
    if let Cmd::Plot { kind, runs, out } = &cli.command {
        let runs: Vec<String> = runs.as_deref().map(|s| s.split(',').map(|t| t.trim().to_string()).collect()).unwrap_or_default();
        let csv = emit_plot_data(&store, *kind, &runs)?;
        match out {
            Some(p) => std::fs::write(p, csv).map_err(CliError::io(p))?,
            None => print!("{csv}"),
        }
        return Ok(RunStatus::Ok);
    }
    let command = merge(&mut cfg, cli.command)?.expect("plot handled above");
    let spec = cfg.resolve(command)?;
    let outcome = run(&spec, &store)?;
    export(&outcome, &cfg)?;
    println!(
        "{} {} {}{} {}",
        command.as_str(),
        outcome.record.hash,
        match outcome.record.status {
            RunStatus::Ok => "ok",
            RunStatus::AssertionFailed => "assertion_failed",
            RunStatus::SolverFailed => "solver_failed",
        },
        if outcome.cache_hit { " (cached)" } else { "" },
        outcome.dir.display()
    );
    if outcome.record.status == RunStatus::AssertionFailed {
        eprintln!("glbulk: {} hard assertion(s) failed; see {}", outcome.record.failures, outcome.primary().display());
    }
    Ok(outcome.record.status)
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("glbulk: {e}");
            e.exit_code()
        }
    }
}
