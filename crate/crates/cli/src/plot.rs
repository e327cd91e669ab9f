//! Flat CSV projections of stored runs for plotting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use glbulk_core::local::{Form, InequalityRow};
use serde::Deserialize;

use crate::commands::{load_state, read_rows, GcurveRow, GCURVE_FILE, GM_FILE, STATE_FILE, VERIFY_FILE};
use crate::config::Command;
use crate::error::CliError;
use crate::store::{ResultStore, RunRecord, RUN_RECORD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    #[value(name = "g_curve")]
    GCurve,
    #[value(name = "gm_scan")]
    GmScan,
    #[value(name = "density_profile")]
    DensityProfile,
    #[value(name = "slack_vs_kappa")]
    SlackVsKappa,
}

impl PlotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GCurve => "g_curve",
            Self::GmScan => "gm_scan",
            Self::DensityProfile => "density_profile",
            Self::SlackVsKappa => "slack_vs_kappa",
        }
    }

    fn source(&self) -> Command {
        match self {
            Self::GCurve => Command::Gcurve,
            Self::GmScan => Command::Radial,
            Self::DensityProfile => Command::Solve,
            Self::SlackVsKappa => Command::Verify,
        }
    }

    fn columns(&self) -> &'static [(&'static str, &'static str)] {
        match self {
            Self::GCurve => &[
                ("b", "applied field ratio"),
                ("g", "bulk energy per area"),
                ("lo", "Neumann lower bracket"),
                ("hi", "Dirichlet upper bracket"),
                ("d_minus", "left derivative"),
                ("d_plus", "right derivative"),
            ],
            Self::GmScan => &[("m", "winding number"), ("g_m", "radial-sector bulk energy")],
            Self::DensityProfile => &[
                ("x1", "position along the horizontal midline"),
                ("x2", "height of the midline"),
                ("density", "|psi|^2"),
            ],
            Self::SlackVsKappa => &[
                ("kappa", "GL parameter of the verified state"),
                ("item", "inequality name, suffixed with :weighted for the b-weighted form"),
                ("slack", "smallest bound shift that makes the inequality hold"),
            ],
        }
    }
}

impl std::fmt::Display for PlotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A run given as a directory or as a hash inside the store.
pub fn resolve_run(store: &ResultStore, reference: &str) -> Result<(PathBuf, RunRecord), CliError> {
    let as_path = Path::new(reference);
    let dir = if as_path.join(RUN_RECORD).is_file() { as_path.to_path_buf() } else { store.run_dir(reference) };
    let text = std::fs::read_to_string(dir.join(RUN_RECORD)).map_err(|_| CliError::Config(format!("no run '{reference}'")))?;
    let record: RunRecord = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    Ok((dir, record))
}

/// Completed runs of `command` in manifest order, each once.
fn runs_of(store: &ResultStore, command: Command) -> Result<Vec<String>, CliError> {
    let mut seen: Vec<String> = Vec::new();
    for e in store.manifest()? {
        if e.command == command.as_str() && !seen.contains(&e.hash) && store.run_dir(&e.hash).join(RUN_RECORD).is_file() {
            seen.push(e.hash);
        }
    }
    Ok(seen)
}

pub fn emit_plot_data(store: &ResultStore, kind: PlotKind, runs: &[String]) -> Result<String, CliError> {
    let selected = if runs.is_empty() { runs_of(store, kind.source())? } else { runs.to_vec() };
    if selected.is_empty() {
        return Err(CliError::Config(format!("no {} runs to plot", kind.source().as_str())));
    }
    let mut sources = Vec::new();
    for r in &selected {
        let (dir, record) = resolve_run(store, r)?;
        if record.config.command != kind.source() {
            return Err(CliError::Config(format!(
                "run {} is a {} run; {kind} needs {} runs",
                record.hash,
                record.config.command.as_str(),
                kind.source().as_str()
            )));
        }
        sources.push((dir, record));
    }
    let mut out = format!("# kind: {kind}\n");
    for (name, doc) in kind.columns() {
        writeln!(out, "# {name}: {doc}").unwrap();
    }
    let hashes: Vec<&str> = sources.iter().map(|(_, r)| r.hash.as_str()).collect();
    writeln!(out, "# runs: {}", hashes.join(",")).unwrap();
    let names: Vec<&str> = kind.columns().iter().map(|c| c.0).collect();
    writeln!(out, "{}", names.join(",")).unwrap();
    match kind {
        PlotKind::GCurve => {
            let mut rows: Vec<GcurveRow> = Vec::new();
            for (dir, _) in &sources {
                rows.extend(read_rows::<GcurveRow>(&dir.join(GCURVE_FILE))?);
            }
            rows.sort_by(|a, b| a.b.total_cmp(&b.b));
            rows.dedup_by(|a, b| a.b == b.b);
            for r in rows {
                writeln!(out, "{},{},{},{},{},{}", r.b, r.g, r.lo, r.hi, r.d_minus, r.d_plus).unwrap();
            }
        }
        PlotKind::GmScan => {
            #[derive(Deserialize)]
            struct Gm {
                m: i64,
                b: f64,
                g_m: f64,
            }
            let mut rows: Vec<Gm> = Vec::new();
            for (dir, _) in &sources {
                rows.extend(read_rows::<Gm>(&dir.join(GM_FILE))?);
            }
            if rows.windows(2).any(|w| w[0].b != w[1].b) {
                return Err(CliError::Config("gm_scan runs mix several b values; select runs at one b".into()));
            }
            rows.sort_by_key(|r| r.m);
            rows.dedup_by_key(|r| r.m);
            for r in rows {
                writeln!(out, "{},{}", r.m, r.g_m).unwrap();
            }
        }
        PlotKind::DensityProfile => {
            for (dir, _) in &sources {
                let state = load_state(&dir.join(STATE_FILE))?;
                let g = state.psi.grid;
                let j = g.ny() / 2;
                for i in 0..g.nx() {
                    let [x1, x2] = g.node(i, j);
                    writeln!(out, "{x1},{x2},{}", state.psi.at(i, j).norm_sqr()).unwrap();
                }
            }
        }
        PlotKind::SlackVsKappa => {
            #[derive(Deserialize)]
            struct Theorem {
                kappa: f64,
                rows: Vec<InequalityRow>,
            }
            #[derive(Deserialize)]
            struct Report {
                theorem: Theorem,
            }
            let mut reports = Vec::new();
            for (dir, _) in &sources {
                let p = dir.join(VERIFY_FILE);
                let text = std::fs::read_to_string(&p).map_err(CliError::io(&p))?;
                let r: Report = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                reports.push(r.theorem);
            }
            reports.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
            for t in reports {
                for row in &t.rows {
                    let item = match row.form {
                        Form::Stated => row.name.clone(),
                        Form::Weighted => format!("{}:weighted", row.name),
                    };
                    writeln!(out, "{},{item},{}", t.kappa, row.slack).unwrap();
                }
            }
        }
    }
    Ok(out)
}
