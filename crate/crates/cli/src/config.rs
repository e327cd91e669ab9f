//! Run configuration: TOML sections merged with command-line flags, then
//! resolved into a fully explicit [`RunSpec`] whose JSON form is hashed.

use std::path::{Path, PathBuf};

use glbulk_core::bulk::{BulkTolerances, DEFAULT_LADDER, DEFAULT_STEPS};
use glbulk_core::cell::{default_grid_n, BoundaryCondition};
use glbulk_core::gl::{DomainSpec, FieldMode, Shape};
use glbulk_core::local::Form;
use glbulk_core::optim::{SolverOptions, StepRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PROGRAM: &str = concat!("glbulk ", env!("CARGO_PKG_VERSION"));

pub const DEFAULT_R_LADDER: [f64; 3] = [8.0, 16.0, 32.0];
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Cell,
    Gcurve,
    Radial,
    Solve,
    Verify,
    Sweep,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cell => "cell",
            Self::Gcurve => "gcurve",
            Self::Radial => "radial",
            Self::Solve => "solve",
            Self::Verify => "verify",
            Self::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub n_starts: Option<usize>,
    pub step_rule: Option<StepRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub b: Option<f64>,
    pub r: Option<f64>,
    pub bc: Option<BoundaryCondition>,
    pub n: Option<usize>,
    pub starts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcurveSection {
    /// `start:stop:count`, endpoints included.
    pub b_grid: Option<String>,
    pub ladder: Option<Vec<f64>>,
    pub steps: Option<Vec<f64>>,
    pub tolerances: Option<BulkTolerances>,
    /// Property checks that decide the exit status.
    pub assert: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSection {
    pub m: Option<i64>,
    pub b: Option<f64>,
    pub r_ladder: Option<Vec<f64>>,
    /// `lo:hi`, inclusive.
    pub scan_m: Option<String>,
    pub residual_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Square,
    Disc,
    Rectangle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub domain: Option<DomainKind>,
    pub radius: Option<f64>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    pub kappa: Option<f64>,
    pub b: Option<f64>,
    pub mode: Option<FieldMode>,
    /// Nodes per axis of the bounding box; resolved from `kappa` and `b` when absent.
    pub n: Option<usize>,
    pub max_outer: Option<usize>,
    pub projection_tol: Option<f64>,
    pub max_modulus_tol: Option<f64>,
    pub identity_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub state: Option<PathBuf>,
    pub gcurve: Option<PathBuf>,
    /// `auto`, or `x1,x2,side` triples separated by `;`.
    pub windows: Option<String>,
    pub margin: Option<f64>,
    pub c: Option<f64>,
    pub form: Option<Form>,
    pub quartic: Option<f64>,
    pub band: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub command: Option<Command>,
    /// Key inside the swept command's section, e.g. `kappa`.
    pub parameter: Option<String>,
    pub values: Option<Vec<serde_json::Value>>,
    /// Bulk curve for a `verify` after every `solve`.
    pub verify_gcurve: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dump_fields: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub gcurve: GcurveSection,
    #[serde(default)]
    pub radial: RadialSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        let s = &self.solver;
        SolverOptions {
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            grad_tol: s.grad_tol.unwrap_or(d.grad_tol),
            n_starts: s.n_starts.unwrap_or(d.n_starts),
            seed: self.seed.unwrap_or(0),
            step_rule: s.step_rule.unwrap_or(d.step_rule),
        }
    }

    /// Copy of the config with `section.key` set to `value`; unknown keys are rejected.
    pub fn with_parameter(&self, command: Command, key: &str, value: &serde_json::Value) -> Result<Self, CliError> {
        let mut tree = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))?;
        let section = match key {
            "seed" => None,
            _ => Some(command.as_str()),
        };
        let slot = match section {
            Some(s) => tree.get_mut(s).and_then(|v| v.as_object_mut()),
            None => tree.as_object_mut(),
        }
        .ok_or_else(|| CliError::Config(format!("no section for '{key}'")))?;
        slot.insert(key.to_string(), value.clone());
        serde_json::from_value(tree).map_err(|e| CliError::Config(format!("sweep parameter '{key}': {e}")))
    }

    pub fn resolve(&self, command: Command) -> Result<RunSpec, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for '{}' but the command is '{}'",
                    c.as_str(),
                    command.as_str()
                )));
            }
        }
        let solver = self.solver_options();
        solver.validate()?;
        let params = match command {
            Command::Cell => Params::Cell(self.resolve_cell(&solver)?),
            Command::Gcurve => Params::Gcurve(self.resolve_gcurve(&solver)?),
            Command::Radial => Params::Radial(self.resolve_radial()?),
            Command::Solve => Params::Solve(self.resolve_solve()?),
            Command::Verify => Params::Verify(self.resolve_verify()?),
            Command::Sweep => Params::Sweep(self.resolve_sweep()?),
        };
        Ok(RunSpec { program: PROGRAM.to_string(), command, solver, params })
    }

    fn resolve_cell(&self, solver: &SolverOptions) -> Result<CellParams, CliError> {
        let s = &self.cell;
        let b = required(s.b, "cell.b")?;
        let r = required(s.r, "cell.r")?;
        positive(b, "cell.b")?;
        positive(r, "cell.r")?;
        Ok(CellParams {
            b,
            r,
            bc: s.bc.unwrap_or(BoundaryCondition::Dirichlet),
            n: s.n.unwrap_or_else(|| default_grid_n(r)),
            starts: s.starts.unwrap_or(solver.n_starts),
        })
    }

    fn resolve_gcurve(&self, solver: &SolverOptions) -> Result<GcurveParams, CliError> {
        let s = &self.gcurve;
        let grid = s.b_grid.as_deref().ok_or_else(|| CliError::Config("gcurve.b_grid is required".into()))?;
        let b_grid = parse_grid(grid)?;
        let opts = glbulk_core::bulk::CurveOptions {
            ladder: s.ladder.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec()),
            steps: s.steps.clone().unwrap_or_else(|| DEFAULT_STEPS.to_vec()),
            solver: solver.clone(),
            tolerances: s.tolerances.unwrap_or_default(),
        };
        opts.validate()?;
        let assert = s.assert.clone().unwrap_or_else(|| DEFAULT_ASSERTED.iter().map(|n| n.to_string()).collect());
        if let Some(bad) = assert.iter().find(|n| !KNOWN_CHECKS.contains(&n.as_str())) {
            return Err(CliError::Config(format!("unknown property check '{bad}'")));
        }
        Ok(GcurveParams { b_grid, ladder: opts.ladder, steps: opts.steps, tolerances: opts.tolerances, assert })
    }

    fn resolve_radial(&self) -> Result<RadialParams, CliError> {
        let s = &self.radial;
        let b = required(s.b, "radial.b")?;
        positive(b, "radial.b")?;
        let (lo, hi) = match (&s.scan_m, s.m) {
            (Some(range), _) => parse_range(range)?,
            (None, Some(m)) => (m, m),
            (None, None) => return Err(CliError::Config("radial needs m or scan_m".into())),
        };
        let r_ladder = s.r_ladder.clone().unwrap_or_else(|| DEFAULT_R_LADDER.to_vec());
        if r_ladder.is_empty() || r_ladder.windows(2).any(|w| w[1] <= w[0]) || r_ladder[0] <= 0.0 {
            return Err(CliError::Config("radial.r_ladder must be positive and increasing".into()));
        }
        Ok(RadialParams { b, m_range: (lo, hi), r_ladder, residual_tol: s.residual_tol.unwrap_or(DEFAULT_RESIDUAL_TOL) })
    }

    fn resolve_solve(&self) -> Result<SolveParams, CliError> {
        let s = &self.solve;
        let kappa = required(s.kappa, "solve.kappa")?;
        let b = required(s.b, "solve.b")?;
        positive(kappa, "solve.kappa")?;
        positive(b, "solve.b")?;
        let shape = match s.domain.unwrap_or(DomainKind::Square) {
            DomainKind::Square => Shape::UnitSquare,
            DomainKind::Disc => Shape::Disc { radius: s.radius.unwrap_or(0.5) },
            DomainKind::Rectangle => Shape::Rectangle {
                lx: required(s.lx, "solve.lx")?,
                ly: required(s.ly, "solve.ly")?,
            },
        };
        let domain = match s.n {
            Some(n) => DomainSpec::new(shape, [n, n]),
            None => DomainSpec::resolved(shape, kappa, b),
        };
        domain.validate()?;
        let d = glbulk_core::gl::GLOptions::default();
        Ok(SolveParams {
            domain,
            kappa,
            b,
            mode: s.mode.unwrap_or(FieldMode::FrozenField),
            max_outer: s.max_outer.unwrap_or(d.max_outer),
            projection_tol: s.projection_tol.unwrap_or(d.projection_tol),
            max_modulus_tol: s.max_modulus_tol.unwrap_or(1e-4),
            identity_tol: s.identity_tol.unwrap_or(1e-4),
        })
    }

    fn resolve_verify(&self) -> Result<VerifyParams, CliError> {
        let s = &self.verify;
        let state = required(s.state.clone(), "verify.state")?;
        let state = if state.is_dir() { state.join(crate::commands::STATE_FILE) } else { state };
        let gcurve = required(s.gcurve.clone(), "verify.gcurve")?;
        let gcurve = if gcurve.is_dir() { gcurve.join(crate::commands::GCURVE_FILE) } else { gcurve };
        let windows = parse_windows(s.windows.as_deref().unwrap_or("auto"))?;
        let margin = s.margin.unwrap_or(0.15);
        if !(0.0..0.5).contains(&margin) {
            return Err(CliError::Config(format!("verify.margin = {margin} outside [0, 0.5)")));
        }
        Ok(VerifyParams {
            state_digest: file_digest(&state)?,
            gcurve_digest: file_digest(&gcurve)?,
            state,
            gcurve,
            windows,
            margin,
            c: s.c.unwrap_or(1.5),
            form: s.form.unwrap_or(Form::Stated),
            quartic: s.quartic.unwrap_or(0.08),
            band: s.band.unwrap_or(0.12),
        })
    }

    fn resolve_sweep(&self) -> Result<SweepParams, CliError> {
        let s = &self.sweep;
        let command = required(s.command, "sweep.command")?;
        if command == Command::Sweep {
            return Err(CliError::Config("sweeps do not nest".into()));
        }
        let parameter = required(s.parameter.clone(), "sweep.parameter")?;
        let values = required(s.values.clone(), "sweep.values")?;
        if values.is_empty() {
            return Err(CliError::Config("sweep.values is empty".into()));
        }
        if s.verify_gcurve.is_some() && command != Command::Solve {
            return Err(CliError::Config("sweep.verify_gcurve only applies to solve sweeps".into()));
        }
        let mut base = self.clone();
        base.command = None;
        base.sweep = SweepSection::default();
        base.out = None;
        base.dump_fields = None;
        let runs = values
            .iter()
            .map(|v| base.with_parameter(command, &parameter, v)?.resolve(command))
            .collect::<Result<Vec<_>, _>>()?;
        let verify = match &s.verify_gcurve {
            Some(path) => {
                let mut v = base.verify.clone();
                v.state = None;
                v.gcurve = Some(path.clone());
                let digest = file_digest(path)?;
                Some(VerifyTemplate { section: v, gcurve_digest: digest })
            }
            None => None,
        };
        Ok(SweepParams { command, parameter, values, runs, verify, base: Box::new(base) })
    }
}

/// Property checks asserted by `gcurve` unless the config lists its own.
pub const DEFAULT_ASSERTED: [&str; 10] = [
    "monotone",
    "concave",
    "range_lower",
    "range_upper",
    "normal_state",
    "derivative_order",
    "derivative_sign",
    "universal_upper",
    "universal_lower",
    "abrikosov",
];

pub const KNOWN_CHECKS: [&str; 12] = [
    "monotone",
    "concave",
    "range_lower",
    "range_upper",
    "normal_state",
    "derivative_order",
    "derivative_sign",
    "universal_upper",
    "universal_lower",
    "weighted_upper",
    "weighted_lower",
    "abrikosov",
];

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("{name} is required")))
}

fn positive(v: f64, name: &str) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} = {v} must be positive")))
    }
}

/// `start:stop:count` with both endpoints.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("grid '{s}' is not start:stop:count"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !start.is_finite() || !stop.is_finite() || (count > 1 && stop <= start) {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (stop - start) / (count - 1) as f64;
    // Rounded to 12 digits so 0.1 + 2 * 0.05 prints as 0.2.
    Ok((0..count).map(|k| round12(start + k as f64 * step)).collect())
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

pub fn parse_range(s: &str) -> Result<(i64, i64), CliError> {
    let bad = || CliError::Config(format!("range '{s}' is not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Config(format!("'{t}' is not a number"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowsSpec {
    Auto,
    List(Vec<[f64; 3]>),
}

pub fn parse_windows(s: &str) -> Result<WindowsSpec, CliError> {
    if s.trim() == "auto" {
        return Ok(WindowsSpec::Auto);
    }
    let mut out = Vec::new();
    for item in s.split(';').filter(|t| !t.trim().is_empty()) {
        let v = parse_list(item)?;
        if v.len() != 3 || !(v[2] > 0.0) {
            return Err(CliError::Config(format!("window '{item}' is not x1,x2,side")));
        }
        out.push([v[0], v[1], v[2]]);
    }
    if out.is_empty() {
        return Err(CliError::Config("empty window list".into()));
    }
    Ok(WindowsSpec::List(out))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub b: f64,
    pub r: f64,
    pub bc: BoundaryCondition,
    pub n: usize,
    pub starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcurveParams {
    pub b_grid: Vec<f64>,
    pub ladder: Vec<f64>,
    pub steps: Vec<f64>,
    pub tolerances: BulkTolerances,
    pub assert: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialParams {
    pub b: f64,
    pub m_range: (i64, i64),
    pub r_ladder: Vec<f64>,
    pub residual_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub domain: DomainSpec,
    pub kappa: f64,
    pub b: f64,
    pub mode: FieldMode,
    pub max_outer: usize,
    pub projection_tol: f64,
    pub max_modulus_tol: f64,
    pub identity_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub state: PathBuf,
    pub state_digest: String,
    pub gcurve: PathBuf,
    pub gcurve_digest: String,
    pub windows: WindowsSpec,
    pub margin: f64,
    pub c: f64,
    pub form: Form,
    pub quartic: f64,
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyTemplate {
    pub section: VerifySection,
    pub gcurve_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub command: Command,
    pub parameter: String,
    pub values: Vec<serde_json::Value>,
    pub runs: Vec<RunSpec>,
    pub verify: Option<VerifyTemplate>,
    #[serde(skip)]
    pub base: Box<RunConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Params {
    Cell(CellParams),
    Gcurve(GcurveParams),
    Radial(RadialParams),
    Solve(SolveParams),
    Verify(VerifyParams),
    Sweep(SweepParams),
}

/// Fully resolved run: everything that determines the artifacts, nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// `glbulk <version>`; a new version never reuses old artifacts.
    pub program: String,
    pub command: Command,
    pub solver: SolverOptions,
    pub params: Params,
}

impl RunSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run specs serialize")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&digest[..8])
    }
}
