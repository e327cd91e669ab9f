//! Execution of resolved runs through the store.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use glbulk_core::bulk::{check_g_properties, curve_sample, BulkEnergyCurve, CurveOptions, CurveSample, PropertyCheck};
use glbulk_core::cell::{minimize_cell, CellProblemSpec};
use glbulk_core::gl::{apriori_report, gl_energy, gl_residual, minimize_gl, GLOptions, GLState};
use glbulk_core::local::{
    auto_windows, gauge_defect, interior_lattice, local_energy, observables, recentered_order_parameter, scaling_identity,
    verify_local_estimates, verify_theorem_main, BulkReference, Form, InequalityRow, LocalWindow, ObservableReport,
    SlackTolerances, WindowPolicy,
};
use glbulk_core::lattice::EdgePotential;
use glbulk_core::optim::SolverOptions;
use glbulk_core::radial::scan_optimal_m;
use glbulk_core::SolverError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    CellParams, Command, GcurveParams, Params, RadialParams, RunConfig, RunSpec, SolveParams, SweepParams, VerifyParams,
    WindowsSpec,
};
use crate::error::CliError;
use crate::store::{unix_now, Artifact, ManifestEntry, ResultStore, RunRecord, RunStatus};

pub const CELL_FILE: &str = "cell.csv";
pub const GCURVE_FILE: &str = "gcurve.csv";
pub const PROPERTIES_FILE: &str = "properties.json";
pub const RADIAL_FILE: &str = "radial.csv";
pub const GM_FILE: &str = "gm.csv";
pub const SOLVE_FILE: &str = "report.json";
pub const STATE_FILE: &str = "state.json";
pub const PSI_FILE: &str = "psi.csv";
pub const A_FILE: &str = "a.csv";
pub const VERIFY_FILE: &str = "verify.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Largest relative mismatch accepted for the blow-up change of variables.
pub const SCALING_TOL: f64 = 1e-10;
/// Largest relative change of gauge-invariant quantities under a gauge transform.
pub const GAUGE_TOL: f64 = 1e-8;

/// Artifacts of one executed run and the number of failed hard assertions.
pub struct Executed {
    pub artifacts: Vec<Artifact>,
    pub failures: usize,
}

pub struct Outcome {
    pub record: RunRecord,
    pub dir: PathBuf,
    pub cache_hit: bool,
}

impl Outcome {
    pub fn primary(&self) -> PathBuf {
        self.dir.join(primary_artifact(self.record.config.command))
    }
}

pub fn primary_artifact(command: Command) -> &'static str {
    match command {
        Command::Cell => CELL_FILE,
        Command::Gcurve => GCURVE_FILE,
        Command::Radial => RADIAL_FILE,
        Command::Solve => SOLVE_FILE,
        Command::Verify => VERIFY_FILE,
        Command::Sweep => SWEEP_FILE,
    }
}

/// Runs `spec` unless the store already holds it; every call appends to the manifest.
pub fn run(spec: &RunSpec, store: &ResultStore) -> Result<Outcome, CliError> {
    let started = unix_now();
    let hash = spec.hash();
    let entry = |artifacts: Vec<String>, status, cache_hit| ManifestEntry {
        hash: hash.clone(),
        command: spec.command.as_str().into(),
        config: spec.clone(),
        started,
        finished: unix_now(),
        artifacts,
        status,
        cache_hit,
    };
    if let Some(record) = store.lookup(spec) {
        store.append(&entry(record.artifacts.clone(), record.status, true))?;
        return Ok(Outcome { dir: store.run_dir(&hash), record, cache_hit: true });
    }
    match execute(spec, store) {
        Ok(done) => {
            let status = if done.failures == 0 { RunStatus::Ok } else { RunStatus::AssertionFailed };
            let record = store.commit(spec, &done.artifacts, status, done.failures)?;
            store.append(&entry(record.artifacts.clone(), status, false))?;
            Ok(Outcome { dir: store.run_dir(&hash), record, cache_hit: false })
        }
        Err(e @ CliError::Solver(_)) => {
            store.append(&entry(Vec::new(), RunStatus::SolverFailed, false))?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn execute(spec: &RunSpec, store: &ResultStore) -> Result<Executed, CliError> {
    match &spec.params {
        Params::Cell(p) => cell(spec, p),
        Params::Gcurve(p) => gcurve(spec, p),
        Params::Radial(p) => radial(spec, p),
        Params::Solve(p) => solve(spec, p),
        Params::Verify(p) => verify(spec, p),
        Params::Sweep(p) => sweep(spec, p, store),
    }
}

fn header(spec: &RunSpec) -> String {
    format!("# config: {}\n", spec.to_json())
}

fn cell(spec: &RunSpec, p: &CellParams) -> Result<Executed, CliError> {
    let opts = SolverOptions { n_starts: p.starts, ..spec.solver.clone() };
    let problem = CellProblemSpec { b: p.b, r: p.r, bc: p.bc, grid_n: p.n, solver_opts: opts };
    let sol = minimize_cell(&problem)?;
    let mut out = header(spec);
    out.push_str("b,r,bc,n,energy,per_area,iters,grad_norm\n");
    writeln!(
        out,
        "{},{},{},{},{},{},{},{:e}",
        p.b,
        p.r,
        p.bc.as_str(),
        p.n,
        sol.energy,
        sol.per_area,
        sol.diagnostics.iterations,
        sol.diagnostics.grad_norm
    )
    .unwrap();
    Ok(Executed { artifacts: vec![Artifact::new(CELL_FILE, out)], failures: 0 })
}

/// One row of the `gcurve` CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcurveRow {
    pub b: f64,
    pub g: f64,
    pub lo: f64,
    pub hi: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub regular: bool,
    pub residual: f64,
}

impl GcurveRow {
    fn from_sample(s: &CurveSample) -> Self {
        Self {
            b: s.b,
            g: s.estimate.value,
            lo: s.estimate.bracket.0,
            hi: s.estimate.bracket.1,
            d_minus: s.derivative.d_minus,
            d_plus: s.derivative.d_plus,
            regular: s.derivative.regular,
            residual: s.estimate.extrapolation_residual,
        }
    }

    pub fn reference(&self) -> BulkReference {
        BulkReference { b: self.b, g: self.g, d_minus: self.d_minus, d_plus: self.d_plus, regular: self.regular }
    }
}

/// Rows of a CSV artifact, skipping `#` comment lines.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn gcurve(spec: &RunSpec, p: &GcurveParams) -> Result<Executed, CliError> {
    let opts = CurveOptions {
        ladder: p.ladder.clone(),
        steps: p.steps.clone(),
        solver: spec.solver.clone(),
        tolerances: p.tolerances,
    };
    let samples: Vec<CurveSample> = p
        .b_grid
        .par_iter()
        .map(|&b| curve_sample(b, &opts))
        .collect::<Result<_, SolverError>>()?;
    let curve = BulkEnergyCurve { samples, options: opts };
    let report = check_g_properties(&curve);
    let asserted: Vec<&PropertyCheck> = report.checks.iter().filter(|c| p.assert.contains(&c.name)).collect();
    let failures = asserted.iter().filter(|c| !c.pass).count();

    let mut out = header(spec);
    out.push_str("b,g,lo,hi,d_minus,d_plus,regular,residual\n");
    for s in &curve.samples {
        let r = GcurveRow::from_sample(s);
        writeln!(out, "{},{},{},{},{},{},{},{:e}", r.b, r.g, r.lo, r.hi, r.d_minus, r.d_plus, r.regular, r.residual).unwrap();
    }
    let props = json!({
        "config": spec,
        "asserted": p.assert,
        "failures": failures,
        "checks": report.checks,
        "curve": curve,
    });
    Ok(Executed {
        artifacts: vec![Artifact::new(GCURVE_FILE, out), Artifact::new(PROPERTIES_FILE, pretty(&props))],
        failures,
    })
}

fn radial(spec: &RunSpec, p: &RadialParams) -> Result<Executed, CliError> {
    let scan = scan_optimal_m(p.b, p.m_range, &p.r_ladder, &spec.solver)?;
    let mut rows = header(spec);
    rows.push_str("m,b,R,energy,per_area,ode_residual\n");
    let mut gm = header(spec);
    gm.push_str("m,b,g_m,stabilized\n");
    let mut failures = 0;
    for est in &scan.rows {
        for ((r, e), res) in est.r_ladder.iter().zip(&est.per_area).zip(&est.ode_residuals) {
            writeln!(rows, "{},{},{},{},{},{:e}", est.m, est.b, r, e * PI * r * r, e, res).unwrap();
            if !(*res <= p.residual_tol) {
                failures += 1;
            }
        }
        writeln!(gm, "{},{},{},{}", est.m, est.b, est.value, est.stabilized).unwrap();
    }
    Ok(Executed { artifacts: vec![Artifact::new(RADIAL_FILE, rows), Artifact::new(GM_FILE, gm)], failures })
}

/// A named scalar check `value <= limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value <= limit }
    }
}

pub const INTERIOR_MARGIN: f64 = 0.15;

fn solve(spec: &RunSpec, p: &SolveParams) -> Result<Executed, CliError> {
    let opts = GLOptions { solver: spec.solver.clone(), max_outer: p.max_outer, projection_tol: p.projection_tol };
    let mut sol = minimize_gl(&p.domain, p.kappa, p.b, p.mode, &opts)?;
    let state = &sol.state;
    let energy = gl_energy(state)?;
    let residuals = gl_residual(state)?;
    let apriori = apriori_report(state)?;
    let lattice = state.lattice()?;
    let domain_obs = observables(state, &lattice);
    let interior_obs: Option<ObservableReport> = interior_lattice(state, INTERIOR_MARGIN).ok().map(|l| observables(state, &l));
    let checks = vec![
        Check::le("max_modulus", apriori.max_modulus, 1.0 + p.max_modulus_tol),
        Check::le("energy_identity", apriori.energy_identity, p.identity_tol),
    ];
    let failures = checks.iter().filter(|c| !c.pass).count();
    let trace_len = std::mem::take(&mut sol.diagnostics.trace).len();
    let report = json!({
        "config": spec,
        "energy": energy,
        "residuals": residuals,
        "apriori": apriori,
        "observables": { "domain": domain_obs, "interior": interior_obs, "interior_margin": INTERIOR_MARGIN },
        "diagnostics": sol.diagnostics,
        "trace_len": trace_len,
        "checks": checks,
        "failures": failures,
    });
    let mut psi = Vec::new();
    state.psi.write_csv(&mut psi).expect("in-memory write");
    let mut a = Vec::new();
    state.a_nodes().write_csv(&mut a).expect("in-memory write");
    let state_json = serde_json::to_string(&json!({ "config": spec, "state": state })).expect("states serialize");
    Ok(Executed {
        artifacts: vec![
            Artifact::new(SOLVE_FILE, pretty(&report)),
            Artifact::new(STATE_FILE, state_json),
            Artifact::new(PSI_FILE, psi),
            Artifact::new(A_FILE, a),
        ],
        failures,
    })
}

#[derive(Deserialize)]
struct StateFile {
    state: GLState,
}

pub fn load_state(path: &Path) -> Result<GLState, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file: StateFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: not a solve state: {e}", path.display())))?;
    Ok(file.state)
}

/// The bulk reference at `b` from a `gcurve` CSV.
pub fn reference_at(path: &Path, b: f64) -> Result<BulkReference, CliError> {
    let rows: Vec<GcurveRow> = read_rows(path)?;
    rows.iter()
        .find(|r| (r.b - b).abs() <= 1e-9)
        .map(GcurveRow::reference)
        .ok_or_else(|| CliError::Config(format!("{} has no row at b = {b}", path.display())))
}

/// Smooth gauge function used by the invariance check.
pub fn probe_gauge(state: &GLState) -> Vec<f64> {
    let g = state.psi.grid;
    let [lx, ly] = g.side();
    g.nodes()
        .map(|(i, j)| {
            let [x, y] = g.node(i, j);
            0.7 * (2.0 * PI * x / lx).sin() * (PI * y / ly).cos() + 0.3 * x * y
        })
        .collect()
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Largest relative change of the region observables under `chi`. Values
/// below 1e-6 (the magnetic term of a frozen-field state) are compared absolutely.
pub fn observable_gauge_defect(state: &GLState, chi: &[f64]) -> Result<f64, CliError> {
    let other = glbulk_core::gl::gauge_transform(state, chi);
    let lattice = state.lattice()?;
    let (a, b) = (observables(state, &lattice), observables(&other, &lattice));
    let relative = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
    Ok([
        relative(a.mean_sq, b.mean_sq),
        relative(a.mean_quartic, b.mean_quartic),
        relative(a.kinetic, b.kinetic),
        relative(a.current_l1, b.current_l1),
        relative(a.current_l2, b.current_l2),
        relative(a.mag_energy, b.mag_energy),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// Rows that decide the exit status: those of the chosen form, plus the ones
/// that only exist in one form.
fn asserted_rows<'a>(rows: &'a [InequalityRow], form: Form) -> impl Iterator<Item = &'a InequalityRow> + 'a {
    rows.iter().filter(move |r| {
        let twin = rows.iter().any(|o| o.name == r.name && o.form != r.form);
        r.form == form || !twin
    })
}

fn verify(spec: &RunSpec, p: &VerifyParams) -> Result<Executed, CliError> {
    let state = load_state(&p.state)?;
    let reference = reference_at(&p.gcurve, state.b)?;
    let lattice = state.lattice()?;
    let windows: Vec<LocalWindow> = match &p.windows {
        WindowsSpec::Auto => auto_windows(&state, &WindowPolicy { margin: p.margin, c: p.c })?,
        WindowsSpec::List(list) => list
            .iter()
            .map(|w| LocalWindow::inside(&lattice, [w[0], w[1]], w[2]))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let tol = SlackTolerances { quartic: p.quartic, band: p.band };
    let theorem = verify_theorem_main(&state, &reference, p.margin, &tol)?;
    let local = verify_local_estimates(&state, &reference, &windows, &tol)?;

    let mut checks = Vec::new();
    let mut scaling = Vec::new();
    let mut additivity = Vec::new();
    for (k, w) in windows.iter().enumerate() {
        let (lhs, rhs) = scaling_identity(&state, w)?;
        let rel = relative(lhs, rhs);
        checks.push(Check::le(&format!("scaling_identity_{k}"), rel, SCALING_TOL));
        scaling.push(json!({ "window": k, "lhs": lhs, "rhs": rhs, "relative": rel }));
        if let Ok(quarters) = w.quarters(&lattice) {
            let (f, _) = recentered_order_parameter(&state, w)?;
            let a_ref = EdgePotential::a0(f.grid, w.center);
            let whole = local_energy(&f, &a_ref, w, state.kappa, state.h_field())?;
            let parts = quarters
                .iter()
                .map(|q| local_energy(&f, &a_ref, q, state.kappa, state.h_field()))
                .sum::<Result<f64, _>>()?;
            additivity.push(json!({ "window": k, "whole": whole, "parts": parts, "relative": relative(whole, parts) }));
        }
    }
    let chi = probe_gauge(&state);
    let defect = gauge_defect(&state, &chi)?;
    let obs_defect = observable_gauge_defect(&state, &chi)?;
    checks.push(Check::le("gauge_pointwise", defect, GAUGE_TOL));
    checks.push(Check::le("gauge_observables", obs_defect, GAUGE_TOL));

    let hard: Vec<&InequalityRow> = asserted_rows(&theorem.rows, p.form).chain(asserted_rows(&local.rows, p.form)).collect();
    let failures = hard.iter().filter(|r| !r.pass).count() + checks.iter().filter(|c| !c.pass).count();
    let report = json!({
        "config": spec,
        "kappa": state.kappa,
        "b": state.b,
        "reference": reference,
        "asserted_form": p.form,
        "theorem": theorem,
        "local": local,
        "scaling": scaling,
        "additivity": additivity,
        "checks": checks,
        "failures": failures,
    });
    Ok(Executed { artifacts: vec![Artifact::new(VERIFY_FILE, pretty(&report))], failures })
}

fn status_str(s: Result<RunStatus, &CliError>) -> &'static str {
    match s {
        Ok(RunStatus::Ok) => "ok",
        Ok(RunStatus::AssertionFailed) => "assertion_failed",
        Ok(RunStatus::SolverFailed) | Err(_) => "solver_failed",
    }
}

fn sweep(spec: &RunSpec, p: &SweepParams, store: &ResultStore) -> Result<Executed, CliError> {
    let results: Vec<Result<(Outcome, Option<Result<Outcome, CliError>>), CliError>> = p
        .runs
        .par_iter()
        .map(|child| {
            let outcome = match run(child, store) {
                Ok(o) => o,
                Err(CliError::Solver(e)) => return Err(CliError::Solver(e)),
                Err(e) => return Err(e),
            };
            let follow = match &p.verify {
                Some(t) if outcome.record.status != RunStatus::SolverFailed => {
                    let cfg = RunConfig {
                        verify: crate::config::VerifySection { state: Some(outcome.dir.join(STATE_FILE)), ..t.section.clone() },
                        ..Default::default()
                    };
                    Some(cfg.resolve(Command::Verify).and_then(|v| run(&v, store)))
                }
                _ => None,
            };
            Ok((outcome, follow))
        })
        .collect();

    let mut out = header(spec);
    out.push_str("value,run,status,verify_run,verify_status\n");
    let mut failures = 0;
    for (value, res) in p.values.iter().zip(&results) {
        let v = value.to_string();
        match res {
            Ok((o, follow)) => {
                failures += usize::from(o.record.status != RunStatus::Ok);
                let (vr, vs) = match follow {
                    Some(Ok(f)) => {
                        failures += usize::from(f.record.status != RunStatus::Ok);
                        (f.record.hash.clone(), status_str(Ok(f.record.status)))
                    }
                    Some(Err(e @ CliError::Solver(_))) => {
                        failures += 1;
                        (String::new(), status_str(Err(e)))
                    }
                    Some(Err(e)) => return Err(CliError::Config(format!("verify after {v}: {e}"))),
                    None => (String::new(), ""),
                };
                writeln!(out, "{v},{},{},{vr},{vs}", o.record.hash, status_str(Ok(o.record.status))).unwrap();
            }
            Err(e @ CliError::Solver(_)) => {
                failures += 1;
                writeln!(out, "{v},,{},,", status_str(Err(e))).unwrap();
            }
            Err(e) => return Err(CliError::Config(format!("sweep value {v}: {e}"))),
        }
    }
    Ok(Executed { artifacts: vec![Artifact::new(SWEEP_FILE, out)], failures })
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}
