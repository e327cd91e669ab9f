//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use glbulk::commands::{observable_gauge_defect, probe_gauge};
use glbulk_core::bulk::{
    bulk_energy_curve, check_g_properties, estimate_g, BulkEnergyCurve, CurveOptions, CurveSample, GEstimate, PropertyReport,
    DEFAULT_LADDER,
};
use glbulk_core::gl::{apriori_report, minimize_gl, AprioriReport, DomainSpec, FieldMode, GLOptions, GLSolution, Shape};
use glbulk_core::lattice::EdgePotential;
use glbulk_core::local::{
    auto_windows, gauge_defect, local_energy, recentered_order_parameter, scaling_identity, verify_theorem_main, BulkReference,
    Form, SlackTolerances, TheoremReport, WindowPolicy,
};
use glbulk_core::optim::SolverOptions;
use glbulk_core::radial::estimate_g_m;

const KAPPAS: [f64; 3] = [15.0, 25.0, 35.0];
const B_GL: f64 = 0.5;
const MARGIN: f64 = 0.15;

/// Written straight to the stderr handle so the line shows even when output is captured.
fn verdict(n: usize, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {tag} {detail}");
}

fn detail_line(n: usize, text: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {n}:   {text}");
}

fn solver() -> SolverOptions {
    SolverOptions::default()
}

struct Curve {
    curve: BulkEnergyCurve,
    seconds: f64,
}

fn curve() -> &'static Curve {
    static CURVE: OnceLock<Curve> = OnceLock::new();
    CURVE.get_or_init(|| {
        let bs: Vec<f64> = (1..=19).map(|k| (k as f64 * 0.05 * 1e12).round() / 1e12).collect();
        let t = Instant::now();
        let curve = bulk_energy_curve(&bs, &CurveOptions::default()).expect("bulk curve");
        Curve { curve, seconds: t.elapsed().as_secs_f64() }
    })
}

fn sample(b: f64) -> &'static CurveSample {
    curve().curve.samples.iter().find(|s| (s.b - b).abs() < 1e-9).expect("sample on the curve grid")
}

fn endpoints() -> &'static (GEstimate, GEstimate) {
    static ENDS: OnceLock<(GEstimate, GEstimate)> = OnceLock::new();
    ENDS.get_or_init(|| {
        let hi = estimate_g(1.2, &DEFAULT_LADDER, &solver()).expect("g(1.2)");
        let lo = estimate_g(0.001, &DEFAULT_LADDER, &solver()).expect("g(0.001)");
        (hi, lo)
    })
}

fn small_b() -> &'static GEstimate {
    static G: OnceLock<GEstimate> = OnceLock::new();
    G.get_or_init(|| estimate_g(0.02, &DEFAULT_LADDER, &solver()).expect("g(0.02)"))
}

fn gl(kappa: f64, mode: FieldMode) -> GLSolution {
    let domain = DomainSpec::resolved(Shape::UnitSquare, kappa, B_GL);
    minimize_gl(&domain, kappa, B_GL, mode, &GLOptions::default()).expect("GL minimizer")
}

fn frozen() -> &'static Vec<GLSolution> {
    static F: OnceLock<Vec<GLSolution>> = OnceLock::new();
    F.get_or_init(|| KAPPAS.iter().map(|&k| gl(k, FieldMode::FrozenField)).collect())
}

fn coupled() -> &'static Vec<GLSolution> {
    static C: OnceLock<Vec<GLSolution>> = OnceLock::new();
    C.get_or_init(|| KAPPAS.iter().map(|&k| gl(k, FieldMode::Coupled)).collect())
}

fn reference() -> BulkReference {
    let s = sample(B_GL);
    BulkReference::new(&s.estimate, &s.derivative)
}

fn failures_named(report: &PropertyReport, names: &[&str]) -> Vec<String> {
    report
        .failures()
        .filter(|c| names.contains(&c.name.as_str()))
        .map(|c| format!("{}@{:.2}: {:.5} > {:.5}", c.name, c.b.unwrap_or(f64::NAN), c.lhs, c.rhs))
        .collect()
}

#[test]
fn criterion_1_endpoint_values() {
    let (hi, lo) = endpoints();
    let pass_hi = (-1e-3..=1e-3).contains(&hi.value);
    let pass_lo = (-0.501..=-0.49).contains(&lo.value);
    let pass = pass_hi && pass_lo;
    verdict(1, pass, &format!("g(1.2) = {:.6} in [-1e-3, 1e-3]; g(0.001) = {:.6} in [-0.501, -0.49]", hi.value, lo.value));
    assert!(pass);
}

#[test]
fn criterion_2_small_b_asymptotic() {
    let target = -0.5 + 0.005 * 50f64.ln();
    let g = small_b().value;
    let dev = (g - target).abs();
    let pass = dev <= 0.015;
    verdict(2, pass, &format!("g(0.02) = {g:.5}, target {target:.5}, |difference| = {dev:.5} (allowed 0.015)"));
    detail_line(2, &format!("-1/2 + (b/2) ln(1/b) = {:.5}", -0.5 + 0.01 * 50f64.ln()));
    assert!(pass);
}

#[test]
fn criterion_3_structure_of_g() {
    let c = curve();
    let report = check_g_properties(&c.curve);
    let ladder_ok = c.curve.options.ladder == DEFAULT_LADDER.to_vec();
    let time_ok = c.seconds <= 7200.0;
    let groups: [(&str, &[&str]); 4] = [
        ("monotone", &["monotone"]),
        ("concave", &["concave"]),
        ("range", &["range_lower", "range_upper"]),
        ("derivative order", &["derivative_order"]),
    ];
    let universal = failures_named(&report, &["universal_upper", "universal_lower"]);
    let mut pass = ladder_ok && time_ok && universal.is_empty();
    for (label, names) in groups {
        let f = failures_named(&report, names);
        pass &= f.is_empty();
        detail_line(3, &format!("{label}: {}", if f.is_empty() { "ok".to_string() } else { f.join("; ") }));
    }
    detail_line(3, &format!("universal bounds: {} violations", universal.len()));
    for f in &universal {
        detail_line(3, &format!("  {f}"));
    }
    let weighted = failures_named(&report, &["weighted_upper", "weighted_lower"]);
    detail_line(3, &format!("b-weighted universal bounds (diagnostic): {} violations", weighted.len()));
    for s in &c.curve.samples {
        detail_line(
            3,
            &format!("b={:.2} g={:.6} d-={:.4} d+={:.4}", s.b, s.estimate.value, s.derivative.d_minus, s.derivative.d_plus),
        );
    }
    verdict(3, pass, &format!("19 samples, ladder {:?}, {:.0} s", c.curve.options.ladder, c.seconds));
    assert!(pass);
}

#[test]
fn criterion_4_sandwich_and_abrikosov() {
    let c = curve();
    let (hi, lo) = endpoints();
    let mut pairs = 0;
    let mut bad = Vec::new();
    let estimates = c.curve.samples.iter().map(|s| &s.estimate).chain([hi, lo, small_b()]);
    for est in estimates {
        for e in &est.entries {
            pairs += 1;
            if !(e.neumann <= e.dirichlet) {
                bad.push(format!("b={} r={}: e_N={} > e_D={}", est.b, e.r, e.neumann, e.dirichlet));
            }
        }
    }
    let ratio = sample(0.95).estimate.value / (0.05f64 * 0.05);
    let abrikosov = (-0.5..0.0).contains(&ratio);
    let pass = bad.is_empty() && abrikosov;
    for b in &bad {
        detail_line(4, b);
    }
    verdict(4, pass, &format!("{pairs} pairs, {} with e_N > e_D; g(0.95)/0.05^2 = {ratio:.4} in [-0.5, 0)", bad.len()));
    assert!(pass);
}

#[test]
fn criterion_5_radial_comparison() {
    let r_ladder = glbulk::config::DEFAULT_R_LADDER;
    let mut worst_gap = f64::INFINITY;
    let mut worst_res = 0.0f64;
    let mut pass = true;
    for b in [0.3, 0.5, 0.7] {
        let g = sample(b).estimate.value;
        for m in 0..=20 {
            let est = estimate_g_m(m, b, &r_ladder, &solver()).expect("radial minimizer");
            let gap = est.value - (g - 0.02);
            let res = est.ode_residuals.iter().copied().fold(0.0, f64::max);
            worst_gap = worst_gap.min(gap);
            worst_res = worst_res.max(res);
            if gap < 0.0 || !(res <= 1e-4) {
                pass = false;
                detail_line(5, &format!("b={b} m={m}: g_m={:.6} g={g:.6} residual={res:.2e}", est.value));
            }
        }
    }
    verdict(5, pass, &format!("min over m, b of g_m - (g - 0.02) = {worst_gap:.5}; max ODE residual {worst_res:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_6_apriori_suite() {
    let mut pass = true;
    let mut reports: Vec<(FieldMode, AprioriReport)> = Vec::new();
    for sol in frozen().iter().chain(coupled().iter()) {
        let r = apriori_report(&sol.state).expect("a-priori report");
        let ok = r.max_modulus <= 1.0 + 1e-4 && r.energy_identity <= 1e-4;
        pass &= ok;
        detail_line(
            6,
            &format!(
                "{} kappa={} max|psi|={:.6} identity={:.2e} curl_dev={:.3e} e_mag/kappa^1.75={:.3e}",
                sol.state.mode.as_str(),
                r.kappa,
                r.max_modulus,
                r.energy_identity,
                r.curl_deviation,
                r.e_mag_scaled
            ),
        );
        reports.push((sol.state.mode, r));
    }
    let coupled: Vec<&AprioriReport> = reports.iter().filter(|(m, _)| *m == FieldMode::Coupled).map(|(_, r)| r).collect();
    let decreasing = coupled.windows(2).all(|w| w[1].curl_deviation < w[0].curl_deviation);
    // Bounded across the ladder: never above twice the value at the smallest kappa.
    let first = coupled[0].e_mag_scaled;
    let bounded = coupled.iter().all(|r| r.e_mag_scaled.is_finite() && r.e_mag_scaled <= 2.0 * first);
    pass &= decreasing && bounded;
    verdict(
        6,
        pass,
        &format!("kappa {KAPPAS:?}: bounds hold in both modes; sup|curl A - 1| decreasing: {decreasing}; e_mag/kappa^1.75 bounded: {bounded}"),
    );
    assert!(pass);
}

const ITEMS: [&str; 5] = ["quartic", "density", "kinetic", "current_l2", "current_l1"];

fn theorem(sol: &GLSolution) -> TheoremReport {
    verify_theorem_main(&sol.state, &reference(), MARGIN, &SlackTolerances::default()).expect("theorem rows")
}

#[test]
fn criterion_7_theorem_surrogate() {
    let reports: Vec<TheoremReport> = frozen().iter().map(theorem).collect();
    let main = &reports[1];
    let r = &main.reference;
    detail_line(7, &format!("reference g(0.5)={:.6} g'-={:.5} g'+={:.5}", r.g, r.d_minus, r.d_plus));
    let mut pass = true;
    for item in ITEMS {
        let row = main.row(item, Form::Stated).expect("row present");
        pass &= row.pass;
        detail_line(
            7,
            &format!(
                "kappa=25 {item}: value {:.5} bounds [{}, {}] slack {:.5} (allowed {}) {}",
                row.value,
                row.lower.map_or("-".into(), |v| format!("{v:.5}")),
                row.upper.map_or("-".into(), |v| format!("{v:.5}")),
                row.slack,
                row.allowed,
                if row.pass { "ok" } else { "violated" }
            ),
        );
    }
    for item in ["density", "kinetic", "current_l2", "current_l1"] {
        let row = main.row(item, Form::Weighted).expect("row present");
        detail_line(7, &format!("kappa=25 {item} with b-weighted targets (diagnostic): slack {:.5}", row.slack));
    }
    let (lo, hi) = (&reports[0], &reports[2]);
    for item in ITEMS {
        let (s15, s35) = (lo.row(item, Form::Stated).unwrap().slack, hi.row(item, Form::Stated).unwrap().slack);
        let ok = s35 <= 1.2 * s15 + 1e-12;
        pass &= ok;
        detail_line(7, &format!("trend {item}: slack(35) = {s35:.5}, slack(15) = {s15:.5} {}", if ok { "ok" } else { "grows" }));
    }
    verdict(7, pass, "kappa=25, b=0.5, unit square, margin 0.15, frozen field");
    assert!(pass);
}

#[test]
fn criterion_8_exact_identities() {
    let mut pass = true;
    let mut worst_scaling = 0.0f64;
    let mut worst_gauge = 0.0f64;
    let mut worst_add = 0.0f64;
    let mut add_ok = true;
    let states = [&frozen()[1], &coupled()[0]];
    for sol in states {
        let s = &sol.state;
        let lattice = s.lattice().unwrap();
        let h = lattice.grid().spacing()[0];
        for w in auto_windows(s, &WindowPolicy::default()).unwrap() {
            let (lhs, rhs) = scaling_identity(s, &w).unwrap();
            worst_scaling = worst_scaling.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
            if let Ok(quarters) = w.quarters(&lattice) {
                let (f, _) = recentered_order_parameter(s, &w).unwrap();
                let a = EdgePotential::a0(f.grid, w.center);
                let whole = local_energy(&f, &a, &w, s.kappa, s.h_field()).unwrap();
                let parts: f64 = quarters.iter().map(|q| local_energy(&f, &a, q, s.kappa, s.h_field()).unwrap()).sum();
                let rel = (whole - parts).abs() / whole.abs();
                worst_add = worst_add.max(rel);
                // Quadrature tolerance of the window rule: one spacing over the side.
                add_ok &= rel <= h / w.side;
            }
        }
        let chi = probe_gauge(s);
        worst_gauge = worst_gauge.max(gauge_defect(s, &chi).unwrap()).max(observable_gauge_defect(s, &chi).unwrap());
    }
    pass &= worst_scaling <= 1e-10 && worst_gauge <= 1e-8 && add_ok;
    detail_line(8, &format!("blow-up identity relative error {worst_scaling:.2e} (allowed 1e-10)"));
    detail_line(8, &format!("gauge invariance relative change {worst_gauge:.2e} (allowed 1e-8)"));
    detail_line(8, &format!("window additivity relative defect {worst_add:.2e} (allowed h / side)"));

    let det = determinism();
    pass &= det;
    detail_line(8, &format!("two identical runs byte-identical: {det}"));
    verdict(8, pass, "exact discrete identities and determinism");
    assert!(pass);
}

fn determinism() -> bool {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let commands: [&[&str]; 3] = [
        &["cell", "--b", "0.4", "--r", "6", "--seed", "7"],
        &["radial", "--b", "0.5", "--scan-m", "0:2"],
        &["solve", "--kappa", "8", "--b", "0.5", "--mode", "coupled", "--seed", "3"],
    ];
    let mut outputs: Vec<Vec<Vec<u8>>> = vec![Vec::new(), Vec::new()];
    for (k, dir) in dirs.iter().enumerate() {
        for args in commands {
            let out = dir.path().join(format!("{}.out", args[0]));
            let store = dir.path().join("store");
            let mut argv = vec!["glbulk"];
            argv.extend_from_slice(args);
            let (o, s) = (out.to_str().unwrap().to_string(), store.to_str().unwrap().to_string());
            argv.extend_from_slice(&["--out", &o, "--store", &s]);
            assert_eq!(glbulk::main_with(&argv), 0, "{args:?}");
            outputs[k].push(std::fs::read(&out).unwrap());
            for name in ["state.json", "psi.csv", "a.csv"] {
                if args[0] == "solve" {
                    let run = std::fs::read_dir(&store)
                        .unwrap()
                        .filter_map(|e| e.ok())
                        .map(|e| e.path())
                        .find(|p| p.join(name).is_file())
                        .unwrap();
                    outputs[k].push(std::fs::read(run.join(name)).unwrap());
                }
            }
        }
    }
    outputs[0] == outputs[1]
}
