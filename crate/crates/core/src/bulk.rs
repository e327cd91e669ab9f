//! The bulk energy `g(b)` as the large-cell limit of the per-area cell
//! energies, its one-sided derivatives and the structural checks on a sampled curve.

use serde::{Deserialize, Serialize};

use crate::cell::{
    dn_sandwich_solutions, minimize_cell_from, BoundaryCondition, CellProblemSpec, CellSolution,
};
use crate::error::SolverError;
use crate::field::ComplexField2D;
use crate::optim::SolverOptions;

/// Every threshold used by the estimators and checks in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BulkTolerances {
    pub bracket: f64,
    /// Slack on `value` in `[-1/2, 0]`.
    pub range: f64,
    /// `|g(b)|` bound for `b >= 1`.
    pub normal_state: f64,
    pub monotone: f64,
    pub concavity: f64,
    /// `d_plus <= d_minus + derivative_order`.
    pub derivative_order: f64,
    pub derivative_sign: f64,
    pub universal_upper: f64,
    pub universal_lower: f64,
    pub abrikosov: f64,
    pub regular_threshold: f64,
    /// Allowed violation of quotient monotonicity in the step size.
    pub quotient_monotone: f64,
    pub ladder_decay: f64,
}

impl Default for BulkTolerances {
    fn default() -> Self {
        Self {
            bracket: 1e-3,
            range: 1e-3,
            normal_state: 1e-3,
            monotone: 1e-3,
            concavity: 1e-3,
            derivative_order: 0.02,
            derivative_sign: 1e-3,
            universal_upper: 0.02,
            universal_lower: 0.03,
            abrikosov: 0.0,
            regular_threshold: 0.05,
            quotient_monotone: 0.02,
            ladder_decay: 0.01,
        }
    }
}

pub const DEFAULT_LADDER: [f64; 3] = [6.0, 8.0, 12.0];
pub const DEFAULT_STEPS: [f64; 3] = [0.04, 0.02, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveOptions {
    pub ladder: Vec<f64>,
    pub steps: Vec<f64>,
    pub solver: SolverOptions,
    pub tolerances: BulkTolerances,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            ladder: DEFAULT_LADDER.to_vec(),
            steps: DEFAULT_STEPS.to_vec(),
            solver: SolverOptions::default(),
            tolerances: BulkTolerances::default(),
        }
    }
}

impl CurveOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        check_ladder(&self.ladder)?;
        if self.steps.len() < 2 || self.steps.windows(2).any(|w| w[1] >= w[0]) || self.steps.iter().any(|e| *e <= 0.0) {
            return Err(SolverError::InvalidSpec("step sequence must be positive and strictly decreasing".into()));
        }
        self.solver.validate()
    }
}

fn check_ladder(ladder: &[f64]) -> Result<(), SolverError> {
    if ladder.len() < 3 {
        return Err(SolverError::InvalidSpec(format!("ladder needs at least 3 side lengths, got {}", ladder.len())));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 0.0 {
        return Err(SolverError::InvalidSpec("ladder must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Per-area energies at one cell size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub r: f64,
    pub dirichlet: f64,
    pub neumann: f64,
    /// Kinetic term per area of the Dirichlet minimizer, which is the `b`-derivative of its energy.
    pub dirichlet_kinetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    pub b: f64,
    pub value: f64,
    pub bracket: (f64, f64),
    pub r_used: Vec<f64>,
    pub extrapolation_residual: f64,
    /// Unclamped intercept of the fit.
    pub raw_fit: f64,
    pub entries: Vec<LadderEntry>,
}

/// Least-squares line `y = a + c x`; returns `(a, c, max |residual|)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - c * mx;
    let res = x.iter().zip(y).map(|(u, v)| (v - a - c * u).abs()).fold(0.0, f64::max);
    (a, c, res)
}

/// Intercept of `e/r^2 = g + c/r` over the ladder.
pub fn extrapolate(ladder: &[f64], per_area: &[f64]) -> (f64, f64) {
    let x: Vec<f64> = ladder.iter().map(|r| 1.0 / r).collect();
    let (a, _, res) = fit_line(&x, per_area);
    (a, res)
}

#[cfg(feature = "parallel")]
fn map_ladder<T: Send, F: Fn(f64) -> T + Sync + Send>(ladder: &[f64], f: F) -> Vec<T> {
    use rayon::prelude::*;
    ladder.par_iter().map(|&r| f(r)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ladder<T, F: Fn(f64) -> T>(ladder: &[f64], f: F) -> Vec<T> {
    ladder.iter().map(|&r| f(r)).collect()
}

/// Both boundary-value solves at every ladder size, in ladder order.
pub fn solve_ladder(b: f64, ladder: &[f64], opts: &SolverOptions) -> Result<Vec<(CellSolution, CellSolution)>, SolverError> {
    map_ladder(ladder, |r| dn_sandwich_solutions(b, r, opts)).into_iter().collect()
}

fn assemble(b: f64, ladder: &[f64], pairs: &[(CellSolution, CellSolution)], tol: &BulkTolerances) -> Result<GEstimate, SolverError> {
    let entries: Vec<LadderEntry> = pairs
        .iter()
        .zip(ladder)
        .map(|((n, d), &r)| LadderEntry {
            r,
            dirichlet: d.per_area,
            neumann: n.per_area,
            dirichlet_kinetic: d.kinetic_per_area,
        })
        .collect();
    let lo = entries.iter().map(|e| e.neumann).fold(f64::INFINITY, f64::min);
    let hi = entries.iter().map(|e| e.dirichlet).fold(f64::INFINITY, f64::min);
    if lo > hi + tol.bracket {
        return Err(SolverError::BracketInverted { lo, hi });
    }
    let d: Vec<f64> = entries.iter().map(|e| e.dirichlet).collect();
    let (raw_fit, residual) = extrapolate(ladder, &d);
    Ok(GEstimate {
        b,
        value: raw_fit.clamp(lo.min(hi), hi),
        bracket: (lo, hi),
        r_used: ladder.to_vec(),
        extrapolation_residual: residual,
        raw_fit,
        entries,
    })
}

pub fn estimate_g(b: f64, ladder: &[f64], opts: &SolverOptions) -> Result<GEstimate, SolverError> {
    estimate_g_with(b, ladder, opts, &BulkTolerances::default())
}

pub fn estimate_g_with(b: f64, ladder: &[f64], opts: &SolverOptions, tol: &BulkTolerances) -> Result<GEstimate, SolverError> {
    check_ladder(ladder)?;
    let pairs = solve_ladder(b, ladder, opts)?;
    assemble(b, ladder, &pairs, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedDerivative {
    pub side: Side,
    pub value: f64,
    pub steps: Vec<f64>,
    pub quotients: Vec<f64>,
    /// Quotients ordered in the step size as concavity demands, within tolerance.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GDerivative {
    pub b: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub step_sequence: Vec<f64>,
    pub regular: bool,
    pub reliable: bool,
    /// Kinetic term per area at the largest Dirichlet cell.
    pub envelope: f64,
}

/// Difference steps at `b`. Steps wider than `b / 2` are shrunk geometrically
/// on both sides, so the continued branches stay close to the base point.
fn usable_steps(b: f64, steps: &[f64]) -> Vec<f64> {
    if steps[0] <= 0.5 * b {
        steps.to_vec()
    } else {
        let scale = 0.5 * b / steps[0];
        steps.iter().map(|e| e * scale).collect()
    }
}

/// Extrapolated value of `g` at `b_new` continued from the ladder minimizers at `b`.
fn continued_value(b_new: f64, ladder: &[f64], starts: &[&ComplexField2D], opts: &SolverOptions) -> Result<f64, SolverError> {
    let per_area: Vec<f64> = map_ladder_indexed(ladder, |k, r| {
        let spec = CellProblemSpec::new(b_new, r, BoundaryCondition::Dirichlet, opts.clone());
        minimize_cell_from(&spec, starts[k]).map(|s| s.per_area)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    Ok(extrapolate(ladder, &per_area).0)
}

#[cfg(feature = "parallel")]
fn map_ladder_indexed<T: Send, F: Fn(usize, f64) -> T + Sync + Send>(ladder: &[f64], f: F) -> Vec<T> {
    use rayon::prelude::*;
    ladder.par_iter().enumerate().map(|(k, &r)| f(k, r)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ladder_indexed<T, F: Fn(usize, f64) -> T>(ladder: &[f64], f: F) -> Vec<T> {
    ladder.iter().enumerate().map(|(k, &r)| f(k, r)).collect()
}

fn one_sided(
    base: &GEstimate,
    dirichlet: &[&ComplexField2D],
    side: Side,
    opts: &CurveOptions,
) -> Result<OneSidedDerivative, SolverError> {
    let b = base.b;
    let steps = usable_steps(b, &opts.steps);
    let sign = match side {
        Side::Left => -1.0,
        Side::Right => 1.0,
    };
    let g0 = extrapolate(&base.r_used, &base.entries.iter().map(|e| e.dirichlet).collect::<Vec<_>>()).0;
    let mut quotients = Vec::with_capacity(steps.len());
    for &eps in &steps {
        let g1 = continued_value(b + sign * eps, &base.r_used, dirichlet, &opts.solver)?;
        quotients.push((g1 - g0) / (sign * eps));
    }
    // Concavity: right quotients grow and left quotients shrink as the step decreases.
    let tol = opts.tolerances.quotient_monotone;
    let reliable = quotients.windows(2).all(|w| match side {
        Side::Right => w[1] >= w[0] - tol,
        Side::Left => w[1] <= w[0] + tol,
    });
    let (value, _, _) = fit_line(&steps, &quotients);
    Ok(OneSidedDerivative { side, value, steps, quotients, reliable })
}

/// One-sided derivative of `g` at `b` from difference quotients extrapolated to zero step.
pub fn estimate_g_prime(b: f64, side: Side, opts: &CurveOptions) -> Result<OneSidedDerivative, SolverError> {
    opts.validate()?;
    if !(b > 0.0) {
        return Err(SolverError::InvalidSpec(format!("derivative needs b > 0, got {b}")));
    }
    let pairs = solve_ladder(b, &opts.ladder, &opts.solver)?;
    let base = assemble(b, &opts.ladder, &pairs, &opts.tolerances)?;
    let dir: Vec<&ComplexField2D> = pairs.iter().map(|(_, d)| &d.minimizer).collect();
    one_sided(&base, &dir, side, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub b: f64,
    pub estimate: GEstimate,
    pub derivative: GDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkEnergyCurve {
    pub samples: Vec<CurveSample>,
    pub options: CurveOptions,
}

/// Value and both one-sided derivatives at `b`, sharing the base solves.
pub fn curve_sample(b: f64, opts: &CurveOptions) -> Result<CurveSample, SolverError> {
    opts.validate()?;
    let pairs = solve_ladder(b, &opts.ladder, &opts.solver)?;
    let estimate = assemble(b, &opts.ladder, &pairs, &opts.tolerances)?;
    let dir: Vec<&ComplexField2D> = pairs.iter().map(|(_, d)| &d.minimizer).collect();
    let left = one_sided(&estimate, &dir, Side::Left, opts)?;
    let right = one_sided(&estimate, &dir, Side::Right, opts)?;
    let envelope = estimate.entries.last().map(|e| e.dirichlet_kinetic).unwrap_or(0.0);
    let derivative = GDerivative {
        b,
        d_minus: left.value,
        d_plus: right.value,
        step_sequence: right.steps.clone(),
        regular: (left.value - right.value).abs() <= opts.tolerances.regular_threshold,
        reliable: left.reliable && right.reliable,
        envelope,
    };
    Ok(CurveSample { b, estimate, derivative })
}

pub fn bulk_energy_curve(bs: &[f64], opts: &CurveOptions) -> Result<BulkEnergyCurve, SolverError> {
    if bs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::InvalidSpec("b values must be strictly increasing".into()));
    }
    let samples = bs.iter().map(|&b| curve_sample(b, opts)).collect::<Result<_, _>>()?;
    Ok(BulkEnergyCurve { samples, options: opts.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub b: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl PropertyCheck {
    fn le(name: &str, b: Option<f64>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), b, lhs, rhs, pass: lhs <= rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn passed(&self, name: &str) -> bool {
        self.checks.iter().filter(|c| c.name == name).all(|c| c.pass)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Structural properties of a sampled curve. Samples at `b >= 1` only enter
/// the monotonicity, concavity and range checks.
pub fn check_g_properties(curve: &BulkEnergyCurve) -> PropertyReport {
    let tol = &curve.options.tolerances;
    let s = &curve.samples;
    let mut checks = Vec::new();
    for w in s.windows(2) {
        checks.push(PropertyCheck::le("monotone", Some(w[1].b), w[0].estimate.value, w[1].estimate.value + tol.monotone));
    }
    for w in s.windows(3) {
        let (x0, x1, x2) = (w[0].b, w[1].b, w[2].b);
        let (y0, y1, y2) = (w[0].estimate.value, w[1].estimate.value, w[2].estimate.value);
        // Divided second difference scaled to the local spacing.
        let second = y0 * (x2 - x1) / (x2 - x0) + y2 * (x1 - x0) / (x2 - x0) - y1;
        checks.push(PropertyCheck::le("concave", Some(x1), second, tol.concavity));
    }
    for p in s {
        let (b, g, d) = (p.b, p.estimate.value, &p.derivative);
        checks.push(PropertyCheck::le("range_lower", Some(b), -0.5 - tol.range, g));
        checks.push(PropertyCheck::le("range_upper", Some(b), g, tol.range));
        if b >= 1.0 {
            checks.push(PropertyCheck::le("normal_state", Some(b), g.abs(), tol.normal_state));
            continue;
        }
        checks.push(PropertyCheck::le("derivative_order", Some(b), d.d_plus, d.d_minus + tol.derivative_order));
        checks.push(PropertyCheck::le("derivative_sign", Some(b), -tol.derivative_sign, d.d_minus.min(d.d_plus)));
        checks.push(PropertyCheck::le("universal_upper", Some(b), d.d_plus - 2.0 * g, 1.0 + tol.universal_upper));
        checks.push(PropertyCheck::le("universal_lower", Some(b), d.d_minus, 0.5 + g + tol.universal_lower));
        // Forms consistent with g(0) = -1/2 and g(1) = 0; reported alongside.
        checks.push(PropertyCheck::le("weighted_upper", Some(b), b * d.d_plus - 2.0 * g, 1.0 + tol.universal_upper));
        checks.push(PropertyCheck::le("weighted_lower", Some(b), b * d.d_minus, 0.5 + g + tol.universal_lower));
        if b >= 0.9 {
            let ratio = g / (b - 1.0).powi(2);
            let inside = ratio >= -0.5 - tol.abrikosov && ratio < 0.0;
            checks.push(PropertyCheck { name: "abrikosov".into(), b: Some(b), lhs: ratio, rhs: -0.5, pass: inside });
        }
    }
    PropertyReport { checks }
}

/// Consistency of one estimate with its own ladder data.
pub fn check_ladder_consistency(est: &GEstimate, tol: &BulkTolerances) -> PropertyReport {
    let mut checks = Vec::new();
    for e in &est.entries {
        checks.push(PropertyCheck::le("sandwich", Some(e.r), e.neumann, e.dirichlet));
        checks.push(PropertyCheck::le("upper_direction", Some(e.r), est.value - tol.bracket, e.dirichlet));
    }
    let (lo, hi) = est.bracket;
    checks.push(PropertyCheck::le("bracket_lower", None, lo - tol.bracket, est.value));
    checks.push(PropertyCheck::le("bracket_upper", None, est.value, hi + tol.bracket));
    for a in &est.entries {
        if let Some(d) = est.entries.iter().find(|e| (e.r - 2.0 * a.r).abs() < 1e-9) {
            checks.push(PropertyCheck::le("ladder_decay", Some(a.r), -tol.ladder_decay, a.dirichlet - d.dirichlet));
        }
    }
    PropertyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SolverOptions {
        SolverOptions { n_starts: 1, grad_tol: 1e-7, ..SolverOptions::default() }
    }

    #[test]
    fn line_fit_recovers_exact_data() {
        let x = [1.0 / 6.0, 1.0 / 8.0, 1.0 / 12.0];
        let y: Vec<f64> = x.iter().map(|v| -0.1 + 0.7 * v).collect();
        let (a, c, res) = fit_line(&x, &y);
        assert!((a + 0.1).abs() < 1e-14 && (c - 0.7).abs() < 1e-13 && res < 1e-14);
    }

    #[test]
    fn ladder_validation() {
        assert!(estimate_g(0.5, &[6.0, 8.0], &quick()).is_err());
        assert!(estimate_g(0.5, &[6.0, 12.0, 8.0], &quick()).is_err());
        let bad = CurveOptions { steps: vec![0.01, 0.02], ..CurveOptions::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn steps_shrink_near_zero() {
        let s = usable_steps(0.03, &DEFAULT_STEPS);
        assert!(s.iter().all(|e| 0.03 - e >= 0.015));
        assert!((s[0] / s[2] - 4.0).abs() < 1e-12);
        assert_eq!(usable_steps(0.5, &DEFAULT_STEPS), DEFAULT_STEPS.to_vec());
    }

    #[test]
    fn normal_state_above_one() {
        let est = estimate_g(1.2, &[4.0, 5.0, 6.0], &quick()).unwrap();
        assert!(est.value.abs() <= 1e-3);
        assert!(check_ladder_consistency(&est, &BulkTolerances::default()).all_passed());
    }

    #[test]
    fn small_ladder_estimate_is_consistent() {
        let est = estimate_g(0.5, &[4.0, 5.0, 6.0], &quick()).unwrap();
        assert!(est.bracket.0 <= est.value && est.value <= est.bracket.1);
        assert!(est.value > -0.5 && est.value < 0.0);
        let rep = check_ladder_consistency(&est, &BulkTolerances::default());
        assert!(rep.passed("sandwich"));
    }

    fn synthetic(bs: &[f64], g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> BulkEnergyCurve {
        let samples = bs
            .iter()
            .map(|&b| CurveSample {
                b,
                estimate: GEstimate {
                    b,
                    value: g(b),
                    bracket: (g(b), g(b)),
                    r_used: vec![],
                    extrapolation_residual: 0.0,
                    raw_fit: g(b),
                    entries: vec![],
                },
                derivative: GDerivative {
                    b,
                    d_minus: dg(b),
                    d_plus: dg(b),
                    step_sequence: vec![],
                    regular: true,
                    reliable: true,
                    envelope: dg(b),
                },
            })
            .collect();
        BulkEnergyCurve { samples, options: CurveOptions::default() }
    }

    #[test]
    fn checks_accept_a_concave_model_curve() {
        // -(1-b)^2 / 2 is concave, increasing and meets both weighted bounds.
        let bs: Vec<f64> = (1..=19).map(|k| 0.05 * k as f64).collect();
        let curve = synthetic(&bs, |b| -0.5 * (1.0 - b).powi(2), |b| 1.0 - b);
        let rep = check_g_properties(&curve);
        for name in ["monotone", "concave", "range_lower", "range_upper", "derivative_order", "weighted_upper", "weighted_lower", "abrikosov"] {
            assert!(rep.passed(name), "{name}");
        }
    }

    #[test]
    fn checks_flag_a_convex_dip() {
        let bs = [0.2, 0.4, 0.6, 0.8];
        let curve = synthetic(&bs, |b| if (b - 0.4).abs() < 1e-9 { -0.45 } else { -0.5 * (1.0 - b) }, |_| 0.5);
        let rep = check_g_properties(&curve);
        assert!(!rep.passed("concave"));
        assert!(!rep.passed("monotone"));
    }
}
