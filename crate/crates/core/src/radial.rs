//! Radially symmetric states `u = e^{i m theta} f(r)` on the disc of radius `R`.
//!
//! Profiles live on the staggered grid `r_k = (k + 1/2) h`, `h = R / (n - 1/2)`,
//! so the last node sits on `r = R` (where `f` vanishes) and no node touches the
//! coordinate singularity.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::start_seed;
use crate::error::SolverError;
use crate::optim::{descend, DescentSettings, Objective, SolverOptions};

pub const MIN_RADIAL_N: usize = 64;
/// Default radial spacing.
pub const RADIAL_SPACING: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSpec {
    pub m: i64,
    pub b: f64,
    pub radius: f64,
    pub n: usize,
    pub solver_opts: SolverOptions,
}

pub fn default_radial_n(radius: f64) -> usize {
    ((radius / RADIAL_SPACING + 0.5).ceil() as usize).max(MIN_RADIAL_N)
}

impl RadialSpec {
    pub fn new(m: i64, b: f64, radius: f64, solver_opts: SolverOptions) -> Self {
        Self { m, b, radius, n: default_radial_n(radius), solver_opts }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(SolverError::InvalidSpec(format!("b = {} must be positive", self.b)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(SolverError::InvalidSpec(format!("R = {} must be positive", self.radius)));
        }
        if self.n < MIN_RADIAL_N {
            return Err(SolverError::InvalidSpec(format!("n = {} below {MIN_RADIAL_N}", self.n)));
        }
        self.solver_opts.validate()
    }

    pub fn spacing(&self) -> f64 {
        self.radius / (self.n as f64 - 0.5)
    }

    pub fn node(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }

    fn potential(&self, r: f64) -> f64 {
        (self.m as f64 / r - 0.5 * r).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub spec: RadialSpec,
    pub f: Vec<f64>,
    pub energy: f64,
    /// Infinity norm of `b (-f'' - f'/r + V f) - (1 - f^2) f` over interior nodes.
    pub ode_residual: f64,
    pub iterations: usize,
    /// Fitted `p` in `f ~ r^p` over the innermost nodes; `None` for the zero profile.
    pub core_exponent: Option<f64>,
}

impl RadialProfile {
    pub fn per_area(&self) -> f64 {
        self.energy / (PI * self.spec.radius * self.spec.radius)
    }
}

/// `2 pi int_0^R (b f'^2 + b V f^2 - f^2 + f^4 / 2) r dr` by the midpoint rule:
/// differences at `r = (k + 1) h`, the remaining terms at the nodes.
pub fn radial_energy(f: &[f64], spec: &RadialSpec) -> Result<f64, SolverError> {
    if f.len() != spec.n {
        return Err(SolverError::InvalidSpec(format!("profile has {} samples, grid has {}", f.len(), spec.n)));
    }
    Ok(energy_and_gradient(spec, f, None))
}

fn energy_and_gradient(spec: &RadialSpec, f: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let h = spec.spacing();
    let b = spec.b;
    let n = f.len();
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut e = 0.0;
    for k in 0..n - 1 {
        let c = (k + 1) as f64 * h;
        let d = f[k + 1] - f[k];
        e += b * c * d * d / h;
        if let Some(g) = grad.as_deref_mut() {
            let s = 2.0 * b * c * d / h;
            g[k] -= s;
            g[k + 1] += s;
        }
    }
    for k in 0..n {
        let r = spec.node(k);
        let q = b * spec.potential(r) - 1.0;
        let fk = f[k];
        e += (q + 0.5 * fk * fk) * fk * fk * r * h;
        if let Some(g) = grad.as_deref_mut() {
            g[k] += (2.0 * q + 2.0 * fk * fk) * fk * r * h;
        }
    }
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v *= 2.0 * PI);
    }
    2.0 * PI * e
}

struct RadialObjective<'a> {
    spec: &'a RadialSpec,
}

impl Objective for RadialObjective<'_> {
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        energy_and_gradient(self.spec, x, Some(grad))
    }

    fn project(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        if let Some(last) = x.last_mut() {
            *last = 0.0;
        }
    }

    fn restrict_gradient(&self, x: &[f64], grad: &mut [f64]) {
        for (g, v) in grad.iter_mut().zip(x) {
            if *v <= 0.0 && *g > 0.0 {
                *g = 0.0;
            }
        }
        if let Some(last) = grad.last_mut() {
            *last = 0.0;
        }
    }
}

/// Residual of the Euler-Lagrange equation at the interior nodes, using
/// central differences (the discrete equation the minimizer satisfies).
pub fn ode_residual(f: &[f64], spec: &RadialSpec) -> f64 {
    let h = spec.spacing();
    let mut worst: f64 = 0.0;
    for k in 0..f.len() - 1 {
        let r = spec.node(k);
        let prev = if k == 0 { f[0] } else { f[k - 1] };
        let (f0, f1) = (f[k], f[k + 1]);
        // At k = 0 the flux through r = 0 vanishes.
        let lap = if k == 0 {
            (f1 - f0) / (h * h) + (f1 - f0) / (2.0 * h * r)
        } else {
            (f1 - 2.0 * f0 + prev) / (h * h) + (f1 - prev) / (2.0 * h * r)
        };
        let res = spec.b * (-lap + spec.potential(r) * f0) - (1.0 - f0 * f0) * f0;
        worst = worst.max(res.abs());
    }
    worst
}

/// Same residual with five-point fourth-order derivatives, away from both ends.
/// Applied to a discrete minimizer it measures the discretization error.
pub fn ode_residual_fourth_order(f: &[f64], spec: &RadialSpec) -> f64 {
    let h = spec.spacing();
    let mut worst: f64 = 0.0;
    for k in 2..f.len().saturating_sub(2) {
        let r = spec.node(k);
        let d1 = (f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2]) / (12.0 * h);
        let d2 = (-f[k - 2] + 16.0 * f[k - 1] - 30.0 * f[k] + 16.0 * f[k + 1] - f[k + 2]) / (12.0 * h * h);
        let res = spec.b * (-d2 - d1 / r + spec.potential(r) * f[k]) - (1.0 - f[k] * f[k]) * f[k];
        worst = worst.max(res.abs());
    }
    worst
}

fn shaped_start(spec: &RadialSpec) -> Vec<f64> {
    let core = (2.0 * spec.m.unsigned_abs() as f64).sqrt().max(1.0);
    let p = spec.m.unsigned_abs() as i32;
    spec.nodes()
        .iter()
        .map(|&r| (r / core).powi(p).min(1.0) * (1.0 - (r / spec.radius).powi(2)).max(0.0))
        .collect()
}

fn random_profile(spec: &RadialSpec, start: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(start_seed(spec.solver_opts.seed, start));
    (0..spec.n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Newton iterations on the free nodes with the tridiagonal Hessian, kept only
/// while they lower the energy and keep the profile non-negative.
fn newton_polish(spec: &RadialSpec, f: &mut [f64]) {
    let n = f.len();
    let h = spec.spacing();
    let b = spec.b;
    let mut grad = vec![0.0; n];
    let mut energy = energy_and_gradient(spec, f, Some(&mut grad));
    for _ in 0..30 {
        let free = n - 1;
        let mut diag = vec![0.0; free];
        let mut off = vec![0.0; free.saturating_sub(1)];
        for k in 0..free {
            let r = spec.node(k);
            let inner = if k > 0 { k as f64 * h } else { 0.0 };
            let outer = (k + 1) as f64 * h;
            diag[k] = 2.0 * PI * (2.0 * b * (inner + outer) / h + (2.0 * (b * spec.potential(r) - 1.0) + 6.0 * f[k] * f[k]) * r * h);
            if k + 1 < free {
                off[k] = -2.0 * PI * 2.0 * b * outer / h;
            }
        }
        let rhs: Vec<f64> = grad[..free].iter().map(|g| -g).collect();
        let Some(step) = solve_tridiagonal(&off, &diag, &off, &rhs) else { return };
        let trial: Vec<f64> = f.iter().zip(step.iter().chain(std::iter::once(&0.0))).map(|(a, d)| a + d).collect();
        if trial.iter().any(|v| *v < 0.0) {
            return;
        }
        let mut tg = vec![0.0; n];
        let te = energy_and_gradient(spec, &trial, Some(&mut tg));
        let gn = |g: &[f64]| g[..free].iter().map(|v| v * v).sum::<f64>();
        if !(te <= energy + 1e-12 * energy.abs().max(1.0)) || gn(&tg) >= gn(&grad) {
            return;
        }
        f.copy_from_slice(&trial);
        grad = tg;
        energy = te;
        if gn(&grad).sqrt() < 1e-14 {
            return;
        }
    }
}

/// Thomas algorithm; `None` on a vanishing pivot.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv.abs() < 1e-300 {
        return None;
    }
    if n > 1 {
        c[0] = upper[0] / piv;
    }
    d[0] = rhs[0] / piv;
    for k in 1..n {
        piv = diag[k] - lower[k - 1] * c[k - 1];
        if piv.abs() < 1e-300 {
            return None;
        }
        if k + 1 < n {
            c[k] = upper[k] / piv;
        }
        d[k] = (rhs[k] - lower[k - 1] * d[k - 1]) / piv;
    }
    for k in (0..n - 1).rev() {
        d[k] -= c[k] * d[k + 1];
    }
    Some(d)
}

fn core_exponent(spec: &RadialSpec, f: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (0..4).filter(|&k| f[k] > 0.0).map(|k| (spec.node(k).ln(), f[k].ln())).collect();
    if pts.len() < 4 || f.iter().all(|v| *v < 1e-8) {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(crate::bulk::fit_line(&x, &y).1)
}

/// Best profile over a shaped start, `n_starts` random starts and the zero profile.
pub fn minimize_radial(spec: &RadialSpec) -> Result<RadialProfile, SolverError> {
    spec.validate()?;
    let obj = RadialObjective { spec };
    let settings = DescentSettings::from_options(&spec.solver_opts, spec.spacing());
    let mut starts = vec![shaped_start(spec)];
    for s in 1..=spec.solver_opts.n_starts {
        starts.push(random_profile(spec, s));
    }
    starts.push(vec![0.0; spec.n]);
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut last_failure = None;
    for init in starts {
        let mut x = init;
        let report = descend(&obj, &mut x, &settings)?;
        newton_polish(spec, &mut x);
        let energy = energy_and_gradient(spec, &x, None);
        let mut g = vec![0.0; x.len()];
        obj.value_and_gradient(&x, &mut g);
        obj.restrict_gradient(&x, &mut g);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() * spec.spacing() / energy.abs().max(1.0);
        if norm > spec.solver_opts.grad_tol {
            last_failure = Some(SolverError::NotConverged { iterations: report.iterations, grad_norm: norm, energy });
            continue;
        }
        if best.as_ref().map_or(true, |(_, e, _)| energy < *e) {
            best = Some((x, energy, report.iterations));
        }
    }
    let (f, energy, iterations) = best.ok_or_else(|| last_failure.expect("at least one start"))?;
    Ok(RadialProfile {
        ode_residual: ode_residual(&f, spec),
        core_exponent: if spec.m != 0 { core_exponent(spec, &f) } else { None },
        spec: spec.clone(),
        f,
        energy,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmEstimate {
    pub m: i64,
    pub b: f64,
    pub value: f64,
    pub r_ladder: Vec<f64>,
    pub per_area: Vec<f64>,
    pub ode_residuals: Vec<f64>,
    /// Per-area values of the last two radii agree within 0.01.
    pub stabilized: bool,
}

pub const STABILIZATION_TOL: f64 = 0.01;

#[cfg(feature = "parallel")]
fn par_map<T: Send, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Largest per-area energy over the radius ladder.
pub fn estimate_g_m(m: i64, b: f64, r_ladder: &[f64], opts: &SolverOptions) -> Result<GmEstimate, SolverError> {
    if r_ladder.is_empty() || r_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::InvalidSpec("radius ladder must be non-empty and increasing".into()));
    }
    let profiles: Vec<RadialProfile> = par_map(r_ladder, |&r| minimize_radial(&RadialSpec::new(m, b, r, opts.clone())))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let per_area: Vec<f64> = profiles.iter().map(RadialProfile::per_area).collect();
    let value = per_area.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stabilized = match per_area.len() {
        0 | 1 => false,
        k => (per_area[k - 1] - per_area[k - 2]).abs() <= STABILIZATION_TOL,
    };
    Ok(GmEstimate {
        m,
        b,
        value,
        r_ladder: r_ladder.to_vec(),
        ode_residuals: profiles.iter().map(|p| p.ode_residual).collect(),
        per_area,
        stabilized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MScan {
    pub b: f64,
    pub rows: Vec<GmEstimate>,
    /// Windings whose value is within [`ARGMIN_TOL`] of the smallest.
    pub argmin: Vec<i64>,
}

pub const ARGMIN_TOL: f64 = 0.01;

pub fn scan_optimal_m(b: f64, m_range: (i64, i64), r_ladder: &[f64], opts: &SolverOptions) -> Result<MScan, SolverError> {
    let (lo, hi) = m_range;
    if lo > hi {
        return Err(SolverError::InvalidSpec(format!("empty winding range {lo}..={hi}")));
    }
    let ms: Vec<i64> = (lo..=hi).collect();
    let rows: Vec<GmEstimate> = par_map(&ms, |&m| estimate_g_m(m, b, r_ladder, opts))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let best = rows.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let argmin = rows.iter().filter(|r| r.value <= best + ARGMIN_TOL).map(|r| r.m).collect();
    Ok(MScan { b, rows, argmin })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions { n_starts: 1, ..SolverOptions::default() }
    }

    #[test]
    fn grid_is_staggered() {
        let s = RadialSpec::new(2, 0.5, 8.0, opts());
        assert_eq!(s.n, 161);
        assert!((s.node(0) - 0.5 * s.spacing()).abs() < 1e-15);
        assert!((s.node(s.n - 1) - 8.0).abs() < 1e-12);
        let mut bad = s.clone();
        bad.n = 32;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_profile_has_zero_energy() {
        let s = RadialSpec::new(0, 0.5, 5.0, opts());
        assert_eq!(radial_energy(&vec![0.0; s.n], &s).unwrap(), 0.0);
        assert!(radial_energy(&[0.0; 3], &s).is_err());
    }

    #[test]
    fn constant_annulus_matches_direct_sum() {
        // f = c on the nodes inside [1, 3], zero elsewhere; summed per term.
        let s = RadialSpec::new(0, 0.7, 4.0, opts());
        let h = s.spacing();
        let c = 0.8;
        let f: Vec<f64> = s.nodes().iter().map(|&r| if (1.0..=3.0).contains(&r) { c } else { 0.0 }).collect();
        let inside: Vec<usize> = (0..s.n).filter(|&k| f[k] > 0.0).collect();
        let (first, last) = (inside[0], *inside.last().unwrap());
        let jumps = s.b * c * c / h * ((first as f64) * h + (last + 1) as f64 * h);
        let bulk: f64 = inside
            .iter()
            .map(|&k| {
                let r = (k as f64 + 0.5) * h;
                (s.b * r * r / 4.0 - 1.0 + 0.5 * c * c) * c * c * r * h
            })
            .sum();
        let oracle = 2.0 * PI * (jumps + bulk);
        let e = radial_energy(&f, &s).unwrap();
        assert!((e - oracle).abs() <= 1e-10 * oracle.abs(), "{e} vs {oracle}");
    }

    #[test]
    fn energy_is_affine_in_b() {
        let s1 = RadialSpec::new(3, 0.3, 6.0, opts());
        let s2 = RadialSpec { b: 0.9, ..s1.clone() };
        let f: Vec<f64> = s1.nodes().iter().map(|r| (r / 6.0 * PI).sin().powi(2)).collect();
        let (e1, e2) = (radial_energy(&f, &s1).unwrap(), radial_energy(&f, &s2).unwrap());
        let h = s1.spacing();
        let mut slope = 0.0;
        for k in 0..s1.n - 1 {
            slope += ((f[k + 1] - f[k]) / h).powi(2) * (k + 1) as f64 * h * h;
        }
        for (k, r) in s1.nodes().iter().enumerate() {
            slope += (3.0 / r - r / 2.0).powi(2) * f[k] * f[k] * r * h;
        }
        slope *= 2.0 * PI;
        assert!(((e2 - e1) / 0.6 - slope).abs() < 1e-9 * slope);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = RadialSpec::new(2, 0.4, 4.0, opts());
        let f: Vec<f64> = s.nodes().iter().map(|r| (r * 0.7).sin().abs()).collect();
        let mut g = vec![0.0; s.n];
        energy_and_gradient(&s, &f, Some(&mut g));
        for k in [0, 7, 40, s.n - 2] {
            let eps = 1e-6;
            let (mut p, mut q) = (f.clone(), f.clone());
            p[k] += eps;
            q[k] -= eps;
            let fd = (radial_energy(&p, &s).unwrap() - radial_energy(&q, &s).unwrap()) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "k={k}");
        }
    }

    #[test]
    fn minimizer_is_admissible_and_solves_the_ode() {
        let p = minimize_radial(&RadialSpec::new(3, 0.5, 10.0, opts())).unwrap();
        assert_eq!(*p.f.last().unwrap(), 0.0);
        assert!(p.f.iter().all(|v| *v >= 0.0));
        assert!(p.energy <= 0.0);
        assert!(p.ode_residual <= 1e-4, "{}", p.ode_residual);
        let e = p.core_exponent.unwrap();
        assert!((e - 3.0).abs() < 0.3, "core exponent {e}");
    }

    #[test]
    fn normal_state_above_one() {
        let p = minimize_radial(&RadialSpec::new(0, 1.5, 8.0, opts())).unwrap();
        assert!(p.energy <= 0.0 && p.energy >= -1e-3 * PI * 64.0);
    }

    #[test]
    fn centrifugal_term_separates_windings() {
        let a = minimize_radial(&RadialSpec::new(0, 0.5, 10.0, opts())).unwrap();
        let b = minimize_radial(&RadialSpec::new(25, 0.5, 10.0, opts())).unwrap();
        assert!((a.energy - b.energy).abs() > 1e-3);
    }

    #[test]
    fn residual_shrinks_under_refinement() {
        let coarse = RadialSpec { n: 100, ..RadialSpec::new(2, 0.5, 6.0, opts()) };
        let fine = RadialSpec { n: 199, ..coarse.clone() };
        let rc = ode_residual_fourth_order(&minimize_radial(&coarse).unwrap().f, &coarse);
        let rf = ode_residual_fourth_order(&minimize_radial(&fine).unwrap().f, &fine);
        let rate = (rc / rf).log2() / (coarse.spacing() / fine.spacing()).log2();
        assert!(rate >= 1.5, "rate {rate}");
    }

    #[test]
    fn tridiagonal_solver() {
        let x = solve_tridiagonal(&[1.0, 1.0], &[4.0, 4.0, 4.0], &[1.0, 1.0], &[5.0, 6.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn scan_reports_nonempty_argmin() {
        let scan = scan_optimal_m(0.5, (0, 3), &[6.0, 8.0], &opts()).unwrap();
        assert_eq!(scan.rows.len(), 4);
        assert!(!scan.argmin.is_empty());
        assert!(scan.rows.iter().all(|r| r.value <= 0.0));
    }
}
