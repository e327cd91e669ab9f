//! Projected descent with Armijo backtracking, so the recorded energy trace
//! never increases: limited-memory BFGS, or plain gradient steps of fixed length.

use serde::{Deserialize, Serialize};

use crate::error::SolverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Constant step, halved only when a trial step fails the Armijo test.
    Fixed,
    /// Limited-memory BFGS direction scaled by the two-point (Barzilai-Borwein)
    /// step, restarted from a gradient step whenever the direction fails.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Threshold on `|grad E| * h / max(1, |E|)`.
    pub grad_tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub step_rule: StepRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 200_000, grad_tol: 1e-8, n_starts: 4, seed: 0, step_rule: StepRule::Adaptive }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.grad_tol > 0.0) {
            return Err(SolverError::InvalidSpec("grad_tol must be positive".into()));
        }
        if self.n_starts < 1 {
            return Err(SolverError::InvalidSpec("n_starts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidSpec("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// A smooth objective over a flat real vector with a convex feasible set.
pub trait Objective {
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Euclidean projection onto the feasible set.
    fn project(&self, _x: &mut [f64]) {}

    /// Zero the gradient components that point out of the feasible set at `x`.
    fn restrict_gradient(&self, _x: &[f64], _grad: &mut [f64]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub energy: f64,
    pub iterations: usize,
    /// Final `|P grad| * scale / max(1, |E|)`.
    pub grad_norm: f64,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DescentSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_rule: StepRule,
    /// Length scale multiplying the gradient norm in the stopping test.
    pub scale: f64,
    pub record_trace: bool,
}

impl DescentSettings {
    pub fn from_options(opts: &SolverOptions, scale: f64) -> Self {
        Self {
            max_iters: opts.max_iters,
            grad_tol: opts.grad_tol,
            step_rule: opts.step_rule,
            scale,
            record_trace: false,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `obj` from `x` in place.
pub fn descend<O: Objective + ?Sized>(
    obj: &O,
    x: &mut [f64],
    settings: &DescentSettings,
) -> Result<DescentReport, SolverError> {
    match settings.step_rule {
        StepRule::Adaptive => lbfgs(obj, x, settings),
        StepRule::Fixed => gradient_descent(obj, x, settings),
    }
}

fn gradient_descent<O: Objective + ?Sized>(
    obj: &O,
    x: &mut [f64],
    settings: &DescentSettings,
) -> Result<DescentReport, SolverError> {
    let n = x.len();
    obj.project(x);
    let mut grad = vec![0.0; n];
    let mut energy = obj.value_and_gradient(x, &mut grad);
    if !energy.is_finite() {
        return Err(SolverError::NonFinite(0));
    }
    obj.restrict_gradient(x, &mut grad);

    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut trace = Vec::new();
    if settings.record_trace {
        trace.push(energy);
    }
    let gnorm = |g: &[f64], e: f64| dot(g, g).sqrt() * settings.scale / e.abs().max(1.0);
    let mut step = {
        let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax > 0.0 { 1e-2 / gmax } else { 1.0 }
    };
    let mut iterations = 0;
    let mut norm = gnorm(&grad, energy);

    while iterations < settings.max_iters {
        if norm <= settings.grad_tol {
            break;
        }
        iterations += 1;
        // Backtracking along the projected path.
        let mut accepted = false;
        let mut trial_energy = f64::NAN;
        for _ in 0..60 {
            for k in 0..n {
                trial[k] = x[k] - step * grad[k];
            }
            obj.project(&mut trial);
            trial_energy = obj.value_and_gradient(&trial, &mut trial_grad);
            let decrease: f64 = (0..n).map(|k| grad[k] * (trial[k] - x[k])).sum();
            if trial_energy.is_finite() && trial_energy <= energy + 1e-4 * decrease {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if !trial_energy.is_finite() {
                return Err(SolverError::NonFinite(iterations));
            }
            // Step underflow: no further decrease is representable.
            break;
        }
        obj.restrict_gradient(&trial, &mut trial_grad);
        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        energy = trial_energy;
        if settings.record_trace {
            trace.push(energy);
        }
        norm = gnorm(&grad, energy);
    }
    Ok(DescentReport { energy, iterations, grad_norm: norm, converged: norm <= settings.grad_tol, trace })
}

const LBFGS_MEMORY: usize = 8;

fn lbfgs<O: Objective + ?Sized>(
    obj: &O,
    x: &mut [f64],
    settings: &DescentSettings,
) -> Result<DescentReport, SolverError> {
    let n = x.len();
    obj.project(x);
    let mut grad = vec![0.0; n];
    let mut energy = obj.value_and_gradient(x, &mut grad);
    if !energy.is_finite() {
        return Err(SolverError::NonFinite(0));
    }
    obj.restrict_gradient(x, &mut grad);
    let gnorm = |g: &[f64], e: f64| dot(g, g).sqrt() * settings.scale / e.abs().max(1.0);
    let mut norm = gnorm(&grad, energy);
    let mut trace = Vec::new();
    if settings.record_trace {
        trace.push(energy);
    }

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut alpha = vec![0.0; LBFGS_MEMORY];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut iterations = 0;

    while iterations < settings.max_iters && norm > settings.grad_tol {
        iterations += 1;
        // Two-loop recursion for dir = -H grad.
        dir.copy_from_slice(&grad);
        let m = s_hist.len();
        for k in (0..m).rev() {
            alpha[k] = rho[k] * dot(&s_hist[k], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[k]) {
                *d -= alpha[k] * y;
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            let gmax = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if gmax > 0.0 { 1e-2 / gmax } else { 1.0 }
        };
        dir.iter_mut().for_each(|d| *d *= gamma);
        for k in 0..m {
            let beta = rho[k] * dot(&y_hist[k], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[k]) {
                *d += (alpha[k] - beta) * s;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        if dot(&dir, &grad) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -gamma.abs() * g;
            }
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut trial_energy = f64::NAN;
        for _ in 0..60 {
            for k in 0..n {
                trial[k] = x[k] + step * dir[k];
            }
            obj.project(&mut trial);
            trial_energy = obj.value_and_gradient(&trial, &mut trial_grad);
            let decrease: f64 = (0..n).map(|k| grad[k] * (trial[k] - x[k])).sum();
            if trial_energy.is_finite() && decrease < 0.0 {
                // Approximate Armijo test once the decrease is below rounding.
                let slope: f64 = (0..n).map(|k| trial_grad[k] * (trial[k] - x[k])).sum();
                let flat = trial_energy <= energy + 1e-12 * energy.abs().max(1.0)
                    && slope <= -(1.0 - 2e-4) * decrease;
                if trial_energy <= energy + 1e-4 * decrease || flat {
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            if !trial_energy.is_finite() {
                return Err(SolverError::NonFinite(iterations));
            }
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            continue;
        }
        obj.restrict_gradient(&trial, &mut trial_grad);
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        energy = trial_energy;
        if settings.record_trace {
            trace.push(energy);
        }
        norm = gnorm(&grad, energy);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
        }
    }
    Ok(DescentReport { energy, iterations, grad_norm: norm, converged: norm <= settings.grad_tol, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic(Vec<f64>);
    impl Objective for Quadratic {
        fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut e = 0.0;
            for (k, (&xi, &d)) in x.iter().zip(&self.0).enumerate() {
                e += 0.5 * d * (xi - 1.0).powi(2);
                g[k] = d * (xi - 1.0);
            }
            e
        }
    }

    struct Clamped;
    impl Objective for Clamped {
        fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 2.0 * (x[0] + 1.0);
            (x[0] + 1.0).powi(2)
        }
        fn project(&self, x: &mut [f64]) {
            x[0] = x[0].max(0.0);
        }
        fn restrict_gradient(&self, x: &[f64], g: &mut [f64]) {
            if x[0] <= 0.0 && g[0] > 0.0 {
                g[0] = 0.0;
            }
        }
    }

    fn settings(rule: StepRule) -> DescentSettings {
        DescentSettings { max_iters: 10_000, grad_tol: 1e-12, step_rule: rule, scale: 1.0, record_trace: true }
    }

    #[test]
    fn ill_conditioned_quadratic_converges_monotonically() {
        let diag: Vec<f64> = (0..50).map(|k| 10f64.powf(k as f64 / 49.0 * 4.0)).collect();
        let mut x = vec![0.0; 50];
        let rep = descend(&Quadratic(diag), &mut x, &settings(StepRule::Adaptive)).unwrap();
        assert!(rep.converged);
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lbfgs_respects_projection() {
        let mut x = vec![3.0];
        let rep = descend(&Clamped, &mut x, &settings(StepRule::Adaptive)).unwrap();
        assert!(rep.converged);
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn fixed_step_also_converges() {
        let mut x = vec![0.0; 3];
        let rep = descend(&Quadratic(vec![1.0, 2.0, 3.0]), &mut x, &settings(StepRule::Fixed)).unwrap();
        assert!(rep.converged);
    }

    #[test]
    fn projection_stops_at_the_constraint() {
        let mut x = vec![3.0];
        let rep = descend(&Clamped, &mut x, &settings(StepRule::Adaptive)).unwrap();
        assert!(rep.converged);
        assert_eq!(x[0], 0.0);
        assert!((rep.energy - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_options_rejected() {
        let bad = SolverOptions { grad_tol: 0.0, ..SolverOptions::default() };
        assert!(bad.validate().is_err());
        let bad = SolverOptions { n_starts: 0, ..SolverOptions::default() };
        assert!(bad.validate().is_err());
    }
}
