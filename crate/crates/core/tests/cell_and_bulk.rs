use glbulk_core::bulk::{estimate_g, extrapolate};
use glbulk_core::cell::{dn_sandwich, minimize_cell, BoundaryCondition, CellProblemSpec};
use glbulk_core::optim::SolverOptions;

fn opts() -> SolverOptions {
    SolverOptions { n_starts: 2, ..SolverOptions::default() }
}

#[test]
fn neumann_never_above_dirichlet() {
    for b in [0.3, 0.7] {
        for r in [4.0, 6.0] {
            let s = dn_sandwich(b, r, &opts()).unwrap();
            assert!(s.e_n <= s.e_d, "b={b} r={r}: {s:?}");
            assert!(s.gap >= 0.0);
        }
    }
}

#[test]
fn per_area_energy_lies_between_minus_half_and_zero() {
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let sol = minimize_cell(&CellProblemSpec::new(0.5, 6.0, bc, opts())).unwrap();
        assert!(sol.per_area > -0.5 && sol.per_area < 0.0, "{bc:?}: {}", sol.per_area);
        assert!(sol.diagnostics.converged);
        assert!(sol.minimizer.values.iter().all(|z| z.norm() <= 1.0 + 1e-6));
    }
}

#[test]
fn above_the_upper_critical_field_the_cell_is_normal() {
    let sol = minimize_cell(&CellProblemSpec::new(1.2, 6.0, BoundaryCondition::Dirichlet, opts())).unwrap();
    assert!(sol.per_area.abs() < 1e-8, "{}", sol.per_area);
}

#[test]
fn same_seed_same_minimizer() {
    let spec = CellProblemSpec::new(0.4, 5.0, BoundaryCondition::Neumann, opts());
    let a = minimize_cell(&spec).unwrap();
    let b = minimize_cell(&spec).unwrap();
    assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    assert_eq!(a.minimizer, b.minimizer);
}

#[test]
fn ladder_estimate_brackets_its_value() {
    let est = estimate_g(0.6, &[4.0, 5.0, 6.0], &opts()).unwrap();
    let (lo, hi) = est.bracket;
    assert!(lo <= est.value + 1e-12 && est.value <= hi + 1e-12, "{est:?}");
    assert!(est.value < 0.0 && est.value > -0.5);
    assert_eq!(est.entries.len(), 3);
    assert!(estimate_g(0.6, &[4.0, 6.0], &opts()).is_err());
}

#[test]
fn extrapolation_recovers_an_exact_inverse_radius_law() {
    let ladder = [6.0, 8.0, 12.0];
    let y: Vec<f64> = ladder.iter().map(|r| -0.1 + 0.3 / r).collect();
    let (g, res) = extrapolate(&ladder, &y);
    assert!((g + 0.1).abs() < 1e-12 && res < 1e-12, "{g} {res}");
}
