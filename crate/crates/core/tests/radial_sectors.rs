use glbulk_core::optim::SolverOptions;
use glbulk_core::radial::{estimate_g_m, minimize_radial, scan_optimal_m, RadialSpec};

#[test]
fn radial_profile_solves_its_ode() {
    let p = minimize_radial(&RadialSpec::new(1, 0.5, 8.0, SolverOptions::default())).unwrap();
    assert!(p.ode_residual <= 1e-4, "{}", p.ode_residual);
    assert!(p.f.iter().all(|v| (-1e-12..=1.0 + 1e-9).contains(v)));
    assert!(p.f[0] < 0.5 * p.f[p.f.len() / 2]);
    assert!(p.per_area() <= 0.0);
}

#[test]
fn winding_energies_are_negative_and_bounded() {
    let scan = scan_optimal_m(0.5, (0, 3), &[6.0, 10.0], &SolverOptions::default()).unwrap();
    assert_eq!(scan.rows.len(), 4);
    for row in &scan.rows {
        assert!(row.value <= 0.0 && row.value > -0.5, "{row:?}");
        assert!(row.ode_residuals.iter().all(|r| *r <= 1e-4));
    }
    assert!(!scan.argmin.is_empty());
}

#[test]
fn ladder_must_increase() {
    assert!(estimate_g_m(0, 0.5, &[8.0, 6.0], &SolverOptions::default()).is_err());
    assert!(estimate_g_m(0, 0.5, &[], &SolverOptions::default()).is_err());
}
