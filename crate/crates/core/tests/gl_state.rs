use glbulk_core::gl::{apriori_report, energy_identity_check, gauge_transform, gl_energy, minimize_gl, DomainSpec, FieldMode, GLOptions, Shape};
use glbulk_core::local::gauge_defect;

fn solve(mode: FieldMode, kappa: f64) -> glbulk_core::gl::GLSolution {
    let domain = DomainSpec::resolved(Shape::UnitSquare, kappa, 0.5);
    minimize_gl(&domain, kappa, 0.5, mode, &GLOptions::default()).unwrap()
}

#[test]
fn frozen_minimizer_obeys_the_a_priori_bounds() {
    let sol = solve(FieldMode::FrozenField, 8.0);
    let rep = apriori_report(&sol.state).unwrap();
    assert!(rep.max_modulus <= 1.0 + 1e-4, "{rep:?}");
    assert!(rep.energy_identity <= 1e-4);
    assert!(rep.curl_deviation < 1e-10);
    assert!(sol.energy.total < 0.0);
}

#[test]
fn coupled_energy_not_above_frozen() {
    let frozen = solve(FieldMode::FrozenField, 6.0);
    let coupled = solve(FieldMode::Coupled, 6.0);
    assert!(coupled.energy.total <= frozen.energy.total + 1e-9 * frozen.energy.total.abs());
    assert!(energy_identity_check(&coupled.state).unwrap() <= 1e-4);
}

#[test]
fn gauge_transform_leaves_the_energy_unchanged() {
    let sol = solve(FieldMode::FrozenField, 6.0);
    let grid = sol.state.psi.grid;
    let chi: Vec<f64> = grid
        .nodes()
        .map(|(i, j)| {
            let [x, y] = grid.node(i, j);
            (3.0 * x).sin() * y + 0.5 * x * x
        })
        .collect();
    let moved = gauge_transform(&sol.state, &chi);
    let e0 = gl_energy(&sol.state).unwrap().total;
    let e1 = gl_energy(&moved).unwrap().total;
    assert!((e0 - e1).abs() <= 1e-10 * e0.abs(), "{e0} {e1}");
    assert!(gauge_defect(&sol.state, &chi).unwrap() < 1e-8);
}

#[test]
fn disc_domain_solves() {
    let domain = DomainSpec::resolved(Shape::Disc { radius: 0.5 }, 6.0, 0.5);
    let sol = minimize_gl(&domain, 6.0, 0.5, FieldMode::FrozenField, &GLOptions::default()).unwrap();
    assert!(apriori_report(&sol.state).unwrap().max_modulus <= 1.0 + 1e-4);
}

#[test]
fn invalid_parameters_are_rejected() {
    let domain = DomainSpec::new(Shape::UnitSquare, [2, 9]);
    assert!(minimize_gl(&domain, 6.0, 0.5, FieldMode::FrozenField, &GLOptions::default()).is_err());
    let domain = DomainSpec::resolved(Shape::UnitSquare, 6.0, 0.5);
    assert!(minimize_gl(&domain, -1.0, 0.5, FieldMode::FrozenField, &GLOptions::default()).is_err());
}
