//! Reduced cell problems on `Q_r = (-r/2, r/2)^2`: minimize
//! `F(u) = int b |(grad - i A0) u|^2 - |u|^2 + |u|^4 / 2` over the Dirichlet
//! or Neumann class.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FieldError, SolverError};
use crate::field::{ComplexField2D, Grid2D};
use crate::lattice::{EdgePotential, Lattice, Links, OrderParameterFunctional};
use crate::optim::{descend, DescentSettings, Objective, SolverOptions};

/// Largest admissible grid spacing in magnetic-length units.
pub const MAX_SPACING: f64 = 0.25;
pub const MIN_GRID_N: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl BoundaryCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dirichlet => "dirichlet",
            Self::Neumann => "neumann",
        }
    }
}

impl std::str::FromStr for BoundaryCondition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(Self::Dirichlet),
            "neumann" => Ok(Self::Neumann),
            other => Err(format!("unknown boundary condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProblemSpec {
    pub b: f64,
    pub r: f64,
    pub bc: BoundaryCondition,
    pub grid_n: usize,
    pub solver_opts: SolverOptions,
}

/// Smallest node count keeping the spacing at or below [`MAX_SPACING`].
pub fn default_grid_n(r: f64) -> usize {
    ((r / MAX_SPACING - 1e-9).ceil() as usize + 1).max(MIN_GRID_N)
}

impl CellProblemSpec {
    pub fn new(b: f64, r: f64, bc: BoundaryCondition, solver_opts: SolverOptions) -> Self {
        Self { b, r, bc, grid_n: default_grid_n(r), solver_opts }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(SolverError::InvalidSpec(format!("b = {} must be positive", self.b)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(SolverError::InvalidSpec(format!("r = {} must be positive", self.r)));
        }
        if self.grid_n < MIN_GRID_N {
            return Err(SolverError::InvalidSpec(format!("grid_n = {} below {MIN_GRID_N}", self.grid_n)));
        }
        let h = self.r / (self.grid_n - 1) as f64;
        if h > MAX_SPACING + 1e-12 {
            return Err(SolverError::InvalidSpec(format!(
                "spacing {h} exceeds {MAX_SPACING}; raise grid_n to at least {}",
                default_grid_n(self.r)
            )));
        }
        self.solver_opts.validate()
    }

    pub fn grid(&self) -> Grid2D {
        Grid2D::centered_square(self.r, self.grid_n).expect("validated spec")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    /// 0 is the constant start, `1..=n_starts` the random ones, then the
    /// vortex-lattice starts, the zero field and caller-supplied warm starts.
    pub start_index: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub spec: CellProblemSpec,
    pub minimizer: ComplexField2D,
    pub energy: f64,
    pub per_area: f64,
    /// `int |(grad - i A0) u|^2 / r^2`, the `b`-derivative of `F` at the minimizer.
    pub kinetic_per_area: f64,
    pub diagnostics: CellDiagnostics,
}

/// The cell functional on a prepared lattice.
pub(crate) struct CellFunctional {
    lattice: Lattice,
    links: Links,
    b: f64,
    pinned: Vec<bool>,
}

impl CellFunctional {
    pub(crate) fn new(grid: Grid2D, b: f64, bc: BoundaryCondition) -> Self {
        let lattice = Lattice::full(grid);
        let links = EdgePotential::a0(grid, [0.0, 0.0]).links(1.0);
        let pinned = match bc {
            BoundaryCondition::Dirichlet => grid.nodes().map(|(i, j)| grid.is_boundary(i, j)).collect(),
            BoundaryCondition::Neumann => vec![false; grid.len()],
        };
        Self { lattice, links, b, pinned }
    }

    fn functional(&self) -> OrderParameterFunctional<'_> {
        OrderParameterFunctional::new(&self.lattice, &self.links, self.b, 1.0)
    }
}

impl Objective for CellFunctional {
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let psi: &[Complex64] = bytemuck::cast_slice(x);
        let g: &mut [Complex64] = bytemuck::cast_slice_mut(grad);
        self.functional().energy_and_gradient(psi, g)
    }

    fn project(&self, x: &mut [f64]) {
        let psi: &mut [Complex64] = bytemuck::cast_slice_mut(x);
        for (z, &p) in psi.iter_mut().zip(&self.pinned) {
            if p {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    fn restrict_gradient(&self, _x: &[f64], grad: &mut [f64]) {
        self.project(grad);
    }
}

fn check_centered_square(grid: &Grid2D) -> Result<(), FieldError> {
    let [lx, ly] = grid.side();
    let [ox, oy] = grid.origin();
    let tol = 1e-12 * lx.max(1.0);
    if grid.nx() != grid.ny() || (lx - ly).abs() > tol {
        return Err(FieldError::InvalidGrid("cell grid must be square".into()));
    }
    if (ox + 0.5 * lx).abs() > tol || (oy + 0.5 * ly).abs() > tol {
        return Err(FieldError::InvalidGrid("cell grid must be centred at the origin".into()));
    }
    Ok(())
}

/// `F_{b, Q_r}(u)` on the grid of `u`, which must be a square centred at 0.
pub fn cell_energy(u: &ComplexField2D, b: f64) -> Result<f64, FieldError> {
    check_centered_square(&u.grid)?;
    let lattice = Lattice::full(u.grid);
    let links = EdgePotential::a0(u.grid, [0.0, 0.0]).links(1.0);
    Ok(OrderParameterFunctional::new(&lattice, &links, b, 1.0).energy(&u.values))
}

pub(crate) fn start_seed(seed: u64, start: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(start as u64 + 1)
}

/// Random complex amplitudes with modulus below one.
pub(crate) fn random_start(n: usize, seed: u64, start: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(start_seed(seed, start));
    (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.0..1.0);
            let p: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Complex64::from_polar(m, p)
        })
        .collect()
}

/// Number of vortex-lattice starts added to the constant and random ones.
pub const LATTICE_STARTS: usize = 2;

/// Triangular array of unit vortices with one vortex per area `2 pi`, whose
/// phase gradient matches `A0` on average. `shift` translates the array in
/// units of the lattice spacing.
pub fn vortex_lattice_start(grid: &Grid2D, b: f64, shift: [f64; 2]) -> Vec<Complex64> {
    let spacing = (4.0 * std::f64::consts::PI / 3f64.sqrt()).sqrt();
    let (e1, e2) = ([spacing, 0.0], [0.5 * spacing, 0.5 * 3f64.sqrt() * spacing]);
    let [lx, ly] = grid.side();
    let [ox, oy] = grid.origin();
    let reach = 0.5 * lx.max(ly) + 2.0 * spacing;
    let span = (2.0 * reach / e2[1]).ceil() as i64 + 1;
    let (cx, cy) = (ox + 0.5 * lx, oy + 0.5 * ly);
    let mut cores = Vec::new();
    for m in -span..=span {
        for k in -span..=span {
            let (m, k) = (m as f64 + shift[0], k as f64 + shift[1]);
            let x = cx + m * e1[0] + k * e2[0];
            let y = cy + m * e1[1] + k * e2[1];
            if (x - cx).abs() <= reach && (y - cy).abs() <= reach {
                cores.push((x, y));
            }
        }
    }
    let core = (2.0 * b).sqrt().max(1e-3);
    grid.nodes()
        .map(|(i, j)| {
            let [x, y] = grid.node(i, j);
            let (mut amp, mut phase) = (1.0, 0.0);
            for &(vx, vy) in &cores {
                let (dx, dy) = (x - vx, y - vy);
                amp *= (dx.hypot(dy) / core).tanh();
                phase += dy.atan2(dx);
            }
            Complex64::from_polar(amp, phase)
        })
        .collect()
}

const LATTICE_SHIFTS: [[f64; 2]; LATTICE_STARTS] = [[0.0, 0.0], [0.5, 0.5]];

struct Run {
    x: Vec<f64>,
    report: crate::optim::DescentReport,
    start: usize,
    trivial: bool,
}

fn run_from(obj: &CellFunctional, init: &[Complex64], spec: &CellProblemSpec, start: usize) -> Result<Run, SolverError> {
    let mut x: Vec<f64> = bytemuck::cast_slice(init).to_vec();
    let h = spec.r / (spec.grid_n - 1) as f64;
    let mut settings = DescentSettings::from_options(&spec.solver_opts, h);
    settings.record_trace = true;
    let report = descend(obj, &mut x, &settings)?;
    let trivial = init.iter().all(|z| z.norm_sqr() == 0.0);
    Ok(Run { x, report, start, trivial })
}

fn finish(spec: &CellProblemSpec, obj: &CellFunctional, runs: Vec<Run>) -> Result<CellSolution, SolverError> {
    let best_any = runs
        .iter()
        .min_by(|a, b| a.report.energy.total_cmp(&b.report.energy))
        .expect("at least one run");
    // The zero field is a critical point for every b; alone it certifies nothing.
    let certified = runs.iter().any(|r| r.report.converged && !r.trivial);
    let best = runs
        .iter()
        .filter(|r| r.report.converged && certified)
        .min_by(|a, b| a.report.energy.total_cmp(&b.report.energy))
        .filter(|r| r.report.energy <= best_any.report.energy)
        .ok_or(SolverError::NotConverged {
            iterations: best_any.report.iterations,
            grad_norm: best_any.report.grad_norm,
            energy: best_any.report.energy,
        })?;
    let grid = spec.grid();
    let values: Vec<Complex64> = bytemuck::cast_slice(&best.x).to_vec();
    let minimizer = ComplexField2D::from_values(grid, values)?;
    let parts = obj.functional().parts(&minimizer.values);
    let energy = cell_energy(&minimizer, spec.b)?;
    let area = spec.r * spec.r;
    Ok(CellSolution {
        spec: spec.clone(),
        energy,
        per_area: energy / area,
        kinetic_per_area: parts.kinetic / area,
        minimizer,
        diagnostics: CellDiagnostics {
            iterations: best.report.iterations,
            grad_norm: best.report.grad_norm,
            start_index: best.start,
            converged: best.report.converged,
            trace: best.report.trace.clone(),
        },
    })
}

/// Best local minimizer over the constant start and `n_starts` random starts.
pub fn minimize_cell(spec: &CellProblemSpec) -> Result<CellSolution, SolverError> {
    minimize_cell_with(spec, &[])
}

/// As [`minimize_cell`], with extra caller-supplied starts (warm starts, continuation).
pub fn minimize_cell_with(spec: &CellProblemSpec, extra: &[&ComplexField2D]) -> Result<CellSolution, SolverError> {
    spec.validate()?;
    let grid = spec.grid();
    let obj = CellFunctional::new(grid, spec.b, spec.bc);
    let n = grid.len();
    let mut runs = Vec::with_capacity(spec.solver_opts.n_starts + 1 + extra.len());
    runs.push(run_from(&obj, &vec![Complex64::new(1.0, 0.0); n], spec, 0)?);
    let ns = spec.solver_opts.n_starts;
    for s in 1..=ns {
        runs.push(run_from(&obj, &random_start(n, spec.solver_opts.seed, s), spec, s)?);
    }
    for (k, shift) in LATTICE_SHIFTS.iter().enumerate() {
        runs.push(run_from(&obj, &vortex_lattice_start(&grid, spec.b, *shift), spec, ns + 1 + k)?);
    }
    runs.push(run_from(&obj, &vec![Complex64::new(0.0, 0.0); n], spec, ns + 1 + LATTICE_STARTS)?);
    for (k, init) in extra.iter().enumerate() {
        if !init.grid.same_layout(&grid) {
            return Err(FieldError::GridMismatch.into());
        }
        runs.push(run_from(&obj, &init.values, spec, ns + 2 + LATTICE_STARTS + k)?);
    }
    finish(spec, &obj, runs)
}

/// Single descent from `init` only, used for continuation in `b`.
pub fn minimize_cell_from(spec: &CellProblemSpec, init: &ComplexField2D) -> Result<CellSolution, SolverError> {
    spec.validate()?;
    let grid = spec.grid();
    if !init.grid.same_layout(&grid) {
        return Err(FieldError::GridMismatch.into());
    }
    let obj = CellFunctional::new(grid, spec.b, spec.bc);
    let mut run = run_from(&obj, &init.values, spec, spec.solver_opts.n_starts + 2 + LATTICE_STARTS)?;
    run.trivial = false;
    finish(spec, &obj, vec![run])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub e_n: f64,
    pub e_d: f64,
    pub gap: f64,
}

/// Both boundary conditions on one grid. The Neumann search also descends
/// from the Dirichlet minimizer, which is admissible in the larger class.
pub fn dn_sandwich_solutions(
    b: f64,
    r: f64,
    opts: &SolverOptions,
) -> Result<(CellSolution, CellSolution), SolverError> {
    let dir = minimize_cell(&CellProblemSpec::new(b, r, BoundaryCondition::Dirichlet, opts.clone()))?;
    let neu = minimize_cell_with(
        &CellProblemSpec::new(b, r, BoundaryCondition::Neumann, opts.clone()),
        &[&dir.minimizer],
    )?;
    if neu.energy > dir.energy + 1e-8 * r * r {
        return Err(SolverError::SandwichViolated { e_n: neu.energy, e_d: dir.energy });
    }
    Ok((neu, dir))
}

pub fn dn_sandwich(b: f64, r: f64, opts: &SolverOptions) -> Result<Sandwich, SolverError> {
    let (neu, dir) = dn_sandwich_solutions(b, r, opts)?;
    Ok(Sandwich { e_n: neu.energy, e_d: dir.energy, gap: dir.energy - neu.energy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SolverOptions {
        SolverOptions { n_starts: 2, grad_tol: 1e-7, ..SolverOptions::default() }
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let g = Grid2D::centered_square(4.0, 17).unwrap();
        assert_eq!(cell_energy(&ComplexField2D::zeros(g), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_energy_matches_closed_form() {
        // -r^2/2 + b r^4/24, up to the O(h^2) lattice error.
        let (r, b) = (2.0, 0.5);
        let g = Grid2D::centered_square(r, 129).unwrap();
        let u = ComplexField2D::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let e = cell_energy(&u, b).unwrap();
        let exact = -r * r / 2.0 + b * r.powi(4) / 24.0;
        assert!((e - exact).abs() < 1e-4, "{e} vs {exact}");
    }

    #[test]
    fn off_centre_grid_rejected() {
        let g = Grid2D::new([0.0, 0.0], [2.0, 2.0], [17, 17]).unwrap();
        assert!(cell_energy(&ComplexField2D::zeros(g), 1.0).is_err());
        let g = Grid2D::new([-1.0, -1.0], [2.0, 3.0], [17, 17]).unwrap();
        assert!(cell_energy(&ComplexField2D::zeros(g), 1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = CellProblemSpec::new(0.5, 8.0, BoundaryCondition::Dirichlet, quick());
        assert_eq!(s.grid_n, 33);
        assert!(s.validate().is_ok());
        s.grid_n = 20;
        assert!(s.validate().is_err());
        s.grid_n = 9;
        assert!(s.validate().is_err());
        assert!(CellProblemSpec::new(-1.0, 8.0, BoundaryCondition::Neumann, quick()).validate().is_err());
        assert!(CellProblemSpec::new(0.5, 0.0, BoundaryCondition::Neumann, quick()).validate().is_err());
    }

    #[test]
    fn dirichlet_minimizer_invariants() {
        let spec = CellProblemSpec::new(0.5, 5.0, BoundaryCondition::Dirichlet, quick());
        let sol = minimize_cell(&spec).unwrap();
        let g = sol.minimizer.grid;
        for (i, j) in g.nodes() {
            if g.is_boundary(i, j) {
                assert_eq!(sol.minimizer.at(i, j), Complex64::new(0.0, 0.0));
            }
        }
        assert!(sol.energy <= 0.0);
        assert!(sol.minimizer.max_modulus() <= 1.0 + 1e-6);
        assert!(sol.diagnostics.grad_norm <= spec.solver_opts.grad_tol);
        let trace = &sol.diagnostics.trace;
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn above_critical_field_is_normal() {
        let sol = minimize_cell(&CellProblemSpec::new(1.5, 5.0, BoundaryCondition::Dirichlet, quick())).unwrap();
        assert!(sol.per_area.abs() < 1e-9);
    }

    #[test]
    fn seed_determinism() {
        let spec = CellProblemSpec::new(0.4, 4.0, BoundaryCondition::Neumann, quick());
        let a = minimize_cell(&spec).unwrap();
        let b = minimize_cell(&spec).unwrap();
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    }

    #[test]
    fn sandwich_is_ordered() {
        let s = dn_sandwich(0.5, 5.0, &quick()).unwrap();
        assert!(s.e_n <= s.e_d);
        assert!(s.gap >= 0.0);
    }

    #[test]
    fn bc_parsing() {
        assert_eq!("Dirichlet".parse::<BoundaryCondition>().unwrap(), BoundaryCondition::Dirichlet);
        assert!("periodic".parse::<BoundaryCondition>().is_err());
    }
}
