//! The full Ginzburg-Landau functional
//! `E(psi, A) = int |(grad - i kappa H A) psi|^2 - kappa^2 |psi|^2 + kappa^2/2 |psi|^4
//!            + kappa^2 H^2 int |curl A - 1|^2`
//! on a bounded domain, with `H = b kappa`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{start_seed, vortex_lattice_start, LATTICE_STARTS};
use crate::error::{FieldError, SolverError};
use crate::field::{ComplexField2D, Grid2D, Point, VectorField2D};
use crate::lattice::{cell_kinematics, EdgePotential, Lattice, Links, OrderParameterFunctional};
use crate::optim::{descend, DescentReport, DescentSettings, Objective, SolverOptions};

/// Default grid spacing in units of the magnetic length `1 / sqrt(kappa H)`.
pub const GL_SPACING: f64 = 0.25;
/// Coarsest admissible spacing in the same units.
pub const MAX_GL_SPACING: f64 = 0.5;
pub const MIN_GL_N: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `(0, 1)^2`
    UnitSquare,
    /// Disc of the given radius inscribed in the box `(0, 2 radius)^2`.
    Disc { radius: f64 },
    /// `(0, lx) x (0, ly)`
    Rectangle { lx: f64, ly: f64 },
}

impl Shape {
    pub fn bounding_side(&self) -> [f64; 2] {
        match *self {
            Shape::UnitSquare => [1.0, 1.0],
            Shape::Disc { radius } => [2.0 * radius, 2.0 * radius],
            Shape::Rectangle { lx, ly } => [lx, ly],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: Shape,
    /// Node counts of the bounding-box grid.
    pub grid_n: [usize; 2],
}

impl DomainSpec {
    pub fn new(shape: Shape, grid_n: [usize; 2]) -> Self {
        Self { shape, grid_n }
    }

    /// Grid resolving the magnetic length with spacing [`GL_SPACING`].
    pub fn resolved(shape: Shape, kappa: f64, b: f64) -> Self {
        let scale = (kappa * kappa * b).max(0.0).sqrt();
        let n = |l: f64| (((l * scale) / GL_SPACING).ceil() as usize + 1).max(MIN_GL_N);
        let [lx, ly] = shape.bounding_side();
        Self { shape, grid_n: [n(lx), n(ly)] }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let [lx, ly] = self.shape.bounding_side();
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(FieldError::InvalidGrid("domain extent must be positive".into()));
        }
        if self.grid_n[0] < 3 || self.grid_n[1] < 3 {
            return Err(FieldError::InvalidGrid("need at least 3 nodes per axis".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D, FieldError> {
        self.validate()?;
        Grid2D::new([0.0, 0.0], self.shape.bounding_side(), self.grid_n)
    }

    /// Cells whose centre lies in the domain.
    pub fn lattice(&self) -> Result<Lattice, FieldError> {
        let grid = self.grid()?;
        Ok(match self.shape {
            Shape::Disc { radius } => {
                let [hx, hy] = grid.spacing();
                Lattice::with_cells(grid, |ci, cj| {
                    let x = grid.x1(ci) + 0.5 * hx - radius;
                    let y = grid.x2(cj) + 0.5 * hy - radius;
                    x.hypot(y) < radius
                })
            }
            _ => Lattice::full(grid),
        })
    }

    pub fn centroid(&self) -> Point {
        let [lx, ly] = self.shape.bounding_side();
        [0.5 * lx, 0.5 * ly]
    }

    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Disc { radius } => std::f64::consts::PI * radius * radius,
            s => {
                let [lx, ly] = s.bounding_side();
                lx * ly
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    Coupled,
    /// `A = A0` about the domain centroid.
    #[serde(alias = "frozen")]
    FrozenField,
}

impl FieldMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Coupled => "coupled",
            Self::FrozenField => "frozen",
        }
    }
}

impl std::str::FromStr for FieldMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "frozen" | "frozen_field" => Ok(Self::FrozenField),
            other => Err(format!("unknown field mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GLState {
    pub domain: DomainSpec,
    pub kappa: f64,
    pub b: f64,
    pub psi: ComplexField2D,
    pub a: EdgePotential,
    pub mode: FieldMode,
}

impl GLState {
    pub fn h_field(&self) -> f64 {
        self.b * self.kappa
    }

    /// `kappa H`, the phase coupling of the potential.
    pub fn coupling(&self) -> f64 {
        self.kappa * self.h_field()
    }

    pub fn lattice(&self) -> Result<Lattice, FieldError> {
        self.domain.lattice()
    }

    pub fn links(&self) -> Links {
        self.a.links(self.coupling())
    }

    pub fn a_nodes(&self) -> VectorField2D {
        self.a.to_nodes()
    }

    fn check(&self) -> Result<Lattice, FieldError> {
        let lattice = self.lattice()?;
        if !self.psi.grid.same_layout(lattice.grid()) || !self.a.grid.same_layout(lattice.grid()) {
            return Err(FieldError::GridMismatch);
        }
        Ok(lattice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GLEnergyBreakdown {
    pub e_op: f64,
    pub e_mag: f64,
    pub total: f64,
}

/// `(kappa H)^2 int |curl A - 1|^2` and, if requested, its gradient over the
/// edge values (x edges first).
fn magnetic_energy(lattice: &Lattice, a: &EdgePotential, coupling: f64, grad: Option<&mut [f64]>) -> f64 {
    let g = lattice.grid();
    let [nx, ny] = g.n();
    let [hx, hy] = g.spacing();
    let nxe = (nx - 1) * ny;
    let curl = a.plaquette_curl();
    let s = coupling * coupling;
    let mut e = 0.0;
    let mut grad = grad;
    for cj in 0..ny - 1 {
        for ci in 0..nx - 1 {
            if !lattice.cell_active(ci, cj) {
                continue;
            }
            let d = curl[cj * (nx - 1) + ci] - 1.0;
            e += s * hx * hy * d * d;
            if let Some(gr) = grad.as_deref_mut() {
                gr[cj * (nx - 1) + ci] += 2.0 * s * d * hx;
                gr[(cj + 1) * (nx - 1) + ci] -= 2.0 * s * d * hx;
                gr[nxe + cj * nx + ci + 1] += 2.0 * s * d * hy;
                gr[nxe + cj * nx + ci] -= 2.0 * s * d * hy;
            }
        }
    }
    e
}

pub fn gl_energy(state: &GLState) -> Result<GLEnergyBreakdown, FieldError> {
    let lattice = state.check()?;
    let links = state.links();
    let k2 = state.kappa * state.kappa;
    let e_op = OrderParameterFunctional::new(&lattice, &links, 1.0, k2).energy(&state.psi.values);
    let e_mag = magnetic_energy(&lattice, &state.a, state.coupling(), None);
    Ok(GLEnergyBreakdown { e_op, e_mag, total: e_op + e_mag })
}

/// `(e^{i kappa H chi} psi, A + grad chi)`.
pub fn gauge_transform(state: &GLState, chi: &[f64]) -> GLState {
    let c = state.coupling();
    let mut out = state.clone();
    for (z, x) in out.psi.values.iter_mut().zip(chi) {
        *z *= Complex64::from_polar(1.0, c * x);
    }
    out.a.add_gradient(chi);
    out
}

/// Edge list `(from, to, weight, length)` of the active edges, x edges first.
pub(crate) fn active_edges(lattice: &Lattice) -> Vec<(usize, usize, f64, f64, usize)> {
    let g = lattice.grid();
    let [nx, ny] = g.n();
    let [hx, hy] = g.spacing();
    let nxe = (nx - 1) * ny;
    let mut out = Vec::new();
    for (e, &w) in lattice.xedge_weights().iter().enumerate() {
        if w > 0.0 {
            let (i, j) = (e % (nx - 1), e / (nx - 1));
            out.push((j * nx + i, j * nx + i + 1, w, hx, e));
        }
    }
    for (e, &w) in lattice.yedge_weights().iter().enumerate() {
        if w > 0.0 {
            out.push((e, e + nx, w, hy, nxe + e));
        }
    }
    out
}

pub(crate) fn edge_value(a: &EdgePotential, e: usize) -> f64 {
    if e < a.ax.len() {
        a.ax[e]
    } else {
        a.ay[e - a.ax.len()]
    }
}

/// Weighted divergence `D^T W a` per node, divided by the node weight.
pub fn divergence(lattice: &Lattice, a: &EdgePotential) -> Vec<f64> {
    let mut out = vec![0.0; lattice.grid().len()];
    for (from, to, w, h, e) in active_edges(lattice) {
        let v = w * edge_value(a, e) / h;
        out[from] -= v;
        out[to] += v;
    }
    for (d, &w) in out.iter_mut().zip(lattice.node_weights()) {
        *d = if w > 0.0 { *d / w } else { 0.0 };
    }
    out
}

/// Phase `chi` for which `a + grad chi` is divergence free in the weighted
/// sense, which also makes its normal component vanish weakly on the boundary.
pub fn coulomb_gauge(lattice: &Lattice, a: &EdgePotential, tol: f64) -> Result<Vec<f64>, SolverError> {
    let n = lattice.grid().len();
    let edges = active_edges(lattice);
    let active: Vec<bool> = (0..n).map(|k| lattice.node_active(k)).collect();
    let count = active.iter().filter(|&&x| x).count().max(1) as f64;
    let apply = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(from, to, w, h, _) in &edges {
            let f = w * (x[to] - x[from]) / (h * h);
            out[from] -= f;
            out[to] += f;
        }
    };
    let center = |v: &mut [f64]| {
        let mean: f64 = v.iter().zip(&active).filter(|(_, &on)| on).map(|(x, _)| x).sum::<f64>() / count;
        for (x, &on) in v.iter_mut().zip(&active) {
            *x = if on { *x - mean } else { 0.0 };
        }
    };
    // Normal equations of min sum W (a + D chi)^2: (D^T W D) chi = -D^T W a.
    let mut rhs = vec![0.0; n];
    for &(from, to, w, h, e) in &edges {
        let v = w * edge_value(a, e) / h;
        rhs[from] += v;
        rhs[to] -= v;
    }
    center(&mut rhs);
    let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 20 * n + 100;
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            center(&mut x);
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        center(&mut r);
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(SolverError::GaugeProjection(format!(
        "conjugate gradients stalled at relative residual {:.3e}",
        rr.sqrt() / bnorm
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GLOptions {
    pub solver: SolverOptions,
    /// Cap on the alternating psi / A sweeps of the coupled mode.
    pub max_outer: usize,
    /// Relative residual of the gauge-projection solve.
    pub projection_tol: f64,
}

impl Default for GLOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), max_outer: 400, projection_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GLDiagnostics {
    pub iterations: usize,
    pub outer_iterations: usize,
    pub grad_norm: f64,
    pub start_index: usize,
    pub converged: bool,
    /// Largest weighted divergence of the final potential at interior nodes.
    pub divergence: f64,
    /// Largest weighted divergence at boundary nodes, where it measures `a . nu`.
    pub boundary_flux: f64,
    /// Total energy after every accepted step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GLSolution {
    pub state: GLState,
    pub energy: GLEnergyBreakdown,
    pub diagnostics: GLDiagnostics,
}

struct PsiBlock<'a> {
    lattice: &'a Lattice,
    links: Links,
    kappa: f64,
}

impl Objective for PsiBlock<'_> {
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let psi: &[Complex64] = bytemuck::cast_slice(x);
        let g: &mut [Complex64] = bytemuck::cast_slice_mut(grad);
        OrderParameterFunctional::new(self.lattice, &self.links, 1.0, self.kappa * self.kappa).energy_and_gradient(psi, g)
    }

    fn project(&self, x: &mut [f64]) {
        let psi: &mut [Complex64] = bytemuck::cast_slice_mut(x);
        for (k, z) in psi.iter_mut().enumerate() {
            if !self.lattice.node_active(k) {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    fn restrict_gradient(&self, _x: &[f64], grad: &mut [f64]) {
        self.project(grad);
    }
}

struct ABlock<'a> {
    lattice: &'a Lattice,
    psi: &'a [Complex64],
    kappa: f64,
    coupling: f64,
}

impl ABlock<'_> {
    fn potential(&self, x: &[f64]) -> EdgePotential {
        let mut a = EdgePotential::zeros(*self.lattice.grid());
        let nxe = a.ax.len();
        a.ax.copy_from_slice(&x[..nxe]);
        a.ay.copy_from_slice(&x[nxe..]);
        a
    }
}

impl Objective for ABlock<'_> {
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let a = self.potential(x);
        let links = a.links(self.coupling);
        let [hx, hy] = self.lattice.grid().spacing();
        let nxe = a.ax.len();
        let psi = self.psi;
        let mut kin = 0.0;
        for bd in self.lattice.bonds() {
            let u = links.along(bd);
            let z = psi[bd.from].conj() * u * psi[bd.to];
            kin += bd.weight * (u * psi[bd.to] - psi[bd.from]).norm_sqr();
            // d|U psi_to - psi_from|^2 / d theta = -2 Im(conj(psi_from) U psi_to)
            let dtheta = -2.0 * bd.weight * z.im;
            for &e in &bd.links[..bd.span as usize] {
                let h = if e < nxe { hx } else { hy };
                grad[e] += dtheta * self.coupling * h;
            }
        }
        let k2 = self.kappa * self.kappa;
        let (mut l2, mut l4) = (0.0, 0.0);
        for (w, z) in self.lattice.node_weights().iter().zip(psi) {
            let m = z.norm_sqr();
            l2 += w * m;
            l4 += w * m * m;
        }
        let mag = magnetic_energy(self.lattice, &a, self.coupling, Some(grad));
        kin - k2 * (l2 - 0.5 * l4) + mag
    }

    fn restrict_gradient(&self, _x: &[f64], grad: &mut [f64]) {
        let nxe = self.lattice.xedge_weights().len();
        for (k, g) in grad.iter_mut().enumerate() {
            let w = if k < nxe { self.lattice.xedge_weights()[k] } else { self.lattice.yedge_weights()[k - nxe] };
            if w == 0.0 {
                *g = 0.0;
            }
        }
    }
}

/// Phase-disordered start with `|psi| = 0.8`.
fn disordered_start(n: usize, seed: u64, start: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(start_seed(seed, start));
    (0..n).map(|_| Complex64::from_polar(0.8, rng.gen_range(0.0..std::f64::consts::TAU))).collect()
}

fn starts(domain: &DomainSpec, grid: &Grid2D, kappa: f64, b: f64, seed: u64, n_starts: usize) -> Result<Vec<Vec<Complex64>>, FieldError> {
    let n = grid.len();
    let mut out = vec![vec![Complex64::new(1.0, 0.0); n]];
    for s in 1..=n_starts {
        out.push(disordered_start(n, seed, s));
    }
    let scale = (kappa * kappa * b).sqrt();
    if b > 0.0 && b < 1.0 {
        let c = domain.centroid();
        let side = grid.side();
        let blown = Grid2D::new([(0.0 - c[0]) * scale, (0.0 - c[1]) * scale], [side[0] * scale, side[1] * scale], grid.n())?;
        for shift in [[0.0, 0.0], [0.5, 0.5]].iter().take(LATTICE_STARTS) {
            out.push(vortex_lattice_start(&blown, b, *shift));
        }
    }
    out.push(vec![Complex64::new(0.0, 0.0); n]);
    Ok(out)
}

#[cfg(feature = "parallel")]
fn map_starts<T: Send, F: Fn(usize, &Vec<Complex64>) -> T + Sync + Send>(starts: &[Vec<Complex64>], f: F) -> Vec<T> {
    use rayon::prelude::*;
    starts.par_iter().enumerate().map(|(k, s)| f(k, s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_starts<T, F: Fn(usize, &Vec<Complex64>) -> T>(starts: &[Vec<Complex64>], f: F) -> Vec<T> {
    starts.iter().enumerate().map(|(k, s)| f(k, s)).collect()
}

fn spacing(grid: &Grid2D) -> f64 {
    let [hx, hy] = grid.spacing();
    hx.min(hy)
}

fn validate_parameters(domain: &DomainSpec, kappa: f64, b: f64, opts: &GLOptions) -> Result<(), SolverError> {
    domain.validate()?;
    opts.solver.validate()?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(SolverError::InvalidSpec("kappa must be positive".into()));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(SolverError::InvalidSpec("b must be non-negative".into()));
    }
    let grid = domain.grid()?;
    let [hx, hy] = grid.spacing();
    let resolution = hx.max(hy) * (kappa * kappa * b).sqrt();
    if resolution > MAX_GL_SPACING {
        return Err(SolverError::InvalidSpec(format!(
            "grid spacing is {resolution:.3} magnetic lengths, above {MAX_GL_SPACING}"
        )));
    }
    if !(opts.projection_tol > 0.0) || opts.max_outer == 0 {
        return Err(SolverError::InvalidSpec("projection_tol and max_outer must be positive".into()));
    }
    Ok(())
}

/// Minimizes the GL energy at `H = b kappa`. Every start first descends in
/// `psi` at `A = A0`; the frozen mode keeps the best of these, the coupled mode
/// continues from it by alternating `A` sweeps, gauge projection and `psi` sweeps.
pub fn minimize_gl(
    domain: &DomainSpec,
    kappa: f64,
    b: f64,
    mode: FieldMode,
    opts: &GLOptions,
) -> Result<GLSolution, SolverError> {
    validate_parameters(domain, kappa, b, opts)?;
    let lattice = domain.lattice()?;
    let grid = *lattice.grid();
    let coupling = kappa * kappa * b;
    let a0 = EdgePotential::a0(grid, domain.centroid());
    let h = spacing(&grid);
    let mut settings = DescentSettings::from_options(&opts.solver, h);
    settings.record_trace = true;

    let inits = starts(domain, &grid, kappa, b, opts.solver.seed, opts.solver.n_starts)?;
    let psi_block = PsiBlock { lattice: &lattice, links: a0.links(coupling), kappa };
    let runs: Vec<Result<(Vec<f64>, DescentReport), SolverError>> = map_starts(&inits, |_, init| {
        let mut x: Vec<f64> = bytemuck::cast_slice(init).to_vec();
        descend(&psi_block, &mut x, &settings).map(|rep| (x, rep))
    });
    let runs: Vec<(Vec<f64>, DescentReport)> = runs.into_iter().collect::<Result<_, _>>()?;
    let best_any = runs.iter().map(|r| &r.1).min_by(|a, b| a.energy.total_cmp(&b.energy)).expect("starts");
    let (start_index, (x, report)) = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1.converged)
        .min_by(|a, b| a.1 .1.energy.total_cmp(&b.1 .1.energy))
        .ok_or(SolverError::NotConverged {
            iterations: best_any.iterations,
            grad_norm: best_any.grad_norm,
            energy: best_any.energy,
        })?;
    let psi = ComplexField2D::from_values(grid, bytemuck::cast_slice(x).to_vec())?;
    let mut state = GLState { domain: *domain, kappa, b, psi, a: a0, mode };
    let mut diagnostics = GLDiagnostics {
        iterations: report.iterations,
        outer_iterations: 0,
        grad_norm: report.grad_norm,
        start_index,
        converged: true,
        divergence: 0.0,
        boundary_flux: 0.0,
        trace: report.trace.clone(),
    };
    if mode == FieldMode::Coupled && coupling > 0.0 {
        alternate(&lattice, &mut state, &mut diagnostics, opts, &settings)?;
    }
    let div = divergence(&lattice, &state.a);
    let mut on_boundary = vec![false; grid.len()];
    lattice.boundary_nodes().into_iter().for_each(|k| on_boundary[k] = true);
    for (d, edge) in div.iter().zip(on_boundary) {
        let slot = if edge { &mut diagnostics.boundary_flux } else { &mut diagnostics.divergence };
        *slot = slot.max(d.abs());
    }
    let energy = gl_energy(&state)?;
    Ok(GLSolution { state, energy, diagnostics })
}

fn alternate(
    lattice: &Lattice,
    state: &mut GLState,
    diag: &mut GLDiagnostics,
    opts: &GLOptions,
    settings: &DescentSettings,
) -> Result<(), SolverError> {
    let (kappa, coupling) = (state.kappa, state.coupling());
    let nxe = state.a.ax.len();
    let mut joint = f64::INFINITY;
    for outer in 1..=opts.max_outer {
        diag.outer_iterations = outer;
        // A sweep at fixed psi.
        let mut ax: Vec<f64> = state.a.ax.iter().chain(&state.a.ay).copied().collect();
        let ablock = ABlock { lattice, psi: &state.psi.values, kappa, coupling };
        let rep = descend(&ablock, &mut ax, settings)?;
        diag.iterations += rep.iterations;
        diag.trace.extend(rep.trace.iter().skip(1));
        state.a.ax.copy_from_slice(&ax[..nxe]);
        state.a.ay.copy_from_slice(&ax[nxe..]);

        let chi = coulomb_gauge(lattice, &state.a, opts.projection_tol)?;
        *state = gauge_transform(state, &chi);

        // psi sweep at fixed A.
        let e_mag = magnetic_energy(lattice, &state.a, coupling, None);
        let pblock = PsiBlock { lattice, links: state.links(), kappa };
        let mut x: Vec<f64> = bytemuck::cast_slice(&state.psi.values).to_vec();
        let rep = descend(&pblock, &mut x, settings)?;
        diag.iterations += rep.iterations;
        diag.trace.extend(rep.trace.iter().skip(1).map(|e| e + e_mag));
        state.psi.values.copy_from_slice(bytemuck::cast_slice(&x));

        joint = joint_gradient(lattice, state, settings.scale);
        if joint <= settings.grad_tol {
            diag.grad_norm = joint;
            diag.converged = true;
            return Ok(());
        }
    }
    diag.grad_norm = joint;
    diag.converged = false;
    let energy = gl_energy(state)?.total;
    Err(SolverError::NotConverged { iterations: diag.iterations, grad_norm: joint, energy })
}

/// `max` of the scaled psi and A gradient norms.
fn joint_gradient(lattice: &Lattice, state: &GLState, scale: f64) -> f64 {
    let x: Vec<f64> = state.a.ax.iter().chain(&state.a.ay).copied().collect();
    let ablock = ABlock { lattice, psi: &state.psi.values, kappa: state.kappa, coupling: state.coupling() };
    let mut ga = vec![0.0; x.len()];
    let e = ablock.value_and_gradient(&x, &mut ga);
    ablock.restrict_gradient(&x, &mut ga);
    let pblock = PsiBlock { lattice, links: state.links(), kappa: state.kappa };
    let xp: Vec<f64> = bytemuck::cast_slice(&state.psi.values).to_vec();
    let mut gp = vec![0.0; xp.len()];
    pblock.value_and_gradient(&xp, &mut gp);
    pblock.restrict_gradient(&xp, &mut gp);
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt() * scale / e.abs().max(1.0);
    norm(&ga).max(norm(&gp))
}

/// Discrete residual norms of the GL system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Weighted rms of `-(grad - i kappa H A)^2 psi - kappa^2 (1 - |psi|^2) psi` over interior nodes, over `kappa^2`.
    pub r1: f64,
    /// Weighted rms of `curl curl A - j / (kappa H)` over interior edges (coupled mode only).
    pub r2: Option<f64>,
    /// Boundary rms of the discrete normal covariant derivative, over `kappa^2`.
    pub r3: f64,
    /// Largest `|curl A - 1|` on cells touching the boundary.
    pub r4: f64,
}

pub fn gl_residual(state: &GLState) -> Result<Residuals, FieldError> {
    let lattice = state.check()?;
    let grid = *lattice.grid();
    let k2 = state.kappa * state.kappa;
    let links = state.links();
    let mut g = vec![Complex64::new(0.0, 0.0); grid.len()];
    OrderParameterFunctional::new(&lattice, &links, 1.0, k2).energy_and_gradient(&state.psi.values, &mut g);
    let boundary = lattice.boundary_nodes();
    let mut on_boundary = vec![false; grid.len()];
    boundary.iter().for_each(|&k| on_boundary[k] = true);
    let h = spacing(&grid);
    let w = lattice.node_weights();
    let (mut s1, mut a1, mut s3, mut a3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..grid.len() {
        if w[k] == 0.0 {
            continue;
        }
        if on_boundary[k] {
            // Boundary length carried by the node.
            let len = 2.0 * w[k] / h;
            let r = g[k].norm() / (2.0 * len);
            s3 += len * r * r;
            a3 += len;
        } else {
            let r = g[k].norm() / (2.0 * w[k]);
            s1 += w[k] * r * r;
            a1 += w[k];
        }
    }
    let rms = |s: f64, a: f64| if a > 0.0 { (s / a).sqrt() } else { 0.0 };

    let r2 = (state.mode == FieldMode::Coupled).then(|| {
        let x: Vec<f64> = state.a.ax.iter().chain(&state.a.ay).copied().collect();
        let ablock = ABlock { lattice: &lattice, psi: &state.psi.values, kappa: state.kappa, coupling: state.coupling() };
        let mut ga = vec![0.0; x.len()];
        ablock.value_and_gradient(&x, &mut ga);
        let c2 = state.coupling() * state.coupling();
        let (mut s, mut a) = (0.0, 0.0);
        for (from, to, we, _, e) in active_edges(&lattice) {
            if on_boundary[from] || on_boundary[to] || c2 == 0.0 {
                continue;
            }
            let r = ga[e] / (2.0 * c2 * we);
            s += we * r * r;
            a += we;
        }
        rms(s, a)
    });

    let curl = state.a.plaquette_curl();
    let [nx, ny] = grid.n();
    let mut r4: f64 = 0.0;
    for cj in 0..ny - 1 {
        for ci in 0..nx - 1 {
            if !lattice.cell_active(ci, cj) {
                continue;
            }
            let touches = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().any(|(di, dj)| on_boundary[(cj + dj) * nx + ci + di]);
            if touches {
                r4 = r4.max((curl[cj * (nx - 1) + ci] - 1.0).abs());
            }
        }
    }
    Ok(Residuals { r1: rms(s1, a1) / k2, r2, r3: rms(s3, a3) / k2, r4 })
}

/// `|E_op + kappa^2/2 int |psi|^4| / (kappa^2 |Omega|)`; zero at every critical point in `psi`.
pub fn energy_identity_check(state: &GLState) -> Result<f64, FieldError> {
    let lattice = state.check()?;
    let links = state.links();
    let k2 = state.kappa * state.kappa;
    let p = OrderParameterFunctional::new(&lattice, &links, 1.0, k2).parts(&state.psi.values);
    Ok((p.kinetic - k2 * p.l2 + k2 * p.l4).abs() / (k2 * lattice.area()))
}

/// Bounds that every minimizer satisfies, with the constants they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub kappa: f64,
    pub max_modulus: f64,
    pub max_covariant_gradient: f64,
    /// `max |(grad - i kappa H A) psi| / kappa`
    pub gradient_constant: f64,
    pub curl_deviation: f64,
    /// `kappa * sup |curl A - 1|`
    pub curl_constant: f64,
    pub e_mag: f64,
    /// `e_mag / kappa^{7/4}`
    pub e_mag_scaled: f64,
    pub energy_identity: f64,
}

pub fn apriori_report(state: &GLState) -> Result<AprioriReport, FieldError> {
    let lattice = state.check()?;
    let links = state.links();
    let kin = cell_kinematics(&lattice, &links, &state.psi.values);
    let max_grad = kin.grad_sq.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
    let grid = lattice.grid();
    let nx = grid.nx();
    let curl_dev = state
        .a
        .plaquette_curl()
        .iter()
        .enumerate()
        .filter(|(c, _)| lattice.cell_active(c % (nx - 1), c / (nx - 1)))
        .fold(0.0f64, |m, (_, v)| m.max((v - 1.0).abs()));
    let energy = gl_energy(state)?;
    let max_modulus = state
        .psi
        .values
        .iter()
        .enumerate()
        .filter(|(k, _)| lattice.node_active(*k))
        .fold(0.0f64, |m, (_, z)| m.max(z.norm()));
    Ok(AprioriReport {
        kappa: state.kappa,
        max_modulus,
        max_covariant_gradient: max_grad,
        gradient_constant: max_grad / state.kappa,
        curl_deviation: curl_dev,
        curl_constant: state.kappa * curl_dev,
        e_mag: energy.e_mag,
        e_mag_scaled: energy.e_mag / state.kappa.powf(1.75),
        energy_identity: energy_identity_check(state)?,
    })
}
