//! Local observables of a GL state: energies on interior windows, the gauge
//! recentering around a point, the blow-up to magnetic-length units and the
//! checks comparing all of these against the bulk energy.

use std::collections::VecDeque;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bulk::{GDerivative, GEstimate};
use crate::error::{FieldError, SolverError};
use crate::field::{a0, ComplexField2D, GaugePhase, Grid2D, Point};
use crate::gl::{active_edges, edge_value, gauge_transform, GLState};
use crate::lattice::{cell_kinematics, EdgePotential, Lattice, OrderParameterFunctional};

/// Axis-aligned square window snapped to grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalWindow {
    pub center: Point,
    pub side: f64,
    /// Node box `[i0, i1] x [j0, j1]` of the parent grid.
    pub nodes: [usize; 4],
}

impl LocalWindow {
    /// Window of side close to `side` centred near `center`, all of whose cells are active.
    pub fn inside(lattice: &Lattice, center: Point, side: f64) -> Result<Self, SolverError> {
        let g = lattice.grid();
        let [hx, hy] = g.spacing();
        let [ox, oy] = g.origin();
        if (hx - hy).abs() > 1e-9 * hx {
            return Err(SolverError::Window("windows need a grid with equal spacings".into()));
        }
        let cells = (side / hx).round().max(1.0) as i64;
        let i0 = ((center[0] - ox) / hx - 0.5 * cells as f64).round() as i64;
        let j0 = ((center[1] - oy) / hy - 0.5 * cells as f64).round() as i64;
        let (i1, j1) = (i0 + cells, j0 + cells);
        if i0 < 0 || j0 < 0 || i1 >= g.nx() as i64 || j1 >= g.ny() as i64 {
            return Err(SolverError::Window(format!("window at {center:?} of side {side} leaves the grid")));
        }
        let [i0, i1, j0, j1] = [i0 as usize, i1 as usize, j0 as usize, j1 as usize];
        for cj in j0..j1 {
            for ci in i0..i1 {
                if !lattice.cell_active(ci, cj) {
                    return Err(SolverError::Window(format!("window at {center:?} leaves the domain")));
                }
            }
        }
        Ok(Self {
            center: [ox + 0.5 * (i0 + i1) as f64 * hx, oy + 0.5 * (j0 + j1) as f64 * hy],
            side: cells as f64 * hx,
            nodes: [i0, i1, j0, j1],
        })
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn lattice(&self, parent: &Lattice) -> Lattice {
        let [i0, i1, j0, j1] = self.nodes;
        parent.restricted(i0, i1, j0, j1)
    }

    /// The four quarter windows.
    pub fn quarters(&self, parent: &Lattice) -> Result<[LocalWindow; 4], SolverError> {
        let [i0, i1, j0, _] = self.nodes;
        if (i1 - i0) % 2 != 0 {
            return Err(SolverError::Window("window needs an even cell count to split".into()));
        }
        let m = (i1 - i0) / 2;
        let [hx, _] = parent.grid().spacing();
        let mk = |a: usize, b: usize| {
            let [ox, oy] = parent.grid().origin();
            LocalWindow {
                center: [ox + (a as f64 + 0.5 * m as f64) * hx, oy + (b as f64 + 0.5 * m as f64) * hx],
                side: m as f64 * hx,
                nodes: [a, a + m, b, b + m],
            }
        };
        Ok([mk(i0, j0), mk(i0 + m, j0), mk(i0, j0 + m), mk(i0 + m, j0 + m)])
    }
}

/// `E0(f, a; Q) = int_Q |(grad - i kappa H a) f|^2 - kappa^2 |f|^2 + kappa^2/2 |f|^4`
/// on the window's own lattice.
pub fn local_energy(
    f: &ComplexField2D,
    a: &EdgePotential,
    window: &LocalWindow,
    kappa: f64,
    h_field: f64,
) -> Result<f64, SolverError> {
    if !f.grid.same_layout(&a.grid) {
        return Err(FieldError::GridMismatch.into());
    }
    let [_, i1, _, j1] = window.nodes;
    if i1 >= f.grid.nx() || j1 >= f.grid.ny() {
        return Err(SolverError::Window("window outside the field's grid".into()));
    }
    let lattice = window.lattice(&Lattice::full(f.grid));
    let links = a.links(kappa * h_field);
    Ok(OrderParameterFunctional::new(&lattice, &links, 1.0, kappa * kappa).energy(&f.values))
}

/// Integrals of Theorem-style observables over a region, normalized per area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub mean_sq: f64,
    pub mean_quartic: f64,
    /// `int |(grad - i kappa H A) psi|^2 / (kappa^2 |D|)`
    pub kinetic: f64,
    /// `int |j| / (kappa |D|)`
    pub current_l1: f64,
    /// `int |j|^2 / (kappa^2 |D|)`
    pub current_l2: f64,
    /// `kappa^2 H^2 int |curl A - 1|^2 / (kappa^2 |D|)`
    pub mag_energy: f64,
    pub domain_area: f64,
}

/// Observables over the active cells of `region`, a restriction of the state's lattice.
pub fn observables(state: &GLState, region: &Lattice) -> ObservableReport {
    let k = state.kappa;
    let links = state.links();
    let parts = OrderParameterFunctional::new(region, &links, 1.0, k * k).parts(&state.psi.values);
    let area = region.area();
    let kin = cell_kinematics(region, &links, &state.psi.values);
    let j_l1 = region.integrate_cells(&kin.current_sq.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
    let j_l2 = region.integrate_cells(&kin.current_sq);
    let dev: Vec<f64> = state.a.plaquette_curl().iter().map(|c| (c - 1.0).powi(2)).collect();
    let c2 = state.coupling() * state.coupling();
    ObservableReport {
        mean_sq: parts.l2 / area,
        mean_quartic: parts.l4 / area,
        kinetic: parts.kinetic / (k * k * area),
        current_l1: j_l1 / (k * area),
        current_l2: j_l2 / (k * k * area),
        mag_energy: c2 * region.integrate_cells(&dev) / (k * k * area),
        domain_area: area,
    }
}

/// Active cells at distance at least `margin` (fraction of the bounding box) from its edges.
pub fn interior_lattice(state: &GLState, margin: f64) -> Result<Lattice, SolverError> {
    let lattice = state.lattice()?;
    let g = *lattice.grid();
    let [lx, ly] = g.side();
    let [hx, hy] = g.spacing();
    let i0 = (margin * lx / hx).ceil() as usize;
    let j0 = (margin * ly / hy).ceil() as usize;
    let i1 = g.nx() - 1 - i0;
    let j1 = g.ny() - 1 - j0;
    if i1 <= i0 || j1 <= j0 {
        return Err(SolverError::Window(format!("margin {margin} leaves no interior")));
    }
    Ok(lattice.restricted(i0, i1, j0, j1))
}

/// Largest nodal `|j| - |psi| |D psi|` over the edges (zero or below up to rounding).
pub fn pointwise_current_excess(state: &GLState) -> Result<f64, FieldError> {
    let lattice = state.lattice()?;
    let links = state.links();
    let psi = &state.psi.values;
    let mut worst = f64::NEG_INFINITY;
    for bd in lattice.bonds().iter().filter(|b| b.span == 1) {
        let d = links.along(bd) * psi[bd.to] - psi[bd.from];
        let j = (psi[bd.from].conj() * d).im.abs();
        worst = worst.max(j - psi[bd.from].norm() * d.norm());
    }
    Ok(worst)
}

/// Largest relative change of the gauge-invariant quantities (`|psi|^2`,
/// `curl A`, `|D psi|^2`, `|j|^2` per cell) under `chi`.
pub fn gauge_defect(state: &GLState, chi: &[f64]) -> Result<f64, FieldError> {
    let other = gauge_transform(state, chi);
    let lattice = state.lattice()?;
    let k0 = cell_kinematics(&lattice, &state.links(), &state.psi.values);
    let k1 = cell_kinematics(&lattice, &other.links(), &other.psi.values);
    let rel = |x: &[f64], y: &[f64]| {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
    };
    let d0: Vec<f64> = state.psi.values.iter().map(|z| z.norm_sqr()).collect();
    let d1: Vec<f64> = other.psi.values.iter().map(|z| z.norm_sqr()).collect();
    Ok(rel(&d0, &d1)
        .max(rel(&state.a.plaquette_curl(), &other.a.plaquette_curl()))
        .max(rel(&k0.grad_sq, &k1.grad_sq))
        .max(rel(&k0.current_sq, &k1.current_sq)))
}

/// Gauss-Legendre rule on `[0, 1]`.
const GAUSS8: [(f64, f64); 8] = [
    (0.019855071751231856, 0.05061426814518813),
    (0.10166676129318664, 0.11119051722668724),
    (0.2372337950418355, 0.15685332293894363),
    (0.4082826787521751, 0.181341891689181),
    (0.5917173212478249, 0.181341891689181),
    (0.7627662049581645, 0.15685332293894363),
    (0.8983332387068134, 0.11119051722668724),
    (0.9801449282487681, 0.05061426814518813),
];

/// Largest `|curl(G - a)|` accepted before the reconstruction is declared path dependent.
pub const PATH_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBound {
    /// Fitted `C` in `|a + grad phi0 - A0(x - x0)| <= (C / kappa) max(|x - x0|, |x - x0|^2)`.
    pub constant: f64,
    pub max_deviation: f64,
    /// Largest cell circulation of `G - a`.
    pub path_dependence: f64,
}

/// Node values of `curl a`: the mean over adjacent active cells, extended to
/// the rest of the box by nearest filled neighbour.
fn node_curl(lattice: &Lattice, a: &EdgePotential) -> Vec<f64> {
    let g = lattice.grid();
    let [nx, ny] = g.n();
    let curl = a.plaquette_curl();
    let mut out = vec![f64::NAN; nx * ny];
    let mut queue = VecDeque::new();
    for j in 0..ny {
        for i in 0..nx {
            let (mut s, mut c) = (0.0, 0);
            for cj in j.saturating_sub(1)..=j.min(ny - 2) {
                for ci in i.saturating_sub(1)..=i.min(nx - 2) {
                    if lattice.cell_active(ci, cj) {
                        s += curl[cj * (nx - 1) + ci];
                        c += 1;
                    }
                }
            }
            if c > 0 {
                out[j * nx + i] = s / c as f64;
                queue.push_back(j * nx + i);
            }
        }
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % nx, k / nx);
        let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (a, b) in nbrs {
            if a < nx && b < ny && out[b * nx + a].is_nan() {
                out[b * nx + a] = out[k];
                queue.push_back(b * nx + a);
            }
        }
    }
    out
}

fn bilinear(grid: &Grid2D, values: &[f64], p: Point) -> f64 {
    let [ox, oy] = grid.origin();
    let [hx, hy] = grid.spacing();
    let [nx, ny] = grid.n();
    let u = ((p[0] - ox) / hx).clamp(0.0, (nx - 1) as f64);
    let v = ((p[1] - oy) / hy).clamp(0.0, (ny - 1) as f64);
    let (i, j) = ((u.floor() as usize).min(nx - 2), (v.floor() as usize).min(ny - 2));
    let (s, t) = (u - i as f64, v - j as f64);
    let at = |a: usize, b: usize| values[b * nx + a];
    (1.0 - s) * (1.0 - t) * at(i, j) + s * (1.0 - t) * at(i + 1, j) + (1.0 - s) * t * at(i, j + 1) + s * t * at(i + 1, j + 1)
}

/// Phase `phi0` with `a + grad phi0` close to `A0(x - x0)`: builds
/// `G(x) = 2 (int_0^1 s B(x0 + s (x - x0)) ds) A0(x - x0)`, whose curl is `B = curl a`,
/// and integrates `G - a` along a breadth-first tree of edges rooted at the node nearest `x0`.
pub fn recenter_gauge(
    lattice: &Lattice,
    a: &EdgePotential,
    x0: Point,
    kappa: f64,
) -> Result<(GaugePhase, PhaseBound), SolverError> {
    let grid = *lattice.grid();
    if !a.grid.same_layout(&grid) {
        return Err(FieldError::GridMismatch.into());
    }
    let [nx, ny] = grid.n();
    let b_nodes = node_curl(lattice, a);
    let g_field = EdgePotential::from_midpoints(grid, |m| {
        let s_int: f64 = GAUSS8
            .iter()
            .map(|&(s, w)| w * s * bilinear(&grid, &b_nodes, [x0[0] + s * (m[0] - x0[0]), x0[1] + s * (m[1] - x0[1])]))
            .sum();
        let lin = a0(m, x0);
        [2.0 * s_int * lin[0], 2.0 * s_int * lin[1]]
    });
    let mut target = g_field.clone();
    for (t, v) in target.ax.iter_mut().zip(&a.ax) {
        *t -= v;
    }
    for (t, v) in target.ay.iter_mut().zip(&a.ay) {
        *t -= v;
    }
    let path_dependence = target
        .plaquette_curl()
        .iter()
        .enumerate()
        .filter(|(c, _)| lattice.cell_active(c % (nx - 1), c / (nx - 1)))
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    if path_dependence > PATH_TOL {
        return Err(SolverError::PathDependence(path_dependence));
    }

    let edges = active_edges(lattice);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid.len()];
    for &(from, to, _, h, e) in &edges {
        let step = edge_value(&target, e) * h;
        adj[from].push((to, step));
        adj[to].push((from, -step));
    }
    let [ox, oy] = grid.origin();
    let [hx, hy] = grid.spacing();
    let root = {
        let i = (((x0[0] - ox) / hx).round().max(0.0) as usize).min(nx - 1);
        let j = (((x0[1] - oy) / hy).round().max(0.0) as usize).min(ny - 1);
        let near = j * nx + i;
        if lattice.node_active(near) {
            near
        } else {
            (0..grid.len())
                .filter(|&k| lattice.node_active(k))
                .min_by(|&p, &q| {
                    let d = |k: usize| {
                        let [x, y] = grid.node(k % nx, k / nx);
                        (x - x0[0]).hypot(y - x0[1])
                    };
                    d(p).total_cmp(&d(q))
                })
                .ok_or_else(|| SolverError::Window("empty lattice".into()))?
        }
    };
    let mut phi = vec![f64::NAN; grid.len()];
    phi[root] = 0.0;
    let mut queue = VecDeque::from([root]);
    while let Some(k) = queue.pop_front() {
        for &(q, step) in &adj[k] {
            if phi[q].is_nan() {
                phi[q] = phi[k] + step;
                queue.push_back(q);
            }
        }
    }
    phi.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = 0.0);

    let mut fixed = a.clone();
    fixed.add_gradient(&phi);
    let reference = EdgePotential::a0(grid, x0);
    let (mut constant, mut max_dev) = (0.0f64, 0.0f64);
    for &(from, to, _, _, e) in &edges {
        let dev = (edge_value(&fixed, e) - edge_value(&reference, e)).abs();
        let [xa, ya] = grid.node(from % nx, from / nx);
        let [xb, yb] = grid.node(to % nx, to / nx);
        let r = (0.5 * (xa + xb) - x0[0]).hypot(0.5 * (ya + yb) - x0[1]);
        max_dev = max_dev.max(dev);
        if r > 0.0 {
            constant = constant.max(kappa * dev / r.max(r * r));
        }
    }
    let phase = GaugePhase(lattice.node_scalar(phi));
    Ok((phase, PhaseBound { constant, max_deviation: max_dev, path_dependence }))
}

/// The window's order parameter in blow-up coordinates `y = sqrt(kappa H) (x - x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpField {
    pub field: ComplexField2D,
    /// `R = side * sqrt(kappa H)`
    pub r: f64,
    pub x0: Point,
    pub ell: f64,
    pub kappa: f64,
    pub b: f64,
    pub bound: PhaseBound,
}

/// `e^{i kappa H phi0} psi` on the parent grid, with `phi0` recentered at the window centre.
pub fn recentered_order_parameter(state: &GLState, window: &LocalWindow) -> Result<(ComplexField2D, PhaseBound), SolverError> {
    let lattice = state.lattice()?;
    let (phi, bound) = recenter_gauge(&lattice, &state.a, window.center, state.kappa)?;
    let c = state.coupling();
    let values = state.psi.values.iter().zip(&phi.0.values).map(|(z, p)| z * Complex64::from_polar(1.0, c * p)).collect();
    Ok((ComplexField2D::from_values(state.psi.grid, values)?, bound))
}

pub fn blow_up(state: &GLState, window: &LocalWindow) -> Result<BlowUpField, SolverError> {
    let (f, bound) = recentered_order_parameter(state, window)?;
    let g = f.grid;
    let [i0, i1, j0, j1] = window.nodes;
    let s = state.coupling().sqrt();
    let x0 = window.center;
    let [hx, hy] = g.spacing();
    let grid = Grid2D::new(
        [(g.x1(i0) - x0[0]) * s, (g.x2(j0) - x0[1]) * s],
        [(i1 - i0) as f64 * hx * s, (j1 - j0) as f64 * hy * s],
        [i1 - i0 + 1, j1 - j0 + 1],
    )?;
    let mut values = Vec::with_capacity(grid.len());
    for j in j0..=j1 {
        for i in i0..=i1 {
            values.push(f.at(i, j));
        }
    }
    Ok(BlowUpField {
        field: ComplexField2D::from_values(grid, values)?,
        r: window.side * s,
        x0,
        ell: window.side,
        kappa: state.kappa,
        b: state.b,
        bound,
    })
}

/// Both sides of the change of variables:
/// `E0(f, A0^{x0}; Q_l) / (kappa^2 |Q_l|)` and the cell functional of the blow-up per area.
pub fn scaling_identity(state: &GLState, window: &LocalWindow) -> Result<(f64, f64), SolverError> {
    let (f, _) = recentered_order_parameter(state, window)?;
    let a_ref = EdgePotential::a0(f.grid, window.center);
    let lhs = local_energy(&f, &a_ref, window, state.kappa, state.h_field())? / (state.kappa * state.kappa * window.area());
    let blown = blow_up(state, window)?;
    let grid = blown.field.grid;
    let lattice = Lattice::full(grid);
    let links = EdgePotential::a0(grid, [0.0, 0.0]).links(1.0);
    let rhs = OrderParameterFunctional::new(&lattice, &links, state.b, 1.0).energy(&blown.field.values) / (blown.r * blown.r);
    Ok((lhs, rhs))
}

/// Values of the bulk energy that the local checks compare against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkReference {
    pub b: f64,
    pub g: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub regular: bool,
}

impl BulkReference {
    pub fn new(g: &GEstimate, gd: &GDerivative) -> Self {
        Self { b: g.b, g: g.value, d_minus: gd.d_minus, d_plus: gd.d_plus, regular: gd.regular }
    }

    pub fn derivative(&self) -> f64 {
        0.5 * (self.d_minus + self.d_plus)
    }
}

/// How the kinetic and density targets are read: as stated, or with the
/// kinetic derivative weighted by `b`, which is what the cell functional gives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Stated,
    Weighted,
}

/// One inequality `lower <= value <= upper` with its slack: the smallest shift
/// of the bounds that makes it hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityRow {
    pub name: String,
    pub form: Form,
    pub window: Option<usize>,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub slack: f64,
    pub allowed: f64,
    pub pass: bool,
}

impl InequalityRow {
    fn new(name: &str, form: Form, window: Option<usize>, value: f64, lower: Option<f64>, upper: Option<f64>, allowed: f64) -> Self {
        let below = lower.map_or(0.0, |l| l - value);
        let above = upper.map_or(0.0, |u| value - u);
        let slack = below.max(above).max(0.0);
        Self { name: name.into(), form, window, value, lower, upper, slack, allowed, pass: slack <= allowed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    /// Distance of every window from the bounding box, as a fraction of its side.
    pub margin: f64,
    /// `l = c / sqrt(kappa)`
    pub c: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self { margin: 0.15, c: 1.5 }
    }
}

/// Regular array of windows of side `c / sqrt(kappa)` filling the interior, plus the centred one.
pub fn auto_windows(state: &GLState, policy: &WindowPolicy) -> Result<Vec<LocalWindow>, SolverError> {
    let lattice = state.lattice()?;
    let ell = policy.c / state.kappa.sqrt();
    let [lx, ly] = lattice.grid().side();
    let lo = [policy.margin * lx, policy.margin * ly];
    let span = [(1.0 - 2.0 * policy.margin) * lx, (1.0 - 2.0 * policy.margin) * ly];
    let per = |s: f64| ((s / ell).floor() as usize).max(1);
    let (mx, my) = (per(span[0]), per(span[1]));
    let mut out: Vec<LocalWindow> = Vec::new();
    let centre = state.domain.centroid();
    let mut push = |c: Point| -> Result<(), SolverError> {
        let w = LocalWindow::inside(&lattice, c, ell)?;
        if !out.iter().any(|o| o.nodes == w.nodes) {
            out.push(w);
        }
        Ok(())
    };
    push(centre)?;
    for q in 0..my {
        for p in 0..mx {
            let c = [lo[0] + (p as f64 + 0.5) * span[0] / mx as f64, lo[1] + (q as f64 + 0.5) * span[1] / my as f64];
            // Windows that would poke into the margin or out of a masked domain are skipped.
            if let Ok(()) = push(c) {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub window: LocalWindow,
    pub observables: ObservableReport,
    /// `E0(e^{i kappa H phi0} psi, A0^{x0}) / (kappa^2 |Q|)`
    pub energy_per_area: f64,
    pub energy_discrepancy: f64,
    pub quartic_discrepancy: f64,
    /// Discrepancies divided by `l + 1 / (kappa l)`.
    pub energy_constant: f64,
    pub quartic_constant: f64,
    pub phase: PhaseBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub kappa: f64,
    pub reference: BulkReference,
    pub windows: Vec<WindowEstimate>,
    pub rows: Vec<InequalityRow>,
    pub energy_constant: f64,
    pub quartic_constant: f64,
    /// Ratio of the largest to the smallest normalized discrepancy.
    pub spread: f64,
}

/// Allowed slacks of the window and global checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackTolerances {
    pub quartic: f64,
    pub band: f64,
}

impl Default for SlackTolerances {
    fn default() -> Self {
        Self { quartic: 0.08, band: 0.12 }
    }
}

pub fn verify_local_estimates(
    state: &GLState,
    reference: &BulkReference,
    windows: &[LocalWindow],
    tol: &SlackTolerances,
) -> Result<LocalReport, SolverError> {
    let lattice = state.lattice()?;
    let (k, b, g) = (state.kappa, reference.b, reference.g);
    let mut estimates = Vec::with_capacity(windows.len());
    let mut rows = Vec::new();
    for (idx, w) in windows.iter().enumerate() {
        let (f, phase) = recentered_order_parameter(state, w)?;
        let a_ref = EdgePotential::a0(f.grid, w.center);
        let e = local_energy(&f, &a_ref, w, k, state.h_field())? / (k * k * w.area());
        let obs = observables(state, &w.lattice(&lattice));
        let scale = w.side + 1.0 / (k * w.side);
        let (de, dq) = ((e - g).abs(), (obs.mean_quartic + 2.0 * g).abs());
        rows.push(InequalityRow::new("window_quartic", Form::Stated, Some(idx), obs.mean_quartic, Some(-2.0 * g), Some(-2.0 * g), tol.quartic));
        let (lo, hi) = (reference.d_plus - 2.0 * g, reference.d_minus - 2.0 * g);
        rows.push(InequalityRow::new("window_density", Form::Stated, Some(idx), obs.mean_sq, Some(lo), Some(hi), tol.band));
        let (lo, hi) = (b * reference.d_plus - 2.0 * g, b * reference.d_minus - 2.0 * g);
        rows.push(InequalityRow::new("window_density", Form::Weighted, Some(idx), obs.mean_sq, Some(lo), Some(hi), tol.band));
        estimates.push(WindowEstimate {
            window: *w,
            observables: obs,
            energy_per_area: e,
            energy_discrepancy: de,
            quartic_discrepancy: dq,
            energy_constant: de / scale,
            quartic_constant: dq / scale,
            phase,
        });
    }
    let max_by = |f: fn(&WindowEstimate) -> f64| estimates.iter().map(f).fold(0.0f64, f64::max);
    let normalized: Vec<f64> = estimates.iter().flat_map(|e| [e.energy_constant, e.quartic_constant]).collect();
    let (lo, hi) = normalized.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    Ok(LocalReport {
        kappa: k,
        reference: *reference,
        energy_constant: max_by(|e| e.energy_constant),
        quartic_constant: max_by(|e| e.quartic_constant),
        spread: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        windows: estimates,
        rows,
    })
}

/// Tensor-product bump `prod (1 - ((x_i - c_i) / w)^2)^2` on `|x_i - c_i| < w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, x: Point) -> f64 {
        let f = |t: f64| if t.abs() < 1.0 { (1.0 - t * t).powi(2) } else { 0.0 };
        f((x[0] - self.center[0]) / self.width) * f((x[1] - self.center[1]) / self.width)
    }
}

/// Fixed probe suite: five centres (the centroid and four offsets of a fifth
/// of the box) at widths of a tenth and a fifth of the box.
pub fn probe_suite(state: &GLState) -> Vec<Bump> {
    let [lx, ly] = state.domain.shape.bounding_side();
    let c = state.domain.centroid();
    let l = lx.min(ly);
    let offsets = [[0.0, 0.0], [-0.2, -0.2], [0.2, -0.2], [-0.2, 0.2], [0.2, 0.2]];
    let mut out = Vec::new();
    for width in [0.1 * l, 0.2 * l] {
        for o in offsets {
            out.push(Bump { center: [c[0] + o[0] * lx, c[1] + o[1] * ly], width });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub kappa: f64,
    pub b: f64,
    pub margin: f64,
    pub reference: BulkReference,
    pub observables: ObservableReport,
    pub rows: Vec<InequalityRow>,
}

impl TheoremReport {
    pub fn row(&self, name: &str, form: Form) -> Option<&InequalityRow> {
        self.rows.iter().find(|r| r.name == name && r.form == form)
    }

    pub fn rows_of(&self, form: Form) -> impl Iterator<Item = &InequalityRow> {
        self.rows.iter().filter(move |r| r.form == form)
    }
}

/// Global statements on the interior region at distance `margin` from the boundary.
pub fn verify_theorem_main(
    state: &GLState,
    reference: &BulkReference,
    margin: f64,
    tol: &SlackTolerances,
) -> Result<TheoremReport, SolverError> {
    let region = interior_lattice(state, margin)?;
    let obs = observables(state, &region);
    let (b, g) = (reference.b, reference.g);
    let (dp, dm) = (reference.d_plus, reference.d_minus);
    let mut rows = Vec::new();
    let band = tol.band;
    rows.push(InequalityRow::new("quartic", Form::Stated, None, obs.mean_quartic, Some(-2.0 * g), Some(-2.0 * g), tol.quartic));
    for (form, w) in [(Form::Stated, 1.0), (Form::Weighted, b)] {
        rows.push(InequalityRow::new("kinetic", form, None, obs.kinetic, Some(w * dp), Some(w * dm), band));
        rows.push(InequalityRow::new("density", form, None, obs.mean_sq, Some(w * dp - 2.0 * g), Some(w * dm - 2.0 * g), band));
        rows.push(InequalityRow::new("current_l2", form, None, obs.current_l2, None, Some(w * dm), band));
        let l1 = (w * dm * (w * dm - 2.0 * g)).max(0.0).sqrt();
        rows.push(InequalityRow::new("current_l1", form, None, obs.current_l1, None, Some(l1), band));
        if reference.regular {
            let d = reference.derivative();
            let potential = -obs.mean_sq + 0.5 * obs.mean_quartic;
            let target = g - w * d;
            rows.push(InequalityRow::new("potential", form, None, potential, Some(target), Some(target), band));
            let psi = &state.psi.values;
            let grid = region.grid();
            let target = w * d - 2.0 * g;
            for (k, bump) in probe_suite(state).iter().enumerate() {
                let phi: Vec<f64> = grid.nodes().map(|(i, j)| bump.eval(grid.node(i, j))).collect();
                let den = region.integrate_nodes(&phi);
                let num = region.integrate_nodes(&phi.iter().zip(psi).map(|(p, z)| p * z.norm_sqr()).collect::<Vec<_>>());
                if den > 0.0 {
                    let name = format!("probe_{k}");
                    rows.push(InequalityRow::new(&name, form, None, num / den, Some(target), Some(target), band));
                }
            }
        }
    }
    let sq = obs.mean_quartic.sqrt();
    rows.push(InequalityRow::new("density_vs_quartic", Form::Stated, None, obs.mean_sq, None, Some(sq), 1e-12));
    rows.push(InequalityRow::new("quartic_root", Form::Stated, None, sq, None, Some((-2.0 * g).max(0.0).sqrt()), band));
    let depletion = 1.0 - 2.0 * obs.mean_sq + obs.mean_quartic;
    rows.push(InequalityRow::new("depletion", Form::Stated, None, depletion, None, Some(1.0 + 2.0 * g), band));
    Ok(TheoremReport { kappa: state.kappa, b, margin, reference: *reference, observables: obs, rows })
}
