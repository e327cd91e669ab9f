//! Gauge-invariant lattice discretization used by every energy in the crate.
//!
//! The order parameter lives on nodes, the magnetic potential on edges
//! (average tangential component along the edge). Kinetic terms are edge
//! differences `(e^{-i theta} psi_j - psi_i) / h` with `theta` the transporter
//! phase, so the discrete energy is exactly invariant under discrete gauge
//! changes. Quadrature is the trapezoidal rule over active cells: a node
//! carries a quarter of each adjacent active cell, an edge half of each.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::field::{a0, Grid2D, Point, ScalarField2D, VectorField2D};

/// Difference stencil of the kinetic term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// Nearest-neighbour bonds only.
    Second,
    /// Nearest bonds weighted `4/3` against two-step bonds weighted `-1/12`,
    /// reduced to second order where a two-step bond leaves the lattice.
    #[default]
    Fourth,
}

/// One kinetic term `weight * |U psi_to - psi_from|^2`, where `U` is the
/// product of the transporters on `links` (global edge indices, x edges first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    pub links: [usize; 2],
    pub span: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    grid: Grid2D,
    stencil: Stencil,
    active_cells: Vec<bool>,
    node_w: Vec<f64>,
    xedge_w: Vec<f64>,
    yedge_w: Vec<f64>,
    bonds: Vec<Bond>,
}

impl Lattice {
    pub fn full(grid: Grid2D) -> Self {
        Self::with_cells(grid, |_, _| true)
    }

    pub fn with_stencil(mut self, stencil: Stencil) -> Self {
        if stencil != self.stencil {
            self.stencil = stencil;
            self.bonds = build_bonds(&self.grid, stencil, &self.xedge_w, &self.yedge_w);
        }
        self
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Lattice made of the cells `(ci, cj)` (lower-left node index) accepted by `keep`.
    pub fn with_cells(grid: Grid2D, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let [nx, ny] = grid.n();
        let mut active = vec![false; (nx - 1) * (ny - 1)];
        for cj in 0..ny - 1 {
            for ci in 0..nx - 1 {
                active[cj * (nx - 1) + ci] = keep(ci, cj);
            }
        }
        Self::from_active(grid, active, Stencil::default())
    }

    fn from_active(grid: Grid2D, active_cells: Vec<bool>, stencil: Stencil) -> Self {
        let [nx, ny] = grid.n();
        let [hx, hy] = grid.spacing();
        let area = hx * hy;
        let mut node_w = vec![0.0; nx * ny];
        let mut xedge_w = vec![0.0; (nx - 1) * ny];
        let mut yedge_w = vec![0.0; nx * (ny - 1)];
        for cj in 0..ny - 1 {
            for ci in 0..nx - 1 {
                if !active_cells[cj * (nx - 1) + ci] {
                    continue;
                }
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    node_w[(cj + dj) * nx + ci + di] += 0.25 * area;
                }
                xedge_w[cj * (nx - 1) + ci] += 0.5 * area;
                xedge_w[(cj + 1) * (nx - 1) + ci] += 0.5 * area;
                yedge_w[cj * nx + ci] += 0.5 * area;
                yedge_w[cj * nx + ci + 1] += 0.5 * area;
            }
        }
        let bonds = build_bonds(&grid, stencil, &xedge_w, &yedge_w);
        Self { grid, stencil, active_cells, node_w, xedge_w, yedge_w, bonds }
    }

    /// Cells of `self` lying inside the node box `[i0, i1] x [j0, j1]`.
    pub fn restricted(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        let nx = self.grid.nx();
        let active = self
            .active_cells
            .iter()
            .enumerate()
            .map(|(c, &on)| {
                let (ci, cj) = (c % (nx - 1), c / (nx - 1));
                on && ci >= i0 && ci < i1 && cj >= j0 && cj < j1
            })
            .collect();
        Self::from_active(self.grid, active, self.stencil)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_w
    }

    pub fn xedge_weights(&self) -> &[f64] {
        &self.xedge_w
    }

    pub fn yedge_weights(&self) -> &[f64] {
        &self.yedge_w
    }

    pub fn cell_active(&self, ci: usize, cj: usize) -> bool {
        self.active_cells[cj * (self.grid.nx() - 1) + ci]
    }

    pub fn node_active(&self, idx: usize) -> bool {
        self.node_w[idx] > 0.0
    }

    pub fn area(&self) -> f64 {
        self.node_w.iter().sum()
    }

    /// Nodes touching both an active and an inactive cell (or the grid edge).
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let [nx, ny] = self.grid.n();
        let mut out = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if self.node_w[j * nx + i] == 0.0 {
                    continue;
                }
                let mut count = 0;
                for cj in j.saturating_sub(1)..=j.min(ny - 2) {
                    for ci in i.saturating_sub(1)..=i.min(nx - 2) {
                        if self.cell_active(ci, cj) {
                            count += 1;
                        }
                    }
                }
                if count < 4 {
                    out.push(j * nx + i);
                }
            }
        }
        out
    }

    pub fn integrate_nodes(&self, values: &[f64]) -> f64 {
        self.node_w.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Kinetic bonds along both axes. Each nearest bond carries `1 + k/6` times its
/// quadrature weight, `k` the number of two-step bonds covering it, so the
/// combination is exact for covariantly linear fields.
fn build_bonds(grid: &Grid2D, stencil: Stencil, xw: &[f64], yw: &[f64]) -> Vec<Bond> {
    let [nx, ny] = grid.n();
    let [hx, hy] = grid.spacing();
    let nxe = (nx - 1) * ny;
    let mut bonds = Vec::new();
    // (node stride, edge index of the edge leaving node (i, j), edge count along the line)
    let axes: [(usize, usize, usize, f64, &[f64]); 2] = [(1, nx - 1, ny, hx, xw), (nx, ny - 1, nx, hy, yw)];
    for (axis, &(stride, len, lines, h, w)) in axes.iter().enumerate() {
        for line in 0..lines {
            let node = |k: usize| if axis == 0 { line * nx + k } else { k * nx + line };
            let edge = |k: usize| if axis == 0 { line * (nx - 1) + k } else { nxe + k * nx + line };
            let weight = |k: usize| if axis == 0 { w[line * (nx - 1) + k] } else { w[k * nx + line] };
            let two_step = |k: usize| stencil == Stencil::Fourth && k + 1 < len && weight(k) > 0.0 && weight(k + 1) > 0.0;
            for k in 0..len {
                let wk = weight(k);
                if wk <= 0.0 {
                    continue;
                }
                let cover = (k > 0 && two_step(k - 1)) as u8 + two_step(k) as u8;
                let c = 1.0 + f64::from(cover) / 6.0;
                bonds.push(Bond { from: node(k), to: node(k) + stride, weight: c * wk / (h * h), links: [edge(k), usize::MAX], span: 1 });
            }
            for k in 0..len.saturating_sub(1) {
                if two_step(k) {
                    let w2 = weight(k) + weight(k + 1);
                    bonds.push(Bond {
                        from: node(k),
                        to: node(k) + 2 * stride,
                        weight: -w2 / (24.0 * h * h),
                        links: [edge(k), edge(k + 1)],
                        span: 2,
                    });
                }
            }
        }
    }
    bonds
}

/// Magnetic potential sampled as average tangential components on edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePotential {
    pub grid: Grid2D,
    /// Edge `(i, j) -> (i + 1, j)` at index `j * (nx - 1) + i`.
    pub ax: Vec<f64>,
    /// Edge `(i, j) -> (i, j + 1)` at index `j * nx + i`.
    pub ay: Vec<f64>,
}

impl EdgePotential {
    pub fn zeros(grid: Grid2D) -> Self {
        let [nx, ny] = grid.n();
        Self { grid, ax: vec![0.0; (nx - 1) * ny], ay: vec![0.0; nx * (ny - 1)] }
    }

    /// `A0(x - center)`; edge midpoints give the exact edge average of a linear field.
    pub fn a0(grid: Grid2D, center: Point) -> Self {
        Self::from_midpoints(grid, |x| a0(x, center))
    }

    pub fn from_midpoints(grid: Grid2D, mut f: impl FnMut(Point) -> [f64; 2]) -> Self {
        let [nx, ny] = grid.n();
        let mut ax = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                let mid = [0.5 * (grid.x1(i) + grid.x1(i + 1)), grid.x2(j)];
                ax.push(f(mid)[0]);
            }
        }
        let mut ay = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                let mid = [grid.x1(i), 0.5 * (grid.x2(j) + grid.x2(j + 1))];
                ay.push(f(mid)[1]);
            }
        }
        Self { grid, ax, ay }
    }

    /// Trapezoid edge averages of a node-sampled field.
    pub fn from_nodes(a: &VectorField2D) -> Self {
        let grid = a.grid;
        let [nx, ny] = grid.n();
        let mut out = Self::zeros(grid);
        for j in 0..ny {
            for i in 0..nx - 1 {
                out.ax[j * (nx - 1) + i] = 0.5 * (a.at(i, j)[0] + a.at(i + 1, j)[0]);
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                out.ay[j * nx + i] = 0.5 * (a.at(i, j)[1] + a.at(i, j + 1)[1]);
            }
        }
        out
    }

    /// Node samples by averaging the incident edges along each axis.
    pub fn to_nodes(&self) -> VectorField2D {
        let g = self.grid;
        let [nx, ny] = g.n();
        let values = g
            .nodes()
            .map(|(i, j)| {
                let mut sx = (0.0, 0.0);
                if i > 0 {
                    sx = (sx.0 + self.ax[j * (nx - 1) + i - 1], sx.1 + 1.0);
                }
                if i + 1 < nx {
                    sx = (sx.0 + self.ax[j * (nx - 1) + i], sx.1 + 1.0);
                }
                let mut sy = (0.0, 0.0);
                if j > 0 {
                    sy = (sy.0 + self.ay[(j - 1) * nx + i], sy.1 + 1.0);
                }
                if j + 1 < ny {
                    sy = (sy.0 + self.ay[j * nx + i], sy.1 + 1.0);
                }
                [sx.0 / sx.1, sy.0 / sy.1]
            })
            .collect();
        VectorField2D { grid: g, values }
    }

    pub fn links(&self, coupling: f64) -> Links {
        let [hx, hy] = self.grid.spacing();
        let t = |a: &f64, h: f64| Complex64::from_polar(1.0, -coupling * h * a);
        Links {
            grid: self.grid,
            ux: self.ax.iter().map(|a| t(a, hx)).collect(),
            uy: self.ay.iter().map(|a| t(a, hy)).collect(),
        }
    }

    /// Circulation per unit area on each cell, index `cj * (nx - 1) + ci`.
    pub fn plaquette_curl(&self) -> Vec<f64> {
        let [nx, ny] = self.grid.n();
        let [hx, hy] = self.grid.spacing();
        let mut out = Vec::with_capacity((nx - 1) * (ny - 1));
        for cj in 0..ny - 1 {
            for ci in 0..nx - 1 {
                let bottom = self.ax[cj * (nx - 1) + ci] * hx;
                let top = self.ax[(cj + 1) * (nx - 1) + ci] * hx;
                let left = self.ay[cj * nx + ci] * hy;
                let right = self.ay[cj * nx + ci + 1] * hy;
                out.push((bottom + right - top - left) / (hx * hy));
            }
        }
        out
    }

    /// `a -> a + grad chi` with the edge difference of the node phase `chi`.
    pub fn add_gradient(&mut self, chi: &[f64]) {
        let [nx, ny] = self.grid.n();
        let [hx, hy] = self.grid.spacing();
        for j in 0..ny {
            for i in 0..nx - 1 {
                self.ax[j * (nx - 1) + i] += (chi[j * nx + i + 1] - chi[j * nx + i]) / hx;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                self.ay[j * nx + i] += (chi[(j + 1) * nx + i] - chi[j * nx + i]) / hy;
            }
        }
    }
}

/// Unit transporters `e^{-i theta}` on every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Links {
    pub grid: Grid2D,
    pub ux: Vec<Complex64>,
    pub uy: Vec<Complex64>,
}

impl Links {
    /// Transporter on a global edge index (x edges first).
    #[inline]
    pub fn edge(&self, e: usize) -> Complex64 {
        if e < self.ux.len() {
            self.ux[e]
        } else {
            self.uy[e - self.ux.len()]
        }
    }

    #[inline]
    pub fn along(&self, bond: &Bond) -> Complex64 {
        let u = self.edge(bond.links[0]);
        if bond.span == 2 {
            u * self.edge(bond.links[1])
        } else {
            u
        }
    }
}

/// Weighted integrals of the three terms of an order-parameter energy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyParts {
    /// `int |(grad - i a) psi|^2`
    pub kinetic: f64,
    /// `int |psi|^2`
    pub l2: f64,
    /// `int |psi|^4`
    pub l4: f64,
}

/// `kinetic * int |D psi|^2 + potential * int (-|psi|^2 + |psi|^4 / 2)`.
///
/// With `(b, 1)` this is the cell functional; with `(1, kappa^2)` it is the
/// order-parameter part of the full Ginzburg-Landau energy.
#[derive(Debug, Clone, Copy)]
pub struct OrderParameterFunctional<'a> {
    pub lattice: &'a Lattice,
    pub links: &'a Links,
    pub kinetic: f64,
    pub potential: f64,
}

impl<'a> OrderParameterFunctional<'a> {
    pub fn new(lattice: &'a Lattice, links: &'a Links, kinetic: f64, potential: f64) -> Self {
        Self { lattice, links, kinetic, potential }
    }

    pub fn parts(&self, psi: &[Complex64]) -> EnergyParts {
        let kinetic = self
            .lattice
            .bonds
            .iter()
            .map(|bd| bd.weight * (self.links.along(bd) * psi[bd.to] - psi[bd.from]).norm_sqr())
            .sum();
        let (mut l2, mut l4) = (0.0, 0.0);
        for (w, z) in self.lattice.node_w.iter().zip(psi) {
            let m = z.norm_sqr();
            l2 += w * m;
            l4 += w * m * m;
        }
        EnergyParts { kinetic, l2, l4 }
    }

    pub fn energy(&self, psi: &[Complex64]) -> f64 {
        self.combine(&self.parts(psi))
    }

    pub fn combine(&self, p: &EnergyParts) -> f64 {
        self.kinetic * p.kinetic - self.potential * (p.l2 - 0.5 * p.l4)
    }

    /// Energy and its real gradient packed as `dE/dRe + i dE/dIm` per node.
    pub fn energy_and_gradient(&self, psi: &[Complex64], grad: &mut [Complex64]) -> f64 {
        grad.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        let mut kin = 0.0;
        for bd in &self.lattice.bonds {
            let u = self.links.along(bd);
            let d = u * psi[bd.to] - psi[bd.from];
            kin += bd.weight * d.norm_sqr();
            let s = 2.0 * self.kinetic * bd.weight;
            grad[bd.from] -= s * d;
            grad[bd.to] += s * u.conj() * d;
        }
        let (mut l2, mut l4) = (0.0, 0.0);
        for ((w, z), gz) in self.lattice.node_w.iter().zip(psi).zip(grad.iter_mut()) {
            if *w > 0.0 {
                let m = z.norm_sqr();
                l2 += w * m;
                l4 += w * m * m;
                *gz += 2.0 * self.potential * w * (m - 1.0) * z;
            }
        }
        self.kinetic * kin - self.potential * (l2 - 0.5 * l4)
    }
}

/// Edge-wise covariant differences and supercurrent, assembled per cell.
///
/// For an active cell the squared covariant gradient is the mean of its two
/// `x` edges plus the mean of its two `y` edges; the same for `j`. Summing
/// cell values times the cell area reproduces the edge quadrature exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKinematics {
    pub grad_sq: Vec<f64>,
    pub current_sq: Vec<f64>,
    /// Largest nodal `|psi|^2` among the cell corners.
    pub max_density: Vec<f64>,
}

pub fn cell_kinematics(lattice: &Lattice, links: &Links, psi: &[Complex64]) -> CellKinematics {
    let g = lattice.grid();
    let [nx, ny] = g.n();
    let [hx, hy] = g.spacing();
    let ncell = (nx - 1) * (ny - 1);
    let mut grad_sq = vec![0.0; ncell];
    let mut current_sq = vec![0.0; ncell];
    let mut max_density = vec![0.0; ncell];
    let xedge = |i: usize, j: usize| {
        let e = j * (nx - 1) + i;
        let d = (links.ux[e] * psi[j * nx + i + 1] - psi[j * nx + i]) / hx;
        (d.norm_sqr(), (psi[j * nx + i].conj() * d).im.powi(2))
    };
    let yedge = |i: usize, j: usize| {
        let e = j * nx + i;
        let d = (links.uy[e] * psi[(j + 1) * nx + i] - psi[j * nx + i]) / hy;
        (d.norm_sqr(), (psi[j * nx + i].conj() * d).im.powi(2))
    };
    for cj in 0..ny - 1 {
        for ci in 0..nx - 1 {
            let c = cj * (nx - 1) + ci;
            if !lattice.cell_active(ci, cj) {
                continue;
            }
            let (b, t, l, r) = (xedge(ci, cj), xedge(ci, cj + 1), yedge(ci, cj), yedge(ci + 1, cj));
            grad_sq[c] = 0.5 * (b.0 + t.0) + 0.5 * (l.0 + r.0);
            current_sq[c] = 0.5 * (b.1 + t.1) + 0.5 * (l.1 + r.1);
            max_density[c] = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .map(|(di, dj)| psi[(cj + dj) * nx + ci + di].norm_sqr())
                .fold(0.0, f64::max);
        }
    }
    CellKinematics { grad_sq, current_sq, max_density }
}

impl Lattice {
    /// Integral of a per-cell quantity over the active cells.
    pub fn integrate_cells(&self, values: &[f64]) -> f64 {
        let [hx, hy] = self.grid.spacing();
        self.active_cells
            .iter()
            .zip(values)
            .filter(|(on, _)| **on)
            .map(|(_, v)| v * hx * hy)
            .sum()
    }

    pub fn node_scalar(&self, values: Vec<f64>) -> ScalarField2D {
        ScalarField2D { grid: self.grid, values }
    }
}
