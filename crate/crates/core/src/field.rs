//! Uniform node-centred grids, sampled fields and the second-order
//! covariant difference operators built on them.
//!
//! Node ordering is row-major by `x2` then `x1`: node `(i, j)` lives at
//! index `j * nx + i`, where `i` runs along `x1`.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::FieldError;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    origin: Point,
    side: [f64; 2],
    n: [usize; 2],
}

impl Grid2D {
    pub fn new(origin: Point, side: [f64; 2], n: [usize; 2]) -> Result<Self, FieldError> {
        if n[0] < 2 || n[1] < 2 {
            return Err(FieldError::InvalidGrid(format!("node counts {n:?} must be >= 2")));
        }
        if !(side[0] > 0.0 && side[1] > 0.0) || !side.iter().all(|s| s.is_finite()) {
            return Err(FieldError::InvalidGrid(format!("side lengths {side:?} must be positive")));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(FieldError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { origin, side, n })
    }

    /// The square `(-r/2, r/2)^2` with `n` nodes per side.
    pub fn centered_square(r: f64, n: usize) -> Result<Self, FieldError> {
        Self::new([-0.5 * r, -0.5 * r], [r, r], [n, n])
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn side(&self) -> [f64; 2] {
        self.side
    }

    pub fn n(&self) -> [usize; 2] {
        self.n
    }

    pub fn nx(&self) -> usize {
        self.n[0]
    }

    pub fn ny(&self) -> usize {
        self.n[1]
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            self.side[0] / (self.n[0] - 1) as f64,
            self.side[1] / (self.n[1] - 1) as f64,
        ]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    pub fn x1(&self, i: usize) -> f64 {
        self.origin[0] + self.side[0] * (i as f64) / ((self.n[0] - 1) as f64)
    }

    pub fn x2(&self, j: usize) -> f64 {
        self.origin[1] + self.side[1] * (j as f64) / ((self.n[1] - 1) as f64)
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        [self.x1(i), self.x2(j)]
    }

    pub fn center(&self) -> Point {
        [
            self.origin[0] + 0.5 * self.side[0],
            self.origin[1] + 0.5 * self.side[1],
        ]
    }

    pub fn area(&self) -> f64 {
        self.side[0] * self.side[1]
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.n[0] || j + 1 == self.n[1]
    }

    /// Same node layout and spacing, tolerant to the last ulp of the origin.
    pub fn same_layout(&self, other: &Grid2D) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.n == other.n
            && close(self.origin[0], other.origin[0])
            && close(self.origin[1], other.origin[1])
            && close(self.side[0], other.side[0])
            && close(self.side[1], other.side[1])
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n[1]).flat_map(move |j| (0..self.n[0]).map(move |i| (i, j)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexField2D {
    pub grid: Grid2D,
    pub values: Vec<Complex64>,
}

impl ComplexField2D {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(Point) -> Complex64) -> Self {
        let values = grid.nodes().map(|(i, j)| f(grid.node(i, j))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<Complex64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::Shape { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn modulus_sq(&self) -> ScalarField2D {
        ScalarField2D { grid: self.grid, values: self.values.iter().map(|z| z.norm_sqr()).collect() }
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// CSV dump with header `x1,x2,re,im`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x1,x2,re,im")?;
        for (i, j) in self.grid.nodes() {
            let [x1, x2] = self.grid.node(i, j);
            let z = self.at(i, j);
            writeln!(w, "{},{},{},{}", fmt17(x1), fmt17(x2), fmt17(z.re), fmt17(z.im))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField2D {
    pub grid: Grid2D,
    pub values: Vec<[f64; 2]>,
}

impl VectorField2D {
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(Point) -> [f64; 2]) -> Self {
        let values = grid.nodes().map(|(i, j)| f(grid.node(i, j))).collect();
        Self { grid, values }
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        self.values[self.grid.index(i, j)]
    }

    /// CSV dump with header `x1,x2,v1,v2`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x1,x2,v1,v2")?;
        for (i, j) in self.grid.nodes() {
            let [x1, x2] = self.grid.node(i, j);
            let [v1, v2] = self.at(i, j);
            writeln!(w, "{},{},{},{}", fmt17(x1), fmt17(x2), fmt17(v1), fmt17(v2))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField2D {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl ScalarField2D {
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(Point) -> f64) -> Self {
        let values = grid.nodes().map(|(i, j)| f(grid.node(i, j))).collect();
        Self { grid, values }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }
}

/// A real phase on the grid, defined up to an additive constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugePhase(pub ScalarField2D);

impl GaugePhase {
    pub fn grid(&self) -> &Grid2D {
        &self.0.grid
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.0.at(i, j)
    }
}

/// `(d/dx1 - i c a1) f` and `(d/dx2 - i c a2) f` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariantGradient {
    pub grid: Grid2D,
    pub values: Vec<[Complex64; 2]>,
}

impl CovariantGradient {
    pub fn norm_sq(&self) -> ScalarField2D {
        ScalarField2D {
            grid: self.grid,
            values: self.values.iter().map(|[d1, d2]| d1.norm_sqr() + d2.norm_sqr()).collect(),
        }
    }
}

pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Symmetric-gauge potential `x -> (-(x2 - c2), x1 - c1) / 2`, unit curl.
pub fn a0(x: Point, center: Point) -> [f64; 2] {
    [-0.5 * (x[1] - center[1]), 0.5 * (x[0] - center[0])]
}

pub fn a0_field(grid: &Grid2D, center: Point) -> VectorField2D {
    VectorField2D::from_fn(*grid, |x| a0(x, center))
}

/// Transporter phase between neighbouring nodes: trapezoid rule for the line
/// integral of `a` along the edge, exact for potentials linear along it.
fn edge_phase(a_from: f64, a_to: f64, h: f64, coupling: f64) -> f64 {
    coupling * h * 0.5 * (a_from + a_to)
}

/// Gauge-covariant second-order differences. Parallel transport along grid
/// lines replaces the `-i c a f` term, so central differences are used at
/// interior nodes and the one-sided `(-3, 4, -1)` stencil on the boundary.
pub fn covariant_gradient(
    f: &ComplexField2D,
    a: &VectorField2D,
    coupling: f64,
) -> Result<CovariantGradient, FieldError> {
    if !f.grid.same_layout(&a.grid) {
        return Err(FieldError::GridMismatch);
    }
    let g = f.grid;
    let [nx, ny] = g.n();
    let [hx, hy] = g.spacing();
    let mut values = vec![[Complex64::new(0.0, 0.0); 2]; g.len()];

    // Transport of f(node k) back to node i along axis `dir`, as e^{-i theta(i->k)} f_k.
    let line = |dir: usize, i: usize, j: usize, k: usize| -> Complex64 {
        let (h, comp) = if dir == 0 { (hx, 0) } else { (hy, 1) };
        let at = |s: usize| if dir == 0 { g.index(s, j) } else { g.index(i, s) };
        let start = if dir == 0 { i } else { j };
        let mut theta = 0.0;
        if k > start {
            for s in start..k {
                theta += edge_phase(a.values[at(s)][comp], a.values[at(s + 1)][comp], h, coupling);
            }
        } else {
            for s in (k..start).rev() {
                theta -= edge_phase(a.values[at(s)][comp], a.values[at(s + 1)][comp], h, coupling);
            }
        }
        f.values[at(k)] * Complex64::from_polar(1.0, -theta)
    };

    for j in 0..ny {
        for i in 0..nx {
            let idx = g.index(i, j);
            for dir in 0..2 {
                let (pos, n, h) = if dir == 0 { (i, nx, hx) } else { (j, ny, hy) };
                let here = f.values[idx];
                let d = if pos > 0 && pos + 1 < n {
                    (line(dir, i, j, pos + 1) - line(dir, i, j, pos - 1)) / (2.0 * h)
                } else if pos == 0 {
                    (-3.0 * here + 4.0 * line(dir, i, j, 1) - line(dir, i, j, 2)) / (2.0 * h)
                } else {
                    (3.0 * here - 4.0 * line(dir, i, j, pos - 1) + line(dir, i, j, pos - 2))
                        / (2.0 * h)
                };
                values[idx][dir] = d;
            }
        }
    }
    Ok(CovariantGradient { grid: g, values })
}

fn derivative(values: &[f64], g: &Grid2D, i: usize, j: usize, dir: usize) -> f64 {
    let (pos, n, h) = if dir == 0 { (i, g.nx(), g.spacing()[0]) } else { (j, g.ny(), g.spacing()[1]) };
    let at = |s: usize| if dir == 0 { values[g.index(s, j)] } else { values[g.index(i, s)] };
    if pos > 0 && pos + 1 < n {
        (at(pos + 1) - at(pos - 1)) / (2.0 * h)
    } else if pos == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else {
        (3.0 * at(pos) - 4.0 * at(pos - 1) + at(pos - 2)) / (2.0 * h)
    }
}

/// `d a2/dx1 - d a1/dx2` with the same stencil policy as [`covariant_gradient`].
pub fn discrete_curl(a: &VectorField2D) -> ScalarField2D {
    let g = a.grid;
    let a1: Vec<f64> = a.values.iter().map(|v| v[0]).collect();
    let a2: Vec<f64> = a.values.iter().map(|v| v[1]).collect();
    let values = g
        .nodes()
        .map(|(i, j)| derivative(&a2, &g, i, j, 0) - derivative(&a1, &g, i, j, 1))
        .collect();
    ScalarField2D { grid: g, values }
}

/// Trapezoidal weight of node `(i, j)`.
pub fn trapezoid_weight(g: &Grid2D, i: usize, j: usize) -> f64 {
    let [hx, hy] = g.spacing();
    let wx = if i == 0 || i + 1 == g.nx() { 0.5 } else { 1.0 };
    let wy = if j == 0 || j + 1 == g.ny() { 0.5 } else { 1.0 };
    wx * wy * hx * hy
}

/// Tensor-product trapezoidal rule over the whole grid.
pub fn integrate(field: &ScalarField2D) -> f64 {
    let g = field.grid;
    g.nodes().map(|(i, j)| trapezoid_weight(&g, i, j) * field.at(i, j)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid65() -> Grid2D {
        Grid2D::new([-1.0, -1.0], [2.0, 2.0], [65, 65]).unwrap()
    }

    #[test]
    fn a0_values() {
        assert_eq!(a0([0.0, 0.0], [0.0, 0.0]), [0.0, 0.0]);
        assert_eq!(a0([2.0, 0.0], [0.0, 0.0]), [-0.0, 1.0]);
    }

    #[test]
    fn a0_curl_is_one() {
        let g = grid65();
        let curl = discrete_curl(&a0_field(&g, [0.0, 0.0]));
        for (i, j) in g.nodes() {
            if !g.is_boundary(i, j) {
                assert!((curl.at(i, j) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curl_of_constant_is_zero() {
        let g = grid65();
        let a = VectorField2D::from_fn(g, |_| [0.3, -1.7]);
        assert!(discrete_curl(&a).values.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn curl_of_gradient_is_small() {
        // chi = sin(x1) cos(2 x2); curl grad chi = 0
        let mut errs = Vec::new();
        for n in [33, 65] {
            let g = Grid2D::new([-1.0, -1.0], [2.0, 2.0], [n, n]).unwrap();
            let a = VectorField2D::from_fn(g, |[x, y]| {
                [x.cos() * (2.0 * y).cos(), -2.0 * x.sin() * (2.0 * y).sin()]
            });
            let c = discrete_curl(&a);
            errs.push(c.values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        assert!(errs[1] < 1e-2);
        assert!((errs[0] / errs[1]).log2() > 1.8);
    }

    #[test]
    fn constant_field_zero_potential_has_zero_gradient() {
        let g = grid65();
        let f = ComplexField2D::from_fn(g, |_| Complex64::new(0.3, -0.2));
        let a = VectorField2D::from_fn(g, |_| [0.0, 0.0]);
        let d = covariant_gradient(&f, &a, 3.0).unwrap();
        assert!(d.values.iter().all(|[p, q]| p.norm() < 1e-14 && q.norm() < 1e-14));
    }

    #[test]
    fn pure_gauge_is_annihilated() {
        let g = Grid2D::new([0.0, 0.0], [1.0, 1.0], [33, 41]).unwrap();
        let (c, k) = ([1.3, -0.7], 5.0);
        let f = ComplexField2D::from_fn(g, |x| Complex64::from_polar(1.0, k * (c[0] * x[0] + c[1] * x[1])));
        let a = VectorField2D::from_fn(g, |_| c);
        let d = covariant_gradient(&f, &a, k).unwrap();
        let scale = k * (c[0].abs() + c[1].abs());
        for [p, q] in &d.values {
            assert!(p.norm() / scale < 1e-10 && q.norm() / scale < 1e-10);
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let f = ComplexField2D::zeros(grid65());
        let a = a0_field(&Grid2D::new([0.0, 0.0], [1.0, 1.0], [9, 9]).unwrap(), [0.0, 0.0]);
        assert!(matches!(covariant_gradient(&f, &a, 1.0), Err(FieldError::GridMismatch)));
    }

    #[test]
    fn quadrature_examples() {
        let r = 3.0;
        let g = Grid2D::centered_square(r, 129).unwrap();
        let one = ScalarField2D::from_fn(g, |_| 1.0);
        assert!((integrate(&one) - r * r).abs() < 1e-12);
        let x1 = ScalarField2D::from_fn(g, |x| x[0]);
        assert!(integrate(&x1).abs() < 1e-12);
        let a = a0_field(&g, [0.0, 0.0]);
        let a_sq = ScalarField2D {
            grid: g,
            values: a.values.iter().map(|v| v[0] * v[0] + v[1] * v[1]).collect(),
        };
        // The trapezoid rule on this quadratic carries the closed-form error r^2 h^2 / 12.
        let h = g.spacing()[0];
        let exact = r.powi(4) / 24.0;
        let trapezoid = exact + r * r * h * h / 12.0;
        assert!(((integrate(&a_sq) - trapezoid) / exact).abs() < 1e-12);
        assert!(((integrate(&a_sq) - exact) / exact).abs() <= 2.0 * h * h / (r * r) + 1e-12);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(Grid2D::new([0.0, 0.0], [1.0, 1.0], [1, 4]).is_err());
        assert!(Grid2D::new([0.0, 0.0], [0.0, 1.0], [4, 4]).is_err());
        assert!(ComplexField2D::from_values(grid65(), vec![]).is_err());
    }

    #[test]
    fn csv_header_and_digits() {
        let g = Grid2D::new([0.0, 0.0], [1.0, 1.0], [2, 2]).unwrap();
        let f = ComplexField2D::from_fn(g, |x| Complex64::new(x[0] / 3.0, 0.1));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("x1,x2,re,im"));
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(row[2], 1.0 / 3.0);
        let v = a0_field(&g, [0.0, 0.0]);
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x1,x2,v1,v2\n"));
    }
}
