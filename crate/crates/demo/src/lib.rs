//! WebAssembly bindings behind `www/index.html`.

use glbulk_core::bulk;
use glbulk_core::cell::{minimize_cell, BoundaryCondition, CellProblemSpec};
use glbulk_core::optim::SolverOptions;
use glbulk_core::radial::{minimize_radial, RadialSpec};
use glbulk_core::SolverError;
use wasm_bindgen::prelude::*;

const DEMO_LADDER: [f64; 3] = [4.0, 5.0, 6.0];

fn options(seed: u64) -> SolverOptions {
    SolverOptions { n_starts: 2, seed, ..SolverOptions::default() }
}

#[wasm_bindgen]
pub struct CellView {
    n: usize,
    per_area: f64,
    iterations: usize,
    density: Vec<f64>,
}

#[wasm_bindgen]
impl CellView {
    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.n
    }

    #[wasm_bindgen(getter)]
    pub fn per_area(&self) -> f64 {
        self.per_area
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `|u|^2` row by row, first index along `x1`.
    pub fn density(&self) -> Vec<f64> {
        self.density.clone()
    }

    /// RGBA pixels of the density, one per node, `x2` increasing upwards.
    pub fn rgba(&self) -> Vec<u8> {
        let n = self.n;
        let mut out = Vec::with_capacity(4 * n * n);
        for row in (0..n).rev() {
            for col in 0..n {
                out.extend_from_slice(&colour(self.density[row * n + col]));
            }
        }
        out
    }
}

#[wasm_bindgen]
pub struct RadialView {
    spacing: f64,
    per_area: f64,
    ode_residual: f64,
    f: Vec<f64>,
}

#[wasm_bindgen]
impl RadialView {
    #[wasm_bindgen(getter)]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[wasm_bindgen(getter)]
    pub fn per_area(&self) -> f64 {
        self.per_area
    }

    #[wasm_bindgen(getter)]
    pub fn ode_residual(&self) -> f64 {
        self.ode_residual
    }

    /// Profile values at `r = (k + 1) h`.
    pub fn profile(&self) -> Vec<f64> {
        self.f.clone()
    }
}

#[wasm_bindgen]
pub struct GView {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub residual: f64,
}

/// Dark blue at zero density through to pale yellow at one.
pub fn colour(d: f64) -> [u8; 4] {
    let t = d.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    [lerp(20.0, 250.0), lerp(24.0, 231.0), lerp(82.0, 140.0), 255]
}

pub fn cell_view(b: f64, r: f64, neumann: bool, seed: u64) -> Result<CellView, SolverError> {
    let bc = if neumann { BoundaryCondition::Neumann } else { BoundaryCondition::Dirichlet };
    let sol = minimize_cell(&CellProblemSpec::new(b, r, bc, options(seed)))?;
    let grid = sol.minimizer.grid;
    let n = grid.nx();
    let mut density = vec![0.0; n * n];
    for (i, j) in grid.nodes() {
        density[j * n + i] = sol.minimizer.at(i, j).norm_sqr();
    }
    Ok(CellView { n, per_area: sol.per_area, iterations: sol.diagnostics.iterations, density })
}

pub fn radial_view(m: i32, b: f64, radius: f64) -> Result<RadialView, SolverError> {
    let spec = RadialSpec::new(m.into(), b, radius, options(0));
    let spacing = spec.spacing();
    let p = minimize_radial(&spec)?;
    Ok(RadialView { spacing, per_area: p.per_area(), ode_residual: p.ode_residual, f: p.f })
}

pub fn g_view(b: f64) -> Result<GView, SolverError> {
    let est = bulk::estimate_g(b, &DEMO_LADDER, &options(0))?;
    Ok(GView { value: est.value, lo: est.bracket.0, hi: est.bracket.1, residual: est.extrapolation_residual })
}

fn js(e: SolverError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn solve_cell(b: f64, r: f64, neumann: bool, seed: u32) -> Result<CellView, JsError> {
    cell_view(b, r, neumann, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn solve_radial(m: i32, b: f64, radius: f64) -> Result<RadialView, JsError> {
    radial_view(m, b, radius).map_err(js)
}

#[wasm_bindgen]
pub fn quick_g(b: f64) -> Result<GView, JsError> {
    g_view(b).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_ends() {
        assert_eq!(colour(-1.0), [20, 24, 82, 255]);
        assert_eq!(colour(2.0), [250, 231, 140, 255]);
    }

    #[test]
    fn cell_view_layout() {
        let v = cell_view(0.5, 4.0, false, 0).unwrap();
        assert_eq!(v.density.len(), v.n * v.n);
        assert_eq!(v.rgba().len(), 4 * v.n * v.n);
        assert!(v.per_area < 0.0);
        // Dirichlet nodes on the edge carry no density.
        assert_eq!(v.density[0], 0.0);
    }

    #[test]
    fn radial_and_g() {
        let r = radial_view(1, 0.5, 6.0).unwrap();
        assert!(r.ode_residual < 1e-4);
        assert!(r.f.len() > 10);
        let g = g_view(0.7).unwrap();
        assert!(g.lo <= g.value && g.value <= g.hi + 1e-12);
        assert!(radial_view(0, -1.0, 6.0).is_err());
    }
}
