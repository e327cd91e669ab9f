use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value in field")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("no convergence after {iterations} iterations (scaled gradient {grad_norm:.3e}, energy {energy})")]
    NotConverged { iterations: usize, grad_norm: f64, energy: f64 },
    #[error("non-finite value during descent at iteration {0}")]
    NonFinite(usize),
    #[error("Neumann energy {e_n} exceeds Dirichlet energy {e_d}: the admissible classes are nested, so this is a solver bug")]
    SandwichViolated { e_n: f64, e_d: f64 },
    #[error("bracket inverted: lower {lo} > upper {hi}; grid under-resolved")]
    BracketInverted { lo: f64, hi: f64 },
    #[error("gauge projection failed: {0}")]
    GaugeProjection(String),
    #[error("path dependence {0:.3e} in phase reconstruction exceeds tolerance")]
    PathDependence(f64),
    #[error("window outside the domain: {0}")]
    Window(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}
