use thiserror::Error;

/// Errors surfaced by solvers, steppers and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// Right-hand side of a pure Neumann/periodic Poisson problem has a
    /// nonzero mean beyond the compatibility tolerance.
    #[error("incompatible Poisson rhs: |mean| = {mean:.3e} exceeds {tol:.3e} * ||rhs||")]
    IncompatibleRhs { mean: f64, tol: f64 },

    /// An iterative solve stalled above its residual tolerance.
    #[error("no convergence after {iters} iterations (residual {residual:.3e}, tol {tol:.3e})")]
    NoConvergence {
        residual: f64,
        tol: f64,
        iters: usize,
    },

    /// A space-time window required by an operation is not covered by the
    /// stored history.
    #[error("history coverage: {0}")]
    Coverage(String),

    /// Blow-up guard tripped during time stepping.
    #[error("stability guard tripped at t = {time:.6}: {what} grew to {max:.3e}")]
    Stability { time: f64, what: String, max: f64 },

    /// Contraction ratio requested for a pair with vanishing separation.
    #[error("degenerate pair: Y_T distance {0:.3e} below 1e-14")]
    DegeneratePair(f64),

    /// Picard iteration exhausted its budget; carries the measured ratios.
    #[error("Picard did not converge in {max_iters} iterations (last ratio {last_ratio:.3e})")]
    MaxItersExceeded {
        max_iters: usize,
        last_ratio: f64,
        ratios: Vec<f64>,
    },

    /// Invalid argument to an operation (e.g. p < 1, alpha <= 0).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration failed validation before any compute.
    #[error("config error: {0}")]
    Config(String),

    /// Snapshot file malformed; reports the byte offset of the problem.
    #[error("snapshot format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
