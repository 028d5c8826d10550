//! Dense real linear algebra used by the analysis and synthesis engines.
//!
//! Everything here works on small matrices (closed loops of at most a few
//! dozen states) so the algorithms favour robustness over asymptotic cost:
//! cyclic Jacobi for symmetric spectra, Hessenberg + Francis double-shift QR
//! for general spectra, one-sided Jacobi for the SVD and a Kronecker
//! vectorisation for the discrete Lyapunov equation.

mod decomp;
mod eigen;
mod lyapunov;
mod matrix;

use std::sync::RwLock;

use thiserror::Error;

pub use decomp::{cholesky, inverse, lu_solve, svd, Lu, Svd};
pub use eigen::{eigenvalues, inertia, spectral_radius, sym_eig, Inertia, SymEig};
pub use lyapunov::{max_gen_eig, solve_discrete_lyapunov};
pub use matrix::Matrix;
pub use num_complex::Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("{0} did not converge within the iteration cap")]
    NoConvergence(&'static str),
    #[error("no positive definite Lyapunov solution: spectral radius {spectral_radius} with rho = {rho}")]
    LyapunovInfeasible { spectral_radius: f64, rho: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Tolerances shared by every routine in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericPolicy {
    /// Relative asymmetry accepted by the symmetric routines.
    pub symmetry_tol: f64,
    /// Relative pivot threshold below which a matrix counts as singular.
    pub singular_tol: f64,
    /// Relative threshold for treating an eigenvalue as zero in inertia counts.
    pub zero_eig_tol: f64,
    pub max_jacobi_sweeps: usize,
    pub max_qr_iterations: usize,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        NumericPolicy {
            symmetry_tol: 1e-9,
            singular_tol: 1e-14,
            zero_eig_tol: 1e-10,
            max_jacobi_sweeps: 100,
            max_qr_iterations: 60,
        }
    }
}

static POLICY: RwLock<Option<NumericPolicy>> = RwLock::new(None);

/// The active numeric policy.
pub fn numeric_policy() -> NumericPolicy {
    POLICY.read().map(|p| p.unwrap_or_default()).unwrap_or_default()
}

pub fn set_numeric_policy(policy: NumericPolicy) {
    if let Ok(mut guard) = POLICY.write() {
        *guard = Some(policy);
    }
}

fn require_square(m: &Matrix) -> Result<usize, LinalgError> {
    if m.is_square() {
        Ok(m.rows())
    } else {
        Err(LinalgError::NotSquare { rows: m.rows(), cols: m.cols() })
    }
}

fn require_symmetric(m: &Matrix) -> Result<(), LinalgError> {
    let asym = m.asymmetry();
    if asym > numeric_policy().symmetry_tol * m.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric(asym));
    }
    Ok(())
}
