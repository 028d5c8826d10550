//! Linearized synthesis of full-order resetting controllers.
//!
//! The change of variables `(P, A_c, B_c, C_c, D_c) ↔ ν = (X, Y, K₁, K₂, K₃, K₄)`
//! turns the contraction condition into the LMI `𝐋(ν) ⪰ 0` and gives the
//! affine sufficient condition `𝐋̃(ν) ⪰ 0` for the reset-gain condition.

mod reconstruct;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisError, Condition};
use crate::linalg::{sym_eig, LinalgError, Matrix};
use crate::plant::PlantModel;

pub use reconstruct::{
    apply_change_of_variables, reconstruct_controller, reconstruct_with_split, reconstruct_with_u, FactorSplit,
    ReconstructedController,
};
pub use solver::{feasibility_search, minimal_delta, nu_from_certificate, GridPoint, SolverConfig, SynthesisOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("P(nu) is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("factor {0} of the change of variables is singular")]
    Singular(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// `ν = (X, Y, K₁, K₂, K₃, K₄)` with `K₂: n_x×n_y` and `K₃: n_u×n_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NuFile", into = "NuFile")]
pub struct SynthesisVariables {
    pub x: Matrix,
    pub y: Matrix,
    pub k1: Matrix,
    pub k2: Matrix,
    pub k3: Matrix,
    pub k4: Matrix,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
struct NuFile {
    x: Matrix,
    y: Matrix,
    k1: Matrix,
    k2: Matrix,
    k3: Matrix,
    k4: Matrix,
}

impl TryFrom<NuFile> for SynthesisVariables {
    type Error = SynthesisError;
    fn try_from(f: NuFile) -> Result<Self, Self::Error> {
        SynthesisVariables::new(f.x, f.y, f.k1, f.k2, f.k3, f.k4)
    }
}

impl From<SynthesisVariables> for NuFile {
    fn from(n: SynthesisVariables) -> Self {
        NuFile { x: n.x, y: n.y, k1: n.k1, k2: n.k2, k3: n.k3, k4: n.k4 }
    }
}

fn symmetric(name: &str, m: Matrix) -> Result<Matrix, SynthesisError> {
    if !m.is_square() {
        return Err(SynthesisError::Dimension(format!("{name} is {:?}", m.shape())));
    }
    if !m.is_finite() {
        return Err(SynthesisError::InvalidArgument(format!("{name} has non-finite entries")));
    }
    if m.asymmetry() > 1e-9 * m.max_abs().max(1.0) {
        return Err(SynthesisError::InvalidArgument(format!("{name} is not symmetric")));
    }
    Ok(m.symmetrize())
}

impl SynthesisVariables {
    /// Checks the block shapes and symmetrizes `X`, `Y`.
    pub fn new(x: Matrix, y: Matrix, k1: Matrix, k2: Matrix, k3: Matrix, k4: Matrix) -> Result<Self, SynthesisError> {
        let x = symmetric("X", x)?;
        let y = symmetric("Y", y)?;
        let n = x.rows();
        let (n_u, n_y) = k4.shape();
        let ok = y.shape() == (n, n) && k1.shape() == (n, n) && k2.shape() == (n, n_y) && k3.shape() == (n_u, n);
        if !ok {
            return Err(SynthesisError::Dimension(format!(
                "X {:?}, Y {:?}, K1 {:?}, K2 {:?}, K3 {:?}, K4 {:?}",
                x.shape(),
                y.shape(),
                k1.shape(),
                k2.shape(),
                k3.shape(),
                k4.shape()
            )));
        }
        if [&k1, &k2, &k3, &k4].iter().any(|m| !m.is_finite()) {
            return Err(SynthesisError::InvalidArgument("K blocks must be finite".into()));
        }
        Ok(SynthesisVariables { x, y, k1, k2, k3, k4 })
    }

    pub fn n_x(&self) -> usize {
        self.x.rows()
    }

    pub fn n_y(&self) -> usize {
        self.k4.cols()
    }

    pub fn n_u(&self) -> usize {
        self.k4.rows()
    }

    pub fn check_plant(&self, plant: &PlantModel) -> Result<(), SynthesisError> {
        if (plant.n_x(), plant.n_y(), plant.n_u()) != (self.n_x(), self.n_y(), self.n_u()) {
            return Err(SynthesisError::Dimension(format!(
                "nu has (n_x, n_y, n_u) = ({}, {}, {}), plant has ({}, {}, {})",
                self.n_x(),
                self.n_y(),
                self.n_u(),
                plant.n_x(),
                plant.n_y(),
                plant.n_u()
            )));
        }
        Ok(())
    }

    /// Largest absolute entry difference over the six blocks.
    pub fn max_abs_diff(&self, other: &SynthesisVariables) -> f64 {
        [
            (&self.x, &other.x),
            (&self.y, &other.y),
            (&self.k1, &other.k1),
            (&self.k2, &other.k2),
            (&self.k3, &other.k3),
            (&self.k4, &other.k4),
        ]
        .iter()
        .map(|(a, b)| if a.shape() == b.shape() { (*a - *b).max_abs() } else { f64::INFINITY })
        .fold(0.0, f64::max)
    }
}

/// `𝐏(ν) = [Y, I; I, X]`.
pub fn build_p_of_nu(nu: &SynthesisVariables) -> Matrix {
    let i = Matrix::identity(nu.n_x());
    Matrix::block(&[&[&nu.y, &i], &[&i, &nu.x]])
}

fn top_row(plant: &PlantModel, nu: &SynthesisVariables) -> (Matrix, Matrix) {
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let ay_bk3 = &(a * &nu.y) + &(b * &nu.k3);
    let a_bk4c = a + &(&(b * &nu.k4) * c);
    (ay_bk3, a_bk4c)
}

/// `𝐑(ν) = (AY + BK₃, A + BK₄C)`.
pub fn build_r_of_nu(plant: &PlantModel, nu: &SynthesisVariables) -> Result<Matrix, SynthesisError> {
    nu.check_plant(plant)?;
    let (l, r) = top_row(plant, nu);
    Ok(Matrix::block(&[&[&l, &r]]))
}

/// `𝐅(ν) = [AY + BK₃, A + BK₄C; K₁, XA + K₂C]`.
pub fn build_f_of_nu(plant: &PlantModel, nu: &SynthesisVariables) -> Result<Matrix, SynthesisError> {
    nu.check_plant(plant)?;
    let (l, r) = top_row(plant, nu);
    let xa_k2c = &(&nu.x * plant.a()) + &(&nu.k2 * plant.c());
    Ok(Matrix::block(&[&[&l, &r], &[&nu.k1, &xa_k2c]]))
}

/// `𝐅̃(ν) = [AY + BK₃, A + BK₄C; XBK₃ + XAY, XA + XBK₄C]`.
pub fn build_ftilde_of_nu(plant: &PlantModel, nu: &SynthesisVariables) -> Result<Matrix, SynthesisError> {
    nu.check_plant(plant)?;
    let (l, r) = top_row(plant, nu);
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let xb = &nu.x * b;
    let bottom_left = &(&xb * &nu.k3) + &(&(&nu.x * a) * &nu.y);
    let bottom_right = &(&nu.x * a) + &(&(&xb * &nu.k4) * c);
    Ok(Matrix::block(&[&[&l, &r], &[&bottom_left, &bottom_right]]))
}

/// `𝐋(ν) = [(1+μ)𝐏(ν), 𝐅(ν)ᵀ; 𝐅(ν), 𝐏(ν)]`.
pub fn build_l_of_nu(plant: &PlantModel, nu: &SynthesisVariables, mu: f64) -> Result<Matrix, SynthesisError> {
    let p = build_p_of_nu(nu);
    let f = build_f_of_nu(plant, nu)?;
    Ok(Matrix::block(&[&[&p.scale(1.0 + mu), &f.transpose()], &[&f, &p]]))
}

/// `𝐋̃(ν) = [δ𝐏(ν), 𝐑(ν)ᵀ; 𝐑(ν), 2I − X]`.
pub fn build_ltilde_of_nu(plant: &PlantModel, nu: &SynthesisVariables, delta: f64) -> Result<Matrix, SynthesisError> {
    let p = build_p_of_nu(nu);
    let r = build_r_of_nu(plant, nu)?;
    let corner = &Matrix::identity(nu.n_x()).scale(2.0) - &nu.x;
    Ok(Matrix::block(&[&[&p.scale(delta), &r.transpose()], &[&r, &corner]]))
}

/// `𝐒(ν) = [δ𝐏(ν), 𝐅̃(ν)ᵀ; 𝐅̃(ν), 𝐏(ν)]`.
pub fn build_s_of_nu(plant: &PlantModel, nu: &SynthesisVariables, delta: f64) -> Result<Matrix, SynthesisError> {
    let p = build_p_of_nu(nu);
    let ft = build_ftilde_of_nu(plant, nu)?;
    Ok(Matrix::block(&[&[&p.scale(delta), &ft.transpose()], &[&ft, &p]]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisCertificate {
    pub nu: SynthesisVariables,
    pub mu: f64,
    pub delta: f64,
    /// `𝐏(ν) ≻ 0`: margin is the smallest eigenvalue, which must be positive.
    pub p_positive: Condition,
    /// `𝐋(ν) ⪰ 0` to tolerance.
    pub l_psd: Condition,
    /// `𝐋̃(ν) ⪰ 0` to tolerance.
    pub ltilde_psd: Condition,
}

impl SynthesisCertificate {
    pub fn passed(&self) -> bool {
        self.p_positive.passed && self.l_psd.passed && self.ltilde_psd.passed
    }
}

pub fn check_synthesis_certificate(
    plant: &PlantModel,
    nu: &SynthesisVariables,
    mu: f64,
    delta: f64,
    tol: f64,
) -> Result<SynthesisCertificate, SynthesisError> {
    if !(-1.0..0.0).contains(&mu) {
        return Err(SynthesisError::InvalidArgument(format!("mu = {mu} must lie in [-1, 0)")));
    }
    if !(delta >= 1.0) || !delta.is_finite() {
        return Err(SynthesisError::InvalidArgument(format!("delta = {delta} must be a finite value >= 1")));
    }
    let p = sym_eig(&build_p_of_nu(nu))?.min();
    let l = sym_eig(&build_l_of_nu(plant, nu, mu)?.symmetrize())?.min();
    let lt = sym_eig(&build_ltilde_of_nu(plant, nu, delta)?.symmetrize())?.min();
    Ok(SynthesisCertificate {
        nu: nu.clone(),
        mu,
        delta,
        p_positive: Condition { margin: p, passed: p > 0.0 },
        l_psd: Condition { margin: l, passed: l >= -tol },
        ltilde_psd: Condition { margin: lt, passed: lt >= -tol },
    })
}

#[cfg(test)]
mod tests;
