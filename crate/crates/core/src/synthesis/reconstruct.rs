use serde::{Deserialize, Serialize};

use super::{build_p_of_nu, SynthesisError, SynthesisVariables};
use crate::controller_runtime::ControllerMatrices;
use crate::linalg::{inverse, svd, sym_eig, Matrix};
use crate::plant::PlantModel;

/// How the singular values of `I − YX = W·Σ·Zᵀ` are shared between `V` and `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSplit {
    /// `V = W·√Σ`, `U = Z·√Σ`.
    #[default]
    Balanced,
    /// `V = W·Σ`, `U = Z`.
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedController {
    #[serde(rename = "P")]
    pub p: Matrix,
    pub controller: ControllerMatrices,
    #[serde(rename = "U")]
    pub u: Matrix,
    #[serde(rename = "V")]
    pub v: Matrix,
}

fn check_pd(nu: &SynthesisVariables) -> Result<(), SynthesisError> {
    let min = sym_eig(&build_p_of_nu(nu))?.min();
    if min > 0.0 {
        Ok(())
    } else {
        Err(SynthesisError::NotPositiveDefinite(min))
    }
}

/// `𝒴 = [Y, I; Vᵀ, 0]`.
fn script_y(y: &Matrix, v: &Matrix) -> Matrix {
    let n = y.rows();
    Matrix::block(&[&[y, &Matrix::identity(n)], &[&v.transpose(), &Matrix::zeros(n, n)]])
}

pub fn reconstruct_controller(
    plant: &PlantModel,
    nu: &SynthesisVariables,
) -> Result<ReconstructedController, SynthesisError> {
    reconstruct_with_split(plant, nu, FactorSplit::Balanced)
}

/// Factors `VUᵀ = I − YX` by SVD and inverts the change of variables:
/// `[A_c B_c; C_c D_c] = [U XB; 0 I]⁻¹ [K₁−XAY K₂; K₃ K₄] [Vᵀ 0; CY I]⁻¹`,
/// `P = 𝒴⁻ᵀ 𝐏(ν) 𝒴⁻¹`.
pub fn reconstruct_with_split(
    plant: &PlantModel,
    nu: &SynthesisVariables,
    split: FactorSplit,
) -> Result<ReconstructedController, SynthesisError> {
    nu.check_plant(plant)?;
    check_pd(nu)?;
    let n = nu.n_x();
    let target = &Matrix::identity(n) - &(&nu.y * &nu.x);
    let dec = svd(&target)?;
    let (v, u) = match split {
        FactorSplit::Balanced => {
            let root = Matrix::diag(&dec.sigma.iter().map(|s| s.sqrt()).collect::<Vec<_>>());
            (&dec.u * &root, &dec.v * &root)
        }
        FactorSplit::Left => (&dec.u * &Matrix::diag(&dec.sigma), dec.v.clone()),
    };
    finish(plant, nu, u, v)
}

/// Reconstruction with a prescribed nonsingular `U`; `V = (I − YX)·U⁻ᵀ`.
pub fn reconstruct_with_u(
    plant: &PlantModel,
    nu: &SynthesisVariables,
    u: &Matrix,
) -> Result<ReconstructedController, SynthesisError> {
    nu.check_plant(plant)?;
    check_pd(nu)?;
    let n = nu.n_x();
    if u.shape() != (n, n) {
        return Err(SynthesisError::Dimension(format!("U is {:?}, expected {n}x{n}", u.shape())));
    }
    let u_inv = inverse(u).map_err(|_| SynthesisError::Singular("U"))?;
    let v = &(&Matrix::identity(n) - &(&nu.y * &nu.x)) * &u_inv.transpose();
    finish(plant, nu, u.clone(), v)
}

fn finish(
    plant: &PlantModel,
    nu: &SynthesisVariables,
    u: Matrix,
    v: Matrix,
) -> Result<ReconstructedController, SynthesisError> {
    let n = nu.n_x();
    let (n_u, n_y) = (nu.n_u(), nu.n_y());
    let (a, b, c) = (plant.a(), plant.b(), plant.c());

    let left = Matrix::block(&[&[&u, &(&nu.x * b)], &[&Matrix::zeros(n_u, n), &Matrix::identity(n_u)]]);
    let right = Matrix::block(&[&[&v.transpose(), &Matrix::zeros(n, n_y)], &[&(c * &nu.y), &Matrix::identity(n_y)]]);
    let k1_shift = &nu.k1 - &(&(&nu.x * a) * &nu.y);
    let middle = Matrix::block(&[&[&k1_shift, &nu.k2], &[&nu.k3, &nu.k4]]);
    let left_inv = inverse(&left).map_err(|_| SynthesisError::Singular("[U XB; 0 I]"))?;
    let right_inv = inverse(&right).map_err(|_| SynthesisError::Singular("[V' 0; CY I]"))?;
    let ctrl = &(&left_inv * &middle) * &right_inv;

    let controller = ControllerMatrices::new(
        ctrl.submatrix(0, 0, n, n),
        ctrl.submatrix(0, n, n, n_y),
        ctrl.submatrix(n, 0, n_u, n),
        ctrl.submatrix(n, n, n_u, n_y),
    )
    .map_err(|e| SynthesisError::Dimension(e.to_string()))?;

    let sy_inv = inverse(&script_y(&nu.y, &v)).map_err(|_| SynthesisError::Singular("Y-script"))?;
    let p = (&(&sy_inv.transpose() * &build_p_of_nu(nu)) * &sy_inv).symmetrize();
    Ok(ReconstructedController { p, controller, u, v })
}

/// The forward map `(P, A_c, B_c, C_c, D_c) → ν` for a full-order controller,
/// with `P = [X U; Uᵀ X̃]` and `P⁻¹ = [Y V; Vᵀ Ỹ]`.
pub fn apply_change_of_variables(
    p: &Matrix,
    ctrl: &ControllerMatrices,
    plant: &PlantModel,
) -> Result<SynthesisVariables, SynthesisError> {
    let n = plant.n_x();
    ctrl.check_plant(plant).map_err(|e| SynthesisError::Dimension(e.to_string()))?;
    if ctrl.n_c() != n || p.shape() != (2 * n, 2 * n) {
        return Err(SynthesisError::Dimension(format!(
            "full-order controller required: n_x = {n}, n_c = {}, P is {:?}",
            ctrl.n_c(),
            p.shape()
        )));
    }
    let (n_u, n_y) = (ctrl.n_u(), ctrl.n_y());
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let p = p.symmetrize();
    let x = p.submatrix(0, 0, n, n);
    let u = p.submatrix(0, n, n, n);
    inverse(&u).map_err(|_| SynthesisError::Singular("U"))?;
    let p_inv = inverse(&p)?.symmetrize();
    let y = p_inv.submatrix(0, 0, n, n);
    let v = p_inv.submatrix(0, n, n, n);

    let left = Matrix::block(&[&[&u, &(&x * b)], &[&Matrix::zeros(n_u, n), &Matrix::identity(n_u)]]);
    let right = Matrix::block(&[&[&v.transpose(), &Matrix::zeros(n, n_y)], &[&(c * &y), &Matrix::identity(n_y)]]);
    let stacked = Matrix::block(&[&[ctrl.a_c(), ctrl.b_c()], &[ctrl.c_c(), ctrl.d_c()]]);
    let k = &(&left * &stacked) * &right;
    let k1 = &k.submatrix(0, 0, n, n) + &(&(&x * a) * &y);
    SynthesisVariables::new(x, y, k1, k.submatrix(0, n, n, n_y), k.submatrix(n, 0, n_u, n), k.submatrix(n, n, n_u, n_y))
}
