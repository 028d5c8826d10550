//! Discrete-time LTI plants `x⁺ = Ax + Bu`, `y = Cx`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("plant data must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantFile", into = "PlantFile")]
pub struct PlantModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    x0: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
struct PlantFile {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    #[serde(rename = "x0")]
    x0: Vec<f64>,
}

impl TryFrom<PlantFile> for PlantModel {
    type Error = PlantError;
    fn try_from(f: PlantFile) -> Result<Self, Self::Error> {
        PlantModel::new(f.a, f.b, f.c, f.x0)
    }
}

impl From<PlantModel> for PlantFile {
    fn from(p: PlantModel) -> Self {
        PlantFile { a: p.a, b: p.b, c: p.c, x0: p.x0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: Vec<f64>,
    pub k: u64,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, x0: Vec<f64>) -> Result<Self, PlantError> {
        let n_x = a.rows();
        if !a.is_square() {
            return Err(PlantError::Dimension(format!("A is {}x{}", a.rows(), a.cols())));
        }
        if b.rows() != n_x {
            return Err(PlantError::Dimension(format!("B has {} rows, A has {n_x}", b.rows())));
        }
        if c.cols() != n_x {
            return Err(PlantError::Dimension(format!("C has {} columns, A has {n_x}", c.cols())));
        }
        if x0.len() != n_x {
            return Err(PlantError::Dimension(format!("x0 has {} entries, A has {n_x}", x0.len())));
        }
        if !(a.is_finite() && b.is_finite() && c.is_finite() && x0.iter().all(|v| v.is_finite())) {
            return Err(PlantError::NonFinite);
        }
        Ok(PlantModel { a, b, c, x0 })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    pub fn n_y(&self) -> usize {
        self.c.rows()
    }

    pub fn with_x0(&self, x0: Vec<f64>) -> Result<Self, PlantError> {
        PlantModel::new(self.a.clone(), self.b.clone(), self.c.clone(), x0)
    }

    pub fn initial_state(&self) -> PlantState {
        PlantState { x: self.x0.clone(), k: 0 }
    }

    pub fn step(&self, state: &PlantState, u: &[f64]) -> Result<PlantState, PlantError> {
        if state.x.len() != self.n_x() || u.len() != self.n_u() {
            return Err(PlantError::Dimension(format!(
                "state {} / input {} for a plant with n_x={} n_u={}",
                state.x.len(),
                u.len(),
                self.n_x(),
                self.n_u()
            )));
        }
        let ax = self.a.mul_vec(&state.x);
        let bu = self.b.mul_vec(u);
        let x = ax.iter().zip(&bu).map(|(p, q)| p + q).collect();
        Ok(PlantState { x, k: state.k + 1 })
    }

    pub fn output(&self, state: &PlantState) -> Vec<f64> {
        self.c.mul_vec(&state.x)
    }
}

/// Batch reactor discretized with sampling period 0.1, entries as printed to two decimals.
pub fn batch_reactor() -> PlantModel {
    let a = Matrix::from_rows(&[
        [1.18, 0.00, 0.51, -0.40],
        [-0.05, 0.66, -0.01, 0.06],
        [0.08, 0.34, 0.56, 0.38],
        [0.00, 0.34, 0.09, 0.85],
    ]);
    let b = Matrix::column(&[0.0, 0.47, 0.21, 0.21]);
    let c = Matrix::from_rows(&[[1.0, 0.0, 1.0, -1.0], [0.0, 1.0, 0.0, 0.0]]);
    PlantModel::new(a, b, c, vec![-6.83, -5.18, -4.05, -3.12]).expect("reactor data is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius;
    use proptest::prelude::*;

    #[test]
    fn reactor_data() {
        let p = batch_reactor();
        assert_eq!(p.a()[(1, 1)], 0.66);
        assert_eq!(p.b().as_slice(), &[0.0, 0.47, 0.21, 0.21]);
        assert_eq!(p.x0(), &[-6.83, -5.18, -4.05, -3.12]);
        let rho = spectral_radius(p.a()).unwrap();
        assert!((1.21..=1.23).contains(&rho), "{rho}");
    }

    #[test]
    fn reactor_output_at_x0() {
        let p = batch_reactor();
        let y = p.output(&p.initial_state());
        // y₁ = x₁ + x₃ − x₄, y₂ = x₂
        assert!((y[0] - (-6.83 - 4.05 + 3.12)).abs() < 1e-12);
        assert_eq!(y[1], -5.18);
    }

    #[test]
    fn hand_steps() {
        let p = PlantModel::new(
            Matrix::from_rows(&[[0.5]]),
            Matrix::from_rows(&[[1.0]]),
            Matrix::from_rows(&[[1.0]]),
            vec![2.0],
        )
        .unwrap();
        let s = p.step(&p.initial_state(), &[1.0]).unwrap();
        assert_eq!((s.x[0], s.k), (2.0, 1));

        let id = PlantModel::new(Matrix::identity(3), Matrix::zeros(3, 1), Matrix::zeros(2, 3), vec![1.0, 2.0, 3.0])
            .unwrap();
        let s = id.step(&id.initial_state(), &[9.0]).unwrap();
        assert_eq!(s.x, vec![1.0, 2.0, 3.0]);
        assert_eq!(id.output(&s), vec![0.0, 0.0]);
        assert!(id.step(&s, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn open_loop_reactor_grows() {
        let p = batch_reactor();
        let mut s = p.initial_state();
        let n0 = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..100 {
            s = p.step(&s, &[0.0]).unwrap();
        }
        let n = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n > 100.0 * n0);
    }

    #[test]
    fn rejects_inconsistent_models() {
        assert!(PlantModel::new(Matrix::identity(2), Matrix::zeros(3, 1), Matrix::zeros(1, 2), vec![0.0; 2]).is_err());
        assert!(PlantModel::new(Matrix::identity(2), Matrix::zeros(2, 1), Matrix::zeros(1, 3), vec![0.0; 2]).is_err());
        assert!(PlantModel::new(Matrix::identity(2), Matrix::zeros(2, 1), Matrix::zeros(1, 2), vec![0.0; 3]).is_err());
        assert!(
            PlantModel::new(Matrix::identity(2), Matrix::zeros(2, 1), Matrix::zeros(1, 2), vec![f64::NAN; 2]).is_err()
        );
    }

    #[test]
    fn json_round_trip() {
        let p = batch_reactor();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.starts_with(r#"{"A":{"rows":4"#));
        assert_eq!(serde_json::from_str::<PlantModel>(&json).unwrap(), p);
    }

    proptest! {
        #[test]
        fn step_is_linear(
            x1 in prop::collection::vec(-10.0f64..10.0, 4),
            x2 in prop::collection::vec(-10.0f64..10.0, 4),
            u1 in -5.0f64..5.0,
            u2 in -5.0f64..5.0,
        ) {
            let p = batch_reactor();
            let st = |x: &[f64]| PlantState { x: x.to_vec(), k: 0 };
            let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
            let lhs = p.step(&st(&sum), &[u1 + u2]).unwrap();
            let a = p.step(&st(&x1), &[u1]).unwrap();
            let b = p.step(&st(&x2), &[u2]).unwrap();
            for i in 0..4 {
                prop_assert!((lhs.x[i] - a.x[i] - b.x[i]).abs() < 1e-11);
            }
        }
    }
}
