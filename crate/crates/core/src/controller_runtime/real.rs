use super::{check_len, ControllerMatrices, ResetPeriod, RuntimeError};

/// Floating-point realization.
#[derive(Debug, Clone)]
pub struct RealController {
    ctrl: ControllerMatrices,
    period: ResetPeriod,
    x_c: Vec<f64>,
    k: u64,
}

impl RealController {
    pub fn new(ctrl: ControllerMatrices, period: ResetPeriod) -> Self {
        let x_c = vec![0.0; ctrl.n_c()];
        RealController { ctrl, period, x_c, k: 0 }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn state(&self) -> &[f64] {
        &self.x_c
    }

    pub fn controller(&self) -> &ControllerMatrices {
        &self.ctrl
    }

    /// Returns `u[k]` and advances the state to `x_c[k+1]`.
    pub fn step(&mut self, y: &[f64]) -> Result<Vec<f64>, RuntimeError> {
        check_len("y", y.len(), self.ctrl.n_y())?;
        let cx = self.ctrl.c_c().mul_vec(&self.x_c);
        let dy = self.ctrl.d_c().mul_vec(y);
        let u = cx.iter().zip(&dy).map(|(a, b)| a + b).collect();
        if self.period.resets_after(self.k) {
            self.x_c.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let ax = self.ctrl.a_c().mul_vec(&self.x_c);
            let by = self.ctrl.b_c().mul_vec(y);
            self.x_c = ax.iter().zip(&by).map(|(a, b)| a + b).collect();
        }
        self.k += 1;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> ControllerMatrices {
        let m = |v| Matrix::from_rows(&[[v]]);
        ControllerMatrices::new(m(a), m(b), m(c), m(d)).unwrap()
    }

    #[test]
    fn hand_step() {
        let mut r = RealController::new(scalar(0.5, 1.0, 1.0, 0.0), ResetPeriod::Never);
        r.x_c = vec![2.0];
        let u = r.step(&[1.0]).unwrap();
        assert_eq!(u, vec![2.0]);
        assert_eq!(r.state(), &[2.0]);
    }

    #[test]
    fn zero_input_zero_trajectory_and_resets() {
        let mut r = RealController::new(scalar(0.9, 1.0, 1.0, 0.5), ResetPeriod::Every(3));
        assert_eq!(r.step(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(r.state(), &[0.0]);
        for k in 1..10 {
            r.step(&[1.0]).unwrap();
            if (k + 1) % 3 == 0 {
                assert_eq!(r.state(), &[0.0], "k={k}");
            } else {
                assert_ne!(r.state(), &[0.0]);
            }
        }
        assert!(r.step(&[1.0, 2.0]).is_err());
    }
}
