use super::{check_len, QuantizedController, ResetPeriod, RuntimeError};
use crate::fixedpoint::{Dyadic, FixedPointScalar};

/// Exact dyadic realization on quantized matrices and quantized outputs.
///
/// Nothing is rounded inside a period: the state `j` steps after a reset
/// carries `m(j+1)` fractional bits and the input `m(j+2)`.
#[derive(Debug, Clone)]
pub struct QuantizedRealization {
    ctrl: QuantizedController,
    period: ResetPeriod,
    x_c: Vec<Dyadic>,
    k: u64,
}

fn mat_vec(q: &crate::fixedpoint::QuantizedMatrix, v: &[Dyadic], frac: u64) -> Vec<Dyadic> {
    (0..q.rows())
        .map(|i| {
            let acc = (0..q.cols()).fold(Dyadic::new(0.into(), frac), |acc, j| acc.add(&q.entry(i, j).mul(&v[j])));
            acc.rescaled(frac)
        })
        .collect()
}

impl QuantizedRealization {
    pub fn new(ctrl: QuantizedController, period: ResetPeriod) -> Self {
        let m = ctrl.format().m() as u64;
        let x_c = vec![Dyadic::new(0.into(), m); ctrl.n_c()];
        QuantizedRealization { ctrl, period, x_c, k: 0 }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn state(&self) -> &[Dyadic] {
        &self.x_c
    }

    pub fn controller(&self) -> &QuantizedController {
        &self.ctrl
    }

    /// Returns `ū[k]` and advances the state.
    pub fn step(&mut self, y_bar: &[FixedPointScalar]) -> Result<Vec<Dyadic>, RuntimeError> {
        check_len("y_bar", y_bar.len(), self.ctrl.n_y())?;
        let fmt = self.ctrl.format();
        if let Some(bad) = y_bar.iter().find(|s| s.format() != fmt) {
            return Err(RuntimeError::Dimension(format!("measurement on {} but controller on {fmt}", bad.format())));
        }
        let m = fmt.m() as u64;
        let j = self.period.phase(self.k);
        let y: Vec<Dyadic> = y_bar.iter().map(|s| s.to_dyadic()).collect();

        let scale = m * (j + 2);
        let cx = mat_vec(self.ctrl.c_c(), &self.x_c, scale);
        let dy = mat_vec(self.ctrl.d_c(), &y, scale);
        let u = cx.iter().zip(&dy).map(|(a, b)| a.add(b).rescaled(scale)).collect();

        self.x_c = if self.period.resets_after(self.k) {
            vec![Dyadic::new(0.into(), m); self.ctrl.n_c()]
        } else {
            let ax = mat_vec(self.ctrl.a_c(), &self.x_c, scale);
            let by = mat_vec(self.ctrl.b_c(), &y, scale);
            ax.iter().zip(&by).map(|(a, b)| a.add(b).rescaled(scale)).collect()
        };
        self.k += 1;
        Ok(u)
    }
}
