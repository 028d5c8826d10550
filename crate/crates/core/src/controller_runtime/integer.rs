use num_bigint::{BigInt, BigUint};
use num_traits::Zero;

use super::{check_len, QuantizedController, ResetPeriod, RuntimeError, SessionParams};
use crate::fixedpoint::{FixedPointScalar, IntegerRingParams, QuantizedMatrix};

/// Ring image `raw · 2^shift mod 2^ñ` of every entry of a quantized matrix.
pub(crate) fn ring_matrix(q: &QuantizedMatrix, shift: u64, ring: IntegerRingParams) -> Vec<Vec<BigUint>> {
    (0..q.rows()).map(|i| (0..q.cols()).map(|j| ring.reduce(&(BigInt::from(q.raw(i, j)) << shift))).collect()).collect()
}

/// Ring image of a quantized measurement at scale `m`.
pub fn sensor_ring_image(y_bar: &[FixedPointScalar], ring: IntegerRingParams) -> Vec<BigUint> {
    y_bar.iter().map(|s| ring.reduce(&BigInt::from(s.raw()))).collect()
}

/// The controller in `ℤ_{2^ñ}`: `Ã = Ā`, `C̃ = C̄`, and the time-varying
/// `B̃[k] = 2^{mj}·B̄`, `D̃[k] = 2^{mj}·D̄` with `j` the phase of step `k`.
/// Measurements enter as `ỹ = 2^m·ȳ`.
#[derive(Debug, Clone)]
pub struct IntegerRealization {
    ctrl: QuantizedController,
    session: SessionParams,
    a: Vec<Vec<BigUint>>,
    c: Vec<Vec<BigUint>>,
    x_c: Vec<BigUint>,
    k: u64,
}

fn ring_affine(
    ring: IntegerRingParams,
    left: &[Vec<BigUint>],
    x: &[BigUint],
    right: &[Vec<BigUint>],
    y: &[BigUint],
) -> Vec<BigUint> {
    let modulus = ring.modulus();
    left.iter()
        .zip(right)
        .map(|(lrow, rrow)| {
            let mut acc = BigUint::zero();
            for (a, v) in lrow.iter().zip(x) {
                acc += a * v;
            }
            for (b, v) in rrow.iter().zip(y) {
                acc += b * v;
            }
            acc % &modulus
        })
        .collect()
}

impl IntegerRealization {
    /// No width check is made here; see [`SessionParams::validate`].
    pub fn new(ctrl: QuantizedController, session: SessionParams) -> Self {
        let ring = session.ring;
        let a = ring_matrix(ctrl.a_c(), 0, ring);
        let c = ring_matrix(ctrl.c_c(), 0, ring);
        let x_c = vec![BigUint::zero(); ctrl.n_c()];
        IntegerRealization { ctrl, session, a, c, x_c, k: 0 }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn state(&self) -> &[BigUint] {
        &self.x_c
    }

    pub fn session(&self) -> &SessionParams {
        &self.session
    }

    pub fn period(&self) -> ResetPeriod {
        self.session.period
    }

    /// `(B̃[k], D̃[k])`.
    pub fn input_matrices(&self, k: u64) -> (Vec<Vec<BigUint>>, Vec<Vec<BigUint>>) {
        let shift = self.session.format.m() as u64 * self.session.period.phase(k);
        let ring = self.session.ring;
        (ring_matrix(self.ctrl.b_c(), shift, ring), ring_matrix(self.ctrl.d_c(), shift, ring))
    }

    pub fn state_matrices(&self) -> (&[Vec<BigUint>], &[Vec<BigUint>]) {
        (&self.a, &self.c)
    }

    pub fn controller(&self) -> &QuantizedController {
        &self.ctrl
    }

    /// Returns `ũ[k]` and advances the state.
    pub fn step(&mut self, y_tilde: &[BigUint]) -> Result<Vec<BigUint>, RuntimeError> {
        check_len("y_tilde", y_tilde.len(), self.ctrl.n_y())?;
        let ring = self.session.ring;
        if y_tilde.iter().any(|v| v.bits() > ring.n_tilde) {
            return Err(RuntimeError::Dimension("measurement residue outside the ring".into()));
        }
        let (b, d) = self.input_matrices(self.k);
        let u = ring_affine(ring, &self.c, &self.x_c, &d, y_tilde);
        self.x_c = if self.session.period.resets_after(self.k) {
            vec![BigUint::zero(); self.ctrl.n_c()]
        } else {
            ring_affine(ring, &self.a, &self.x_c, &b, y_tilde)
        };
        self.k += 1;
        Ok(u)
    }
}
