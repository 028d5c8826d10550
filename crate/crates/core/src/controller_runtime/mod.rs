//! Resetting dynamic output-feedback controllers
//!
//! ```text
//! x_c[k+1] = A_c x_c[k] + B_c y[k]     ((k+1) mod T ≠ 0, else 0)
//! u[k]     = C_c x_c[k] + D_c y[k]
//! ```
//!
//! in four arithmetic domains that agree bit for bit: real, exact quantized
//! dyadic, the integer ring `ℤ_{2^ñ}`, and Paillier ciphertexts.

mod encrypted;
mod integer;
mod lockstep;
mod quantized;
mod real;
mod simulate;

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto_paillier::{PaillierError, PublicKey};
use crate::fixedpoint::{
    quantize_matrix, required_ring_bits, BudgetDims, FixedPointError, FixedPointFormat, IntegerRingParams, Projected,
    QuantizedMatrix,
};
use crate::linalg::Matrix;
use crate::plant::{PlantError, PlantModel};

pub use encrypted::{cloud_rng, sensor_rng, Actuator, ActuatorOutput, EncryptedCloud, Sensor, SensorReading};
pub use integer::{sensor_ring_image, IntegerRealization};
pub use lockstep::{lockstep, LockstepMismatch, LockstepReport};
pub use quantized::QuantizedRealization;
pub use real::RealController;
pub(crate) use simulate::exceeds_ring;
pub use simulate::{
    run_closed_loop, run_until_divergence, ControlStep, EncryptedPipeline, IntegerPipeline, LoopController,
    QuantizedPipeline, RealPipeline, SimulationTrace, TraceCsvError, TraceRow,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("ring width {n_tilde} is below the {required} bits a period of this controller needs")]
    RingTooNarrow { n_tilde: u64, required: u64 },
    #[error("key modulus has {key_bits} bits; a {n_tilde}-bit ring needs kappa_p >= 2^{}", n_tilde + 1)]
    KeyTooSmall { key_bits: u64, n_tilde: u64 },
    #[error("reset period must be positive")]
    InvalidPeriod,
    #[error("ciphertext at step {k} decrypts outside the expected range")]
    BudgetViolation { k: u64 },
    #[error("non-finite value in the loop at step {0}")]
    NonFinite(u64),
}

/// How often the controller state is forced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPeriod {
    Every(u64),
    Never,
}

impl ResetPeriod {
    pub fn every(t: u64) -> Result<Self, RuntimeError> {
        if t == 0 {
            Err(RuntimeError::InvalidPeriod)
        } else {
            Ok(ResetPeriod::Every(t))
        }
    }

    /// Steps since the last reset; grows without bound when never resetting.
    pub fn phase(&self, k: u64) -> u64 {
        match self {
            ResetPeriod::Every(t) => k % t,
            ResetPeriod::Never => k,
        }
    }

    /// Whether the state computed at step `k` is discarded in favour of zero.
    pub fn resets_after(&self, k: u64) -> bool {
        match self {
            ResetPeriod::Every(t) => (k + 1).is_multiple_of(*t),
            ResetPeriod::Never => false,
        }
    }
}

/// Real controller matrices `(A_c, B_c, C_c, D_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControllerFile", into = "ControllerFile")]
pub struct ControllerMatrices {
    a_c: Matrix,
    b_c: Matrix,
    c_c: Matrix,
    d_c: Matrix,
}

#[derive(Serialize, Deserialize)]
struct ControllerFile {
    a_c: Matrix,
    b_c: Matrix,
    c_c: Matrix,
    d_c: Matrix,
}

impl TryFrom<ControllerFile> for ControllerMatrices {
    type Error = RuntimeError;
    fn try_from(f: ControllerFile) -> Result<Self, Self::Error> {
        ControllerMatrices::new(f.a_c, f.b_c, f.c_c, f.d_c)
    }
}

impl From<ControllerMatrices> for ControllerFile {
    fn from(c: ControllerMatrices) -> Self {
        ControllerFile { a_c: c.a_c, b_c: c.b_c, c_c: c.c_c, d_c: c.d_c }
    }
}

fn check_blocks(rows: [(usize, usize); 4]) -> Result<(), RuntimeError> {
    let [(ar, ac), (br, bc), (cr, cc), (dr, dc)] = rows;
    let ok = ar == ac && br == ar && cc == ac && dr == cr && dc == bc;
    if ok {
        Ok(())
    } else {
        Err(RuntimeError::Dimension(format!(
            "controller blocks A_c {ar}x{ac}, B_c {br}x{bc}, C_c {cr}x{cc}, D_c {dr}x{dc} are inconsistent"
        )))
    }
}

impl ControllerMatrices {
    pub fn new(a_c: Matrix, b_c: Matrix, c_c: Matrix, d_c: Matrix) -> Result<Self, RuntimeError> {
        check_blocks([a_c.shape(), b_c.shape(), c_c.shape(), d_c.shape()])?;
        Ok(ControllerMatrices { a_c, b_c, c_c, d_c })
    }

    pub fn a_c(&self) -> &Matrix {
        &self.a_c
    }

    pub fn b_c(&self) -> &Matrix {
        &self.b_c
    }

    pub fn c_c(&self) -> &Matrix {
        &self.c_c
    }

    pub fn d_c(&self) -> &Matrix {
        &self.d_c
    }

    pub fn n_c(&self) -> usize {
        self.a_c.rows()
    }

    pub fn n_y(&self) -> usize {
        self.b_c.cols()
    }

    pub fn n_u(&self) -> usize {
        self.c_c.rows()
    }

    pub fn check_plant(&self, plant: &PlantModel) -> Result<(), RuntimeError> {
        if plant.n_y() != self.n_y() || plant.n_u() != self.n_u() {
            return Err(RuntimeError::Dimension(format!(
                "controller maps {} outputs to {} inputs, plant has n_y={} n_u={}",
                self.n_y(),
                self.n_u(),
                plant.n_y(),
                plant.n_u()
            )));
        }
        Ok(())
    }

    /// Projects every matrix onto `Q(n,m)`.
    pub fn quantize(&self, fmt: FixedPointFormat) -> Result<Projected<QuantizedController>, RuntimeError> {
        let a = quantize_matrix(&self.a_c, fmt)?;
        let b = quantize_matrix(&self.b_c, fmt)?;
        let c = quantize_matrix(&self.c_c, fmt)?;
        let d = quantize_matrix(&self.d_c, fmt)?;
        let saturated = a.saturated || b.saturated || c.saturated || d.saturated;
        Ok(Projected { value: QuantizedController::new(a.value, b.value, c.value, d.value)?, saturated })
    }
}

/// Controller matrices with entries on a common grid `Q(n,m)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QuantizedControllerFile", into = "QuantizedControllerFile")]
pub struct QuantizedController {
    a_c: QuantizedMatrix,
    b_c: QuantizedMatrix,
    c_c: QuantizedMatrix,
    d_c: QuantizedMatrix,
}

#[derive(Serialize, Deserialize)]
struct QuantizedControllerFile {
    a_c: QuantizedMatrix,
    b_c: QuantizedMatrix,
    c_c: QuantizedMatrix,
    d_c: QuantizedMatrix,
}

impl TryFrom<QuantizedControllerFile> for QuantizedController {
    type Error = RuntimeError;
    fn try_from(f: QuantizedControllerFile) -> Result<Self, Self::Error> {
        QuantizedController::new(f.a_c, f.b_c, f.c_c, f.d_c)
    }
}

impl From<QuantizedController> for QuantizedControllerFile {
    fn from(q: QuantizedController) -> Self {
        QuantizedControllerFile { a_c: q.a_c, b_c: q.b_c, c_c: q.c_c, d_c: q.d_c }
    }
}

impl QuantizedController {
    pub fn new(
        a_c: QuantizedMatrix,
        b_c: QuantizedMatrix,
        c_c: QuantizedMatrix,
        d_c: QuantizedMatrix,
    ) -> Result<Self, RuntimeError> {
        let shape = |q: &QuantizedMatrix| (q.rows(), q.cols());
        check_blocks([shape(&a_c), shape(&b_c), shape(&c_c), shape(&d_c)])?;
        let f = a_c.format();
        if [&b_c, &c_c, &d_c].iter().any(|q| q.format() != f) {
            return Err(RuntimeError::Dimension("controller matrices use different formats".into()));
        }
        Ok(QuantizedController { a_c, b_c, c_c, d_c })
    }

    pub fn format(&self) -> FixedPointFormat {
        self.a_c.format()
    }

    pub fn a_c(&self) -> &QuantizedMatrix {
        &self.a_c
    }

    pub fn b_c(&self) -> &QuantizedMatrix {
        &self.b_c
    }

    pub fn c_c(&self) -> &QuantizedMatrix {
        &self.c_c
    }

    pub fn d_c(&self) -> &QuantizedMatrix {
        &self.d_c
    }

    pub fn n_c(&self) -> usize {
        self.a_c.rows()
    }

    pub fn n_y(&self) -> usize {
        self.b_c.cols()
    }

    pub fn n_u(&self) -> usize {
        self.c_c.rows()
    }

    /// The same grid values as real matrices.
    pub fn to_real(&self) -> ControllerMatrices {
        ControllerMatrices {
            a_c: self.a_c.to_matrix(),
            b_c: self.b_c.to_matrix(),
            c_c: self.c_c.to_matrix(),
            d_c: self.d_c.to_matrix(),
        }
    }
}

/// Parameters shared by the sensor, the cloud and the actuator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionParams {
    pub format: FixedPointFormat,
    pub ring: IntegerRingParams,
    pub period: ResetPeriod,
}

impl SessionParams {
    /// Scale exponent of the controller state at step `k`.
    pub fn state_scale(&self, k: u64) -> u64 {
        self.format.m() as u64 * (self.period.phase(k) + 1)
    }

    /// Scale exponent of the control input at step `k`.
    pub fn input_scale(&self, k: u64) -> u64 {
        self.format.m() as u64 * (self.period.phase(k) + 2)
    }

    pub fn budget_dims(&self, n_c: usize, n_y: usize) -> BudgetDims {
        BudgetDims::new(self.format, n_c, n_y)
    }

    /// A resetting session must fit a whole period in the ring. A
    /// non-resetting session is accepted as is: it overflows by design.
    pub fn validate(&self, n_c: usize, n_y: usize) -> Result<(), RuntimeError> {
        if let ResetPeriod::Every(t) = self.period {
            if t == 0 {
                return Err(RuntimeError::InvalidPeriod);
            }
            let required = required_ring_bits(t, self.budget_dims(n_c, n_y));
            if self.ring.n_tilde < required {
                return Err(RuntimeError::RingTooNarrow { n_tilde: self.ring.n_tilde, required });
            }
        }
        Ok(())
    }

    /// `κ_p ≥ 2^{ñ+1}`.
    pub fn validate_key(&self, pk: &PublicKey) -> Result<(), RuntimeError> {
        let bound = BigUint::one() << (self.ring.n_tilde + 1);
        if pk.kappa_p() < &bound {
            return Err(RuntimeError::KeyTooSmall { key_bits: pk.bits(), n_tilde: self.ring.n_tilde });
        }
        Ok(())
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<(), RuntimeError> {
    if got == want {
        Ok(())
    } else {
        Err(RuntimeError::Dimension(format!("{what} has {got} entries, expected {want}")))
    }
}
