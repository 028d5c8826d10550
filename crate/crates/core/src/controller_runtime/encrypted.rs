//! Sensor, cloud and actuator of the encrypted loop.
//!
//! Ring residues are carried into `ℤ_{κ_p}` through their two's-complement
//! reading, so homomorphic sums of signed products decrypt to the exact
//! integer result; reducing that integer modulo `2^ñ` gives the ring value.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::integer::{ring_matrix, sensor_ring_image};
use super::{check_len, QuantizedController, RuntimeError, SessionParams};
use crate::crypto_paillier::{Ciphertext, Keypair, PublicKey};
use crate::fixedpoint::{budgets_at_phase, from_ring_exact, proj, signed_width, Dyadic, FixedPointScalar};

/// Sensor randomness for a seeded session.
pub fn sensor_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Cloud randomness (fresh encryptions of zero at resets) for a seeded session.
pub fn cloud_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

/// Plaintext in `ℤ_{κ_p}` carrying the signed value of a ring residue.
fn embed(w: &BigUint, session: &SessionParams, pk: &PublicKey) -> BigUint {
    let s = session.ring.signed_lift(w);
    let kappa = BigInt::from(pk.kappa_p().clone());
    s.mod_floor(&kappa).to_biguint().expect("mod_floor with positive modulus is non-negative")
}

/// Signed reading of a plaintext: `d − κ_p·[d > κ_p/2]`.
fn lift_plaintext(d: &BigUint, pk: &PublicKey) -> BigInt {
    let d = BigInt::from(d.clone());
    let kappa = BigInt::from(pk.kappa_p().clone());
    if &d * 2 > kappa {
        d - kappa
    } else {
        d
    }
}

#[derive(Debug, Clone)]
pub struct SensorReading {
    pub y_bar: Vec<FixedPointScalar>,
    pub saturated: bool,
    pub y_tilde: Vec<BigUint>,
    pub y_check: Vec<Ciphertext>,
}

/// Measures, quantizes, scales and encrypts.
#[derive(Debug)]
pub struct Sensor {
    session: SessionParams,
    pk: PublicKey,
    rng: ChaCha20Rng,
}

impl Sensor {
    pub fn new(session: SessionParams, pk: PublicKey, rng: ChaCha20Rng) -> Result<Self, RuntimeError> {
        session.validate_key(&pk)?;
        Ok(Sensor { session, pk, rng })
    }

    pub fn measure(&mut self, y: &[f64]) -> Result<SensorReading, RuntimeError> {
        let mut saturated = false;
        let mut y_bar = Vec::with_capacity(y.len());
        for &v in y {
            let p = proj(v, self.session.format)?;
            saturated |= p.saturated;
            y_bar.push(p.value);
        }
        let y_tilde = sensor_ring_image(&y_bar, self.session.ring);
        let y_check = y_tilde
            .iter()
            .map(|w| self.pk.encrypt(&embed(w, &self.session, &self.pk), &mut self.rng))
            .collect::<Result<_, _>>()?;
        Ok(SensorReading { y_bar, saturated, y_tilde, y_check })
    }
}

/// The untrusted controller: holds the public key and plaintext controller
/// parameters only.
#[derive(Debug)]
pub struct EncryptedCloud {
    ctrl: QuantizedController,
    session: SessionParams,
    pk: PublicKey,
    a: Vec<Vec<BigInt>>,
    c: Vec<Vec<BigInt>>,
    x_c: Vec<Ciphertext>,
    k: u64,
    rng: ChaCha20Rng,
}

impl EncryptedCloud {
    pub fn new(
        ctrl: QuantizedController,
        session: SessionParams,
        pk: PublicKey,
        mut rng: ChaCha20Rng,
    ) -> Result<Self, RuntimeError> {
        session.validate_key(&pk)?;
        let lift = |rows: Vec<Vec<BigUint>>| -> Vec<Vec<BigInt>> {
            rows.iter().map(|r| r.iter().map(|w| session.ring.signed_lift(w)).collect()).collect()
        };
        let a = lift(ring_matrix(ctrl.a_c(), 0, session.ring));
        let c = lift(ring_matrix(ctrl.c_c(), 0, session.ring));
        let x_c = fresh_zeros(&pk, ctrl.n_c(), &mut rng)?;
        Ok(EncryptedCloud { ctrl, session, pk, a, c, x_c, k: 0, rng })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn state(&self) -> &[Ciphertext] {
        &self.x_c
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    fn input_matrices(&self) -> (Vec<Vec<BigInt>>, Vec<Vec<BigInt>>) {
        let shift = self.session.format.m() as u64 * self.session.period.phase(self.k);
        let ring = self.session.ring;
        let lift = |rows: Vec<Vec<BigUint>>| -> Vec<Vec<BigInt>> {
            rows.iter().map(|r| r.iter().map(|w| ring.signed_lift(w)).collect()).collect()
        };
        (lift(ring_matrix(self.ctrl.b_c(), shift, ring)), lift(ring_matrix(self.ctrl.d_c(), shift, ring)))
    }

    /// `⊕_j x_j △ L_ij ⊕ ⊕_j y_j △ R_ij` for every row `i`.
    fn hom_affine(
        &self,
        left: &[Vec<BigInt>],
        x: &[Ciphertext],
        right: &[Vec<BigInt>],
        y: &[Ciphertext],
    ) -> Result<Vec<Ciphertext>, RuntimeError> {
        let pk = &self.pk;
        left.iter()
            .zip(right)
            .map(|(lrow, rrow)| {
                let mut acc = pk.identity();
                for (coef, c) in lrow.iter().zip(x).chain(rrow.iter().zip(y)) {
                    if coef.magnitude().bits() == 0 {
                        continue;
                    }
                    acc = pk.add(&acc, &pk.scalar_mul_signed(c, coef)?);
                }
                Ok(acc)
            })
            .collect()
    }

    /// Returns `ǔ[k]` and advances the encrypted state.
    pub fn step(&mut self, y_check: &[Ciphertext]) -> Result<Vec<Ciphertext>, RuntimeError> {
        check_len("y_check", y_check.len(), self.ctrl.n_y())?;
        for c in y_check {
            self.pk.validate(c)?;
        }
        let (b, d) = self.input_matrices();
        let u = self.hom_affine(&self.c, &self.x_c, &d, y_check)?;
        self.x_c = if self.session.period.resets_after(self.k) {
            fresh_zeros(&self.pk, self.ctrl.n_c(), &mut self.rng)?
        } else {
            self.hom_affine(&self.a, &self.x_c, &b, y_check)?
        };
        self.k += 1;
        Ok(u)
    }
}

fn fresh_zeros(pk: &PublicKey, n: usize, rng: &mut ChaCha20Rng) -> Result<Vec<Ciphertext>, RuntimeError> {
    (0..n).map(|_| pk.encrypt(&BigUint::default(), rng).map_err(RuntimeError::from)).collect()
}

#[derive(Debug, Clone)]
pub struct ActuatorOutput {
    pub u_tilde: Vec<BigUint>,
    pub u_exact: Vec<Dyadic>,
    pub u: Vec<f64>,
    /// Some decrypted value lies outside the width a correct input can have.
    pub budget_violation: bool,
}

/// Decrypts, reduces into the ring and extracts the real input.
#[derive(Debug)]
pub struct Actuator {
    session: SessionParams,
    keypair: Keypair,
    n_c: usize,
    n_y: usize,
}

impl Actuator {
    pub fn new(session: SessionParams, keypair: Keypair, n_c: usize, n_y: usize) -> Result<Self, RuntimeError> {
        session.validate_key(&keypair.public)?;
        Ok(Actuator { session, keypair, n_c, n_y })
    }

    pub fn session(&self) -> &SessionParams {
        &self.session
    }

    fn decrypt_signed(&self, c: &Ciphertext) -> Result<BigInt, RuntimeError> {
        let d = self.keypair.decrypt(c)?;
        Ok(lift_plaintext(&d, &self.keypair.public))
    }

    pub fn extract(&self, k: u64, u_check: &[Ciphertext]) -> Result<ActuatorOutput, RuntimeError> {
        let ring = self.session.ring;
        let j = self.session.period.phase(k);
        let (_, u_budget) = budgets_at_phase(j, self.session.budget_dims(self.n_c, self.n_y));
        let scale = self.session.input_scale(k);
        let mut out = ActuatorOutput { u_tilde: vec![], u_exact: vec![], u: vec![], budget_violation: false };
        for c in u_check {
            let s = self.decrypt_signed(c)?;
            if !fits_width(&s, u_budget.total_bits()) {
                out.budget_violation = true;
            }
            let w = ring.reduce(&s);
            let exact = from_ring_exact(&w, scale, ring)?;
            out.u.push(exact.to_f64());
            out.u_exact.push(exact);
            out.u_tilde.push(w);
        }
        Ok(out)
    }

    /// Ring residues held by an encrypted state vector at step `k`.
    pub fn decrypt_state(&self, x_check: &[Ciphertext]) -> Result<Vec<BigUint>, RuntimeError> {
        x_check.iter().map(|c| Ok(self.session.ring.reduce(&self.decrypt_signed(c)?))).collect()
    }

    /// Real values of an encrypted state vector at step `k`.
    pub fn decode_state(&self, k: u64, x_check: &[Ciphertext]) -> Result<Vec<f64>, RuntimeError> {
        let scale = self.session.state_scale(k);
        self.decrypt_state(x_check)?
            .iter()
            .map(|w| Ok(from_ring_exact(w, scale, self.session.ring)?.to_f64()))
            .collect()
    }
}

fn fits_width(v: &BigInt, width: i64) -> bool {
    v.is_zero() || (width > 0 && signed_width(v) <= width as u64)
}
