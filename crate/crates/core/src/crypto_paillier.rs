//! Paillier cryptosystem with generator `κ_p + 1`.
//!
//! Plaintexts live in `ℤ_{κ_p}`, ciphertexts in `ℤ_{κ_p²}`. Multiplying
//! ciphertexts adds plaintexts; raising a ciphertext to an integer power
//! multiplies its plaintext by that integer.

use std::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_KEY_BITS: u64 = 16;
pub const DEFAULT_KEY_BITS: u64 = 2048;
pub const MILLER_RABIN_ROUNDS: usize = 40;
const PRIME_ATTEMPTS_PER_BIT: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("key length {0} bits is below the minimum of {MIN_KEY_BITS}")]
    KeyTooSmall(u64),
    #[error("prime generation gave up after {0} candidates")]
    PrimeGenerationFailed(u64),
    #[error("invalid prime pair: {0}")]
    InvalidPrimes(String),
    #[error("plaintext is outside [0, kappa_p)")]
    PlaintextOutOfRange,
    #[error("ciphertext is outside [0, kappa_p^2)")]
    CiphertextOutOfRange,
    #[error("nonce is not a unit modulo kappa_p")]
    InvalidNonce,
    #[error("ciphertext is not invertible modulo kappa_p^2")]
    NotInvertible,
    #[error("L(z) division is not exact: corrupted or foreign ciphertext")]
    InexactDecryption,
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("malformed ciphertext encoding: {0}")]
    MalformedCiphertext(String),
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    kappa_p: BigUint,
    kappa_p_sq: BigUint,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey {
    lambda: BigUint,
    mu_dec: BigUint,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Keypair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    value: BigUint,
}

impl PublicKey {
    pub fn new(kappa_p: BigUint) -> Result<Self, PaillierError> {
        if kappa_p < BigUint::from(3u32) {
            return Err(PaillierError::MalformedKey("kappa_p must be at least 3".into()));
        }
        let kappa_p_sq = &kappa_p * &kappa_p;
        Ok(PublicKey { kappa_p, kappa_p_sq })
    }

    pub fn kappa_p(&self) -> &BigUint {
        &self.kappa_p
    }

    pub fn kappa_p_sq(&self) -> &BigUint {
        &self.kappa_p_sq
    }

    pub fn bits(&self) -> u64 {
        self.kappa_p.bits()
    }

    /// `E(x) = (κ_p+1)^x · r^{κ_p} mod κ_p²` with fresh uniform `r ∈ ℤ*_{κ_p}`.
    pub fn encrypt<R: Rng + ?Sized>(&self, x: &BigUint, rng: &mut R) -> Result<Ciphertext, PaillierError> {
        let r = self.sample_nonce(rng);
        self.encrypt_with_nonce(x, &r)
    }

    /// Deterministic encryption with a caller-chosen nonce.
    pub fn encrypt_with_nonce(&self, x: &BigUint, r: &BigUint) -> Result<Ciphertext, PaillierError> {
        if x >= &self.kappa_p {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        if r.is_zero() || r >= &self.kappa_p || !r.gcd(&self.kappa_p).is_one() {
            return Err(PaillierError::InvalidNonce);
        }
        // (κ_p+1)^x ≡ 1 + x·κ_p (mod κ_p²)
        let gx = (BigUint::one() + x * &self.kappa_p) % &self.kappa_p_sq;
        let rn = r.modpow(&self.kappa_p, &self.kappa_p_sq);
        Ok(Ciphertext { value: (gx * rn) % &self.kappa_p_sq })
    }

    /// Rejection-samples `r` uniformly from `ℤ*_{κ_p}`.
    pub fn sample_nonce<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.kappa_p);
            if r.gcd(&self.kappa_p).is_one() {
                return r;
            }
        }
    }

    /// `c₁ ⊕ c₂`: decrypts to the plaintext sum modulo `κ_p`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Ciphertext {
        Ciphertext { value: (&c1.value * &c2.value) % &self.kappa_p_sq }
    }

    /// `c △ k`: decrypts to `k · D(c)` modulo `κ_p`.
    pub fn scalar_mul(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, PaillierError> {
        if k >= &self.kappa_p {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        Ok(Ciphertext { value: c.value.modpow(k, &self.kappa_p_sq) })
    }

    /// Signed scalar multiplication: a negative `k` uses the ciphertext inverse,
    /// so the result decrypts to `k · D(c)` modulo `κ_p` without lifting `k`
    /// to its (much larger) residue.
    pub fn scalar_mul_signed(&self, c: &Ciphertext, k: &BigInt) -> Result<Ciphertext, PaillierError> {
        let mag = k.magnitude();
        if mag >= &self.kappa_p {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        let base = match k.sign() {
            Sign::Minus => self.inverse(c)?,
            _ => c.clone(),
        };
        Ok(Ciphertext { value: base.value.modpow(mag, &self.kappa_p_sq) })
    }

    /// Ciphertext of `−D(c)`.
    pub fn inverse(&self, c: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        c.value.modinv(&self.kappa_p_sq).map(|value| Ciphertext { value }).ok_or(PaillierError::NotInvertible)
    }

    /// Encryption of zero with nonce 1, the additive identity.
    pub fn identity(&self) -> Ciphertext {
        Ciphertext { value: BigUint::one() }
    }

    pub fn validate(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if c.value >= self.kappa_p_sq {
            Err(PaillierError::CiphertextOutOfRange)
        } else {
            Ok(())
        }
    }
}

impl Keypair {
    /// Generates a key whose modulus has exactly `key_bits` bits.
    pub fn generate<R: Rng + ?Sized>(key_bits: u64, rng: &mut R) -> Result<Self, PaillierError> {
        if key_bits < MIN_KEY_BITS {
            return Err(PaillierError::KeyTooSmall(key_bits));
        }
        let p_bits = key_bits.div_ceil(2);
        let q_bits = key_bits / 2;
        loop {
            let p = random_prime(p_bits, rng)?;
            let q = random_prime(q_bits, rng)?;
            if p == q {
                continue;
            }
            match Keypair::from_primes(&p, &q) {
                Ok(kp) if kp.public.bits() == key_bits => return Ok(kp),
                Ok(_) | Err(PaillierError::InvalidPrimes(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    /// Builds a keypair from explicit primes. Used by tests to pin the key.
    pub fn from_primes(p: &BigUint, q: &BigUint) -> Result<Self, PaillierError> {
        if p == q {
            return Err(PaillierError::InvalidPrimes("p and q must differ".into()));
        }
        let mut witness_rng = rand_chacha_seeded(p, q);
        for f in [p, q] {
            if !is_probable_prime(f, MILLER_RABIN_ROUNDS, &mut witness_rng) {
                return Err(PaillierError::InvalidPrimes(format!("{f} is not prime")));
            }
        }
        let kappa_p = p * q;
        let pm1 = p - 1u32;
        let qm1 = q - 1u32;
        if !kappa_p.gcd(&(&pm1 * &qm1)).is_one() {
            return Err(PaillierError::InvalidPrimes("gcd(pq, (p-1)(q-1)) != 1".into()));
        }
        let lambda = pm1.lcm(&qm1);
        let mu_dec = lambda
            .modinv(&kappa_p)
            .ok_or_else(|| PaillierError::InvalidPrimes("lambda is not invertible mod kappa_p".into()))?;
        Ok(Keypair { public: PublicKey::new(kappa_p)?, private: PrivateKey { lambda, mu_dec } })
    }

    /// Reassembles a keypair from serialized parts, checking `λ·μ_dec ≡ 1`.
    pub fn from_parts(kappa_p: BigUint, lambda: BigUint, mu_dec: BigUint) -> Result<Self, PaillierError> {
        let public = PublicKey::new(kappa_p)?;
        if !((&lambda * &mu_dec) % public.kappa_p()).is_one() {
            return Err(PaillierError::MalformedKey("lambda * mu_dec != 1 mod kappa_p".into()));
        }
        Ok(Keypair { public, private: PrivateKey { lambda, mu_dec } })
    }

    /// `D(c) = L(c^λ mod κ_p²)·μ_dec mod κ_p`, `L(z) = (z−1)/κ_p`.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        let pk = &self.public;
        pk.validate(c)?;
        let z = c.value.modpow(&self.private.lambda, &pk.kappa_p_sq);
        if z.is_zero() {
            return Err(PaillierError::InexactDecryption);
        }
        let (l, rem) = (z - 1u32).div_rem(&pk.kappa_p);
        if !rem.is_zero() {
            return Err(PaillierError::InexactDecryption);
        }
        Ok((l * &self.private.mu_dec) % &pk.kappa_p)
    }

    pub fn lambda(&self) -> &BigUint {
        &self.private.lambda
    }

    pub fn mu_dec(&self) -> &BigUint {
        &self.private.mu_dec
    }

    pub fn to_file(&self, radix: KeyRadix) -> KeyFile {
        KeyFile {
            kappa_p: radix.format(self.public.kappa_p()),
            lambda: Some(radix.format(&self.private.lambda)),
            mu_dec: Some(radix.format(&self.private.mu_dec)),
        }
    }
}

fn rand_chacha_seeded(p: &BigUint, q: &BigUint) -> rand_chacha::ChaCha20Rng {
    use rand::SeedableRng;
    let mut seed = [0u8; 32];
    for (i, b) in p.to_bytes_le().iter().chain(q.to_bytes_le().iter()).enumerate() {
        seed[i % 32] ^= b;
    }
    rand_chacha::ChaCha20Rng::from_seed(seed)
}

const SMALL_PRIMES: [u32; 24] =
    [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97];

/// Miller–Rabin with `rounds` uniformly drawn witnesses.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n == &two {
        return true;
    }
    if n.is_even() {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits and its top two bits set, so a
/// product of two such primes has exactly the combined bit length.
pub fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<BigUint, PaillierError> {
    if bits < 3 {
        return Err(PaillierError::KeyTooSmall(bits * 2));
    }
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    let attempts = PRIME_ATTEMPTS_PER_BIT * bits.max(16);
    for _ in 0..attempts {
        let candidate = rng.gen_biguint(bits) | &top | BigUint::one();
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return Ok(candidate);
        }
    }
    Err(PaillierError::PrimeGenerationFailed(attempts))
}

impl Ciphertext {
    pub fn from_value(value: BigUint, pk: &PublicKey) -> Result<Self, PaillierError> {
        let c = Ciphertext { value };
        pk.validate(&c)?;
        Ok(c)
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Appends the wire form: 4-byte big-endian length, then big-endian bytes.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let bytes = self.value.to_bytes_be();
        out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&bytes);
    }

    /// Parses one wire-encoded ciphertext and returns it with the bytes consumed.
    pub fn decode(buf: &[u8], pk: &PublicKey) -> Result<(Self, usize), PaillierError> {
        if buf.len() < 4 {
            return Err(PaillierError::MalformedCiphertext("truncated length prefix".into()));
        }
        let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
        let max_len = pk.kappa_p_sq().bits().div_ceil(8) as usize;
        if len == 0 || len > max_len {
            return Err(PaillierError::MalformedCiphertext(format!("length {len} outside 1..={max_len}")));
        }
        let body = buf.get(4..4 + len).ok_or_else(|| PaillierError::MalformedCiphertext("truncated body".into()))?;
        let c = Ciphertext::from_value(BigUint::from_bytes_be(body), pk)?;
        Ok((c, 4 + len))
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext({} bits)", self.value.bits())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({} bits)", self.bits())
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Keypair({:?})", self.public)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyRadix {
    #[default]
    Decimal,
    Hex,
}

impl KeyRadix {
    fn format(self, v: &BigUint) -> String {
        match self {
            KeyRadix::Decimal => v.to_str_radix(10),
            KeyRadix::Hex => format!("0x{}", v.to_str_radix(16)),
        }
    }
}

/// JSON key document. A file without `lambda`/`mu_dec` holds only the public key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub kappa_p: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_dec: Option<String>,
}

/// Parses a decimal or `0x`-prefixed hex integer.
pub fn parse_biguint(s: &str) -> Result<BigUint, PaillierError> {
    let s = s.trim();
    let (digits, radix) = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => (h, 16),
        None => (s, 10),
    };
    BigUint::parse_bytes(digits.as_bytes(), radix)
        .ok_or_else(|| PaillierError::MalformedKey(format!("cannot parse integer {s:?}")))
}

impl KeyFile {
    pub fn public_only(pk: &PublicKey, radix: KeyRadix) -> Self {
        KeyFile { kappa_p: radix.format(pk.kappa_p()), lambda: None, mu_dec: None }
    }

    pub fn public_key(&self) -> Result<PublicKey, PaillierError> {
        PublicKey::new(parse_biguint(&self.kappa_p)?)
    }

    pub fn keypair(&self) -> Result<Keypair, PaillierError> {
        let (Some(lambda), Some(mu_dec)) = (&self.lambda, &self.mu_dec) else {
            return Err(PaillierError::MalformedKey("private fields lambda/mu_dec missing".into()));
        };
        Keypair::from_parts(parse_biguint(&self.kappa_p)?, parse_biguint(lambda)?, parse_biguint(mu_dec)?)
    }
}
