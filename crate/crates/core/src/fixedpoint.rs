//! Two's-complement fixed-point grids `Q(n,m)`, exact dyadic arithmetic,
//! the signed embedding into `ℤ_{2^ñ}` and the per-step bit budgets of a
//! resetting quantized controller.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

/// Widest supported grid; raw values are held in an `i64`.
pub const MAX_FORMAT_BITS: u32 = 62;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixedPointError {
    #[error("invalid format Q({n},{m}): need 1 <= n <= {MAX_FORMAT_BITS} and m <= n")]
    InvalidFormat { n: u32, m: u32 },
    #[error("cannot project a non-finite value")]
    NonFinite,
    #[error("value does not fit the ring: |v * 2^{scale}| >= 2^{limit_bits}")]
    RingOverflow { scale: u64, limit_bits: u64 },
    #[error("value has {frac_bits} fractional bits, more than the ring scale {scale}")]
    NotIntegralAtScale { frac_bits: u64, scale: u64 },
    #[error("ring residue is outside [0, 2^{0})")]
    ResidueOutOfRange(u64),
    #[error("invalid ring width {0}")]
    InvalidRing(u64),
    #[error("malformed quantized matrix: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FormatFile")]
pub struct FixedPointFormat {
    n: u32,
    m: u32,
}

#[derive(Deserialize)]
struct FormatFile {
    n: u32,
    m: u32,
}

impl TryFrom<FormatFile> for FixedPointFormat {
    type Error = FixedPointError;
    fn try_from(f: FormatFile) -> Result<Self, Self::Error> {
        FixedPointFormat::new(f.n, f.m)
    }
}

impl FixedPointFormat {
    pub fn new(n: u32, m: u32) -> Result<Self, FixedPointError> {
        if n == 0 || n > MAX_FORMAT_BITS || m > n {
            return Err(FixedPointError::InvalidFormat { n, m });
        }
        Ok(FixedPointFormat { n, m })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn raw_min(&self) -> i64 {
        -(1i64 << (self.n - 1))
    }

    pub fn raw_max(&self) -> i64 {
        (1i64 << (self.n - 1)) - 1
    }

    pub fn resolution(&self) -> f64 {
        ldexp(1.0, -(self.m as i64))
    }

    pub fn min_value(&self) -> f64 {
        ldexp(self.raw_min() as f64, -(self.m as i64))
    }

    pub fn max_value(&self) -> f64 {
        ldexp(self.raw_max() as f64, -(self.m as i64))
    }

    /// Every member of the grid in increasing order. Only sensible for small `n`.
    pub fn members(&self) -> impl Iterator<Item = FixedPointScalar> + '_ {
        (self.raw_min()..=self.raw_max()).map(move |raw| FixedPointScalar { raw, format: *self })
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({},{})", self.n, self.m)
    }
}

/// An element of `Q(n,m)`: `raw · 2^{−m}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointScalar {
    raw: i64,
    format: FixedPointFormat,
}

impl FixedPointScalar {
    pub fn from_raw(raw: i64, format: FixedPointFormat) -> Option<Self> {
        (format.raw_min()..=format.raw_max()).contains(&raw).then_some(FixedPointScalar { raw, format })
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn to_f64(&self) -> f64 {
        ldexp(self.raw as f64, -(self.format.m as i64))
    }

    pub fn to_dyadic(&self) -> Dyadic {
        Dyadic::new(BigInt::from(self.raw), self.format.m as u64)
    }
}

/// A projected value together with whether the projection had to saturate.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected<T> {
    pub value: T,
    pub saturated: bool,
}

/// Nearest grid point of `Q(n,m)` to `x`; ties go to the even raw integer.
/// Values beyond the range saturate to the nearest endpoint and raise the flag.
pub fn proj(x: f64, fmt: FixedPointFormat) -> Result<Projected<FixedPointScalar>, FixedPointError> {
    if !x.is_finite() {
        return Err(FixedPointError::NonFinite);
    }
    let scaled = ldexp(x, fmt.m as i64).round_ties_even();
    let (raw, saturated) = if scaled < fmt.raw_min() as f64 {
        (fmt.raw_min(), true)
    } else if scaled > fmt.raw_max() as f64 {
        (fmt.raw_max(), true)
    } else {
        (scaled as i64, false)
    };
    Ok(Projected { value: FixedPointScalar { raw, format: fmt }, saturated })
}

/// `|proj(x) − x|`.
pub fn dist(x: f64, fmt: FixedPointFormat) -> Result<f64, FixedPointError> {
    Ok((proj(x, fmt)?.value.to_f64() - x).abs())
}

/// Matrix with entries in `Q(n,m)`, stored as raw integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QuantizedMatrixFile", into = "QuantizedMatrixFile")]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    raw: Vec<i64>,
    format: FixedPointFormat,
}

#[derive(Serialize, Deserialize)]
struct QuantizedMatrixFile {
    n: u32,
    m: u32,
    rows: usize,
    cols: usize,
    raw: Vec<i64>,
}

impl TryFrom<QuantizedMatrixFile> for QuantizedMatrix {
    type Error = FixedPointError;
    fn try_from(f: QuantizedMatrixFile) -> Result<Self, Self::Error> {
        let format = FixedPointFormat::new(f.n, f.m)?;
        QuantizedMatrix::from_raw(f.rows, f.cols, f.raw, format)
    }
}

impl From<QuantizedMatrix> for QuantizedMatrixFile {
    fn from(q: QuantizedMatrix) -> Self {
        QuantizedMatrixFile { n: q.format.n, m: q.format.m, rows: q.rows, cols: q.cols, raw: q.raw }
    }
}

impl QuantizedMatrix {
    pub fn from_raw(
        rows: usize,
        cols: usize,
        raw: Vec<i64>,
        format: FixedPointFormat,
    ) -> Result<Self, FixedPointError> {
        if rows == 0 || cols == 0 || raw.len() != rows * cols {
            return Err(FixedPointError::Malformed(format!("{} entries for a {rows}x{cols} matrix", raw.len())));
        }
        if let Some(bad) = raw.iter().find(|r| !(format.raw_min()..=format.raw_max()).contains(r)) {
            return Err(FixedPointError::Malformed(format!("raw entry {bad} outside {format}")));
        }
        Ok(QuantizedMatrix { rows, cols, raw, format })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn raw(&self, i: usize, j: usize) -> i64 {
        self.raw[i * self.cols + j]
    }

    pub fn raw_entries(&self) -> &[i64] {
        &self.raw
    }

    pub fn entry(&self, i: usize, j: usize) -> Dyadic {
        Dyadic::new(BigInt::from(self.raw(i, j)), self.format.m as u64)
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.raw.iter().map(|&r| ldexp(r as f64, -(self.format.m as i64))).collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("dimensions validated at construction")
    }
}

/// Elementwise `proj`.
pub fn quantize_matrix(m: &Matrix, fmt: FixedPointFormat) -> Result<Projected<QuantizedMatrix>, FixedPointError> {
    let mut saturated = false;
    let mut raw = Vec::with_capacity(m.rows() * m.cols());
    for &x in m.as_slice() {
        let p = proj(x, fmt)?;
        saturated |= p.saturated;
        raw.push(p.value.raw);
    }
    let value = QuantizedMatrix::from_raw(m.rows(), m.cols(), raw, fmt)?;
    Ok(Projected { value, saturated })
}

/// Exact dyadic rational `raw · 2^{−frac_bits}`.
#[derive(Debug, Clone)]
pub struct Dyadic {
    raw: BigInt,
    frac_bits: u64,
}

impl Dyadic {
    pub fn new(raw: BigInt, frac_bits: u64) -> Self {
        Dyadic { raw, frac_bits }
    }

    pub fn zero() -> Self {
        Dyadic { raw: BigInt::zero(), frac_bits: 0 }
    }

    pub fn raw(&self) -> &BigInt {
        &self.raw
    }

    pub fn frac_bits(&self) -> u64 {
        self.frac_bits
    }

    pub fn is_zero(&self) -> bool {
        self.raw.is_zero()
    }

    /// Same value expressed with `frac_bits` fractional bits; `None` if that would round.
    pub fn at_frac(&self, frac_bits: u64) -> Option<BigInt> {
        match frac_bits.cmp(&self.frac_bits) {
            Ordering::Equal => Some(self.raw.clone()),
            Ordering::Greater => Some(&self.raw << (frac_bits - self.frac_bits)),
            Ordering::Less => {
                let shift = self.frac_bits - frac_bits;
                let divisor = BigInt::one() << shift;
                let (q, r) = self.raw.div_rem(&divisor);
                r.is_zero().then_some(q)
            }
        }
    }

    /// Re-expresses the value with more fractional bits (exact).
    pub fn rescaled(&self, frac_bits: u64) -> Dyadic {
        assert!(frac_bits >= self.frac_bits, "rescaling may only add fractional bits");
        Dyadic { raw: &self.raw << (frac_bits - self.frac_bits), frac_bits }
    }

    pub fn add(&self, other: &Dyadic) -> Dyadic {
        let f = self.frac_bits.max(other.frac_bits);
        let a = &self.raw << (f - self.frac_bits);
        let b = &other.raw << (f - other.frac_bits);
        Dyadic { raw: a + b, frac_bits: f }
    }

    pub fn mul(&self, other: &Dyadic) -> Dyadic {
        Dyadic { raw: &self.raw * &other.raw, frac_bits: self.frac_bits + other.frac_bits }
    }

    /// Smallest `W` such that the raw integer at `frac_bits` fits `W`-bit two's complement.
    pub fn signed_width_at(&self, frac_bits: u64) -> Option<u64> {
        self.at_frac(frac_bits).map(|r| signed_width(&r))
    }

    /// Whether the value lies in `Q(budget.total_bits(), budget.fractional_bits)`.
    pub fn fits(&self, budget: &BitBudget) -> bool {
        let total = budget.total_bits();
        match self.at_frac(budget.fractional_bits) {
            Some(r) if r.is_zero() => true,
            Some(r) => total > 0 && signed_width(&r) <= total as u64,
            None => false,
        }
    }

    /// Nearest `f64`, determined by the value alone (not its representation).
    pub fn to_f64(&self) -> f64 {
        if self.raw.is_zero() {
            return 0.0;
        }
        let tz = self.raw.trailing_zeros().unwrap_or(0);
        let mut mant = &self.raw >> tz;
        let mut exp = tz as i64 - self.frac_bits as i64;
        let bits = mant.bits();
        if bits > 1000 {
            let drop = bits - 1000;
            mant = mant.abs() >> drop;
            if self.raw.is_negative() {
                mant = -mant;
            }
            exp += drop as i64;
        }
        ldexp(mant.to_f64().unwrap_or(f64::NAN), exp)
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        let f = self.frac_bits.max(other.frac_bits);
        (&self.raw << (f - self.frac_bits)) == (&other.raw << (f - other.frac_bits))
    }
}

impl Eq for Dyadic {}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}·2^-{}", self.raw, self.frac_bits)
    }
}

/// Bits needed to hold `v` in two's complement.
pub fn signed_width(v: &BigInt) -> u64 {
    if v.is_negative() {
        (-v - 1u32).bits() + 1
    } else {
        v.bits() + 1
    }
}

/// `x · 2^e`, splitting large exponents so intermediate factors stay finite.
pub fn ldexp(mut x: f64, mut e: i64) -> f64 {
    const STEP: i64 = 1000;
    while e > STEP {
        x *= 2f64.powi(STEP as i32);
        e -= STEP;
    }
    while e < -STEP {
        x *= 2f64.powi(-STEP as i32);
        e += STEP;
    }
    x * 2f64.powi(e as i32)
}

/// The ring `ℤ_{2^ñ}` that hosts the scaled integer controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegerRingParams {
    pub n_tilde: u64,
}

impl IntegerRingParams {
    pub fn new(n_tilde: u64) -> Result<Self, FixedPointError> {
        if n_tilde < 2 {
            return Err(FixedPointError::InvalidRing(n_tilde));
        }
        Ok(IntegerRingParams { n_tilde })
    }

    pub fn modulus(&self) -> BigUint {
        BigUint::one() << self.n_tilde
    }

    /// Reduces an arbitrary integer into `[0, 2^ñ)`.
    pub fn reduce(&self, v: &BigInt) -> BigUint {
        let modulus = BigInt::from(self.modulus());
        v.mod_floor(&modulus).to_biguint().expect("mod_floor with positive modulus is non-negative")
    }

    /// Two's-complement reading of a residue: `w − 2^ñ·[w ≥ 2^{ñ−1}]`.
    pub fn signed_lift(&self, w: &BigUint) -> BigInt {
        let half = BigUint::one() << (self.n_tilde - 1);
        if w >= &half {
            BigInt::from(w.clone()) - BigInt::from(self.modulus())
        } else {
            BigInt::from(w.clone())
        }
    }
}

/// `(v · 2^scale) mod 2^ñ` for an exact dyadic `v`.
pub fn to_ring(v: &Dyadic, scale: u64, ring: IntegerRingParams) -> Result<BigUint, FixedPointError> {
    let scaled = v.at_frac(scale).ok_or(FixedPointError::NotIntegralAtScale { frac_bits: v.frac_bits, scale })?;
    let limit_bits = ring.n_tilde - 1;
    if scaled.magnitude().bits() > limit_bits {
        return Err(FixedPointError::RingOverflow { scale, limit_bits });
    }
    Ok(ring.reduce(&scaled))
}

/// Exact inverse of [`to_ring`]: `2^{−scale}·(w − 2^ñ·[w ≥ 2^{ñ−1}])`.
pub fn from_ring_exact(w: &BigUint, scale: u64, ring: IntegerRingParams) -> Result<Dyadic, FixedPointError> {
    if w.bits() > ring.n_tilde {
        return Err(FixedPointError::ResidueOutOfRange(ring.n_tilde));
    }
    Ok(Dyadic::new(ring.signed_lift(w), scale))
}

pub fn from_ring(w: &BigUint, scale: u64, ring: IntegerRingParams) -> Result<f64, FixedPointError> {
    Ok(from_ring_exact(w, scale, ring)?.to_f64())
}

/// Two's-complement width bookkeeping for one controller signal at one step.
/// The signal lies in `Q(integer_bits + fractional_bits, fractional_bits)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitBudget {
    pub integer_bits: i64,
    pub fractional_bits: u64,
    pub step_in_period: u64,
}

impl BitBudget {
    pub fn total_bits(&self) -> i64 {
        self.integer_bits + self.fractional_bits as i64
    }
}

/// Dimensions and format that determine the budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetDims {
    pub n: u64,
    pub m: u64,
    pub n_c: u64,
    pub n_y: u64,
}

impl BudgetDims {
    pub fn new(fmt: FixedPointFormat, n_c: usize, n_y: usize) -> Self {
        BudgetDims { n: fmt.n as u64, m: fmt.m as u64, n_c: n_c as u64, n_y: n_y as u64 }
    }
}

/// State and input budgets after `j` steps since the last reset:
/// `x_c ∈ Q((n_c+1)(j−1) + n_y + n(j+1), m(j+1))`,
/// `u ∈ Q((n_c+1)j + n_y + n(j+2), m(j+2))`.
pub fn budgets_at_phase(j: u64, d: BudgetDims) -> (BitBudget, BitBudget) {
    let j_i = j as i64;
    let (n, m, nc1, ny) = (d.n as i64, d.m as i64, d.n_c as i64 + 1, d.n_y as i64);
    let state_total = nc1 * (j_i - 1) + ny + n * (j_i + 1);
    let input_total = nc1 * j_i + ny + n * (j_i + 2);
    let state_frac = m * (j_i + 1);
    let input_frac = m * (j_i + 2);
    (
        BitBudget { integer_bits: state_total - state_frac, fractional_bits: state_frac as u64, step_in_period: j },
        BitBudget { integer_bits: input_total - input_frac, fractional_bits: input_frac as u64, step_in_period: j },
    )
}

/// Budgets at step `k` of a controller reset every `t` steps.
pub fn bit_growth(k: u64, t: u64, d: BudgetDims) -> (BitBudget, BitBudget) {
    assert!(t >= 1, "reset period must be positive");
    budgets_at_phase(k % t, d)
}

/// Ring width needed so every signal of a period fits with a spare sign bit.
pub fn required_ring_bits(t: u64, d: BudgetDims) -> u64 {
    (0..t)
        .flat_map(|j| {
            let (s, u) = budgets_at_phase(j, d);
            [s.total_bits(), u.total_bits()]
        })
        .max()
        .unwrap_or(1)
        .max(1) as u64
        + 1
}

/// The closed-form bound `(n_c+1)T + max(n_y,n_u) + n(T+2)`; valid widths exceed it.
pub fn conservative_ring_bound(t: u64, n: u64, n_c: u64, n_y: u64, n_u: u64) -> u64 {
    (n_c + 1) * t + n_y.max(n_u) + n * (t + 2)
}

/// Default width picked for `auto`: the closed-form bound plus two bits.
pub fn auto_ring_bits(t: u64, n: u64, n_c: u64, n_y: u64, n_u: u64) -> u64 {
    conservative_ring_bound(t, n, n_c, n_y, n_u) + 2
}
