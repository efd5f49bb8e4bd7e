//! Prime-field arithmetic over `F_q` with `q < 2^32`.
//!
//! Elements are plain `u64` residues; the modulus lives in a [`PrimeField`]
//! context so the same code runs over the production field `q = 2^32 - 5`
//! and over tiny fields (e.g. `q = 11`) used for exhaustive checks.
//! Products of two residues fit in 64 bits, so multiplication is a single
//! widening multiply followed by one reduction.

mod mds;

pub use mds::{mds_decode, mds_encode, MdsCode, Vandermonde};

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest prime below `2^32`.
pub const DEFAULT_MODULUS: u64 = 4_294_967_291;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("modulus {0} is not a prime in [3, 2^32)")]
    InvalidModulus(u64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate evaluation index {0}")]
    DuplicateIndex(u64),
    #[error("evaluation index {index} outside [1, {max}]")]
    IndexOutOfRange { index: u64, max: u64 },
    #[error("no input vectors supplied")]
    Empty,
    #[error("matrix is singular")]
    Singular,
}

/// A residue in `[0, q)`. Only a [`PrimeField`] can create non-trivial values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A dense vector of field elements.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldVector(Vec<FieldElement>);

impl FieldVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![FieldElement::ZERO; len])
    }

    pub fn into_inner(self) -> Vec<FieldElement> {
        self.0
    }

    pub fn values(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().map(|e| e.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|e| e.is_zero())
    }
}

impl From<Vec<FieldElement>> for FieldVector {
    fn from(v: Vec<FieldElement>) -> Self {
        Self(v)
    }
}

impl FromIterator<FieldElement> for FieldVector {
    fn from_iter<I: IntoIterator<Item = FieldElement>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Deref for FieldVector {
    type Target = [FieldElement];
    fn deref(&self) -> &[FieldElement] {
        &self.0
    }
}

impl DerefMut for FieldVector {
    fn deref_mut(&mut self) -> &mut [FieldElement] {
        &mut self.0
    }
}

impl<'a> IntoIterator for &'a FieldVector {
    type Item = &'a FieldElement;
    type IntoIter = std::slice::Iter<'a, FieldElement>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// The prime field `F_q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PrimeField {
    modulus: u64,
}

impl Default for PrimeField {
    fn default() -> Self {
        Self {
            modulus: DEFAULT_MODULUS,
        }
    }
}

impl TryFrom<u64> for PrimeField {
    type Error = FieldError;
    fn try_from(q: u64) -> Result<Self, FieldError> {
        Self::new(q)
    }
}

impl From<PrimeField> for u64 {
    fn from(f: PrimeField) -> u64 {
        f.modulus
    }
}

fn is_prime_u32(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    if q.is_multiple_of(2) {
        return q == 2;
    }
    let mut d = 3u64;
    while d * d <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

impl PrimeField {
    /// Builds `F_q`, rejecting composite moduli and anything outside `[3, 2^32)`.
    pub fn new(modulus: u64) -> Result<Self, FieldError> {
        if !(3..(1u64 << 32)).contains(&modulus) || !is_prime_u32(modulus) {
            return Err(FieldError::InvalidModulus(modulus));
        }
        Ok(Self { modulus })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Reduces an arbitrary `u64` into the field.
    #[inline]
    pub fn elem(&self, v: u64) -> FieldElement {
        FieldElement(v % self.modulus)
    }

    /// Reduces a signed integer, i.e. `v mod q` with the result in `[0, q)`.
    #[inline]
    pub fn elem_i128(&self, v: i128) -> FieldElement {
        FieldElement(v.rem_euclid(self.modulus as i128) as u64)
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 + b.0;
        FieldElement(if s >= self.modulus { s - self.modulus } else { s })
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(a.0 - b.0)
        } else {
            FieldElement(self.modulus - b.0 + a.0)
        }
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.modulus - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement((a.0 * b.0) % self.modulus)
    }

    pub fn pow(&self, base: FieldElement, mut exp: u64) -> FieldElement {
        let mut acc = FieldElement::ONE;
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat: `a^(q-2)`.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.modulus - 2))
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.gen_range(0..self.modulus))
    }

    pub fn random_vector<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> FieldVector {
        (0..len).map(|_| self.random(rng)).collect()
    }

    fn check_len(a: &[FieldElement], b: &[FieldElement]) -> Result<(), FieldError> {
        if a.len() != b.len() {
            return Err(FieldError::DimensionMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
        Ok(())
    }

    pub fn add_vec(&self, a: &[FieldElement], b: &[FieldElement]) -> Result<FieldVector, FieldError> {
        Self::check_len(a, b)?;
        Ok(a.iter().zip(b).map(|(&x, &y)| self.add(x, y)).collect())
    }

    pub fn sub_vec(&self, a: &[FieldElement], b: &[FieldElement]) -> Result<FieldVector, FieldError> {
        Self::check_len(a, b)?;
        Ok(a.iter().zip(b).map(|(&x, &y)| self.sub(x, y)).collect())
    }

    pub fn scale_vec(&self, w: FieldElement, v: &[FieldElement]) -> FieldVector {
        v.iter().map(|&x| self.mul(w, x)).collect()
    }

    /// `acc += w * v`, elementwise.
    pub fn axpy(&self, acc: &mut [FieldElement], w: FieldElement, v: &[FieldElement]) -> Result<(), FieldError> {
        Self::check_len(acc, v)?;
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = self.add(*a, self.mul(w, x));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f11() -> PrimeField {
        PrimeField::new(11).unwrap()
    }

    #[test]
    fn rejects_bad_moduli() {
        for q in [0u64, 1, 2, 4, 15, 1 << 32, DEFAULT_MODULUS + 2] {
            assert!(PrimeField::new(q).is_err(), "{q}");
        }
        assert!(PrimeField::new(DEFAULT_MODULUS).is_ok());
        assert!(PrimeField::new(16_777_213).is_ok());
    }

    #[test]
    fn add_examples() {
        let f = PrimeField::default();
        let x = f.elem(123_456);
        assert_eq!(f.add(FieldElement::ZERO, x), x);
        assert_eq!(f.add(f.elem(DEFAULT_MODULUS - 1), FieldElement::ONE), FieldElement::ZERO);
        let g = f11();
        assert_eq!(g.add(g.elem(7), g.elem(8)).value(), 4);
    }

    #[test]
    fn mul_examples() {
        let f = PrimeField::default();
        let x = f.elem(987_654_321);
        assert_eq!(f.mul(FieldElement::ONE, x), x);
        let m1 = f.elem(DEFAULT_MODULUS - 1);
        assert_eq!(f.mul(m1, m1), FieldElement::ONE);
        let g = f11();
        assert_eq!(g.mul(g.elem(7), g.elem(8)).value(), 1);
    }

    #[test]
    fn inv_examples() {
        let g = f11();
        assert_eq!(g.inv(FieldElement::ONE).unwrap(), FieldElement::ONE);
        assert_eq!(g.inv(g.elem(2)).unwrap().value(), 6);
        assert_eq!(g.inv(FieldElement::ZERO), Err(FieldError::ZeroInverse));
    }

    /// Extended Euclid, independent of the Fermat route used by `inv`.
    fn egcd_inverse(a: i64, q: i64) -> i64 {
        let (mut r0, mut r1, mut s0, mut s1) = (q, a, 0i64, 1i64);
        while r1 != 0 {
            let k = r0 / r1;
            (r0, r1) = (r1, r0 - k * r1);
            (s0, s1) = (s1, s0 - k * s1);
        }
        s0.rem_euclid(q)
    }

    #[test]
    fn inv_exhaustive_small_field() {
        let g = f11();
        for a in 1..11u64 {
            let inv = g.inv(g.elem(a)).unwrap();
            assert_eq!(g.mul(g.elem(a), inv), FieldElement::ONE);
            assert_eq!(inv.value() as i64, egcd_inverse(a as i64, 11));
        }
    }

    #[test]
    fn sub_and_neg() {
        let g = f11();
        assert_eq!(g.sub(g.elem(3), g.elem(5)).value(), 9);
        assert_eq!(g.neg(g.elem(3)).value(), 8);
        assert_eq!(g.neg(FieldElement::ZERO), FieldElement::ZERO);
    }

    #[test]
    fn vector_length_mismatch() {
        let g = f11();
        let a = FieldVector::zeros(2);
        let b = FieldVector::zeros(3);
        assert!(matches!(
            g.add_vec(&a, &b),
            Err(FieldError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    proptest! {
        #[test]
        fn field_axioms(a in 0u64..DEFAULT_MODULUS, b in 0u64..DEFAULT_MODULUS, c in 0u64..DEFAULT_MODULUS) {
            let f = PrimeField::default();
            let (a, b, c) = (f.elem(a), f.elem(b), f.elem(c));
            prop_assert_eq!(f.add(a, b), f.add(b, a));
            prop_assert_eq!(f.mul(a, b), f.mul(b, a));
            prop_assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
            prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
            prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
            prop_assert_eq!(f.sub(f.add(a, b), b), a);
            prop_assert_eq!(f.add(a, f.neg(a)), FieldElement::ZERO);
            // u128 reference for the reduction
            prop_assert_eq!(f.mul(a, b).value() as u128, (a.value() as u128 * b.value() as u128) % DEFAULT_MODULUS as u128);
            if !a.is_zero() {
                prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), FieldElement::ONE);
            }
        }
    }
}
