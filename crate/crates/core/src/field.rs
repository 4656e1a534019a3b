//! Scalar field of the BN254 pairing curve.
//!
//! Every gadget and witness generator works over this field. Signed
//! fixed-point values are embedded with the usual midpoint convention:
//! elements above `(p - 1) / 2` read back as negative integers.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use ark_bn254::Fr;
use ark_ff::{BigInteger, BigInteger256, Field, PrimeField, Zero, One};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("byte string is not a canonical field element")]
    NonCanonical,
}

/// Number of bits in the field modulus.
pub const MODULUS_BITS: u32 = Fr::MODULUS_BIT_SIZE;

/// Length of the canonical little-endian encoding.
pub const ENCODED_LEN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FieldScalar(Fr);

impl FieldScalar {
    pub fn zero() -> Self {
        Self(Fr::zero())
    }

    pub fn one() -> Self {
        Self(Fr::one())
    }

    pub fn from_u64(v: u64) -> Self {
        Self(Fr::from(v))
    }

    pub fn from_i128(v: i128) -> Self {
        let magnitude = Fr::from(v.unsigned_abs());
        if v < 0 {
            Self(-magnitude)
        } else {
            Self(magnitude)
        }
    }

    /// `2^k` as a field element.
    pub fn pow2(k: u32) -> Self {
        Self(Fr::from(2u64).pow([k as u64]))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn inverse(&self) -> Result<Self, FieldError> {
        self.0.inverse().map(Self).ok_or(FieldError::ZeroInverse)
    }

    /// Reads the element as a signed integer, treating values above the
    /// midpoint as negative. Returns `None` when the magnitude does not fit
    /// in an `i128`.
    pub fn to_i128(&self) -> Option<i128> {
        let big = self.0.into_bigint();
        if big <= Fr::MODULUS_MINUS_ONE_DIV_TWO {
            limbs_to_u128(&big).and_then(|v| i128::try_from(v).ok())
        } else {
            let neg = (-self.0).into_bigint();
            limbs_to_u128(&neg).and_then(|v| i128::try_from(v).ok()).map(|v| -v)
        }
    }

    pub fn to_le_bytes(&self) -> [u8; ENCODED_LEN] {
        let mut out = [0u8; ENCODED_LEN];
        out.copy_from_slice(&self.0.into_bigint().to_bytes_le());
        out
    }

    /// Decodes a canonical little-endian encoding, rejecting values `>= p`.
    pub fn from_le_bytes(bytes: &[u8; ENCODED_LEN]) -> Result<Self, FieldError> {
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            let mut chunk = [0u8; 8];
            chunk.copy_from_slice(&bytes[i * 8..(i + 1) * 8]);
            *limb = u64::from_le_bytes(chunk);
        }
        Fr::from_bigint(BigInteger256::new(limbs))
            .map(Self)
            .ok_or(FieldError::NonCanonical)
    }

    pub fn inner(&self) -> Fr {
        self.0
    }
}

fn limbs_to_u128(big: &BigInteger256) -> Option<u128> {
    let limbs = big.as_ref();
    if limbs[2] != 0 || limbs[3] != 0 {
        return None;
    }
    Some((limbs[1] as u128) << 64 | limbs[0] as u128)
}

impl From<Fr> for FieldScalar {
    fn from(value: Fr) -> Self {
        Self(value)
    }
}

impl From<bool> for FieldScalar {
    fn from(value: bool) -> Self {
        if value {
            Self::one()
        } else {
            Self::zero()
        }
    }
}

impl fmt::Debug for FieldScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_i128() {
            Some(v) => write!(f, "Fs({v})"),
            None => write!(f, "Fs({})", self.0.into_bigint()),
        }
    }
}

impl fmt::Display for FieldScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.into_bigint())
    }
}

impl Add for FieldScalar {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl AddAssign for FieldScalar {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sub for FieldScalar {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl SubAssign for FieldScalar {
    fn sub_assign(&mut self, rhs: Self) {
        self.0 -= rhs.0;
    }
}

impl Mul for FieldScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl MulAssign for FieldScalar {
    fn mul_assign(&mut self, rhs: Self) {
        self.0 *= rhs.0;
    }
}

impl Neg for FieldScalar {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}
