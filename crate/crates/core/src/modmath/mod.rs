//! Modular arithmetic over prime fields and safe-prime groups, plus the
//! ElGamal-style multiplicatively homomorphic layer every protocol in this
//! crate is built on.
//!
//! Values are [`num_bigint::BigUint`] residues wrapped in newtypes that carry
//! their range invariant: [`FieldElement`] lives in `[0, p)` and [`Exponent`]
//! in `[0, q)`. The modulus itself travels separately in a [`PrimeField`] or a
//! [`GroupParams`], so one process can work with several fields at once.

mod elgamal;
mod group;
pub mod prime;

pub use elgamal::{encrypt, mult_layer, rerandomize, strip_layer, Ciphertext, KeyPair};
pub use group::{gen_group, GroupParams, DEFAULT_GROUP_SEED};

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A residue modulo some prime `p`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldElement(BigUint);

/// A residue modulo the subgroup order `q`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exponent(BigUint);

impl FieldElement {
    /// Wraps a value already known to be reduced.
    pub(crate) fn from_reduced(v: BigUint) -> Self {
        FieldElement(v)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn into_value(self) -> BigUint {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }
}

impl Exponent {
    pub(crate) fn from_reduced(v: BigUint) -> Self {
        Exponent(v)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn zero() -> Self {
        Exponent(BigUint::zero())
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for FieldElement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_str_radix(10))
    }
}

impl<'de> Deserialize<'de> for FieldElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_decimal(&s)
            .map(FieldElement)
            .map_err(serde::de::Error::custom)
    }
}

/// Parses a non-negative decimal integer.
pub fn parse_decimal(s: &str) -> Result<BigUint> {
    BigUint::parse_bytes(s.trim().as_bytes(), 10)
        .ok_or_else(|| Error::Parse(format!("not a decimal integer: {s:?}")))
}

static MODEXPS: AtomicU64 = AtomicU64::new(0);

/// `base^e mod p`.
pub fn modexp(base: &BigUint, e: &BigUint, p: &BigUint) -> BigUint {
    MODEXPS.fetch_add(1, Ordering::Relaxed);
    base.modpow(e, p)
}

/// Modular exponentiations performed by this process so far.
pub fn modexp_count() -> u64 {
    MODEXPS.load(Ordering::Relaxed)
}

/// Multiplicative inverse of `a` modulo `p` by the extended Euclidean
/// algorithm. Fails when `gcd(a, p) != 1`.
pub fn inverse(a: &BigUint, p: &BigUint) -> Result<BigUint> {
    let m = BigInt::from_biguint(Sign::Plus, p.clone());
    let a = BigInt::from_biguint(Sign::Plus, a % p);
    let egcd = a.extended_gcd(&m);
    if !egcd.gcd.is_one() {
        return Err(Error::NonInvertible);
    }
    Ok(egcd.x.mod_floor(&m).to_biguint().expect("mod_floor is non-negative"))
}

/// The prime field `Z_p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimeField {
    modulus: BigUint,
    width: usize,
}

impl PrimeField {
    /// Primality of `p` is the caller's responsibility; [`GroupParams`]
    /// validates it.
    pub fn new(p: BigUint) -> Self {
        let width = (p.bits() as usize).div_ceil(8);
        PrimeField { modulus: p, width }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Byte width of a serialized element, `⌈bits(p)/8⌉`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement(BigUint::zero())
    }

    pub fn one(&self) -> FieldElement {
        FieldElement(BigUint::one())
    }

    pub fn elem(&self, v: impl Into<BigUint>) -> FieldElement {
        FieldElement(v.into() % &self.modulus)
    }

    pub fn from_u64(&self, v: u64) -> FieldElement {
        self.elem(BigUint::from(v))
    }

    /// Checks an existing value against `[0, p)` instead of reducing it.
    pub fn checked(&self, v: BigUint) -> Result<FieldElement> {
        if v >= self.modulus {
            return Err(Error::Domain(format!("{v} is not below the modulus")));
        }
        Ok(FieldElement(v))
    }

    pub fn add(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        let s = &a.0 + &b.0;
        if s >= self.modulus {
            FieldElement(s - &self.modulus)
        } else {
            FieldElement(s)
        }
    }

    pub fn sub(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(&a.0 - &b.0)
        } else {
            FieldElement(&self.modulus - &b.0 + &a.0)
        }
    }

    pub fn neg(&self, a: &FieldElement) -> FieldElement {
        if a.0.is_zero() {
            a.clone()
        } else {
            FieldElement(&self.modulus - &a.0)
        }
    }

    pub fn mul(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        FieldElement((&a.0 * &b.0) % &self.modulus)
    }

    pub fn pow(&self, base: &FieldElement, e: &BigUint) -> FieldElement {
        FieldElement(modexp(&base.0, e, &self.modulus))
    }

    pub fn inv(&self, a: &FieldElement) -> Result<FieldElement> {
        inverse(&a.0, &self.modulus).map(FieldElement)
    }

    pub fn sum<'a>(&self, items: impl IntoIterator<Item = &'a FieldElement>) -> FieldElement {
        items
            .into_iter()
            .fold(self.zero(), |acc, x| self.add(&acc, x))
    }

    pub fn random(&self, rng: &mut impl RngCore) -> FieldElement {
        FieldElement(rng.gen_biguint_below(&self.modulus))
    }

    /// Uniform over `Z*_p`.
    pub fn random_nonzero(&self, rng: &mut impl RngCore) -> FieldElement {
        let upper = &self.modulus - 1u32;
        FieldElement(rng.gen_biguint_below(&upper) + 1u32)
    }

    /// Encodes a signed integer by `x mod p`. Requires `|x| < p/2`.
    pub fn encode_signed(&self, x: &BigInt) -> Result<FieldElement> {
        let half = BigInt::from_biguint(Sign::Plus, &self.modulus >> 1);
        if x.abs() > half {
            return Err(Error::Overflow(format!(
                "|{x}| exceeds (p-1)/2 for a {}-bit modulus",
                self.modulus.bits()
            )));
        }
        let m = BigInt::from_biguint(Sign::Plus, self.modulus.clone());
        Ok(FieldElement(
            x.mod_floor(&m).to_biguint().expect("mod_floor is non-negative"),
        ))
    }

    pub fn encode_i128(&self, x: i128) -> Result<FieldElement> {
        self.encode_signed(&BigInt::from(x))
    }

    /// Centered lift: residues above `(p-1)/2` map to negatives.
    pub fn decode_signed(&self, y: &FieldElement) -> BigInt {
        let half = &self.modulus >> 1;
        if y.0 > half {
            BigInt::from_biguint(Sign::Plus, y.0.clone())
                - BigInt::from_biguint(Sign::Plus, self.modulus.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, y.0.clone())
        }
    }

    pub fn decode_i128(&self, y: &FieldElement) -> Result<i128> {
        let v = self.decode_signed(y);
        i128::try_from(&v).map_err(|_| Error::Overflow(format!("{v} does not fit in i128")))
    }

    /// Fixed-width big-endian encoding.
    pub fn to_bytes(&self, a: &FieldElement) -> Vec<u8> {
        let raw = a.0.to_bytes_be();
        let mut out = vec![0u8; self.width];
        out[self.width - raw.len()..].copy_from_slice(&raw);
        out
    }

    pub fn write_bytes(&self, a: &FieldElement, out: &mut Vec<u8>) {
        let raw = a.0.to_bytes_be();
        out.extend(std::iter::repeat_n(0u8, self.width - raw.len()));
        out.extend_from_slice(&raw);
    }

    pub fn from_bytes(&self, bytes: &[u8]) -> Result<FieldElement> {
        if bytes.len() != self.width {
            return Err(Error::Malformed(format!(
                "field element needs {} bytes, got {}",
                self.width,
                bytes.len()
            )));
        }
        self.checked(BigUint::from_bytes_be(bytes))
            .map_err(|e| Error::Malformed(e.to_string()))
    }
}
