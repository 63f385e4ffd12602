use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Exponent, FieldElement, GroupParams};
use crate::error::{Error, Result};

/// `h = g^x mod p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    x: Exponent,
    h: FieldElement,
}

impl KeyPair {
    /// Secret exponent uniform in `[1, q)`.
    pub fn generate(params: &GroupParams, rng: &mut impl RngCore) -> Self {
        Self::from_secret(params, params.random_nonzero_exponent(rng))
    }

    pub fn from_secret(params: &GroupParams, x: Exponent) -> Self {
        let h = params.g_pow(&x);
        KeyPair { x, h }
    }

    pub fn secret(&self) -> &Exponent {
        &self.x
    }

    pub fn public(&self) -> &FieldElement {
        &self.h
    }
}

/// An ElGamal pair `(u, v) = (g^r, m · h^r)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ciphertext {
    pub u: FieldElement,
    pub v: FieldElement,
}

impl Ciphertext {
    /// Both components must be units of `Z_p`.
    pub fn new(u: FieldElement, v: FieldElement) -> Result<Self> {
        if u.is_zero() || v.is_zero() {
            return Err(Error::Malformed("zero ciphertext component".into()));
        }
        Ok(Ciphertext { u, v })
    }
}

/// `(g^r, m · h^r)`. The plaintext must lie in the order-`q` subgroup.
pub fn encrypt(
    params: &GroupParams,
    h: &FieldElement,
    m: &FieldElement,
    r: &Exponent,
) -> Result<Ciphertext> {
    params.require_member(m)?;
    let f = params.field();
    let u = params.g_pow(r);
    let v = f.mul(m, &f.pow(h, r.value()));
    Ok(Ciphertext { u, v })
}

/// Multiplies the plaintext by `factor` and re-randomizes under `h`:
/// `(u · g^r, v · factor · h^r)`.
pub fn mult_layer(
    ct: &Ciphertext,
    factor: &FieldElement,
    h: &FieldElement,
    r: &Exponent,
    params: &GroupParams,
) -> Result<Ciphertext> {
    params.require_member(factor)?;
    let f = params.field();
    let u = f.mul(&ct.u, &params.g_pow(r));
    let v = f.mul(&f.mul(&ct.v, factor), &f.pow(h, r.value()));
    Ok(Ciphertext { u, v })
}

/// Removes the key layer belonging to `x`: `v / u^x`. With a single layer
/// left this is full decryption.
pub fn strip_layer(ct: &Ciphertext, x: &Exponent, params: &GroupParams) -> FieldElement {
    let f = params.field();
    let mask = f.pow(&ct.u, x.value());
    let inv = f.inv(&mask).expect("u is a unit, so is u^x");
    f.mul(&ct.v, &inv)
}

/// Fresh randomness under `h` without touching the plaintext.
pub fn rerandomize(
    ct: &Ciphertext,
    h: &FieldElement,
    r: &Exponent,
    params: &GroupParams,
) -> Ciphertext {
    let f = params.field();
    Ciphertext {
        u: f.mul(&ct.u, &params.g_pow(r)),
        v: f.mul(&ct.v, &f.pow(h, r.value())),
    }
}
