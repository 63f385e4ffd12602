use std::path::Path;

use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prime::{is_probable_prime, random_safe_prime};
use super::{modexp, parse_decimal, Exponent, FieldElement, PrimeField};
use crate::error::{Error, Result};

/// Seed of the shipped 256-bit group; `gen_group(256, DEFAULT_GROUP_SEED)`
/// reproduces it.
pub const DEFAULT_GROUP_SEED: &[u8] = b"spdz-gwas/default-group/v1";

const DEFAULT_256_P: &str =
    "68629168710592223901568783266807619061635982391836190139755804062668173066923";

/// A safe-prime group: `p = 2q + 1` with `g` generating the order-`q`
/// subgroup of quadratic residues.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
    field: PrimeField,
}

#[derive(Serialize, Deserialize)]
struct GroupDoc {
    p: String,
    q: String,
    g: String,
}

impl GroupParams {
    /// Validates every group invariant: `p` and `q` prime, `p = 2q + 1`,
    /// `g != 1` and `g^q = 1 mod p`.
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self> {
        if p != (&q << 1) + 1u32 {
            return Err(Error::InvalidGroup("p != 2q + 1".into()));
        }
        if !is_probable_prime(&q) || !is_probable_prime(&p) {
            return Err(Error::InvalidGroup("p or q is not prime".into()));
        }
        Self::with_generator(p, q, g)
    }

    fn with_generator(p: BigUint, q: BigUint, g: BigUint) -> Result<Self> {
        if g.is_one() || g >= p || g < BigUint::from(2u32) {
            return Err(Error::InvalidGroup(format!("bad generator {g}")));
        }
        if !modexp(&g, &q, &p).is_one() {
            return Err(Error::InvalidGroup("g does not have order q".into()));
        }
        let field = PrimeField::new(p.clone());
        Ok(GroupParams { p, q, g, field })
    }

    /// Group over a known safe prime with `g = 4`, which generates the
    /// quadratic residues for every safe prime `p > 5`.
    pub fn from_safe_prime(p: BigUint) -> Result<Self> {
        let q = &p >> 1;
        Self::new(p, q, BigUint::from(4u32))
    }

    /// `p = 23, q = 11, g = 4`, small enough for exhaustive tests.
    pub fn tiny() -> Self {
        Self::with_generator(23u32.into(), 11u32.into(), 4u32.into()).expect("valid tiny group")
    }

    /// The shipped 256-bit group.
    pub fn default_256() -> Self {
        let p = parse_decimal(DEFAULT_256_P).expect("valid constant");
        let q = &p >> 1;
        Self::with_generator(p, q, 4u32.into()).expect("valid default group")
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> FieldElement {
        FieldElement::from_reduced(self.g.clone())
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    /// `y^q = 1 mod p`. Zero is outside `Z*_p` and is rejected.
    pub fn is_subgroup_member(&self, y: &FieldElement) -> Result<bool> {
        if y.is_zero() || y.value() >= &self.p {
            return Err(Error::Domain(format!("{y} is not in Z*_p")));
        }
        Ok(modexp(y.value(), &self.q, &self.p).is_one())
    }

    pub(crate) fn require_member(&self, y: &FieldElement) -> Result<()> {
        match self.is_subgroup_member(y) {
            Ok(true) => Ok(()),
            _ => Err(Error::MessageSpace),
        }
    }

    /// `g^e mod p`.
    pub fn g_pow(&self, e: &Exponent) -> FieldElement {
        FieldElement::from_reduced(modexp(&self.g, e.value(), &self.p))
    }

    pub fn exponent(&self, v: impl Into<BigUint>) -> Exponent {
        Exponent::from_reduced(v.into() % &self.q)
    }

    /// Uniform in `[0, q)`.
    pub fn random_exponent(&self, rng: &mut impl RngCore) -> Exponent {
        Exponent::from_reduced(rng.gen_biguint_below(&self.q))
    }

    /// Uniform in `[1, q)`.
    pub fn random_nonzero_exponent(&self, rng: &mut impl RngCore) -> Exponent {
        let upper = &self.q - 1u32;
        Exponent::from_reduced(rng.gen_biguint_below(&upper) + 1u32)
    }

    /// Uniform over the order-`q` subgroup, as `g^t` for uniform `t`.
    pub fn random_member(&self, rng: &mut impl RngCore) -> FieldElement {
        let t = self.random_exponent(rng);
        self.g_pow(&t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GroupDoc {
            p: self.p.to_str_radix(10),
            q: self.q.to_str_radix(10),
            g: self.g.to_str_radix(10),
        })
        .expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GroupDoc = serde_json::from_str(s)?;
        Self::new(
            parse_decimal(&doc.p)?,
            parse_decimal(&doc.q)?,
            parse_decimal(&doc.g)?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Generates a `bit_length`-bit safe-prime group, deterministically from
/// `seed`.
pub fn gen_group(bit_length: u64, seed: &[u8]) -> Result<GroupParams> {
    if bit_length < 16 {
        return Err(Error::ParamGen(format!(
            "bit length {bit_length} is below the minimum of 16"
        )));
    }
    let mut rng = ChaCha20Rng::from_seed(Sha256::digest(seed).into());
    // Safe-prime density is roughly 1 / (bits^2 · ln^2 2); the bound leaves
    // ample room while still terminating.
    let budget = 400 * bit_length * bit_length;
    let p = random_safe_prime(bit_length, &mut rng, budget).ok_or_else(|| {
        Error::ParamGen(format!(
            "no {bit_length}-bit safe prime found in {budget} candidates"
        ))
    })?;
    GroupParams::from_safe_prime(p)
}
