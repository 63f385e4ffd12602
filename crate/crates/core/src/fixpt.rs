//! Fixed-point `Q<k,f>` arithmetic on shares.
//!
//! A rational `x̃` is carried as the signed integer `x̄ = round(x̃ · 2^f)`
//! encoded in `Z_p`. Products carry `2f` fraction bits and are brought back
//! with [`FixedPoint::trunc_many`], a probabilistic right shift whose only
//! randomness comes from the two data owners: `O_case` masks the low `m`
//! bits and `O_ctrl` adds `κ` statistical bits above them.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modmath::prime::{is_probable_prime, smallest_safe_prime_above_2_96};
use crate::modmath::{parse_decimal, FieldElement, PrimeField};
use crate::net::{PartyId, Runtime};
use crate::spdz::{Engine, SharedValue};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPointParams {
    k: u32,
    f: u32,
    kappa: u32,
    field: PrimeField,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    k: u32,
    f: u32,
    kappa: u32,
    p: String,
}

impl FixedPointParams {
    /// Requires `k > 0`, `f ≤ k`, `p` prime and `p > 2^(κ+k+1)`.
    pub fn new(k: u32, f: u32, kappa: u32, p: BigUint) -> Result<Self> {
        if k == 0 || f > k {
            return Err(Error::Parameter(format!("need k > 0 and 0 ≤ f ≤ k, got k={k}, f={f}")));
        }
        if p.bits() <= (kappa + k + 1) as u64 {
            return Err(Error::Parameter(format!(
                "p has {} bits, need p > 2^{}",
                p.bits(),
                kappa + k + 1
            )));
        }
        if !is_probable_prime(&p) {
            return Err(Error::Parameter("p is not prime".into()));
        }
        Ok(FixedPointParams {
            k,
            f,
            kappa,
            field: PrimeField::new(p),
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn f(&self) -> u32 {
        self.f
    }

    /// Integer bits `e = k - f`.
    pub fn e(&self) -> u32 {
        self.k - self.f
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    pub fn p(&self) -> &BigUint {
        self.field.modulus()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ParamsDoc {
            k: self.k,
            f: self.f,
            kappa: self.kappa,
            p: self.p().to_str_radix(10),
        })
        .expect("serializable")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_value(v)?;
        Self::new(doc.k, doc.f, doc.kappa, parse_decimal(&doc.p)?)
    }

    /// Encodes a rational into the field.
    pub fn encode(&self, x: f64) -> Result<FieldElement> {
        self.field.encode_i128(fp_encode(x, self)?)
    }

    pub fn decode(&self, y: &FieldElement) -> Result<f64> {
        Ok(fp_decode(self.field.decode_i128(y)?, self))
    }
}

impl Default for FixedPointParams {
    /// `k = 32`, `f = 16`, `κ = 40` over the smallest safe prime above `2^96`.
    fn default() -> Self {
        Self::new(32, 16, 40, smallest_safe_prime_above_2_96()).expect("valid defaults")
    }
}

/// `x̄ = round(x · 2^f)`, requiring `|x| < 2^(e-1)`.
pub fn fp_encode(x: f64, params: &FixedPointParams) -> Result<i128> {
    let bound = 2f64.powi(params.e() as i32 - 1);
    if !x.is_finite() || x.abs() >= bound {
        return Err(Error::Range(format!("{x} outside (-{bound}, {bound})")));
    }
    Ok((x * 2f64.powi(params.f as i32)).round() as i128)
}

/// `x̄ · 2^-f`.
pub fn fp_decode(x_bar: i128, params: &FixedPointParams) -> f64 {
    x_bar as f64 / 2f64.powi(params.f as i32)
}

/// A share of a fixed-point value with `f` fraction bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPointShare(SharedValue);

impl FixedPointShare {
    pub fn from_shared(v: SharedValue) -> Self {
        FixedPointShare(v)
    }

    pub fn shared(&self) -> &SharedValue {
        &self.0
    }

    pub fn into_shared(self) -> SharedValue {
        self.0
    }
}

/// The masks and the opened value of one truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncTrace {
    pub r_low: BigUint,
    pub r_high: BigUint,
    pub c: BigUint,
    /// The public offset added before masking.
    pub offset: BigUint,
}

/// The fixed-point protocols, bound to the two mask providers.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    params: FixedPointParams,
    case: PartyId,
    ctrl: PartyId,
}

impl FixedPoint {
    /// `O_case = MPC_1`, `O_ctrl = MPC_2`.
    pub fn new(params: FixedPointParams) -> Self {
        Self::with_owners(params, PartyId::mpc(1), PartyId::mpc(2))
    }

    pub fn with_owners(params: FixedPointParams, case: PartyId, ctrl: PartyId) -> Self {
        FixedPoint { params, case, ctrl }
    }

    pub fn params(&self) -> &FixedPointParams {
        &self.params
    }

    /// `O_case`.
    pub fn case_owner(&self) -> PartyId {
        self.case
    }

    /// `O_ctrl`.
    pub fn ctrl_owner(&self) -> PartyId {
        self.ctrl
    }

    fn field(&self) -> &PrimeField {
        &self.params.field
    }

    /// `owner` shares its own fixed-point inputs.
    pub fn share_inputs(
        &self,
        engine: &Engine,
        rt: &mut Runtime,
        owner: PartyId,
        xs: &[f64],
    ) -> Result<Vec<FixedPointShare>> {
        let enc: Vec<FieldElement> = xs.iter().map(|x| self.params.encode(*x)).collect::<Result<_>>()?;
        Ok(engine
            .share_inputs(rt, owner, &enc)?
            .into_iter()
            .map(FixedPointShare)
            .collect())
    }

    /// Opens and decodes.
    pub fn open(&self, engine: &mut Engine, rt: &mut Runtime, xs: &[&FixedPointShare]) -> Result<Vec<f64>> {
        let refs: Vec<&SharedValue> = xs.iter().map(|x| &x.0).collect();
        engine
            .open_many(rt, &refs)?
            .iter()
            .map(|v| self.params.decode(v))
            .collect()
    }

    fn check_trunc(&self, k_bits: u32, m: u32) -> Result<()> {
        if m == 0 || m > k_bits {
            return Err(Error::Parameter(format!("shift {m} outside [1, {k_bits}]")));
        }
        if self.params.p().bits() <= (self.params.kappa + k_bits + 1) as u64 {
            return Err(Error::Parameter(format!(
                "p too small for {k_bits}-bit inputs at κ = {}",
                self.params.kappa
            )));
        }
        Ok(())
    }

    /// `⌊z̄ / 2^m⌋ + u`, `u ∈ {0, 1}`, for every `z̄` with `|z̄| < 2^(K-1)`.
    pub fn trunc_many(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        zs: &[&SharedValue],
        k_bits: u32,
        m: u32,
    ) -> Result<Vec<SharedValue>> {
        Ok(self.trunc_traced(engine, rt, zs, k_bits, m)?.0)
    }

    pub fn trunc(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        z: &SharedValue,
        k_bits: u32,
        m: u32,
    ) -> Result<SharedValue> {
        Ok(self.trunc_many(engine, rt, &[z], k_bits, m)?.remove(0))
    }

    /// As [`FixedPoint::trunc_many`], also returning the masks and openings.
    pub fn trunc_traced(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        zs: &[&SharedValue],
        k_bits: u32,
        m: u32,
    ) -> Result<(Vec<SharedValue>, Vec<TruncTrace>)> {
        self.check_trunc(k_bits, m)?;
        let f = self.field().clone();
        let n = zs.len();
        let high_bits = (self.params.kappa + k_bits - m) as u64;

        let r_low: Vec<BigUint> = {
            let rng = rt.rng(self.case)?;
            (0..n).map(|_| rng.gen_biguint(m as u64)).collect()
        };
        let r_high: Vec<BigUint> = {
            let rng = rt.rng(self.ctrl)?;
            (0..n).map(|_| rng.gen_biguint(high_bits)).collect()
        };
        let low_in: Vec<FieldElement> = r_low.iter().map(|r| f.elem(r.clone())).collect();
        let high_in: Vec<FieldElement> = r_high.iter().map(|r| f.elem(r.clone())).collect();
        let sh_low = engine.share_inputs(rt, self.case, &low_in)?;
        let sh_high = engine.share_inputs(rt, self.ctrl, &high_in)?;

        // Offset keeps z' non-negative and is a multiple of 2^m.
        let offset = if m < k_bits {
            BigUint::one() << (k_bits - 1)
        } else {
            BigUint::one() << k_bits
        };
        let two_m = f.elem(BigUint::one() << m);
        let offset_fe = f.elem(offset.clone());
        let mut masked = Vec::with_capacity(n);
        for ((z, lo), hi) in zs.iter().zip(&sh_low).zip(&sh_high) {
            let r = engine.add(&engine.scale(hi, &two_m)?, lo)?;
            let z_prime = engine.add_const(z, &offset_fe)?;
            masked.push(engine.add(&z_prime, &r)?);
        }
        let refs: Vec<&SharedValue> = masked.iter().collect();
        let opened = engine.open_many(rt, &refs)?;

        let inv_two_m = f.inv(&two_m)?;
        let mask = (BigUint::one() << m) - 1u32;
        let mut out = Vec::with_capacity(n);
        let mut trace = Vec::with_capacity(n);
        for (k, c) in opened.into_iter().enumerate() {
            let c_low = f.elem(c.value() & &mask);
            let t = engine.add(zs[k], &sh_low[k])?;
            let t = engine.add_const(&t, &f.neg(&c_low))?;
            out.push(engine.scale(&t, &inv_two_m)?);
            trace.push(TruncTrace {
                r_low: r_low[k].clone(),
                r_high: r_high[k].clone(),
                c: c.into_value(),
                offset: offset.clone(),
            });
        }
        Ok((out, trace))
    }

    /// Products with `f` fraction bits; each product must fit `Q<k,f>`.
    pub fn fp_mult_many(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        pairs: &[(&FixedPointShare, &FixedPointShare)],
    ) -> Result<Vec<FixedPointShare>> {
        let raw: Vec<(&SharedValue, &SharedValue)> = pairs.iter().map(|(x, y)| (&x.0, &y.0)).collect();
        let prods = engine.mul_many(rt, &raw)?;
        let refs: Vec<&SharedValue> = prods.iter().collect();
        Ok(self
            .trunc_many(engine, rt, &refs, self.params.k + self.params.f, self.params.f)?
            .into_iter()
            .map(FixedPointShare)
            .collect())
    }

    pub fn fp_mult(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        x: &FixedPointShare,
        y: &FixedPointShare,
    ) -> Result<FixedPointShare> {
        Ok(self.fp_mult_many(engine, rt, &[(x, y)])?.remove(0))
    }

    /// Shares of `[x̄ < 0]` for `|x̄| < 2^(K-1)`.
    ///
    /// `O_case` and `O_ctrl` each share a positive mask in `[1, 2^(κ-1)]`;
    /// the leader learns only `ρ · x̄` with `ρ ∈ [2, 2^κ]`, reads its sign
    /// and shares the bit back.
    pub fn ltz_many(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        xs: &[&SharedValue],
        k_bits: u32,
    ) -> Result<Vec<SharedValue>> {
        if self.params.p().bits() <= (self.params.kappa + k_bits + 1) as u64 {
            return Err(Error::Parameter(format!(
                "p too small for {k_bits}-bit comparisons at κ = {}",
                self.params.kappa
            )));
        }
        let f = self.field().clone();
        let n = xs.len();
        let half = BigUint::one() << (self.params.kappa - 1);
        let mut masks = Vec::with_capacity(2);
        for owner in [self.case, self.ctrl] {
            let vals: Vec<FieldElement> = {
                let rng = rt.rng(owner)?;
                (0..n)
                    .map(|_| f.elem(rng.gen_biguint_below(&half) + 1u32))
                    .collect()
            };
            masks.push(engine.share_inputs(rt, owner, &vals)?);
        }
        let rho: Vec<SharedValue> = masks[0]
            .iter()
            .zip(&masks[1])
            .map(|(a, b)| engine.add(a, b))
            .collect::<Result<_>>()?;
        let pairs: Vec<(&SharedValue, &SharedValue)> = xs.iter().copied().zip(&rho).collect();
        let blinded = engine.mul_many(rt, &pairs)?;
        let refs: Vec<&SharedValue> = blinded.iter().collect();
        let leader = engine.leader();
        let opened = engine.open_to(rt, &refs, leader)?;
        let bits: Vec<FieldElement> = opened
            .iter()
            .map(|v| {
                if f.decode_signed(v) < BigInt::zero() {
                    f.one()
                } else {
                    f.zero()
                }
            })
            .collect();
        engine.share_inputs(rt, leader, &bits)
    }

    pub fn ltz(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        x: &SharedValue,
        k_bits: u32,
    ) -> Result<SharedValue> {
        Ok(self.ltz_many(engine, rt, &[x], k_bits)?.remove(0))
    }

    /// Sign read off the high part of the offset encoding,
    /// `-trunc(x̄, k-1)`. Kept for comparison with [`FixedPoint::ltz_many`]:
    /// for negative `x̄` the shift carries with probability
    /// `((x̄ + 2^(k-1)) mod 2^(k-1)) / 2^(k-1)`, so small negatives come out
    /// as non-negative almost always.
    pub fn ltz_by_truncation(
        &self,
        engine: &mut Engine,
        rt: &mut Runtime,
        xs: &[&SharedValue],
        k_bits: u32,
    ) -> Result<Vec<SharedValue>> {
        let shifted = self.trunc_many(engine, rt, xs, k_bits, k_bits - 1)?;
        shifted.iter().map(|s| engine.neg(s)).collect()
    }
}

/// Decodes an opened field element as a small signed integer.
pub fn decode_small(field: &PrimeField, v: &FieldElement) -> Result<i64> {
    field
        .decode_signed(v)
        .to_i64()
        .ok_or_else(|| Error::Overflow(format!("{v} does not fit in i64")))
}
