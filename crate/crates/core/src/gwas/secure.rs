//! The secure halves of the matching pipeline.

use num_bigint::{BigInt, BigUint};
use rand::Rng;
use rayon::prelude::*;

use super::pipeline::{AcceptRule, Control, FilterOutcome, PipelineConfig};
use super::{CaseBasis, Lambda};
use crate::error::{Error, Result};
use crate::fixpt::{FixedPoint, FixedPointShare};
use crate::modmath::FieldElement;
use crate::net::{PartyId, Runtime};
use crate::spdz::{Engine, SharedValue};

/// `U`, entry by entry, shared by its owner as fixed-point values.
#[derive(Clone, Debug)]
pub struct SharedBasis {
    dim: usize,
    rank: usize,
    entries: Vec<FixedPointShare>,
}

impl SharedBasis {
    pub fn share(fp: &FixedPoint, engine: &Engine, rt: &mut Runtime, owner: PartyId, basis: &CaseBasis) -> Result<Self> {
        let entries = fp.share_inputs(engine, rt, owner, basis.entries())?;
        Ok(SharedBasis {
            dim: basis.dim(),
            rank: basis.rank(),
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, i: usize, j: usize) -> &FixedPointShare {
        &self.entries[i * self.rank + j]
    }
}

/// Shares of `‖z‖² - ‖Uᵀz‖²`.
///
/// The raw products for `‖z‖²` and every `(Uᵀz)_j` go through one
/// multiplication round; each sum is truncated once.
pub fn residual_norm_sq(
    fp: &FixedPoint,
    engine: &mut Engine,
    rt: &mut Runtime,
    basis: &SharedBasis,
    z: &[FixedPointShare],
) -> Result<FixedPointShare> {
    if z.len() != basis.dim {
        return Err(Error::Shape(format!("vector of {} for basis of {}", z.len(), basis.dim)));
    }
    let (d, r) = (basis.dim, basis.rank);
    let mut pairs: Vec<(&SharedValue, &SharedValue)> = z.iter().map(|zi| (zi.shared(), zi.shared())).collect();
    for j in 0..r {
        for (i, zi) in z.iter().enumerate() {
            pairs.push((basis.get(i, j).shared(), zi.shared()));
        }
    }
    let prods = engine.mul_many(rt, &pairs)?;
    let mut sums = Vec::with_capacity(r + 1);
    for chunk in prods.chunks(d) {
        sums.push(engine.sum(chunk)?);
    }
    let refs: Vec<&SharedValue> = sums.iter().collect();
    let p = fp.params();
    let scaled = fp.trunc_many(engine, rt, &refs, p.k() + p.f(), p.f())?;
    let (zz, w) = scaled.split_first().expect("at least one sum");
    let w: Vec<FixedPointShare> = w.iter().cloned().map(FixedPointShare::from_shared).collect();
    let sq_pairs: Vec<(&FixedPointShare, &FixedPointShare)> = w.iter().map(|x| (x, x)).collect();
    let squares = fp.fp_mult_many(engine, rt, &sq_pairs)?;
    let proj = engine.sum(squares.iter().map(|s| s.shared()))?;
    Ok(FixedPointShare::from_shared(engine.sub(zz, &proj)?))
}

/// Largest blind either owner contributes.
const BLIND_BITS: u32 = 32;

/// `R·num` and `R·den` as opened by `O_ctrl`, with `R = r_case · r_ctrl`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlindedLambda {
    pub num: BigInt,
    pub den: BigInt,
}

impl BlindedLambda {
    pub fn lambda(&self) -> Result<Lambda> {
        Lambda::from_parts(self.num.clone(), self.den.clone())
    }
}

/// Fails unless `|R·num|` and `|R·den|` stay below `p/2` for every blind.
fn check_blind_bound(engine: &Engine, case: [u64; 3], ctrl: [u64; 3]) -> Result<()> {
    let total: BigUint = case.iter().chain(&ctrl).map(|&v| BigUint::from(v)).sum();
    let bound = (BigUint::from(4u32) * &total * &total) << (2 * BLIND_BITS);
    if bound >= engine.field().modulus() >> 1 {
        return Err(Error::Overflow(format!(
            "{total} genotypes are too many to blind in a {}-bit field",
            engine.field().modulus().bits()
        )));
    }
    Ok(())
}

/// Each owner shares its own tallies; the blinded numerator and
/// denominator open to `ctrl` only.
pub fn secure_inflation_terms(
    engine: &mut Engine,
    rt: &mut Runtime,
    case_owner: PartyId,
    ctrl_owner: PartyId,
    case: [u64; 3],
    ctrl: [u64; 3],
) -> Result<BlindedLambda> {
    check_blind_bound(engine, case, ctrl)?;
    let f = engine.field().clone();
    let mut inputs = Vec::with_capacity(2);
    for (owner, counts) in [(case_owner, case), (ctrl_owner, ctrl)] {
        let blind = rt.rng(owner)?.gen_range(1..=1u64 << BLIND_BITS);
        let mut vals: Vec<FieldElement> = counts.iter().map(|&c| f.from_u64(c)).collect();
        vals.push(f.from_u64(blind));
        inputs.push(engine.share_inputs(rt, owner, &vals)?);
    }
    let (r, s) = (&inputs[0], &inputs[1]);
    let n: Vec<SharedValue> = (0..3).map(|i| engine.add(&r[i], &s[i])).collect::<Result<_>>()?;
    let two = f.from_u64(2);
    let left = engine.add(&n[1], &engine.scale(&n[2], &two)?)?;
    let right = engine.add(&n[1], &engine.scale(&n[0], &two)?)?;
    let prods = engine.mul_many(rt, &[(&n[0], &n[2]), (&n[1], &n[1]), (&left, &right), (&r[3], &s[3])])?;
    let num = engine.sub(&engine.scale(&prods[0], &f.from_u64(4))?, &prods[1])?;
    let blind = &prods[3];
    let blinded = engine.mul_many(rt, &[(blind, &num), (blind, &prods[2])])?;
    let opened = engine.open_to(rt, &[&blinded[0], &blinded[1]], ctrl_owner)?;
    Ok(BlindedLambda {
        num: f.decode_signed(&opened[0]),
        den: f.decode_signed(&opened[1]),
    })
}

/// `λ` of the pooled table, revealed to `ctrl` only.
pub fn secure_inflation_factor(
    engine: &mut Engine,
    rt: &mut Runtime,
    case_owner: PartyId,
    ctrl_owner: PartyId,
    case: [u64; 3],
    ctrl: [u64; 3],
) -> Result<Lambda> {
    secure_inflation_terms(engine, rt, case_owner, ctrl_owner, case, ctrl)?.lambda()
}

/// Whether the residual of one control exceeds `τ²`, learned by all MPC
/// servers.
fn residual_above(
    fp: &FixedPoint,
    engine: &mut Engine,
    rt: &mut Runtime,
    basis: &SharedBasis,
    z: &[f64],
    tau_sq: &FieldElement,
) -> Result<bool> {
    let zs = fp.share_inputs(engine, rt, fp.ctrl_owner(), z)?;
    let res = residual_norm_sq(fp, engine, rt, basis, &zs)?;
    let diff = engine.sub(&engine.constant(tau_sq), res.shared())?;
    let bit = fp.ltz(engine, rt, &diff, fp.params().k())?;
    let opened = engine.open(rt, &bit)?;
    if opened.is_zero() {
        Ok(false)
    } else if opened.is_one() {
        Ok(true)
    } else {
        Err(Error::ProtocolState("comparison opened to a non-bit".into()))
    }
}

/// Screens every control against the shared basis, then checks `λ` over the
/// case tallies and the accepted controls' tallies. Residual checks run on
/// forked runtimes, `config.parallel_controls` at a time, and are folded
/// back in input order.
#[allow(clippy::too_many_arguments)]
pub fn filter_controls(
    fp: &FixedPoint,
    fp_engine: &mut Engine,
    lambda_engine: &mut Engine,
    rt: &mut Runtime,
    basis: &SharedBasis,
    case_counts: [u64; 3],
    controls: &[Control],
    config: &PipelineConfig,
) -> Result<FilterOutcome> {
    let tau_sq = config.tau_sq_encoded()?;
    let jobs: Vec<(Runtime, Engine)> = (0..controls.len())
        .map(|i| (rt.fork(&format!("control {i}")), fp_engine.fork(i as u32)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallel_controls.max(1))
        .build()
        .map_err(|e| Error::Setup(e.to_string()))?;
    let results: Vec<Result<(bool, Runtime, Engine)>> = pool.install(|| {
        jobs.into_par_iter()
            .zip(controls.par_iter())
            .map(|((mut crt, mut ceng), c)| {
                let above = residual_above(fp, &mut ceng, &mut crt, basis, &c.z, &tau_sq)?;
                Ok((above, crt, ceng))
            })
            .collect()
    });
    let mut decisions = Vec::with_capacity(controls.len());
    for r in results {
        let (above, crt, ceng) = r?;
        rt.absorb(crt);
        fp_engine.absorb(ceng)?;
        decisions.push(match config.accept_rule {
            AcceptRule::WithinTau => !above,
            AcceptRule::BeyondTau => above,
        });
    }

    let mut pooled = [0u64; 3];
    let mut any = false;
    for (c, keep) in controls.iter().zip(&decisions) {
        if *keep {
            any = true;
            for (p, v) in pooled.iter_mut().zip(c.counts) {
                *p += v;
            }
        }
    }
    let lambda = if any {
        Some(secure_inflation_factor(
            lambda_engine,
            rt,
            fp.case_owner(),
            fp.ctrl_owner(),
            case_counts,
            pooled,
        )?)
    } else {
        None
    };
    Ok(FilterOutcome { decisions, lambda })
}
