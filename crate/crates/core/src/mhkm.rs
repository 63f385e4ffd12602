//! n-party multiplicatively homomorphic key dispensation.
//!
//! Party `n` ends with `a_n = a_1 · … · a_{n-1}`. The product is built by
//! chaining `n - 2` BTG sessions, top down:
//!
//! * Session 1: party `n-1` (role A) and relay `n-2` (role B) feed their
//!   factors, party `n` (role C) receives `a_n`.
//! * Session for party `j` (from `n-2` down to `2`): relay `j` (A) re-enters
//!   its value, party `j` (B) contributes `a_j^{-1}`, and relay `j-1` (C)
//!   receives `a'_{j-1} = a'_j / a_j`.
//! * The last relay is party 1 itself: `a_1 ← a'_1`.
//!
//! Unrolling gives `a'_j = a_1 · … · a_j`, hence the product relation.
//! Relays are distinct identities co-located with no factor holder.

use serde::Serialize;

use crate::btg::{btg_keygen, run_btg, BtgInputs, BtgKeys, BtgParties, SessionId};
use crate::error::{Error, Result};
use crate::modmath::{FieldElement, GroupParams, KeyPair};
use crate::net::{PartyId, Runtime};

/// Who plays each role of one chained session, and what A and B contribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainLink {
    pub parties: BtgParties,
    /// A re-enters the relay value produced by the previous link.
    pub a_from_previous: bool,
    /// B contributes the inverse of its own random factor.
    pub b_inverts: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhkmPlan {
    n: usize,
    chain: Vec<ChainLink>,
}

fn party(i: usize) -> PartyId {
    PartyId::keyholder(i as u16)
}

/// Relay `j`; relay 1 is party 1.
fn relay(j: usize) -> PartyId {
    if j == 1 {
        party(1)
    } else {
        PartyId::relay(j as u16)
    }
}

pub fn plan_chain(n: usize) -> Result<MhkmPlan> {
    if n < 3 {
        return Err(Error::Plan(format!("need at least 3 parties, got {n}")));
    }
    if n > u16::MAX as usize {
        return Err(Error::Plan(format!("{n} parties exceed the identifier space")));
    }
    let mut chain = vec![ChainLink {
        parties: BtgParties {
            a: party(n - 1),
            b: relay(n - 2),
            c: party(n),
        },
        a_from_previous: false,
        b_inverts: false,
    }];
    for j in (2..=n - 2).rev() {
        chain.push(ChainLink {
            parties: BtgParties {
                a: relay(j),
                b: party(j),
                c: relay(j - 1),
            },
            a_from_previous: true,
            b_inverts: true,
        });
    }
    Ok(MhkmPlan { n, chain })
}

impl MhkmPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn chain(&self) -> &[ChainLink] {
        &self.chain
    }

    /// Every identity the runtime must host: parties `1..=n` and relays
    /// `2..=n-2`.
    pub fn participants(&self) -> Vec<PartyId> {
        let mut out: Vec<PartyId> = (1..=self.n).map(party).collect();
        out.extend((2..=self.n.saturating_sub(2)).map(|j| PartyId::relay(j as u16)));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhkmResult {
    /// `a_1 … a_n`.
    pub shares: Vec<FieldElement>,
}

#[derive(Serialize)]
struct MhkmDoc<'a> {
    n: usize,
    shares: &'a [FieldElement],
}

impl MhkmResult {
    pub fn n(&self) -> usize {
        self.shares.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MhkmDoc {
            n: self.shares.len(),
            shares: &self.shares,
        })
        .expect("serializable")
    }
}

pub fn run_mhkm(plan: &MhkmPlan, rt: &mut Runtime, params: &GroupParams) -> Result<MhkmResult> {
    run_mhkm_with(plan, rt, params, None)
}

/// `forced` fixes `a_1 … a_{n-1}` (subgroup members); otherwise each party
/// samples its own factor.
pub fn run_mhkm_with(
    plan: &MhkmPlan,
    rt: &mut Runtime,
    params: &GroupParams,
    forced: Option<&[FieldElement]>,
) -> Result<MhkmResult> {
    let n = plan.n;
    if let Some(f) = forced {
        if f.len() != n - 1 {
            return Err(Error::Plan(format!("{} forced factors for {n} parties", f.len())));
        }
    }
    for p in plan.participants() {
        if !rt.contains(p) {
            return Err(Error::Routing(format!("{p} is not in the runtime")));
        }
    }

    // Published key material for every identity that acts as A or C.
    let mut keys: std::collections::HashMap<PartyId, KeyPair> = Default::default();
    for link in &plan.chain {
        for p in [link.parties.a, link.parties.c] {
            if let std::collections::hash_map::Entry::Vacant(e) = keys.entry(p) {
                let kp = btg_keygen(params, rt.rng(p)?);
                rt.annotate(p, "published mHKM public key")?;
                e.insert(kp);
            }
        }
    }

    let field = params.field();
    let mut shares: Vec<Option<FieldElement>> = vec![None; n + 1];
    let mut relay_value: Option<FieldElement> = None;

    for (index, link) in plan.chain.iter().enumerate() {
        let p = link.parties;
        let a_input = if link.a_from_previous {
            relay_value.clone()
        } else {
            forced.map(|f| f[n - 2].clone())
        };
        // B is party j for inverting links; for the first link B is relay n-2,
        // whose value is a_1·…·a_{n-2}, only forceable via the factors.
        let (b_input, b_factor) = if link.b_inverts {
            let j = p.b.index as usize;
            let a_j = match forced {
                Some(f) => f[j - 1].clone(),
                None => params.random_member(rt.rng(p.b)?),
            };
            (Some(field.inv(&a_j)?), Some((j, a_j)))
        } else if let Some(f) = forced {
            let prefix = f[..n - 2]
                .iter()
                .fold(field.one(), |acc, x| field.mul(&acc, x));
            (Some(prefix), None)
        } else {
            (None, None)
        };

        let btg_keys = BtgKeys {
            a: keys[&p.a].clone(),
            c: keys[&p.c].clone(),
        };
        let sid = SessionId(index as u128);
        let out = run_btg(
            rt,
            params,
            p,
            &btg_keys,
            sid,
            BtgInputs {
                a: a_input,
                b: b_input,
            },
        )
        .map_err(|e| Error::ChainAborted {
            index,
            source: Box::new(e),
        })?;

        if index == 0 {
            shares[n - 1] = Some(out.a.clone());
            shares[n] = Some(out.c.clone());
            if n == 3 {
                shares[1] = Some(out.b.clone());
            }
        }
        if let Some((j, a_j)) = b_factor {
            shares[j] = Some(a_j);
        }
        if p.c == party(1) {
            shares[1] = Some(out.c.clone());
        }
        // The first link's relay value is B's input; later links produce it at C.
        relay_value = Some(if index == 0 { out.b } else { out.c });
    }

    let shares: Vec<FieldElement> = shares
        .into_iter()
        .skip(1)
        .map(|s| s.expect("every party is assigned by the chain"))
        .collect();
    Ok(MhkmResult { shares })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::RuntimeConfig;

    fn rt_for(plan: &MhkmPlan, seed: &[u8]) -> Runtime {
        Runtime::new(&plan.participants(), seed, RuntimeConfig::default()).unwrap()
    }

    fn product(g: &GroupParams, xs: &[FieldElement]) -> FieldElement {
        xs.iter().fold(g.field().one(), |acc, x| g.field().mul(&acc, x))
    }

    #[test]
    fn plan_sizes() {
        assert_eq!(plan_chain(3).unwrap().chain().len(), 1);
        assert_eq!(plan_chain(5).unwrap().chain().len(), 3);
        assert_eq!(plan_chain(8).unwrap().chain().len(), 6);
        assert!(matches!(plan_chain(2), Err(Error::Plan(_))));
    }

    #[test]
    fn plan_wiring_for_five() {
        let plan = plan_chain(5).unwrap();
        let c = plan.chain();
        assert_eq!(c[0].parties.a, party(4));
        assert_eq!(c[0].parties.b, PartyId::relay(3));
        assert_eq!(c[0].parties.c, party(5));
        assert_eq!(c[1].parties.a, PartyId::relay(3));
        assert_eq!(c[1].parties.b, party(3));
        assert_eq!(c[1].parties.c, PartyId::relay(2));
        assert_eq!(c[2].parties.a, PartyId::relay(2));
        assert_eq!(c[2].parties.b, party(2));
        assert_eq!(c[2].parties.c, party(1));
        // Link 1 hands relay 3 from B to A of link 2; afterwards C feeds A.
        assert_eq!(c[0].parties.b, c[1].parties.a);
        for w in c[1..].windows(2) {
            assert_eq!(w[0].parties.c, w[1].parties.a);
        }
        assert_eq!(plan.participants().len(), 5 + 2);
    }

    #[test]
    fn forced_three_party_example() {
        let g = GroupParams::tiny();
        let f = g.field();
        let plan = plan_chain(3).unwrap();
        let mut rt = rt_for(&plan, b"m3");
        let forced = [f.from_u64(6), f.from_u64(4)];
        let res = run_mhkm_with(&plan, &mut rt, &g, Some(&forced)).unwrap();
        assert_eq!(res.shares, vec![f.from_u64(6), f.from_u64(4), f.from_u64(1)]);
        assert_eq!(res.to_json(), r#"{"n":3,"shares":["6","4","1"]}"#);
    }

    #[test]
    fn identity_chain() {
        let g = GroupParams::default_256();
        for n in [3, 4, 6] {
            let plan = plan_chain(n).unwrap();
            let mut rt = rt_for(&plan, b"ones");
            let ones = vec![g.field().one(); n - 1];
            let res = run_mhkm_with(&plan, &mut rt, &g, Some(&ones)).unwrap();
            assert!(res.shares.iter().all(|s| s.is_one()));
        }
    }

    #[test]
    fn forced_factors_are_kept() {
        let g = GroupParams::default_256();
        let plan = plan_chain(6).unwrap();
        let mut rt = rt_for(&plan, b"forced");
        let forced: Vec<_> = (2..7u32).map(|t| g.g_pow(&g.exponent(t))).collect();
        let res = run_mhkm_with(&plan, &mut rt, &g, Some(&forced)).unwrap();
        assert_eq!(&res.shares[..5], &forced[..]);
        assert_eq!(res.shares[5], product(&g, &forced));
    }

    #[test]
    fn random_chains_satisfy_the_product_relation() {
        let g = GroupParams::default_256();
        for n in [3, 4, 5, 8] {
            let plan = plan_chain(n).unwrap();
            for run in 0..5u8 {
                let mut rt = rt_for(&plan, &[n as u8, run]);
                let res = run_mhkm(&plan, &mut rt, &g).unwrap();
                assert_eq!(res.n(), n);
                assert_eq!(res.shares[n - 1], product(&g, &res.shares[..n - 1]));
            }
        }
    }

    #[test]
    fn no_view_holds_a_foreign_share() {
        let g = GroupParams::default_256();
        let plan = plan_chain(5).unwrap();
        let mut rt = rt_for(&plan, b"scan");
        let res = run_mhkm(&plan, &mut rt, &g).unwrap();
        for viewer in plan.participants() {
            let view = rt.transcript_view(viewer).unwrap();
            for (i, s) in res.shares.iter().enumerate() {
                if party(i + 1) != viewer {
                    assert!(!view.contains_bytes(&g.field().to_bytes(s)), "{viewer} sees a_{}", i + 1);
                }
            }
        }
    }

    #[test]
    fn missing_participant_is_rejected() {
        let g = GroupParams::tiny();
        let plan = plan_chain(5).unwrap();
        let mut rt = Runtime::new(&[party(1), party(2)], b"x", RuntimeConfig::default()).unwrap();
        assert!(matches!(run_mhkm(&plan, &mut rt, &g), Err(Error::Routing(_))));
    }
}
