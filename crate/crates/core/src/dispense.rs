//! Blind triple dispensation from the three BTGs to the MPC servers.
//!
//! The requesters `O_x` and `O_y` agree on a blind; each BTG scales its
//! component of a fresh triple by its part of the blind and splits the result
//! additively among `MPC_1 … MPC_m` over private channels.
//!
//! * Single randomness: `r = r_x · r_y` from both requesters; `O_x` hands
//!   `r` to the leader, and the components become `(r·a, r·b, r²·c)`.
//! * Two randomness: a nested BTG among `O_x`, `O_y` and the leader yields
//!   `r_c = r_a · r_b`; the components become `(r_a·a, r_b·b, r_c·c)`. The
//!   requesters also flip a shared sign so that `r_a`, `r_b` cover all of
//!   `Z*_p` rather than the residue subgroup.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::btg::{run_btg, BtgInputs, BtgKeys, BtgOutputs, BtgParties, SessionId};
use crate::error::{Error, Result};
use crate::modmath::{FieldElement, GroupParams, PrimeField};
use crate::net::{PartyId, Runtime, Tag};
use crate::spdz::{additive_split, BeaverTriple, SharedValue, TripleId, TripleSupplier};

pub use crate::spdz::{reconstruct, AdditiveShare};

/// Deterministic leader: the candidate maximizing `SHA-256(seed ‖ id)`.
pub fn select_committee_leader(candidates: &[PartyId], seed: &[u8]) -> Result<PartyId> {
    candidates
        .iter()
        .map(|p| {
            let mut h = Sha256::new();
            h.update(seed);
            h.update(p.to_string().as_bytes());
            let d: [u8; 32] = h.finalize().into();
            (d, *p)
        })
        .max()
        .map(|(_, p)| p)
        .ok_or(Error::EmptyCommittee)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlindMode {
    Single,
    Two,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlindFactor {
    Single(FieldElement),
    Two {
        r_a: FieldElement,
        r_b: FieldElement,
        r_c: FieldElement,
    },
}

impl BlindFactor {
    pub fn single(r: FieldElement) -> Result<Self> {
        if r.is_zero() {
            return Err(Error::BlindFactor);
        }
        Ok(BlindFactor::Single(r))
    }

    pub fn two(field: &PrimeField, r_a: FieldElement, r_b: FieldElement) -> Result<Self> {
        if r_a.is_zero() || r_b.is_zero() {
            return Err(Error::BlindFactor);
        }
        let r_c = field.mul(&r_a, &r_b);
        Ok(BlindFactor::Two { r_a, r_b, r_c })
    }

    /// Multipliers applied by BTG_A, BTG_B and BTG_C.
    pub fn multipliers(&self, field: &PrimeField) -> [FieldElement; 3] {
        match self {
            BlindFactor::Single(r) => [r.clone(), r.clone(), field.mul(r, r)],
            BlindFactor::Two { r_a, r_b, r_c } => [r_a.clone(), r_b.clone(), r_c.clone()],
        }
    }

    /// `(a', b', c')`.
    pub fn apply(
        &self,
        field: &PrimeField,
        a: &FieldElement,
        b: &FieldElement,
        c: &FieldElement,
    ) -> [FieldElement; 3] {
        let [ma, mb, mc] = self.multipliers(field);
        [field.mul(&ma, a), field.mul(&mb, b), field.mul(&mc, c)]
    }
}

/// Who plays each part in a dispensation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DispenseRoles {
    pub btg: BtgParties,
    pub o_x: PartyId,
    pub o_y: PartyId,
    pub leader: PartyId,
    pub mpc: Vec<PartyId>,
}

impl DispenseRoles {
    /// `O_x = MPC_1`, `O_y = MPC_2`, leader drawn from `MPC_3 … MPC_m`.
    pub fn standard(m: u16, seed: &[u8]) -> Result<Self> {
        if m < 3 {
            return Err(Error::Setup(format!("need at least 3 MPC servers, got {m}")));
        }
        let candidates: Vec<PartyId> = (3..=m).map(PartyId::mpc).collect();
        Ok(DispenseRoles {
            btg: BtgParties::STANDARD,
            o_x: PartyId::mpc(1),
            o_y: PartyId::mpc(2),
            leader: select_committee_leader(&candidates, seed)?,
            mpc: (1..=m).map(PartyId::mpc).collect(),
        })
    }

    /// Every identity the runtime must host.
    pub fn all_parties(&self) -> Vec<PartyId> {
        let mut v = vec![self.btg.a, self.btg.b, self.btg.c];
        v.extend(self.mpc.iter().copied());
        v
    }
}

/// One JSON record per party and triple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TripleShareRecord {
    pub triple_id: TripleId,
    pub party: PartyId,
    pub a: FieldElement,
    pub b: FieldElement,
    pub c: FieldElement,
}

pub fn share_records(t: &BeaverTriple, parties: &[PartyId]) -> Vec<TripleShareRecord> {
    parties
        .iter()
        .enumerate()
        .map(|(i, p)| TripleShareRecord {
            triple_id: t.id,
            party: *p,
            a: t.a.shares()[i].clone(),
            b: t.b.shares()[i].clone(),
            c: t.c.shares()[i].clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub triple_id: TripleId,
    pub mode: BlindMode,
    pub parties: Vec<PartyId>,
}

fn encode(field: &PrimeField, xs: &[FieldElement]) -> Vec<u8> {
    let mut out = Vec::with_capacity(xs.len() * field.width());
    for x in xs {
        field.write_bytes(x, &mut out);
    }
    out
}

fn decode(field: &PrimeField, bytes: &[u8], n: usize) -> Result<Vec<FieldElement>> {
    let w = field.width();
    if bytes.len() != n * w {
        return Err(Error::Malformed(format!("expected {n} field elements")));
    }
    bytes.chunks(w).map(|c| field.from_bytes(c)).collect()
}

/// Produces blinded, dispensed triples on a runtime hosting the BTGs and the
/// MPC servers.
#[derive(Clone)]
pub struct Dispenser {
    params: GroupParams,
    roles: DispenseRoles,
    mode: BlindMode,
    keys: BtgKeys,
    nested_keys: Option<BtgKeys>,
    id_base: u64,
    next_id: u64,
    ledger: Vec<LedgerEntry>,
}

impl Dispenser {
    /// Generates and publishes the BTG keys (and the nested ones for the
    /// two-randomness variant).
    pub fn new(
        rt: &mut Runtime,
        params: GroupParams,
        roles: DispenseRoles,
        mode: BlindMode,
    ) -> Result<Self> {
        for p in roles.all_parties() {
            if !rt.contains(p) {
                return Err(Error::Routing(format!("{p} is not in the runtime")));
            }
        }
        for p in [roles.o_x, roles.o_y, roles.leader] {
            if !roles.mpc.contains(&p) {
                return Err(Error::Setup(format!("{p} must be an MPC server")));
            }
        }
        if roles.o_x == roles.o_y || roles.leader == roles.o_x || roles.leader == roles.o_y {
            return Err(Error::Setup("O_x, O_y and the leader must differ".into()));
        }
        let keys = BtgKeys::generate(rt, &params, roles.btg)?;
        let nested_keys = match mode {
            BlindMode::Two => Some(BtgKeys::generate(rt, &params, nested_parties(&roles))?),
            BlindMode::Single => None,
        };
        Ok(Dispenser {
            params,
            roles,
            mode,
            keys,
            nested_keys,
            id_base: 0,
            next_id: 0,
            ledger: Vec::new(),
        })
    }

    /// Starts triple identifiers at `base`, keeping them disjoint from
    /// another dispenser's.
    pub fn with_id_base(mut self, base: u64) -> Self {
        self.id_base = base;
        self
    }

    pub fn roles(&self) -> &DispenseRoles {
        &self.roles
    }

    pub fn mode(&self) -> BlindMode {
        self.mode
    }

    pub fn field(&self) -> &PrimeField {
        self.params.field()
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// Appends the ledger as JSON lines.
    pub fn write_ledger(&self, mut w: impl Write) -> Result<()> {
        for e in &self.ledger {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> TripleId {
        let id = TripleId(self.id_base | self.next_id);
        self.next_id += 1;
        id
    }

    /// Runs `count` independent BTG sessions.
    pub fn generate(&mut self, rt: &mut Runtime, count: usize) -> Result<Vec<(TripleId, BtgOutputs)>> {
        (0..count)
            .map(|_| {
                let id = self.fresh_id();
                let out = run_btg(
                    rt,
                    &self.params,
                    self.roles.btg,
                    &self.keys,
                    SessionId(id.0 as u128),
                    BtgInputs::default(),
                )?;
                Ok((id, out))
            })
            .collect()
    }

    /// The requesters' agreement on one blind per triple.
    pub fn agree_blinds(&mut self, rt: &mut Runtime, ids: &[TripleId]) -> Result<Vec<BlindFactor>> {
        let f = self.params.field().clone();
        let (ox, oy, leader) = (self.roles.o_x, self.roles.o_y, self.roles.leader);
        let n = ids.len();
        match self.mode {
            BlindMode::Single => {
                let rx: Vec<_> = {
                    let rng = rt.rng(ox)?;
                    (0..n).map(|_| f.random_nonzero(rng)).collect()
                };
                let ry: Vec<_> = {
                    let rng = rt.rng(oy)?;
                    (0..n).map(|_| f.random_nonzero(rng)).collect()
                };
                rt.send(ox, oy, Tag::BlindExchange, encode(&f, &rx))?;
                rt.send(oy, ox, Tag::BlindExchange, encode(&f, &ry))?;
                let ry_at_x = decode(&f, &rt.recv(ox, oy, Tag::BlindExchange)?, n)?;
                let rx_at_y = decode(&f, &rt.recv(oy, ox, Tag::BlindExchange)?, n)?;
                let r: Vec<_> = rx.iter().zip(&ry_at_x).map(|(a, b)| f.mul(a, b)).collect();
                let r_y: Vec<_> = rx_at_y.iter().zip(&ry).map(|(a, b)| f.mul(a, b)).collect();
                if r != r_y {
                    return Err(Error::ProtocolState("requesters disagree on the blind".into()));
                }
                rt.send(ox, leader, Tag::BlindForward, encode(&f, &r))?;
                let r_at_leader = decode(&f, &rt.recv(leader, ox, Tag::BlindForward)?, n)?;
                r_at_leader.into_iter().map(BlindFactor::single).collect()
            }
            BlindMode::Two => {
                let nested = nested_parties(&self.roles);
                let keys = self.nested_keys.clone().expect("two-randomness keys");
                let mut raw = Vec::with_capacity(n);
                for id in ids {
                    let sid = SessionId((1u128 << 64) | id.0 as u128);
                    raw.push(run_btg(rt, &self.params, nested, &keys, sid, BtgInputs::default())?);
                }
                let signs: Vec<bool> = {
                    let rng = rt.rng(ox)?;
                    (0..n).map(|_| rng.gen()).collect()
                };
                rt.send(ox, oy, Tag::BlindExchange, signs.iter().map(|&s| s as u8).collect())?;
                let got = rt.recv(oy, ox, Tag::BlindExchange)?;
                if got.len() != n {
                    return Err(Error::Malformed("sign vector length".into()));
                }
                let flip = |x: &FieldElement, s: bool| if s { f.neg(x) } else { x.clone() };
                raw.iter()
                    .zip(signs.iter().zip(&got))
                    .map(|(o, (&sx, &sy))| {
                        let r_a = flip(&o.a, sx);
                        let r_b = flip(&o.b, sy != 0);
                        let r_c = o.c.clone();
                        if r_a.is_zero() || r_b.is_zero() {
                            return Err(Error::BlindFactor);
                        }
                        Ok(BlindFactor::Two { r_a, r_b, r_c })
                    })
                    .collect()
            }
        }
    }

    /// Forwards each blind part to its BTG, which scales its component and
    /// sends one summand to every MPC server.
    pub fn distribute(
        &mut self,
        rt: &mut Runtime,
        triples: &[(TripleId, BtgOutputs)],
        blinds: &[BlindFactor],
    ) -> Result<Vec<BeaverTriple>> {
        if triples.len() != blinds.len() {
            return Err(Error::Validation("one blind per triple".into()));
        }
        let f = self.params.field().clone();
        let n = triples.len();
        let m = self.roles.mpc.len();
        let btg = self.roles.btg;
        let senders = [self.roles.o_x, self.roles.o_y, self.roles.leader];
        let holders = [btg.a, btg.b, btg.c];

        let mut components: Vec<Vec<Vec<FieldElement>>> = Vec::with_capacity(3);
        for (role, (&from, &holder)) in senders.iter().zip(&holders).enumerate() {
            let parts: Vec<_> = blinds
                .iter()
                .map(|b| b.multipliers(&f)[role].clone())
                .collect();
            if parts.iter().any(|r| r.is_zero()) {
                return Err(Error::BlindFactor);
            }
            rt.send(from, holder, Tag::BlindForward, encode(&f, &parts))?;
            let parts = decode(&f, &rt.recv(holder, from, Tag::BlindForward)?, n)?;
            let mut splits = Vec::with_capacity(n);
            for ((_, out), r) in triples.iter().zip(&parts) {
                let secret = match role {
                    0 => &out.a,
                    1 => &out.b,
                    _ => &out.c,
                };
                let blinded = f.mul(r, secret);
                splits.push(additive_split(&f, &blinded, m, rt.rng(holder)?)?);
            }
            for (j, p) in self.roles.mpc.iter().enumerate() {
                let mut payload = Vec::with_capacity(n * (8 + f.width()));
                for ((id, _), s) in triples.iter().zip(&splits) {
                    payload.extend_from_slice(&id.0.to_be_bytes());
                    f.write_bytes(&s[j], &mut payload);
                }
                rt.send(holder, *p, Tag::TripleShare, payload)?;
            }
            let mut per_triple: Vec<Vec<FieldElement>> = vec![Vec::with_capacity(m); n];
            for p in &self.roles.mpc {
                let payload = rt.recv(*p, holder, Tag::TripleShare)?;
                let entry = 8 + f.width();
                if payload.len() != n * entry {
                    return Err(Error::Malformed(format!("triple shares for {p}")));
                }
                for (k, chunk) in payload.chunks(entry).enumerate() {
                    let id = u64::from_be_bytes(chunk[..8].try_into().unwrap());
                    if id != triples[k].0 .0 {
                        return Err(Error::Malformed(format!("unexpected triple {id}")));
                    }
                    per_triple[k].push(f.from_bytes(&chunk[8..])?);
                }
            }
            components.push(per_triple);
        }

        let mut c_parts = components.pop().expect("three components").into_iter();
        let mut b_parts = components.pop().expect("three components").into_iter();
        let mut a_parts = components.pop().expect("three components").into_iter();
        let mut out = Vec::with_capacity(n);
        for (id, _) in triples {
            self.ledger.push(LedgerEntry {
                triple_id: *id,
                mode: self.mode,
                parties: self.roles.mpc.clone(),
            });
            out.push(BeaverTriple {
                id: *id,
                a: SharedValue::from_shares(a_parts.next().unwrap()),
                b: SharedValue::from_shares(b_parts.next().unwrap()),
                c: SharedValue::from_shares(c_parts.next().unwrap()),
            });
        }
        Ok(out)
    }

    /// Generate, blind and distribute `count` triples.
    pub fn dispense(&mut self, rt: &mut Runtime, count: usize) -> Result<Vec<BeaverTriple>> {
        let triples = self.generate(rt, count)?;
        let ids: Vec<TripleId> = triples.iter().map(|(id, _)| *id).collect();
        let blinds = self.agree_blinds(rt, &ids)?;
        self.distribute(rt, &triples, &blinds)
    }
}

fn nested_parties(roles: &DispenseRoles) -> BtgParties {
    BtgParties {
        a: roles.o_x,
        b: roles.o_y,
        c: roles.leader,
    }
}

impl TripleSupplier for Dispenser {
    fn supply(&mut self, rt: &mut Runtime, count: usize) -> Result<Vec<BeaverTriple>> {
        self.dispense(rt, count)
    }

    fn fork(&self, index: u32) -> Box<dyn TripleSupplier> {
        let mut child = self.clone();
        child.id_base = self.id_base + ((index as u64 + 1) << 40);
        child.next_id = 0;
        child.ledger.clear();
        Box::new(child)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::RuntimeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn open_triple(f: &PrimeField, t: &BeaverTriple) -> [FieldElement; 3] {
        [f.sum(t.a.shares()), f.sum(t.b.shares()), f.sum(t.c.shares())]
    }

    fn setup(params: &GroupParams, m: u16, mode: BlindMode, seed: &[u8]) -> (Runtime, Dispenser) {
        let roles = DispenseRoles::standard(m, seed).unwrap();
        let mut rt = Runtime::new(&roles.all_parties(), seed, RuntimeConfig::default()).unwrap();
        let d = Dispenser::new(&mut rt, params.clone(), roles, mode).unwrap();
        (rt, d)
    }

    #[test]
    fn blind_examples() {
        let g = GroupParams::tiny();
        let f = g.field();
        let (a, b, c) = (f.from_u64(2), f.from_u64(3), f.from_u64(6));
        let single = BlindFactor::single(f.from_u64(5)).unwrap();
        assert_eq!(
            single.apply(f, &a, &b, &c),
            [f.from_u64(10), f.from_u64(15), f.from_u64(12)]
        );
        let two = BlindFactor::two(f, f.from_u64(5), f.from_u64(7)).unwrap();
        assert_eq!(two.multipliers(f)[2], f.from_u64(12));
        assert_eq!(
            two.apply(f, &a, &b, &c),
            [f.from_u64(10), f.from_u64(21), f.from_u64(3)]
        );
        let one = BlindFactor::single(f.one()).unwrap();
        assert_eq!(one.apply(f, &a, &b, &c), [a.clone(), b.clone(), c.clone()]);
        assert!(matches!(BlindFactor::single(f.zero()), Err(Error::BlindFactor)));
        assert!(matches!(
            BlindFactor::two(f, f.zero(), f.one()),
            Err(Error::BlindFactor)
        ));
    }

    #[test]
    fn explicit_blind_over_the_runtime() {
        let g = GroupParams::tiny();
        let f = g.field().clone();
        let (mut rt, mut d) = setup(&g, 3, BlindMode::Single, b"ex");
        let out = BtgOutputs {
            session_id: SessionId(0),
            a: f.from_u64(2),
            b: f.from_u64(3),
            c: f.from_u64(6),
        };
        let triples = vec![(TripleId(0), out.clone()), (TripleId(1), out)];
        let blinds = vec![
            BlindFactor::single(f.from_u64(5)).unwrap(),
            BlindFactor::two(&f, f.from_u64(5), f.from_u64(7)).unwrap(),
        ];
        let got = d.distribute(&mut rt, &triples, &blinds).unwrap();
        assert_eq!(
            open_triple(&f, &got[0]),
            [f.from_u64(10), f.from_u64(15), f.from_u64(12)]
        );
        assert_eq!(
            open_triple(&f, &got[1]),
            [f.from_u64(10), f.from_u64(21), f.from_u64(3)]
        );
        let recs = share_records(&got[0], &d.roles().mpc);
        assert_eq!(recs.len(), 3);
        let json = serde_json::to_string(&recs[0]).unwrap();
        assert!(json.starts_with(r#"{"triple_id":0,"party":"MPC_1","a":""#));
    }

    #[test]
    fn dispensed_triples_are_valid_in_both_modes() {
        let g = GroupParams::tiny();
        let f = g.field().clone();
        for mode in [BlindMode::Single, BlindMode::Two] {
            let (mut rt, mut d) = setup(&g, 4, mode, b"both");
            let ts = d.dispense(&mut rt, 300).unwrap();
            for t in &ts {
                let [a, b, c] = open_triple(&f, t);
                assert_eq!(c, f.mul(&a, &b));
                assert!(!a.is_zero() && !b.is_zero());
            }
            let ids: std::collections::HashSet<_> = ts.iter().map(|t| t.id).collect();
            assert_eq!(ids.len(), 300);
            assert_eq!(d.ledger().len(), 300);
        }
    }

    #[test]
    fn ledger_is_json_lines() {
        let g = GroupParams::tiny();
        let (mut rt, mut d) = setup(&g, 3, BlindMode::Single, b"ledger");
        d.dispense(&mut rt, 2).unwrap();
        let mut out = Vec::new();
        d.write_ledger(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[1],
            r#"{"triple_id":1,"mode":"single","parties":["MPC_1","MPC_2","MPC_3"]}"#
        );
    }

    #[test]
    fn blinded_components_cover_the_whole_multiplicative_group() {
        // a in the residue subgroup, r uniform over Z*_23.
        let g = GroupParams::tiny();
        let f = g.field();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 10_000;
        let mut counts = [0u32; 23];
        for _ in 0..n {
            let a = g.random_member(&mut rng);
            let r = f.random_nonzero(&mut rng);
            let v: usize = f.mul(&r, &a).value().try_into().unwrap();
            counts[v] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / 22.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for (v, &c) in counts.iter().enumerate().skip(1) {
            assert!((c as f64 - mean).abs() <= 4.0 * sd, "residue {v}: {c}");
        }
    }

    #[test]
    fn two_randomness_blinds_reach_non_residues() {
        let g = GroupParams::tiny();
        let f = g.field().clone();
        let (mut rt, mut d) = setup(&g, 3, BlindMode::Two, b"signs");
        let ids: Vec<_> = (0..200).map(TripleId).collect();
        let blinds = d.agree_blinds(&mut rt, &ids).unwrap();
        let mut non_residue = false;
        for b in &blinds {
            let [ra, rb, rc] = b.multipliers(&f);
            assert_eq!(rc, f.mul(&ra, &rb));
            non_residue |= !g.is_subgroup_member(&ra).unwrap();
        }
        assert!(non_residue);
    }

    #[test]
    fn leader_selection() {
        let one = [PartyId::mpc(3)];
        assert_eq!(select_committee_leader(&one, b"s").unwrap(), PartyId::mpc(3));
        let four: Vec<_> = (3..=6).map(PartyId::mpc).collect();
        assert_eq!(
            select_committee_leader(&four, b"fixed").unwrap(),
            select_committee_leader(&four, b"fixed").unwrap()
        );
        let mut shuffled = four.clone();
        shuffled.reverse();
        assert_eq!(
            select_committee_leader(&four, b"fixed").unwrap(),
            select_committee_leader(&shuffled, b"fixed").unwrap()
        );
        let mut counts = std::collections::HashMap::new();
        for s in 0..10_000u32 {
            *counts
                .entry(select_committee_leader(&four, &s.to_be_bytes()).unwrap())
                .or_insert(0) += 1;
        }
        for p in &four {
            let c = counts[p];
            assert!((2200..=2800).contains(&c), "{p}: {c}");
        }
        assert!(matches!(
            select_committee_leader(&[], b"s"),
            Err(Error::EmptyCommittee)
        ));
    }

    #[test]
    fn forks_never_reuse_identifiers() {
        let g = GroupParams::tiny();
        let (mut rt, d) = setup(&g, 3, BlindMode::Single, b"fork");
        let mut ids = std::collections::HashSet::new();
        for i in 0..3 {
            let mut child = d.fork(i);
            let mut crt = rt.fork(&i.to_string());
            for t in child.supply(&mut crt, 5).unwrap() {
                assert!(ids.insert(t.id));
            }
            rt.absorb(crt);
        }
    }
}
