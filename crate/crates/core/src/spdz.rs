//! Additive sharing over `Z_p` and Beaver multiplication.
//!
//! A [`SharedValue`] keeps every party's summand side by side; the engine
//! only ever combines summands of the same party locally, and all
//! cross-party information flows through runtime messages (openings and
//! input distribution).

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::modmath::{FieldElement, PrimeField};
use crate::net::{PartyId, Runtime, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TripleId(pub u64);

impl fmt::Display for TripleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One party's summand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditiveShare {
    pub owner: PartyId,
    pub value: FieldElement,
}

/// `m` summands, position `i` held by the engine's `i`-th party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedValue {
    shares: Vec<FieldElement>,
}

impl SharedValue {
    pub fn from_shares(shares: Vec<FieldElement>) -> Self {
        SharedValue { shares }
    }

    pub fn shares(&self) -> &[FieldElement] {
        &self.shares
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    /// Summands tagged with their owners.
    pub fn owned(&self, parties: &[PartyId]) -> Vec<AdditiveShare> {
        parties
            .iter()
            .zip(&self.shares)
            .map(|(p, v)| AdditiveShare {
                owner: *p,
                value: v.clone(),
            })
            .collect()
    }
}

/// Shares of `(a, b, c)` with `c = a · b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub id: TripleId,
    pub a: SharedValue,
    pub b: SharedValue,
    pub c: SharedValue,
}

/// `ρ = x - a` and `ε = y - b` after opening.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverOpenings {
    pub rho: FieldElement,
    pub epsilon: FieldElement,
}

/// Anything that can hand out fresh triples on demand.
pub trait TripleSupplier: Send {
    fn supply(&mut self, rt: &mut Runtime, count: usize) -> Result<Vec<BeaverTriple>>;

    /// An independent supplier whose triple identifiers never collide with
    /// this one's or any other fork's with a different `index`.
    fn fork(&self, index: u32) -> Box<dyn TripleSupplier>;
}

/// Local share algebra plus the opening and multiplication protocols.
pub struct Engine {
    field: PrimeField,
    parties: Vec<PartyId>,
    leader: PartyId,
    designated: usize,
    spent: HashSet<TripleId>,
    pool: VecDeque<BeaverTriple>,
    supplier: Option<Box<dyn TripleSupplier>>,
    next_open: u64,
    openings: u64,
}

impl Engine {
    /// `parties` in a fixed order; `leader` relays openings. The lowest
    /// party identifier adds public constants.
    pub fn new(field: PrimeField, parties: Vec<PartyId>, leader: PartyId) -> Result<Self> {
        if parties.len() < 2 {
            return Err(Error::Split(parties.len()));
        }
        let set: HashSet<_> = parties.iter().collect();
        if set.len() != parties.len() {
            return Err(Error::Setup("duplicate engine party".into()));
        }
        if !parties.contains(&leader) {
            return Err(Error::Setup(format!("leader {leader} is not a party")));
        }
        let designated = (0..parties.len())
            .min_by_key(|&i| parties[i])
            .expect("non-empty");
        Ok(Engine {
            field,
            parties,
            leader,
            designated,
            spent: HashSet::new(),
            pool: VecDeque::new(),
            supplier: None,
            next_open: 0,
            openings: 0,
        })
    }

    pub fn with_supplier(mut self, supplier: Box<dyn TripleSupplier>) -> Self {
        self.supplier = Some(supplier);
        self
    }

    /// Overrides which party adds public constants.
    pub fn with_designated(mut self, p: PartyId) -> Result<Self> {
        self.designated = self.position(p)?;
        Ok(self)
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    pub fn parties(&self) -> &[PartyId] {
        &self.parties
    }

    pub fn m(&self) -> usize {
        self.parties.len()
    }

    pub fn leader(&self) -> PartyId {
        self.leader
    }

    pub fn designated(&self) -> PartyId {
        self.parties[self.designated]
    }

    pub fn position(&self, p: PartyId) -> Result<usize> {
        self.parties
            .iter()
            .position(|q| *q == p)
            .ok_or_else(|| Error::Routing(format!("{p} holds no shares")))
    }

    /// Triples consumed so far.
    pub fn triples_used(&self) -> usize {
        self.spent.len()
    }

    pub fn openings(&self) -> u64 {
        self.openings
    }

    /// Adds triples to the pool drawn from by [`Engine::mul_many`].
    pub fn supply(&mut self, triples: impl IntoIterator<Item = BeaverTriple>) {
        self.pool.extend(triples);
    }

    /// A sibling engine for independent work on a forked runtime.
    pub fn fork(&self, index: u32) -> Engine {
        Engine {
            field: self.field.clone(),
            parties: self.parties.clone(),
            leader: self.leader,
            designated: self.designated,
            spent: HashSet::new(),
            pool: VecDeque::new(),
            supplier: self.supplier.as_ref().map(|s| s.fork(index)),
            next_open: 0,
            openings: 0,
        }
    }

    /// Folds a finished fork's triple ledger back in.
    pub fn absorb(&mut self, child: Engine) -> Result<()> {
        for id in child.spent {
            if !self.spent.insert(id) {
                return Err(Error::TripleReuse(id));
            }
        }
        self.openings += child.openings;
        Ok(())
    }

    fn check(&self, x: &SharedValue) -> Result<()> {
        if x.len() != self.m() {
            return Err(Error::Algebra(format!(
                "value shared among {} parties, engine has {}",
                x.len(),
                self.m()
            )));
        }
        Ok(())
    }

    fn zip(
        &self,
        x: &SharedValue,
        y: &SharedValue,
        f: impl Fn(&FieldElement, &FieldElement) -> FieldElement,
    ) -> Result<SharedValue> {
        self.check(x)?;
        self.check(y)?;
        Ok(SharedValue {
            shares: x.shares.iter().zip(&y.shares).map(|(a, b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, x: &SharedValue, y: &SharedValue) -> Result<SharedValue> {
        self.zip(x, y, |a, b| self.field.add(a, b))
    }

    pub fn sub(&self, x: &SharedValue, y: &SharedValue) -> Result<SharedValue> {
        self.zip(x, y, |a, b| self.field.sub(a, b))
    }

    pub fn neg(&self, x: &SharedValue) -> Result<SharedValue> {
        self.check(x)?;
        Ok(SharedValue {
            shares: x.shares.iter().map(|a| self.field.neg(a)).collect(),
        })
    }

    pub fn scale(&self, x: &SharedValue, k: &FieldElement) -> Result<SharedValue> {
        self.check(x)?;
        Ok(SharedValue {
            shares: x.shares.iter().map(|a| self.field.mul(a, k)).collect(),
        })
    }

    /// `[x] + k`: only the designated party adds `k`.
    pub fn add_const(&self, x: &SharedValue, k: &FieldElement) -> Result<SharedValue> {
        self.check(x)?;
        let mut out = x.clone();
        out.shares[self.designated] = self.field.add(&out.shares[self.designated], k);
        Ok(out)
    }

    /// A public constant as a trivial sharing.
    pub fn constant(&self, k: &FieldElement) -> SharedValue {
        let mut shares = vec![self.field.zero(); self.m()];
        shares[self.designated] = k.clone();
        SharedValue { shares }
    }

    pub fn zero(&self) -> SharedValue {
        self.constant(&self.field.zero())
    }

    pub fn sum<'a>(&self, xs: impl IntoIterator<Item = &'a SharedValue>) -> Result<SharedValue> {
        let mut acc = self.zero();
        for x in xs {
            acc = self.add(&acc, x)?;
        }
        Ok(acc)
    }

    /// `owner` splits each value and sends one summand to every other party.
    /// The owner may be outside the engine's party set.
    pub fn share_inputs(
        &self,
        rt: &mut Runtime,
        owner: PartyId,
        values: &[FieldElement],
    ) -> Result<Vec<SharedValue>> {
        let m = self.m();
        let mut split: Vec<Vec<FieldElement>> = Vec::with_capacity(values.len());
        {
            let rng = rt.rng(owner)?;
            for v in values {
                split.push(additive_split(&self.field, v, m, rng)?);
            }
        }
        let mut out: Vec<Vec<FieldElement>> = vec![Vec::with_capacity(m); values.len()];
        for (j, p) in self.parties.iter().enumerate() {
            let column: Vec<FieldElement> = split.iter().map(|s| s[j].clone()).collect();
            let received = if *p == owner {
                column
            } else {
                rt.send(owner, *p, Tag::InputShare, self.encode_elems(&column))?;
                self.decode_elems(&rt.recv(*p, owner, Tag::InputShare)?, values.len())?
            };
            for (k, v) in received.into_iter().enumerate() {
                out[k].push(v);
            }
        }
        Ok(out.into_iter().map(SharedValue::from_shares).collect())
    }

    fn encode_elems(&self, xs: &[FieldElement]) -> Vec<u8> {
        let mut out = Vec::with_capacity(xs.len() * self.field.width());
        for x in xs {
            self.field.write_bytes(x, &mut out);
        }
        out
    }

    fn decode_elems(&self, bytes: &[u8], n: usize) -> Result<Vec<FieldElement>> {
        let w = self.field.width();
        if bytes.len() != n * w {
            return Err(Error::Malformed(format!(
                "expected {n} elements of {w} bytes, got {} bytes",
                bytes.len()
            )));
        }
        bytes.chunks(w).map(|c| self.field.from_bytes(c)).collect()
    }

    /// Opens every value through the leader: each party sends its summands
    /// (`value_id ‖ party ‖ share` per entry) and the leader broadcasts the
    /// sums.
    pub fn open_many(&mut self, rt: &mut Runtime, xs: &[&SharedValue]) -> Result<Vec<FieldElement>> {
        for x in xs {
            if x.len() != self.m() {
                return Err(Error::Incomplete(format!(
                    "{} of {} summands present",
                    x.len(),
                    self.m()
                )));
            }
        }
        let base = self.next_open;
        self.next_open += xs.len() as u64;
        self.openings += xs.len() as u64;
        let w = self.field.width();
        let entry = 10 + w;
        let leader_pos = self.position(self.leader)?;

        for (i, p) in self.parties.iter().enumerate() {
            if i == leader_pos {
                continue;
            }
            let mut payload = Vec::with_capacity(xs.len() * entry);
            for (k, x) in xs.iter().enumerate() {
                payload.extend_from_slice(&(base + k as u64).to_be_bytes());
                payload.extend_from_slice(&(i as u16).to_be_bytes());
                self.field.write_bytes(&x.shares[i], &mut payload);
            }
            rt.send(*p, self.leader, Tag::OpenShare, payload)?;
        }

        let mut sums: Vec<FieldElement> = xs.iter().map(|x| x.shares[leader_pos].clone()).collect();
        for (i, p) in self.parties.iter().enumerate() {
            if i == leader_pos {
                continue;
            }
            let payload = rt.recv(self.leader, *p, Tag::OpenShare)?;
            if payload.len() != xs.len() * entry {
                return Err(Error::Incomplete(format!("{p} sent a short opening")));
            }
            for (k, chunk) in payload.chunks(entry).enumerate() {
                let id = u64::from_be_bytes(chunk[..8].try_into().unwrap());
                let from = u16::from_be_bytes(chunk[8..10].try_into().unwrap());
                if id != base + k as u64 || from as usize != i {
                    return Err(Error::Malformed(format!("opening entry {id} from {from}")));
                }
                let share = self.field.from_bytes(&chunk[10..])?;
                sums[k] = self.field.add(&sums[k], &share);
            }
        }

        let mut broadcast = Vec::with_capacity(xs.len() * (8 + w));
        for (k, s) in sums.iter().enumerate() {
            broadcast.extend_from_slice(&(base + k as u64).to_be_bytes());
            self.field.write_bytes(s, &mut broadcast);
        }
        for (i, p) in self.parties.iter().enumerate() {
            if i != leader_pos {
                rt.send(self.leader, *p, Tag::OpenBroadcast, broadcast.clone())?;
            }
        }
        for (i, p) in self.parties.iter().enumerate() {
            if i == leader_pos {
                continue;
            }
            let got = rt.recv(*p, self.leader, Tag::OpenBroadcast)?;
            if got != broadcast {
                return Err(Error::ProtocolState(format!("{p} received a divergent broadcast")));
            }
        }
        Ok(sums)
    }

    pub fn open(&mut self, rt: &mut Runtime, x: &SharedValue) -> Result<FieldElement> {
        Ok(self.open_many(rt, &[x])?.remove(0))
    }

    /// Reveals the values to `target` only.
    pub fn open_to(
        &mut self,
        rt: &mut Runtime,
        xs: &[&SharedValue],
        target: PartyId,
    ) -> Result<Vec<FieldElement>> {
        for x in xs {
            if x.len() != self.m() {
                return Err(Error::Incomplete(format!(
                    "{} of {} summands present",
                    x.len(),
                    self.m()
                )));
            }
        }
        self.openings += xs.len() as u64;
        let own = self.parties.iter().position(|p| *p == target);
        let mut sums: Vec<FieldElement> = match own {
            Some(t) => xs.iter().map(|x| x.shares[t].clone()).collect(),
            None => vec![self.field.zero(); xs.len()],
        };
        for (i, p) in self.parties.iter().enumerate() {
            if Some(i) == own {
                continue;
            }
            let column: Vec<FieldElement> = xs.iter().map(|x| x.shares[i].clone()).collect();
            rt.send(*p, target, Tag::OpenTo, self.encode_elems(&column))?;
            let got = self.decode_elems(&rt.recv(target, *p, Tag::OpenTo)?, xs.len())?;
            for (s, g) in sums.iter_mut().zip(&got) {
                *s = self.field.add(s, g);
            }
        }
        Ok(sums)
    }

    fn spend(&mut self, t: &BeaverTriple) -> Result<()> {
        if !self.spent.insert(t.id) {
            return Err(Error::TripleReuse(t.id));
        }
        Ok(())
    }

    /// `[x·y] = [c] + ε[a] + ρ[b] + ρε` with one joint opening of `ρ, ε`.
    pub fn beaver_mult(
        &mut self,
        rt: &mut Runtime,
        x: &SharedValue,
        y: &SharedValue,
        triple: &BeaverTriple,
    ) -> Result<SharedValue> {
        Ok(self.beaver_mult_traced(rt, x, y, triple)?.0)
    }

    pub fn beaver_mult_traced(
        &mut self,
        rt: &mut Runtime,
        x: &SharedValue,
        y: &SharedValue,
        triple: &BeaverTriple,
    ) -> Result<(SharedValue, BeaverOpenings)> {
        let mut out = self.beaver_batch(rt, &[(x, y)], std::slice::from_ref(triple))?;
        Ok(out.remove(0))
    }

    fn beaver_batch(
        &mut self,
        rt: &mut Runtime,
        pairs: &[(&SharedValue, &SharedValue)],
        triples: &[BeaverTriple],
    ) -> Result<Vec<(SharedValue, BeaverOpenings)>> {
        debug_assert_eq!(pairs.len(), triples.len());
        for t in triples {
            self.check(&t.a)?;
            self.check(&t.b)?;
            self.check(&t.c)?;
            if self.spent.contains(&t.id) {
                return Err(Error::TripleReuse(t.id));
            }
        }
        let mut masked = Vec::with_capacity(2 * pairs.len());
        for ((x, y), t) in pairs.iter().zip(triples) {
            masked.push(self.sub(x, &t.a)?);
            masked.push(self.sub(y, &t.b)?);
        }
        for t in triples {
            self.spend(t)?;
        }
        let refs: Vec<&SharedValue> = masked.iter().collect();
        let opened = self.open_many(rt, &refs)?;
        let f = &self.field;
        let mut out = Vec::with_capacity(pairs.len());
        for (k, t) in triples.iter().enumerate() {
            let rho = opened[2 * k].clone();
            let eps = opened[2 * k + 1].clone();
            let shares = (0..self.m())
                .map(|i| {
                    let mut z = f.add(
                        &t.c.shares[i],
                        &f.add(&f.mul(&eps, &t.a.shares[i]), &f.mul(&rho, &t.b.shares[i])),
                    );
                    if i == self.designated {
                        z = f.add(&z, &f.mul(&rho, &eps));
                    }
                    z
                })
                .collect();
            out.push((
                SharedValue { shares },
                BeaverOpenings { rho, epsilon: eps },
            ));
        }
        Ok(out)
    }

    fn take_triples(&mut self, rt: &mut Runtime, n: usize) -> Result<Vec<BeaverTriple>> {
        if self.pool.len() < n {
            let missing = n - self.pool.len();
            match self.supplier.as_mut() {
                Some(s) => {
                    let fresh = s.supply(rt, missing)?;
                    self.pool.extend(fresh);
                }
                None => {
                    return Err(Error::ProtocolState(format!(
                        "need {n} triples, {} available",
                        self.pool.len()
                    )))
                }
            }
        }
        Ok(self.pool.drain(..n).collect())
    }

    /// Multiplies every pair with triples from the pool in a single opening
    /// round.
    pub fn mul_many(
        &mut self,
        rt: &mut Runtime,
        pairs: &[(&SharedValue, &SharedValue)],
    ) -> Result<Vec<SharedValue>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let triples = self.take_triples(rt, pairs.len())?;
        Ok(self
            .beaver_batch(rt, pairs, &triples)?
            .into_iter()
            .map(|(z, _)| z)
            .collect())
    }

    pub fn mul(&mut self, rt: &mut Runtime, x: &SharedValue, y: &SharedValue) -> Result<SharedValue> {
        Ok(self.mul_many(rt, &[(x, y)])?.remove(0))
    }
}

/// `m` summands of `secret`: summands `2..m` uniform, the first fixes the sum.
pub fn additive_split(
    field: &PrimeField,
    secret: &FieldElement,
    m: usize,
    rng: &mut impl rand::RngCore,
) -> Result<Vec<FieldElement>> {
    if m < 2 {
        return Err(Error::Split(m));
    }
    let mut rest: Vec<FieldElement> = (1..m).map(|_| field.random(rng)).collect();
    let first = field.sub(secret, &field.sum(&rest));
    rest.insert(0, first);
    Ok(rest)
}

/// Sum of the summands of exactly `parties`, each present once.
pub fn reconstruct(
    field: &PrimeField,
    parties: &[PartyId],
    shares: &[AdditiveShare],
) -> Result<FieldElement> {
    let mut seen = HashSet::new();
    for s in shares {
        if !parties.contains(&s.owner) {
            return Err(Error::Algebra(format!("summand from outsider {}", s.owner)));
        }
        if !seen.insert(s.owner) {
            return Err(Error::Algebra(format!("two summands from {}", s.owner)));
        }
    }
    if let Some(missing) = parties.iter().find(|p| !seen.contains(p)) {
        return Err(Error::Incomplete(format!("no summand from {missing}")));
    }
    Ok(field.sum(shares.iter().map(|s| &s.value)))
}
