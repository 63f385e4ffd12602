//! Three-party Beaver triple generation.
//!
//! `BTG_A` and `BTG_B` each pick a secret factor; `BTG_C` ends holding their
//! product. The product is assembled under a two-layer ElGamal key
//! `h_AC = h_A · h_C`:
//!
//! 1. A sends `(g^rA, a · h_AC^rA)` to B.
//! 2. B multiplies in `b` and re-randomizes, returning the pair to A.
//! 3. A strips its own layer, re-randomizes under `h_C` and forwards to C.
//! 4. C strips the last layer and obtains `c = a · b`.
//!
//! Secrets are drawn from the quadratic-residue subgroup so that the
//! ciphertexts are semantically secure; blinding at dispensation time spreads
//! them over all of `Z*_p`.

use std::fmt;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::modmath::{
    encrypt, mult_layer, rerandomize, strip_layer, Ciphertext, Exponent, FieldElement,
    GroupParams, KeyPair,
};
use crate::net::{PartyId, Runtime, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BtgRole {
    A,
    B,
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub u128);

impl SessionId {
    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BtgMessage {
    pub session_id: SessionId,
    /// 1, 2 or 3.
    pub step: u8,
    pub ct: Ciphertext,
}

impl BtgMessage {
    /// `session_id (16) ‖ step (1) ‖ u ‖ v`.
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let f = params.field();
        let mut out = Vec::with_capacity(17 + 2 * f.width());
        out.extend_from_slice(&self.session_id.to_bytes());
        out.push(self.step);
        f.write_bytes(&self.ct.u, &mut out);
        f.write_bytes(&self.ct.v, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8], params: &GroupParams) -> Result<Self> {
        let f = params.field();
        let w = f.width();
        if bytes.len() != 17 + 2 * w {
            return Err(Error::Malformed(format!(
                "BTG message of {} bytes, expected {}",
                bytes.len(),
                17 + 2 * w
            )));
        }
        let session_id = SessionId(u128::from_be_bytes(bytes[..16].try_into().unwrap()));
        let step = bytes[16];
        if !(1..=3).contains(&step) {
            return Err(Error::Malformed(format!("BTG step tag {step}")));
        }
        let u = f.from_bytes(&bytes[17..17 + w])?;
        let v = f.from_bytes(&bytes[17 + w..])?;
        Ok(BtgMessage {
            session_id,
            step,
            ct: Ciphertext::new(u, v)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Initial,
    /// A sent step 1 and waits for step 2.
    AwaitStep2,
    Done,
}

/// One party's side of a single triple-generation session.
#[derive(Clone, Debug)]
pub struct BtgSession {
    session_id: SessionId,
    params: GroupParams,
    role: BtgRole,
    keypair: Option<KeyPair>,
    h_a: FieldElement,
    h_c: FieldElement,
    state: State,
    secret: Option<FieldElement>,
}

/// `x` uniform in `[1, q)`, `h = g^x`.
pub fn btg_keygen(params: &GroupParams, rng: &mut impl RngCore) -> KeyPair {
    KeyPair::generate(params, rng)
}

impl BtgSession {
    /// `keypair` is the party's own key: required for A and C, ignored for B.
    /// `h_a` and `h_c` are the published keys of A and C.
    pub fn new(
        session_id: SessionId,
        params: GroupParams,
        role: BtgRole,
        keypair: Option<KeyPair>,
        h_a: FieldElement,
        h_c: FieldElement,
    ) -> Result<Self> {
        for h in [&h_a, &h_c] {
            if !params.is_subgroup_member(h)? {
                return Err(Error::InvalidGroup(format!("public key {h} outside subgroup")));
            }
        }
        let keypair = match role {
            BtgRole::B => None,
            _ => {
                let kp = keypair.ok_or_else(|| {
                    Error::ProtocolState(format!("role {role:?} needs its key pair"))
                })?;
                let expected = if role == BtgRole::A { &h_a } else { &h_c };
                if kp.public() != expected {
                    return Err(Error::ProtocolState("key pair does not match published key".into()));
                }
                Some(kp)
            }
        };
        Ok(BtgSession {
            session_id,
            params,
            role,
            keypair,
            h_a,
            h_c,
            state: State::Initial,
            secret: None,
        })
    }

    pub fn role(&self) -> BtgRole {
        self.role
    }

    pub fn session_id(&self) -> SessionId {
        self.session_id
    }

    pub fn is_done(&self) -> bool {
        self.state == State::Done
    }

    /// `a`, `b` or `c` depending on the role, once produced.
    pub fn secret_output(&self) -> Option<&FieldElement> {
        self.secret.as_ref()
    }

    fn h_ac(&self) -> FieldElement {
        self.params.field().mul(&self.h_a, &self.h_c)
    }

    fn expect(&self, role: BtgRole, state: State, what: &str) -> Result<()> {
        if self.role != role || self.state != state {
            return Err(Error::ProtocolState(format!(
                "{what} called as {:?} in state {:?}",
                self.role, self.state
            )));
        }
        Ok(())
    }

    fn check_incoming(&self, msg: &BtgMessage, step: u8) -> Result<()> {
        if msg.session_id != self.session_id {
            return Err(Error::ProtocolState(format!(
                "message for session {} delivered to {}",
                msg.session_id, self.session_id
            )));
        }
        if msg.step != step {
            return Err(Error::ProtocolState(format!(
                "expected step {step}, got step {}",
                msg.step
            )));
        }
        Ok(())
    }

    pub fn step_a1(&mut self, rng: &mut impl RngCore) -> Result<BtgMessage> {
        self.expect(BtgRole::A, State::Initial, "step_a1")?;
        let a = self.params.random_member(rng);
        let r_a = self.params.random_exponent(rng);
        self.step_a1_with(a, r_a)
    }

    /// Step 1 with caller-chosen `a` and `r_A`.
    pub fn step_a1_with(&mut self, a: FieldElement, r_a: Exponent) -> Result<BtgMessage> {
        self.expect(BtgRole::A, State::Initial, "step_a1")?;
        let ct = encrypt(&self.params, &self.h_ac(), &a, &r_a)?;
        self.secret = Some(a);
        self.state = State::AwaitStep2;
        Ok(BtgMessage {
            session_id: self.session_id,
            step: 1,
            ct,
        })
    }

    pub fn step_b(&mut self, msg: &BtgMessage, rng: &mut impl RngCore) -> Result<BtgMessage> {
        self.expect(BtgRole::B, State::Initial, "step_b")?;
        let b = self.params.random_member(rng);
        let r_b = self.params.random_exponent(rng);
        self.step_b_with(msg, b, r_b)
    }

    pub fn step_b_with(
        &mut self,
        msg: &BtgMessage,
        b: FieldElement,
        r_b: Exponent,
    ) -> Result<BtgMessage> {
        self.expect(BtgRole::B, State::Initial, "step_b")?;
        self.check_incoming(msg, 1)?;
        let ct = mult_layer(&msg.ct, &b, &self.h_ac(), &r_b, &self.params)?;
        self.secret = Some(b);
        self.state = State::Done;
        Ok(BtgMessage {
            session_id: self.session_id,
            step: 2,
            ct,
        })
    }

    pub fn step_a2(&mut self, msg: &BtgMessage, rng: &mut impl RngCore) -> Result<BtgMessage> {
        self.expect(BtgRole::A, State::AwaitStep2, "step_a2")?;
        let r = self.params.random_exponent(rng);
        self.step_a2_with(msg, r)
    }

    /// Strips `x_A` and re-randomizes under `h_C` with `r'_B`.
    pub fn step_a2_with(&mut self, msg: &BtgMessage, r_prime: Exponent) -> Result<BtgMessage> {
        self.expect(BtgRole::A, State::AwaitStep2, "step_a2")?;
        self.check_incoming(msg, 2)?;
        let x_a = self.keypair.as_ref().expect("A holds a key").secret();
        let v = strip_layer(&msg.ct, x_a, &self.params);
        let half = Ciphertext::new(msg.ct.u.clone(), v)?;
        let ct = rerandomize(&half, &self.h_c, &r_prime, &self.params);
        self.state = State::Done;
        Ok(BtgMessage {
            session_id: self.session_id,
            step: 3,
            ct,
        })
    }

    pub fn finish_c(&mut self, msg: &BtgMessage) -> Result<FieldElement> {
        self.expect(BtgRole::C, State::Initial, "finish_c")?;
        self.check_incoming(msg, 3)?;
        let x_c = self.keypair.as_ref().expect("C holds a key").secret();
        let c = strip_layer(&msg.ct, x_c, &self.params);
        self.secret = Some(c.clone());
        self.state = State::Done;
        Ok(c)
    }
}

/// The three participants of one session.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BtgParties {
    pub a: PartyId,
    pub b: PartyId,
    pub c: PartyId,
}

impl BtgParties {
    pub const STANDARD: BtgParties = BtgParties {
        a: PartyId::BTG_A,
        b: PartyId::BTG_B,
        c: PartyId::BTG_C,
    };
}

/// Long-term keys of the A and C roles. The public halves are published
/// before any session runs.
#[derive(Clone, Debug)]
pub struct BtgKeys {
    pub a: KeyPair,
    pub c: KeyPair,
}

impl BtgKeys {
    /// Each holder draws its key from its own generator.
    pub fn generate(rt: &mut Runtime, params: &GroupParams, parties: BtgParties) -> Result<Self> {
        let a = btg_keygen(params, rt.rng(parties.a)?);
        rt.annotate(parties.a, "published BTG public key")?;
        let c = btg_keygen(params, rt.rng(parties.c)?);
        rt.annotate(parties.c, "published BTG public key")?;
        Ok(BtgKeys { a, c })
    }
}

/// Optional fixed inputs; unset secrets are sampled by their holder.
#[derive(Clone, Debug, Default)]
pub struct BtgInputs {
    pub a: Option<FieldElement>,
    pub b: Option<FieldElement>,
}

/// Per-role outputs. In a deployment each value stays with its holder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BtgOutputs {
    pub session_id: SessionId,
    pub a: FieldElement,
    pub b: FieldElement,
    pub c: FieldElement,
}

/// Runs one complete session over the runtime, ending with C's
/// acknowledgment to A.
pub fn run_btg(
    rt: &mut Runtime,
    params: &GroupParams,
    parties: BtgParties,
    keys: &BtgKeys,
    session_id: SessionId,
    inputs: BtgInputs,
) -> Result<BtgOutputs> {
    let (h_a, h_c) = (keys.a.public().clone(), keys.c.public().clone());
    let mut sa = BtgSession::new(
        session_id,
        params.clone(),
        BtgRole::A,
        Some(keys.a.clone()),
        h_a.clone(),
        h_c.clone(),
    )?;
    let mut sb = BtgSession::new(session_id, params.clone(), BtgRole::B, None, h_a.clone(), h_c.clone())?;
    let mut sc = BtgSession::new(session_id, params.clone(), BtgRole::C, Some(keys.c.clone()), h_a, h_c)?;

    let m1 = {
        let rng = rt.rng(parties.a)?;
        let a = match inputs.a {
            Some(a) => a,
            None => params.random_member(rng),
        };
        let r_a = params.random_exponent(rng);
        sa.step_a1_with(a, r_a)?
    };
    rt.send(parties.a, parties.b, Tag::Btg1, m1.to_bytes(params))?;

    let m1 = BtgMessage::from_bytes(&rt.recv(parties.b, parties.a, Tag::Btg1)?, params)?;
    let m2 = {
        let rng = rt.rng(parties.b)?;
        let b = match inputs.b {
            Some(b) => b,
            None => params.random_member(rng),
        };
        let r_b = params.random_exponent(rng);
        sb.step_b_with(&m1, b, r_b)?
    };
    rt.send(parties.b, parties.a, Tag::Btg2, m2.to_bytes(params))?;

    let m2 = BtgMessage::from_bytes(&rt.recv(parties.a, parties.b, Tag::Btg2)?, params)?;
    let m3 = sa.step_a2(&m2, rt.rng(parties.a)?)?;
    rt.send(parties.a, parties.c, Tag::Btg3, m3.to_bytes(params))?;

    let m3 = BtgMessage::from_bytes(&rt.recv(parties.c, parties.a, Tag::Btg3)?, params)?;
    let c = sc.finish_c(&m3)?;
    rt.send(parties.c, parties.a, Tag::BtgDone, session_id.to_bytes().to_vec())?;
    let ack = rt.recv(parties.a, parties.c, Tag::BtgDone)?;
    if ack != session_id.to_bytes() {
        return Err(Error::ProtocolState("acknowledgment for another session".into()));
    }

    Ok(BtgOutputs {
        session_id,
        a: sa.secret.expect("set in step 1"),
        b: sb.secret.expect("set in step 2"),
        c,
    })
}
