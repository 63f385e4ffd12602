//! In-process multi-party runtime.
//!
//! Every protocol message travels over a private FIFO channel between two
//! [`PartyId`]s. Sent messages wait in per-channel queues until the scheduler
//! delivers them to the recipient's inbox; protocol code then pulls them with
//! [`Runtime::recv`]. The scheduler is the single source of interleaving, so a
//! run is fully determined by the runtime seed and the scheduling policy, and
//! the resulting [`Transcript`] is byte-identical across replays.
//!
//! Each party draws its randomness from its own generator, seeded from the
//! runtime seed and the party label; the seeds are logged in the transcript.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    BtgA,
    BtgB,
    BtgC,
    Mpc,
    /// A key-dispensation participant in an mHKM chain.
    Keyholder,
    /// The relay identity that carries an intermediate product in an mHKM chain.
    Relay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId {
    pub role: Role,
    pub index: u16,
}

impl PartyId {
    pub const BTG_A: PartyId = PartyId { role: Role::BtgA, index: 0 };
    pub const BTG_B: PartyId = PartyId { role: Role::BtgB, index: 0 };
    pub const BTG_C: PartyId = PartyId { role: Role::BtgC, index: 0 };

    /// `MPC_i`, one-based.
    pub const fn mpc(i: u16) -> Self {
        PartyId { role: Role::Mpc, index: i }
    }

    pub const fn keyholder(i: u16) -> Self {
        PartyId { role: Role::Keyholder, index: i }
    }

    pub const fn relay(i: u16) -> Self {
        PartyId { role: Role::Relay, index: i }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            Role::BtgA => write!(f, "BTG_A"),
            Role::BtgB => write!(f, "BTG_B"),
            Role::BtgC => write!(f, "BTG_C"),
            Role::Mpc => write!(f, "MPC_{}", self.index),
            Role::Keyholder => write!(f, "KM_{}", self.index),
            Role::Relay => write!(f, "KM'_{}", self.index),
        }
    }
}

impl Serialize for PartyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Protocol tag carried in the frame header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    KeyAnnounce = 1,
    Btg1 = 2,
    Btg2 = 3,
    Btg3 = 4,
    BtgDone = 5,
    BlindExchange = 6,
    BlindForward = 7,
    DispenseRequest = 8,
    TripleShare = 9,
    InputShare = 10,
    OpenShare = 11,
    OpenBroadcast = 12,
    OpenTo = 13,
    BitShare = 14,
    Test = 255,
}

impl Tag {
    pub fn name(&self) -> &'static str {
        match self {
            Tag::KeyAnnounce => "key-announce",
            Tag::Btg1 => "btg-1",
            Tag::Btg2 => "btg-2",
            Tag::Btg3 => "btg-3",
            Tag::BtgDone => "btg-done",
            Tag::BlindExchange => "blind-exchange",
            Tag::BlindForward => "blind-forward",
            Tag::DispenseRequest => "dispense-request",
            Tag::TripleShare => "triple-share",
            Tag::InputShare => "input-share",
            Tag::OpenShare => "open-share",
            Tag::OpenBroadcast => "open-broadcast",
            Tag::OpenTo => "open-to",
            Tag::BitShare => "bit-share",
            Tag::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub from: PartyId,
    pub to: PartyId,
    pub tag: Tag,
    /// Strictly increasing per `(from, to)` channel.
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Message {
    /// `len (u32 BE, payload bytes) ‖ tag ‖ payload`.
    pub fn frame(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.payload);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulePolicy {
    /// Cycle over channels in a fixed order.
    RoundRobin,
    /// Pick a uniformly random non-empty channel from a seeded generator.
    SeededRandom(u64),
}

#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    pub policy: SchedulePolicy,
    /// Keep every delivered message in memory. When off only the running
    /// digest is maintained and per-party views are unavailable.
    pub record: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            policy: SchedulePolicy::RoundRobin,
            record: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryEvent {
    pub index: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub tag: Tag,
    pub seq: u64,
}

#[derive(Serialize)]
struct MessageLine<'a> {
    delivery: u64,
    seq: u64,
    from: PartyId,
    to: PartyId,
    tag: &'static str,
    payload: &'a str,
}

/// Ordered log of delivered messages plus per-party local annotations.
#[derive(Clone)]
pub struct Transcript {
    record: bool,
    delivered: u64,
    messages: Vec<(u64, Message)>,
    local: BTreeMap<PartyId, Vec<String>>,
    hasher: Sha256,
}

impl Transcript {
    fn new(record: bool) -> Self {
        Transcript {
            record,
            delivered: 0,
            messages: Vec::new(),
            local: BTreeMap::new(),
            hasher: Sha256::new(),
        }
    }

    fn push(&mut self, msg: &Message) -> u64 {
        let index = self.delivered;
        self.delivered += 1;
        self.hasher.update(index.to_be_bytes());
        self.hasher.update(msg.from.to_string().as_bytes());
        self.hasher.update([0u8]);
        self.hasher.update(msg.to.to_string().as_bytes());
        self.hasher.update([0u8]);
        self.hasher.update(msg.seq.to_be_bytes());
        self.hasher.update(msg.frame());
        if self.record {
            self.messages.push((index, msg.clone()));
        }
        index
    }

    fn note(&mut self, party: PartyId, event: String) {
        self.hasher.update(party.to_string().as_bytes());
        self.hasher.update(event.as_bytes());
        self.local.entry(party).or_default().push(event);
    }

    pub fn is_recorded(&self) -> bool {
        self.record
    }

    /// Number of delivered messages, recorded or not.
    pub fn len(&self) -> u64 {
        self.delivered
    }

    pub fn is_empty(&self) -> bool {
        self.delivered == 0
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().map(|(_, m)| m)
    }

    /// SHA-256 over every delivery and local annotation, in order.
    pub fn digest(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// One JSON object per delivered message.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        if !self.record {
            return Err(Error::Query("transcript was not recorded".into()));
        }
        for (index, m) in &self.messages {
            let payload = hex::encode(&m.payload);
            let line = MessageLine {
                delivery: *index,
                seq: m.seq,
                from: m.from,
                to: m.to,
                tag: m.tag.name(),
                payload: &payload,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// What one party saw: every message it sent or received, in delivery order,
/// and its local randomness log.
#[derive(Clone, Debug)]
pub struct PartyView {
    pub party: PartyId,
    pub messages: Vec<Message>,
    pub local: Vec<String>,
}

impl PartyView {
    pub fn inbound(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.to == self.party)
    }

    pub fn outbound(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.from == self.party)
    }

    /// True when `needle` occurs anywhere in a payload of this view.
    pub fn contains_bytes(&self, needle: &[u8]) -> bool {
        !needle.is_empty()
            && self
                .messages
                .iter()
                .any(|m| m.payload.windows(needle.len()).any(|w| w == needle))
    }
}

type Channel = (usize, usize);

pub struct Runtime {
    seed: [u8; 32],
    config: RuntimeConfig,
    parties: Vec<PartyId>,
    index: HashMap<PartyId, usize>,
    pending: BTreeMap<Channel, VecDeque<Message>>,
    inbox: HashMap<Channel, VecDeque<Message>>,
    next_seq: HashMap<Channel, u64>,
    cursor: Option<Channel>,
    sched_rng: Option<ChaCha20Rng>,
    rngs: Vec<ChaCha20Rng>,
    transcript: Transcript,
}

impl Runtime {
    /// Spawns the parties and establishes a private channel between every
    /// pair.
    pub fn new(parties: &[PartyId], seed: &[u8], config: RuntimeConfig) -> Result<Self> {
        let seed: [u8; 32] = Sha256::digest(seed).into();
        Self::with_seed(parties, seed, config)
    }

    fn with_seed(parties: &[PartyId], seed: [u8; 32], config: RuntimeConfig) -> Result<Self> {
        if parties.is_empty() {
            return Err(Error::Setup("no parties".into()));
        }
        let mut index = HashMap::new();
        for (i, p) in parties.iter().enumerate() {
            if index.insert(*p, i).is_some() {
                return Err(Error::Setup(format!("duplicate party {p}")));
            }
        }
        let mut transcript = Transcript::new(config.record);
        let mut rngs = Vec::with_capacity(parties.len());
        for p in parties {
            let mut h = Sha256::new();
            h.update(seed);
            h.update(b"party");
            h.update(p.to_string().as_bytes());
            let party_seed: [u8; 32] = h.finalize().into();
            transcript.note(*p, format!("seed {}", hex::encode(party_seed)));
            rngs.push(ChaCha20Rng::from_seed(party_seed));
        }
        let sched_rng = match config.policy {
            SchedulePolicy::SeededRandom(s) => Some(ChaCha20Rng::seed_from_u64(s)),
            SchedulePolicy::RoundRobin => None,
        };
        Ok(Runtime {
            seed,
            config,
            parties: parties.to_vec(),
            index,
            pending: BTreeMap::new(),
            inbox: HashMap::new(),
            next_seq: HashMap::new(),
            cursor: None,
            sched_rng,
            rngs,
            transcript,
        })
    }

    /// A child runtime over the same parties with its own derived seed and an
    /// empty transcript. Fold it back with [`Runtime::absorb`].
    pub fn fork(&self, label: &str) -> Runtime {
        let mut h = Sha256::new();
        h.update(self.seed);
        h.update(b"fork");
        h.update(label.as_bytes());
        let mut config = self.config.clone();
        if let SchedulePolicy::SeededRandom(s) = config.policy {
            let mut h2 = Sha256::new();
            h2.update(s.to_be_bytes());
            h2.update(label.as_bytes());
            let d: [u8; 32] = h2.finalize().into();
            config.policy = SchedulePolicy::SeededRandom(u64::from_be_bytes(d[..8].try_into().unwrap()));
        }
        Self::with_seed(&self.parties, h.finalize().into(), config).expect("parties already validated")
    }

    /// Appends a finished child's transcript after everything delivered here.
    /// The parent digest absorbs the child's digest, so it does not depend on
    /// whether messages were recorded.
    pub fn absorb(&mut self, child: Runtime) {
        let t = &mut self.transcript;
        t.hasher.update(b"fork");
        t.hasher.update(child.transcript.digest());
        for (party, events) in child.transcript.local {
            let log = t.local.entry(party).or_default();
            log.extend(events.into_iter().map(|e| format!("fork {e}")));
        }
        for (_, m) in child.transcript.messages {
            if t.record {
                t.messages.push((t.delivered, m));
            }
            t.delivered += 1;
        }
        if !child.transcript.record {
            t.delivered += child.transcript.delivered;
        }
    }

    pub fn parties(&self) -> &[PartyId] {
        &self.parties
    }

    pub fn contains(&self, p: PartyId) -> bool {
        self.index.contains_key(&p)
    }

    fn idx(&self, p: PartyId) -> Result<usize> {
        self.index
            .get(&p)
            .copied()
            .ok_or_else(|| Error::Routing(format!("unknown party {p}")))
    }

    /// The party's private random generator.
    pub fn rng(&mut self, p: PartyId) -> Result<&mut ChaCha20Rng> {
        let i = self.idx(p)?;
        Ok(&mut self.rngs[i])
    }

    /// Logs a local event for `p` (never secret values).
    pub fn annotate(&mut self, p: PartyId, event: impl Into<String>) -> Result<()> {
        self.idx(p)?;
        self.transcript.note(p, event.into());
        Ok(())
    }

    pub fn send(&mut self, from: PartyId, to: PartyId, tag: Tag, payload: Vec<u8>) -> Result<()> {
        let ch = (self.idx(from)?, self.idx(to)?);
        if from == to {
            return Err(Error::Routing(format!("{from} cannot message itself")));
        }
        let seq = self.next_seq.entry(ch).or_insert(0);
        let msg = Message {
            from,
            to,
            tag,
            seq: *seq,
            payload,
        };
        *seq += 1;
        self.pending.entry(ch).or_default().push_back(msg);
        Ok(())
    }

    fn pick_channel(&mut self) -> Option<Channel> {
        match self.config.policy {
            SchedulePolicy::RoundRobin => {
                let next = match self.cursor {
                    Some(c) => self
                        .pending
                        .range((std::ops::Bound::Excluded(c), std::ops::Bound::Unbounded))
                        .find(|(_, q)| !q.is_empty())
                        .map(|(k, _)| *k),
                    None => None,
                };
                let next = next.or_else(|| {
                    self.pending
                        .iter()
                        .find(|(_, q)| !q.is_empty())
                        .map(|(k, _)| *k)
                });
                self.cursor = next;
                next
            }
            SchedulePolicy::SeededRandom(_) => {
                let ready: Vec<Channel> = self
                    .pending
                    .iter()
                    .filter(|(_, q)| !q.is_empty())
                    .map(|(k, _)| *k)
                    .collect();
                if ready.is_empty() {
                    return None;
                }
                let rng = self.sched_rng.as_mut().expect("seeded policy has a generator");
                Some(ready[rng.gen_range(0..ready.len())])
            }
        }
    }

    /// Moves one pending message into its recipient's inbox.
    pub fn deliver_next(&mut self) -> Option<DeliveryEvent> {
        let ch = self.pick_channel()?;
        let queue = self.pending.get_mut(&ch)?;
        let msg = queue.pop_front()?;
        if queue.is_empty() {
            self.pending.remove(&ch);
        }
        let index = self.transcript.push(&msg);
        let event = DeliveryEvent {
            index,
            from: msg.from,
            to: msg.to,
            tag: msg.tag,
            seq: msg.seq,
        };
        self.inbox.entry((ch.1, ch.0)).or_default().push_back(msg);
        Some(event)
    }

    /// Delivers everything pending; returns the number of deliveries.
    pub fn run(&mut self) -> usize {
        let mut n = 0;
        while self.deliver_next().is_some() {
            n += 1;
        }
        n
    }

    pub fn has_pending(&self) -> bool {
        self.pending.values().any(|q| !q.is_empty())
    }

    /// Takes the next message from `from` out of `to`'s inbox, running the
    /// scheduler until one arrives. The message must carry `tag`.
    pub fn recv(&mut self, to: PartyId, from: PartyId, tag: Tag) -> Result<Vec<u8>> {
        let key = (self.idx(to)?, self.idx(from)?);
        loop {
            if let Some(msg) = self.inbox.get_mut(&key).and_then(|q| q.pop_front()) {
                if msg.tag != tag {
                    return Err(Error::ProtocolState(format!(
                        "{to} expected {} from {from}, got {}",
                        tag.name(),
                        msg.tag.name()
                    )));
                }
                return Ok(msg.payload);
            }
            if self.deliver_next().is_none() {
                return Err(Error::ProtocolState(format!(
                    "{to} waits for {} from {from} but nothing is in flight",
                    tag.name()
                )));
            }
        }
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Messages sent or received by `party` plus its local log.
    pub fn transcript_view(&self, party: PartyId) -> Result<PartyView> {
        if !self.contains(party) {
            return Err(Error::Query(format!("unknown party {party}")));
        }
        if !self.transcript.record {
            return Err(Error::Query("transcript was not recorded".into()));
        }
        Ok(PartyView {
            party,
            messages: self
                .transcript
                .messages()
                .filter(|m| m.from == party || m.to == party)
                .cloned()
                .collect(),
            local: self
                .transcript
                .local
                .get(&party)
                .cloned()
                .unwrap_or_default(),
        })
    }
}
