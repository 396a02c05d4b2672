//! Process identities, virtual time, the two ALIVE message formats and their
//! size-accounted wire encodings.
//!
//! Time is counted in integer ticks of the global reference clock. Processes
//! never observe it directly; their local clocks are the global clock plus a
//! constant offset, which only shifts the phase of their periodic ticks.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{DecodeError, ModelError};

/// Identity of a process. Ids are 1-based and a smaller id is preferred as
/// leader.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ProcessId(u32);

impl ProcessId {
    pub fn new(id: u32) -> Result<Self, ModelError> {
        if id == 0 {
            return Err(ModelError::ZeroProcessId);
        }
        Ok(Self(id))
    }

    /// # Panics
    /// Panics on `id == 0`. Meant for literals in tests and fixed topologies.
    pub const fn from_u32(id: u32) -> Self {
        assert!(id != 0, "process ids are 1-based");
        Self(id)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    /// Zero-based index for dense per-process tables.
    pub const fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        Self(u32::try_from(index + 1).expect("process index overflows u32"))
    }
}

impl TryFrom<u32> for ProcessId {
    type Error = ModelError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ProcessId> for u32 {
    fn from(id: ProcessId) -> Self {
        id.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A point on the global reference clock.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// A span of ticks.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Duration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn saturating_since(self, earlier: SimTime) -> Duration {
        Duration(self.0.saturating_sub(earlier.0))
    }
}

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn ticks(self) -> u64 {
        self.0
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl Add for Duration {
    type Output = Duration;

    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl Mul<u64> for Duration {
    type Output = Duration;

    fn mul(self, rhs: u64) -> Duration {
        Duration(self.0 * rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

/// Timing constants of an (eventually) ADD channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddParams {
    /// At least one of every `k` consecutive messages is timely.
    pub k: u32,
    /// Latency bound for timely messages.
    pub d: Duration,
    /// Before this instant the channel may behave arbitrarily.
    pub stabilization: SimTime,
}

impl AddParams {
    pub fn new(k: u32, d: Duration, stabilization: SimTime) -> Result<Self, ModelError> {
        if k < 1 {
            return Err(ModelError::InvalidK(k));
        }
        Ok(Self { k, d, stabilization })
    }
}

/// Upper bound on the gap between two consecutive receptions on a stabilized
/// ADD channel whose sender transmits every `t` ticks: `(k - 1) * t + d`.
pub fn compute_delta(k: u32, d: Duration, t: Duration) -> Result<Duration, ModelError> {
    if k < 1 {
        return Err(ModelError::InvalidK(k));
    }
    if t.0 < 1 {
        return Err(ModelError::InvalidPeriod(t.0));
    }
    Ok(t * u64::from(k - 1) + d)
}

/// `ALIVE(leader, hopbound)` of the known-membership protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AliveKnown {
    pub leader: ProcessId,
    pub hopbound: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    New,
    Ack,
}

/// Per-channel set of membership announcements and acknowledgements.
pub type PendingSet = BTreeSet<(Label, ProcessId)>;

/// `ALIVE(leader, hopbound, pending)` of the unknown-membership protocol.
///
/// `leader` is `None` for the `ALIVE(⊥, ⊥, pending)` form; the pair type makes
/// "both present or both absent" unrepresentable otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliveUnknown {
    pub leader: Option<(ProcessId, u32)>,
    pub pending: PendingSet,
    /// Sender-side sequence number, only present with the staleness guard on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

/// Either protocol's message, as carried by the simulated network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum WireMessage {
    Known(AliveKnown),
    Unknown(AliveUnknown),
}

impl WireMessage {
    /// The leader id carried by the message, if any.
    pub fn leader(&self) -> Option<ProcessId> {
        match self {
            WireMessage::Known(m) => Some(m.leader),
            WireMessage::Unknown(m) => m.leader.map(|(l, _)| l),
        }
    }

    pub fn hopbound(&self) -> Option<u32> {
        match self {
            WireMessage::Known(m) => Some(m.hopbound),
            WireMessage::Unknown(m) => m.leader.map(|(_, hb)| hb),
        }
    }

    /// Encoded size in bytes; `n` is the system size used by the
    /// known-membership encoding.
    pub fn encoded_len(&self, n: u32) -> usize {
        match self {
            WireMessage::Known(_) => known_encoded_len(n),
            WireMessage::Unknown(m) => unknown_encoded_len(m),
        }
    }
}

/// Number of bits needed to write every integer in `0..=n`, i.e.
/// `ceil(log2(n + 1))`.
pub const fn field_width(n: u32) -> u32 {
    u32::BITS - n.leading_zeros()
}

/// Byte length of an encoded known-membership message for system size `n`.
pub const fn known_encoded_len(n: u32) -> usize {
    (2 * field_width(n) as usize).div_ceil(8)
}

/// Bit budget for an identity plus a hopbound in a system of `n`.
pub const fn size_bound_bits(n: u32) -> u32 {
    2 * field_width(n)
}

/// Encodes `msg` as two `field_width(n)`-bit big-endian fields, padded with
/// zero bits to a whole byte.
pub fn encode_known(msg: &AliveKnown, n: u32) -> Result<Vec<u8>, ModelError> {
    check_known(msg, n)?;
    let width = field_width(n);
    let mut w = BitWriter::default();
    w.push(msg.leader.get().into(), width);
    w.push(msg.hopbound.into(), width);
    Ok(w.finish())
}

pub fn decode_known(bytes: &[u8], n: u32) -> Result<AliveKnown, DecodeError> {
    if n < 2 {
        return Err(DecodeError::Field("system size below 2 carries no messages"));
    }
    if bytes.len() != known_encoded_len(n) {
        return Err(DecodeError::Length {
            expected: known_encoded_len(n),
            actual: bytes.len(),
        });
    }
    let width = field_width(n);
    let mut r = BitReader::new(bytes);
    let leader = r.take(width)?;
    let hopbound = r.take(width)?;
    if r.remaining_nonzero() {
        return Err(DecodeError::Padding);
    }
    let leader = u32::try_from(leader).map_err(|_| DecodeError::Field("leader"))?;
    let hopbound = u32::try_from(hopbound).map_err(|_| DecodeError::Field("hopbound"))?;
    let msg = AliveKnown {
        leader: ProcessId::new(leader).map_err(|_| DecodeError::Field("leader"))?,
        hopbound,
    };
    check_known(&msg, n).map_err(|_| DecodeError::Field("out of range"))?;
    Ok(msg)
}

fn check_known(msg: &AliveKnown, n: u32) -> Result<(), ModelError> {
    if n < 2 {
        return Err(ModelError::SystemTooSmall(n));
    }
    if msg.leader.get() > n {
        return Err(ModelError::LeaderOutOfRange { leader: msg.leader.get(), n });
    }
    if msg.hopbound < 1 || msg.hopbound > n - 1 {
        return Err(ModelError::HopboundOutOfRange { hopbound: msg.hopbound, n });
    }
    Ok(())
}

// Flag byte of the unknown-membership encoding.
const FLAG_LEADER: u8 = 0x80;
const FLAG_PENDING: u8 = 0x40;
const FLAG_SEQ: u8 = 0x20;
const WIDTH_MASK: u8 = 0x1f;

/// Encodes an unknown-membership message.
///
/// Layout: one flag byte (`leader`, `pending`, `seq` presence bits and the
/// leader-field width minus one in the low five bits), then the
/// leader/hopbound pair bit-packed at that width, then the optional sequence
/// number as a LEB128 varint, then the optional pending set as a varint count
/// followed by one varint `id << 1 | label` per pair in ascending order.
///
/// The width is the bit length of the larger of the two fields, so the
/// leader part never exceeds the known-membership size for any `n` that
/// bounds both fields.
pub fn encode_unknown(msg: &AliveUnknown) -> Vec<u8> {
    let mut out = Vec::with_capacity(unknown_encoded_len(msg));
    let mut flag = 0u8;
    let width = msg.leader.map(|(l, hb)| leader_width(l, hb));
    if let Some(w) = width {
        flag |= FLAG_LEADER | ((w - 1) as u8 & WIDTH_MASK);
    }
    if !msg.pending.is_empty() {
        flag |= FLAG_PENDING;
    }
    if msg.seq.is_some() {
        flag |= FLAG_SEQ;
    }
    out.push(flag);
    if let (Some((leader, hb)), Some(w)) = (msg.leader, width) {
        let mut bits = BitWriter::default();
        bits.push(leader.get().into(), w);
        bits.push(hb.into(), w);
        out.extend(bits.finish());
    }
    if let Some(seq) = msg.seq {
        put_varint(&mut out, seq);
    }
    if !msg.pending.is_empty() {
        put_varint(&mut out, msg.pending.len() as u64);
        let mut codes: Vec<u64> = msg.pending.iter().map(|&(l, id)| pair_code(l, id)).collect();
        codes.sort_unstable();
        for code in codes {
            put_varint(&mut out, code);
        }
    }
    out
}

/// Byte length of [`encode_unknown`] without allocating.
pub fn unknown_encoded_len(msg: &AliveUnknown) -> usize {
    let mut len = 1;
    if let Some((leader, hb)) = msg.leader {
        len += (2 * leader_width(leader, hb) as usize).div_ceil(8);
    }
    if let Some(seq) = msg.seq {
        len += varint_len(seq);
    }
    if !msg.pending.is_empty() {
        len += varint_len(msg.pending.len() as u64);
        len += msg
            .pending
            .iter()
            .map(|&(label, id)| varint_len(pair_code(label, id)))
            .sum::<usize>();
    }
    len
}

pub fn decode_unknown(bytes: &[u8]) -> Result<AliveUnknown, DecodeError> {
    let (&flag, mut rest) = bytes.split_first().ok_or(DecodeError::Truncated)?;
    let has_leader = flag & FLAG_LEADER != 0;
    if !has_leader && flag & WIDTH_MASK != 0 {
        return Err(DecodeError::Field("width set without leader"));
    }
    let leader = if has_leader {
        let width = u32::from(flag & WIDTH_MASK) + 1;
        let nbytes = (2 * width as usize).div_ceil(8);
        if rest.len() < nbytes {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = rest.split_at(nbytes);
        rest = tail;
        let mut r = BitReader::new(head);
        let leader = r.take(width)?;
        let hb = r.take(width)?;
        if r.remaining_nonzero() {
            return Err(DecodeError::Padding);
        }
        let leader = u32::try_from(leader).map_err(|_| DecodeError::Field("leader"))?;
        let hb = u32::try_from(hb).map_err(|_| DecodeError::Field("hopbound"))?;
        let leader = ProcessId::new(leader).map_err(|_| DecodeError::Field("leader"))?;
        if hb == 0 {
            return Err(DecodeError::Field("hopbound"));
        }
        if leader_width(leader, hb) != width {
            return Err(DecodeError::Field("non-canonical width"));
        }
        Some((leader, hb))
    } else {
        None
    };
    let seq = if flag & FLAG_SEQ != 0 {
        Some(take_varint(&mut rest)?)
    } else {
        None
    };
    let mut pending = PendingSet::new();
    if flag & FLAG_PENDING != 0 {
        let count = take_varint(&mut rest)?;
        if count == 0 {
            return Err(DecodeError::Field("empty pending set flagged"));
        }
        let mut prev = None;
        for _ in 0..count {
            let code = take_varint(&mut rest)?;
            if prev.is_some_and(|p| p >= code) {
                return Err(DecodeError::Field("pending pairs not strictly ascending"));
            }
            prev = Some(code);
            let label = if code & 1 == 0 { Label::New } else { Label::Ack };
            let id = u32::try_from(code >> 1).map_err(|_| DecodeError::Field("pending id"))?;
            let id = ProcessId::new(id).map_err(|_| DecodeError::Field("pending id"))?;
            pending.insert((label, id));
        }
    }
    if !rest.is_empty() {
        return Err(DecodeError::Trailing(rest.len()));
    }
    Ok(AliveUnknown { leader, pending, seq })
}

fn leader_width(leader: ProcessId, hb: u32) -> u32 {
    field_width(leader.get().max(hb)).max(1)
}

// Ordering of codes matches the BTreeSet order only within one label, so the
// encoder sorts by code instead of relying on set order.
fn pair_code(label: Label, id: ProcessId) -> u64 {
    (u64::from(id.get()) << 1) | u64::from(label == Label::Ack)
}

fn varint_len(mut v: u64) -> usize {
    let mut len = 1;
    while v >= 0x80 {
        v >>= 7;
        len += 1;
    }
    len
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn take_varint(input: &mut &[u8]) -> Result<u64, DecodeError> {
    let mut value = 0u64;
    for (i, &byte) in input.iter().enumerate() {
        if i == 9 && byte > 1 {
            return Err(DecodeError::Field("varint overflow"));
        }
        value |= u64::from(byte & 0x7f) << (7 * i);
        if byte & 0x80 == 0 {
            if i > 0 && byte == 0 {
                return Err(DecodeError::Field("non-minimal varint"));
            }
            *input = &input[i + 1..];
            return Ok(value);
        }
    }
    Err(DecodeError::Truncated)
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: u32) {
        for bit in (0..width).rev() {
            if self.used.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> bit) & 1 == 1 {
                let last = self.bytes.last_mut().expect("byte pushed above");
                *last |= 0x80 >> (self.used % 8);
            }
            self.used += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, width: u32) -> Result<u64, DecodeError> {
        let mut value = 0u64;
        for _ in 0..width {
            let byte = *self.bytes.get(self.pos / 8).ok_or(DecodeError::Truncated)?;
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            value = (value << 1) | u64::from(bit);
            self.pos += 1;
        }
        Ok(value)
    }

    fn remaining_nonzero(&self) -> bool {
        (self.pos..self.bytes.len() * 8)
            .any(|p| (self.bytes[p / 8] >> (7 - p % 8)) & 1 == 1)
    }
}
