//! Splitting objects into mesh payloads and putting them back together.
//!
//! Each fragment payload:
//!
//! ```text
//! object id        16     message id, leaf fingerprint or action id
//! index            1      0-based
//! count            1      1..=255
//! data             <= 219
//! ```
//!
//! The packet kind says what the object is: `ChatMessage` carries a
//! [`WireMessage`], `CertResponse` a [`CertChain`], `Moderation` a
//! [`ModerationAction`]. A `CertRequest` payload is the bare 16-byte
//! fingerprint being asked for.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::message::{Message, WireMessage};
use super::moderation::ModerationAction;
use super::MessagingError;
use crate::identity::{hex, CertChain, Fingerprint};
use crate::mesh::{PacketKind, MAX_PAYLOAD};

pub const FRAGMENT_HEADER_LEN: usize = 18;
pub const FRAGMENT_DATA_LEN: usize = MAX_PAYLOAD - FRAGMENT_HEADER_LEN;
pub const DEFAULT_REASSEMBLY_TIMEOUT_MS: i64 = 120_000;
const DONE_MEMORY: usize = 1024;

pub fn fragment(object_id: &[u8; 16], bytes: &[u8]) -> Result<Vec<Vec<u8>>, MessagingError> {
    let count = bytes.len().div_ceil(FRAGMENT_DATA_LEN).max(1);
    if count > 255 {
        return Err(MessagingError::Size {
            len: bytes.len(),
            max: 255 * FRAGMENT_DATA_LEN,
        });
    }
    let chunks: Vec<&[u8]> = if bytes.is_empty() {
        vec![&[]]
    } else {
        bytes.chunks(FRAGMENT_DATA_LEN).collect()
    };
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            let mut f = Vec::with_capacity(FRAGMENT_HEADER_LEN + data.len());
            f.extend_from_slice(object_id);
            f.push(i as u8);
            f.push(count as u8);
            f.extend_from_slice(data);
            f
        })
        .collect())
}

pub fn to_mesh_frames(message: &Message) -> Vec<Vec<u8>> {
    fragment(&message.id, &message.to_wire().encode()).expect("bounded content fits 255 fragments")
}

pub fn chain_frames(chain: &CertChain) -> Vec<Vec<u8>> {
    fragment(&chain.leaf.fingerprint(), &chain.encode()).expect("chain fits 255 fragments")
}

pub fn action_frames(action: &ModerationAction) -> Vec<Vec<u8>> {
    fragment(&action.id(), &action.encode()).expect("action fits 255 fragments")
}

/// Reassembles one message from its frames, in any order, duplicates allowed.
pub fn from_mesh_frames(frames: &[Vec<u8>]) -> Result<WireMessage, MessagingError> {
    let mut r = Reassembler::new(i64::MAX);
    let mut out = None;
    for f in frames {
        if let Some(done) = r.push(PacketKind::ChatMessage, f, 0)? {
            out = Some(done.bytes);
        }
    }
    let bytes = out.ok_or_else(|| MessagingError::Reassembly("missing fragments".into()))?;
    WireMessage::decode(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reassembled {
    pub kind: PacketKind,
    pub object_id: [u8; 16],
    pub bytes: Vec<u8>,
}

#[derive(Debug)]
struct Partial {
    count: u8,
    parts: BTreeMap<u8, Vec<u8>>,
    first_ms: i64,
}

/// Collects fragments per (kind, object id). Completed objects are
/// remembered so late duplicates are ignored.
#[derive(Debug)]
pub struct Reassembler {
    timeout_ms: i64,
    partial: HashMap<(PacketKind, [u8; 16]), Partial>,
    done: HashSet<(PacketKind, [u8; 16])>,
    done_order: VecDeque<(PacketKind, [u8; 16])>,
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(DEFAULT_REASSEMBLY_TIMEOUT_MS)
    }
}

impl Reassembler {
    pub fn new(timeout_ms: i64) -> Self {
        Self {
            timeout_ms,
            partial: HashMap::new(),
            done: HashSet::new(),
            done_order: VecDeque::new(),
        }
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }

    pub fn push(&mut self, kind: PacketKind, frame: &[u8], now_ms: i64) -> Result<Option<Reassembled>, MessagingError> {
        if frame.len() < FRAGMENT_HEADER_LEN || frame.len() > MAX_PAYLOAD {
            return Err(MessagingError::Reassembly(format!("fragment of {} bytes", frame.len())));
        }
        let id: [u8; 16] = frame[..16].try_into().unwrap();
        let (index, count) = (frame[16], frame[17]);
        if count == 0 || index >= count {
            return Err(MessagingError::Reassembly(format!("fragment {index} of {count}")));
        }
        let key = (kind, id);
        if self.done.contains(&key) {
            return Ok(None);
        }
        let p = self.partial.entry(key).or_insert_with(|| Partial {
            count,
            parts: BTreeMap::new(),
            first_ms: now_ms,
        });
        if p.count != count {
            return Err(MessagingError::Reassembly(format!(
                "object {} announced {} and {count} fragments",
                hex(&id),
                p.count
            )));
        }
        let data = &frame[FRAGMENT_HEADER_LEN..];
        match p.parts.get(&index) {
            Some(prev) if prev.as_slice() != data => {
                return Err(MessagingError::Reassembly(format!(
                    "conflicting copies of fragment {index} for {}",
                    hex(&id)
                )))
            }
            Some(_) => return Ok(None),
            None => {
                p.parts.insert(index, data.to_vec());
            }
        }
        if p.parts.len() < usize::from(p.count) {
            return Ok(None);
        }
        let p = self.partial.remove(&key).expect("present");
        self.remember(key);
        Ok(Some(Reassembled {
            kind,
            object_id: id,
            bytes: p.parts.into_values().flatten().collect(),
        }))
    }

    fn remember(&mut self, key: (PacketKind, [u8; 16])) {
        self.done.insert(key);
        self.done_order.push_back(key);
        if self.done_order.len() > DONE_MEMORY {
            if let Some(old) = self.done_order.pop_front() {
                self.done.remove(&old);
            }
        }
    }

    /// Drops objects still incomplete after the timeout and reports them.
    pub fn expire(&mut self, now_ms: i64) -> Vec<MessagingError> {
        let timeout = self.timeout_ms;
        let stale: Vec<_> = self
            .partial
            .iter()
            .filter(|(_, p)| now_ms.saturating_sub(p.first_ms) >= timeout)
            .map(|(k, _)| *k)
            .collect();
        let mut out: Vec<_> = stale
            .into_iter()
            .map(|k| {
                let p = self.partial.remove(&k).expect("present");
                MessagingError::Reassembly(format!(
                    "{:?} {}: {} of {} fragments after timeout",
                    k.0,
                    hex(&k.1),
                    p.parts.len(),
                    p.count
                ))
            })
            .collect();
        out.sort_by_key(|e| e.to_string());
        out
    }
}

/// Sender chains learned so far, by leaf fingerprint.
#[derive(Debug, Default, Clone)]
pub struct ChainCache {
    chains: HashMap<Fingerprint, CertChain>,
}

impl ChainCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, chain: CertChain) -> Fingerprint {
        let fp = chain.leaf.fingerprint();
        self.chains.insert(fp, chain);
        fp
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<&CertChain> {
        self.chains.get(fp)
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// Attaches the cached chain, or returns the fingerprint to ask for.
    pub fn resolve(&self, wire: WireMessage) -> Result<Message, (WireMessage, Fingerprint)> {
        match self.chains.get(&wire.sender_fingerprint) {
            Some(chain) => {
                let fp = wire.sender_fingerprint;
                wire.clone().attach(chain.clone()).map_err(|_| (wire, fp))
            }
            None => {
                let fp = wire.sender_fingerprint;
                Err((wire, fp))
            }
        }
    }
}
