//! Canonical over-the-air encoding of a mesh packet.
//!
//! ```text
//! offset  size  field
//!      0     4  packet_id      u32 BE
//!      4     4  origin         u32 BE
//!      8     4  destination    u32 BE (0xFFFFFFFF = broadcast)
//!     12     1  hop_limit      remaining rebroadcasts
//!     13     1  hop_start      hop_limit at origin
//!     14     1  kind
//!     15     1  channel hash   XOR of the channel name bytes
//!     16     2  payload length u16 BE (<= 237)
//!     18     n  payload
//! ```
//!
//! A full frame never exceeds the 255-byte LoRa payload.

use serde::{Deserialize, Serialize};

use super::MeshError;

pub type NodeId = u32;

pub const BROADCAST: NodeId = 0xFFFF_FFFF;
pub const HEADER_LEN: usize = 18;
pub const MAX_PAYLOAD: usize = 237;
pub const MAX_HOP_LIMIT: u8 = 7;
pub const DEFAULT_HOP_LIMIT: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    RangeTestSeq,
    ChatMessage,
    Telemetry,
    Ack,
    /// Asks peers for the certificate behind a 16-byte fingerprint.
    CertRequest,
    CertResponse,
    /// A signed moderation action, fragmented like a chat message.
    Moderation,
}

impl PacketKind {
    pub fn to_byte(self) -> u8 {
        match self {
            PacketKind::RangeTestSeq => 1,
            PacketKind::ChatMessage => 2,
            PacketKind::Telemetry => 3,
            PacketKind::Ack => 4,
            PacketKind::CertRequest => 5,
            PacketKind::CertResponse => 6,
            PacketKind::Moderation => 7,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => PacketKind::RangeTestSeq,
            2 => PacketKind::ChatMessage,
            3 => PacketKind::Telemetry,
            4 => PacketKind::Ack,
            5 => PacketKind::CertRequest,
            6 => PacketKind::CertResponse,
            7 => PacketKind::Moderation,
            _ => return None,
        })
    }
}

pub fn channel_hash(name: &str) -> u8 {
    name.bytes().fold(0u8, |acc, b| acc ^ b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshPacket {
    pub packet_id: u32,
    pub origin: NodeId,
    pub destination: NodeId,
    pub hop_limit: u8,
    pub hop_start: u8,
    pub channel: u8,
    pub kind: PacketKind,
    pub payload: Vec<u8>,
}

impl MeshPacket {
    pub fn broadcast(
        packet_id: u32,
        origin: NodeId,
        channel: &str,
        kind: PacketKind,
        hop_limit: u8,
        payload: Vec<u8>,
    ) -> Result<Self, MeshError> {
        let p = Self {
            packet_id,
            origin,
            destination: BROADCAST,
            hop_limit,
            hop_start: hop_limit,
            channel: channel_hash(channel),
            kind,
            payload,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(MeshError::PayloadTooLarge(self.payload.len()));
        }
        if self.hop_start > MAX_HOP_LIMIT || self.hop_limit > self.hop_start {
            return Err(MeshError::BadHopLimit {
                hop_limit: self.hop_limit,
                hop_start: self.hop_start,
            });
        }
        Ok(())
    }

    pub fn is_broadcast(&self) -> bool {
        self.destination == BROADCAST
    }

    /// Number of links traversed by the time a node hears this copy.
    pub fn hops_on_receive(&self) -> u8 {
        self.hop_start - self.hop_limit + 1
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.packet_id.to_be_bytes());
        out.extend_from_slice(&self.origin.to_be_bytes());
        out.extend_from_slice(&self.destination.to_be_bytes());
        out.push(self.hop_limit);
        out.push(self.hop_start);
        out.push(self.kind.to_byte());
        out.push(self.channel);
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MeshError> {
        if bytes.len() < HEADER_LEN {
            return Err(MeshError::Malformed("frame shorter than header".into()));
        }
        let be32 = |o: usize| u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let kind = PacketKind::from_byte(bytes[14])
            .ok_or_else(|| MeshError::Malformed(format!("unknown packet kind {}", bytes[14])))?;
        let len = u16::from_be_bytes([bytes[16], bytes[17]]) as usize;
        if bytes.len() != HEADER_LEN + len {
            return Err(MeshError::Malformed(format!(
                "payload length {len} disagrees with frame of {} bytes",
                bytes.len()
            )));
        }
        let p = Self {
            packet_id: be32(0),
            origin: be32(4),
            destination: be32(8),
            hop_limit: bytes[12],
            hop_start: bytes[13],
            kind,
            channel: bytes[15],
            payload: bytes[HEADER_LEN..].to_vec(),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Range-test payload text, e.g. `seq 5`.
pub fn range_test_payload(seq: u32) -> Vec<u8> {
    format!("seq {seq}").into_bytes()
}

/// Parses `seq N` (leading zeros allowed).
pub fn parse_range_test_payload(payload: &str) -> Option<u32> {
    let rest = payload.trim().strip_prefix("seq")?;
    let digits = rest.trim();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_big_endian_and_fixed_order() {
        let p = MeshPacket {
            packet_id: 0x0102_0304,
            origin: 0x0A0B_0C0D,
            destination: BROADCAST,
            hop_limit: 2,
            hop_start: 3,
            channel: channel_hash("LongFast"),
            kind: PacketKind::RangeTestSeq,
            payload: b"seq 5".to_vec(),
        };
        let bytes = p.encode();
        assert_eq!(&bytes[..4], &[1, 2, 3, 4]);
        assert_eq!(&bytes[4..8], &[0x0A, 0x0B, 0x0C, 0x0D]);
        assert_eq!(&bytes[8..12], &[0xFF; 4]);
        assert_eq!(&bytes[12..16], &[2, 3, 1, channel_hash("LongFast")]);
        assert_eq!(&bytes[16..18], &[0, 5]);
        assert_eq!(bytes.len(), 23);
        assert_eq!(MeshPacket::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_oversize_and_bad_hops() {
        assert!(matches!(
            MeshPacket::broadcast(1, 1, "c", PacketKind::ChatMessage, 3, vec![0; 238]),
            Err(MeshError::PayloadTooLarge(238))
        ));
        assert!(MeshPacket::broadcast(1, 1, "c", PacketKind::ChatMessage, 8, vec![]).is_err());
        let full = MeshPacket::broadcast(1, 1, "c", PacketKind::ChatMessage, 7, vec![0; 237]).unwrap();
        assert_eq!(full.encode().len(), 255);
        assert!(MeshPacket::decode(&[0; 10]).is_err());
        let mut bytes = full.encode();
        bytes.pop();
        assert!(MeshPacket::decode(&bytes).is_err());
    }

    #[test]
    fn range_test_payload_parsing() {
        assert_eq!(parse_range_test_payload("seq 5"), Some(5));
        assert_eq!(parse_range_test_payload("seq 007"), Some(7));
        assert_eq!(parse_range_test_payload(" seq 12 "), Some(12));
        assert_eq!(parse_range_test_payload("seq"), None);
        assert_eq!(parse_range_test_payload("seq -1"), None);
        assert_eq!(parse_range_test_payload("hello"), None);
        assert_eq!(range_test_payload(5), b"seq 5");
    }

    proptest! {
        #[test]
        fn encode_decode_inverse(
            id in any::<u32>(), origin in any::<u32>(), dest in any::<u32>(),
            start in 0u8..=7, used in 0u8..=7, chan in any::<u8>(), kind in 1u8..=6,
            payload in proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD),
        ) {
            let p = MeshPacket {
                packet_id: id, origin, destination: dest,
                hop_limit: start.saturating_sub(used), hop_start: start,
                channel: chan, kind: PacketKind::from_byte(kind).unwrap(), payload,
            };
            let bytes = p.encode();
            prop_assert!(bytes.len() <= 255);
            prop_assert_eq!(MeshPacket::decode(&bytes).unwrap(), p);
        }
    }
}
