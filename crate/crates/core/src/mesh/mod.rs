//! Managed-flood mesh protocol: packet format, per-node state machine,
//! duplicate suppression and duty-cycle accounting.

mod node;
mod packet;

pub use node::{
    contention_delay, ContentionConfig, DeliveryReport, DropReason, DutyLedger, NodeRole, NodeState, Position,
    Reservation, RxAction, SeenCache, TxOutcome, DEFAULT_SEEN_CAPACITY, DUTY_WINDOW_MS,
};
pub use packet::{
    channel_hash, parse_range_test_payload, range_test_payload, MeshPacket, NodeId, PacketKind, BROADCAST,
    DEFAULT_HOP_LIMIT, HEADER_LEN, MAX_HOP_LIMIT, MAX_PAYLOAD,
};

use thiserror::Error;

use crate::phy::PhyError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("payload of {0} bytes exceeds the 237-byte frame budget")]
    PayloadTooLarge(usize),
    #[error("hop limit {hop_limit} / start {hop_start} out of range")]
    BadHopLimit { hop_limit: u8, hop_start: u8 },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Phy(#[from] PhyError),
}
