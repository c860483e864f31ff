//! The long-running node: identity and messaging wired onto a transport
//! selector that chooses between the mesh and a cellular relay.
//!
//! [`NodeCore`] is a plain state machine. It never touches a socket for the
//! mesh: outgoing packets are collected with [`NodeCore::take_mesh_out`] and
//! incoming ones handed to [`NodeCore::on_mesh_packet`], so anything that
//! moves [`MeshPacket`](crate::mesh::MeshPacket)s can sit underneath. In this
//! crate that is the in-process [`MeshHub`].

mod config;
mod hub;
mod node;
mod queue;
mod transport;

pub use config::{relay_host_port, NodeConfig, ProbeConfig};
pub use hub::{HubStats, MeshHub};
pub use node::{
    load_root, outcome_label, probe_from_config, CellularLink, CommunitySummary, IdentityStatus, MessageDetail,
    MessageView, NearbyNode, NoCellular, NodeCore, NodeEvent, NodeSnapshot, PostReceipt, RecordingLink, RelayEnvelope,
    RelayKind, SentRecord, StoredMessage, Via, IDENTITY_KEY_HANDLE, SNAPSHOT_FILE,
};
pub use queue::{Outbound, OutboundQueue, Queued, DEFAULT_QUEUE_CAPACITY};
pub use transport::{
    mesh_only, prefer_cellular, select_path, CellularProbe, Path, PathSelector, Policy, ScriptedProbe, TcpProbe,
    TimelineStep, TransportStatus, DEFAULT_DWELL_MS,
};

use crate::identity::IdentityError;
use crate::mesh::MeshError;
use crate::messaging::MessagingError;

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Messaging(#[from] MessagingError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("read-only: {0}")]
    ReadOnly(String),
    #[error("rate limit reached for this community")]
    RateLimited,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
