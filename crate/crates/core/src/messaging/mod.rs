//! Signed chat: message signing and three-step validation, zip-code
//! communities with moderation, and mesh fragmentation.

mod community;
mod frames;
mod message;
mod moderation;
mod validate;

pub use community::{CommunityView, FlagNote, IngestOutcome, ModerationOutcome, QuarantineEntry, RateLimit};
pub use frames::{
    action_frames, chain_frames, fragment, from_mesh_frames, to_mesh_frames, ChainCache, Reassembled, Reassembler,
    DEFAULT_REASSEMBLY_TIMEOUT_MS, FRAGMENT_DATA_LEN, FRAGMENT_HEADER_LEN,
};
pub use message::{
    compose_and_sign, Message, MessageId, Principal, Scope, WireMessage, MAX_CONTENT_LEN, MESSAGE_VERSION,
};
pub use moderation::{ActionKind, ModerationAction, Target, ACTION_VERSION};
pub use validate::{validate, Step, Verdict};

use crate::identity::IdentityError;

#[derive(Debug, thiserror::Error)]
pub enum MessagingError {
    #[error("not authorized: {0}")]
    Unauthorized(String),
    #[error("{len} bytes exceeds the {max}-byte bound")]
    Size { len: usize, max: usize },
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("bad signature: {0}")]
    BadSignature(String),
    #[error("reassembly failed: {0}")]
    Reassembly(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}
