//! Lightweight PKI: Ed25519 certificates in root → intermediary → leaf
//! chains, signing requests approved by an administrator, role flags and a
//! signed, append-only revocation list.

mod armor;
mod authority;
mod cert;
mod chain;
mod clock;
mod crl;
mod keystore;
mod request;

pub use armor::{armor, dearmor, ArmorKind};
pub use authority::{approve, Authority, AuthorityState, Lineage, Trust, LEAF_SERIAL_BASE};
pub use cert::{
    fingerprint_of, hex, unhex, CertSummary, CertTemplate, Certificate, Fingerprint, RoleFlags, Subject, CERT_VERSION,
    DEFAULT_VALIDITY_SECS, MAX_NAME_LEN, MAX_USER_ID_LEN, MAX_ZIPCODE_LEN,
};
pub(crate) use cert::{put_str, Reader};
pub use chain::{verify_chain, verify_intermediary, CertChain, ChainFailure, ChainVerdict};
pub use clock::{Clock, ManualClock, SystemClock};
pub use crl::{Revocation, RevocationList, CRL_VERSION, MAX_REASON_LEN};
pub use keystore::{FileStore, KeyHandle, MemoryStore, SecureStore};
pub use request::{generate_identity, RequestStatus, SigningRequest, MAX_EVIDENCE_LEN, REQUEST_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("not authorized: {0}")]
    Unauthorized(String),
    #[error("bad signature: {0}")]
    BadSignature(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("secure store unavailable: {0}")]
    Store(String),
}

pub type Result<T, E = IdentityError> = std::result::Result<T, E>;

/// Serde helpers for byte strings carried as base64 text.
pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: AsRef<[u8]>, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(v.as_ref()))
    }

    pub fn deserialize<'de, T: TryFrom<Vec<u8>>, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = STANDARD.decode(s.trim()).map_err(serde::de::Error::custom)?;
        T::try_from(bytes).map_err(|_| serde::de::Error::custom("wrong byte length"))
    }
}

/// Hex form for fingerprints and request ids in JSON.
pub(crate) mod hex16 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::hex(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(d)?;
        super::unhex(&s)
            .map_err(serde::de::Error::custom)?
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 16 bytes"))
    }
}
