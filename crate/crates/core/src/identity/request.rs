//! Certificate signing requests.
//!
//! ```text
//! version          1      = 1
//! subject name     1 + n  n <= 64
//! user id          1 + n  1 <= n <= 32
//! public key       32
//! id evidence      2 + n  u16 length, n <= 4096, opaque
//! submitted at     8      i64 unix seconds
//! possession sig   64     requester's signature over all prior bytes
//! ```
//!
//! The request id is the fingerprint of the full encoding.

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::cert::{fingerprint_of, put_str, Fingerprint, Reader, Subject, MAX_NAME_LEN, MAX_USER_ID_LEN};
use super::{b64, hex16, IdentityError, KeyHandle, SecureStore};

pub const REQUEST_VERSION: u8 = 1;
pub const MAX_EVIDENCE_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RequestStatus {
    Pending,
    Approved { serial: u64 },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigningRequest {
    #[serde(with = "hex16")]
    pub request_id: Fingerprint,
    pub subject: Subject,
    #[serde(with = "b64")]
    pub public_key: [u8; 32],
    #[serde(with = "b64")]
    pub id_evidence: Vec<u8>,
    pub submitted_at: i64,
    #[serde(with = "b64")]
    pub possession_signature: [u8; 64],
    pub status: RequestStatus,
}

fn tbs(subject: &Subject, public_key: &[u8; 32], evidence: &[u8], submitted_at: i64) -> Vec<u8> {
    let mut out = vec![REQUEST_VERSION];
    put_str(&mut out, &subject.name);
    put_str(&mut out, &subject.user_id);
    out.extend_from_slice(public_key);
    out.extend_from_slice(&(evidence.len() as u16).to_be_bytes());
    out.extend_from_slice(evidence);
    out.extend_from_slice(&submitted_at.to_be_bytes());
    out
}

impl SigningRequest {
    /// Builds a pending request signed with `key` to prove possession.
    pub fn new(
        subject: Subject,
        key: &SigningKey,
        id_evidence: Vec<u8>,
        submitted_at: i64,
    ) -> Result<Self, IdentityError> {
        subject.validate()?;
        if id_evidence.len() > MAX_EVIDENCE_LEN {
            return Err(IdentityError::Malformed(format!(
                "id evidence exceeds {MAX_EVIDENCE_LEN} bytes"
            )));
        }
        let public_key = key.verifying_key().to_bytes();
        let body = tbs(&subject, &public_key, &id_evidence, submitted_at);
        let possession_signature = key.sign(&body).to_bytes();
        let mut req = Self {
            request_id: [0; 16],
            subject,
            public_key,
            id_evidence,
            submitted_at,
            possession_signature,
            status: RequestStatus::Pending,
        };
        req.request_id = fingerprint_of(&req.encode());
        Ok(req)
    }

    /// Wire form. The status is local bookkeeping and is not encoded.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = tbs(&self.subject, &self.public_key, &self.id_evidence, self.submitted_at);
        out.extend_from_slice(&self.possession_signature);
        out
    }

    /// Parses a wire request as Pending and checks the possession signature.
    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != REQUEST_VERSION {
            return Err(IdentityError::Malformed(format!(
                "unsupported request version {version}"
            )));
        }
        let name = r.str8(MAX_NAME_LEN)?;
        let user_id = r.str8(MAX_USER_ID_LEN)?;
        let public_key = r.array::<32>()?;
        let n = r.u16()? as usize;
        if n > MAX_EVIDENCE_LEN {
            return Err(IdentityError::Malformed(format!(
                "id evidence exceeds {MAX_EVIDENCE_LEN} bytes"
            )));
        }
        let id_evidence = r.take(n)?.to_vec();
        let submitted_at = r.i64()?;
        let possession_signature = r.array::<64>()?;
        r.finish()?;
        let req = Self {
            request_id: fingerprint_of(bytes),
            subject: Subject { name, user_id },
            public_key,
            id_evidence,
            submitted_at,
            possession_signature,
            status: RequestStatus::Pending,
        };
        req.subject.validate()?;
        req.verify_possession()?;
        Ok(req)
    }

    pub fn verify_possession(&self) -> Result<(), IdentityError> {
        let key = VerifyingKey::from_bytes(&self.public_key)
            .map_err(|_| IdentityError::Malformed("invalid public key".into()))?;
        let body = tbs(&self.subject, &self.public_key, &self.id_evidence, self.submitted_at);
        key.verify_strict(&body, &Signature::from_bytes(&self.possession_signature))
            .map_err(|_| IdentityError::BadSignature("signing request".into()))
    }

    pub fn is_pending(&self) -> bool {
        self.status == RequestStatus::Pending
    }
}

/// Creates a fresh key pair, stores the private half under `handle` and
/// returns the pending request carrying only the public half.
pub fn generate_identity<R: RngCore + CryptoRng>(
    subject: Subject,
    id_evidence: Vec<u8>,
    store: &mut dyn SecureStore,
    handle: &KeyHandle,
    now: i64,
    rng: &mut R,
) -> Result<(KeyHandle, SigningRequest), IdentityError> {
    subject.validate()?;
    let key = SigningKey::generate(rng);
    let request = SigningRequest::new(subject, &key, id_evidence, now)?;
    store.put(handle, &key)?;
    Ok((handle.clone(), request))
}
