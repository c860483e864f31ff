//! Signed messages and their byte layouts.
//!
//! Signing bytes (big-endian, no floats):
//!
//! ```text
//! version          1      = 1
//! date             8      i64 unix milliseconds
//! id               16
//! scope            1 + 1 + n   tag (0 community, 1 direct), value length, value (n <= 32)
//! official         1      0 or 1
//! content          2 + n  u16 length, UTF-8, n <= 2000
//! sender           16     fingerprint of the sender's leaf certificate
//! ```
//!
//! Wire form: signing bytes followed by the 64-byte signature. Full form
//! appends the sender's certificate chain.

use ed25519_dalek::{Signature, Signer, SigningKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::MessagingError;
use crate::identity::{
    b64, hex, hex16, put_str, verify_chain, CertChain, Fingerprint, Reader, RoleFlags, Trust, MAX_USER_ID_LEN,
    MAX_ZIPCODE_LEN,
};

pub const MESSAGE_VERSION: u8 = 1;
pub const MAX_CONTENT_LEN: usize = 2000;
const MAX_SCOPE_LEN: usize = MAX_USER_ID_LEN;

pub type MessageId = [u8; 16];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "to", rename_all = "snake_case")]
pub enum Scope {
    /// Community chat addressed by zip code.
    Community(String),
    /// Peer-to-peer message to a user id.
    Direct(String),
}

impl Scope {
    pub fn community(zipcode: impl Into<String>) -> Self {
        Scope::Community(zipcode.into())
    }

    fn tag(&self) -> u8 {
        match self {
            Scope::Community(_) => 0,
            Scope::Direct(_) => 1,
        }
    }

    pub fn value(&self) -> &str {
        match self {
            Scope::Community(z) | Scope::Direct(z) => z,
        }
    }

    pub fn zipcode(&self) -> Option<&str> {
        match self {
            Scope::Community(z) => Some(z),
            Scope::Direct(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), MessagingError> {
        let (v, max) = match self {
            Scope::Community(z) => (z, MAX_ZIPCODE_LEN),
            Scope::Direct(u) => (u, MAX_USER_ID_LEN),
        };
        if v.is_empty() || v.len() > max {
            return Err(MessagingError::Malformed(format!(
                "scope value must be 1..={max} bytes"
            )));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn signing_bytes(
    date_ms: i64,
    id: &MessageId,
    scope: &Scope,
    official: bool,
    content: &str,
    sender: &Fingerprint,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + content.len());
    out.push(MESSAGE_VERSION);
    out.extend_from_slice(&date_ms.to_be_bytes());
    out.extend_from_slice(id);
    out.push(scope.tag());
    put_str(&mut out, scope.value());
    out.push(official as u8);
    out.extend_from_slice(&(content.len() as u16).to_be_bytes());
    out.extend_from_slice(content.as_bytes());
    out.extend_from_slice(sender);
    out
}

/// A message as carried over the mesh: the sender is named by fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub date_ms: i64,
    #[serde(with = "hex16")]
    pub id: MessageId,
    pub content: String,
    pub scope: Scope,
    pub official: bool,
    #[serde(with = "hex16")]
    pub sender_fingerprint: Fingerprint,
    #[serde(with = "b64")]
    pub signature: [u8; 64],
}

impl WireMessage {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(
            self.date_ms,
            &self.id,
            &self.scope,
            self.official,
            &self.content,
            &self.sender_fingerprint,
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessagingError> {
        let mut r = Reader::new(bytes);
        let m = Self::read(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessagingError> {
        let version = r.u8()?;
        if version != MESSAGE_VERSION {
            return Err(MessagingError::Malformed(format!(
                "unsupported message version {version}"
            )));
        }
        let date_ms = r.i64()?;
        let id = r.array::<16>()?;
        let tag = r.u8()?;
        let value = r.str8(MAX_SCOPE_LEN)?;
        let scope = match tag {
            0 => Scope::Community(value),
            1 => Scope::Direct(value),
            t => return Err(MessagingError::Malformed(format!("unknown scope tag {t}"))),
        };
        let official = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(MessagingError::Malformed(format!("official flag byte {b}"))),
        };
        let n = r.u16()? as usize;
        if n > MAX_CONTENT_LEN {
            return Err(MessagingError::Size {
                len: n,
                max: MAX_CONTENT_LEN,
            });
        }
        let content = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| MessagingError::Malformed("content is not UTF-8".into()))?;
        let sender_fingerprint = r.array::<16>()?;
        let signature = r.array::<64>()?;
        Ok(Self {
            date_ms,
            id,
            content,
            scope,
            official,
            sender_fingerprint,
            signature,
        })
    }

    /// Joins the sender's chain. The chain's leaf must match the fingerprint.
    pub fn attach(self, sender_chain: CertChain) -> Result<Message, MessagingError> {
        if sender_chain.leaf.fingerprint() != self.sender_fingerprint {
            return Err(MessagingError::Malformed(
                "certificate chain does not match the sender fingerprint".into(),
            ));
        }
        Ok(Message {
            date_ms: self.date_ms,
            id: self.id,
            content: self.content,
            scope: self.scope,
            official: self.official,
            signature: self.signature,
            sender_chain,
        })
    }
}

/// A message together with the sender's certificate chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub date_ms: i64,
    #[serde(with = "hex16")]
    pub id: MessageId,
    pub content: String,
    pub scope: Scope,
    pub official: bool,
    #[serde(with = "b64")]
    pub signature: [u8; 64],
    pub sender_chain: CertChain,
}

impl Message {
    pub fn sender_fingerprint(&self) -> Fingerprint {
        self.sender_chain.leaf.fingerprint()
    }

    pub fn sender_user_id(&self) -> &str {
        &self.sender_chain.leaf.subject.user_id
    }

    pub fn id_hex(&self) -> String {
        hex(&self.id)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(
            self.date_ms,
            &self.id,
            &self.scope,
            self.official,
            &self.content,
            &self.sender_fingerprint(),
        )
    }

    pub fn to_wire(&self) -> WireMessage {
        WireMessage {
            date_ms: self.date_ms,
            id: self.id,
            content: self.content.clone(),
            scope: self.scope.clone(),
            official: self.official,
            sender_fingerprint: self.sender_fingerprint(),
            signature: self.signature,
        }
    }

    /// Wire form followed by the chain encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.to_wire().encode();
        out.extend_from_slice(&self.sender_chain.encode());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessagingError> {
        let mut r = Reader::new(bytes);
        let wire = WireMessage::read(&mut r)?;
        let rest = r.take(bytes.len() - wire.encode().len())?;
        let chain = CertChain::decode(rest)?;
        wire.attach(chain)
    }
}

/// Someone holding a key, with or without an approved chain.
#[derive(Clone)]
pub struct Principal {
    pub key: SigningKey,
    pub chain: Option<CertChain>,
}

impl Principal {
    pub fn new(key: SigningKey, chain: CertChain) -> Self {
        Self {
            key,
            chain: Some(chain),
        }
    }

    /// Holds a key but no certificate: may read, may not post.
    pub fn unauthenticated(key: SigningKey) -> Self {
        Self { key, chain: None }
    }

    /// Returns the chain if it is valid now and matches the key.
    pub fn authorised_chain(&self, trust: &Trust, now_s: i64) -> Result<&CertChain, MessagingError> {
        let chain = self
            .chain
            .as_ref()
            .ok_or_else(|| MessagingError::Unauthorized("unauthenticated users may read but not post".into()))?;
        if let crate::identity::ChainVerdict::Invalid { reason } = verify_chain(chain, &trust.root, &trust.crl, now_s) {
            return Err(MessagingError::Unauthorized(format!("sender chain invalid: {reason}")));
        }
        if chain.leaf.public_key != self.key.verifying_key().to_bytes() {
            return Err(MessagingError::Unauthorized("key does not match certificate".into()));
        }
        if !chain.leaf.has(RoleFlags::AUTHENTICATED) {
            return Err(MessagingError::Unauthorized(
                "certificate lacks the authenticated role".into(),
            ));
        }
        Ok(chain)
    }
}

impl std::fmt::Debug for Principal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Principal")
            .field("public_key", &hex(&self.key.verifying_key().to_bytes()))
            .field("chain", &self.chain.as_ref().map(|c| c.leaf.serial))
            .finish()
    }
}

/// Signs `content` for `scope`. The official flag is set exactly when the
/// sender's certificate was issued by the official intermediary.
pub fn compose_and_sign<R: RngCore + ?Sized>(
    content: &str,
    scope: Scope,
    sender: &Principal,
    trust: &Trust,
    now_ms: i64,
    rng: &mut R,
) -> Result<Message, MessagingError> {
    let chain = sender.authorised_chain(trust, now_ms.div_euclid(1000))?;
    if content.len() > MAX_CONTENT_LEN {
        return Err(MessagingError::Size {
            len: content.len(),
            max: MAX_CONTENT_LEN,
        });
    }
    scope.validate()?;
    let mut id = [0u8; 16];
    rng.fill_bytes(&mut id);
    let official = chain.intermediary.has(RoleFlags::OFFICIAL_INTERMEDIARY);
    let body = signing_bytes(now_ms, &id, &scope, official, content, &chain.leaf.fingerprint());
    let signature = sender.key.sign(&body).to_bytes();
    Ok(Message {
        date_ms: now_ms,
        id,
        content: content.to_string(),
        scope,
        official,
        signature,
        sender_chain: chain.clone(),
    })
}

pub(crate) fn signature_of(bytes: &[u8; 64]) -> Signature {
    Signature::from_bytes(bytes)
}
