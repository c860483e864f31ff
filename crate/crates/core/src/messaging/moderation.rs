//! Signed moderation actions.
//!
//! ```text
//! version          1      = 1
//! date             8      i64 unix milliseconds
//! zipcode          1 + n
//! target           1 + ...  0: message id (16), 1: user id (1 + n)
//! action           1 + ...  0 flag + reason (1 + n), 1 hide,
//!                           2 rate limit + window s (u32) + max (u32), 3 delete
//! actor            16     fingerprint of the actor's leaf certificate
//! ```
//!
//! The action id is the fingerprint of these bytes. Wire form appends the
//! signature and the actor's chain.

use ed25519_dalek::Signer;
use serde::{Deserialize, Serialize};

use super::message::{signature_of, MessageId, Principal};
use super::MessagingError;
use crate::identity::{
    b64, fingerprint_of, hex16, put_str, CertChain, Fingerprint, Reader, RoleFlags, Trust, MAX_REASON_LEN,
    MAX_USER_ID_LEN, MAX_ZIPCODE_LEN,
};

pub const ACTION_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Message {
        #[serde(with = "hex16")]
        id: MessageId,
    },
    User {
        user_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionKind {
    Flag {
        reason: String,
    },
    Hide,
    RateLimit {
        window_s: u32,
        max: u32,
    },
    /// Administrators only.
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationAction {
    pub date_ms: i64,
    pub zipcode: String,
    pub target: Target,
    pub kind: ActionKind,
    #[serde(with = "b64")]
    pub signature: [u8; 64],
    pub actor_chain: CertChain,
}

fn signing_bytes(date_ms: i64, zipcode: &str, target: &Target, kind: &ActionKind, actor: &Fingerprint) -> Vec<u8> {
    let mut out = vec![ACTION_VERSION];
    out.extend_from_slice(&date_ms.to_be_bytes());
    put_str(&mut out, zipcode);
    match target {
        Target::Message { id } => {
            out.push(0);
            out.extend_from_slice(id);
        }
        Target::User { user_id } => {
            out.push(1);
            put_str(&mut out, user_id);
        }
    }
    match kind {
        ActionKind::Flag { reason } => {
            out.push(0);
            put_str(&mut out, reason);
        }
        ActionKind::Hide => out.push(1),
        ActionKind::RateLimit { window_s, max } => {
            out.push(2);
            out.extend_from_slice(&window_s.to_be_bytes());
            out.extend_from_slice(&max.to_be_bytes());
        }
        ActionKind::Delete => out.push(3),
    }
    out.extend_from_slice(actor);
    out
}

fn check_fields(zipcode: &str, target: &Target, kind: &ActionKind) -> Result<(), MessagingError> {
    if zipcode.is_empty() || zipcode.len() > MAX_ZIPCODE_LEN {
        return Err(MessagingError::Malformed("zipcode must be 1..=10 bytes".into()));
    }
    match (target, kind) {
        (Target::User { user_id }, ActionKind::RateLimit { window_s, max }) => {
            if user_id.is_empty() || user_id.len() > MAX_USER_ID_LEN {
                return Err(MessagingError::Malformed("bad user id".into()));
            }
            if *window_s == 0 || *max == 0 {
                return Err(MessagingError::Malformed(
                    "rate limit needs a window and a maximum".into(),
                ));
            }
        }
        (Target::Message { .. }, ActionKind::Flag { reason }) if reason.len() > MAX_REASON_LEN => {
            return Err(MessagingError::Malformed("flag reason too long".into()));
        }
        (Target::Message { .. }, ActionKind::Flag { .. } | ActionKind::Hide | ActionKind::Delete) => {}
        _ => return Err(MessagingError::Malformed("action does not apply to this target".into())),
    }
    Ok(())
}

impl ModerationAction {
    pub fn sign(
        kind: ActionKind,
        target: Target,
        zipcode: &str,
        actor: &Principal,
        trust: &Trust,
        now_ms: i64,
    ) -> Result<Self, MessagingError> {
        let chain = actor.authorised_chain(trust, now_ms.div_euclid(1000))?;
        check_fields(zipcode, &target, &kind)?;
        let body = signing_bytes(now_ms, zipcode, &target, &kind, &chain.leaf.fingerprint());
        Ok(Self {
            date_ms: now_ms,
            zipcode: zipcode.to_string(),
            target,
            kind,
            signature: actor.key.sign(&body).to_bytes(),
            actor_chain: chain.clone(),
        })
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(
            self.date_ms,
            &self.zipcode,
            &self.target,
            &self.kind,
            &self.actor_chain.leaf.fingerprint(),
        )
    }

    pub fn id(&self) -> Fingerprint {
        fingerprint_of(&self.signing_bytes())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature);
        out.extend_from_slice(&self.actor_chain.encode());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessagingError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != ACTION_VERSION {
            return Err(MessagingError::Malformed(format!(
                "unsupported action version {version}"
            )));
        }
        let date_ms = r.i64()?;
        let zipcode = r.str8(MAX_ZIPCODE_LEN)?;
        let target = match r.u8()? {
            0 => Target::Message { id: r.array::<16>()? },
            1 => Target::User {
                user_id: r.str8(MAX_USER_ID_LEN)?,
            },
            t => return Err(MessagingError::Malformed(format!("unknown target tag {t}"))),
        };
        let kind = match r.u8()? {
            0 => ActionKind::Flag {
                reason: r.str8(MAX_REASON_LEN)?,
            },
            1 => ActionKind::Hide,
            2 => ActionKind::RateLimit {
                window_s: r.u32()?,
                max: r.u32()?,
            },
            3 => ActionKind::Delete,
            t => return Err(MessagingError::Malformed(format!("unknown action tag {t}"))),
        };
        let actor = r.array::<16>()?;
        let signature = r.array::<64>()?;
        let rest = r.take(bytes.len() - (signing_bytes(date_ms, &zipcode, &target, &kind, &actor).len() + 64))?;
        let actor_chain = CertChain::decode(rest)?;
        if actor_chain.leaf.fingerprint() != actor {
            return Err(MessagingError::Malformed(
                "actor chain does not match fingerprint".into(),
            ));
        }
        Ok(Self {
            date_ms,
            zipcode,
            target,
            kind,
            signature,
            actor_chain,
        })
    }

    /// Signature, actor chain, and role: administrators may act anywhere,
    /// moderators only in their own zip code and never delete.
    pub fn check_authority(&self, trust: &Trust, at_s: i64) -> Result<(), MessagingError> {
        check_fields(&self.zipcode, &self.target, &self.kind)?;
        let leaf = &self.actor_chain.leaf;
        let key = leaf.verifying_key()?;
        key.verify_strict(&self.signing_bytes(), &signature_of(&self.signature))
            .map_err(|_| MessagingError::BadSignature("moderation action".into()))?;
        if let crate::identity::ChainVerdict::Invalid { reason } =
            crate::identity::verify_chain(&self.actor_chain, &trust.root, &trust.crl, at_s)
        {
            return Err(MessagingError::Unauthorized(format!("actor chain invalid: {reason}")));
        }
        if leaf.has(RoleFlags::ADMINISTRATOR) {
            return Ok(());
        }
        if matches!(self.kind, ActionKind::Delete) {
            return Err(MessagingError::Unauthorized(
                "only administrators delete messages".into(),
            ));
        }
        if leaf.has(RoleFlags::MODERATOR) && leaf.zipcode_scope.as_deref() == Some(self.zipcode.as_str()) {
            return Ok(());
        }
        Err(MessagingError::Unauthorized(format!(
            "actor is not a moderator of community {}",
            self.zipcode
        )))
    }
}
