//! Signed revocation list.
//!
//! ```text
//! version          1      = 1
//! issuer cert      2 + n  u16 length + certificate encoding (n = 0: unsigned, empty list)
//! entry count      4      u32
//! entries          count x (serial u64, revoked_at i64, reason 1 + n, n <= 64)
//! signature        64     issuer's signature over all prior bytes (absent when unsigned)
//! ```

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey};
use serde::{Deserialize, Serialize};

use super::cert::{Certificate, Reader, RoleFlags};
use super::IdentityError;

pub const CRL_VERSION: u8 = 1;
pub const MAX_REASON_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revocation {
    pub serial: u64,
    pub revoked_at: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RevocationList {
    issuer: Option<Certificate>,
    entries: BTreeMap<u64, Revocation>,
    signature: Option<[u8; 64]>,
}

impl RevocationList {
    /// Unsigned, empty list: what a node knows before it has seen any CRL.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn issuer(&self) -> Option<&Certificate> {
        self.issuer.as_ref()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Revocation> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_revoked(&self, serial: u64) -> bool {
        self.entries.contains_key(&serial)
    }

    /// Adds `serial` and re-signs. Revoking an already revoked serial leaves
    /// the list unchanged.
    pub fn revoke(
        &mut self,
        serial: u64,
        reason: &str,
        at: i64,
        authority: &Certificate,
        key: &SigningKey,
    ) -> Result<(), IdentityError> {
        if !authority
            .role_flags
            .intersects(RoleFlags::ROOT | RoleFlags::ADMINISTRATOR)
        {
            return Err(IdentityError::Unauthorized(format!(
                "certificate {} may not revoke",
                authority.serial
            )));
        }
        if authority.public_key != key.verifying_key().to_bytes() {
            return Err(IdentityError::Unauthorized(
                "key does not match authority certificate".into(),
            ));
        }
        if reason.len() > MAX_REASON_LEN {
            return Err(IdentityError::Malformed(format!(
                "reason exceeds {MAX_REASON_LEN} bytes"
            )));
        }
        if self.entries.contains_key(&serial) {
            return Ok(());
        }
        self.entries.entry(serial).or_insert_with(|| Revocation {
            serial,
            revoked_at: at,
            reason: reason.to_string(),
        });
        self.issuer = Some(authority.clone());
        self.signature = Some(key.sign(&self.tbs_bytes()).to_bytes());
        Ok(())
    }

    fn tbs_bytes(&self) -> Vec<u8> {
        let mut out = vec![CRL_VERSION];
        let issuer = self.issuer.as_ref().map(Certificate::encode).unwrap_or_default();
        out.extend_from_slice(&(issuer.len() as u16).to_be_bytes());
        out.extend_from_slice(&issuer);
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for e in self.entries.values() {
            out.extend_from_slice(&e.serial.to_be_bytes());
            out.extend_from_slice(&e.revoked_at.to_be_bytes());
            out.push(e.reason.len() as u8);
            out.extend_from_slice(e.reason.as_bytes());
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.tbs_bytes();
        if let Some(sig) = &self.signature {
            out.extend_from_slice(sig);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != CRL_VERSION {
            return Err(IdentityError::Malformed(format!("unsupported CRL version {version}")));
        }
        let issuer_len = r.u16()? as usize;
        let issuer = if issuer_len == 0 {
            None
        } else {
            Some(Certificate::decode(r.take(issuer_len)?)?)
        };
        let count = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        let mut last = None;
        for _ in 0..count {
            let serial = r.u64()?;
            if last.is_some_and(|l| serial <= l) {
                return Err(IdentityError::Malformed("CRL entries not strictly ordered".into()));
            }
            last = Some(serial);
            let revoked_at = r.i64()?;
            let reason = r.str8(MAX_REASON_LEN)?;
            entries.insert(
                serial,
                Revocation {
                    serial,
                    revoked_at,
                    reason,
                },
            );
        }
        let signature = if issuer.is_some() { Some(r.array::<64>()?) } else { None };
        r.finish()?;
        if issuer.is_none() && !entries.is_empty() {
            return Err(IdentityError::Malformed("unsigned CRL with entries".into()));
        }
        Ok(Self {
            issuer,
            entries,
            signature,
        })
    }

    /// Checks the list's signature and that its issuer is the root itself or
    /// an administrator certificate issued by the root.
    pub fn verify(&self, root: &Certificate, at: i64) -> Result<(), IdentityError> {
        let (Some(issuer), Some(sig)) = (&self.issuer, &self.signature) else {
            return if self.entries.is_empty() {
                Ok(())
            } else {
                Err(IdentityError::Malformed("unsigned CRL with entries".into()))
            };
        };
        let authorised = if issuer == root {
            root.is_self_signed()
        } else {
            issuer.has(RoleFlags::ADMINISTRATOR)
                && issuer.issuer_serial == root.serial
                && issuer.is_signed_by(root)
                && issuer.valid_at(at)
        };
        if !authorised {
            return Err(IdentityError::Unauthorized(
                "CRL issuer is not a root-issued administrator".into(),
            ));
        }
        issuer
            .verifying_key()?
            .verify_strict(&self.tbs_bytes(), &Signature::from_bytes(sig))
            .map_err(|_| IdentityError::BadSignature("revocation list".into()))
    }

    /// Replaces this list with `newer` if it verifies and keeps every entry
    /// already known (lists only grow).
    pub fn accept_update(&mut self, newer: RevocationList, root: &Certificate, at: i64) -> Result<bool, IdentityError> {
        newer.verify(root, at)?;
        if !self.entries.keys().all(|s| newer.entries.contains_key(s)) {
            return Err(IdentityError::State("revocation list update drops entries".into()));
        }
        if newer.entries.len() == self.entries.len() && self.issuer.is_some() {
            return Ok(false);
        }
        *self = newer;
        Ok(true)
    }
}

impl Serialize for RevocationList {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use base64::Engine;
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(self.encode()))
    }
}

impl<'de> Deserialize<'de> for RevocationList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use base64::Engine;
        let s = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(s.trim())
            .map_err(serde::de::Error::custom)?;
        RevocationList::decode(&bytes).map_err(serde::de::Error::custom)
    }
}
