//! Certificates and their canonical encoding.
//!
//! All integers are big-endian. Strings are UTF-8 with a one-byte length.
//!
//! ```text
//! field            size
//! version          1      = 1
//! serial           8      u64
//! subject name     1 + n  n <= 64
//! user id          1 + n  1 <= n <= 32
//! public key       32     Ed25519
//! role flags       1      bit 0 authenticated, 1 moderator, 2 administrator,
//!                         3 official intermediary, 4 root
//! zipcode          1 + n  n <= 10, 0 = no scope
//! issuer serial    8      u64 (own serial for the root)
//! not before       8      i64 unix seconds
//! not after        8      i64 unix seconds
//! signature        64     issuer's Ed25519 signature over all prior bytes
//! ```

use bitflags::bitflags;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IdentityError;

pub const CERT_VERSION: u8 = 1;
pub const MAX_NAME_LEN: usize = 64;
pub const MAX_USER_ID_LEN: usize = 32;
pub const MAX_ZIPCODE_LEN: usize = 10;
pub const DEFAULT_VALIDITY_SECS: i64 = 365 * 24 * 3600;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
    pub struct RoleFlags: u8 {
        const AUTHENTICATED = 1 << 0;
        const MODERATOR = 1 << 1;
        const ADMINISTRATOR = 1 << 2;
        const OFFICIAL_INTERMEDIARY = 1 << 3;
        const ROOT = 1 << 4;
    }
}

impl RoleFlags {
    /// Flags that may appear on an end-user certificate.
    pub fn leaf_allowed() -> Self {
        Self::AUTHENTICATED | Self::MODERATOR | Self::ADMINISTRATOR
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (flag, name) in [
            (Self::AUTHENTICATED, "authenticated"),
            (Self::MODERATOR, "moderator"),
            (Self::ADMINISTRATOR, "administrator"),
            (Self::OFFICIAL_INTERMEDIARY, "official_intermediary"),
            (Self::ROOT, "root"),
        ] {
            if self.contains(flag) {
                out.push(name);
            }
        }
        out
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self, IdentityError> {
        let mut flags = Self::empty();
        for n in names {
            flags |= match n.trim() {
                "authenticated" => Self::AUTHENTICATED,
                "moderator" => Self::MODERATOR,
                "administrator" => Self::ADMINISTRATOR,
                "official_intermediary" => Self::OFFICIAL_INTERMEDIARY,
                "root" => Self::ROOT,
                "" => Self::empty(),
                other => return Err(IdentityError::Malformed(format!("unknown role {other:?}"))),
            };
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subject {
    pub name: String,
    pub user_id: String,
}

impl Subject {
    pub fn new(name: impl Into<String>, user_id: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            user_id: user_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        if self.user_id.is_empty() || self.user_id.len() > MAX_USER_ID_LEN {
            return Err(IdentityError::Malformed(format!(
                "user id must be 1..={MAX_USER_ID_LEN} bytes"
            )));
        }
        if self.name.trim().is_empty() || self.name.len() > MAX_NAME_LEN {
            return Err(IdentityError::Malformed(format!(
                "name must be 1..={MAX_NAME_LEN} bytes"
            )));
        }
        Ok(())
    }
}

pub type Fingerprint = [u8; 16];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub serial: u64,
    pub subject: Subject,
    pub public_key: [u8; 32],
    pub role_flags: RoleFlags,
    pub zipcode_scope: Option<String>,
    pub issuer_serial: u64,
    pub not_before: i64,
    pub not_after: i64,
    pub signature: [u8; 64],
}

/// Everything in a certificate except the signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertTemplate {
    pub serial: u64,
    pub subject: Subject,
    pub public_key: [u8; 32],
    pub role_flags: RoleFlags,
    pub zipcode_scope: Option<String>,
    pub issuer_serial: u64,
    pub not_before: i64,
    pub not_after: i64,
}

impl CertTemplate {
    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(160);
        out.push(CERT_VERSION);
        out.extend_from_slice(&self.serial.to_be_bytes());
        put_str(&mut out, &self.subject.name);
        put_str(&mut out, &self.subject.user_id);
        out.extend_from_slice(&self.public_key);
        out.push(self.role_flags.bits());
        put_str(&mut out, self.zipcode_scope.as_deref().unwrap_or(""));
        out.extend_from_slice(&self.issuer_serial.to_be_bytes());
        out.extend_from_slice(&self.not_before.to_be_bytes());
        out.extend_from_slice(&self.not_after.to_be_bytes());
        out
    }

    pub fn sign(self, issuer_key: &SigningKey) -> Certificate {
        let signature = issuer_key.sign(&self.tbs_bytes()).to_bytes();
        Certificate {
            serial: self.serial,
            subject: self.subject,
            public_key: self.public_key,
            role_flags: self.role_flags,
            zipcode_scope: self.zipcode_scope,
            issuer_serial: self.issuer_serial,
            not_before: self.not_before,
            not_after: self.not_after,
            signature,
        }
    }
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IdentityError> {
        if self.buf.len() - self.pos < n {
            return Err(IdentityError::Malformed("truncated encoding".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, IdentityError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, IdentityError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IdentityError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, IdentityError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn i64(&mut self) -> Result<i64, IdentityError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], IdentityError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub(crate) fn str8(&mut self, max: usize) -> Result<String, IdentityError> {
        let n = self.u8()? as usize;
        if n > max {
            return Err(IdentityError::Malformed(format!("string of {n} bytes exceeds {max}")));
        }
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| IdentityError::Malformed("invalid UTF-8".into()))
    }

    pub(crate) fn finish(&self) -> Result<(), IdentityError> {
        if self.pos != self.buf.len() {
            return Err(IdentityError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

impl Certificate {
    pub fn template(&self) -> CertTemplate {
        CertTemplate {
            serial: self.serial,
            subject: self.subject.clone(),
            public_key: self.public_key,
            role_flags: self.role_flags,
            zipcode_scope: self.zipcode_scope.clone(),
            issuer_serial: self.issuer_serial,
            not_before: self.not_before,
            not_after: self.not_after,
        }
    }

    pub fn tbs_bytes(&self) -> Vec<u8> {
        self.template().tbs_bytes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.tbs_bytes();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = Reader::new(bytes);
        let cert = Self::read(&mut r)?;
        r.finish()?;
        Ok(cert)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, IdentityError> {
        let version = r.u8()?;
        if version != CERT_VERSION {
            return Err(IdentityError::Malformed(format!(
                "unsupported certificate version {version}"
            )));
        }
        let serial = r.u64()?;
        let name = r.str8(MAX_NAME_LEN)?;
        let user_id = r.str8(MAX_USER_ID_LEN)?;
        let public_key = r.array::<32>()?;
        let bits = r.u8()?;
        let role_flags = RoleFlags::from_bits(bits)
            .ok_or_else(|| IdentityError::Malformed(format!("unknown role bits {bits:#04x}")))?;
        let zip = r.str8(MAX_ZIPCODE_LEN)?;
        let issuer_serial = r.u64()?;
        let not_before = r.i64()?;
        let not_after = r.i64()?;
        let signature = r.array::<64>()?;
        Ok(Self {
            serial,
            subject: Subject { name, user_id },
            public_key,
            role_flags,
            zipcode_scope: (!zip.is_empty()).then_some(zip),
            issuer_serial,
            not_before,
            not_after,
            signature,
        })
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint_of(&self.encode())
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey, IdentityError> {
        VerifyingKey::from_bytes(&self.public_key).map_err(|_| IdentityError::Malformed("invalid public key".into()))
    }

    /// True when `issuer`'s key produced this certificate's signature.
    pub fn is_signed_by(&self, issuer: &Certificate) -> bool {
        let Ok(key) = issuer.verifying_key() else {
            return false;
        };
        key.verify_strict(&self.tbs_bytes(), &Signature::from_bytes(&self.signature))
            .is_ok()
    }

    pub fn is_self_signed(&self) -> bool {
        self.issuer_serial == self.serial && self.is_signed_by(self)
    }

    pub fn valid_at(&self, at: i64) -> bool {
        self.not_before <= at && at <= self.not_after
    }

    pub fn has(&self, flag: RoleFlags) -> bool {
        self.role_flags.contains(flag)
    }

    /// Structural rules that do not depend on other certificates.
    pub fn check_structure(&self) -> Result<(), IdentityError> {
        self.subject.validate()?;
        if self.not_after < self.not_before {
            return Err(IdentityError::Malformed("validity window ends before it starts".into()));
        }
        if self.has(RoleFlags::MODERATOR)
            && (!self.has(RoleFlags::AUTHENTICATED) || self.zipcode_scope.as_deref().unwrap_or("").is_empty())
        {
            return Err(IdentityError::Malformed(
                "moderator requires the authenticated flag and a zipcode scope".into(),
            ));
        }
        if self.has(RoleFlags::ROOT) && self.issuer_serial != self.serial {
            return Err(IdentityError::Malformed("root certificate must be self-issued".into()));
        }
        Ok(())
    }

    pub fn summary(&self) -> CertSummary {
        CertSummary {
            serial: self.serial,
            name: self.subject.name.clone(),
            user_id: self.subject.user_id.clone(),
            roles: self.role_flags.names().into_iter().map(String::from).collect(),
            zipcode_scope: self.zipcode_scope.clone(),
            issuer_serial: self.issuer_serial,
            not_before: self.not_before,
            not_after: self.not_after,
            fingerprint: hex(&self.fingerprint()),
        }
    }
}

pub fn fingerprint_of(bytes: &[u8]) -> Fingerprint {
    let digest = Sha256::digest(bytes);
    digest[..16].try_into().unwrap()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unhex(s: &str) -> Result<Vec<u8>, IdentityError> {
    if s.len() % 2 != 0 {
        return Err(IdentityError::Malformed("odd-length hex".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| IdentityError::Malformed("bad hex".into())))
        .collect()
}

/// Human-readable view of a certificate for APIs and CLIs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSummary {
    pub serial: u64,
    pub name: String,
    pub user_id: String,
    pub roles: Vec<String>,
    pub zipcode_scope: Option<String>,
    pub issuer_serial: u64,
    pub not_before: i64,
    pub not_after: i64,
    pub fingerprint: String,
}

impl Serialize for Certificate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use base64::Engine;
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(self.encode()))
    }
}

impl<'de> Deserialize<'de> for Certificate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use base64::Engine;
        let s = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(s.trim())
            .map_err(serde::de::Error::custom)?;
        Certificate::decode(&bytes).map_err(serde::de::Error::custom)
    }
}
