//! Text blocks for moving binary objects by copy-paste or QR code.
//!
//! ```text
//! -----BEGIN OFFGRID CERTIFICATE-----
//! <base64, 64 columns>
//! -----END OFFGRID CERTIFICATE-----
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::IdentityError;

const LINE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmorKind {
    Certificate,
    SigningRequest,
    RevocationList,
    CertificateChain,
}

impl ArmorKind {
    pub fn label(self) -> &'static str {
        match self {
            ArmorKind::Certificate => "CERTIFICATE",
            ArmorKind::SigningRequest => "SIGNING REQUEST",
            ArmorKind::RevocationList => "REVOCATION LIST",
            ArmorKind::CertificateChain => "CERTIFICATE CHAIN",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        [
            ArmorKind::Certificate,
            ArmorKind::SigningRequest,
            ArmorKind::RevocationList,
            ArmorKind::CertificateChain,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }
}

pub fn armor(kind: ArmorKind, bytes: &[u8]) -> String {
    let body = STANDARD.encode(bytes);
    let mut out = format!("-----BEGIN OFFGRID {}-----\n", kind.label());
    for chunk in body.as_bytes().chunks(LINE) {
        out.push_str(std::str::from_utf8(chunk).unwrap());
        out.push('\n');
    }
    out.push_str(&format!("-----END OFFGRID {}-----\n", kind.label()));
    out
}

/// Reads the first armored block in `text`. Surrounding text is ignored.
pub fn dearmor(text: &str) -> Result<(ArmorKind, Vec<u8>), IdentityError> {
    let mut lines = text.lines().map(str::trim);
    let kind = lines
        .by_ref()
        .find_map(|l| {
            l.strip_prefix("-----BEGIN OFFGRID ")
                .and_then(|r| r.strip_suffix("-----"))
        })
        .ok_or_else(|| IdentityError::Malformed("no armored block".into()))?;
    let kind =
        ArmorKind::from_label(kind).ok_or_else(|| IdentityError::Malformed(format!("unknown block {kind:?}")))?;
    let end = format!("-----END OFFGRID {}-----", kind.label());
    let mut body = String::new();
    let mut closed = false;
    for l in lines {
        if l == end {
            closed = true;
            break;
        }
        body.push_str(l);
    }
    if !closed {
        return Err(IdentityError::Malformed("unterminated armored block".into()));
    }
    let bytes = STANDARD
        .decode(body)
        .map_err(|e| IdentityError::Malformed(format!("armored base64: {e}")))?;
    Ok((kind, bytes))
}
