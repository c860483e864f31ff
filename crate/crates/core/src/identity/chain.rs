use serde::{Deserialize, Serialize};

use super::cert::{Certificate, Reader, RoleFlags};
use super::crl::RevocationList;
use super::IdentityError;

/// Leaf, the intermediary that issued it, and the root above both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertChain {
    pub leaf: Certificate,
    pub intermediary: Certificate,
    pub root: Certificate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum ChainFailure {
    /// Leaf does not name the intermediary as issuer, or its signature fails.
    LeafSignature,
    /// The intermediary may not issue end-user certificates.
    IssuerNotAuthorised,
    IntermediarySignature,
    RootSignature,
    UntrustedRoot,
    Structure {
        detail: String,
    },
    NotYetValid {
        serial: u64,
    },
    Expired {
        serial: u64,
    },
    Revoked {
        serial: u64,
    },
    RevocationList {
        detail: String,
    },
}

impl std::fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainFailure::LeafSignature => write!(f, "leaf not signed by its intermediary"),
            ChainFailure::IssuerNotAuthorised => write!(f, "intermediary lacks issuing authority"),
            ChainFailure::IntermediarySignature => write!(f, "intermediary not signed by the root"),
            ChainFailure::RootSignature => write!(f, "root is not validly self-signed"),
            ChainFailure::UntrustedRoot => write!(f, "chain ends at an untrusted root"),
            ChainFailure::Structure { detail } => write!(f, "malformed certificate: {detail}"),
            ChainFailure::NotYetValid { serial } => write!(f, "certificate {serial} not yet valid"),
            ChainFailure::Expired { serial } => write!(f, "certificate {serial} expired"),
            ChainFailure::Revoked { serial } => write!(f, "certificate {serial} revoked"),
            ChainFailure::RevocationList { detail } => write!(f, "revocation list rejected: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ChainVerdict {
    Valid,
    Invalid { reason: ChainFailure },
}

impl ChainVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ChainVerdict::Valid)
    }
}

impl From<Result<(), ChainFailure>> for ChainVerdict {
    fn from(r: Result<(), ChainFailure>) -> Self {
        match r {
            Ok(()) => ChainVerdict::Valid,
            Err(reason) => ChainVerdict::Invalid { reason },
        }
    }
}

fn structure(c: &Certificate) -> Result<(), ChainFailure> {
    c.check_structure()
        .map_err(|e| ChainFailure::Structure { detail: e.to_string() })
}

fn window(c: &Certificate, at: i64) -> Result<(), ChainFailure> {
    if at < c.not_before {
        Err(ChainFailure::NotYetValid { serial: c.serial })
    } else if at > c.not_after {
        Err(ChainFailure::Expired { serial: c.serial })
    } else {
        Ok(())
    }
}

impl CertChain {
    /// Leaf signature, linkage and the issuer's authority.
    pub fn check_leaf(&self) -> Result<(), ChainFailure> {
        structure(&self.leaf)?;
        if self.leaf.issuer_serial != self.intermediary.serial || !self.leaf.is_signed_by(&self.intermediary) {
            return Err(ChainFailure::LeafSignature);
        }
        if !self.leaf.role_flags.difference(RoleFlags::leaf_allowed()).is_empty() {
            return Err(ChainFailure::Structure {
                detail: "leaf carries issuing flags".into(),
            });
        }
        if !self
            .intermediary
            .role_flags
            .intersects(RoleFlags::ADMINISTRATOR | RoleFlags::OFFICIAL_INTERMEDIARY)
        {
            return Err(ChainFailure::IssuerNotAuthorised);
        }
        Ok(())
    }

    /// Intermediary signed by the root, root self-signed and trusted.
    pub fn check_upper(&self, trusted_root: &Certificate) -> Result<(), ChainFailure> {
        structure(&self.intermediary)?;
        structure(&self.root)?;
        if self.intermediary.issuer_serial != self.root.serial || !self.intermediary.is_signed_by(&self.root) {
            return Err(ChainFailure::IntermediarySignature);
        }
        if !self.root.has(RoleFlags::ROOT) || !self.root.is_self_signed() {
            return Err(ChainFailure::RootSignature);
        }
        if self.root != *trusted_root {
            return Err(ChainFailure::UntrustedRoot);
        }
        Ok(())
    }

    pub fn check_windows(&self, at: i64) -> Result<(), ChainFailure> {
        window(&self.leaf, at)?;
        window(&self.intermediary, at)?;
        window(&self.root, at)
    }

    pub fn check_revocation(&self, crl: &RevocationList, at: i64) -> Result<(), ChainFailure> {
        crl.verify(&self.root, at)
            .map_err(|e| ChainFailure::RevocationList { detail: e.to_string() })?;
        for c in [&self.leaf, &self.intermediary, &self.root] {
            if crl.is_revoked(c.serial) {
                return Err(ChainFailure::Revoked { serial: c.serial });
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for c in [&self.leaf, &self.intermediary, &self.root] {
            let b = c.encode();
            out.extend_from_slice(&(b.len() as u16).to_be_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = Reader::new(bytes);
        let mut next = || -> Result<Certificate, IdentityError> {
            let n = r.u16()? as usize;
            Certificate::decode(r.take(n)?)
        };
        let chain = Self {
            leaf: next()?,
            intermediary: next()?,
            root: next()?,
        };
        r.finish()?;
        Ok(chain)
    }
}

/// Checks, in order: leaf signature by the intermediary, intermediary
/// signature by the root and the root's self-signature, validity windows,
/// and revocation. The first failure is reported.
pub fn verify_chain(chain: &CertChain, trusted_root: &Certificate, crl: &RevocationList, at: i64) -> ChainVerdict {
    (|| {
        chain.check_leaf()?;
        chain.check_upper(trusted_root)?;
        chain.check_windows(at)?;
        chain.check_revocation(crl, at)
    })()
    .into()
}

/// Two-level check for an intermediary certificate on its own.
pub fn verify_intermediary(
    intermediary: &Certificate,
    trusted_root: &Certificate,
    crl: &RevocationList,
    at: i64,
) -> ChainVerdict {
    (|| {
        structure(intermediary)?;
        if intermediary.issuer_serial != trusted_root.serial || !intermediary.is_signed_by(trusted_root) {
            return Err(ChainFailure::IntermediarySignature);
        }
        if !trusted_root.is_self_signed() {
            return Err(ChainFailure::RootSignature);
        }
        window(intermediary, at)?;
        window(trusted_root, at)?;
        crl.verify(trusted_root, at)
            .map_err(|e| ChainFailure::RevocationList { detail: e.to_string() })?;
        if crl.is_revoked(intermediary.serial) {
            return Err(ChainFailure::Revoked {
                serial: intermediary.serial,
            });
        }
        Ok(())
    })()
    .into()
}
