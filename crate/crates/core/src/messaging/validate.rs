use serde::{Deserialize, Serialize};

use super::message::{signature_of, Message, MAX_CONTENT_LEN};
use crate::identity::{RoleFlags, Trust};

/// Validation steps in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// Signature over the canonical bytes.
    Signature,
    /// Leaf certificate and its intermediary.
    Certificate,
    /// Chain resolves to the trusted root, nothing revoked.
    Root,
    OfficialLineage,
}

impl Step {
    pub fn number(self) -> u8 {
        match self {
            Step::Signature => 1,
            Step::Certificate => 2,
            Step::Root => 3,
            Step::OfficialLineage => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Authentic,
    Rejected { step: Step, reason: String },
}

impl Verdict {
    pub fn is_authentic(&self) -> bool {
        matches!(self, Verdict::Authentic)
    }

    pub fn failed_step(&self) -> Option<Step> {
        match self {
            Verdict::Authentic => None,
            Verdict::Rejected { step, .. } => Some(*step),
        }
    }
}

fn reject(step: Step, reason: impl ToString) -> Verdict {
    Verdict::Rejected {
        step,
        reason: reason.to_string(),
    }
}

/// Runs the three authenticity checks in order, then the official-lineage
/// rule, and reports the first failure.
pub fn validate(message: &Message, trust: &Trust, at_s: i64) -> Verdict {
    let chain = &message.sender_chain;

    if message.content.len() > MAX_CONTENT_LEN {
        return reject(Step::Signature, "content exceeds bound");
    }
    if let Err(e) = message.scope.validate() {
        return reject(Step::Signature, e);
    }
    let key = match chain.leaf.verifying_key() {
        Ok(k) => k,
        Err(e) => return reject(Step::Signature, e),
    };
    if key
        .verify_strict(&message.signing_bytes(), &signature_of(&message.signature))
        .is_err()
    {
        return reject(Step::Signature, "signature does not verify");
    }

    if let Err(f) = chain.check_leaf() {
        return reject(Step::Certificate, f);
    }
    for c in [&chain.leaf, &chain.intermediary] {
        if !c.valid_at(at_s) {
            return reject(
                Step::Certificate,
                format!("certificate {} outside its validity window", c.serial),
            );
        }
    }
    if !chain.leaf.has(RoleFlags::AUTHENTICATED) {
        return reject(Step::Certificate, "sender lacks the authenticated role");
    }

    if let Err(f) = chain.check_upper(&trust.root) {
        return reject(Step::Root, f);
    }
    if !chain.root.valid_at(at_s) {
        return reject(Step::Root, "root outside its validity window");
    }
    if let Err(f) = chain.check_revocation(&trust.crl, at_s) {
        return reject(Step::Root, f);
    }

    let lineage = chain.intermediary.has(RoleFlags::OFFICIAL_INTERMEDIARY);
    if message.official && !lineage {
        return reject(
            Step::OfficialLineage,
            "official message not signed under the official intermediary",
        );
    }
    if !message.official && lineage {
        return reject(
            Step::OfficialLineage,
            "official-lineage sender must mark messages official",
        );
    }
    Verdict::Authentic
}
