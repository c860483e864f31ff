use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::message::{Message, MessageId, Scope};
use super::moderation::{ActionKind, ModerationAction, Target};
use super::validate::Verdict;
use super::MessagingError;
use crate::identity::{hex, Fingerprint, Trust};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub window_s: u32,
    pub max: u32,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self { window_s: 60, max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum IngestOutcome {
    Visible,
    /// Accepted but hidden by an earlier moderation action.
    Hidden,
    Duplicate,
    OutOfScope,
    Deleted,
    Quarantined {
        reason: String,
    },
    RateLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModerationOutcome {
    Applied,
    AlreadyApplied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub message: Message,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagNote {
    pub actor_user_id: String,
    pub reason: String,
}

/// One zip-code community as seen by one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunityView {
    zipcode: String,
    messages: BTreeMap<(i64, MessageId), Message>,
    dates: BTreeMap<MessageId, i64>,
    hidden: BTreeSet<MessageId>,
    deleted: BTreeSet<MessageId>,
    flags: BTreeMap<MessageId, BTreeSet<(String, String)>>,
    default_limit: RateLimit,
    user_limits: BTreeMap<String, RateLimit>,
    accepted_dates: BTreeMap<String, VecDeque<i64>>,
    quarantine: Vec<QuarantineEntry>,
    applied: BTreeSet<Fingerprint>,
}

impl CommunityView {
    pub fn new(zipcode: impl Into<String>) -> Self {
        Self::with_limit(zipcode, RateLimit::default())
    }

    pub fn with_limit(zipcode: impl Into<String>, default_limit: RateLimit) -> Self {
        Self {
            zipcode: zipcode.into(),
            messages: BTreeMap::new(),
            dates: BTreeMap::new(),
            hidden: BTreeSet::new(),
            deleted: BTreeSet::new(),
            flags: BTreeMap::new(),
            default_limit,
            user_limits: BTreeMap::new(),
            accepted_dates: BTreeMap::new(),
            quarantine: Vec::new(),
            applied: BTreeSet::new(),
        }
    }

    pub fn zipcode(&self) -> &str {
        &self.zipcode
    }

    pub fn limit_for(&self, user_id: &str) -> RateLimit {
        self.user_limits.get(user_id).copied().unwrap_or(self.default_limit)
    }

    fn over_limit(&self, user_id: &str, date_ms: i64) -> bool {
        let limit = self.limit_for(user_id);
        let window_ms = i64::from(limit.window_s) * 1000;
        let recent = self
            .accepted_dates
            .get(user_id)
            .map(|d| d.iter().filter(|&&t| t > date_ms - window_ms && t <= date_ms).count())
            .unwrap_or(0);
        recent >= limit.max as usize
    }

    pub fn ingest(&mut self, message: Message, verdict: &Verdict) -> IngestOutcome {
        if message.scope != Scope::Community(self.zipcode.clone()) {
            return IngestOutcome::OutOfScope;
        }
        if self.dates.contains_key(&message.id) {
            return IngestOutcome::Duplicate;
        }
        if self.deleted.contains(&message.id) {
            return IngestOutcome::Deleted;
        }
        if let Verdict::Rejected { step, reason } = verdict {
            let reason = format!("step {} ({step:?}): {reason}", step.number());
            self.quarantine.push(QuarantineEntry {
                message,
                reason: reason.clone(),
            });
            return IngestOutcome::Quarantined { reason };
        }
        let user = message.sender_user_id().to_string();
        if self.over_limit(&user, message.date_ms) {
            self.quarantine.push(QuarantineEntry {
                message,
                reason: "rate limited".into(),
            });
            return IngestOutcome::RateLimited;
        }
        let dates = self.accepted_dates.entry(user).or_default();
        dates.push_back(message.date_ms);
        let id = message.id;
        self.dates.insert(id, message.date_ms);
        self.messages.insert((message.date_ms, id), message);
        if self.hidden.contains(&id) {
            IngestOutcome::Hidden
        } else {
            IngestOutcome::Visible
        }
    }

    /// Messages in date order, ties broken by id bytes. Hidden ones excluded.
    pub fn visible(&self) -> Vec<&Message> {
        self.messages
            .iter()
            .filter(|((_, id), _)| !self.hidden.contains(id))
            .map(|(_, m)| m)
            .collect()
    }

    pub fn hidden_messages(&self) -> Vec<&Message> {
        self.messages
            .iter()
            .filter(|((_, id), _)| self.hidden.contains(id))
            .map(|(_, m)| m)
            .collect()
    }

    pub fn get(&self, id: &MessageId) -> Option<&Message> {
        self.dates.get(id).and_then(|d| self.messages.get(&(*d, *id)))
    }

    pub fn is_hidden(&self, id: &MessageId) -> bool {
        self.hidden.contains(id)
    }

    pub fn is_deleted(&self, id: &MessageId) -> bool {
        self.deleted.contains(id)
    }

    pub fn flags(&self, id: &MessageId) -> Vec<FlagNote> {
        self.flags
            .get(id)
            .into_iter()
            .flatten()
            .map(|(a, r)| FlagNote {
                actor_user_id: a.clone(),
                reason: r.clone(),
            })
            .collect()
    }

    pub fn quarantine(&self) -> &[QuarantineEntry] {
        &self.quarantine
    }

    pub fn moderate(
        &mut self,
        action: &ModerationAction,
        trust: &Trust,
        at_s: i64,
    ) -> Result<ModerationOutcome, MessagingError> {
        if action.zipcode != self.zipcode {
            return Err(MessagingError::Unauthorized(format!(
                "action for community {} applied to {}",
                action.zipcode, self.zipcode
            )));
        }
        action.check_authority(trust, at_s)?;
        if !self.applied.insert(action.id()) {
            return Ok(ModerationOutcome::AlreadyApplied);
        }
        let actor = action.actor_chain.leaf.subject.user_id.clone();
        match (&action.target, &action.kind) {
            (Target::Message { id }, ActionKind::Hide) => {
                self.hidden.insert(*id);
            }
            (Target::Message { id }, ActionKind::Flag { reason }) => {
                self.flags.entry(*id).or_default().insert((actor, reason.clone()));
            }
            (Target::Message { id }, ActionKind::Delete) => {
                self.deleted.insert(*id);
                self.hidden.remove(id);
                self.flags.remove(id);
                if let Some(d) = self.dates.remove(id) {
                    self.messages.remove(&(d, *id));
                }
            }
            (Target::User { user_id }, ActionKind::RateLimit { window_s, max }) => {
                self.user_limits.insert(
                    user_id.clone(),
                    RateLimit {
                        window_s: *window_s,
                        max: *max,
                    },
                );
            }
            _ => unreachable!("checked by check_authority"),
        }
        Ok(ModerationOutcome::Applied)
    }

    /// Ids as hex, for logs and APIs.
    pub fn hidden_ids(&self) -> Vec<String> {
        self.hidden.iter().map(|i| hex(i)).collect()
    }
}
