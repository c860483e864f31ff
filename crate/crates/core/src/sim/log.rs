use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::mesh::{DropReason, NodeId};
use crate::phy::LinkSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MessageBudget,
    Duration,
    /// The farthest receiver went the configured number of intervals without
    /// hearing anything.
    Silence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Transmit {
        start_ms: u64,
        end_ms: u64,
        hop_limit: u8,
        relay: bool,
    },
    /// Duty-cycle budget refused the frame; it waits in the node's queue.
    Deferred {
        retry_at_ms: u64,
    },
    Deliver {
        hops: u8,
    },
    Drop {
        reason: DropReason,
    },
    RelayScheduled {
        at_ms: u64,
    },
    RelayCancelled,
    Moved {
        x_m: f64,
        y_m: f64,
    },
    StageTwo,
    Terminated {
        reason: TerminationReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t_ms: u64,
    pub node: NodeId,
    #[serde(flatten)]
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<LinkSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub fingerprint: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    /// One JSON object per line: a header line, then one line per entry.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "scenario": self.scenario,
        })
        .to_string();
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.kind)).count()
    }

    pub fn collisions(&self) -> usize {
        self.count(|k| {
            matches!(
                k,
                EventKind::Drop {
                    reason: DropReason::Collision
                }
            )
        })
    }

    pub fn deferrals(&self) -> usize {
        self.count(|k| matches!(k, EventKind::Deferred { .. }))
    }
}
