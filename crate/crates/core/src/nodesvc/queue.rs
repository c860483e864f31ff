use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::messaging::{Message, ModerationAction};

pub const DEFAULT_QUEUE_CAPACITY: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Message { message: Message },
    Moderation { action: ModerationAction },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Queued {
    pub item: Outbound,
    pub enqueued_ms: i64,
    pub attempts: u32,
}

/// Bounded FIFO. When full, the oldest entry is dropped and returned so the
/// caller can warn about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundQueue {
    capacity: usize,
    items: VecDeque<Queued>,
    dropped: u64,
}

impl Default for OutboundQueue {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl OutboundQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
            dropped: 0,
        }
    }

    pub fn push(&mut self, item: Outbound, now_ms: i64) -> Option<Queued> {
        let evicted = if self.items.len() >= self.capacity {
            self.dropped += 1;
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(Queued {
            item,
            enqueued_ms: now_ms,
            attempts: 0,
        });
        evicted
    }

    pub fn pop(&mut self) -> Option<Queued> {
        self.items.pop_front()
    }

    /// Puts an entry back at the head after a failed send.
    pub fn requeue_front(&mut self, mut q: Queued) {
        q.attempts += 1;
        self.items.push_front(q);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn iter(&self) -> impl Iterator<Item = &Queued> {
        self.items.iter()
    }
}
