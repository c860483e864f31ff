//! In-process radio for running nodes: the mesh state machine and the
//! calibrated link model, without timing, contention or collisions.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mesh::{MeshError, MeshPacket, NodeId, NodeRole, NodeState, Position, RxAction, TxOutcome};
use crate::phy::{LinkSample, Radio};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HubStats {
    pub transmissions: u64,
    pub deliveries: u64,
    pub deferrals: u64,
}

struct HubNode {
    state: NodeState,
    inbox: Vec<MeshPacket>,
}

pub struct MeshHub {
    radio: Radio,
    channel: String,
    nodes: BTreeMap<NodeId, HubNode>,
    rng: ChaCha8Rng,
    stats: HubStats,
}

impl MeshHub {
    pub fn new(radio: Radio, channel: &str, seed: u64) -> Self {
        Self {
            radio,
            channel: channel.to_string(),
            nodes: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: HubStats::default(),
        }
    }

    pub fn attach(&mut self, id: NodeId, position: Position, relay: bool) {
        let role = if relay { NodeRole::Relay } else { NodeRole::Receiver };
        let state = NodeState::new(id, position, self.radio.band, self.radio.preset, role, &self.channel);
        self.nodes.insert(
            id,
            HubNode {
                state,
                inbox: Vec::new(),
            },
        );
    }

    pub fn detach(&mut self, id: NodeId) {
        self.nodes.remove(&id);
    }

    pub fn is_attached(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn set_position(&mut self, id: NodeId, position: Position) {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.state.position = position;
        }
    }

    pub fn stats(&self) -> &HubStats {
        &self.stats
    }

    /// Transmits from `packet.origin`, flooding through relaying nodes.
    pub fn send(&mut self, packet: MeshPacket, now_ms: u64) -> Result<(), MeshError> {
        let node = self
            .nodes
            .get_mut(&packet.origin)
            .ok_or_else(|| MeshError::Malformed(format!("node {} not attached", packet.origin)))?;
        match node.state.transmit(packet.clone(), now_ms)? {
            TxOutcome::Sent(_) => self.propagate(packet.origin, packet, now_ms),
            TxOutcome::Deferred { .. } => {
                self.stats.deferrals += 1;
                Ok(())
            }
        }
    }

    /// Sends anything that was waiting for duty-cycle budget.
    pub fn tick(&mut self, now_ms: u64) -> Result<(), MeshError> {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            loop {
                let node = self.nodes.get_mut(&id).expect("listed");
                let (sent, _) = node.state.drain_deferred(now_ms)?;
                match sent {
                    Some((packet, _)) => self.propagate(id, packet, now_ms)?,
                    None => break,
                }
            }
        }
        Ok(())
    }

    fn propagate(&mut self, from: NodeId, packet: MeshPacket, now_ms: u64) -> Result<(), MeshError> {
        let mut wave = VecDeque::from([(from, packet)]);
        while let Some((tx, packet)) = wave.pop_front() {
            self.stats.transmissions += 1;
            let tx_pos = self.nodes[&tx].state.position;
            let ids: Vec<NodeId> = self.nodes.keys().copied().filter(|&id| id != tx).collect();
            for id in ids {
                let rx_pos = self.nodes[&id].state.position;
                let d = tx_pos.distance_to(&rx_pos).max(1.0);
                let sample: LinkSample = self.radio.sample(d, &mut self.rng)?;
                if !sample.received {
                    continue;
                }
                let node = self.nodes.get_mut(&id).expect("listed");
                let relay = match node.state.on_receive(&packet, &sample, &mut self.rng) {
                    RxAction::Deliver => {
                        node.inbox.push(packet.clone());
                        None
                    }
                    RxAction::DeliverAndRelay { relay, .. } => {
                        node.inbox.push(packet.clone());
                        Some(relay)
                    }
                    RxAction::Relay { relay, .. } => Some(relay),
                    RxAction::Drop(_) => None,
                };
                if matches!(node.inbox.last(), Some(p) if p == &packet) {
                    self.stats.deliveries += 1;
                }
                if let Some(relay) = relay {
                    if node.state.take_pending_relay(relay.origin, relay.packet_id) {
                        match node.state.transmit(relay.clone(), now_ms)? {
                            TxOutcome::Sent(_) => wave.push_back((id, relay)),
                            TxOutcome::Deferred { .. } => self.stats.deferrals += 1,
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn take_inbox(&mut self, id: NodeId) -> Vec<MeshPacket> {
        self.nodes
            .get_mut(&id)
            .map(|n| std::mem::take(&mut n.inbox))
            .unwrap_or_default()
    }
}
