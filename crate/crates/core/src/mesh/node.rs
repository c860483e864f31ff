use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::packet::{channel_hash, MeshPacket, NodeId};
use super::MeshError;
use crate::phy::{airtime_ms_ceil, FrequencyBand, LinkSample, ModemPreset};

pub const DEFAULT_SEEN_CAPACITY: usize = 256;
pub const DUTY_WINDOW_MS: u64 = 3_600_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
}

impl Position {
    pub fn new(x_m: f64, y_m: f64) -> Self {
        Self { x_m, y_m }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

/// Range-test role. Receivers listen and deliver; only relays rebroadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Sender,
    Receiver,
    Relay,
}

/// Bounded LRU set of `(origin, packet_id)` pairs.
#[derive(Debug, Clone)]
pub struct SeenCache {
    capacity: usize,
    order: VecDeque<(NodeId, u32)>,
    members: HashSet<(NodeId, u32)>,
}

impl SeenCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "seen cache needs room for at least one id");
        Self {
            capacity,
            order: VecDeque::with_capacity(capacity),
            members: HashSet::with_capacity(capacity),
        }
    }

    pub fn contains(&self, key: &(NodeId, u32)) -> bool {
        self.members.contains(key)
    }

    /// Inserts or refreshes `key`; returns true if it was already present.
    pub fn touch(&mut self, key: (NodeId, u32)) -> bool {
        if self.members.contains(&key) {
            if let Some(pos) = self.order.iter().position(|k| *k == key) {
                self.order.remove(pos);
            }
            self.order.push_back(key);
            return true;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.members.remove(&old);
            }
        }
        self.order.push_back(key);
        self.members.insert(key);
        false
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Airtime spent over the trailing hour.
#[derive(Debug, Clone)]
pub struct DutyLedger {
    limit: f64,
    entries: VecDeque<(u64, u64)>,
    used_ms: u64,
}

impl DutyLedger {
    pub fn new(limit: f64) -> Self {
        Self {
            limit,
            entries: VecDeque::new(),
            used_ms: 0,
        }
    }

    pub fn budget_ms(&self) -> u64 {
        (self.limit * DUTY_WINDOW_MS as f64).floor() as u64
    }

    fn prune(&mut self, now_ms: u64) {
        while let Some(&(start, air)) = self.entries.front() {
            if start + DUTY_WINDOW_MS <= now_ms {
                self.entries.pop_front();
                self.used_ms -= air;
            } else {
                break;
            }
        }
    }

    pub fn used_ms(&mut self, now_ms: u64) -> u64 {
        self.prune(now_ms);
        self.used_ms
    }

    pub fn fits(&mut self, now_ms: u64, airtime_ms: u64) -> bool {
        self.used_ms(now_ms) + airtime_ms <= self.budget_ms()
    }

    /// Earliest instant at which `airtime_ms` fits, or `None` if it never can.
    pub fn earliest_fit(&mut self, now_ms: u64, airtime_ms: u64) -> Option<u64> {
        let budget = self.budget_ms();
        if airtime_ms > budget {
            return None;
        }
        let mut used = self.used_ms(now_ms);
        if used + airtime_ms <= budget {
            return Some(now_ms);
        }
        for &(start, air) in &self.entries {
            used -= air;
            if used + airtime_ms <= budget {
                return Some(start + DUTY_WINDOW_MS);
            }
        }
        None
    }

    pub fn charge(&mut self, start_ms: u64, airtime_ms: u64) {
        self.prune(start_ms);
        self.entries.push_back((start_ms, airtime_ms));
        self.used_ms += airtime_ms;
    }

    /// Fraction of the window currently in use.
    pub fn utilisation(&mut self, now_ms: u64) -> f64 {
        self.used_ms(now_ms) as f64 / DUTY_WINDOW_MS as f64
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub start_ms: u64,
    pub end_ms: u64,
    pub airtime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxOutcome {
    Sent(Reservation),
    /// Budget exhausted; the packet waits in the node's FIFO.
    Deferred {
        retry_at_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    WrongChannel,
    NotAddressed,
    Collision,
    HalfDuplex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RxAction {
    Deliver,
    DeliverAndRelay {
        relay: MeshPacket,
        delay_ms: u64,
    },
    /// Forward a unicast addressed to someone else.
    Relay {
        relay: MeshPacket,
        delay_ms: u64,
    },
    Drop(DropReason),
}

/// Rebroadcast slot layout. Weak receivers pick from early bands so the
/// flood front moves outward first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionConfig {
    pub slot_ms: u64,
    pub bands: u8,
    pub slots_per_band: u8,
    pub snr_span_db: f64,
}

impl ContentionConfig {
    pub fn for_preset(preset: &ModemPreset) -> Self {
        Self {
            slot_ms: ((8.0 * preset.symbol_time_ms()).ceil() as u64).max(10),
            bands: 4,
            slots_per_band: 4,
            snr_span_db: 20.0,
        }
    }

    pub fn max_delay_ms(&self) -> u64 {
        u64::from(self.bands) * u64::from(self.slots_per_band) * self.slot_ms
    }
}

pub fn contention_delay<R: Rng + ?Sized>(
    sample: &LinkSample,
    preset: &ModemPreset,
    cfg: &ContentionConfig,
    rng: &mut R,
) -> u64 {
    let rel = ((sample.snr_db - preset.snr_floor_db) / cfg.snr_span_db).clamp(0.0, 1.0);
    let band = (rel * f64::from(cfg.bands.saturating_sub(1))).round() as u64;
    let slot = band * u64::from(cfg.slots_per_band) + rng.gen_range(0..u64::from(cfg.slots_per_band.max(1)));
    slot * cfg.slot_ms
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: NodeId,
    pub position: Position,
    pub band: FrequencyBand,
    pub preset: ModemPreset,
    pub role: NodeRole,
    pub channel: u8,
    pub relay_enabled: bool,
    pub contention: ContentionConfig,
    seen: SeenCache,
    duty: DutyLedger,
    deferred: VecDeque<MeshPacket>,
    pending_relays: BTreeSet<(NodeId, u32)>,
    busy_until_ms: u64,
}

impl NodeState {
    pub fn new(
        node_id: NodeId,
        position: Position,
        band: FrequencyBand,
        preset: ModemPreset,
        role: NodeRole,
        channel_name: &str,
    ) -> Self {
        Self {
            node_id,
            position,
            band,
            preset,
            role,
            channel: channel_hash(channel_name),
            relay_enabled: role == NodeRole::Relay,
            contention: ContentionConfig::for_preset(&preset),
            seen: SeenCache::new(DEFAULT_SEEN_CAPACITY),
            duty: DutyLedger::new(band.duty_cycle_limit),
            deferred: VecDeque::new(),
            pending_relays: BTreeSet::new(),
            busy_until_ms: 0,
        }
    }

    pub fn with_seen_capacity(mut self, capacity: usize) -> Self {
        self.seen = SeenCache::new(capacity);
        self
    }

    pub fn seen(&self) -> &SeenCache {
        &self.seen
    }

    pub fn duty_used_ms(&mut self, now_ms: u64) -> u64 {
        self.duty.used_ms(now_ms)
    }

    pub fn duty_budget_ms(&self) -> u64 {
        self.duty.budget_ms()
    }

    pub fn deferred_len(&self) -> usize {
        self.deferred.len()
    }

    pub fn airtime_for(&self, packet: &MeshPacket) -> Result<u64, MeshError> {
        Ok(airtime_ms_ceil(&self.preset, packet.encoded_len())?)
    }

    /// Reserves airtime for `packet`, or queues it when the rolling-hour
    /// budget (or an earlier queued packet) is in the way.
    pub fn transmit(&mut self, packet: MeshPacket, now_ms: u64) -> Result<TxOutcome, MeshError> {
        packet.validate()?;
        let airtime = self.airtime_for(&packet)?;
        if airtime > self.duty.budget_ms() {
            return Err(MeshError::Malformed(format!(
                "{airtime} ms frame can never fit a {} ms duty budget",
                self.duty.budget_ms()
            )));
        }
        if packet.origin == self.node_id {
            self.seen.touch((packet.origin, packet.packet_id));
        }
        if !self.deferred.is_empty() {
            self.deferred.push_back(packet);
            return Ok(TxOutcome::Deferred {
                retry_at_ms: self.head_retry_at(now_ms)?,
            });
        }
        let start = now_ms.max(self.busy_until_ms);
        if self.duty.fits(start, airtime) {
            Ok(TxOutcome::Sent(self.reserve(start, airtime)))
        } else {
            self.deferred.push_back(packet);
            Ok(TxOutcome::Deferred {
                retry_at_ms: self.head_retry_at(now_ms)?,
            })
        }
    }

    fn reserve(&mut self, start_ms: u64, airtime_ms: u64) -> Reservation {
        self.duty.charge(start_ms, airtime_ms);
        self.busy_until_ms = start_ms + airtime_ms;
        Reservation {
            start_ms,
            end_ms: start_ms + airtime_ms,
            airtime_ms,
        }
    }

    fn head_retry_at(&mut self, now_ms: u64) -> Result<u64, MeshError> {
        let head = self.deferred.front().expect("retry requested with empty queue");
        let airtime = airtime_ms_ceil(&self.preset, head.encoded_len())?;
        let start = now_ms.max(self.busy_until_ms);
        Ok(self.duty.earliest_fit(start, airtime).unwrap_or(u64::MAX))
    }

    /// Sends the head of the deferred FIFO if the budget allows. Returns the
    /// packet and its reservation, plus the next retry time if more remain.
    pub fn drain_deferred(
        &mut self,
        now_ms: u64,
    ) -> Result<(Option<(MeshPacket, Reservation)>, Option<u64>), MeshError> {
        let Some(head) = self.deferred.front() else {
            return Ok((None, None));
        };
        let airtime = airtime_ms_ceil(&self.preset, head.encoded_len())?;
        let start = now_ms.max(self.busy_until_ms);
        if !self.duty.fits(start, airtime) {
            return Ok((None, Some(self.head_retry_at(now_ms)?)));
        }
        let packet = self.deferred.pop_front().expect("head checked above");
        let res = self.reserve(start, airtime);
        let next = if self.deferred.is_empty() {
            None
        } else {
            Some(self.head_retry_at(res.end_ms)?.max(res.end_ms))
        };
        Ok((Some((packet, res)), next))
    }

    pub fn is_transmitting(&self, at_ms: u64) -> bool {
        at_ms < self.busy_until_ms
    }

    pub fn on_receive<R: Rng + ?Sized>(&mut self, packet: &MeshPacket, sample: &LinkSample, rng: &mut R) -> RxAction {
        if packet.channel != self.channel {
            return RxAction::Drop(DropReason::WrongChannel);
        }
        let key = (packet.origin, packet.packet_id);
        if self.seen.touch(key) {
            // Someone else already rebroadcast it: our pending copy is redundant.
            self.pending_relays.remove(&key);
            return RxAction::Drop(DropReason::Duplicate);
        }
        let for_me = packet.is_broadcast() || packet.destination == self.node_id;
        let relays = self.relay_enabled && packet.hop_limit > 0 && packet.destination != self.node_id;
        if relays {
            let mut relay = packet.clone();
            relay.hop_limit -= 1;
            let delay_ms = contention_delay(sample, &self.preset, &self.contention, rng);
            self.pending_relays.insert(key);
            if for_me {
                RxAction::DeliverAndRelay { relay, delay_ms }
            } else {
                RxAction::Relay { relay, delay_ms }
            }
        } else if for_me {
            RxAction::Deliver
        } else {
            RxAction::Drop(DropReason::NotAddressed)
        }
    }

    /// Claims a scheduled rebroadcast. False if it was cancelled because a
    /// neighbour rebroadcast the packet first.
    pub fn take_pending_relay(&mut self, origin: NodeId, packet_id: u32) -> bool {
        self.pending_relays.remove(&(origin, packet_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub packet_id: u32,
    pub origin: NodeId,
    pub initial_hop_limit: u8,
    pub delivered_to: BTreeSet<NodeId>,
    pub hops_used: BTreeMap<NodeId, u8>,
    pub rx_samples: BTreeMap<NodeId, LinkSample>,
}

impl DeliveryReport {
    pub fn new(packet: &MeshPacket) -> Self {
        Self {
            packet_id: packet.packet_id,
            origin: packet.origin,
            initial_hop_limit: packet.hop_start,
            delivered_to: BTreeSet::new(),
            hops_used: BTreeMap::new(),
            rx_samples: BTreeMap::new(),
        }
    }

    /// Records the first delivery at `node`; later copies are ignored.
    pub fn record(&mut self, node: NodeId, hops: u8, sample: LinkSample) {
        if self.delivered_to.insert(node) {
            self.hops_used.insert(node, hops);
            self.rx_samples.insert(node, sample);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{range_test_payload, PacketKind, MAX_PAYLOAD};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: NodeId, role: NodeRole) -> NodeState {
        NodeState::new(
            id,
            Position::default(),
            FrequencyBand::eu868(),
            ModemPreset::short_fast(),
            role,
            "ShortFast",
        )
    }

    fn strong() -> LinkSample {
        LinkSample {
            distance_m: 10.0,
            rssi_dbm: -60.0,
            snr_db: 10.0,
            received: true,
        }
    }

    fn seq_packet(origin: NodeId, id: u32, seq: u32, hops: u8) -> MeshPacket {
        MeshPacket::broadcast(
            id,
            origin,
            "ShortFast",
            PacketKind::RangeTestSeq,
            hops,
            range_test_payload(seq),
        )
        .unwrap()
    }

    #[test]
    fn broadcast_decrements_and_dedupes() {
        let mut relay = node(2, NodeRole::Relay);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = seq_packet(1, 77, 1, 3);
        match relay.on_receive(&p, &strong(), &mut rng) {
            RxAction::DeliverAndRelay { relay, .. } => assert_eq!(relay.hop_limit, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            relay.on_receive(&p, &strong(), &mut rng),
            RxAction::Drop(DropReason::Duplicate)
        );
    }

    #[test]
    fn zero_hop_limit_only_delivers() {
        let mut relay = node(2, NodeRole::Relay);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = seq_packet(1, 5, 1, 3);
        p.hop_limit = 0;
        assert_eq!(relay.on_receive(&p, &strong(), &mut rng), RxAction::Deliver);
    }

    #[test]
    fn receivers_never_rebroadcast() {
        let mut rx = node(3, NodeRole::Receiver);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            rx.on_receive(&seq_packet(1, 9, 1, 3), &strong(), &mut rng),
            RxAction::Deliver
        );
        let mut unicast = seq_packet(1, 10, 2, 3);
        unicast.destination = 42;
        assert_eq!(
            rx.on_receive(&unicast, &strong(), &mut rng),
            RxAction::Drop(DropReason::NotAddressed)
        );
    }

    #[test]
    fn wrong_channel_dropped() {
        let mut rx = node(3, NodeRole::Relay);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = seq_packet(1, 9, 1, 3);
        p.channel ^= 0x55;
        assert_eq!(
            rx.on_receive(&p, &strong(), &mut rng),
            RxAction::Drop(DropReason::WrongChannel)
        );
    }

    #[test]
    fn duplicate_cancels_pending_rebroadcast() {
        let mut relay = node(2, NodeRole::Relay);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = seq_packet(1, 11, 1, 3);
        assert!(matches!(
            relay.on_receive(&p, &strong(), &mut rng),
            RxAction::DeliverAndRelay { .. }
        ));
        let mut echoed = p.clone();
        echoed.hop_limit = 2;
        assert_eq!(
            relay.on_receive(&echoed, &strong(), &mut rng),
            RxAction::Drop(DropReason::Duplicate)
        );
        assert!(!relay.take_pending_relay(1, 11));
    }

    #[test]
    fn seen_cache_is_lru_bounded() {
        let mut cache = SeenCache::new(3);
        assert!(!cache.touch((1, 1)));
        assert!(!cache.touch((1, 2)));
        assert!(!cache.touch((1, 3)));
        assert!(cache.touch((1, 1)));
        assert!(!cache.touch((1, 4)));
        assert_eq!(cache.len(), 3);
        assert!(cache.contains(&(1, 1)));
        assert!(!cache.contains(&(1, 2)));
        assert_eq!(SeenCache::new(DEFAULT_SEEN_CAPACITY).capacity(), 256);
    }

    #[test]
    fn single_packet_charges_exact_airtime() {
        let mut n = node(1, NodeRole::Sender);
        let p = seq_packet(1, 1, 5, 3);
        let air = n.airtime_for(&p).unwrap();
        match n.transmit(p, 1000).unwrap() {
            TxOutcome::Sent(r) => {
                assert_eq!(r.start_ms, 1000);
                assert_eq!(r.airtime_ms, air);
                assert_eq!(r.end_ms, 1000 + air);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(n.duty_used_ms(1000), air);
    }

    #[test]
    fn seq_every_15s_on_short_fast_stays_within_one_percent() {
        let mut n = node(1, NodeRole::Sender);
        for seq in 1..=240u32 {
            let now = u64::from(seq - 1) * 15_000;
            let outcome = n.transmit(seq_packet(1, seq, seq, 3), now).unwrap();
            assert!(matches!(outcome, TxOutcome::Sent(_)));
            assert!(n.duty_used_ms(now) as f64 <= 0.01 * DUTY_WINDOW_MS as f64);
        }
    }

    #[test]
    fn back_to_back_max_payload_hits_budget_then_drains_fifo() {
        let mut n = NodeState::new(
            1,
            Position::default(),
            FrequencyBand::eu868(),
            ModemPreset::long_fast(),
            NodeRole::Sender,
            "LongFast",
        );
        let mut now = 0;
        let mut sent = 0u32;
        let retry = loop {
            let p =
                MeshPacket::broadcast(sent, 1, "LongFast", PacketKind::ChatMessage, 3, vec![0; MAX_PAYLOAD]).unwrap();
            match n.transmit(p, now).unwrap() {
                TxOutcome::Sent(r) => {
                    now = r.end_ms;
                    sent += 1;
                    assert!(n.duty_used_ms(now) <= n.duty_budget_ms());
                }
                TxOutcome::Deferred { retry_at_ms } => break retry_at_ms,
            }
            assert!(sent < 1000, "budget never exhausted");
        };
        assert!(sent > 0);
        assert_eq!(retry, DUTY_WINDOW_MS);
        // A follow-up packet queues behind the deferred one.
        let p = MeshPacket::broadcast(9999, 1, "LongFast", PacketKind::ChatMessage, 3, vec![1]).unwrap();
        assert!(matches!(n.transmit(p, now).unwrap(), TxOutcome::Deferred { .. }));
        assert_eq!(n.deferred_len(), 2);
        let (none, _) = n.drain_deferred(now + 1).unwrap();
        assert!(none.is_none());
        let (first, next) = n.drain_deferred(retry).unwrap();
        assert_eq!(first.unwrap().0.packet_id, sent);
        let (second, _) = n.drain_deferred(next.unwrap()).unwrap();
        assert_eq!(second.unwrap().0.packet_id, 9999);
    }

    #[test]
    fn contention_bias_and_determinism() {
        let preset = ModemPreset::long_fast();
        let cfg = ContentionConfig::for_preset(&preset);
        let band_ms = u64::from(cfg.slots_per_band) * cfg.slot_ms;
        let at_floor = LinkSample {
            snr_db: preset.snr_floor_db,
            ..strong()
        };
        let strong_link = LinkSample {
            snr_db: preset.snr_floor_db + 20.0,
            ..strong()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert!(contention_delay(&at_floor, &preset, &cfg, &mut rng) < band_ms);
            let d = contention_delay(&strong_link, &preset, &cfg, &mut rng);
            assert!(d >= cfg.max_delay_ms() - band_ms && d < cfg.max_delay_ms());
        }
        let a: Vec<u64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..20)
                .map(|_| contention_delay(&at_floor, &preset, &cfg, &mut r))
                .collect()
        };
        let b: Vec<u64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..20)
                .map(|_| contention_delay(&at_floor, &preset, &cfg, &mut r))
                .collect()
        };
        assert_eq!(a, b);
    }
}
