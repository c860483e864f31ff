use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::log::{EventKind, EventLog, LogEntry, TerminationReason};
use super::scenario::{Mobility, Scenario, ShadowingMode, BACKGROUND_NODE};
use super::SimError;
use crate::analysis::{write_canonical_csv, write_sender_log, RangeTestRecord, SenderLogEntry};
use crate::mesh::{
    channel_hash, parse_range_test_payload, range_test_payload, DropReason, MeshPacket, NodeRole, NodeState,
    PacketKind, Position, RxAction, TxOutcome, BROADCAST, HEADER_LEN,
};
use crate::phy::{airtime_ms_ceil, link_sample_from_loss, path_loss_db, LinkSample, Radio};

/// A frame is lost unless it is this much stronger than every overlapping one.
const CAPTURE_MARGIN_DB: f64 = 6.0;
const PRUNE_AFTER_MS: u64 = 10_000;

const TAG_LOCATION: u64 = 1;
const TAG_PACKET: u64 = 2;
const TAG_CONTENTION: u64 = 3;
const TAG_BACKGROUND: u64 = 4;
const TAG_FADING: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub messages_sent: u32,
    pub duration_ms: u64,
    pub termination: TerminationReason,
    pub transmissions: usize,
    pub deferrals: usize,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub log: EventLog,
    pub records: Vec<RangeTestRecord>,
    pub sender_log: Vec<SenderLogEntry>,
    pub stats: SimStats,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn keyed_rng(seed: u64, tag: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ splitmix64(tag));
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn grid(v: f64) -> u64 {
    v.round() as i64 as u64
}

fn round_to(v: f64, per_unit: f64) -> f64 {
    (v * per_unit).round() / per_unit
}

/// Reporting resolution: RSSI to 1 dB, SNR to 0.25 dB, distance to 0.1 m.
pub fn quantize_sample(s: &LinkSample) -> LinkSample {
    LinkSample {
        distance_m: round_to(s.distance_m, 10.0),
        rssi_dbm: s.rssi_dbm.round(),
        snr_db: round_to(s.snr_db, 4.0),
        received: s.received,
    }
}

struct SimNode {
    state: NodeState,
    mobility: Mobility,
    outward: (f64, f64),
    arrived_at_ms: u64,
    rx_here: u32,
    rx_total: u32,
    last_rx_ms: Option<u64>,
    retry_scheduled: bool,
    records: VecDeque<RangeTestRecord>,
    record_bytes: usize,
}

struct OnAir {
    id: u64,
    tx_node: Option<usize>,
    packet: MeshPacket,
    start_ms: u64,
    end_ms: u64,
    samples: Vec<Option<LinkSample>>,
}

impl OnAir {
    fn overlaps(&self, start_ms: u64, end_ms: u64) -> bool {
        self.start_ms < end_ms && self.end_ms > start_ms
    }
}

enum Event {
    Tick,
    TxEnd(u64),
    Rebroadcast { node: usize, packet: MeshPacket },
    Retry(usize),
    Background,
}

struct Engine<'a> {
    sc: &'a Scenario,
    radio: Radio,
    interval_ms: u64,
    nodes: Vec<SimNode>,
    sender: usize,
    queue: BTreeMap<(u64, u64), Event>,
    queue_seq: u64,
    on_air: Vec<OnAir>,
    next_air_id: u64,
    entries: Vec<LogEntry>,
    seq: u32,
    stopped: Option<TerminationReason>,
    stage_two: bool,
    bg_rng: ChaCha8Rng,
    bg_packets: u32,
    sender_log: Vec<SenderLogEntry>,
    transmissions: usize,
    now: u64,
}

pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    Engine::new(scenario)?.execute()
}

/// Re-runs the scenario embedded in `log` and returns the recomputed log.
pub fn replay(log: &EventLog) -> Result<EventLog, SimError> {
    let fp = log.scenario.fingerprint();
    if fp != log.fingerprint {
        return Err(SimError::Replay(format!(
            "scenario fingerprint {fp} does not match logged {}",
            log.fingerprint
        )));
    }
    if log.seed != log.scenario.seed {
        return Err(SimError::Replay(format!(
            "logged seed {} differs from scenario seed {}",
            log.seed, log.scenario.seed
        )));
    }
    Ok(run(&log.scenario)?.log)
}

pub fn export_csv(records: &[RangeTestRecord], path: &Path) -> Result<(), SimError> {
    let f = BufWriter::new(File::create(path)?);
    write_canonical_csv(records, f)?;
    Ok(())
}

pub fn export_sender_log(entries: &[SenderLogEntry], path: &Path) -> Result<(), SimError> {
    let f = BufWriter::new(File::create(path)?);
    write_sender_log(entries, f)?;
    Ok(())
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, SimError> {
        let radio = sc.radio.resolve()?;
        let channel = sc.channel_name();
        let sender = sc
            .nodes
            .iter()
            .position(|n| n.role == NodeRole::Sender)
            .expect("validated");
        let origin = sc.nodes[sender].position;
        let nodes = sc
            .nodes
            .iter()
            .map(|spec| {
                let dx = spec.position.x_m - origin.x_m;
                let dy = spec.position.y_m - origin.y_m;
                let len = dx.hypot(dy);
                let outward = if len > 0.0 { (dx / len, dy / len) } else { (1.0, 0.0) };
                SimNode {
                    state: NodeState::new(spec.id, spec.position, radio.band, radio.preset, spec.role, &channel),
                    mobility: spec.mobility.clone(),
                    outward,
                    arrived_at_ms: 0,
                    rx_here: 0,
                    rx_total: 0,
                    last_rx_ms: None,
                    retry_scheduled: false,
                    records: VecDeque::new(),
                    record_bytes: 0,
                }
            })
            .collect();
        Ok(Self {
            sc,
            radio,
            interval_ms: sc.interval_ms(),
            nodes,
            sender,
            queue: BTreeMap::new(),
            queue_seq: 0,
            on_air: Vec::new(),
            next_air_id: 0,
            entries: Vec::new(),
            seq: 0,
            stopped: None,
            stage_two: false,
            bg_rng: keyed_rng(sc.seed, TAG_BACKGROUND, &[]),
            bg_packets: 0,
            sender_log: Vec::new(),
            transmissions: 0,
            now: 0,
        })
    }

    fn schedule(&mut self, at_ms: u64, ev: Event) {
        self.queue.insert((at_ms, self.queue_seq), ev);
        self.queue_seq += 1;
    }

    fn log(&mut self, node: u32, kind: EventKind, packet: Option<&MeshPacket>, sample: Option<LinkSample>) {
        self.entries.push(LogEntry {
            t_ms: self.now,
            node,
            kind,
            origin: packet.map(|p| p.origin),
            packet_id: packet.map(|p| p.packet_id),
            sample: sample.as_ref().map(quantize_sample),
        });
    }

    fn execute(mut self) -> Result<SimOutput, SimError> {
        self.schedule(0, Event::Tick);
        if self.sc.background_tx_per_min > 0.0 {
            let first = self.next_background_gap();
            self.schedule(first, Event::Background);
        }
        while let Some(((t, _), ev)) = self.queue.pop_first() {
            self.now = t;
            match ev {
                Event::Tick => self.on_tick()?,
                Event::TxEnd(id) => self.on_tx_end(id),
                Event::Rebroadcast { node, packet } => self.on_rebroadcast(node, packet)?,
                Event::Retry(node) => self.on_retry(node)?,
                Event::Background => self.on_background()?,
            }
            let horizon = self.now.saturating_sub(PRUNE_AFTER_MS);
            self.on_air.retain(|a| a.end_ms >= horizon);
        }
        Ok(self.finish())
    }

    fn finish(self) -> SimOutput {
        let mut records: Vec<RangeTestRecord> = self.nodes.into_iter().flat_map(|n| n.records).collect();
        records.sort_by(|a, b| {
            a.time
                .cmp(&b.time)
                .then(a.node_id.cmp(&b.node_id))
                .then(a.seq.cmp(&b.seq))
        });
        let log = EventLog {
            fingerprint: self.sc.fingerprint(),
            seed: self.sc.seed,
            scenario: self.sc.clone(),
            entries: self.entries,
        };
        let stats = SimStats {
            messages_sent: self.seq,
            duration_ms: self.now,
            termination: self.stopped.unwrap_or(TerminationReason::MessageBudget),
            transmissions: self.transmissions,
            deferrals: log.deferrals(),
            collisions: log.collisions(),
        };
        SimOutput {
            log,
            records,
            sender_log: self.sender_log,
            stats,
        }
    }

    fn sender_position(&self) -> Position {
        self.nodes[self.sender].state.position
    }

    fn distance_from_sender(&self, idx: usize) -> f64 {
        self.nodes[idx].state.position.distance_to(&self.sender_position())
    }

    fn receivers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].state.role == NodeRole::Receiver)
    }

    fn stop(&mut self, reason: TerminationReason) {
        self.stopped = Some(reason);
        let id = self.nodes[self.sender].state.node_id;
        self.log(id, EventKind::Terminated { reason }, None, None);
    }

    fn on_tick(&mut self) -> Result<(), SimError> {
        if self.stopped.is_some() {
            return Ok(());
        }
        if let Some(max) = self.sc.max_messages {
            if self.seq >= max {
                self.stop(TerminationReason::MessageBudget);
                return Ok(());
            }
        }
        if let Some(d) = self.sc.duration_s {
            if self.now >= (d * 1000.0).round() as u64 {
                self.stop(TerminationReason::Duration);
                return Ok(());
            }
        }
        let farthest = self.receivers().fold(None::<(usize, f64)>, |best, i| {
            let d = self.distance_from_sender(i);
            match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            }
        });
        if let Some((i, _)) = farthest {
            let quiet_since = self.nodes[i].last_rx_ms.unwrap_or(0);
            let limit = u64::from(self.sc.termination_intervals) * self.interval_ms;
            if self.now - quiet_since >= limit {
                self.stop(TerminationReason::Silence);
                return Ok(());
            }
        }

        self.move_nodes();

        self.seq += 1;
        let sender = &self.nodes[self.sender].state;
        let packet = MeshPacket::broadcast(
            self.seq,
            sender.node_id,
            &self.sc.channel_name(),
            PacketKind::RangeTestSeq,
            self.sc.hop_limit,
            range_test_payload(self.seq),
        )?;
        let time = self.sc.start_time + Duration::milliseconds(self.now as i64);
        let rows: Vec<SenderLogEntry> = self
            .receivers()
            .map(|i| SenderLogEntry {
                time,
                seq: self.seq,
                node_id: self.nodes[i].state.node_id,
                distance_m: round_to(self.distance_from_sender(i), 10.0),
            })
            .collect();
        self.sender_log.extend(rows);
        self.send(self.sender, packet)?;
        self.schedule(self.now + self.interval_ms, Event::Tick);
        Ok(())
    }

    fn move_nodes(&mut self) {
        let dwell_ms = u64::from(self.sc.dwell_intervals) * self.interval_ms;
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            let target = match &n.mobility {
                Mobility::Fixed => None,
                Mobility::StepOutward => {
                    let ready = self.stage_two && n.rx_here >= 1 && self.now - n.arrived_at_ms >= dwell_ms;
                    ready.then(|| {
                        Position::new(
                            n.state.position.x_m + n.outward.0 * self.sc.increment_m,
                            n.state.position.y_m + n.outward.1 * self.sc.increment_m,
                        )
                    })
                }
                Mobility::Waypoints { points } => points
                    .iter()
                    .rev()
                    .find(|w| (w.at_s * 1000.0).round() as u64 <= self.now)
                    .map(|w| Position::new(w.x_m, w.y_m))
                    .filter(|p| *p != n.state.position),
            };
            if let Some(p) = target {
                let n = &mut self.nodes[i];
                n.state.position = p;
                n.arrived_at_ms = self.now;
                n.rx_here = 0;
                let id = n.state.node_id;
                self.log(id, EventKind::Moved { x_m: p.x_m, y_m: p.y_m }, None, None);
            }
        }
    }

    fn link_sample(&self, air_id: u64, tx_pos: Position, tx_id: u32, rx: usize) -> Result<LinkSample, SimError> {
        let rx_state = &self.nodes[rx].state;
        let distance = tx_pos.distance_to(&rx_state.position);
        let mut rng = match self.sc.shadowing {
            ShadowingMode::PerLocation => {
                let (a, pa, b, pb) = if tx_id <= rx_state.node_id {
                    (tx_id, tx_pos, rx_state.node_id, rx_state.position)
                } else {
                    (rx_state.node_id, rx_state.position, tx_id, tx_pos)
                };
                keyed_rng(
                    self.sc.seed,
                    TAG_LOCATION,
                    &[
                        u64::from(a),
                        u64::from(b),
                        grid(pa.x_m),
                        grid(pa.y_m),
                        grid(pb.x_m),
                        grid(pb.y_m),
                    ],
                )
            }
            ShadowingMode::PerPacket => keyed_rng(self.sc.seed, TAG_PACKET, &[air_id, u64::from(rx_state.node_id)]),
        };
        let d = distance.max(self.radio.model.d0_m);
        let mut loss = path_loss_db(&self.radio.model, d, &mut rng)?;
        if self.sc.fading_sigma_db > 0.0 {
            let mut fade = keyed_rng(self.sc.seed, TAG_FADING, &[air_id, u64::from(rx_state.node_id)]);
            loss += self.sc.fading_sigma_db * fade.sample::<f64, _>(StandardNormal);
        }
        let r = &self.radio;
        Ok(link_sample_from_loss(
            &r.band,
            &r.preset,
            distance,
            loss,
            r.noise_floor_dbm,
        ))
    }

    fn send(&mut self, node: usize, packet: MeshPacket) -> Result<(), SimError> {
        let outcome = self.nodes[node].state.transmit(packet.clone(), self.now)?;
        match outcome {
            TxOutcome::Sent(res) => self.put_on_air(node, packet, res.start_ms, res.end_ms),
            TxOutcome::Deferred { retry_at_ms } => {
                let id = self.nodes[node].state.node_id;
                self.log(id, EventKind::Deferred { retry_at_ms }, Some(&packet), None);
                self.schedule_retry(node, retry_at_ms);
                Ok(())
            }
        }
    }

    fn schedule_retry(&mut self, node: usize, at_ms: u64) {
        if !self.nodes[node].retry_scheduled && at_ms != u64::MAX {
            self.nodes[node].retry_scheduled = true;
            self.schedule(at_ms.max(self.now), Event::Retry(node));
        }
    }

    fn on_retry(&mut self, node: usize) -> Result<(), SimError> {
        self.nodes[node].retry_scheduled = false;
        let (sent, next) = self.nodes[node].state.drain_deferred(self.now)?;
        if let Some((packet, res)) = sent {
            self.put_on_air(node, packet, res.start_ms, res.end_ms)?;
        }
        if let Some(at) = next {
            self.schedule_retry(node, at);
        }
        Ok(())
    }

    fn put_on_air(&mut self, node: usize, packet: MeshPacket, start_ms: u64, end_ms: u64) -> Result<(), SimError> {
        let id = self.next_air_id;
        self.next_air_id += 1;
        let tx = &self.nodes[node].state;
        let (tx_pos, tx_id) = (tx.position, tx.node_id);
        let relay = packet.origin != tx_id;
        let mut samples = Vec::with_capacity(self.nodes.len());
        for rx in 0..self.nodes.len() {
            samples.push(if rx == node {
                None
            } else {
                Some(self.link_sample(id, tx_pos, tx_id, rx)?)
            });
        }
        self.log(
            tx_id,
            EventKind::Transmit {
                start_ms,
                end_ms,
                hop_limit: packet.hop_limit,
                relay,
            },
            Some(&packet),
            None,
        );
        self.transmissions += 1;
        self.on_air.push(OnAir {
            id,
            tx_node: Some(node),
            packet,
            start_ms,
            end_ms,
            samples,
        });
        self.schedule(end_ms, Event::TxEnd(id));
        Ok(())
    }

    fn on_tx_end(&mut self, id: u64) {
        let Some(idx) = self.on_air.iter().position(|a| a.id == id) else {
            return;
        };
        let Some(tx_node) = self.on_air[idx].tx_node else {
            return;
        };
        let (start, end) = (self.on_air[idx].start_ms, self.on_air[idx].end_ms);
        let packet = self.on_air[idx].packet.clone();
        for rx in 0..self.nodes.len() {
            let Some(sample) = self.on_air[idx].samples[rx] else {
                continue;
            };
            if !sample.received || rx == tx_node {
                continue;
            }
            let rx_id = self.nodes[rx].state.node_id;
            let half_duplex = self
                .on_air
                .iter()
                .any(|o| o.tx_node == Some(rx) && o.overlaps(start, end));
            if half_duplex {
                self.log(
                    rx_id,
                    EventKind::Drop {
                        reason: DropReason::HalfDuplex,
                    },
                    Some(&packet),
                    Some(sample),
                );
                continue;
            }
            let collided = self.on_air.iter().any(|o| {
                o.id != id
                    && o.overlaps(start, end)
                    && o.samples[rx].is_some_and(|s| s.rssi_dbm > sample.rssi_dbm - CAPTURE_MARGIN_DB)
            });
            if collided {
                self.log(
                    rx_id,
                    EventKind::Drop {
                        reason: DropReason::Collision,
                    },
                    Some(&packet),
                    Some(sample),
                );
                continue;
            }
            let mut rng = keyed_rng(
                self.sc.seed,
                TAG_CONTENTION,
                &[
                    u64::from(rx_id),
                    u64::from(packet.origin),
                    u64::from(packet.packet_id),
                    id,
                ],
            );
            match self.nodes[rx].state.on_receive(&packet, &sample, &mut rng) {
                RxAction::Deliver => self.deliver(rx, &packet, sample),
                RxAction::DeliverAndRelay { relay, delay_ms } => {
                    self.deliver(rx, &packet, sample);
                    self.queue_relay(rx, relay, delay_ms);
                }
                RxAction::Relay { relay, delay_ms } => self.queue_relay(rx, relay, delay_ms),
                RxAction::Drop(reason) => self.log(rx_id, EventKind::Drop { reason }, Some(&packet), Some(sample)),
            }
        }
    }

    fn queue_relay(&mut self, node: usize, packet: MeshPacket, delay_ms: u64) {
        let at_ms = self.now + delay_ms;
        let id = self.nodes[node].state.node_id;
        self.log(id, EventKind::RelayScheduled { at_ms }, Some(&packet), None);
        self.schedule(at_ms, Event::Rebroadcast { node, packet });
    }

    fn on_rebroadcast(&mut self, node: usize, packet: MeshPacket) -> Result<(), SimError> {
        if self.nodes[node]
            .state
            .take_pending_relay(packet.origin, packet.packet_id)
        {
            self.send(node, packet)
        } else {
            let id = self.nodes[node].state.node_id;
            self.log(id, EventKind::RelayCancelled, Some(&packet), None);
            Ok(())
        }
    }

    fn deliver(&mut self, rx: usize, packet: &MeshPacket, sample: LinkSample) {
        let hops = packet.hops_on_receive();
        let rx_id = self.nodes[rx].state.node_id;
        self.log(rx_id, EventKind::Deliver { hops }, Some(packet), Some(sample));
        if self.nodes[rx].state.role != NodeRole::Receiver || packet.kind != PacketKind::RangeTestSeq {
            return;
        }
        let Some(seq) = std::str::from_utf8(&packet.payload)
            .ok()
            .and_then(parse_range_test_payload)
        else {
            return;
        };
        let q = quantize_sample(&sample);
        let record = RangeTestRecord {
            time: self.sc.start_time + Duration::milliseconds(self.now as i64),
            node_id: rx_id,
            seq,
            distance_m: round_to(self.distance_from_sender(rx), 10.0),
            rssi_dbm: Some(q.rssi_dbm),
            snr_db: Some(q.snr_db),
            hops,
        };
        let cap = self.sc.record_cap_bytes;
        let n = &mut self.nodes[rx];
        n.rx_here += 1;
        n.rx_total += 1;
        n.last_rx_ms = Some(self.now);
        n.record_bytes += record.canonical_line_len();
        n.records.push_back(record);
        if let Some(cap) = cap {
            while n.record_bytes > cap {
                let Some(old) = n.records.pop_front() else { break };
                n.record_bytes -= old.canonical_line_len();
            }
        }
        if !self.stage_two && self.receivers().all(|i| self.nodes[i].rx_total > 0) {
            self.stage_two = true;
            let id = self.nodes[self.sender].state.node_id;
            self.log(id, EventKind::StageTwo, None, None);
        }
    }

    fn next_background_gap(&mut self) -> u64 {
        let per_ms = self.sc.background_tx_per_min / 60_000.0;
        let gap: f64 = Exp::new(per_ms)
            .expect("rate validated positive")
            .sample(&mut self.bg_rng);
        (gap.ceil() as u64).max(1)
    }

    fn on_background(&mut self) -> Result<(), SimError> {
        if self.stopped.is_some() {
            return Ok(());
        }
        let center = self.sender_position();
        let r = self.sc.background_radius_m * self.bg_rng.gen::<f64>().sqrt();
        let theta = self.bg_rng.gen::<f64>() * std::f64::consts::TAU;
        let pos = Position::new(center.x_m + r * theta.cos(), center.y_m + r * theta.sin());
        let bytes = self.sc.background_payload_bytes;
        let airtime = airtime_ms_ceil(&self.radio.preset, bytes)?;
        self.bg_packets += 1;
        let packet = MeshPacket {
            packet_id: self.bg_packets,
            origin: BACKGROUND_NODE,
            destination: BROADCAST,
            hop_limit: 0,
            hop_start: 0,
            channel: channel_hash("background"),
            kind: PacketKind::Telemetry,
            payload: vec![0; bytes.saturating_sub(HEADER_LEN)],
        };
        let mut samples = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let d = pos.distance_to(&n.state.position).max(self.radio.model.d0_m);
            samples.push(Some(self.radio.sample(d, &mut self.bg_rng)?));
        }
        let id = self.next_air_id;
        self.next_air_id += 1;
        self.log(
            BACKGROUND_NODE,
            EventKind::Transmit {
                start_ms: self.now,
                end_ms: self.now + airtime,
                hop_limit: 0,
                relay: false,
            },
            Some(&packet),
            None,
        );
        self.on_air.push(OnAir {
            id,
            tx_node: None,
            packet,
            start_ms: self.now,
            end_ms: self.now + airtime,
            samples,
        });
        let gap = self.next_background_gap();
        self.schedule(self.now + gap, Event::Background);
        Ok(())
    }
}
