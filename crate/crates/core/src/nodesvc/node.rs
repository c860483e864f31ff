use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path as FsPath;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{relay_host_port, NodeConfig, ProbeConfig};
use super::queue::{Outbound, OutboundQueue};
use super::transport::{prefer_cellular, CellularProbe, Path, PathSelector, ScriptedProbe, TcpProbe, TransportStatus};
use super::NodeError;
use crate::identity::{
    dearmor, hex, unhex, verify_chain, ArmorKind, CertChain, CertSummary, Certificate, ChainVerdict, FileStore,
    Fingerprint, KeyHandle, MemoryStore, RevocationList, SecureStore, SigningRequest, Subject, Trust,
};
use crate::mesh::{MeshPacket, NodeId, PacketKind};
use crate::messaging::{
    action_frames, chain_frames, compose_and_sign, to_mesh_frames, validate, ActionKind, ChainCache, CommunityView,
    FlagNote, IngestOutcome, Message, MessageId, ModerationAction, ModerationOutcome, Principal, Reassembled,
    Reassembler, Scope, Step, Target, Verdict, WireMessage, DEFAULT_REASSEMBLY_TIMEOUT_MS,
};

pub const IDENTITY_KEY_HANDLE: &str = "node";
pub const SNAPSHOT_FILE: &str = "node-state.json";
const CERT_REQUEST_BACKOFF_MS: i64 = 10_000;
const CERT_RESPONSE_BACKOFF_MS: i64 = 5_000;
const MAX_AWAITING_PER_SENDER: usize = 64;
const SENT_LOG_LEN: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum IdentityStatus {
    /// No key yet.
    #[serde(rename = "none")]
    Absent,
    /// Key generated, request waiting for an administrator. Read-only.
    Pending {
        request: SigningRequest,
    },
    Active {
        chain: CertChain,
    },
}

impl IdentityStatus {
    pub fn label(&self) -> &'static str {
        match self {
            IdentityStatus::Absent => "none",
            IdentityStatus::Pending { .. } => "pending",
            IdentityStatus::Active { .. } => "active",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayKind {
    Message,
    Moderation,
}

/// What the cellular path carries: canonical bytes of a full message (chain
/// included) or a moderation action, base64 encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayEnvelope {
    pub kind: RelayKind,
    pub data: String,
}

impl RelayEnvelope {
    pub fn for_item(item: &Outbound) -> Self {
        let (kind, bytes) = match item {
            Outbound::Message { message } => (RelayKind::Message, message.encode()),
            Outbound::Moderation { action } => (RelayKind::Moderation, action.encode()),
        };
        Self {
            kind,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Outbound, NodeError> {
        let bytes = STANDARD
            .decode(self.data.trim())
            .map_err(|e| NodeError::State(format!("relay envelope: {e}")))?;
        Ok(match self.kind {
            RelayKind::Message => Outbound::Message {
                message: Message::decode(&bytes)?,
            },
            RelayKind::Moderation => Outbound::Moderation {
                action: ModerationAction::decode(&bytes)?,
            },
        })
    }
}

/// The cellular path. Errors mean the item was not delivered.
pub trait CellularLink: Send {
    fn send(&mut self, envelope: &RelayEnvelope) -> Result<(), String>;
}

pub struct NoCellular;

impl CellularLink for NoCellular {
    fn send(&mut self, _: &RelayEnvelope) -> Result<(), String> {
        Err("no cellular link configured".into())
    }
}

/// Keeps what it is sent; fails while `up` is false. Clones share state.
#[derive(Clone)]
pub struct RecordingLink {
    pub sent: Arc<Mutex<Vec<RelayEnvelope>>>,
    pub up: Arc<AtomicBool>,
}

impl Default for RecordingLink {
    fn default() -> Self {
        Self {
            sent: Arc::default(),
            up: Arc::new(AtomicBool::new(true)),
        }
    }
}

impl RecordingLink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_up(&self, up: bool) {
        self.up.store(up, Ordering::SeqCst);
    }

    pub fn sent(&self) -> Vec<RelayEnvelope> {
        self.sent.lock().expect("poisoned").clone()
    }
}

impl CellularLink for RecordingLink {
    fn send(&mut self, envelope: &RelayEnvelope) -> Result<(), String> {
        if !self.up.load(Ordering::SeqCst) {
            return Err("relay unreachable".into());
        }
        self.sent.lock().expect("poisoned").push(envelope.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    Local,
    Mesh,
    Cellular,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageView {
    pub id: String,
    pub date_ms: i64,
    pub content: String,
    pub scope: Scope,
    pub official: bool,
    pub sender_user_id: String,
    pub sender_name: String,
    pub sender_serial: u64,
    pub verdict: Verdict,
    pub hidden: bool,
    pub flags: Vec<FlagNote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageDetail {
    #[serde(flatten)]
    pub view: MessageView,
    pub signature: String,
    pub sender_fingerprint: String,
    /// Leaf, intermediary, root.
    pub chain: Vec<CertSummary>,
    pub sender_chain: CertChain,
    pub quarantined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub zipcode: String,
    pub visible: usize,
    pub hidden: usize,
    pub quarantined: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearbyNode {
    pub node_id: NodeId,
    pub last_heard_ms: i64,
    pub hops: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostReceipt {
    pub id: String,
    pub official: bool,
    /// Path it left on, if it left at all.
    pub path: Option<Path>,
    pub queued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentRecord {
    pub object_id: String,
    pub path: Path,
    pub at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeEvent {
    Message {
        message: MessageView,
        via: Via,
    },
    Moderation {
        zipcode: String,
        action_id: String,
        target: Target,
        kind: ActionKind,
        via: Via,
    },
    PathChanged {
        path: Path,
        at_ms: i64,
    },
    Sent(SentRecord),
    Identity {
        state: String,
    },
    Warning {
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredMessage {
    pub message: Message,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub identity: IdentityStatus,
    pub trust: Option<Trust>,
    pub messages: Vec<StoredMessage>,
    pub actions: Vec<ModerationAction>,
    pub queue: OutboundQueue,
    pub next_packet_id: u32,
}

pub struct NodeCore {
    cfg: NodeConfig,
    store: Box<dyn SecureStore>,
    identity: IdentityStatus,
    trust: Option<Trust>,
    communities: BTreeMap<String, CommunityView>,
    log: Vec<StoredMessage>,
    index: HashMap<MessageId, usize>,
    actions: Vec<ModerationAction>,
    chains: ChainCache,
    reassembler: Reassembler,
    awaiting: HashMap<Fingerprint, Vec<WireMessage>>,
    last_cert_request: HashMap<Fingerprint, i64>,
    last_cert_response: HashMap<Fingerprint, i64>,
    queue: OutboundQueue,
    status: TransportStatus,
    selector: PathSelector,
    probe: Option<Box<dyn CellularProbe>>,
    cellular: Box<dyn CellularLink>,
    mesh_out: Vec<MeshPacket>,
    next_packet_id: u32,
    nearby: BTreeMap<NodeId, NearbyNode>,
    events: Vec<NodeEvent>,
    sent_log: VecDeque<SentRecord>,
    started_ms: i64,
    rng: ChaCha8Rng,
}

/// The probe a config asks for. Scripted timelines are relative to node start.
pub fn probe_from_config(cfg: &NodeConfig) -> Result<Box<dyn CellularProbe>, NodeError> {
    Ok(match &cfg.probe {
        ProbeConfig::Off => Box::new(ScriptedProbe::always(false)),
        ProbeConfig::Scripted { steps } => Box::new(ScriptedProbe::new(steps.clone())),
        ProbeConfig::Tcp { timeout_ms } => {
            let url = cfg
                .relay_url
                .as_deref()
                .ok_or_else(|| NodeError::Config("tcp probe needs relay_url".into()))?;
            let addr = relay_host_port(url).ok_or_else(|| NodeError::Config(format!("bad relay_url {url:?}")))?;
            Box::new(TcpProbe::new(addr, Duration::from_millis(*timeout_ms)))
        }
    })
}

impl NodeCore {
    /// `probe` of `None` means availability is pushed in with
    /// [`NodeCore::set_cellular_available`], e.g. from a separate prober thread.
    pub fn new(
        cfg: NodeConfig,
        store: Box<dyn SecureStore>,
        probe: Option<Box<dyn CellularProbe>>,
        cellular: Box<dyn CellularLink>,
        now_ms: i64,
    ) -> Result<Self, NodeError> {
        cfg.validate()?;
        let mut rng = match cfg.seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_entropy(),
        };
        let next_packet_id = rand::Rng::gen(&mut rng);
        Ok(Self {
            status: TransportStatus::initial(cfg.mesh_attached),
            selector: PathSelector::new(prefer_cellular, cfg.dwell_ms),
            queue: OutboundQueue::new(cfg.queue_capacity),
            cfg,
            store,
            identity: IdentityStatus::Absent,
            trust: None,
            communities: BTreeMap::new(),
            log: Vec::new(),
            index: HashMap::new(),
            actions: Vec::new(),
            chains: ChainCache::new(),
            reassembler: Reassembler::new(DEFAULT_REASSEMBLY_TIMEOUT_MS),
            awaiting: HashMap::new(),
            last_cert_request: HashMap::new(),
            last_cert_response: HashMap::new(),
            probe,
            cellular,
            mesh_out: Vec::new(),
            next_packet_id,
            nearby: BTreeMap::new(),
            events: Vec::new(),
            sent_log: VecDeque::new(),
            started_ms: now_ms,
            rng,
        })
    }

    /// Keys under `data_dir/keys`, trust root from the config, state from
    /// `data_dir/node-state.json` when present.
    pub fn open(
        cfg: NodeConfig,
        probe: Option<Box<dyn CellularProbe>>,
        cellular: Box<dyn CellularLink>,
        now_ms: i64,
    ) -> Result<Self, NodeError> {
        let store: Box<dyn SecureStore> = match &cfg.data_dir {
            Some(dir) => Box::new(FileStore::open(dir.join("keys"))?),
            None => Box::new(MemoryStore::new()),
        };
        let data_dir = cfg.data_dir.clone();
        let trust_root = cfg.trust_root.clone();
        let mut node = Self::new(cfg, store, probe, cellular, now_ms)?;
        if let Some(dir) = data_dir {
            let path = dir.join(SNAPSHOT_FILE);
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                let snap: NodeSnapshot =
                    serde_json::from_str(&text).map_err(|e| NodeError::State(format!("{}: {e}", path.display())))?;
                node.restore(snap)?;
            }
        }
        if let Some(path) = trust_root {
            node.set_trust(load_root(&path)?);
        }
        Ok(node)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn node_id(&self) -> NodeId {
        self.cfg.node_id
    }

    pub fn identity(&self) -> &IdentityStatus {
        &self.identity
    }

    pub fn trust(&self) -> Option<&Trust> {
        self.trust.as_ref()
    }

    pub fn user_id(&self) -> Option<&str> {
        match &self.identity {
            IdentityStatus::Absent => None,
            IdentityStatus::Pending { request } => Some(&request.subject.user_id),
            IdentityStatus::Active { chain } => Some(&chain.leaf.subject.user_id),
        }
    }

    pub fn status(&self) -> TransportStatus {
        TransportStatus {
            queue_len: self.queue.len(),
            ..self.status.clone()
        }
    }

    pub fn queue(&self) -> &OutboundQueue {
        &self.queue
    }

    pub fn sent_log(&self) -> impl Iterator<Item = &SentRecord> {
        self.sent_log.iter()
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn take_mesh_out(&mut self) -> Vec<MeshPacket> {
        std::mem::take(&mut self.mesh_out)
    }

    fn warn(&mut self, detail: impl Into<String>) {
        self.events.push(NodeEvent::Warning { detail: detail.into() });
    }

    // Identity

    /// Generates a key into the node's store and returns the signing request
    /// to hand to an administrator. The node stays read-only until
    /// [`NodeCore::import_chain`].
    pub fn generate_identity(
        &mut self,
        subject: Subject,
        id_evidence: Vec<u8>,
        now_ms: i64,
    ) -> Result<SigningRequest, NodeError> {
        if matches!(self.identity, IdentityStatus::Active { .. }) {
            return Err(NodeError::State("identity already active".into()));
        }
        let handle = KeyHandle::new(IDENTITY_KEY_HANDLE);
        let (_, request) = crate::identity::generate_identity(
            subject,
            id_evidence,
            self.store.as_mut(),
            &handle,
            now_ms.div_euclid(1000),
            &mut self.rng,
        )?;
        self.identity = IdentityStatus::Pending {
            request: request.clone(),
        };
        self.events.push(NodeEvent::Identity {
            state: "pending".into(),
        });
        Ok(request)
    }

    pub fn import_chain(&mut self, chain: CertChain, now_ms: i64) -> Result<(), NodeError> {
        let trust = self
            .trust
            .as_ref()
            .ok_or_else(|| NodeError::State("no trust root configured".into()))?;
        if let ChainVerdict::Invalid { reason } = verify_chain(&chain, &trust.root, &trust.crl, now_ms.div_euclid(1000))
        {
            return Err(NodeError::State(format!("certificate chain does not verify: {reason}")));
        }
        let key = self.store.get(&KeyHandle::new(IDENTITY_KEY_HANDLE))?;
        if key.verifying_key().to_bytes() != chain.leaf.public_key {
            return Err(NodeError::State("certificate is for a different key".into()));
        }
        self.chains.insert(chain.clone());
        self.identity = IdentityStatus::Active { chain };
        self.events.push(NodeEvent::Identity { state: "active".into() });
        Ok(())
    }

    pub fn set_trust(&mut self, root: Certificate) {
        match &mut self.trust {
            Some(t) if t.root == root => {}
            _ => self.trust = Some(Trust::new(root)),
        }
    }

    /// Installs a newer revocation list. False if it added nothing.
    pub fn update_crl(&mut self, crl: RevocationList, now_ms: i64) -> Result<bool, NodeError> {
        let trust = self
            .trust
            .as_mut()
            .ok_or_else(|| NodeError::State("no trust root configured".into()))?;
        Ok(trust
            .crl
            .accept_update(crl, &trust.root.clone(), now_ms.div_euclid(1000))?)
    }

    fn principal(&self) -> Result<(Principal, &Trust), NodeError> {
        let IdentityStatus::Active { chain } = &self.identity else {
            return Err(NodeError::ReadOnly(
                "no approved certificate: this node may read but not post".into(),
            ));
        };
        let trust = self
            .trust
            .as_ref()
            .ok_or_else(|| NodeError::State("no trust root configured".into()))?;
        let key = self.store.get(&KeyHandle::new(IDENTITY_KEY_HANDLE))?;
        Ok((Principal::new(key, chain.clone()), trust))
    }

    // Sending

    pub fn post(&mut self, content: &str, scope: Scope, now_ms: i64) -> Result<PostReceipt, NodeError> {
        let (principal, trust) = self.principal()?;
        let trust = trust.clone();
        let message = compose_and_sign(content, scope, &principal, &trust, now_ms, &mut self.rng)?;
        let verdict = validate(&message, &trust, now_ms.div_euclid(1000));
        match self.record(message.clone(), verdict, Via::Local, true) {
            IngestOutcome::RateLimited => return Err(NodeError::RateLimited),
            IngestOutcome::Quarantined { reason } => {
                return Err(NodeError::State(format!("own message failed validation: {reason}")))
            }
            _ => {}
        }
        let receipt = self.enqueue(
            Outbound::Message {
                message: message.clone(),
            },
            &message.id,
            now_ms,
        );
        Ok(PostReceipt {
            id: message.id_hex(),
            official: message.official,
            path: receipt,
            queued: receipt.is_none(),
        })
    }

    pub fn moderate(
        &mut self,
        kind: ActionKind,
        target: Target,
        zipcode: &str,
        now_ms: i64,
    ) -> Result<ModerationAction, NodeError> {
        let (principal, trust) = self.principal()?;
        let trust = trust.clone();
        let action = ModerationAction::sign(kind, target, zipcode, &principal, &trust, now_ms)?;
        self.apply_action(action.clone(), now_ms.div_euclid(1000), Some(Via::Local))?;
        let id = action.id();
        self.enqueue(Outbound::Moderation { action: action.clone() }, &id, now_ms);
        Ok(action)
    }

    /// Queues and flushes. Returns the path if this item left immediately.
    fn enqueue(&mut self, item: Outbound, id: &[u8; 16], now_ms: i64) -> Option<Path> {
        if let Some(evicted) = self.queue.push(item, now_ms) {
            self.warn(format!(
                "outbound queue full ({}): dropped oldest entry from {} ms",
                self.queue.capacity(),
                evicted.enqueued_ms
            ));
        }
        let before = self.sent_log.len();
        self.flush(now_ms);
        let id = hex(id);
        self.sent_log
            .iter()
            .skip(before.min(self.sent_log.len()))
            .find(|r| r.object_id == id)
            .map(|r| r.path)
    }

    /// Drains the queue in order over the active path. A failed cellular
    /// send puts the item back, marks cellular down and falls back.
    pub fn flush(&mut self, now_ms: i64) {
        while let Some(path) = self.status.route() {
            let Some(q) = self.queue.pop() else { break };
            let object_id = match &q.item {
                Outbound::Message { message } => message.id_hex(),
                Outbound::Moderation { action } => hex(&action.id()),
            };
            match path {
                Path::Mesh => self.emit_mesh(&q.item),
                Path::Cellular => {
                    if let Err(e) = self.cellular.send(&RelayEnvelope::for_item(&q.item)) {
                        self.queue.requeue_front(q);
                        self.status.cellular_available = false;
                        self.warn(format!("cellular send failed: {e}"));
                        self.update_path(now_ms);
                        continue;
                    }
                }
            }
            let rec = SentRecord {
                object_id,
                path,
                at_ms: now_ms,
            };
            self.events.push(NodeEvent::Sent(rec.clone()));
            self.sent_log.push_back(rec);
            if self.sent_log.len() > SENT_LOG_LEN {
                self.sent_log.pop_front();
            }
        }
        self.status.queue_len = self.queue.len();
    }

    fn emit_mesh(&mut self, item: &Outbound) {
        let (kind, frames) = match item {
            Outbound::Message { message } => (PacketKind::ChatMessage, to_mesh_frames(message)),
            Outbound::Moderation { action } => (PacketKind::Moderation, action_frames(action)),
        };
        for f in frames {
            self.push_mesh(kind, f);
        }
    }

    fn push_mesh(&mut self, kind: PacketKind, payload: Vec<u8>) {
        let id = self.next_packet_id;
        self.next_packet_id = self.next_packet_id.wrapping_add(1);
        let channel = self.cfg.channel_name();
        match MeshPacket::broadcast(id, self.cfg.node_id, &channel, kind, self.cfg.hop_limit, payload) {
            Ok(p) => self.mesh_out.push(p),
            Err(e) => self.warn(format!("mesh frame: {e}")),
        }
    }

    // Transport

    fn update_path(&mut self, now_ms: i64) {
        if self.selector.update(&mut self.status, now_ms) {
            self.events.push(NodeEvent::PathChanged {
                path: self.status.active_path,
                at_ms: now_ms,
            });
        }
    }

    pub fn set_cellular_available(&mut self, up: bool, now_ms: i64) {
        self.status.cellular_available = up;
        self.status.last_probe_ms = Some(now_ms);
        self.update_path(now_ms);
        self.flush(now_ms);
    }

    pub fn set_mesh_available(&mut self, up: bool, now_ms: i64) {
        self.status.mesh_available = up;
        self.update_path(now_ms);
        self.flush(now_ms);
    }

    /// Probes if due, applies the path policy, flushes the queue, expires
    /// stale fragments and re-asks for missing sender chains.
    pub fn tick(&mut self, now_ms: i64) {
        let due = self
            .status
            .last_probe_ms
            .is_none_or(|t| now_ms.saturating_sub(t) >= self.cfg.probe_interval_ms);
        if due {
            if let Some(probe) = self.probe.as_mut() {
                self.status.cellular_available = probe.probe(now_ms - self.started_ms);
                self.status.last_probe_ms = Some(now_ms);
            }
        }
        self.update_path(now_ms);
        self.flush(now_ms);
        for e in self.reassembler.expire(now_ms) {
            self.warn(e.to_string());
        }
        let waiting: Vec<Fingerprint> = self.awaiting.keys().copied().collect();
        for fp in waiting {
            self.request_chain(fp, now_ms);
        }
    }

    // Receiving

    pub fn on_mesh_packet(&mut self, packet: &MeshPacket, now_ms: i64) {
        if packet.origin == self.cfg.node_id {
            return;
        }
        self.nearby.insert(
            packet.origin,
            NearbyNode {
                node_id: packet.origin,
                last_heard_ms: now_ms,
                hops: packet.hops_on_receive(),
            },
        );
        match packet.kind {
            PacketKind::ChatMessage | PacketKind::Moderation | PacketKind::CertResponse => {
                match self.reassembler.push(packet.kind, &packet.payload, now_ms) {
                    Ok(Some(done)) => self.on_object(done, now_ms),
                    Ok(None) => {}
                    Err(e) => self.warn(format!("from node {}: {e}", packet.origin)),
                }
            }
            PacketKind::CertRequest => self.answer_cert_request(&packet.payload, now_ms),
            _ => {}
        }
    }

    fn on_object(&mut self, done: Reassembled, now_ms: i64) {
        match done.kind {
            PacketKind::ChatMessage => match WireMessage::decode(&done.bytes) {
                Ok(wire) => match self.chains.resolve(wire) {
                    Ok(message) => {
                        self.accept(message, Via::Mesh, now_ms);
                    }
                    Err((wire, fp)) => {
                        let waiting = self.awaiting.entry(fp).or_default();
                        if waiting.len() < MAX_AWAITING_PER_SENDER {
                            waiting.push(wire);
                        }
                        self.request_chain(fp, now_ms);
                    }
                },
                Err(e) => self.warn(format!("chat message: {e}")),
            },
            PacketKind::CertResponse => match CertChain::decode(&done.bytes) {
                Ok(chain) if chain.leaf.fingerprint() == done.object_id => {
                    let fp = self.chains.insert(chain.clone());
                    self.last_cert_request.remove(&fp);
                    for wire in self.awaiting.remove(&fp).unwrap_or_default() {
                        match wire.attach(chain.clone()) {
                            Ok(m) => {
                                self.accept(m, Via::Mesh, now_ms);
                            }
                            Err(e) => self.warn(format!("attach chain: {e}")),
                        }
                    }
                }
                Ok(_) => self.warn("certificate response for the wrong fingerprint"),
                Err(e) => self.warn(format!("certificate response: {e}")),
            },
            PacketKind::Moderation => match ModerationAction::decode(&done.bytes) {
                Ok(action) => {
                    self.chains.insert(action.actor_chain.clone());
                    if let Err(e) = self.apply_action(action, now_ms.div_euclid(1000), Some(Via::Mesh)) {
                        self.warn(format!("moderation action rejected: {e}"));
                    }
                }
                Err(e) => self.warn(format!("moderation action: {e}")),
            },
            _ => {}
        }
    }

    fn request_chain(&mut self, fp: Fingerprint, now_ms: i64) {
        if self
            .last_cert_request
            .get(&fp)
            .is_some_and(|&t| now_ms.saturating_sub(t) < CERT_REQUEST_BACKOFF_MS)
        {
            return;
        }
        self.last_cert_request.insert(fp, now_ms);
        if self.status.mesh_available {
            self.push_mesh(PacketKind::CertRequest, fp.to_vec());
        }
    }

    fn answer_cert_request(&mut self, payload: &[u8], now_ms: i64) {
        let Ok(fp) = <Fingerprint>::try_from(payload) else {
            return;
        };
        let Some(chain) = self.chains.get(&fp).cloned() else {
            return;
        };
        if self
            .last_cert_response
            .get(&fp)
            .is_some_and(|&t| now_ms.saturating_sub(t) < CERT_RESPONSE_BACKOFF_MS)
        {
            return;
        }
        self.last_cert_response.insert(fp, now_ms);
        for f in chain_frames(&chain) {
            self.push_mesh(PacketKind::CertResponse, f);
        }
    }

    /// An envelope that arrived over someone's cellular relay.
    pub fn on_relay_envelope(&mut self, envelope: &RelayEnvelope, now_ms: i64) -> Result<String, NodeError> {
        match envelope.decode()? {
            Outbound::Message { message } => {
                let outcome = self.accept(message, Via::Cellular, now_ms);
                Ok(outcome_label(&outcome).to_string())
            }
            Outbound::Moderation { action } => {
                self.chains.insert(action.actor_chain.clone());
                let o = self.apply_action(action, now_ms.div_euclid(1000), Some(Via::Cellular))?;
                Ok(match o {
                    ModerationOutcome::Applied => "applied",
                    ModerationOutcome::AlreadyApplied => "already_applied",
                }
                .to_string())
            }
        }
    }

    /// Validates a received message and files it.
    pub fn accept(&mut self, message: Message, via: Via, now_ms: i64) -> IngestOutcome {
        if self.index.contains_key(&message.id) {
            return IngestOutcome::Duplicate;
        }
        self.chains.insert(message.sender_chain.clone());
        let verdict = match &self.trust {
            Some(t) => validate(&message, t, now_ms.div_euclid(1000)),
            None => Verdict::Rejected {
                step: Step::Root,
                reason: "no trust root configured".into(),
            },
        };
        let outcome = self.record(message, verdict, via, true);
        if let IngestOutcome::Quarantined { reason } = &outcome {
            self.warn(format!("quarantined message: {reason}"));
        }
        outcome
    }

    fn record(&mut self, message: Message, verdict: Verdict, via: Via, emit: bool) -> IngestOutcome {
        if self.index.contains_key(&message.id) {
            return IngestOutcome::Duplicate;
        }
        let outcome = match message.scope.zipcode() {
            Some(zip) => {
                let limit = self.cfg.rate_limit;
                self.communities
                    .entry(zip.to_string())
                    .or_insert_with(|| CommunityView::with_limit(zip, limit))
                    .ingest(message.clone(), &verdict)
            }
            None => match &verdict {
                Verdict::Authentic => IngestOutcome::Visible,
                Verdict::Rejected { step, reason } => IngestOutcome::Quarantined {
                    reason: format!("step {} ({step:?}): {reason}", step.number()),
                },
            },
        };
        if matches!(
            outcome,
            IngestOutcome::Visible | IngestOutcome::Hidden | IngestOutcome::Quarantined { .. }
        ) {
            self.index.insert(message.id, self.log.len());
            self.log.push(StoredMessage { message, verdict });
            if emit && !matches!(outcome, IngestOutcome::Quarantined { .. }) {
                let view = self.view_of(self.log.last().expect("just pushed"));
                self.events.push(NodeEvent::Message { message: view, via });
            }
        }
        outcome
    }

    fn apply_action(
        &mut self,
        action: ModerationAction,
        at_s: i64,
        emit: Option<Via>,
    ) -> Result<ModerationOutcome, NodeError> {
        let trust = self
            .trust
            .as_ref()
            .ok_or_else(|| NodeError::State("no trust root configured".into()))?;
        let limit = self.cfg.rate_limit;
        let view = self
            .communities
            .entry(action.zipcode.clone())
            .or_insert_with(|| CommunityView::with_limit(action.zipcode.clone(), limit));
        let outcome = view.moderate(&action, trust, at_s)?;
        if outcome == ModerationOutcome::Applied {
            if let Some(via) = emit {
                self.events.push(NodeEvent::Moderation {
                    zipcode: action.zipcode.clone(),
                    action_id: hex(&action.id()),
                    target: action.target.clone(),
                    kind: action.kind.clone(),
                    via,
                });
            }
            self.actions.push(action);
        }
        Ok(outcome)
    }

    // Views

    fn view_of(&self, stored: &StoredMessage) -> MessageView {
        let m = &stored.message;
        let community = m.scope.zipcode().and_then(|z| self.communities.get(z));
        let leaf = &m.sender_chain.leaf;
        MessageView {
            id: m.id_hex(),
            date_ms: m.date_ms,
            content: m.content.clone(),
            scope: m.scope.clone(),
            official: m.official,
            sender_user_id: leaf.subject.user_id.clone(),
            sender_name: leaf.subject.name.clone(),
            sender_serial: leaf.serial,
            verdict: stored.verdict.clone(),
            hidden: community.is_some_and(|c| c.is_hidden(&m.id)),
            flags: community.map(|c| c.flags(&m.id)).unwrap_or_default(),
        }
    }

    /// Visible messages of a community in display order.
    pub fn list_community(&self, zipcode: &str) -> Vec<MessageView> {
        let Some(view) = self.communities.get(zipcode) else {
            return Vec::new();
        };
        view.visible()
            .into_iter()
            .filter_map(|m| self.index.get(&m.id))
            .map(|&i| self.view_of(&self.log[i]))
            .collect()
    }

    pub fn list_hidden(&self, zipcode: &str) -> Vec<MessageView> {
        let Some(view) = self.communities.get(zipcode) else {
            return Vec::new();
        };
        view.hidden_messages()
            .into_iter()
            .filter_map(|m| self.index.get(&m.id))
            .map(|&i| self.view_of(&self.log[i]))
            .collect()
    }

    /// Authentic direct messages to or from this node's user, oldest first.
    pub fn list_direct(&self) -> Vec<MessageView> {
        let Some(me) = self.user_id() else {
            return Vec::new();
        };
        let mut out: Vec<_> = self
            .log
            .iter()
            .filter(|s| s.verdict.is_authentic())
            .filter(|s| match &s.message.scope {
                Scope::Direct(to) => to == me || s.message.sender_user_id() == me,
                Scope::Community(_) => false,
            })
            .map(|s| self.view_of(s))
            .collect();
        out.sort_by(|a, b| (a.date_ms, &a.id).cmp(&(b.date_ms, &b.id)));
        out
    }

    pub fn quarantine(&self) -> Vec<MessageView> {
        self.log
            .iter()
            .filter(|s| !s.verdict.is_authentic())
            .map(|s| self.view_of(s))
            .collect()
    }

    pub fn message_detail(&self, id_hex: &str) -> Result<MessageDetail, NodeError> {
        let id: MessageId = unhex(id_hex)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| NodeError::NotFound(format!("message {id_hex}")))?;
        let stored = self
            .index
            .get(&id)
            .map(|&i| &self.log[i])
            .ok_or_else(|| NodeError::NotFound(format!("message {id_hex}")))?;
        let chain = &stored.message.sender_chain;
        Ok(MessageDetail {
            view: self.view_of(stored),
            signature: hex(&stored.message.signature),
            sender_fingerprint: hex(&stored.message.sender_fingerprint()),
            chain: vec![chain.leaf.summary(), chain.intermediary.summary(), chain.root.summary()],
            sender_chain: chain.clone(),
            quarantined: !stored.verdict.is_authentic(),
        })
    }

    pub fn communities(&self) -> Vec<CommunitySummary> {
        let mut quarantined: BTreeMap<&str, usize> = BTreeMap::new();
        for s in self.log.iter().filter(|s| !s.verdict.is_authentic()) {
            if let Some(z) = s.message.scope.zipcode() {
                *quarantined.entry(z).or_default() += 1;
            }
        }
        let mut zips: Vec<&str> = self.communities.keys().map(String::as_str).collect();
        if !zips.contains(&self.cfg.zipcode.as_str()) {
            zips.push(&self.cfg.zipcode);
            zips.sort();
        }
        zips.into_iter()
            .map(|z| {
                let view = self.communities.get(z);
                CommunitySummary {
                    zipcode: z.to_string(),
                    visible: view.map_or(0, |v| v.visible().len()),
                    hidden: view.map_or(0, |v| v.hidden_messages().len()),
                    quarantined: quarantined.get(z).copied().unwrap_or(0),
                }
            })
            .collect()
    }

    pub fn actions(&self) -> &[ModerationAction] {
        &self.actions
    }

    /// Nodes heard within `window_ms` of `now_ms`, by node id.
    pub fn nearby(&self, window_ms: i64, now_ms: i64) -> Vec<NearbyNode> {
        self.nearby
            .values()
            .filter(|n| now_ms.saturating_sub(n.last_heard_ms) <= window_ms)
            .copied()
            .collect()
    }

    pub fn chain_cache_len(&self) -> usize {
        self.chains.len()
    }

    // Persistence

    pub fn snapshot(&self) -> NodeSnapshot {
        NodeSnapshot {
            identity: self.identity.clone(),
            trust: self.trust.clone(),
            messages: self.log.clone(),
            actions: self.actions.clone(),
            queue: self.queue.clone(),
            next_packet_id: self.next_packet_id,
        }
    }

    /// Rebuilds state from a snapshot, keeping each message's recorded
    /// verdict and checking each action at its own date.
    pub fn restore(&mut self, snap: NodeSnapshot) -> Result<(), NodeError> {
        self.identity = snap.identity;
        if let IdentityStatus::Active { chain } = &self.identity {
            self.chains.insert(chain.clone());
        }
        self.trust = snap.trust;
        self.queue = snap.queue;
        self.status.queue_len = self.queue.len();
        self.next_packet_id = snap.next_packet_id;
        for s in snap.messages {
            self.chains.insert(s.message.sender_chain.clone());
            self.record(s.message, s.verdict, Via::Local, false);
        }
        for a in snap.actions {
            let at_s = a.date_ms.div_euclid(1000);
            if let Err(e) = self.apply_action(a, at_s, None) {
                self.warn(format!("stored moderation action no longer applies: {e}"));
            }
        }
        Ok(())
    }

    /// Writes the snapshot to `data_dir` if one is configured.
    pub fn save(&self) -> Result<(), NodeError> {
        let Some(dir) = &self.cfg.data_dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_vec_pretty(&self.snapshot()).map_err(|e| NodeError::State(e.to_string()))?;
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }
}

/// Reads an armored root certificate.
pub fn load_root(path: &FsPath) -> Result<Certificate, NodeError> {
    let text = std::fs::read_to_string(path)?;
    let (kind, bytes) = dearmor(&text)?;
    match kind {
        ArmorKind::Certificate => Ok(Certificate::decode(&bytes)?),
        ArmorKind::CertificateChain => Ok(CertChain::decode(&bytes)?.root),
        other => Err(NodeError::Config(format!(
            "{}: expected a certificate, found {other:?}",
            path.display()
        ))),
    }
}

pub fn outcome_label(o: &IngestOutcome) -> &'static str {
    match o {
        IngestOutcome::Visible => "visible",
        IngestOutcome::Hidden => "hidden",
        IngestOutcome::Duplicate => "duplicate",
        IngestOutcome::OutOfScope => "out_of_scope",
        IngestOutcome::Deleted => "deleted",
        IngestOutcome::Quarantined { .. } => "quarantined",
        IngestOutcome::RateLimited => "rate_limited",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{Authority, Lineage, RoleFlags};
    use crate::mesh::Position;
    use crate::nodesvc::{MeshHub, TimelineStep};
    use crate::phy::RadioConfig;
    use std::collections::HashSet;

    const T0: i64 = 1_760_000_000_000;

    struct World {
        authority: Authority,
    }

    impl World {
        fn new() -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let authority =
                Authority::bootstrap("Test", Box::new(MemoryStore::new()), T0 / 1000 - 60, &mut rng).unwrap();
            Self { authority }
        }

        fn node(&self, id: NodeId, cfg: impl FnOnce(&mut NodeConfig)) -> NodeCore {
            let mut c = NodeConfig::new(id);
            c.seed = Some(u64::from(id));
            cfg(&mut c);
            let mut n = NodeCore::new(c, Box::new(MemoryStore::new()), None, Box::new(NoCellular), T0).unwrap();
            n.set_trust(self.authority.root().clone());
            n
        }

        fn enrol(&mut self, node: &mut NodeCore, user: &str, lineage: Lineage, roles: RoleFlags, zip: Option<&str>) {
            let req = node
                .generate_identity(Subject::new(user.to_uppercase(), user), b"id".to_vec(), T0)
                .unwrap();
            let id = hex(&self.authority.submit(req).unwrap());
            let cert = self
                .authority
                .approve(&id, lineage, roles, zip.map(String::from), T0 / 1000)
                .unwrap();
            let chain = self.authority.chain_for(cert.serial).unwrap();
            node.import_chain(chain, T0).unwrap();
        }
    }

    #[test]
    fn read_only_until_approved() {
        let w = World::new();
        let mut n = w.node(1, |_| {});
        assert!(matches!(
            n.post("hi", Scope::community("8050"), T0),
            Err(NodeError::ReadOnly(_))
        ));
        n.generate_identity(Subject::new("Ana", "ana"), vec![], T0).unwrap();
        assert_eq!(n.identity().label(), "pending");
        assert!(matches!(
            n.post("hi", Scope::community("8050"), T0),
            Err(NodeError::ReadOnly(_))
        ));
    }

    #[test]
    fn offline_post_is_queued_then_sent_on_availability() {
        let mut w = World::new();
        let mut n = w.node(1, |c| c.mesh_attached = false);
        w.enrol(&mut n, "ana", Lineage::Civil, RoleFlags::empty(), None);
        let r = n.post("hello", Scope::community("8050"), T0).unwrap();
        assert!(r.queued);
        assert_eq!(n.status().queue_len, 1);
        assert_eq!(n.list_community("8050").len(), 1);
        assert!(n.take_mesh_out().is_empty());
        n.set_mesh_available(true, T0 + 1000);
        assert_eq!(n.status().queue_len, 0);
        assert_eq!(n.take_mesh_out().len(), 1);
    }

    #[test]
    fn queue_drops_oldest_with_warning() {
        let mut w = World::new();
        let mut n = w.node(1, |c| {
            c.mesh_attached = false;
            c.queue_capacity = 2;
            c.rate_limit = crate::messaging::RateLimit { window_s: 60, max: 100 };
        });
        w.enrol(&mut n, "ana", Lineage::Civil, RoleFlags::empty(), None);
        let ids: Vec<String> = (0..3)
            .map(|i| n.post(&format!("m{i}"), Scope::community("8050"), T0 + i).unwrap().id)
            .collect();
        assert_eq!(n.queue().len(), 2);
        assert_eq!(n.queue().dropped(), 1);
        let left: Vec<String> = n
            .queue()
            .iter()
            .map(|q| match &q.item {
                Outbound::Message { message } => message.id_hex(),
                Outbound::Moderation { .. } => unreachable!(),
            })
            .collect();
        assert_eq!(left, ids[1..]);
        assert!(n
            .take_events()
            .iter()
            .any(|e| matches!(e, NodeEvent::Warning { detail } if detail.contains("queue full"))));
    }

    #[test]
    fn rate_limit_refuses_local_post() {
        let mut w = World::new();
        let mut n = w.node(1, |c| {
            c.rate_limit = crate::messaging::RateLimit { window_s: 60, max: 2 }
        });
        w.enrol(&mut n, "ana", Lineage::Civil, RoleFlags::empty(), None);
        n.post("1", Scope::community("8050"), T0).unwrap();
        n.post("2", Scope::community("8050"), T0 + 1).unwrap();
        assert!(matches!(
            n.post("3", Scope::community("8050"), T0 + 2),
            Err(NodeError::RateLimited)
        ));
        assert_eq!(n.status().queue_len + n.sent_log().count(), 2);
    }

    #[test]
    fn cellular_up_down_up_loses_nothing() {
        let mut w = World::new();
        let link = RecordingLink::new();
        let mut c = NodeConfig::new(1);
        c.seed = Some(1);
        c.rate_limit = crate::messaging::RateLimit { window_s: 1, max: 1000 };
        let probe = ScriptedProbe::new(vec![
            TimelineStep { at_ms: 0, up: true },
            TimelineStep {
                at_ms: 20_000,
                up: false,
            },
            TimelineStep {
                at_ms: 40_000,
                up: true,
            },
        ]);
        let mut n = NodeCore::new(
            c,
            Box::new(MemoryStore::new()),
            Some(Box::new(probe)),
            Box::new(link.clone()),
            T0,
        )
        .unwrap();
        n.set_trust(w.authority.root().clone());
        w.enrol(&mut n, "ana", Lineage::Civil, RoleFlags::empty(), None);

        let mut posted = Vec::new();
        let mut paths = Vec::new();
        for t in (0..60_000).step_by(250) {
            let now = T0 + t;
            // The relay itself dies a little before the probe notices.
            link.set_up(!(19_000..40_000).contains(&t));
            n.tick(now);
            if t % 1000 == 0 {
                posted.push(n.post(&format!("t={t}"), Scope::community("8050"), now).unwrap().id);
            }
            if paths.last() != Some(&n.status().active_path) {
                paths.push(n.status().active_path);
            }
            let st = n.status();
            assert!(st.active_path != Path::Cellular || st.cellular_available);
        }
        assert_eq!(paths, vec![Path::Cellular, Path::Mesh, Path::Cellular]);
        let sent: HashSet<String> = n.sent_log().map(|r| r.object_id.clone()).collect();
        let queued: HashSet<String> = n
            .queue()
            .iter()
            .filter_map(|q| match &q.item {
                Outbound::Message { message } => Some(message.id_hex()),
                Outbound::Moderation { .. } => None,
            })
            .collect();
        for id in &posted {
            assert!(sent.contains(id) || queued.contains(id), "lost {id}");
        }
        assert_eq!(n.queue().dropped(), 0);
        assert!(n.sent_log().any(|r| r.path == Path::Mesh));
        // 0..19 s and 40..60 s went out over the relay.
        assert_eq!(link.sent().len(), 39);
    }

    fn shuttle(hub: &mut MeshHub, nodes: &mut [&mut NodeCore], now: i64) {
        for _ in 0..8 {
            let mut moved = false;
            for n in nodes.iter_mut() {
                for p in n.take_mesh_out() {
                    moved = true;
                    hub.send(p, now as u64).unwrap();
                }
            }
            for n in nodes.iter_mut() {
                for p in hub.take_inbox(n.node_id()) {
                    n.on_mesh_packet(&p, now);
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn hub() -> MeshHub {
        let radio = RadioConfig {
            sigma_db: 0.0,
            ..RadioConfig::default()
        }
        .resolve()
        .unwrap();
        MeshHub::new(radio, "LongFast", 3)
    }

    #[test]
    fn two_nodes_over_the_mesh_with_lazy_chain_fetch() {
        let mut w = World::new();
        let mut a = w.node(1, |_| {});
        let mut b = w.node(2, |c| c.x_m = 500.0);
        w.enrol(&mut a, "ana", Lineage::Civil, RoleFlags::empty(), None);
        let mut h = hub();
        h.attach(1, Position::new(0.0, 0.0), true);
        h.attach(2, Position::new(500.0, 0.0), true);

        let r = a.post("water at the school", Scope::community("8050"), T0).unwrap();
        assert_eq!(r.path, Some(Path::Mesh));
        shuttle(&mut h, &mut [&mut a, &mut b], T0 + 10);
        let seen = b.list_community("8050");
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].content, "water at the school");
        assert!(seen[0].verdict.is_authentic());
        let detail = b.message_detail(&r.id).unwrap();
        assert_eq!(detail.chain.len(), 3);
        assert!(b.nearby(60_000, T0 + 10).iter().any(|n| n.node_id == 1));
        assert!(b
            .take_events()
            .iter()
            .any(|e| matches!(e, NodeEvent::Message { via: Via::Mesh, .. })));

        // Second message needs no certificate exchange.
        a.post("second", Scope::community("8050"), T0 + 20_000).unwrap();
        let out = a.take_mesh_out();
        assert_eq!(out.len(), 1);
        assert!(out.iter().all(|p| p.kind == PacketKind::ChatMessage));
        for p in out {
            h.send(p, (T0 + 20_000) as u64).unwrap();
        }
        for p in h.take_inbox(2) {
            b.on_mesh_packet(&p, T0 + 20_000);
        }
        assert!(b.take_mesh_out().is_empty());
        assert_eq!(b.list_community("8050").len(), 2);
    }

    #[test]
    fn moderator_hide_propagates() {
        let mut w = World::new();
        let mut a = w.node(1, |_| {});
        let mut m = w.node(2, |_| {});
        w.enrol(&mut a, "ana", Lineage::Civil, RoleFlags::empty(), None);
        w.enrol(&mut m, "mod", Lineage::Civil, RoleFlags::MODERATOR, Some("8050"));
        let mut h = hub();
        h.attach(1, Position::new(0.0, 0.0), true);
        h.attach(2, Position::new(300.0, 0.0), true);
        let r = a.post("spam", Scope::community("8050"), T0).unwrap();
        shuttle(&mut h, &mut [&mut a, &mut m], T0);
        assert_eq!(m.list_community("8050").len(), 1);
        let id: MessageId = unhex(&r.id).unwrap().try_into().unwrap();
        m.moderate(ActionKind::Hide, Target::Message { id }, "8050", T0 + 1000)
            .unwrap();
        assert!(m.list_community("8050").is_empty());
        shuttle(&mut h, &mut [&mut a, &mut m], T0 + 1000);
        assert!(a.list_community("8050").is_empty());
        assert_eq!(a.list_hidden("8050").len(), 1);
        assert!(m
            .moderate(ActionKind::Hide, Target::Message { id }, "8004", T0 + 2000)
            .is_err());
    }

    #[test]
    fn relay_envelope_round_trip_and_direct_messages() {
        let mut w = World::new();
        let mut a = w.node(1, |_| {});
        let mut b = w.node(2, |_| {});
        w.enrol(&mut a, "ana", Lineage::Civil, RoleFlags::empty(), None);
        w.enrol(&mut b, "ben", Lineage::Civil, RoleFlags::empty(), None);
        a.post("psst", Scope::Direct("ben".into()), T0).unwrap();
        let out = a.snapshot().messages;
        let env = RelayEnvelope::for_item(&Outbound::Message {
            message: out[0].message.clone(),
        });
        assert_eq!(b.on_relay_envelope(&env, T0).unwrap(), "visible");
        assert_eq!(b.on_relay_envelope(&env, T0).unwrap(), "duplicate");
        assert_eq!(b.list_direct().len(), 1);
        assert_eq!(a.list_direct().len(), 1);
        let bad = RelayEnvelope {
            kind: RelayKind::Message,
            data: "!!".into(),
        };
        assert!(b.on_relay_envelope(&bad, T0).is_err());
    }

    #[test]
    fn snapshot_restore_keeps_views() {
        let mut w = World::new();
        let mut a = w.node(1, |c| c.mesh_attached = false);
        w.enrol(&mut a, "ana", Lineage::Civil, RoleFlags::ADMINISTRATOR, None);
        let r = a.post("one", Scope::community("8050"), T0).unwrap();
        a.post("two", Scope::community("8050"), T0 + 1).unwrap();
        let id: MessageId = unhex(&r.id).unwrap().try_into().unwrap();
        a.moderate(ActionKind::Delete, Target::Message { id }, "8050", T0 + 2)
            .unwrap();
        let snap: NodeSnapshot = serde_json::from_str(&serde_json::to_string(&a.snapshot()).unwrap()).unwrap();
        let mut c = NodeCore::new(
            a.config().clone(),
            Box::new(MemoryStore::new()),
            None,
            Box::new(NoCellular),
            T0,
        )
        .unwrap();
        c.restore(snap).unwrap();
        assert_eq!(c.list_community("8050"), a.list_community("8050"));
        assert_eq!(c.list_community("8050").len(), 1);
        assert_eq!(c.queue().len(), 3);
        assert_eq!(c.identity(), a.identity());
    }

    #[test]
    fn file_backed_node_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = World::new();
        let root_path = dir.path().join("root.pem");
        std::fs::write(
            &root_path,
            crate::identity::armor(ArmorKind::Certificate, &w.authority.root().encode()),
        )
        .unwrap();
        let mut c = NodeConfig::new(5);
        c.data_dir = Some(dir.path().join("data"));
        c.trust_root = Some(root_path);
        let mut n = NodeCore::open(c.clone(), None, Box::new(NoCellular), T0).unwrap();
        w.enrol(&mut n, "eve", Lineage::Official, RoleFlags::empty(), None);
        let r = n.post("official notice", Scope::community("8050"), T0).unwrap();
        assert!(r.official);
        n.save().unwrap();
        drop(n);
        let n = NodeCore::open(c, None, Box::new(NoCellular), T0).unwrap();
        assert_eq!(n.identity().label(), "active");
        assert_eq!(n.list_community("8050").len(), 1);
        assert!(n.list_community("8050")[0].official);
    }
}
