//! The serialized command loop. One thread owns the [`NodeCore`]; API
//! handlers and the CLI send it closures and wait for the answer. Events are
//! fanned out on a broadcast channel.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use offgrid_core::identity::IdentityError;
use offgrid_core::mesh::Position;
use offgrid_core::nodesvc::{
    probe_from_config, CellularLink, CellularProbe, MeshHub, NoCellular, NodeConfig, NodeCore, NodeError, NodeEvent,
    ProbeConfig, TcpProbe,
};
use tokio::sync::{broadcast, oneshot};

use crate::authority::AuthorityHost;
use crate::relay::HttpRelay;

pub const DEFAULT_TICK_MS: u64 = 100;
const EVENT_BUFFER: usize = 1024;
const RELAY_TIMEOUT: Duration = Duration::from_secs(3);
const SAVE_INTERVAL: Duration = Duration::from_secs(1);

pub type SharedHub = Arc<Mutex<MeshHub>>;

pub fn now_ms() -> i64 {
    chrono::Utc::now().timestamp_millis()
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("node service has stopped")]
    Stopped,
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("radio: {0}")]
    Radio(String),
}

/// Everything the command loop owns.
pub struct Daemon {
    pub core: NodeCore,
    pub authority: Option<AuthorityHost>,
    hub: Option<SharedHub>,
    stop: bool,
}

impl Daemon {
    pub fn new(core: NodeCore, authority: Option<AuthorityHost>, hub: Option<SharedHub>) -> Self {
        Self {
            core,
            authority,
            hub,
            stop: false,
        }
    }

    /// Moves packets between the core and the shared radio.
    fn pump(&mut self, now: i64) -> bool {
        let out = self.core.take_mesh_out();
        let Some(hub) = &self.hub else {
            return false;
        };
        let id = self.core.node_id();
        let inbox = {
            let mut h = hub.lock().expect("hub lock poisoned");
            let mut warnings = Vec::new();
            if self.core.status().mesh_available && h.is_attached(id) {
                for p in out {
                    if let Err(e) = h.send(p, now as u64) {
                        warnings.push(e.to_string());
                    }
                }
            }
            if let Err(e) = h.tick(now as u64) {
                warnings.push(e.to_string());
            }
            for w in warnings {
                tracing::warn!(node = id, "mesh: {w}");
            }
            h.take_inbox(id)
        };
        let got = !inbox.is_empty();
        for p in inbox {
            self.core.on_mesh_packet(&p, now);
        }
        got
    }
}

type Job = Box<dyn FnOnce(&mut Daemon) + Send>;

#[derive(Clone)]
pub struct NodeHandle {
    jobs: mpsc::Sender<Job>,
    events: broadcast::Sender<NodeEvent>,
}

impl NodeHandle {
    pub async fn call<T, F>(&self, f: F) -> Result<T, ServiceError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Daemon) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Box::new(move |d| {
                let _ = tx.send(f(d));
            }))
            .map_err(|_| ServiceError::Stopped)?;
        rx.await.map_err(|_| ServiceError::Stopped)
    }

    /// For callers outside an async runtime.
    pub fn call_blocking<T, F>(&self, f: F) -> Result<T, ServiceError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Daemon) -> T + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        self.jobs
            .send(Box::new(move |d| {
                let _ = tx.send(f(d));
            }))
            .map_err(|_| ServiceError::Stopped)?;
        rx.recv().map_err(|_| ServiceError::Stopped)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<NodeEvent> {
        self.events.subscribe()
    }
}

pub struct NodeService {
    handle: NodeHandle,
    thread: Option<JoinHandle<()>>,
    prober_stop: Arc<AtomicBool>,
}

impl NodeService {
    /// Starts the command loop, attaching the node to `hub` when its config
    /// says the mesh is attached.
    pub fn spawn(daemon: Daemon, tick_ms: u64) -> Self {
        let (jobs, rx) = mpsc::channel::<Job>();
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let handle = NodeHandle {
            jobs,
            events: events.clone(),
        };
        let mut d = daemon;
        if let Some(hub) = &d.hub {
            let cfg = d.core.config();
            if cfg.mesh_attached {
                hub.lock()
                    .expect("hub lock poisoned")
                    .attach(cfg.node_id, Position::new(cfg.x_m, cfg.y_m), cfg.relay);
            }
        }
        let tick = Duration::from_millis(tick_ms.max(1));
        let thread = std::thread::Builder::new()
            .name(format!("node-{}", d.core.node_id()))
            .spawn(move || {
                let mut next_tick = Instant::now();
                let mut dirty = false;
                let mut last_save = Instant::now();
                loop {
                    match rx.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
                        Ok(job) => {
                            job(&mut d);
                            dirty = true;
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                    if d.stop {
                        break;
                    }
                    let now = now_ms();
                    if Instant::now() >= next_tick {
                        d.core.tick(now);
                        next_tick = Instant::now() + tick;
                    }
                    dirty |= d.pump(now);
                    for e in d.core.take_events() {
                        if let NodeEvent::Warning { detail } = &e {
                            tracing::warn!(node = d.core.node_id(), "{detail}");
                        }
                        let _ = events.send(e);
                    }
                    if dirty && last_save.elapsed() >= SAVE_INTERVAL {
                        if let Err(e) = d.core.save() {
                            tracing::error!("saving node state: {e}");
                        }
                        dirty = false;
                        last_save = Instant::now();
                    }
                }
                if let Some(hub) = &d.hub {
                    hub.lock().expect("hub lock poisoned").detach(d.core.node_id());
                }
                if let Err(e) = d.core.save() {
                    tracing::error!("saving node state: {e}");
                }
            })
            .expect("spawn node thread");
        Self {
            handle,
            thread: Some(thread),
            prober_stop: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn handle(&self) -> NodeHandle {
        self.handle.clone()
    }

    /// Runs a TCP reachability probe on its own thread so a slow relay never
    /// stalls the command loop.
    pub fn start_prober(&self, mut probe: TcpProbe, interval: Duration) {
        let handle = self.handle.clone();
        let stop = self.prober_stop.clone();
        std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                let up = probe.probe(0);
                let sent = handle.jobs.send(Box::new(move |d: &mut Daemon| {
                    d.core.set_cellular_available(up, now_ms());
                }));
                if sent.is_err() {
                    break;
                }
                std::thread::sleep(interval);
            }
        });
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.prober_stop.store(true, Ordering::SeqCst);
        let _ = self.handle.jobs.send(Box::new(|d: &mut Daemon| d.stop = true));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for NodeService {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Opens a node from its config: keys and state from `data_dir`, an HTTP
/// relay client when `relay_url` is set, and the hosted authority if any.
/// A TCP probe is returned separately to run off the command loop.
pub fn build_daemon(cfg: NodeConfig, hub: Option<SharedHub>) -> Result<(Daemon, Option<TcpProbe>), ServiceError> {
    let cellular: Box<dyn CellularLink> = match &cfg.relay_url {
        Some(url) => Box::new(HttpRelay::new(url.clone(), RELAY_TIMEOUT)),
        None => Box::new(NoCellular),
    };
    let (probe, tcp): (Option<Box<dyn CellularProbe>>, Option<TcpProbe>) = match &cfg.probe {
        ProbeConfig::Tcp { timeout_ms } => {
            let url = cfg.relay_url.as_deref().unwrap_or_default();
            let addr = offgrid_core::nodesvc::relay_host_port(url)
                .ok_or_else(|| NodeError::Config(format!("bad relay_url {url:?}")))?;
            (None, Some(TcpProbe::new(addr, Duration::from_millis(*timeout_ms))))
        }
        _ => (Some(probe_from_config(&cfg)?), None),
    };
    let authority = cfg.authority_dir.as_deref().map(AuthorityHost::open).transpose()?;
    let mut core = NodeCore::open(cfg, probe, cellular, now_ms())?;
    if let Some(host) = &authority {
        if core.trust().is_none() {
            core.set_trust(host.authority().root().clone());
        }
        if !host.crl().is_empty() && core.trust().is_some_and(|t| &t.root == host.authority().root()) {
            core.update_crl(host.crl().clone(), now_ms())?;
        }
    }
    Ok((Daemon::new(core, authority, hub), tcp))
}
