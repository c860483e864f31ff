//! Several nodes on one in-process radio, enrolled by a throwaway authority.
//! The first node posts; the run ends when every other node shows the
//! message or the deadline passes.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use offgrid_core::identity::{hex, Authority, Lineage, MemoryStore, RoleFlags, Subject};
use offgrid_core::messaging::Scope;
use offgrid_core::nodesvc::{HubStats, MeshHub, NoCellular, NodeConfig, NodeCore};
use rand::SeedableRng;
use serde::Serialize;

use crate::service::{now_ms, Daemon, NodeService, ServiceError};

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub nodes: usize,
    pub spacing_m: f64,
    pub seed: u64,
    pub zipcode: String,
    pub content: String,
    pub timeout: Duration,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            nodes: 5,
            spacing_m: 600.0,
            seed: 7,
            zipcode: "8010".into(),
            content: "Water distribution at the town hall from 14:00".into(),
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoNode {
    pub node_id: u32,
    pub x_m: f64,
    pub received: bool,
    pub nearby: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub message_id: String,
    pub nodes: Vec<DemoNode>,
    pub transmissions: u64,
    pub deliveries: u64,
    pub elapsed_ms: u64,
}

impl DemoReport {
    pub fn all_received(&self) -> bool {
        self.nodes.iter().all(|n| n.received)
    }
}

pub fn run_demo(opts: &DemoOptions) -> Result<DemoReport, ServiceError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let now = now_ms();
    let mut authority = Authority::bootstrap("Demo authority", Box::new(MemoryStore::new()), now / 1000, &mut rng)?;

    let base = NodeConfig::new(1);
    let radio = base.radio.resolve().map_err(|e| ServiceError::Radio(e.to_string()))?;
    let hub = Arc::new(Mutex::new(MeshHub::new(radio, &base.channel_name(), opts.seed)));

    let mut services = Vec::new();
    for i in 0..opts.nodes {
        let mut cfg = NodeConfig::new(0x1000 + i as u32);
        cfg.zipcode = opts.zipcode.clone();
        cfg.x_m = i as f64 * opts.spacing_m;
        cfg.seed = Some(opts.seed.wrapping_add(i as u64));
        let mut core = NodeCore::new(cfg, Box::new(MemoryStore::new()), None, Box::new(NoCellular), now)?;
        core.set_trust(authority.root().clone());
        let req = core.generate_identity(
            Subject::new(format!("Resident {i}"), format!("resident-{i}")),
            Vec::new(),
            now,
        )?;
        authority.submit(req.clone())?;
        let cert = authority.approve(
            &hex(&req.request_id),
            Lineage::Civil,
            RoleFlags::empty(),
            None,
            now / 1000,
        )?;
        core.import_chain(authority.chain_for(cert.serial)?, now)?;
        services.push(NodeService::spawn(Daemon::new(core, None, Some(hub.clone())), 20));
    }

    let started = Instant::now();
    let zip = opts.zipcode.clone();
    let content = opts.content.clone();
    let receipt = services[0]
        .handle()
        .call_blocking(move |d| d.core.post(&content, Scope::community(zip), now_ms()))??;

    let mut received = vec![false; services.len()];
    while started.elapsed() < opts.timeout {
        for (i, s) in services.iter().enumerate() {
            if !received[i] {
                let zip = opts.zipcode.clone();
                let id = receipt.id.clone();
                received[i] = s
                    .handle()
                    .call_blocking(move |d| d.core.list_community(&zip).iter().any(|m| m.id == id))?;
            }
        }
        if received.iter().all(|&r| r) {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    let elapsed_ms = started.elapsed().as_millis() as u64;

    let mut nodes = Vec::new();
    for (i, s) in services.iter().enumerate() {
        let nearby = s.handle().call_blocking(|d| d.core.nearby(600_000, now_ms()).len())?;
        nodes.push(DemoNode {
            node_id: 0x1000 + i as u32,
            x_m: i as f64 * opts.spacing_m,
            received: received[i],
            nearby,
        });
    }
    for s in services {
        s.shutdown();
    }
    let HubStats {
        transmissions,
        deliveries,
        ..
    } = hub.lock().expect("hub lock poisoned").stats().clone();
    Ok(DemoReport {
        message_id: receipt.id,
        nodes,
        transmissions,
        deliveries,
        elapsed_ms,
    })
}
