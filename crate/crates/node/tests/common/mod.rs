#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use offgrid_core::identity::{hex, Authority, Lineage, MemoryStore, RoleFlags, Subject};
use offgrid_core::nodesvc::{CellularLink, MeshHub, NoCellular, NodeConfig, NodeCore};
use offgrid_node::api::spawn_server;
use offgrid_node::service::{now_ms, Daemon, NodeHandle, NodeService, SharedHub};
use rand::SeedableRng;

pub fn authority(seed: u64) -> Authority {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Authority::bootstrap(
        "Test authority",
        Box::new(MemoryStore::new()),
        now_ms() / 1000,
        &mut rng,
    )
    .unwrap()
}

pub fn hub() -> SharedHub {
    let radio = NodeConfig::new(1).radio.resolve().unwrap();
    Arc::new(Mutex::new(MeshHub::new(radio, "LongFast", 11)))
}

/// A node with an approved civil identity `user_id`.
pub fn enrolled(cfg: NodeConfig, ca: &mut Authority, user_id: &str, cellular: Box<dyn CellularLink>) -> NodeCore {
    let probe = offgrid_core::nodesvc::probe_from_config(&cfg).unwrap();
    let now = now_ms();
    let mut core = NodeCore::new(cfg, Box::new(MemoryStore::new()), Some(probe), cellular, now).unwrap();
    core.set_trust(ca.root().clone());
    let req = core
        .generate_identity(Subject::new(user_id.to_uppercase(), user_id), Vec::new(), now)
        .unwrap();
    ca.submit(req.clone()).unwrap();
    let cert = ca
        .approve(
            &hex(&req.request_id),
            Lineage::Civil,
            RoleFlags::empty(),
            None,
            now / 1000,
        )
        .unwrap();
    core.import_chain(ca.chain_for(cert.serial).unwrap(), now).unwrap();
    core
}

pub fn bare(cfg: NodeConfig) -> NodeCore {
    NodeCore::new(cfg, Box::new(MemoryStore::new()), None, Box::new(NoCellular), now_ms()).unwrap()
}

pub struct Running {
    pub service: NodeService,
    pub handle: NodeHandle,
    pub addr: SocketAddr,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

pub async fn start(daemon: Daemon) -> Running {
    let service = NodeService::spawn(daemon, 20);
    let handle = service.handle();
    let (addr, _) = spawn_server(handle.clone(), "127.0.0.1:0").await.unwrap();
    Running { service, handle, addr }
}
