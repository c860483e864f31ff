//! Path selection between the mesh and the cellular relay.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Mesh,
    Cellular,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportStatus {
    pub mesh_available: bool,
    pub cellular_available: bool,
    pub active_path: Path,
    pub last_probe_ms: Option<i64>,
    pub queue_len: usize,
}

impl TransportStatus {
    pub fn initial(mesh_available: bool) -> Self {
        Self {
            mesh_available,
            cellular_available: false,
            active_path: Path::Mesh,
            last_probe_ms: None,
            queue_len: 0,
        }
    }

    pub fn available(&self, path: Path) -> bool {
        match path {
            Path::Mesh => self.mesh_available,
            Path::Cellular => self.cellular_available,
        }
    }

    /// Where a send would go right now, or `None` to queue.
    pub fn route(&self) -> Option<Path> {
        self.available(self.active_path).then_some(self.active_path)
    }
}

/// A pure choice of path from availability. `None` means queue.
pub type Policy = fn(&TransportStatus) -> Option<Path>;

/// Cellular when available, to keep LoRa airtime free; otherwise mesh.
pub fn prefer_cellular(status: &TransportStatus) -> Option<Path> {
    if status.cellular_available {
        Some(Path::Cellular)
    } else if status.mesh_available {
        Some(Path::Mesh)
    } else {
        None
    }
}

pub fn mesh_only(status: &TransportStatus) -> Option<Path> {
    status.mesh_available.then_some(Path::Mesh)
}

pub fn select_path(status: &TransportStatus, policy: Policy) -> Option<Path> {
    policy(status)
}

pub const DEFAULT_DWELL_MS: i64 = 5_000;

/// Applies a policy with hysteresis. Leaving a path that has gone down is
/// immediate; any other change waits until the current path has been
/// active for `dwell_ms`.
#[derive(Debug, Clone)]
pub struct PathSelector {
    policy: Policy,
    dwell_ms: i64,
    last_change_ms: Option<i64>,
}

impl PathSelector {
    pub fn new(policy: Policy, dwell_ms: i64) -> Self {
        Self {
            policy,
            dwell_ms,
            last_change_ms: None,
        }
    }

    pub fn dwell_ms(&self) -> i64 {
        self.dwell_ms
    }

    /// Updates `status.active_path`. Returns true if it changed.
    pub fn update(&mut self, status: &mut TransportStatus, now_ms: i64) -> bool {
        let Some(preferred) = select_path(status, self.policy) else {
            return false;
        };
        if preferred == status.active_path {
            return false;
        }
        let forced = !status.available(status.active_path);
        let settled = self
            .last_change_ms
            .is_none_or(|t| now_ms.saturating_sub(t) >= self.dwell_ms);
        if forced || settled {
            status.active_path = preferred;
            self.last_change_ms = Some(now_ms);
            true
        } else {
            false
        }
    }
}

pub trait CellularProbe: Send {
    /// Never fails outward: errors and timeouts read as unavailable.
    fn probe(&mut self, now_ms: i64) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineStep {
    pub at_ms: i64,
    pub up: bool,
}

/// Availability from a fixed timeline: the last step at or before `now`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptedProbe {
    pub steps: Vec<TimelineStep>,
}

impl ScriptedProbe {
    pub fn new(mut steps: Vec<TimelineStep>) -> Self {
        steps.sort_by_key(|s| s.at_ms);
        Self { steps }
    }

    pub fn always(up: bool) -> Self {
        Self::new(vec![TimelineStep { at_ms: i64::MIN, up }])
    }

    pub fn at(&self, now_ms: i64) -> bool {
        self.steps
            .iter()
            .take_while(|s| s.at_ms <= now_ms)
            .last()
            .is_some_and(|s| s.up)
    }
}

impl CellularProbe for ScriptedProbe {
    fn probe(&mut self, now_ms: i64) -> bool {
        self.at(now_ms)
    }
}

/// TCP connect to the relay's host and port.
#[derive(Debug, Clone)]
pub struct TcpProbe {
    pub addr: String,
    pub timeout: Duration,
}

impl TcpProbe {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            addr: addr.into(),
            timeout,
        }
    }
}

impl CellularProbe for TcpProbe {
    fn probe(&mut self, _now_ms: i64) -> bool {
        let Ok(addrs) = self.addr.to_socket_addrs() else {
            return false;
        };
        addrs
            .into_iter()
            .any(|a| TcpStream::connect_timeout(&a, self.timeout).is_ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status(mesh: bool, cell: bool) -> TransportStatus {
        TransportStatus {
            cellular_available: cell,
            ..TransportStatus::initial(mesh)
        }
    }

    #[test]
    fn default_policy_table() {
        assert_eq!(select_path(&status(true, true), prefer_cellular), Some(Path::Cellular));
        assert_eq!(select_path(&status(true, false), prefer_cellular), Some(Path::Mesh));
        assert_eq!(select_path(&status(false, true), prefer_cellular), Some(Path::Cellular));
        assert_eq!(select_path(&status(false, false), prefer_cellular), None);
        assert_eq!(select_path(&status(true, true), mesh_only), Some(Path::Mesh));
    }

    #[test]
    fn scripted_timeline_switches_at_sixty_seconds() {
        let p = ScriptedProbe::new(vec![
            TimelineStep { at_ms: 0, up: true },
            TimelineStep {
                at_ms: 60_000,
                up: false,
            },
        ]);
        assert!(!p.at(-1));
        assert!(p.at(0));
        assert!(p.at(59_999));
        assert!(!p.at(60_000));
    }

    #[test]
    fn unreachable_endpoint_is_unavailable_within_timeout() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let mut up = TcpProbe::new(addr.to_string(), Duration::from_millis(500));
        assert!(up.probe(0));
        drop(listener);
        let mut down = TcpProbe::new(addr.to_string(), Duration::from_millis(300));
        let t = std::time::Instant::now();
        assert!(!down.probe(0));
        assert!(t.elapsed() < Duration::from_secs(2));
        assert!(!TcpProbe::new("not a host", Duration::from_millis(100)).probe(0));
    }

    #[test]
    fn flapping_link_follows_with_hysteresis() {
        // Cellular toggles every second for 20 s, then stays up.
        let probe = ScriptedProbe::new(
            (0..20)
                .map(|i| TimelineStep {
                    at_ms: i * 1000,
                    up: i % 2 == 0,
                })
                .chain([TimelineStep {
                    at_ms: 20_000,
                    up: true,
                }])
                .collect(),
        );
        let mut sel = PathSelector::new(prefer_cellular, DEFAULT_DWELL_MS);
        let mut st = status(true, false);
        let mut changes = Vec::new();
        for t in (0..40_000).step_by(100) {
            st.cellular_available = probe.at(t);
            if sel.update(&mut st, t) {
                changes.push((t, st.active_path));
            }
            assert!(st.active_path != Path::Cellular || st.cellular_available);
        }
        // Upgrades to cellular never follow the previous change by less than the dwell.
        for w in changes.windows(2) {
            if w[1].1 == Path::Cellular {
                assert!(w[1].0 - w[0].0 >= DEFAULT_DWELL_MS, "{changes:?}");
            }
        }
        assert_eq!(changes.first(), Some(&(0, Path::Cellular)));
        assert_eq!(changes.last().unwrap().1, Path::Cellular);
        assert!(changes.len() < 20);
    }

    #[test]
    fn selection_is_pure() {
        let s = status(true, true);
        assert_eq!(
            select_path(&s, prefer_cellular),
            select_path(&s.clone(), prefer_cellular)
        );
    }
}
