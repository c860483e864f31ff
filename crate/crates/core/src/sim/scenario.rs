//! Scenario files (TOML or JSON) describing one range-test run.
//!
//! ```toml
//! name = "eu868-longfast"
//! seed = 1
//! max_messages = 400
//!
//! [radio]
//! band = "EU868"
//! preset = "LongFast"
//! sigma_db = 6.0
//!
//! [[nodes]]
//! id = 1
//! role = "sender"
//! position = { x_m = 0.0, y_m = 0.0 }
//!
//! [[nodes]]
//! id = 3
//! role = "receiver"
//! position = { x_m = 50.0, y_m = 0.0 }
//! mobility = { kind = "step_outward" }
//! ```
//!
//! Everything except `nodes` and one of `max_messages` / `duration_s` has a
//! default. The send interval defaults to the preset's range-test interval
//! (30 s LongFast, 15 s ShortFast).

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::mesh::{NodeId, NodeRole, Position, BROADCAST, DEFAULT_HOP_LIMIT, MAX_HOP_LIMIT};
use crate::phy::{BandLabel, PresetName, RadioConfig};

/// Origin id used for background interferers in the event log.
pub const BACKGROUND_NODE: NodeId = 0xFFFF_FFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShadowingMode {
    /// One shadowing draw per link and pair of positions, held while neither
    /// end moves.
    #[default]
    PerLocation,
    /// A fresh draw for every packet on every link.
    PerPacket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub at_s: f64,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mobility {
    #[default]
    Fixed,
    /// Steps `increment_m` directly away from the sender once it has dwelt
    /// `dwell_intervals` send intervals and heard at least one sequence at the
    /// current spot. Does not start before every receiver has heard the sender.
    StepOutward,
    /// Piecewise-stationary schedule; the node jumps to each waypoint at its time.
    Waypoints { points: Vec<Waypoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: NodeRole,
    pub position: Position,
    #[serde(default)]
    pub mobility: Mobility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub send_interval_s: Option<f64>,
    #[serde(default = "default_increment")]
    pub increment_m: f64,
    #[serde(default = "default_dwell")]
    pub dwell_intervals: u32,
    #[serde(default = "default_hop_limit")]
    pub hop_limit: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(default = "default_termination")]
    pub termination_intervals: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_messages: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub background_tx_per_min: f64,
    #[serde(default = "default_background_radius")]
    pub background_radius_m: f64,
    #[serde(default = "default_background_payload")]
    pub background_payload_bytes: usize,
    #[serde(default)]
    pub shadowing: ShadowingMode,
    /// Extra per-packet fading (dB standard deviation) on top of shadowing.
    #[serde(default)]
    pub fading_sigma_db: f64,
    /// Per-node record budget in CSV bytes; oldest records are dropped first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_cap_bytes: Option<usize>,
    #[serde(default = "default_start_time")]
    pub start_time: DateTime<Utc>,
    pub nodes: Vec<NodeSpec>,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_increment() -> f64 {
    50.0
}
fn default_dwell() -> u32 {
    4
}
fn default_hop_limit() -> u8 {
    DEFAULT_HOP_LIMIT
}
fn default_termination() -> u32 {
    10
}
fn default_background_radius() -> f64 {
    1500.0
}
fn default_background_payload() -> usize {
    40
}
fn default_start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 1, 9, 0, 0).unwrap()
}

impl Scenario {
    /// Two-node scenario with defaults filled in; handy as a starting point.
    pub fn minimal(band: BandLabel, preset: PresetName, seed: u64) -> Self {
        Self {
            name: format!(
                "{}-{}",
                band.as_str().to_ascii_lowercase(),
                preset.as_str().to_ascii_lowercase()
            ),
            seed,
            radio: RadioConfig {
                band,
                preset,
                ..RadioConfig::default()
            },
            send_interval_s: None,
            increment_m: default_increment(),
            dwell_intervals: default_dwell(),
            hop_limit: default_hop_limit(),
            channel: None,
            termination_intervals: default_termination(),
            max_messages: Some(100),
            duration_s: None,
            background_tx_per_min: 0.0,
            background_radius_m: default_background_radius(),
            background_payload_bytes: default_background_payload(),
            shadowing: ShadowingMode::PerLocation,
            fading_sigma_db: 0.0,
            record_cap_bytes: None,
            start_time: default_start_time(),
            nodes: vec![
                NodeSpec {
                    id: 1,
                    role: NodeRole::Sender,
                    position: Position::new(0.0, 0.0),
                    mobility: Mobility::Fixed,
                },
                NodeSpec {
                    id: 2,
                    role: NodeRole::Receiver,
                    position: Position::new(1.0, 0.0),
                    mobility: Mobility::Fixed,
                },
            ],
        }
    }

    /// Reconstruction of the urban field layout: a central sender, a relay
    /// fixed 100 m out and eight receivers walking outward along one street,
    /// starting 50 m apart. The 868 MHz LongFast channel carries background
    /// traffic from other devices.
    pub fn field_replica(band: BandLabel, preset: PresetName, seed: u64) -> Self {
        let mut s = Self::minimal(band, preset, seed);
        s.max_messages = Some(600);
        if (band, preset) == (BandLabel::Eu868, PresetName::LongFast) {
            s.background_tx_per_min = 6.0;
        }
        s.nodes.truncate(1);
        s.nodes.push(NodeSpec {
            id: 2,
            role: NodeRole::Relay,
            position: Position::new(100.0, 0.0),
            mobility: Mobility::Fixed,
        });
        for i in 0..8u32 {
            s.nodes.push(NodeSpec {
                id: 3 + i,
                role: NodeRole::Receiver,
                position: Position::new(50.0 * f64::from(i + 1), 0.0),
                mobility: Mobility::StepOutward,
            });
        }
        s
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let sc: Self = toml::from_str(s).map_err(|e| SimError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_json_str(s: &str) -> Result<Self, SimError> {
        let sc: Self = serde_json::from_str(s).map_err(|e| SimError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Loads `.json` files as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn interval_ms(&self) -> u64 {
        let s = self
            .send_interval_s
            .unwrap_or_else(|| self.radio.preset.range_test_interval_s());
        (s * 1000.0).round() as u64
    }

    pub fn channel_name(&self) -> String {
        self.channel
            .clone()
            .unwrap_or_else(|| self.radio.preset.as_str().to_string())
    }

    pub fn sender(&self) -> &NodeSpec {
        self.nodes
            .iter()
            .find(|n| n.role == NodeRole::Sender)
            .expect("validated scenario has a sender")
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes to JSON");
        hex(&Sha256::digest(json))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let senders = self.nodes.iter().filter(|n| n.role == NodeRole::Sender).count();
        if senders != 1 {
            return bad(format!("exactly one sender required, found {senders}"));
        }
        if let Some(s) = self.send_interval_s {
            if !(s > 0.0) || !s.is_finite() {
                return bad(format!("send_interval_s must be > 0, got {s}"));
            }
        }
        if self.interval_ms() == 0 {
            return bad("send interval rounds to 0 ms".into());
        }
        if !(self.increment_m > 0.0) || !self.increment_m.is_finite() {
            return bad(format!("increment_m must be > 0, got {}", self.increment_m));
        }
        if self.hop_limit > MAX_HOP_LIMIT {
            return bad(format!("hop_limit {} exceeds {MAX_HOP_LIMIT}", self.hop_limit));
        }
        if self.termination_intervals == 0 {
            return bad("termination_intervals must be >= 1".into());
        }
        match (self.max_messages, self.duration_s) {
            (None, None) => return bad("set max_messages or duration_s".into()),
            (Some(0), _) => return bad("max_messages must be >= 1".into()),
            (_, Some(d)) if !(d > 0.0) || !d.is_finite() => return bad(format!("duration_s must be > 0, got {d}")),
            _ => {}
        }
        if !(self.background_tx_per_min >= 0.0) || !self.background_tx_per_min.is_finite() {
            return bad(format!(
                "background_tx_per_min must be >= 0, got {}",
                self.background_tx_per_min
            ));
        }
        if !(self.fading_sigma_db >= 0.0) || !self.fading_sigma_db.is_finite() {
            return bad(format!("fading_sigma_db must be >= 0, got {}", self.fading_sigma_db));
        }
        if !(self.background_radius_m > 0.0) {
            return bad("background_radius_m must be > 0".into());
        }
        if self.background_payload_bytes == 0 || self.background_payload_bytes > 255 {
            return bad("background_payload_bytes must be in 1..=255".into());
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id == BROADCAST || n.id == BACKGROUND_NODE {
                return bad(format!("node id {:#x} is reserved", n.id));
            }
            if !ids.insert(n.id) {
                return bad(format!("duplicate node id {}", n.id));
            }
            if !n.position.x_m.is_finite() || !n.position.y_m.is_finite() {
                return bad(format!("node {} has a non-finite position", n.id));
            }
            if let Mobility::Waypoints { points } = &n.mobility {
                if points.windows(2).any(|w| w[1].at_s < w[0].at_s) {
                    return bad(format!("node {} waypoints are not in time order", n.id));
                }
            }
            if n.role == NodeRole::Sender && n.mobility != Mobility::Fixed {
                return bad("the sender must be fixed".into());
            }
        }
        self.radio.resolve()?;
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_intervals() {
        let lf = Scenario::minimal(BandLabel::Eu868, PresetName::LongFast, 1);
        assert_eq!(lf.interval_ms(), 30_000);
        let sf = Scenario::minimal(BandLabel::Eu868, PresetName::ShortFast, 1);
        assert_eq!(sf.interval_ms(), 15_000);
        assert_eq!(sf.channel_name(), "ShortFast");
        lf.validate().unwrap();
    }

    #[test]
    fn toml_and_json_round_trip() {
        let s = Scenario::field_replica(BandLabel::Eu433, PresetName::LongFast, 9);
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
        let back = Scenario::from_json_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.fingerprint(), s.fingerprint());
    }

    #[test]
    fn sparse_toml_gets_defaults() {
        let text = r#"
            max_messages = 5
            [[nodes]]
            id = 1
            role = "sender"
            position = { x_m = 0.0, y_m = 0.0 }
            [[nodes]]
            id = 2
            role = "receiver"
            position = { x_m = 10.0, y_m = 0.0 }
            mobility = { kind = "waypoints", points = [{ at_s = 60.0, x_m = 20.0, y_m = 0.0 }] }
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(s.increment_m, 50.0);
        assert_eq!(s.termination_intervals, 10);
        assert_eq!(s.radio.band, BandLabel::Eu868);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let base = Scenario::minimal(BandLabel::Eu868, PresetName::LongFast, 1);
        let mut s = base.clone();
        s.nodes[1].role = NodeRole::Sender;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.nodes.remove(0);
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.send_interval_s = Some(0.0);
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.increment_m = -5.0;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.max_messages = None;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.nodes[1].id = 1;
        assert!(s.validate().is_err());
        let mut s = base;
        s.radio.exponent = Some(1.5);
        assert!(s.validate().is_err());
        assert!(Scenario::from_toml_str("nodes = []\nbogus = 1").is_err());
    }
}
