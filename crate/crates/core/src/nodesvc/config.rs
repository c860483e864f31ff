use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use super::queue::DEFAULT_QUEUE_CAPACITY;
use super::transport::{TimelineStep, DEFAULT_DWELL_MS};
use super::NodeError;
use crate::mesh::{NodeId, DEFAULT_HOP_LIMIT, MAX_HOP_LIMIT};
use crate::messaging::RateLimit;
use crate::phy::RadioConfig;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeConfig {
    /// No cellular path.
    #[default]
    Off,
    /// TCP connect to the relay URL's host and port.
    Tcp {
        #[serde(default = "default_probe_timeout")]
        timeout_ms: u64,
    },
    /// Fixed availability timeline, relative to node start.
    Scripted { steps: Vec<TimelineStep> },
}

fn default_probe_timeout() -> u64 {
    1_500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub node_id: NodeId,
    #[serde(default = "default_zipcode")]
    pub zipcode: String,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub channel: Option<String>,
    #[serde(default = "default_hop_limit")]
    pub hop_limit: u8,
    #[serde(default)]
    pub x_m: f64,
    #[serde(default)]
    pub y_m: f64,
    /// Rebroadcast other nodes' packets.
    #[serde(default = "yes")]
    pub relay: bool,
    /// The in-process simulated radio is attached.
    #[serde(default = "yes")]
    pub mesh_attached: bool,
    #[serde(default)]
    pub relay_url: Option<String>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_probe_interval")]
    pub probe_interval_ms: i64,
    #[serde(default = "default_dwell")]
    pub dwell_ms: i64,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default)]
    pub rate_limit: RateLimit,
    /// Armored root certificate the node trusts.
    #[serde(default)]
    pub trust_root: Option<PathBuf>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Directory of a certificate authority this node hosts, if any.
    #[serde(default)]
    pub authority_dir: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Fixed RNG seed for message ids; random when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_zipcode() -> String {
    "8050".into()
}
fn default_hop_limit() -> u8 {
    DEFAULT_HOP_LIMIT
}
fn yes() -> bool {
    true
}
fn default_probe_interval() -> i64 {
    2_000
}
fn default_dwell() -> i64 {
    DEFAULT_DWELL_MS
}
fn default_queue_capacity() -> usize {
    DEFAULT_QUEUE_CAPACITY
}
fn default_bind() -> String {
    "127.0.0.1:8737".into()
}

impl NodeConfig {
    pub fn new(node_id: NodeId) -> Self {
        Self {
            node_id,
            zipcode: default_zipcode(),
            radio: RadioConfig::default(),
            channel: None,
            hop_limit: default_hop_limit(),
            x_m: 0.0,
            y_m: 0.0,
            relay: true,
            mesh_attached: true,
            relay_url: None,
            probe: ProbeConfig::Off,
            probe_interval_ms: default_probe_interval(),
            dwell_ms: default_dwell(),
            queue_capacity: default_queue_capacity(),
            rate_limit: RateLimit::default(),
            trust_root: None,
            data_dir: None,
            authority_dir: None,
            bind: default_bind(),
            seed: None,
        }
    }

    pub fn channel_name(&self) -> String {
        self.channel
            .clone()
            .unwrap_or_else(|| self.radio.preset.as_str().to_string())
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        if self.zipcode.is_empty() || self.zipcode.len() > crate::identity::MAX_ZIPCODE_LEN {
            return Err(NodeError::Config("zipcode must be 1..=10 bytes".into()));
        }
        if self.hop_limit > MAX_HOP_LIMIT {
            return Err(NodeError::Config(format!("hop_limit above {MAX_HOP_LIMIT}")));
        }
        if self.probe_interval_ms <= 0 || self.dwell_ms < 0 {
            return Err(NodeError::Config(
                "probe interval must be positive, dwell non-negative".into(),
            ));
        }
        if matches!(self.probe, ProbeConfig::Tcp { .. }) && self.relay_url.is_none() {
            return Err(NodeError::Config("tcp probe needs relay_url".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, NodeError> {
        let c: Self = toml::from_str(s).map_err(|e| NodeError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(s: &str) -> Result<Self, NodeError> {
        let c: Self = serde_json::from_str(s).map_err(|e| NodeError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// `.json` files as JSON, anything else as TOML.
    pub fn load(path: &FsPath) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NodeError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

/// `host:port` of an http(s) URL, with the scheme's default port.
pub fn relay_host_port(url: &str) -> Option<String> {
    let (scheme, rest) = url.split_once("://")?;
    let default_port = match scheme {
        "http" => 80,
        "https" => 443,
        _ => return None,
    };
    let authority = rest.split(['/', '?', '#']).next()?;
    let authority = authority.rsplit('@').next()?;
    if authority.is_empty() {
        return None;
    }
    let has_port = authority
        .rsplit_once(':')
        .is_some_and(|(_, p)| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()) && !authority.ends_with(']'));
    Some(if has_port {
        authority.to_string()
    } else {
        format!("{authority}:{default_port}")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_toml_gets_defaults() {
        let c = NodeConfig::from_toml_str("node_id = 7\n").unwrap();
        assert_eq!(c, NodeConfig::new(7));
        assert_eq!(c.channel_name(), "LongFast");
        assert!(NodeConfig::from_toml_str("node_id = 7\nbogus = 1\n").is_err());
    }

    #[test]
    fn scripted_probe_in_toml() {
        let c = NodeConfig::from_toml_str(
            r#"
node_id = 1
zipcode = "8004"
relay_url = "http://127.0.0.1:9000/api/relay"
[probe]
kind = "scripted"
steps = [{ at_ms = 0, up = true }, { at_ms = 60000, up = false }]
"#,
        )
        .unwrap();
        assert!(matches!(c.probe, ProbeConfig::Scripted { ref steps } if steps.len() == 2));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(NodeConfig::from_json_str(&json).unwrap(), c);
        assert!(NodeConfig::from_toml_str("node_id = 1\n[probe]\nkind = \"tcp\"\n").is_err());
    }

    #[test]
    fn relay_url_host_port() {
        assert_eq!(
            relay_host_port("http://127.0.0.1:9000/api/relay").as_deref(),
            Some("127.0.0.1:9000")
        );
        assert_eq!(
            relay_host_port("https://relay.example.org/x").as_deref(),
            Some("relay.example.org:443")
        );
        assert_eq!(relay_host_port("http://[::1]/x").as_deref(), Some("[::1]:80"));
        assert_eq!(relay_host_port("ftp://x"), None);
    }
}
