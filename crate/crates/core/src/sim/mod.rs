//! Deterministic discrete-event range-test harness.
//!
//! A run follows the field procedure: every node starts at its initial spot
//! and the sender transmits `seq N` frames at a fixed interval. Once every
//! receiver has heard at least one sequence, stepping movers walk outward in
//! `increment_m` steps. The run stops when the farthest receiver has been
//! silent for `termination_intervals` intervals or the budget is spent.
//!
//! Time is integer milliseconds. All randomness is derived from the scenario
//! seed through keyed streams, so a given (scenario, seed) always yields the
//! same event log and CSV bytes.

mod engine;
mod log;
mod scenario;

pub use engine::{export_csv, export_sender_log, quantize_sample, replay, run, SimOutput, SimStats};
pub use log::{EventKind, EventLog, LogEntry, TerminationReason};
pub use scenario::{Mobility, NodeSpec, Scenario, ShadowingMode, Waypoint, BACKGROUND_NODE};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::mesh::MeshError;
use crate::phy::PhyError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("export failed: {0}")]
    Export(#[from] AnalysisError),
    #[error("export failed: {0}")]
    Io(#[from] std::io::Error),
}
