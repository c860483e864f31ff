//! Off-grid emergency communication over LoRa mesh networks.
//!
//! * [`analysis`] – range-test records, PDR binning and summaries.
//! * [`phy`] – LoRa link budget, airtime and reception model.
//! * [`mesh`] – managed-flood packet handling with dedupe and duty-cycle limits.
//! * [`sim`] – deterministic discrete-event range-test harness.
//! * [`identity`] – certificates, signing requests, chains and revocation.
//! * [`messaging`] – signed messages, communities, moderation and mesh framing.
//! * [`nodesvc`] – the running node: transport selection, outbound queue and local state.

pub mod analysis;
pub mod identity;
pub mod mesh;
pub mod messaging;
pub mod nodesvc;
pub mod phy;
pub mod sim;
