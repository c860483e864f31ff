//! The node daemon around [`offgrid_core::nodesvc::NodeCore`]: a command loop
//! thread, the local HTTP API, a hosted certificate authority and the
//! `offgrid` command-line tool.
//!
//! * [`service`] – command loop, event fan-out, config loading.
//! * [`api`] – axum router over a [`service::NodeHandle`].
//! * [`authority`] – a certificate authority kept in a directory.
//! * [`relay`] – the HTTP client used as the cellular path.
//! * [`analyze`] – range-test CSV analysis for the CLI.
//! * [`demo`] – several nodes on one in-process radio.
//! * [`cli`] – argument parsing and command dispatch.

pub mod analyze;
pub mod api;
pub mod authority;
pub mod cli;
pub mod demo;
pub mod relay;
pub mod service;
