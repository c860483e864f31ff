use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use offgrid_core::analysis::{AnalysisError, Metric, TotalsMode, DEFAULT_BIN_WIDTH_M};
use offgrid_core::identity::{
    armor, dearmor, hex, ArmorKind, CertChain, IdentityError, Lineage, RoleFlags, SigningRequest, Subject,
};
use offgrid_core::messaging::Scope;
use offgrid_core::nodesvc::{MeshHub, NoCellular, NodeConfig, NodeCore, NodeError};
use offgrid_core::sim::{self, Scenario, SimError};
use serde_json::{json, Value};

use crate::analyze::{analyze, AnalyzeRequest, Emit};
use crate::authority::{AuthorityHost, ROOT_FILE};
use crate::demo::{run_demo, DemoOptions};
use crate::service::{build_daemon, now_ms, NodeService, ServiceError, SharedHub, DEFAULT_TICK_MS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("http: {0}")]
    Http(String),
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "offgrid", version, about = "Off-grid LoRa community messaging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run and administer a node.
    Node {
        #[command(subcommand)]
        command: NodeCommand,
    },
    /// Discrete-event range-test simulation.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Range-test CSV analysis.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Several nodes on one in-process radio, end to end.
    Demo(DemoArgs),
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    /// Start one or more nodes with their HTTP APIs. Nodes started together
    /// share one simulated radio.
    Run {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TICK_MS)]
        tick_ms: u64,
    },
    /// Keys, signing requests, certificates and revocation.
    Identity {
        #[command(subcommand)]
        command: IdentityCommand,
    },
    /// Post a message. Without --api the node's state directory is used
    /// directly and the message is queued for the next run.
    Post {
        #[command(flatten)]
        target: Target,
        content: String,
        /// Direct message to this user id instead of the community.
        #[arg(long)]
        to: Option<String>,
        /// Community zip code; defaults to the node's own.
        #[arg(long)]
        zipcode: Option<String>,
    },
    /// List visible messages of a community.
    Messages {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        zipcode: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Target {
    #[arg(long, conflicts_with = "api")]
    pub config: Option<PathBuf>,
    /// Base URL of a running node, e.g. http://127.0.0.1:8737
    #[arg(long)]
    pub api: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum IdentityCommand {
    /// Create a certificate authority in a directory.
    InitAuthority {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
    },
    /// Generate the node's key and write a signing request.
    Request {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        user_id: String,
        #[arg(long, default_value = "")]
        evidence: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List pending requests.
    Pending {
        #[arg(long)]
        authority: PathBuf,
    },
    /// Approve a request given as a file (submitted first) or by id.
    Approve {
        #[arg(long)]
        authority: PathBuf,
        #[arg(long, required_unless_present = "request_id")]
        request: Option<PathBuf>,
        #[arg(long)]
        request_id: Option<String>,
        #[arg(long, value_enum, default_value = "civil")]
        lineage: LineageArg,
        /// moderator or administrator; repeatable.
        #[arg(long = "role")]
        roles: Vec<String>,
        #[arg(long)]
        zipcode: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reject a pending request.
    Reject {
        #[arg(long)]
        authority: PathBuf,
        #[arg(long)]
        request_id: String,
        #[arg(long)]
        reason: String,
    },
    /// Revoke a certificate and write the new revocation list.
    Revoke {
        #[arg(long)]
        authority: PathBuf,
        #[arg(long)]
        serial: u64,
        #[arg(long)]
        reason: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Install an approved chain on the node.
    Import {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        chain: PathBuf,
    },
    /// Install a revocation list on the node.
    Crl {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        crl: PathBuf,
    },
    /// Print the node's identity state and chain.
    Show {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LineageArg {
    Civil,
    Official,
}

impl From<LineageArg> for Lineage {
    fn from(l: LineageArg) -> Self {
        match l {
            LineageArg::Civil => Lineage::Civil,
            LineageArg::Official => Lineage::Official,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Print the field-replica scenario for a band and preset as TOML.
    Template {
        #[arg(long, default_value = "EU868")]
        band: String,
        #[arg(long, default_value = "LongFast")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and print its statistics as JSON.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Receiver records, canonical CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        sender_log: Option<PathBuf>,
        /// Event log, one JSON object per line.
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Inferred,
    Senderlog,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Summarise or bin a range-test CSV.
    Csv {
        #[arg(long = "in")]
        input: PathBuf,
        /// Bin width in metres.
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_M)]
        bins: f64,
        #[arg(long, value_enum, default_value = "inferred")]
        mode: ModeArg,
        #[arg(long)]
        sender_log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "summary")]
        emit: Emit,
        #[arg(long, default_value = "rssi")]
        metric: Metric,
        #[arg(long)]
        frequency: Option<String>,
        #[arg(long)]
        channel: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 5)]
    pub nodes: usize,
    #[arg(long, default_value_t = 600.0)]
    pub spacing_m: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(io_err(path)),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn dearmor_file(path: &Path, want: ArmorKind) -> CliResult<Vec<u8>> {
    let (kind, bytes) = dearmor(&read(path)?)?;
    if kind != want {
        return Err(CliError::Usage(format!(
            "{}: expected {want:?}, found {kind:?}",
            path.display()
        )));
    }
    Ok(bytes)
}

/// Opens a node's state for a one-shot command. The radio is detached so
/// anything posted waits in the queue for the running node.
fn open_offline(config: &Path) -> CliResult<NodeCore> {
    let mut cfg = NodeConfig::load(config)?;
    if cfg.data_dir.is_none() {
        return Err(CliError::Usage(format!(
            "{}: offline commands need data_dir",
            config.display()
        )));
    }
    cfg.mesh_attached = false;
    Ok(NodeCore::open(cfg, None, Box::new(NoCellular), now_ms())?)
}

fn http() -> CliResult<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(10))
        .build()
        .map_err(|e| CliError::Http(e.to_string()))
}

fn http_json(resp: reqwest::Result<reqwest::blocking::Response>) -> CliResult<Value> {
    let resp = resp.map_err(|e| CliError::Http(e.to_string()))?;
    let status = resp.status();
    let body: Value = resp.json().map_err(|e| CliError::Http(e.to_string()))?;
    if status.is_success() {
        Ok(body)
    } else {
        Err(CliError::Http(format!(
            "{status}: {}",
            body["error"].as_str().unwrap_or("request failed")
        )))
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Node { command } => node(command),
        Command::Sim {
            command:
                SimCommand::Template {
                    band,
                    preset,
                    seed,
                    out,
                },
        } => {
            let band = band.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            let preset = preset.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            emit(
                out.as_deref(),
                &Scenario::field_replica(band, preset, seed).to_toml_string(),
            )
        }
        Command::Sim {
            command:
                SimCommand::Run {
                    scenario,
                    seed,
                    csv,
                    sender_log,
                    events,
                },
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let out = sim::run(&sc)?;
            if let Some(p) = &csv {
                sim::export_csv(&out.records, p)?;
            }
            if let Some(p) = &sender_log {
                sim::export_sender_log(&out.sender_log, p)?;
            }
            if let Some(p) = &events {
                std::fs::write(p, out.log.to_jsonl()).map_err(io_err(p))?;
            }
            print_json(&json!({
                "scenario": sc.name,
                "seed": sc.seed,
                "messages_sent": out.stats.messages_sent,
                "records": out.records.len(),
                "duration_ms": out.stats.duration_ms,
                "termination": format!("{:?}", out.stats.termination),
                "transmissions": out.stats.transmissions,
                "deferrals": out.stats.deferrals,
                "collisions": out.stats.collisions,
            }));
            Ok(())
        }
        Command::Analyze {
            command:
                AnalyzeCommand::Csv {
                    input,
                    bins,
                    mode,
                    sender_log,
                    emit: what,
                    metric,
                    frequency,
                    channel,
                    out,
                },
        } => {
            let req = AnalyzeRequest {
                input,
                bin_width_m: bins,
                mode: match mode {
                    ModeArg::Inferred => TotalsMode::Inferred,
                    ModeArg::Senderlog => TotalsMode::SenderLog,
                },
                sender_log,
                emit: what,
                metric,
                frequency,
                channel,
            };
            let (text, rejects) = analyze(&req)?;
            for r in &rejects {
                eprintln!("skipped {r}");
            }
            emit(out.as_deref(), &text)
        }
        Command::Demo(args) => {
            let report = run_demo(&DemoOptions {
                nodes: args.nodes.max(2),
                spacing_m: args.spacing_m,
                seed: args.seed,
                ..DemoOptions::default()
            })?;
            print_json(&report);
            if report.all_received() {
                Ok(())
            } else {
                Err(CliError::Usage("not every node received the message".into()))
            }
        }
    }
}

fn node(cmd: NodeCommand) -> CliResult<()> {
    match cmd {
        NodeCommand::Run { configs, tick_ms } => run_nodes(&configs, tick_ms),
        NodeCommand::Identity { command } => identity(command),
        NodeCommand::Post {
            target,
            content,
            to,
            zipcode,
        } => {
            let receipt = match (&target.api, &target.config) {
                (Some(api), _) => {
                    let scope = match (&to, &zipcode) {
                        (Some(user), _) => Some(Scope::Direct(user.clone())),
                        (None, Some(zip)) => Some(Scope::community(zip.clone())),
                        (None, None) => None,
                    };
                    http_json(
                        http()?
                            .post(format!("{}/api/messages", api.trim_end_matches('/')))
                            .json(&json!({ "content": content, "scope": scope }))
                            .send(),
                    )?
                }
                (None, Some(config)) => {
                    let mut core = open_offline(config)?;
                    let scope = match to {
                        Some(user) => Scope::Direct(user),
                        None => Scope::community(zipcode.unwrap_or_else(|| core.config().zipcode.clone())),
                    };
                    let receipt = core.post(&content, scope, now_ms())?;
                    core.save()?;
                    serde_json::to_value(receipt).expect("serializable")
                }
                (None, None) => return Err(CliError::Usage("give --config or --api".into())),
            };
            print_json(&receipt);
            Ok(())
        }
        NodeCommand::Messages { target, zipcode } => {
            let list = match (&target.api, &target.config) {
                (Some(api), _) => {
                    let client = http()?;
                    let base = api.trim_end_matches('/');
                    let zip = match zipcode {
                        Some(z) => z,
                        None => http_json(client.get(format!("{base}/api/status")).send())?["zipcode"]
                            .as_str()
                            .unwrap_or_default()
                            .to_string(),
                    };
                    http_json(client.get(format!("{base}/api/communities/{zip}/messages")).send())?
                }
                (None, Some(config)) => {
                    let core = open_offline(config)?;
                    let zip = zipcode.unwrap_or_else(|| core.config().zipcode.clone());
                    serde_json::to_value(core.list_community(&zip)).expect("serializable")
                }
                (None, None) => return Err(CliError::Usage("give --config or --api".into())),
            };
            print_json(&list);
            Ok(())
        }
    }
}

fn identity(cmd: IdentityCommand) -> CliResult<()> {
    match cmd {
        IdentityCommand::InitAuthority { dir, name } => {
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let host = AuthorityHost::init(&dir, &name, now_ms() / 1000)?;
            print_json(&json!({
                "root": host.authority().root().summary(),
                "root_file": dir.join(ROOT_FILE),
            }));
            Ok(())
        }
        IdentityCommand::Request {
            config,
            name,
            user_id,
            evidence,
            out,
        } => {
            let mut core = open_offline(&config)?;
            let req = core.generate_identity(Subject::new(name, user_id), evidence.into_bytes(), now_ms())?;
            core.save()?;
            eprintln!("request {}", hex(&req.request_id));
            emit(out.as_deref(), &armor(ArmorKind::SigningRequest, &req.encode()))
        }
        IdentityCommand::Pending { authority } => {
            let host = AuthorityHost::open(&authority)?;
            let list: Vec<Value> = host
                .authority()
                .pending()
                .into_iter()
                .map(|r| {
                    json!({
                        "request_id": hex(&r.request_id),
                        "subject": r.subject,
                        "submitted_at": r.submitted_at,
                    })
                })
                .collect();
            print_json(&list);
            Ok(())
        }
        IdentityCommand::Approve {
            authority,
            request,
            request_id,
            lineage,
            roles,
            zipcode,
            out,
        } => {
            let mut host = AuthorityHost::open(&authority)?;
            let id = match (request, request_id) {
                (Some(path), _) => {
                    let req = SigningRequest::decode(&dearmor_file(&path, ArmorKind::SigningRequest)?)?;
                    let id = hex(&req.request_id);
                    if host.authority().request(&id).is_none() {
                        host.authority_mut().submit(req)?;
                    }
                    id
                }
                (None, Some(id)) => id,
                (None, None) => return Err(CliError::Usage("give --request or --request-id".into())),
            };
            let roles = RoleFlags::from_names(roles.iter().map(String::as_str))?;
            let cert = host
                .authority_mut()
                .approve(&id, lineage.into(), roles, zipcode, now_ms() / 1000)?;
            host.save()?;
            let chain = host.authority().chain_for(cert.serial)?;
            eprintln!("issued serial {}", cert.serial);
            emit(out.as_deref(), &armor(ArmorKind::CertificateChain, &chain.encode()))
        }
        IdentityCommand::Reject {
            authority,
            request_id,
            reason,
        } => {
            let mut host = AuthorityHost::open(&authority)?;
            host.authority_mut().reject(&request_id, &reason)?;
            host.save()?;
            Ok(())
        }
        IdentityCommand::Revoke {
            authority,
            serial,
            reason,
            out,
        } => {
            let mut host = AuthorityHost::open(&authority)?;
            let crl = host.authority_mut().revoke(serial, &reason, now_ms() / 1000)?.clone();
            host.save()?;
            emit(out.as_deref(), &armor(ArmorKind::RevocationList, &crl.encode()))
        }
        IdentityCommand::Import { config, chain } => {
            let mut core = open_offline(&config)?;
            let chain = CertChain::decode(&dearmor_file(&chain, ArmorKind::CertificateChain)?)?;
            core.import_chain(chain, now_ms())?;
            core.save()?;
            print_json(&json!({ "state": core.identity().label(), "user_id": core.user_id() }));
            Ok(())
        }
        IdentityCommand::Crl { config, crl } => {
            let mut core = open_offline(&config)?;
            let list = offgrid_core::identity::RevocationList::decode(&dearmor_file(&crl, ArmorKind::RevocationList)?)?;
            let updated = core.update_crl(list, now_ms())?;
            core.save()?;
            print_json(&json!({ "updated": updated }));
            Ok(())
        }
        IdentityCommand::Show { config } => {
            let core = open_offline(&config)?;
            print_json(&json!({
                "state": core.identity(),
                "user_id": core.user_id(),
                "trust_root": core.trust().map(|t| t.root.summary()),
            }));
            Ok(())
        }
    }
}

fn run_nodes(configs: &[PathBuf], tick_ms: u64) -> CliResult<()> {
    let cfgs = configs
        .iter()
        .map(|p| NodeConfig::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &cfgs[0];
    let radio = first
        .radio
        .resolve()
        .map_err(|e| CliError::Usage(format!("radio: {e}")))?;
    let hub: SharedHub = Arc::new(Mutex::new(MeshHub::new(
        radio,
        &first.channel_name(),
        first.seed.unwrap_or_else(rand::random),
    )));

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(format!("runtime: {e}")))?;
    let mut services = Vec::new();
    let mut listeners = Vec::new();
    for cfg in cfgs {
        let bind = cfg.bind.clone();
        let interval = Duration::from_millis(cfg.probe_interval_ms.max(1) as u64);
        let (daemon, tcp) = build_daemon(cfg, Some(hub.clone()))?;
        let service = NodeService::spawn(daemon, tick_ms);
        if let Some(probe) = tcp {
            service.start_prober(probe, interval);
        }
        let listener = rt
            .block_on(tokio::net::TcpListener::bind(&bind))
            .map_err(|e| CliError::Usage(format!("cannot bind {bind}: {e}")))?;
        listeners.push((service.handle(), listener));
        services.push(service);
    }
    rt.block_on(async move {
        let mut tasks = Vec::new();
        for (handle, listener) in listeners {
            if let Ok(addr) = listener.local_addr() {
                tracing::info!("node API on http://{addr}");
            }
            let app = crate::api::router(handle);
            tasks.push(tokio::spawn(async move {
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            }));
        }
        for t in tasks {
            if let Ok(Err(e)) = t.await {
                tracing::error!("api server: {e}");
            }
        }
    });
    for s in services {
        s.shutdown();
    }
    Ok(())
}
