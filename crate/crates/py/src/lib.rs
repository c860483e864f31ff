//! Python bindings: the range-test simulator and analysis, an in-memory
//! certificate authority, and an offline node that signs, validates and
//! exchanges messages over relay envelopes.
//!
//! Structured results cross into Python as plain dicts and lists.

use std::time::{SystemTime, UNIX_EPOCH};

use offgrid_core::analysis::{
    self, canonical_csv_string, import_meshtastic_reader, pdr_bins, read_sender_log, sender_log_string, summarize,
    ConfigLabels, SenderTotals,
};
use offgrid_core::identity::{
    armor, dearmor, hex, ArmorKind, Authority as CoreAuthority, CertChain, Lineage, MemoryStore, RoleFlags,
    SigningRequest, Subject,
};
use offgrid_core::messaging::Scope;
use offgrid_core::nodesvc::{
    IdentityStatus, NodeConfig, NodeCore, RecordingLink, RelayEnvelope, ScriptedProbe, TimelineStep,
};
use offgrid_core::phy::{self, BandLabel, ModemPreset, PresetName};
use offgrid_core::sim::{self, Scenario as CoreScenario, SimOutput};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

create_exception!(offgrid, OffgridError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    OffgridError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn band(label: &str) -> PyResult<BandLabel> {
    label
        .parse()
        .map_err(|e: phy::PhyError| PyValueError::new_err(e.to_string()))
}

fn preset(name: &str) -> PyResult<PresetName> {
    name.parse()
        .map_err(|e: phy::PhyError| PyValueError::new_err(e.to_string()))
}

fn rng(seed: Option<u64>) -> ChaCha8Rng {
    match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_entropy(),
    }
}

/// Time on air in milliseconds for a payload of `payload_bytes`.
#[pyfunction]
fn airtime_ms(preset_name: &str, payload_bytes: usize) -> PyResult<f64> {
    phy::airtime_ms(&ModemPreset::for_name(preset(preset_name)?), payload_bytes).map_err(err)
}

/// Farthest delivery distance measured in the field for a band and preset.
#[pyfunction]
fn field_max_range_m(band_label: &str, preset_name: &str) -> PyResult<f64> {
    Ok(phy::field_max_range_m(band(band_label)?, preset(preset_name)?))
}

/// A simulation scenario. Build one from a template or from TOML.
#[pyclass(module = "offgrid", from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    /// The ten-node field layout, calibrated for `band` and `preset`.
    #[staticmethod]
    #[pyo3(signature = (band_label="EU868", preset_name="LongFast", seed=1))]
    fn field_replica(band_label: &str, preset_name: &str, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreScenario::field_replica(band(band_label)?, preset(preset_name)?, seed),
        })
    }

    /// One sender and one receiver.
    #[staticmethod]
    #[pyo3(signature = (band_label="EU868", preset_name="LongFast", seed=1))]
    fn minimal(band_label: &str, preset_name: &str, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreScenario::minimal(band(band_label)?, preset(preset_name)?, seed),
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreScenario::from_toml_str(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    /// Runs the scenario. The GIL is released while it runs.
    fn run(&self, py: Python<'_>) -> PyResult<SimResult> {
        let scenario = self.inner.clone();
        let out = py.detach(move || sim::run(&scenario)).map_err(err)?;
        Ok(SimResult { out })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(band={}, preset={}, seed={}, nodes={})",
            self.inner.radio.band.as_str(),
            self.inner.radio.preset,
            self.inner.seed,
            self.inner.nodes.len()
        )
    }
}

fn totals<'a>(mode: &str, out: &'a SimOutput) -> PyResult<SenderTotals<'a>> {
    match mode {
        "inferred" => Ok(SenderTotals::Inferred),
        "senderlog" => Ok(SenderTotals::Log(&out.sender_log)),
        other => Err(PyValueError::new_err(format!(
            "mode must be inferred or senderlog, not {other}"
        ))),
    }
}

/// Output of one simulation run.
#[pyclass(module = "offgrid")]
struct SimResult {
    out: SimOutput,
}

#[pymethods]
impl SimResult {
    #[getter]
    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let s = &self.out.stats;
        let value = serde_json::json!({
            "messages_sent": s.messages_sent,
            "duration_ms": s.duration_ms,
            "termination": s.termination,
            "transmissions": s.transmissions,
            "deferrals": s.deferrals,
            "collisions": s.collisions,
            "records": self.out.records.len(),
        });
        to_py(py, &value)
    }

    /// Receptions in the canonical range-test CSV format.
    fn records_csv(&self) -> String {
        canonical_csv_string(&self.out.records)
    }

    fn sender_log_csv(&self) -> String {
        sender_log_string(&self.out.sender_log)
    }

    fn events_jsonl(&self) -> String {
        self.out.log.to_jsonl()
    }

    #[pyo3(signature = (frequency="868 MHz", channel="LongFast", mode="inferred"))]
    fn summary(&self, py: Python<'_>, frequency: &str, channel: &str, mode: &str) -> PyResult<Py<PyAny>> {
        let row = summarize(
            &self.out.records,
            &ConfigLabels::new(frequency, channel),
            totals(mode, &self.out)?,
        );
        to_py(py, &row)
    }

    #[pyo3(signature = (width_m=50.0, mode="inferred"))]
    fn bins(&self, py: Python<'_>, width_m: f64, mode: &str) -> PyResult<Py<PyAny>> {
        let bins = pdr_bins(&self.out.records, totals(mode, &self.out)?, width_m).map_err(err)?;
        to_py(py, &bins)
    }

    /// True if PDR falls straight to zero past the last receiving bin.
    #[pyo3(signature = (width_m=50.0))]
    fn abrupt_cutoff(&self, width_m: f64) -> PyResult<bool> {
        let bins = pdr_bins(&self.out.records, SenderTotals::Log(&self.out.sender_log), width_m).map_err(err)?;
        Ok(analysis::abrupt_cutoff(&bins))
    }
}

/// Summarises a range-test CSV (canonical or Meshtastic export). With a
/// sender log, PDR uses what was actually sent.
#[pyfunction]
#[pyo3(signature = (csv_text, frequency="868 MHz", channel="LongFast", width_m=50.0, sender_log_csv=None))]
fn analyze_csv(
    py: Python<'_>,
    csv_text: &str,
    frequency: &str,
    channel: &str,
    width_m: f64,
    sender_log_csv: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let report = import_meshtastic_reader(csv_text.as_bytes(), 0).map_err(err)?;
    let log = sender_log_csv
        .map(|t| read_sender_log(t.as_bytes()))
        .transpose()
        .map_err(err)?;
    let totals = match &log {
        Some(l) => SenderTotals::Log(l),
        None => SenderTotals::Inferred,
    };
    let summary = summarize(&report.records, &ConfigLabels::new(frequency, channel), totals);
    let bins = pdr_bins(&report.records, totals, width_m).map_err(err)?;
    let value = serde_json::json!({
        "summary": summary,
        "bins": bins,
        "rejected_rows": report.rejects.len(),
    });
    to_py(py, &value)
}

/// A certificate authority held in memory: a root and two intermediaries.
#[pyclass(module = "offgrid", unsendable)]
struct Authority {
    inner: CoreAuthority,
}

#[pymethods]
impl Authority {
    #[new]
    #[pyo3(signature = (name, seed=None))]
    fn new(name: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut rng = rng(seed);
        let inner = CoreAuthority::bootstrap(name, Box::new(MemoryStore::new()), now_ms() / 1000 - 60, &mut rng)
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// The armored root certificate nodes use as their trust anchor.
    fn root_pem(&self) -> String {
        armor(ArmorKind::Certificate, &self.inner.root().encode())
    }

    fn crl_pem(&self) -> String {
        armor(ArmorKind::RevocationList, &self.inner.crl().encode())
    }

    /// Accepts an armored signing request and returns its id.
    fn submit(&mut self, request_pem: &str) -> PyResult<String> {
        let bytes = dearmor_kind(request_pem, ArmorKind::SigningRequest)?;
        let request = SigningRequest::decode(&bytes).map_err(err)?;
        Ok(hex(&self.inner.submit(request).map_err(err)?))
    }

    fn pending(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let ids: Vec<(String, String)> = self
            .inner
            .pending()
            .iter()
            .map(|r| (hex(&r.request_id), r.subject.user_id.clone()))
            .collect();
        to_py(py, &ids)
    }

    /// Issues a certificate and returns the armored chain to import.
    #[pyo3(signature = (request_id, official=false, roles=Vec::new(), zipcode=None))]
    fn approve(
        &mut self,
        request_id: &str,
        official: bool,
        roles: Vec<String>,
        zipcode: Option<String>,
    ) -> PyResult<String> {
        let roles = RoleFlags::from_names(roles.iter().map(String::as_str)).map_err(err)?;
        let lineage = if official { Lineage::Official } else { Lineage::Civil };
        let cert = self
            .inner
            .approve(request_id, lineage, roles, zipcode, now_ms() / 1000)
            .map_err(err)?;
        let chain = self.inner.chain_for(cert.serial).map_err(err)?;
        Ok(armor(ArmorKind::CertificateChain, &chain.encode()))
    }

    fn reject(&mut self, request_id: &str, reason: &str) -> PyResult<()> {
        self.inner.reject(request_id, reason).map_err(err)
    }

    /// Revokes a serial and returns the new armored list.
    fn revoke(&mut self, serial: u64, reason: &str) -> PyResult<String> {
        let crl = self.inner.revoke(serial, reason, now_ms() / 1000).map_err(err)?;
        Ok(armor(ArmorKind::RevocationList, &crl.encode()))
    }
}

fn dearmor_kind(text: &str, want: ArmorKind) -> PyResult<Vec<u8>> {
    let (kind, bytes) = dearmor(text).map_err(err)?;
    if kind != want {
        return Err(PyValueError::new_err(format!("expected {want:?}, got {kind:?}")));
    }
    Ok(bytes)
}

/// A node without a radio. Its cellular path records relay envelopes, which
/// can be handed to another node with `receive_relay`.
#[pyclass(module = "offgrid", unsendable)]
struct Node {
    core: NodeCore,
    link: RecordingLink,
    forwarded: usize,
}

#[pymethods]
impl Node {
    #[new]
    #[pyo3(signature = (node_id, zipcode, trust_root_pem=None, seed=None))]
    fn new(node_id: u32, zipcode: &str, trust_root_pem: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = NodeConfig::new(node_id);
        cfg.zipcode = zipcode.to_string();
        cfg.seed = seed;
        cfg.mesh_attached = false;
        let link = RecordingLink::new();
        let probe = ScriptedProbe::new(vec![TimelineStep { at_ms: 0, up: true }]);
        let now = now_ms();
        let mut core = NodeCore::new(
            cfg,
            Box::new(MemoryStore::new()),
            Some(Box::new(probe)),
            Box::new(link.clone()),
            now,
        )
        .map_err(err)?;
        if let Some(pem) = trust_root_pem {
            let root = offgrid_core::identity::Certificate::decode(&dearmor_kind(pem, ArmorKind::Certificate)?)
                .map_err(err)?;
            core.set_trust(root);
        }
        core.tick(now);
        Ok(Self {
            core,
            link,
            forwarded: 0,
        })
    }

    #[getter]
    fn user_id(&self) -> Option<String> {
        self.core.user_id().map(String::from)
    }

    /// `none`, `pending` or `active`.
    #[getter]
    fn identity_state(&self) -> &'static str {
        self.core.identity().label()
    }

    /// Serial of this node's certificate once active.
    #[getter]
    fn serial(&self) -> Option<u64> {
        match self.core.identity() {
            IdentityStatus::Active { chain } => Some(chain.leaf.serial),
            _ => None,
        }
    }

    /// Creates this node's key and returns the armored signing request.
    #[pyo3(signature = (name, user_id, evidence=""))]
    fn generate_identity(&mut self, name: &str, user_id: &str, evidence: &str) -> PyResult<String> {
        let req = self
            .core
            .generate_identity(Subject::new(name, user_id), evidence.as_bytes().to_vec(), now_ms())
            .map_err(err)?;
        Ok(armor(ArmorKind::SigningRequest, &req.encode()))
    }

    fn import_chain(&mut self, chain_pem: &str) -> PyResult<()> {
        let chain = CertChain::decode(&dearmor_kind(chain_pem, ArmorKind::CertificateChain)?).map_err(err)?;
        self.core.import_chain(chain, now_ms()).map_err(err)
    }

    /// Installs a newer revocation list. Returns False if it was not newer.
    fn update_crl(&mut self, crl_pem: &str) -> PyResult<bool> {
        let crl = offgrid_core::identity::RevocationList::decode(&dearmor_kind(crl_pem, ArmorKind::RevocationList)?)
            .map_err(err)?;
        self.core.update_crl(crl, now_ms()).map_err(err)
    }

    /// Signs and sends a message; `to` makes it a direct message.
    #[pyo3(signature = (content, zipcode=None, to=None))]
    fn post(
        &mut self,
        py: Python<'_>,
        content: &str,
        zipcode: Option<String>,
        to: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let scope = match (to, zipcode) {
            (Some(user), _) => Scope::Direct(user),
            (None, Some(zip)) => Scope::community(zip),
            (None, None) => Scope::community(self.core.config().zipcode.clone()),
        };
        let receipt = self.core.post(content, scope, now_ms()).map_err(err)?;
        to_py(py, &receipt)
    }

    /// Relay envelopes sent since the last call, as JSON strings.
    fn take_relay(&mut self) -> Vec<String> {
        let sent = self.link.sent();
        let fresh = sent[self.forwarded.min(sent.len())..]
            .iter()
            .filter_map(|e| serde_json::to_string(e).ok())
            .collect();
        self.forwarded = sent.len();
        fresh
    }

    /// Accepts an envelope from `take_relay` and returns the outcome.
    fn receive_relay(&mut self, envelope_json: &str) -> PyResult<String> {
        let env: RelayEnvelope =
            serde_json::from_str(envelope_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.core.on_relay_envelope(&env, now_ms()).map_err(err)
    }

    #[pyo3(signature = (zipcode=None))]
    fn messages(&self, py: Python<'_>, zipcode: Option<&str>) -> PyResult<Py<PyAny>> {
        let zip = zipcode.unwrap_or(&self.core.config().zipcode).to_string();
        to_py(py, &self.core.list_community(&zip))
    }

    fn direct_messages(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.core.list_direct())
    }

    /// Full view of one message, including its verdict and sender chain.
    fn message(&self, py: Python<'_>, id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.core.message_detail(id).map_err(err)?)
    }

    fn status(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.core.status())
    }

    fn tick(&mut self) {
        self.core.tick(now_ms());
    }
}

#[pymodule]
fn offgrid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OffgridError", m.py().get_type::<OffgridError>())?;
    m.add_function(wrap_pyfunction!(airtime_ms, m)?)?;
    m.add_function(wrap_pyfunction!(field_max_range_m, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_csv, m)?)?;
    m.add_class::<Scenario>()?;
    m.add_class::<SimResult>()?;
    m.add_class::<Authority>()?;
    m.add_class::<Node>()?;
    Ok(())
}
