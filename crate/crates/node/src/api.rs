//! Local JSON API. Every handler runs its work inside the command loop; see
//! API.md for the endpoint list with examples.

use std::convert::Infallible;
use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use offgrid_core::identity::{
    armor, dearmor, hex, ArmorKind, CertChain, CertSummary, IdentityError, Lineage, RequestStatus, RevocationList,
    RoleFlags, SigningRequest, Subject,
};
use offgrid_core::messaging::{ActionKind, MessagingError, ModerationAction, Scope, Target};
use offgrid_core::nodesvc::{NodeError, NodeEvent, RelayEnvelope, TransportStatus};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::service::{now_ms, Daemon, NodeHandle, ServiceError};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
}

impl From<MessagingError> for ApiError {
    fn from(e: MessagingError) -> Self {
        ApiError::Node(e.into())
    }
}

fn identity_status(e: &IdentityError) -> StatusCode {
    match e {
        IdentityError::Malformed(_) | IdentityError::BadSignature(_) => StatusCode::BAD_REQUEST,
        IdentityError::Unauthorized(_) => StatusCode::FORBIDDEN,
        IdentityError::State(_) => StatusCode::CONFLICT,
        IdentityError::NotFound(_) => StatusCode::NOT_FOUND,
        IdentityError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn node_status(e: &NodeError) -> StatusCode {
    match e {
        NodeError::Identity(e) | NodeError::Messaging(MessagingError::Identity(e)) => identity_status(e),
        NodeError::Messaging(MessagingError::Unauthorized(_)) => StatusCode::FORBIDDEN,
        NodeError::Messaging(_) | NodeError::Mesh(_) | NodeError::Config(_) => StatusCode::BAD_REQUEST,
        NodeError::ReadOnly(_) => StatusCode::FORBIDDEN,
        NodeError::RateLimited => StatusCode::TOO_MANY_REQUESTS,
        NodeError::NotFound(_) => StatusCode::NOT_FOUND,
        NodeError::State(_) => StatusCode::CONFLICT,
        NodeError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::Service(ServiceError::Stopped) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Service(ServiceError::Node(e)) | ApiError::Node(e) => node_status(e),
            ApiError::Service(ServiceError::Identity(e)) | ApiError::Identity(e) => identity_status(e),
            ApiError::Service(ServiceError::Radio(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        (
            status,
            Json(json!({ "error": self.to_string(), "status": status.as_u16() })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn dearmor_as(text: &str, want: ArmorKind) -> ApiResult<Vec<u8>> {
    let (kind, bytes) = dearmor(text)?;
    if kind != want {
        return Err(ApiError::BadRequest(format!("expected {want:?}, found {kind:?}")));
    }
    Ok(bytes)
}

fn no_authority() -> ApiError {
    ApiError::NotFound("this node does not host a certificate authority".into())
}

pub fn router(handle: NodeHandle) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/nearby", get(nearby))
        .route("/api/events", get(events))
        .route("/api/messages", post(post_message))
        .route("/api/messages/{id}", get(message_detail))
        .route("/api/communities", get(communities))
        .route("/api/communities/{zip}/messages", get(community_messages))
        .route("/api/communities/{zip}/hidden", get(community_hidden))
        .route("/api/direct", get(direct))
        .route("/api/quarantine", get(quarantine))
        .route("/api/moderation", get(list_actions).post(moderate))
        .route("/api/relay", post(relay))
        .route("/api/identity", get(identity))
        .route("/api/identity/generate", post(generate))
        .route("/api/identity/import", post(import))
        .route("/api/identity/crl", get(get_crl).post(put_crl))
        .route("/api/identity/requests", get(pending).post(submit))
        .route("/api/identity/requests/{id}/approve", post(approve))
        .route("/api/identity/requests/{id}/reject", post(reject))
        .route("/api/identity/revoke", post(revoke))
        .route("/api/identity/chains/{serial}", get(fetch_chain))
        .with_state(handle)
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve(
    handle: NodeHandle,
    bind: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(handle))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds on `bind` and serves in the background. Returns the bound address.
pub async fn spawn_server(
    handle: NodeHandle,
    bind: &str,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(handle)).await {
            tracing::error!("api server: {e}");
        }
    });
    Ok((addr, task))
}

// Status

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusView {
    pub node_id: u32,
    pub zipcode: String,
    pub identity: String,
    pub user_id: Option<String>,
    pub hosts_authority: bool,
    pub transport: TransportStatus,
    pub queue_dropped: u64,
    pub trust_root: Option<CertSummary>,
}

async fn status(State(h): State<NodeHandle>) -> ApiResult<Json<StatusView>> {
    Ok(Json(
        h.call(|d| StatusView {
            node_id: d.core.node_id(),
            zipcode: d.core.config().zipcode.clone(),
            identity: d.core.identity().label().into(),
            user_id: d.core.user_id().map(String::from),
            hosts_authority: d.authority.is_some(),
            transport: d.core.status(),
            queue_dropped: d.core.queue().dropped(),
            trust_root: d.core.trust().map(|t| t.root.summary()),
        })
        .await?,
    ))
}

#[derive(Deserialize)]
struct NearbyQuery {
    minutes: Option<f64>,
}

async fn nearby(State(h): State<NodeHandle>, Query(q): Query<NearbyQuery>) -> ApiResult<Json<Value>> {
    let minutes = q.minutes.unwrap_or(10.0);
    if !(minutes >= 0.0) {
        return Err(ApiError::BadRequest("minutes must be non-negative".into()));
    }
    let window = (minutes * 60_000.0) as i64;
    let nodes = h.call(move |d| d.core.nearby(window, now_ms())).await?;
    Ok(Json(json!({ "minutes": minutes, "nodes": nodes })))
}

fn event_name(e: &NodeEvent) -> &'static str {
    match e {
        NodeEvent::Message { .. } => "message",
        NodeEvent::Moderation { .. } => "moderation",
        NodeEvent::PathChanged { .. } => "path_changed",
        NodeEvent::Sent(_) => "sent",
        NodeEvent::Identity { .. } => "identity",
        NodeEvent::Warning { .. } => "warning",
    }
}

async fn events(State(h): State<NodeHandle>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = h.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(ev) => Event::default()
                .event(event_name(&ev))
                .json_data(&ev)
                .unwrap_or_else(|_| Event::default().event("warning")),
            Err(RecvError::Lagged(n)) => Event::default()
                .event("warning")
                .data(format!("{{\"type\":\"warning\",\"detail\":\"{n} events skipped\"}}")),
            Err(RecvError::Closed) => return None,
        };
        Some((Ok(event), rx))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

// Messages

#[derive(Deserialize)]
struct PostBody {
    content: String,
    /// Defaults to the node's own community.
    scope: Option<Scope>,
}

async fn post_message(State(h): State<NodeHandle>, Json(body): Json<PostBody>) -> ApiResult<Response> {
    let receipt = h
        .call(move |d| {
            let scope = body
                .scope
                .unwrap_or_else(|| Scope::community(d.core.config().zipcode.clone()));
            d.core.post(&body.content, scope, now_ms())
        })
        .await??;
    let code = if receipt.queued {
        StatusCode::ACCEPTED
    } else {
        StatusCode::CREATED
    };
    Ok((code, Json(receipt)).into_response())
}

async fn message_detail(State(h): State<NodeHandle>, Path(id): Path<String>) -> ApiResult<Response> {
    let detail = h.call(move |d| d.core.message_detail(&id)).await??;
    Ok(Json(detail).into_response())
}

async fn communities(State(h): State<NodeHandle>) -> ApiResult<Response> {
    Ok(Json(h.call(|d| d.core.communities()).await?).into_response())
}

async fn community_messages(State(h): State<NodeHandle>, Path(zip): Path<String>) -> ApiResult<Response> {
    Ok(Json(h.call(move |d| d.core.list_community(&zip)).await?).into_response())
}

async fn community_hidden(State(h): State<NodeHandle>, Path(zip): Path<String>) -> ApiResult<Response> {
    Ok(Json(h.call(move |d| d.core.list_hidden(&zip)).await?).into_response())
}

async fn direct(State(h): State<NodeHandle>) -> ApiResult<Response> {
    Ok(Json(h.call(|d| d.core.list_direct()).await?).into_response())
}

async fn quarantine(State(h): State<NodeHandle>) -> ApiResult<Response> {
    Ok(Json(h.call(|d| d.core.quarantine()).await?).into_response())
}

// Moderation

#[derive(Deserialize)]
struct ModerateBody {
    zipcode: Option<String>,
    target: Target,
    #[serde(flatten)]
    kind: ActionKind,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionView {
    pub id: String,
    pub date_ms: i64,
    pub zipcode: String,
    pub target: Target,
    #[serde(flatten)]
    pub kind: ActionKind,
    pub actor_user_id: String,
}

impl From<&ModerationAction> for ActionView {
    fn from(a: &ModerationAction) -> Self {
        Self {
            id: hex(&a.id()),
            date_ms: a.date_ms,
            zipcode: a.zipcode.clone(),
            target: a.target.clone(),
            kind: a.kind.clone(),
            actor_user_id: a.actor_chain.leaf.subject.user_id.clone(),
        }
    }
}

async fn moderate(State(h): State<NodeHandle>, Json(body): Json<ModerateBody>) -> ApiResult<Response> {
    let action = h
        .call(move |d| {
            let zip = body.zipcode.unwrap_or_else(|| d.core.config().zipcode.clone());
            d.core.moderate(body.kind, body.target, &zip, now_ms())
        })
        .await??;
    Ok((StatusCode::CREATED, Json(ActionView::from(&action))).into_response())
}

async fn list_actions(State(h): State<NodeHandle>) -> ApiResult<Response> {
    let list: Vec<ActionView> = h
        .call(|d| d.core.actions().iter().map(ActionView::from).collect())
        .await?;
    Ok(Json(list).into_response())
}

async fn relay(State(h): State<NodeHandle>, Json(env): Json<RelayEnvelope>) -> ApiResult<Response> {
    let outcome = h.call(move |d| d.core.on_relay_envelope(&env, now_ms())).await??;
    Ok(Json(json!({ "outcome": outcome })).into_response())
}

// Identity, node side

#[derive(Debug, Serialize, Deserialize)]
pub struct IdentityView {
    pub state: String,
    pub user_id: Option<String>,
    /// Armored signing request while pending.
    pub request: Option<String>,
    pub request_id: Option<String>,
    /// Leaf, intermediary, root once active.
    pub chain: Vec<CertSummary>,
}

fn identity_view(d: &Daemon) -> IdentityView {
    use offgrid_core::nodesvc::IdentityStatus;
    let (request, request_id, chain) = match d.core.identity() {
        IdentityStatus::Absent => (None, None, Vec::new()),
        IdentityStatus::Pending { request } => (
            Some(armor(ArmorKind::SigningRequest, &request.encode())),
            Some(hex(&request.request_id)),
            Vec::new(),
        ),
        IdentityStatus::Active { chain } => (
            None,
            None,
            vec![chain.leaf.summary(), chain.intermediary.summary(), chain.root.summary()],
        ),
    };
    IdentityView {
        state: d.core.identity().label().into(),
        user_id: d.core.user_id().map(String::from),
        request,
        request_id,
        chain,
    }
}

async fn identity(State(h): State<NodeHandle>) -> ApiResult<Json<IdentityView>> {
    Ok(Json(h.call(|d| identity_view(d)).await?))
}

#[derive(Deserialize)]
struct GenerateBody {
    name: String,
    user_id: String,
    /// Free-form evidence of identity, stored opaquely.
    #[serde(default)]
    evidence: String,
}

async fn generate(State(h): State<NodeHandle>, Json(b): Json<GenerateBody>) -> ApiResult<Response> {
    let view = h
        .call(move |d| -> Result<IdentityView, NodeError> {
            d.core
                .generate_identity(Subject::new(b.name, b.user_id), b.evidence.into_bytes(), now_ms())?;
            Ok(identity_view(d))
        })
        .await??;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
struct ImportBody {
    chain: String,
}

async fn import(State(h): State<NodeHandle>, Json(b): Json<ImportBody>) -> ApiResult<Json<IdentityView>> {
    let chain = CertChain::decode(&dearmor_as(&b.chain, ArmorKind::CertificateChain)?)?;
    Ok(Json(
        h.call(move |d| -> Result<IdentityView, NodeError> {
            d.core.import_chain(chain, now_ms())?;
            Ok(identity_view(d))
        })
        .await??,
    ))
}

#[derive(Deserialize)]
struct CrlBody {
    crl: String,
}

async fn put_crl(State(h): State<NodeHandle>, Json(b): Json<CrlBody>) -> ApiResult<Json<Value>> {
    let crl = RevocationList::decode(&dearmor_as(&b.crl, ArmorKind::RevocationList)?)?;
    let updated = h.call(move |d| d.core.update_crl(crl, now_ms())).await??;
    Ok(Json(json!({ "updated": updated })))
}

async fn get_crl(State(h): State<NodeHandle>) -> ApiResult<Json<Value>> {
    let crl = h
        .call(|d| d.core.trust().map(|t| t.crl.clone()))
        .await?
        .ok_or_else(|| ApiError::NotFound("no trust root configured".into()))?;
    let revoked: Vec<u64> = crl.entries().map(|r| r.serial).collect();
    Ok(Json(json!({
        "crl": armor(ArmorKind::RevocationList, &crl.encode()),
        "revoked": revoked,
    })))
}

// Identity service, on a node hosting the authority

#[derive(Debug, Serialize, Deserialize)]
pub struct RequestView {
    pub request_id: String,
    pub subject: Subject,
    pub submitted_at: i64,
    pub status: RequestStatus,
}

impl From<&SigningRequest> for RequestView {
    fn from(r: &SigningRequest) -> Self {
        Self {
            request_id: hex(&r.request_id),
            subject: r.subject.clone(),
            submitted_at: r.submitted_at,
            status: r.status.clone(),
        }
    }
}

#[derive(Deserialize)]
struct SubmitBody {
    request: String,
}

async fn submit(State(h): State<NodeHandle>, Json(b): Json<SubmitBody>) -> ApiResult<Response> {
    let request = SigningRequest::decode(&dearmor_as(&b.request, ArmorKind::SigningRequest)?)?;
    let view = h
        .call(move |d| -> ApiResult<RequestView> {
            let host = d.authority.as_mut().ok_or_else(no_authority)?;
            let view = RequestView::from(&request);
            host.authority_mut().submit(request)?;
            host.save()?;
            Ok(view)
        })
        .await??;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn pending(State(h): State<NodeHandle>) -> ApiResult<Json<Vec<RequestView>>> {
    Ok(Json(
        h.call(|d| -> ApiResult<Vec<RequestView>> {
            let host = d.authority.as_ref().ok_or_else(no_authority)?;
            Ok(host.authority().pending().into_iter().map(RequestView::from).collect())
        })
        .await??,
    ))
}

#[derive(Deserialize)]
struct ApproveBody {
    #[serde(default)]
    lineage: Lineage,
    #[serde(default)]
    roles: Vec<String>,
    zipcode_scope: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChainView {
    pub serial: u64,
    /// Armored certificate chain, ready for `/api/identity/import`.
    pub chain: String,
    pub summary: Vec<CertSummary>,
}

fn chain_view(chain: &CertChain) -> ChainView {
    ChainView {
        serial: chain.leaf.serial,
        chain: armor(ArmorKind::CertificateChain, &chain.encode()),
        summary: vec![chain.leaf.summary(), chain.intermediary.summary(), chain.root.summary()],
    }
}

async fn approve(
    State(h): State<NodeHandle>,
    Path(id): Path<String>,
    Json(b): Json<ApproveBody>,
) -> ApiResult<Response> {
    let roles = RoleFlags::from_names(b.roles.iter().map(String::as_str))?;
    let view = h
        .call(move |d| -> ApiResult<ChainView> {
            let host = d.authority.as_mut().ok_or_else(no_authority)?;
            let cert =
                host.authority_mut()
                    .approve(&id, b.lineage, roles, b.zipcode_scope, now_ms().div_euclid(1000))?;
            host.save()?;
            Ok(chain_view(&host.authority().chain_for(cert.serial)?))
        })
        .await??;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
struct RejectBody {
    reason: String,
}

async fn reject(
    State(h): State<NodeHandle>,
    Path(id): Path<String>,
    Json(b): Json<RejectBody>,
) -> ApiResult<Json<Value>> {
    h.call(move |d| -> ApiResult<()> {
        let host = d.authority.as_mut().ok_or_else(no_authority)?;
        host.authority_mut().reject(&id, &b.reason)?;
        host.save()?;
        Ok(())
    })
    .await??;
    Ok(Json(json!({ "rejected": true })))
}

#[derive(Deserialize)]
struct RevokeBody {
    serial: u64,
    reason: String,
}

/// Revokes and installs the new list on this node at once.
async fn revoke(State(h): State<NodeHandle>, Json(b): Json<RevokeBody>) -> ApiResult<Json<Value>> {
    let crl = h
        .call(move |d| -> ApiResult<RevocationList> {
            let host = d.authority.as_mut().ok_or_else(no_authority)?;
            let now = now_ms();
            let crl = host
                .authority_mut()
                .revoke(b.serial, &b.reason, now.div_euclid(1000))?
                .clone();
            host.save()?;
            if d.core.trust().is_some_and(|t| &t.root == host.authority().root()) {
                d.core.update_crl(crl.clone(), now)?;
            }
            Ok(crl)
        })
        .await??;
    let revoked: Vec<u64> = crl.entries().map(|r| r.serial).collect();
    Ok(Json(json!({
        "crl": armor(ArmorKind::RevocationList, &crl.encode()),
        "revoked": revoked,
    })))
}

async fn fetch_chain(State(h): State<NodeHandle>, Path(serial): Path<u64>) -> ApiResult<Json<ChainView>> {
    Ok(Json(
        h.call(move |d| -> ApiResult<ChainView> {
            let host = d.authority.as_ref().ok_or_else(no_authority)?;
            Ok(chain_view(&host.authority().chain_for(serial)?))
        })
        .await??,
    ))
}
