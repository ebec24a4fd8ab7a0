//! HTTP front ends: one router for a data center, one for the central
//! services (master verifier, link resolver, correlation store).
//!
//! Query strings are decoded with [`crate::query`] rather than form
//! decoding, so a literal `+` in a private id survives.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::center::{CenterError, LocalCenter};
use crate::clock::parse_timestamp;
use crate::correlation::{render_lines, CorrelationStore, IngestError};
use crate::dsid::DatasetIdentifier;
use crate::profile::PROFILE_PATH;
use crate::query;
use crate::remote::{FACILITY_NOT_SERVED, NOT_FOUND, STATUS_HEADER};
use crate::resolver::{LinkResolver, ResolutionOutcome};
use crate::verifier::{results_to_xml, MasterVerifier};

pub const STALE_HEADER: &str = "x-resolver-stale";

const XML: &str = "application/xml; charset=utf-8";
const TEXT: &str = "text/plain; charset=utf-8";

fn body(status: StatusCode, content_type: &'static str, text: impl Into<String>) -> Response {
    (status, [(header::CONTENT_TYPE, content_type)], text.into()).into_response()
}

fn bad_request(msg: impl Into<String>) -> Response {
    body(StatusCode::BAD_REQUEST, TEXT, msg.into() + "\n")
}

fn params(q: &Option<String>) -> Vec<(String, String)> {
    q.as_deref().map(query::pairs).unwrap_or_default()
}

// ---------------------------------------------------------------- center

pub fn center_router(center: Arc<LocalCenter>) -> Router {
    Router::new()
        .route("/verify", get(center_verify))
        .route("/resolve", get(center_resolve))
        .route(PROFILE_PATH, get(center_profile))
        .with_state(center)
}

fn center_identifier(q: &Option<String>) -> Result<DatasetIdentifier, Response> {
    let p = params(q);
    let (Some(facility), Some(private)) = (query::get(&p, "facility"), query::get(&p, "private")) else {
        return Err(bad_request("facility and private parameters are required"));
    };
    DatasetIdentifier::new(facility, private).map_err(|e| bad_request(e.to_string()))
}

fn not_served(facility: &str) -> Response {
    let mut r = body(StatusCode::NOT_FOUND, TEXT, format!("facility `{facility}` not served\n"));
    r.headers_mut().insert(STATUS_HEADER, HeaderValue::from_static(FACILITY_NOT_SERVED));
    r
}

async fn center_verify(State(center): State<Arc<LocalCenter>>, RawQuery(q): RawQuery) -> Response {
    let id = match center_identifier(&q) {
        Ok(id) => id,
        Err(r) => return r,
    };
    match center.verify_local(&id.facility_key(), id.private_id()) {
        Ok(verdict) => body(StatusCode::OK, XML, verdict.to_xml()),
        Err(CenterError::FacilityNotServed(f)) => not_served(&f),
        Err(e) => body(StatusCode::INTERNAL_SERVER_ERROR, TEXT, e.to_string()),
    }
}

async fn center_resolve(State(center): State<Arc<LocalCenter>>, RawQuery(q): RawQuery) -> Response {
    let id = match center_identifier(&q) {
        Ok(id) => id,
        Err(r) => return r,
    };
    match center.current_link(&id.facility_key(), id.private_id()) {
        Ok(url) => redirect(url.as_str(), false),
        Err(CenterError::FacilityNotServed(f)) => not_served(&f),
        Err(CenterError::NotFound(_)) => {
            let mut r = body(StatusCode::NOT_FOUND, TEXT, "no such dataset\n");
            r.headers_mut().insert(STATUS_HEADER, HeaderValue::from_static(NOT_FOUND));
            r
        }
        Err(e) => body(StatusCode::INTERNAL_SERVER_ERROR, TEXT, e.to_string()),
    }
}

async fn center_profile(State(center): State<Arc<LocalCenter>>) -> Response {
    body(StatusCode::OK, XML, center.serve_profile())
}

fn redirect(location: &str, stale: bool) -> Response {
    let mut r = StatusCode::FOUND.into_response();
    match HeaderValue::from_str(location) {
        Ok(v) => {
            r.headers_mut().insert(header::LOCATION, v);
        }
        Err(_) => return body(StatusCode::BAD_GATEWAY, TEXT, "unrepresentable target URL\n"),
    }
    if stale {
        r.headers_mut().insert(STALE_HEADER, HeaderValue::from_static("true"));
    }
    r
}

// ------------------------------------------------------ central services

#[derive(Clone)]
pub struct Services {
    pub verifier: Arc<MasterVerifier>,
    pub resolver: Arc<LinkResolver>,
    pub correlations: Arc<CorrelationStore>,
}

pub fn services_router(services: Services) -> Router {
    Router::new()
        .route("/verify", get(verify_one).post(verify_many))
        .route("/link", get(resolve_link))
        .route("/feed", axum::routing::put(ingest_feed))
        .route("/correlations", get(harvest))
        .route("/article", get(article))
        .route("/dataset", get(dataset))
        .with_state(services)
}

async fn verify_one(State(s): State<Services>, RawQuery(q): RawQuery) -> Response {
    let p = params(&q);
    let Some(id) = query::get(&p, "id") else {
        return bad_request("id parameter is required");
    };
    let result = s.verifier.verify(id).await;
    body(
        StatusCode::OK,
        XML,
        format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n{}\n", result.to_xml()),
    )
}

async fn verify_many(State(s): State<Services>, payload: Bytes) -> Response {
    let Ok(text) = std::str::from_utf8(&payload) else {
        return bad_request("body must be UTF-8");
    };
    let text = text.strip_suffix('\n').unwrap_or(text);
    let ids: Vec<String> = if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned()).collect()
    };
    match s.verifier.verify_batch(&ids).await {
        Ok(results) => body(StatusCode::OK, XML, results_to_xml(&results)),
        Err(e) => body(StatusCode::PAYLOAD_TOO_LARGE, TEXT, e.to_string() + "\n"),
    }
}

async fn resolve_link(State(s): State<Services>, RawQuery(q): RawQuery) -> Response {
    let p = params(&q);
    let Some(id) = query::get(&p, "id") else {
        return bad_request("id parameter is required");
    };
    let outcome = s.resolver.resolve(id).await;
    match &outcome {
        ResolutionOutcome::Redirect { target, stale } => redirect(target.as_str(), *stale),
        other => {
            let status = StatusCode::from_u16(other.http_status()).expect("static status codes");
            body(status, TEXT, format!("{}\n", other.label()))
        }
    }
}

async fn ingest_feed(State(s): State<Services>, RawQuery(q): RawQuery, payload: Bytes) -> Response {
    let p = params(&q);
    let Some(source) = query::get(&p, "source") else {
        return bad_request("source parameter is required");
    };
    match s.correlations.ingest_feed(&payload, source) {
        Ok(report) => body(StatusCode::OK, XML, report.to_xml()),
        Err(e @ (IngestError::FeedUnreadable(_) | IngestError::BadSource(_))) => bad_request(e.to_string()),
        Err(e) => body(StatusCode::INTERNAL_SERVER_ERROR, TEXT, e.to_string() + "\n"),
    }
}

async fn harvest(State(s): State<Services>, RawQuery(q): RawQuery) -> Response {
    let p = params(&q);
    let facility = query::get(&p, "facility").filter(|f| !f.is_empty() && *f != "all");
    let since = match query::get(&p, "since") {
        None | Some("") => None,
        Some(raw) => match parse_timestamp(raw) {
            Some(t) => Some(t),
            None => return bad_request(format!("since `{raw}` is not RFC 3339")),
        },
    };
    body(StatusCode::OK, TEXT, s.correlations.harvest(facility, since))
}

async fn article(State(s): State<Services>, RawQuery(q): RawQuery) -> Response {
    let p = params(&q);
    let Some(id) = query::get(&p, "id") else {
        return bad_request("id parameter is required");
    };
    let datasets = s.correlations.lookup_article(id);
    body(StatusCode::OK, TEXT, render_lines(datasets.iter().map(|d| (id, d.as_str()))))
}

async fn dataset(State(s): State<Services>, RawQuery(q): RawQuery) -> Response {
    let p = params(&q);
    let Some(id) = query::get(&p, "id") else {
        return bad_request("id parameter is required");
    };
    match s.correlations.lookup_dataset(id) {
        Ok(articles) => {
            let canonical = crate::dsid::canonicalize(id).expect("lookup succeeded");
            body(
                StatusCode::OK,
                TEXT,
                render_lines(articles.iter().map(|a| (a.as_str(), canonical.as_str()))),
            )
        }
        Err(e) => bad_request(e.to_string()),
    }
}

// ---------------------------------------------------------------- serving

/// A router served on a bound socket until stopped.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub async fn start(listener: TcpListener, router: Router) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            task,
        })
    }

    pub async fn bind(addr: SocketAddr, router: Router) -> std::io::Result<Self> {
        Self::start(TcpListener::bind(addr).await?, router).await
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and waits for in-flight requests to finish; the port
    /// is free once this returns.
    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serves until the task ends (for the long-running daemon).
    pub async fn wait(self) -> std::io::Result<()> {
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

/// Response headers of interest to the harness and tests.
pub fn is_stale(headers: &HeaderMap) -> bool {
    headers.get(STALE_HEADER).is_some_and(|v| v == "true")
}
