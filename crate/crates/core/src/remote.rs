//! Outbound HTTP: profile fetches and calls to data-center verifier and
//! current-link endpoints.

use std::time::Duration;

use thiserror::Error;
use url::Url;

use crate::center::LocalVerdict;
use crate::profile::{DataCenterProfile, PROFILE_PATH};
use crate::query::encode;

/// Header a center sets on 404 responses to say why.
pub const STATUS_HEADER: &str = "x-dsid-status";
pub const FACILITY_NOT_SERVED: &str = "facility-not-served";
pub const NOT_FOUND: &str = "notfound";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RemoteError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no answer within {0:?}")]
    Timeout(Duration),
    #[error("unexpected HTTP status {0}")]
    Status(u16),
    #[error("unreadable response: {0}")]
    Protocol(String),
}

/// What a center said about one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CenterAnswer {
    Found(Url),
    NotFound,
    FacilityNotServed,
    /// The center rejected the identifier components outright.
    BadRequest,
}

struct RawResponse {
    status: u16,
    location: Option<String>,
    dsid_status: Option<String>,
    body: Vec<u8>,
}

/// HTTP client with a hard per-call deadline. A transport failure is retried
/// once, but both attempts share the one deadline.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    http: reqwest::Client,
    timeout: Duration,
}

impl RemoteClient {
    pub fn new(timeout: Duration) -> Self {
        let http = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .no_proxy()
            // Each call opens a fresh connection so a stopped center is
            // observed as stopped rather than served by a pooled socket.
            .pool_max_idle_per_host(0)
            .connect_timeout(timeout)
            .build()
            .expect("http client configuration is static");
        Self { http, timeout }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    async fn send_once(&self, url: &Url) -> Result<RawResponse, RemoteError> {
        let resp = self
            .http
            .get(url.clone())
            .send()
            .await
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        let header = |name: &str| resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let location = header("location");
        let dsid_status = header(STATUS_HEADER);
        let status = resp.status().as_u16();
        let body = resp
            .bytes()
            .await
            .map_err(|e| RemoteError::Transport(e.to_string()))?
            .to_vec();
        Ok(RawResponse { status, location, dsid_status, body })
    }

    async fn get(&self, url: &Url) -> Result<RawResponse, RemoteError> {
        let attempts = async {
            match self.send_once(url).await {
                Err(RemoteError::Transport(first)) => {
                    tracing::debug!(%url, error = %first, "retrying after transport error");
                    self.send_once(url).await
                }
                other => other,
            }
        };
        tokio::time::timeout(self.timeout, attempts)
            .await
            .map_err(|_| RemoteError::Timeout(self.timeout))?
    }

    /// Fetches `<base>/.well-known/dsid-profile.xml`.
    pub async fn fetch_profile(&self, base_url: &Url) -> Result<Vec<u8>, RemoteError> {
        let url = Url::parse(&format!("{}{}", base_url.as_str().trim_end_matches('/'), PROFILE_PATH))
            .map_err(|e| RemoteError::Protocol(e.to_string()))?;
        let resp = self.get(&url).await?;
        match resp.status {
            200 => Ok(resp.body),
            s => Err(RemoteError::Status(s)),
        }
    }

    /// Asks the center's local verifier about one dataset.
    pub async fn verify_local(
        &self,
        profile: &DataCenterProfile,
        facility: &str,
        private_id: &str,
    ) -> Result<CenterAnswer, RemoteError> {
        let url = with_query(&profile.verifier_url, facility, private_id)?;
        let resp = self.get(&url).await?;
        match resp.status {
            200 => match LocalVerdict::from_xml(&resp.body).map_err(RemoteError::Protocol)? {
                LocalVerdict::Valid(u) => Ok(CenterAnswer::Found(u)),
                LocalVerdict::NotFound => Ok(CenterAnswer::NotFound),
            },
            400 => Ok(CenterAnswer::BadRequest),
            404 => Ok(CenterAnswer::FacilityNotServed),
            s => Err(RemoteError::Status(s)),
        }
    }

    /// Asks the center where a dataset lives now.
    pub async fn current_link(
        &self,
        profile: &DataCenterProfile,
        facility: &str,
        private_id: &str,
    ) -> Result<CenterAnswer, RemoteError> {
        let url = with_query(&profile.resolver_url, facility, private_id)?;
        let resp = self.get(&url).await?;
        match resp.status {
            302 | 303 | 307 => {
                let loc = resp
                    .location
                    .ok_or_else(|| RemoteError::Protocol("redirect without Location".into()))?;
                Url::parse(&loc)
                    .map(CenterAnswer::Found)
                    .map_err(|e| RemoteError::Protocol(format!("bad Location `{loc}`: {e}")))
            }
            400 => Ok(CenterAnswer::BadRequest),
            404 if resp.dsid_status.as_deref() == Some(FACILITY_NOT_SERVED) => Ok(CenterAnswer::FacilityNotServed),
            404 => Ok(CenterAnswer::NotFound),
            s => Err(RemoteError::Status(s)),
        }
    }
}

impl Default for RemoteClient {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT)
    }
}

fn with_query(endpoint: &Url, facility: &str, private_id: &str) -> Result<Url, RemoteError> {
    let sep = if endpoint.query().is_some() { '&' } else { '?' };
    let s = format!("{endpoint}{sep}facility={}&private={}", encode(facility), encode(private_id));
    Url::parse(&s).map_err(|e| RemoteError::Protocol(e.to_string()))
}
