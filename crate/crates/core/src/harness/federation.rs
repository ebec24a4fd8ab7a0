//! An in-process federation: mock data centers and the central services,
//! each behind its real HTTP interface on a loopback port, sharing one
//! simulated clock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::extract::Request;
use axum::middleware::Next;
use chrono::Duration;
use thiserror::Error;
use tokio::net::TcpListener;
use url::Url;

use crate::center::{CenterError, InventoryRecord, LocalCenter};
use crate::clock::{SharedClock, SimClock};
use crate::correlation::CorrelationStore;
use crate::dsid::{self, DatasetIdentifier};
use crate::query::encode;
use crate::registry::{CenterSource, RefreshReport, Registry, RegistryConfig};
use crate::remote::RemoteClient;
use crate::resolver::{LinkResolver, ResolverConfig};
use crate::server::{center_router, services_router, RunningServer, Services, STALE_HEADER};
use crate::verifier::{make_permanent_link, results_from_xml, MasterVerifier, VerificationResult, VerifierConfig};

#[derive(Debug, Clone)]
pub struct CenterSpec {
    pub center_id: String,
    pub display_name: String,
    pub facilities: Vec<String>,
}

impl CenterSpec {
    pub fn new(center_id: &str, display_name: &str, facilities: &[&str]) -> Self {
        Self {
            center_id: center_id.into(),
            display_name: display_name.into(),
            facilities: facilities.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// The six participating centers, with illustrative facility holdings.
pub fn default_topology() -> Vec<CenterSpec> {
    vec![
        CenterSpec::new("CXC", "Chandra X-ray Center", &["chandra"]),
        CenterSpec::new(
            "HEASARC",
            "High Energy Astrophysics Science Archive Research Center",
            &["rosat", "rxte", "swift", "xmm"],
        ),
        CenterSpec::new("IRSA", "Infrared Science Archive", &["2mass", "iras", "msx"]),
        CenterSpec::new(
            "LAMBDA",
            "Legacy Archive for Microwave Background Data Analysis",
            &["cobe", "wmap"],
        ),
        CenterSpec::new(
            "MAST",
            "Multimission Archive at Space Telescope Science Institute",
            &["fuse", "galex", "hst", "iue"],
        ),
        CenterSpec::new("SSC", "Spitzer Science Center", &["spitzer"]),
    ]
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub registry: RegistryConfig,
    pub resolver: ResolverConfig,
    pub remote_timeout: StdDuration,
    pub batch_cap: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            registry: RegistryConfig::default(),
            resolver: ResolverConfig::default(),
            remote_timeout: crate::remote::DEFAULT_TIMEOUT,
            batch_cap: crate::verifier::DEFAULT_BATCH_CAP,
        }
    }
}

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("unknown center `{0}`")]
    UnknownCenter(String),
    #[error(transparent)]
    Center(#[from] CenterError),
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
    #[error("http: {0}")]
    Http(String),
}

/// Requests a mock center has received, by endpoint.
#[derive(Debug, Default)]
pub struct RequestCounters {
    pub verify: AtomicU64,
    pub resolve: AtomicU64,
    pub profile: AtomicU64,
}

impl RequestCounters {
    fn record(&self, path: &str) {
        let counter = match path {
            "/verify" => &self.verify,
            "/resolve" => &self.resolve,
            _ => &self.profile,
        };
        counter.fetch_add(1, Ordering::SeqCst);
    }

    pub fn verify_count(&self) -> u64 {
        self.verify.load(Ordering::SeqCst)
    }

    pub fn resolve_count(&self) -> u64 {
        self.resolve.load(Ordering::SeqCst)
    }
}

struct MockCenter {
    center: Arc<LocalCenter>,
    addr: SocketAddr,
    counters: Arc<RequestCounters>,
    server: Option<RunningServer>,
}

fn counted_router(center: Arc<LocalCenter>, counters: Arc<RequestCounters>) -> axum::Router {
    center_router(center).layer(axum::middleware::from_fn(move |req: Request, next: Next| {
        let counters = counters.clone();
        async move {
            counters.record(req.uri().path());
            next.run(req).await
        }
    }))
}

/// What an HTTP GET of a permanent link returned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkResponse {
    pub status: u16,
    pub location: Option<String>,
    pub stale: bool,
    pub body: String,
}

pub struct Federation {
    clock: Arc<SimClock>,
    config: FederationConfig,
    centers: BTreeMap<String, MockCenter>,
    registry: Arc<Registry>,
    verifier: Arc<MasterVerifier>,
    resolver: Arc<LinkResolver>,
    correlations: Arc<CorrelationStore>,
    services: Option<RunningServer>,
    services_url: Url,
    http: reqwest::Client,
}

impl Federation {
    /// Boots every center and the central services, then runs one refresh.
    pub async fn start(specs: &[CenterSpec], config: FederationConfig) -> Result<Self, FederationError> {
        let clock = SimClock::at_epoch();
        let shared: SharedClock = clock.clone();

        let mut centers = BTreeMap::new();
        for spec in specs {
            let listener = TcpListener::bind("127.0.0.1:0").await?;
            let addr = listener.local_addr()?;
            let base = Url::parse(&format!("http://{addr}/")).expect("loopback url");
            let center = Arc::new(LocalCenter::new(&spec.center_id, &spec.display_name, base, shared.clone()));
            for f in &spec.facilities {
                center.claim_facility(f)?;
            }
            let counters = Arc::new(RequestCounters::default());
            let server = RunningServer::start(listener, counted_router(center.clone(), counters.clone())).await?;
            centers.insert(
                spec.center_id.clone(),
                MockCenter {
                    center,
                    addr,
                    counters,
                    server: Some(server),
                },
            );
        }

        let sources = centers
            .iter()
            .map(|(id, m)| CenterSource {
                center_id: id.clone(),
                base_url: m.center.base_url().clone(),
            })
            .collect();
        let client = RemoteClient::new(config.remote_timeout);
        let registry = Arc::new(Registry::new(sources, config.registry, shared.clone(), client.clone()));

        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let services_url = Url::parse(&format!("http://{}/", listener.local_addr()?)).expect("loopback url");
        let verifier = Arc::new(MasterVerifier::new(
            registry.clone(),
            client.clone(),
            VerifierConfig {
                resolver_base_url: services_url.clone(),
                batch_cap: config.batch_cap,
            },
        ));
        let resolver = Arc::new(LinkResolver::new(registry.clone(), client, shared.clone(), config.resolver));
        let correlations = Arc::new(CorrelationStore::in_memory(shared));
        let services = RunningServer::start(
            listener,
            services_router(Services {
                verifier: verifier.clone(),
                resolver: resolver.clone(),
                correlations: correlations.clone(),
            }),
        )
        .await?;

        let http = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .no_proxy()
            .pool_max_idle_per_host(0)
            .timeout(StdDuration::from_secs(60))
            .build()
            .map_err(|e| FederationError::Http(e.to_string()))?;

        let fed = Self {
            clock,
            config,
            centers,
            registry,
            verifier,
            resolver,
            correlations,
            services: Some(services),
            services_url,
            http,
        };
        fed.refresh().await;
        Ok(fed)
    }

    pub fn clock(&self) -> &Arc<SimClock> {
        &self.clock
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn verifier(&self) -> &Arc<MasterVerifier> {
        &self.verifier
    }

    pub fn resolver(&self) -> &Arc<LinkResolver> {
        &self.resolver
    }

    pub fn correlations(&self) -> &Arc<CorrelationStore> {
        &self.correlations
    }

    pub fn services_url(&self) -> &Url {
        &self.services_url
    }

    pub fn center_ids(&self) -> Vec<String> {
        self.centers.keys().cloned().collect()
    }

    fn mock(&self, center_id: &str) -> Result<&MockCenter, FederationError> {
        self.centers
            .get(center_id)
            .ok_or_else(|| FederationError::UnknownCenter(center_id.to_owned()))
    }

    pub fn center(&self, center_id: &str) -> Result<&Arc<LocalCenter>, FederationError> {
        Ok(&self.mock(center_id)?.center)
    }

    pub fn counters(&self, center_id: &str) -> Result<&Arc<RequestCounters>, FederationError> {
        Ok(&self.mock(center_id)?.counters)
    }

    pub fn is_alive(&self, center_id: &str) -> bool {
        self.centers.get(center_id).is_some_and(|m| m.server.is_some())
    }

    /// Center currently holding a facility according to the inventories
    /// themselves, independent of the registry.
    pub fn owner_of(&self, facility: &str) -> Option<String> {
        let key = dsid::normalize_facility(facility);
        self.centers
            .iter()
            .find(|(_, m)| m.center.facilities().contains(&key))
            .map(|(id, _)| id.clone())
    }

    pub fn permanent_link(&self, id: &DatasetIdentifier) -> Url {
        make_permanent_link(&self.services_url, id)
    }

    pub async fn refresh(&self) -> RefreshReport {
        self.registry.refresh().await
    }

    /// Moves the simulated clock and runs a refresh if one became due.
    pub async fn advance(&self, by: Duration) -> Option<RefreshReport> {
        self.clock.advance(by);
        self.registry.refresh_if_due().await
    }

    /// Lets every cache entry expire and every profile be re-read.
    pub async fn quiesce(&self) -> RefreshReport {
        self.clock.advance(self.config.resolver.cache_ttl + Duration::seconds(1));
        self.refresh().await
    }

    pub async fn kill(&mut self, center_id: &str) -> Result<(), FederationError> {
        let mock = self
            .centers
            .get_mut(center_id)
            .ok_or_else(|| FederationError::UnknownCenter(center_id.to_owned()))?;
        if let Some(server) = mock.server.take() {
            server.stop().await;
        }
        Ok(())
    }

    /// Restarts a stopped center on its original port with its inventory intact.
    pub async fn revive(&mut self, center_id: &str) -> Result<(), FederationError> {
        let mock = self
            .centers
            .get_mut(center_id)
            .ok_or_else(|| FederationError::UnknownCenter(center_id.to_owned()))?;
        if mock.server.is_some() {
            return Ok(());
        }
        let mut last_err = None;
        for _ in 0..50 {
            match TcpListener::bind(mock.addr).await {
                Ok(listener) => {
                    let router = counted_router(mock.center.clone(), mock.counters.clone());
                    mock.server = Some(RunningServer::start(listener, router).await?);
                    return Ok(());
                }
                Err(e) => {
                    last_err = Some(e);
                    tokio::time::sleep(StdDuration::from_millis(20)).await;
                }
            }
        }
        Err(last_err.expect("at least one bind attempt").into())
    }

    /// Hands a facility from one center to another: export, import, release.
    pub fn migrate(&self, facility: &str, from: &str, to: &str) -> Result<usize, FederationError> {
        let source = self.center(from)?;
        let target = self.center(to)?;
        let records = source.export_inventory(facility)?;
        let moved = target.import_inventory(facility, &records)?;
        source.release_facility(facility)?;
        Ok(moved)
    }

    pub fn update_url(&self, facility: &str, private_id: &str, url: Url) -> Result<(), FederationError> {
        let owner = self
            .owner_of(facility)
            .ok_or_else(|| CenterError::FacilityNotServed(facility.to_owned()))?;
        self.center(&owner)?.update_url(facility, private_id, url)?;
        Ok(())
    }

    /// Every record held anywhere, keyed by `(center, record)`.
    pub fn all_records(&self) -> Vec<(String, InventoryRecord)> {
        self.centers
            .iter()
            .flat_map(|(id, m)| m.center.all_records().into_iter().map(move |r| (id.clone(), r)))
            .collect()
    }

    /// Where each dataset lives right now, read straight from the inventories.
    pub fn truth(&self) -> BTreeMap<String, Url> {
        self.all_records()
            .into_iter()
            .map(|(_, r)| (r.identifier().dataset_key(), r.current_url))
            .collect()
    }

    // ------------------------------------------------ over the wire

    pub async fn http_verify(&self, identifier: &str) -> Result<VerificationResult, FederationError> {
        let url = format!("{}verify?id={}", self.services_url, encode(identifier));
        let resp = self.http.get(url).send().await.map_err(|e| FederationError::Http(e.to_string()))?;
        let bytes = resp.bytes().await.map_err(|e| FederationError::Http(e.to_string()))?;
        let mut results = results_from_xml(&bytes).map_err(FederationError::Http)?;
        results.pop().ok_or_else(|| FederationError::Http("empty verify response".into()))
    }

    pub async fn http_verify_batch(&self, identifiers: &[String]) -> Result<Vec<VerificationResult>, FederationError> {
        let url = format!("{}verify", self.services_url);
        let resp = self
            .http
            .post(url)
            .body(identifiers.join("\n"))
            .send()
            .await
            .map_err(|e| FederationError::Http(e.to_string()))?;
        if resp.status() != 200 {
            return Err(FederationError::Http(format!("batch verify returned {}", resp.status())));
        }
        let bytes = resp.bytes().await.map_err(|e| FederationError::Http(e.to_string()))?;
        results_from_xml(&bytes).map_err(FederationError::Http)
    }

    pub async fn http_get_link(&self, link: &Url) -> Result<LinkResponse, FederationError> {
        let resp = self
            .http
            .get(link.clone())
            .send()
            .await
            .map_err(|e| FederationError::Http(e.to_string()))?;
        let header = |n: &str| resp.headers().get(n).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let status = resp.status().as_u16();
        let location = header("location");
        let stale = header(STALE_HEADER).as_deref() == Some("true");
        let body = resp.text().await.map_err(|e| FederationError::Http(e.to_string()))?;
        Ok(LinkResponse {
            status,
            location,
            stale,
            body: body.trim_end().to_owned(),
        })
    }

    pub async fn http_resolve(&self, identifier: &str) -> Result<LinkResponse, FederationError> {
        let url = Url::parse(&format!("{}link?id={}", self.services_url, encode(identifier))).expect("loopback url");
        self.http_get_link(&url).await
    }

    pub async fn http_ingest(&self, source: &str, feed: &str) -> Result<String, FederationError> {
        let url = format!("{}feed?source={}", self.services_url, encode(source));
        let resp = self
            .http
            .put(url)
            .body(feed.to_owned())
            .send()
            .await
            .map_err(|e| FederationError::Http(e.to_string()))?;
        resp.text().await.map_err(|e| FederationError::Http(e.to_string()))
    }

    pub async fn http_harvest(&self, facility: Option<&str>, since: Option<&str>) -> Result<String, FederationError> {
        let mut url = format!("{}correlations?facility={}", self.services_url, encode(facility.unwrap_or("all")));
        if let Some(s) = since {
            url.push_str(&format!("&since={}", encode(s)));
        }
        let resp = self.http.get(url).send().await.map_err(|e| FederationError::Http(e.to_string()))?;
        resp.text().await.map_err(|e| FederationError::Http(e.to_string()))
    }

    pub async fn shutdown(mut self) {
        for mock in self.centers.values_mut() {
            if let Some(s) = mock.server.take() {
                s.stop().await;
            }
        }
        if let Some(s) = self.services.take() {
            s.stop().await;
        }
    }
}
