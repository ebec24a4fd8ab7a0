//! Routing from facility to data center, rebuilt from fetched profiles.
//!
//! Readers take an `Arc` snapshot of the current [`RoutingTable`] and keep it
//! for the whole request. A refresh builds a complete new table off to the
//! side and swaps it in with one pointer store, so no reader ever sees a
//! half-applied refresh.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;
use url::Url;

use crate::clock::SharedClock;
use crate::profile::{parse_profile, DataCenterProfile};
use crate::remote::RemoteClient;

pub const DEFAULT_REFRESH_INTERVAL_S: i64 = 6 * 3600;
pub const DEFAULT_STALENESS_HORIZON_S: i64 = 7 * 24 * 3600;

/// A configured center: its id and the base URL its profile lives under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterSource {
    pub center_id: String,
    pub base_url: Url,
}

#[derive(Debug, Clone, Copy)]
pub struct RegistryConfig {
    pub refresh_interval: Duration,
    pub staleness_horizon: Duration,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            refresh_interval: Duration::seconds(DEFAULT_REFRESH_INTERVAL_S),
            staleness_horizon: Duration::seconds(DEFAULT_STALENESS_HORIZON_S),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no data center serves facility `{0}`")]
pub struct UnknownFacility(pub String);

#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    version: u64,
    routes: BTreeMap<String, String>,
    centers: BTreeMap<String, Arc<DataCenterProfile>>,
}

impl RoutingTable {
    pub fn version(&self) -> u64 {
        self.version
    }

    /// `facility_key` must already be normalized.
    pub fn route(&self, facility_key: &str) -> Result<Arc<DataCenterProfile>, UnknownFacility> {
        self.routes
            .get(facility_key)
            .and_then(|c| self.centers.get(c))
            .cloned()
            .ok_or_else(|| UnknownFacility(facility_key.to_owned()))
    }

    pub fn center(&self, center_id: &str) -> Option<&Arc<DataCenterProfile>> {
        self.centers.get(center_id)
    }

    pub fn routes(&self) -> &BTreeMap<String, String> {
        &self.routes
    }

    pub fn centers(&self) -> impl Iterator<Item = &Arc<DataCenterProfile>> {
        self.centers.values()
    }
}

/// A facility claimed by more than one center during a refresh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacilityConflict {
    pub facility: String,
    pub winner: String,
    pub losers: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefreshReport {
    pub version: u64,
    pub fetched: Vec<String>,
    /// `(center_id, error)` for every source that could not be fetched or parsed.
    pub failures: Vec<(String, String)>,
    /// Failed centers still routed from their previous profile.
    pub retained: Vec<String>,
    /// Failed centers whose last profile is older than the staleness horizon.
    pub dropped: Vec<String>,
    pub conflicts: Vec<FacilityConflict>,
}

/// Builds the next table from this cycle's fetch results. Pure: all I/O has
/// already happened.
pub fn build_table(
    previous: &RoutingTable,
    results: Vec<(String, Result<DataCenterProfile, String>)>,
    now: DateTime<Utc>,
    staleness_horizon: Duration,
) -> (RoutingTable, RefreshReport) {
    let mut report = RefreshReport::default();
    let mut centers: BTreeMap<String, Arc<DataCenterProfile>> = BTreeMap::new();

    for (center_id, result) in results {
        match result {
            Ok(profile) => {
                report.fetched.push(center_id.clone());
                centers.insert(center_id, Arc::new(profile));
            }
            Err(error) => {
                match previous.centers.get(&center_id) {
                    Some(old) if now - old.fetched_at < staleness_horizon => {
                        report.retained.push(center_id.clone());
                        centers.insert(center_id.clone(), old.clone());
                    }
                    Some(_) => report.dropped.push(center_id.clone()),
                    None => {}
                }
                report.failures.push((center_id, error));
            }
        }
    }

    // Claimants per facility; the most recently fetched profile wins, ties go
    // to the lexicographically smallest center id.
    let mut claims: BTreeMap<&str, Vec<&DataCenterProfile>> = BTreeMap::new();
    for profile in centers.values() {
        for f in &profile.facilities {
            claims.entry(f.as_str()).or_default().push(profile);
        }
    }
    let mut routes = BTreeMap::new();
    for (facility, mut claimants) in claims {
        claimants.sort_by(|a, b| b.fetched_at.cmp(&a.fetched_at).then_with(|| a.center_id.cmp(&b.center_id)));
        let winner = claimants[0].center_id.clone();
        if claimants.len() > 1 {
            let losers: Vec<String> = claimants[1..].iter().map(|p| p.center_id.clone()).collect();
            tracing::warn!(facility, winner = %winner, ?losers, "facility claimed by several centers");
            report.conflicts.push(FacilityConflict {
                facility: facility.to_owned(),
                winner: winner.clone(),
                losers,
            });
        }
        routes.insert(facility.to_owned(), winner);
    }

    let table = RoutingTable {
        version: previous.version + 1,
        routes,
        centers,
    };
    report.version = table.version;
    (table, report)
}

pub struct Registry {
    table: RwLock<Arc<RoutingTable>>,
    sources: RwLock<Vec<CenterSource>>,
    config: RegistryConfig,
    clock: SharedClock,
    client: RemoteClient,
    last_refresh: Mutex<Option<DateTime<Utc>>>,
    // Serializes refresh cycles; readers never touch it.
    refresh_gate: tokio::sync::Mutex<()>,
}

impl Registry {
    pub fn new(sources: Vec<CenterSource>, config: RegistryConfig, clock: SharedClock, client: RemoteClient) -> Self {
        Self {
            table: RwLock::new(Arc::new(RoutingTable::default())),
            sources: RwLock::new(sources),
            config,
            clock,
            client,
            last_refresh: Mutex::new(None),
            refresh_gate: tokio::sync::Mutex::new(()),
        }
    }

    pub fn config(&self) -> RegistryConfig {
        self.config
    }

    pub fn snapshot(&self) -> Arc<RoutingTable> {
        self.table.read().clone()
    }

    pub fn route(&self, facility_key: &str) -> Result<Arc<DataCenterProfile>, UnknownFacility> {
        self.snapshot().route(facility_key)
    }

    pub fn sources(&self) -> Vec<CenterSource> {
        self.sources.read().clone()
    }

    pub fn set_sources(&self, sources: Vec<CenterSource>) {
        *self.sources.write() = sources;
    }

    /// One refresh cycle over the configured sources.
    pub async fn refresh(&self) -> RefreshReport {
        let _gate = self.refresh_gate.lock().await;
        let sources = self.sources();
        let fetches = sources.iter().map(|src| async move {
            let result = match self.client.fetch_profile(&src.base_url).await {
                Ok(body) => {
                    let now = self.clock.now();
                    parse_profile(&body, now).map_err(|e| e.to_string()).and_then(|p| {
                        if p.center_id == src.center_id {
                            Ok(p)
                        } else {
                            Err(format!("profile declares center `{}`", p.center_id))
                        }
                    })
                }
                Err(e) => Err(e.to_string()),
            };
            (src.center_id.clone(), result)
        });
        let results = futures::future::join_all(fetches).await;
        for (center, result) in &results {
            if let Err(e) = result {
                tracing::warn!(center, error = %e, "profile refresh failed");
            }
        }

        let now = self.clock.now();
        let previous = self.snapshot();
        let (table, report) = build_table(&previous, results, now, self.config.staleness_horizon);
        *self.table.write() = Arc::new(table);
        *self.last_refresh.lock() = Some(now);
        tracing::info!(version = report.version, fetched = report.fetched.len(), "routing table refreshed");
        report
    }

    pub fn refresh_due(&self) -> bool {
        match *self.last_refresh.lock() {
            None => true,
            Some(at) => self.clock.now() - at >= self.config.refresh_interval,
        }
    }

    /// Refreshes when the refresh interval has elapsed on the injected clock.
    pub async fn refresh_if_due(&self) -> Option<RefreshReport> {
        if self.refresh_due() {
            Some(self.refresh().await)
        } else {
            None
        }
    }

    /// Background refresher on wall-clock time, for the long-running service.
    pub fn spawn_refresher(self: Arc<Self>) -> tokio::task::JoinHandle<()> {
        let period = self
            .config
            .refresh_interval
            .to_std()
            .unwrap_or(std::time::Duration::from_secs(DEFAULT_REFRESH_INTERVAL_S as u64));
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(period);
            loop {
                ticker.tick().await;
                self.refresh().await;
            }
        })
    }
}
