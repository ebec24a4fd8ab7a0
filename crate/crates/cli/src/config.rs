//! TOML configuration for the `dslink serve` daemon.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration as StdDuration;

use chrono::Duration;
use serde::Deserialize;
use url::Url;

use dslink_core::registry::{CenterSource, DEFAULT_REFRESH_INTERVAL_S, DEFAULT_STALENESS_HORIZON_S};
use dslink_core::resolver::DEFAULT_CACHE_TTL_S;
use dslink_core::verifier::DEFAULT_BATCH_CAP;
use dslink_core::{RegistryConfig, ResolverConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterEntry {
    pub center_id: String,
    pub base_url: Url,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaemonConfig {
    pub listen: SocketAddr,
    /// Public base of the permanent links, e.g. `http://links.example.org/`.
    pub resolver_base_url: Url,
    /// Directory for the correlation snapshot and log; in memory when unset.
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub remote_timeout_ms: u64,
    #[serde(default = "default_batch_cap")]
    pub batch_cap: usize,
    #[serde(default = "default_cache_ttl_s")]
    pub cache_ttl_s: i64,
    #[serde(default = "default_true")]
    pub stale_serve: bool,
    #[serde(default = "default_refresh_interval_s")]
    pub refresh_interval_s: i64,
    #[serde(default = "default_staleness_horizon_s")]
    pub staleness_horizon_s: i64,
    #[serde(default)]
    pub centers: Vec<CenterEntry>,
}

fn default_timeout_ms() -> u64 {
    dslink_core::remote::DEFAULT_TIMEOUT.as_millis() as u64
}
fn default_batch_cap() -> usize {
    DEFAULT_BATCH_CAP
}
fn default_cache_ttl_s() -> i64 {
    DEFAULT_CACHE_TTL_S
}
fn default_true() -> bool {
    true
}
fn default_refresh_interval_s() -> i64 {
    DEFAULT_REFRESH_INTERVAL_S
}
fn default_staleness_horizon_s() -> i64 {
    DEFAULT_STALENESS_HORIZON_S
}

impl DaemonConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        if config.refresh_interval_s <= 0 {
            return Err("refresh_interval_s must be positive".into());
        }
        if config.cache_ttl_s < 0 {
            return Err("cache_ttl_s must not be negative".into());
        }
        if config.batch_cap == 0 {
            return Err("batch_cap must be positive".into());
        }
        Ok(config)
    }

    pub fn sources(&self) -> Vec<CenterSource> {
        self.centers
            .iter()
            .map(|c| CenterSource {
                center_id: c.center_id.clone(),
                base_url: c.base_url.clone(),
            })
            .collect()
    }

    pub fn registry(&self) -> RegistryConfig {
        RegistryConfig {
            refresh_interval: Duration::seconds(self.refresh_interval_s),
            staleness_horizon: Duration::seconds(self.staleness_horizon_s),
        }
    }

    pub fn resolver(&self) -> ResolverConfig {
        ResolverConfig {
            cache_ttl: Duration::seconds(self.cache_ttl_s),
            stale_serve: self.stale_serve,
        }
    }

    pub fn remote_timeout(&self) -> StdDuration {
        StdDuration::from_millis(self.remote_timeout_ms)
    }
}
