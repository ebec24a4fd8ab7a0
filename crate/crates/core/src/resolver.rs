//! Link resolver: the target of every published permanent link. Each request
//! is routed to whichever center holds the facility right now and answered
//! with a redirect to the URL that center reports.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use url::Url;

use crate::clock::SharedClock;
use crate::dsid;
use crate::registry::Registry;
use crate::remote::{CenterAnswer, RemoteClient};

pub const DEFAULT_CACHE_TTL_S: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolutionOutcome {
    /// `stale` marks a target served from an expired cache entry while the
    /// owning center was unreachable.
    Redirect { target: Url, stale: bool },
    InvalidSyntax,
    UnknownFacility,
    NotFound,
    CenterUnavailable,
}

impl ResolutionOutcome {
    pub fn target(&self) -> Option<&Url> {
        match self {
            ResolutionOutcome::Redirect { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ResolutionOutcome::Redirect { stale: false, .. } => "redirect",
            ResolutionOutcome::Redirect { stale: true, .. } => "redirect-stale",
            ResolutionOutcome::InvalidSyntax => "invalid-syntax",
            ResolutionOutcome::UnknownFacility => "unknown-facility",
            ResolutionOutcome::NotFound => "not-found",
            ResolutionOutcome::CenterUnavailable => "center-unavailable",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ResolutionOutcome::Redirect { .. } => 302,
            ResolutionOutcome::InvalidSyntax => 400,
            ResolutionOutcome::UnknownFacility | ResolutionOutcome::NotFound => 404,
            ResolutionOutcome::CenterUnavailable => 503,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionCacheEntry {
    pub identifier: String,
    pub target: Url,
    /// Center that reported the target; an entry is only usable while the
    /// registry still routes the facility there.
    pub center_id: String,
    pub cached_at: DateTime<Utc>,
    pub ttl: Duration,
}

impl ResolutionCacheEntry {
    pub fn is_fresh(&self, now: DateTime<Utc>) -> bool {
        now - self.cached_at < self.ttl
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResolverConfig {
    /// Zero disables caching altogether, stale serving included.
    pub cache_ttl: Duration,
    pub stale_serve: bool,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        Self {
            cache_ttl: Duration::seconds(DEFAULT_CACHE_TTL_S),
            stale_serve: true,
        }
    }
}

pub struct LinkResolver {
    registry: Arc<Registry>,
    client: RemoteClient,
    clock: SharedClock,
    config: ResolverConfig,
    cache: Mutex<HashMap<String, ResolutionCacheEntry>>,
}

impl LinkResolver {
    pub fn new(registry: Arc<Registry>, client: RemoteClient, clock: SharedClock, config: ResolverConfig) -> Self {
        Self {
            registry,
            client,
            clock,
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> ResolverConfig {
        self.config
    }

    fn caching(&self) -> bool {
        self.config.cache_ttl > Duration::zero()
    }

    pub async fn resolve(&self, identifier: &str) -> ResolutionOutcome {
        let Ok(id) = dsid::parse(identifier) else {
            return ResolutionOutcome::InvalidSyntax;
        };
        let key = id.dataset_key();
        let facility = id.facility_key();

        // Routing is a local lookup and runs even for cache hits, so a
        // facility the registry no longer routes is never answered from cache.
        let Ok(profile) = self.registry.route(&facility) else {
            return ResolutionOutcome::UnknownFacility;
        };

        let now = self.clock.now();
        let cached = self
            .cache
            .lock()
            .get(&key)
            .filter(|e| e.center_id == profile.center_id)
            .cloned();
        if let Some(entry) = &cached {
            if entry.is_fresh(now) {
                return ResolutionOutcome::Redirect {
                    target: entry.target.clone(),
                    stale: false,
                };
            }
        }

        match self.client.current_link(&profile, &facility, id.private_id()).await {
            Ok(CenterAnswer::Found(target)) => {
                if self.caching() {
                    self.cache.lock().insert(
                        key.clone(),
                        ResolutionCacheEntry {
                            identifier: key,
                            target: target.clone(),
                            center_id: profile.center_id.clone(),
                            cached_at: now,
                            ttl: self.config.cache_ttl,
                        },
                    );
                }
                ResolutionOutcome::Redirect { target, stale: false }
            }
            Ok(CenterAnswer::NotFound) => {
                self.cache.lock().remove(&key);
                ResolutionOutcome::NotFound
            }
            Ok(CenterAnswer::FacilityNotServed) => ResolutionOutcome::UnknownFacility,
            Ok(CenterAnswer::BadRequest) => ResolutionOutcome::InvalidSyntax,
            Err(e) => {
                tracing::warn!(center = %profile.center_id, error = %e, "current-link lookup failed");
                match cached {
                    Some(entry) if self.config.stale_serve => ResolutionOutcome::Redirect {
                        target: entry.target,
                        stale: true,
                    },
                    _ => ResolutionOutcome::CenterUnavailable,
                }
            }
        }
    }

    /// Drops any cache entry for the identifier; unparsable or uncached
    /// identifiers are a no-op.
    pub fn invalidate(&self, identifier: &str) {
        if let Ok(id) = dsid::parse(identifier) {
            self.cache.lock().remove(&id.dataset_key());
        }
    }

    pub fn cached_entry(&self, identifier: &str) -> Option<ResolutionCacheEntry> {
        let id = dsid::parse(identifier).ok()?;
        self.cache.lock().get(&id.dataset_key()).cloned()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_freshness_is_strict() {
        let t0 = DateTime::from_timestamp(0, 0).unwrap();
        let e = ResolutionCacheEntry {
            identifier: "ADS/m#x".into(),
            target: Url::parse("http://x/").unwrap(),
            center_id: "M".into(),
            cached_at: t0,
            ttl: Duration::seconds(10),
        };
        assert!(e.is_fresh(t0));
        assert!(e.is_fresh(t0 + Duration::seconds(9)));
        assert!(!e.is_fresh(t0 + Duration::seconds(10)));
        let zero = ResolutionCacheEntry { ttl: Duration::zero(), ..e };
        assert!(!zero.is_fresh(t0));
    }

    #[test]
    fn outcome_status_codes() {
        let r = ResolutionOutcome::Redirect {
            target: Url::parse("http://x/").unwrap(),
            stale: true,
        };
        assert_eq!(r.http_status(), 302);
        assert_eq!(r.label(), "redirect-stale");
        assert_eq!(ResolutionOutcome::InvalidSyntax.http_status(), 400);
        assert_eq!(ResolutionOutcome::NotFound.http_status(), 404);
        assert_eq!(ResolutionOutcome::UnknownFacility.http_status(), 404);
        assert_eq!(ResolutionOutcome::CenterUnavailable.http_status(), 503);
        assert!(ResolutionOutcome::NotFound.target().is_none());
    }
}
