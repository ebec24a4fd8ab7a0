//! Executes a parsed scenario against a live [`Federation`] and records a
//! deterministic trace. Ports never appear in the trace, so reports can be
//! compared byte for byte across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::Duration;
use futures::future::join_all;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use url::Url;

use crate::clock::{format_timestamp, Clock};
use crate::dsid::{parse, DatasetIdentifier};
use crate::harness::federation::{Federation, FederationConfig, FederationError, LinkResponse};
use crate::harness::scenario::{parse_scenario, Event, Expectation, ResolveExpectation, Scenario, ScenarioInvalid};
use crate::registry::RefreshReport;
use crate::verifier::VerificationStatus;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] ScenarioInvalid),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub name: String,
    pub trace: Vec<String>,
    pub expectations: usize,
    pub failures: usize,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario {}\n", self.name);
        for line in &self.trace {
            out.push_str(line);
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "result {} ({}/{} expectations met)",
            if self.passed() { "passed" } else { "failed" },
            self.expectations - self.failures,
            self.expectations
        );
        out
    }
}

pub fn federation_config(scenario: &Scenario) -> FederationConfig {
    let mut config = FederationConfig::default();
    let s = &scenario.settings;
    if let Some(v) = s.cache_ttl_s {
        config.resolver.cache_ttl = Duration::seconds(v);
    }
    if let Some(v) = s.stale_serve {
        config.resolver.stale_serve = v;
    }
    if let Some(v) = s.refresh_interval_s {
        config.registry.refresh_interval = Duration::seconds(v);
    }
    if let Some(v) = s.staleness_horizon_s {
        config.registry.staleness_horizon = Duration::seconds(v);
    }
    if let Some(v) = s.remote_timeout_ms {
        config.remote_timeout = std::time::Duration::from_millis(v);
    }
    if let Some(v) = s.batch_cap {
        config.batch_cap = v;
    }
    config
}

/// Parses, validates and runs scenario text.
pub async fn run_text(name: &str, text: &str) -> Result<ScenarioReport, RunError> {
    let scenario = parse_scenario(name, text)?;
    Ok(run(&scenario).await?)
}

pub async fn run(scenario: &Scenario) -> Result<ScenarioReport, FederationError> {
    let mut fed = Federation::start(&scenario.centers, federation_config(scenario)).await?;
    let outcome = match Runner::new(scenario).seed(&fed) {
        Ok(runner) => runner.run_events(&mut fed).await,
        Err(e) => Err(e),
    };
    fed.shutdown().await;
    outcome
}

struct Runner<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
    report: ScenarioReport,
    /// dataset key -> (identifier as published, permanent link)
    published: BTreeMap<String, (String, Url)>,
    url_generation: usize,
}

fn refresh_summary(r: &RefreshReport) -> String {
    let mut s = format!("table v{} fetched {}", r.version, r.fetched.len());
    if !r.failures.is_empty() {
        let ids: Vec<&str> = r.failures.iter().map(|(c, _)| c.as_str()).collect();
        let _ = write!(s, " failed [{}]", ids.join(","));
    }
    if !r.retained.is_empty() {
        let _ = write!(s, " retained [{}]", r.retained.join(","));
    }
    if !r.dropped.is_empty() {
        let _ = write!(s, " dropped [{}]", r.dropped.join(","));
    }
    if !r.conflicts.is_empty() {
        let f: Vec<&str> = r.conflicts.iter().map(|c| c.facility.as_str()).collect();
        let _ = write!(s, " conflicts [{}]", f.join(","));
    }
    s
}

fn describe(resp: &LinkResponse) -> String {
    match (&resp.location, resp.status) {
        (Some(loc), 302) if resp.stale => format!("302 {loc} stale"),
        (Some(loc), status) => format!("{status} {loc}"),
        (None, status) => format!("{status} {}", resp.body),
    }
}

fn link_matches(resp: &LinkResponse, expect: &ResolveExpectation, truth: Option<&Url>) -> bool {
    match expect {
        ResolveExpectation::Current => {
            resp.status == 302 && !resp.stale && truth.is_some_and(|t| resp.location.as_deref() == Some(t.as_str()))
        }
        ResolveExpectation::Redirect(url) => resp.status == 302 && resp.location.as_deref() == Some(url.as_str()),
        ResolveExpectation::Stale => resp.status == 302 && resp.stale,
        ResolveExpectation::Status(label) => resp.status != 302 && resp.body == *label,
    }
}

fn expectation_text(e: &Expectation) -> String {
    match e {
        Expectation::Resolve(ResolveExpectation::Current) => "current".into(),
        Expectation::Resolve(ResolveExpectation::Redirect(u)) => format!("redirect {u}"),
        Expectation::Resolve(ResolveExpectation::Stale) => "stale".into(),
        Expectation::Resolve(ResolveExpectation::Status(s)) => (*s).into(),
        Expectation::Verify(s) => s.as_str().into(),
        Expectation::Ingest {
            inserted,
            updated,
            rejected,
        } => format!("inserted {inserted} updated {updated} rejected {rejected}"),
        Expectation::Lines(n) => format!("lines {n}"),
    }
}

fn xml_count(xml: &str, attr: &str) -> Option<usize> {
    let needle = format!("{attr}=\"");
    let start = xml.find(&needle)? + needle.len();
    let end = start + xml[start..].find('"')?;
    xml[start..end].parse().ok()
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            report: ScenarioReport {
                name: scenario.name.clone(),
                trace: Vec::new(),
                expectations: 0,
                failures: 0,
            },
            published: BTreeMap::new(),
            url_generation: 0,
        }
    }

    /// Loads declared datasets and generates the synthetic ones.
    fn seed(mut self, fed: &Federation) -> Result<Self, FederationError> {
        for d in &self.scenario.datasets {
            fed.center(&d.center)?.insert(&d.facility, &d.private_id, d.url.clone())?;
        }
        let mut facilities: Vec<(String, String)> = self
            .scenario
            .centers
            .iter()
            .flat_map(|c| c.facilities.iter().map(move |f| (crate::dsid::normalize_facility(f), c.center_id.clone())))
            .collect();
        facilities.sort();
        for i in 0..self.scenario.generate {
            let (facility, center) = &facilities[i % facilities.len()];
            let private_id = format!("obs{i:04}.{:04x}", self.rng.random_range(0..0x10000u32));
            let url = Url::parse(&format!(
                "http://data.{}.example/{facility}/{private_id}",
                center.to_ascii_lowercase()
            ))
            .expect("generated url");
            fed.center(center)?.insert(facility, &private_id, url)?;
        }
        self.report.trace.push(format!(
            "seeded {} dataset(s) across {} center(s)",
            fed.all_records().len(),
            self.scenario.centers.len()
        ));
        Ok(self)
    }

    fn check(&mut self, line: usize, text: &str, observed: String, expect: Option<&Expectation>, ok: bool) {
        let mut entry = format!("{line:>4}  {text} -> {observed}");
        if let Some(e) = expect {
            self.report.expectations += 1;
            if ok {
                entry.push_str("  [ok]");
            } else {
                self.report.failures += 1;
                let _ = write!(entry, "  [FAIL: expected {}]", expectation_text(e));
            }
        }
        self.report.trace.push(entry);
    }

    /// Every dataset to sweep: the published links, or all inventory records
    /// when nothing has been published yet.
    fn sweep_targets(&self, fed: &Federation) -> Vec<(String, String, Url)> {
        if !self.published.is_empty() {
            return self
                .published
                .iter()
                .map(|(k, (id, link))| (k.clone(), id.clone(), link.clone()))
                .collect();
        }
        let mut out: Vec<_> = fed
            .all_records()
            .into_iter()
            .map(|(_, r)| {
                let id = r.identifier();
                (id.dataset_key(), id.to_string(), fed.permanent_link(&id))
            })
            .collect();
        out.sort();
        out
    }

    async fn verify_sweep(&self, fed: &Federation, parallel: bool) -> Result<Vec<(String, VerificationStatus, Option<Url>)>, FederationError> {
        let ids: Vec<String> = self.sweep_targets(fed).into_iter().map(|(_, id, _)| id).collect();
        let results = if parallel {
            join_all(ids.iter().map(|id| fed.http_verify(id)))
                .await
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?
        } else {
            let mut all = Vec::with_capacity(ids.len());
            for chunk in ids.chunks(fed.config().batch_cap.max(1)) {
                all.extend(fed.http_verify_batch(chunk).await?);
            }
            all
        };
        Ok(results
            .into_iter()
            .map(|r| (r.identifier, r.status, r.permanent_link))
            .collect())
    }

    async fn run_events(mut self, fed: &mut Federation) -> Result<ScenarioReport, FederationError> {
        let scenario = self.scenario;
        for ev in &scenario.events {
            let expect = ev.expect.as_ref();
            let text = ev.text.as_str();
            match &ev.event {
                Event::Publish => {
                    let results = self.verify_sweep(fed, false).await?;
                    let total = results.len();
                    let mut valid = 0;
                    for (id, status, link) in results {
                        if let (VerificationStatus::Valid, Some(link), Ok(parsed)) = (status, link, parse(&id)) {
                            valid += 1;
                            self.published.insert(parsed.dataset_key(), (id, link));
                        }
                    }
                    self.report.expectations += 1;
                    let mut entry = format!("{:>4}  {text} -> {valid}/{total} valid, links issued", ev.line);
                    if valid != total {
                        self.report.failures += 1;
                        entry.push_str("  [FAIL: expected all valid]");
                    }
                    self.report.trace.push(entry);
                }
                Event::Advance(by) => {
                    let refreshed = fed.advance(*by).await;
                    let mut observed = format!("now {}", format_timestamp(fed.clock().now()));
                    if let Some(r) = refreshed {
                        let _ = write!(observed, ", {}", refresh_summary(&r));
                    }
                    self.check(ev.line, text, observed, None, true);
                }
                Event::Refresh => {
                    let r = fed.refresh().await;
                    self.check(ev.line, text, refresh_summary(&r), None, true);
                }
                Event::Quiesce => {
                    let r = fed.quiesce().await;
                    let observed = format!("now {}, {}", format_timestamp(fed.clock().now()), refresh_summary(&r));
                    self.check(ev.line, text, observed, None, true);
                }
                Event::UpdateUrl {
                    facility,
                    private_id,
                    url,
                } => {
                    let observed = match fed.update_url(facility, private_id, url.clone()) {
                        Ok(()) => "updated".to_owned(),
                        Err(e) => format!("error: {e}"),
                    };
                    self.check(ev.line, text, observed, None, true);
                }
                Event::UpdateUrls(n) => {
                    let mut records: Vec<_> = fed.all_records().into_iter().map(|(_, r)| r).collect();
                    records.sort_by(|a, b| (&a.facility_id, &a.private_id).cmp(&(&b.facility_id, &b.private_id)));
                    let picks = rand::seq::index::sample(&mut self.rng, records.len(), (*n).min(records.len()));
                    let mut touched = Vec::new();
                    for i in picks {
                        let r = &records[i];
                        self.url_generation += 1;
                        let url = Url::parse(&format!(
                            "http://mirror{}.example/{}/{}",
                            self.url_generation, r.facility_id, r.private_id
                        ))
                        .expect("generated url");
                        fed.update_url(&r.facility_id, &r.private_id, url)?;
                        touched.push(r.identifier().to_string());
                    }
                    self.check(ev.line, text, format!("updated {}", touched.join(" ")), None, true);
                }
                Event::Migrate { facility, from, to } => {
                    let moved = fed.migrate(facility, from, to)?;
                    self.check(ev.line, text, format!("moved {moved} record(s)"), None, true);
                }
                Event::Kill(c) => {
                    fed.kill(c).await?;
                    self.check(ev.line, text, "down".into(), None, true);
                }
                Event::Revive(c) => {
                    fed.revive(c).await?;
                    self.check(ev.line, text, "up".into(), None, true);
                }
                Event::Invalidate(id) => {
                    fed.resolver().invalidate(id);
                    self.check(ev.line, text, format!("{} cached", fed.resolver().cache_len()), None, true);
                }
                Event::Resolve(id) => {
                    let resp = fed.http_resolve(id).await?;
                    let truth = parse(id).ok().and_then(|p: DatasetIdentifier| fed.truth().get(&p.dataset_key()).cloned());
                    let ok = match expect {
                        Some(Expectation::Resolve(e)) => link_matches(&resp, e, truth.as_ref()),
                        _ => true,
                    };
                    self.check(ev.line, text, describe(&resp), expect, ok);
                }
                Event::ResolveAll { parallel } => {
                    let targets = self.sweep_targets(fed);
                    let responses: Vec<LinkResponse> = if *parallel {
                        join_all(targets.iter().map(|(_, _, link)| fed.http_get_link(link)))
                            .await
                            .into_iter()
                            .collect::<Result<_, _>>()?
                    } else {
                        let mut v = Vec::with_capacity(targets.len());
                        for (_, _, link) in &targets {
                            v.push(fed.http_get_link(link).await?);
                        }
                        v
                    };
                    let truth = fed.truth();
                    let mut matched = 0;
                    let mut misses = Vec::new();
                    for ((key, id, _), resp) in targets.iter().zip(&responses) {
                        let ok = match expect {
                            Some(Expectation::Resolve(e)) => link_matches(resp, e, truth.get(key)),
                            _ => true,
                        };
                        if ok {
                            matched += 1;
                        } else if misses.len() < 5 {
                            misses.push(format!("{id}: {}", describe(resp)));
                        }
                    }
                    let mut observed = format!("{matched}/{} as expected", targets.len());
                    if !misses.is_empty() {
                        let _ = write!(observed, " (first misses: {})", misses.join("; "));
                    }
                    let ok = matched == targets.len();
                    self.check(ev.line, text, observed, expect, ok);
                }
                Event::Verify(id) => {
                    let r = fed.http_verify(id).await?;
                    let ok = match expect {
                        Some(Expectation::Verify(s)) => r.status == *s,
                        _ => true,
                    };
                    self.check(ev.line, text, r.status.as_str().to_owned(), expect, ok);
                }
                Event::VerifyAll { parallel } => {
                    let results = self.verify_sweep(fed, *parallel).await?;
                    let want = match expect {
                        Some(Expectation::Verify(s)) => Some(*s),
                        _ => None,
                    };
                    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
                    for (_, status, _) in &results {
                        *counts.entry(status.as_str()).or_default() += 1;
                    }
                    let observed = counts
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect::<Vec<_>>()
                        .join(" ");
                    let ok = want.is_none_or(|w| results.iter().all(|(_, s, _)| *s == w));
                    self.check(ev.line, text, observed, expect, ok);
                }
                Event::Ingest {
                    source,
                    article,
                    datasets,
                } => {
                    let feed: String = datasets.iter().map(|d| format!("{article}\t{d}\n")).collect();
                    let xml = fed.http_ingest(source, &feed).await?;
                    let counts = (
                        xml_count(&xml, "inserted"),
                        xml_count(&xml, "updated"),
                        xml_count(&xml, "rejected"),
                    );
                    let observed = match counts {
                        (Some(i), Some(u), Some(r)) => format!("inserted {i} updated {u} rejected {r}"),
                        _ => format!("error: {}", xml.trim()),
                    };
                    let ok = match expect {
                        Some(Expectation::Ingest {
                            inserted,
                            updated,
                            rejected,
                        }) => counts == (Some(*inserted), Some(*updated), Some(*rejected)),
                        _ => true,
                    };
                    self.check(ev.line, text, observed, expect, ok);
                }
                Event::Harvest { facility, since } => {
                    let body = fed.http_harvest(facility.as_deref(), since.as_deref()).await?;
                    let n = body.lines().count();
                    let ok = match expect {
                        Some(Expectation::Lines(want)) => n == *want,
                        _ => true,
                    };
                    self.check(ev.line, text, format!("{n} line(s)"), expect, ok);
                }
            }
        }
        Ok(self.report)
    }
}
