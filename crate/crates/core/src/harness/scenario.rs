//! Scenario files: one statement per line, `#` starts a comment.
//!
//! Declarations come first and set up the federation:
//!
//! ```text
//! seed 7
//! set cache_ttl_s 3600            # also refresh_interval_s, staleness_horizon_s,
//!                                 # remote_timeout_ms, batch_cap, stale_serve
//! topology default                # the six participating centers
//! center NAME fac1,fac2 [display name...]
//! dataset CENTER FACILITY PRIVATE URL
//! generate 60                     # synthetic datasets spread over all facilities
//! ```
//!
//! Events follow, optionally with an expectation after `=>`:
//!
//! ```text
//! publish                         # verify every seeded dataset, keep its permanent link
//! advance 2h | refresh | quiesce
//! update-url FACILITY PRIVATE URL | update-urls N
//! migrate FACILITY FROM TO
//! kill CENTER | revive CENTER
//! invalidate ID
//! resolve ID => redirect URL | redirect current | stale | not-found | ...
//! resolve-all [parallel] => current
//! verify ID => valid | not-found | center-unavailable | ...
//! verify-all [parallel] => valid
//! ingest SOURCE ARTICLE DATASET [DATASET...] => inserted N updated N rejected N
//! harvest FACILITY|all [since RFC3339] => lines N
//! ```

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use thiserror::Error;
use url::Url;

use crate::dsid::{is_valid_facility, normalize_facility};
use crate::harness::federation::{default_topology, CenterSpec};
use crate::verifier::VerificationStatus;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioInvalid {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededDataset {
    pub center: String,
    pub facility: String,
    pub private_id: String,
    pub url: Url,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolveExpectation {
    /// Fresh 302 to the URL the owning center holds right now.
    Current,
    Redirect(Url),
    /// 302 carrying the degraded-mode header.
    Stale,
    Status(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Resolve(ResolveExpectation),
    Verify(VerificationStatus),
    Ingest { inserted: usize, updated: usize, rejected: usize },
    Lines(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Publish,
    Advance(Duration),
    Refresh,
    Quiesce,
    UpdateUrl { facility: String, private_id: String, url: Url },
    UpdateUrls(usize),
    Migrate { facility: String, from: String, to: String },
    Kill(String),
    Revive(String),
    Invalidate(String),
    Resolve(String),
    ResolveAll { parallel: bool },
    Verify(String),
    VerifyAll { parallel: bool },
    Ingest { source: String, article: String, datasets: Vec<String> },
    Harvest { facility: Option<String>, since: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioEvent {
    pub line: usize,
    pub text: String,
    pub event: Event,
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Settings {
    pub cache_ttl_s: Option<i64>,
    pub refresh_interval_s: Option<i64>,
    pub staleness_horizon_s: Option<i64>,
    pub remote_timeout_ms: Option<u64>,
    pub batch_cap: Option<usize>,
    pub stale_serve: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub settings: Settings,
    pub centers: Vec<CenterSpec>,
    pub datasets: Vec<SeededDataset>,
    /// Synthetic datasets to generate at boot.
    pub generate: usize,
    pub events: Vec<ScenarioEvent>,
}

pub fn parse_duration(s: &str) -> Option<Duration> {
    let (num, unit) = match s.find(|c: char| !c.is_ascii_digit()) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, "s"),
    };
    let n: i64 = num.parse().ok()?;
    match unit {
        "s" => Some(Duration::seconds(n)),
        "m" => Some(Duration::minutes(n)),
        "h" => Some(Duration::hours(n)),
        "d" => Some(Duration::days(n)),
        _ => None,
    }
}

fn parse_expectation(event: &Event, raw: &str) -> Result<Expectation, String> {
    let words: Vec<&str> = raw.split_whitespace().collect();
    let status_token = |w: &str| -> Option<&'static str> {
        ["invalid-syntax", "unknown-facility", "not-found", "center-unavailable"]
            .into_iter()
            .find(|t| *t == w)
    };
    match event {
        Event::Resolve(_) | Event::ResolveAll { .. } => match words[..] {
            ["current"] | ["redirect", "current"] => Ok(Expectation::Resolve(ResolveExpectation::Current)),
            ["stale"] => Ok(Expectation::Resolve(ResolveExpectation::Stale)),
            ["redirect", url] if matches!(event, Event::Resolve(_)) => Url::parse(url)
                .map(|u| Expectation::Resolve(ResolveExpectation::Redirect(u)))
                .map_err(|e| format!("bad url: {e}")),
            [w] if status_token(w).is_some() => Ok(Expectation::Resolve(ResolveExpectation::Status(status_token(w).unwrap()))),
            _ => Err(format!("unknown resolve expectation `{raw}`")),
        },
        Event::Verify(_) | Event::VerifyAll { .. } => match words[..] {
            [w] => VerificationStatus::parse(w)
                .map(Expectation::Verify)
                .ok_or_else(|| format!("unknown verification status `{w}`")),
            _ => Err(format!("unknown verify expectation `{raw}`")),
        },
        Event::Ingest { .. } => match words[..] {
            ["inserted", i, "updated", u, "rejected", r] => {
                let n = |s: &str| s.parse::<usize>().map_err(|e| format!("bad count `{s}`: {e}"));
                Ok(Expectation::Ingest {
                    inserted: n(i)?,
                    updated: n(u)?,
                    rejected: n(r)?,
                })
            }
            _ => Err(format!("unknown ingest expectation `{raw}`")),
        },
        Event::Harvest { .. } => match words[..] {
            ["lines", n] => n.parse().map(Expectation::Lines).map_err(|e| format!("bad count: {e}")),
            _ => Err(format!("unknown harvest expectation `{raw}`")),
        },
        _ => Err("this event takes no expectation".into()),
    }
}

struct Builder {
    scenario: Scenario,
    /// facility -> center, tracked through migrations for validation.
    owners: BTreeMap<String, String>,
    seen_event: bool,
}

impl Builder {
    fn center_exists(&self, id: &str) -> bool {
        self.scenario.centers.iter().any(|c| c.center_id == id)
    }

    fn add_center(&mut self, spec: CenterSpec) -> Result<(), String> {
        if !is_valid_facility(&spec.center_id) {
            return Err(format!("invalid center id `{}`", spec.center_id));
        }
        if self.center_exists(&spec.center_id) {
            return Err(format!("center `{}` declared twice", spec.center_id));
        }
        for f in &spec.facilities {
            if !is_valid_facility(f) {
                return Err(format!("invalid facility `{f}`"));
            }
            let key = normalize_facility(f);
            if let Some(other) = self.owners.insert(key.clone(), spec.center_id.clone()) {
                return Err(format!("facility `{key}` already declared by `{other}`"));
            }
        }
        self.scenario.centers.push(spec);
        Ok(())
    }

    fn declaration(&mut self, keyword: &str, args: &[&str]) -> Result<(), String> {
        if self.seen_event {
            return Err(format!("`{keyword}` must come before the first event"));
        }
        match (keyword, args) {
            ("seed", [n]) => self.scenario.seed = n.parse().map_err(|e| format!("bad seed: {e}"))?,
            ("set", [key, value]) => {
                let s = &mut self.scenario.settings;
                let int = |v: &str| v.parse::<i64>().map_err(|e| format!("bad value `{v}`: {e}"));
                match *key {
                    "cache_ttl_s" => s.cache_ttl_s = Some(int(value)?),
                    "refresh_interval_s" => s.refresh_interval_s = Some(int(value)?),
                    "staleness_horizon_s" => s.staleness_horizon_s = Some(int(value)?),
                    "remote_timeout_ms" => s.remote_timeout_ms = Some(int(value)? as u64),
                    "batch_cap" => s.batch_cap = Some(int(value)? as usize),
                    "stale_serve" => s.stale_serve = Some(value.parse().map_err(|e| format!("bad bool: {e}"))?),
                    other => return Err(format!("unknown setting `{other}`")),
                }
            }
            ("topology", ["default"]) => {
                for spec in default_topology() {
                    self.add_center(spec)?;
                }
            }
            ("center", [id, facilities, ..]) => {
                let display = if args.len() > 2 { args[2..].join(" ") } else { id.to_string() };
                let spec = CenterSpec {
                    center_id: id.to_string(),
                    display_name: display,
                    facilities: facilities.split(',').filter(|f| !f.is_empty()).map(str::to_owned).collect(),
                };
                self.add_center(spec)?;
            }
            ("dataset", [center, facility, private_id, url]) => {
                let key = normalize_facility(facility);
                match self.owners.get(&key) {
                    Some(owner) if owner == center => {}
                    Some(owner) => return Err(format!("facility `{key}` belongs to `{owner}`, not `{center}`")),
                    None => return Err(format!("undeclared facility `{key}`")),
                }
                crate::dsid::DatasetIdentifier::new(facility, private_id).map_err(|e| e.to_string())?;
                self.scenario.datasets.push(SeededDataset {
                    center: center.to_string(),
                    facility: key,
                    private_id: private_id.to_string(),
                    url: Url::parse(url).map_err(|e| format!("bad url: {e}"))?,
                });
            }
            ("generate", [n]) => self.scenario.generate = n.parse().map_err(|e| format!("bad count: {e}"))?,
            _ => return Err(format!("malformed `{keyword}` declaration")),
        }
        Ok(())
    }

    fn event(&mut self, keyword: &str, args: &[&str]) -> Result<Event, String> {
        self.seen_event = true;
        let parallel = |args: &[&str]| match args {
            [] => Ok(false),
            ["parallel"] => Ok(true),
            _ => Err("expected nothing or `parallel`".to_string()),
        };
        let event = match (keyword, args) {
            ("publish", []) => Event::Publish,
            ("advance", [d]) => Event::Advance(parse_duration(d).ok_or_else(|| format!("bad duration `{d}`"))?),
            ("refresh", []) => Event::Refresh,
            ("quiesce", []) => Event::Quiesce,
            ("update-url", [facility, private_id, url]) => {
                let facility = normalize_facility(facility);
                if !self.owners.contains_key(&facility) {
                    return Err(format!("undeclared facility `{facility}`"));
                }
                Event::UpdateUrl {
                    facility,
                    private_id: private_id.to_string(),
                    url: Url::parse(url).map_err(|e| format!("bad url: {e}"))?,
                }
            }
            ("update-urls", [n]) => Event::UpdateUrls(n.parse().map_err(|e| format!("bad count: {e}"))?),
            ("migrate", [facility, from, to]) => {
                let facility = normalize_facility(facility);
                if !self.center_exists(to) {
                    return Err(format!("unknown center `{to}`"));
                }
                match self.owners.get(&facility) {
                    Some(owner) if owner == from => {}
                    Some(owner) => return Err(format!("facility `{facility}` is at `{owner}`, not `{from}`")),
                    None => return Err(format!("undeclared facility `{facility}`")),
                }
                if from == to {
                    return Err("migration source and target are the same center".into());
                }
                self.owners.insert(facility.clone(), to.to_string());
                Event::Migrate {
                    facility,
                    from: from.to_string(),
                    to: to.to_string(),
                }
            }
            ("kill", [c]) | ("revive", [c]) => {
                if !self.center_exists(c) {
                    return Err(format!("unknown center `{c}`"));
                }
                if keyword == "kill" {
                    Event::Kill(c.to_string())
                } else {
                    Event::Revive(c.to_string())
                }
            }
            ("invalidate", [id]) => Event::Invalidate(id.to_string()),
            ("resolve", [id]) => Event::Resolve(id.to_string()),
            ("resolve-all", rest) => Event::ResolveAll { parallel: parallel(rest)? },
            ("verify", [id]) => Event::Verify(id.to_string()),
            ("verify-all", rest) => Event::VerifyAll { parallel: parallel(rest)? },
            ("ingest", [source, article, datasets @ ..]) if !datasets.is_empty() => Event::Ingest {
                source: source.to_string(),
                article: article.to_string(),
                datasets: datasets.iter().map(|s| s.to_string()).collect(),
            },
            ("harvest", [facility]) | ("harvest", [facility, "since", _]) => {
                let since = args.get(2).map(|s| s.to_string());
                if let Some(s) = &since {
                    crate::clock::parse_timestamp(s).ok_or_else(|| format!("bad timestamp `{s}`"))?;
                }
                Event::Harvest {
                    facility: (*facility != "all").then(|| normalize_facility(facility)),
                    since,
                }
            }
            _ => return Err(format!("unknown or malformed statement `{keyword}`")),
        };
        Ok(event)
    }
}

const DECLARATIONS: [&str; 6] = ["seed", "set", "topology", "center", "dataset", "generate"];

/// Parses and validates a scenario. Every center and facility an event names
/// must be declared; migrations must start from the facility's current holder.
pub fn parse_scenario(name: &str, text: &str) -> Result<Scenario, ScenarioInvalid> {
    let mut b = Builder {
        scenario: Scenario {
            name: name.to_owned(),
            seed: 0,
            settings: Settings::default(),
            centers: Vec::new(),
            datasets: Vec::new(),
            generate: 0,
            events: Vec::new(),
        },
        owners: BTreeMap::new(),
        seen_event: false,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let invalid = |message: String| ScenarioInvalid { line, message };
        // `#` is also the identifier separator: only treat it as a comment
        // when it starts the line or follows whitespace.
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let (stmt, expect) = match content.split_once("=>") {
            Some((s, e)) => (s.trim(), Some(e.trim())),
            None => (content, None),
        };
        let words: Vec<&str> = stmt.split_whitespace().collect();
        let (keyword, args) = (words[0], &words[1..]);

        if DECLARATIONS.contains(&keyword) {
            if expect.is_some() {
                return Err(invalid("declarations take no expectation".into()));
            }
            b.declaration(keyword, args).map_err(invalid)?;
            continue;
        }
        let event = b.event(keyword, args).map_err(invalid)?;
        let expect = match expect {
            Some(e) => Some(parse_expectation(&event, e).map_err(invalid)?),
            None => None,
        };
        b.scenario.events.push(ScenarioEvent {
            line,
            text: stmt.to_owned(),
            event,
            expect,
        });
    }

    if b.scenario.centers.is_empty() {
        return Err(ScenarioInvalid {
            line: 0,
            message: "scenario declares no centers".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for d in &b.scenario.datasets {
        if !seen.insert((d.facility.clone(), d.private_id.clone())) {
            return Err(ScenarioInvalid {
                line: 0,
                message: format!("dataset {}#{} declared twice", d.facility, d.private_id),
            });
        }
    }
    Ok(b.scenario)
}

/// Text before a comment `#`, where a comment `#` is one at the start of the
/// line or preceded by whitespace.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}
