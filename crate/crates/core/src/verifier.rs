//! Master verifier: parses an identifier, routes it to the center that holds
//! its facility, asks that center's local verifier, and on success mints the
//! permanent link, which always points at the link resolver.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;
use url::Url;

use crate::dsid::{self, DatasetIdentifier};
use crate::query::{encode, xml_escape};
use crate::registry::Registry;
use crate::remote::{CenterAnswer, RemoteClient};

pub const DEFAULT_BATCH_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerificationStatus {
    Valid,
    InvalidSyntax,
    UnknownFacility,
    NotFound,
    CenterUnavailable,
}

impl VerificationStatus {
    pub const ALL: [VerificationStatus; 5] = [
        VerificationStatus::Valid,
        VerificationStatus::InvalidSyntax,
        VerificationStatus::UnknownFacility,
        VerificationStatus::NotFound,
        VerificationStatus::CenterUnavailable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerificationStatus::Valid => "valid",
            VerificationStatus::InvalidSyntax => "invalid-syntax",
            VerificationStatus::UnknownFacility => "unknown-facility",
            VerificationStatus::NotFound => "not-found",
            VerificationStatus::CenterUnavailable => "center-unavailable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for VerificationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationResult {
    /// Exactly as submitted.
    pub identifier: String,
    pub status: VerificationStatus,
    /// Present iff `status == Valid`.
    pub permanent_link: Option<Url>,
    pub detail: String,
}

impl VerificationResult {
    fn failed(identifier: &str, status: VerificationStatus, detail: impl Into<String>) -> Self {
        Self {
            identifier: identifier.to_owned(),
            status,
            permanent_link: None,
            detail: detail.into(),
        }
    }

    /// `<result id="..." status="..." link="..."/>`, link only when valid.
    pub fn to_xml(&self) -> String {
        let mut s = format!(
            "<result id=\"{}\" status=\"{}\"",
            xml_escape(&self.identifier),
            self.status
        );
        if let Some(link) = &self.permanent_link {
            s.push_str(&format!(" link=\"{}\"", xml_escape(link.as_str())));
        }
        if !self.detail.is_empty() {
            s.push_str(&format!(" detail=\"{}\"", xml_escape(&self.detail)));
        }
        s.push_str("/>");
        s
    }
}

pub fn results_to_xml(results: &[VerificationResult]) -> String {
    let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<results>\n");
    for r in results {
        s.push_str("  ");
        s.push_str(&r.to_xml());
        s.push('\n');
    }
    s.push_str("</results>\n");
    s
}

/// Reads every `<result>` element from a single-result or batch response.
pub fn results_from_xml(body: &[u8]) -> Result<Vec<VerificationResult>, String> {
    use quick_xml::events::Event;
    let mut reader = quick_xml::Reader::from_reader(body);
    let mut buf = Vec::new();
    let mut out = Vec::new();
    loop {
        match reader.read_event_into(&mut buf).map_err(|e| e.to_string())? {
            Event::Start(e) | Event::Empty(e) if e.local_name().as_ref() == b"result" => {
                let (mut id, mut status, mut link, mut detail) = (None, None, None, String::new());
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| e.to_string())?;
                    let value = attr.unescape_value().map_err(|e| e.to_string())?.into_owned();
                    match attr.key.local_name().as_ref() {
                        b"id" => id = Some(value),
                        b"status" => status = Some(value),
                        b"link" => link = Some(value),
                        b"detail" => detail = value,
                        _ => {}
                    }
                }
                let status = status
                    .as_deref()
                    .and_then(VerificationStatus::parse)
                    .ok_or_else(|| format!("bad status {status:?}"))?;
                let permanent_link = link.map(|l| Url::parse(&l)).transpose().map_err(|e| e.to_string())?;
                if permanent_link.is_some() != (status == VerificationStatus::Valid) {
                    return Err("link attribute must be present exactly for valid results".into());
                }
                out.push(VerificationResult {
                    identifier: id.ok_or("result without id")?,
                    status,
                    permanent_link,
                    detail,
                });
            }
            Event::Eof => return Ok(out),
            _ => {}
        }
        buf.clear();
    }
}

/// `<resolver-base>/link?id=<percent-encoded canonical identifier>`.
pub fn make_permanent_link(resolver_base: &Url, id: &DatasetIdentifier) -> Url {
    let s = format!(
        "{}/link?id={}",
        resolver_base.as_str().trim_end_matches('/'),
        encode(&id.to_string())
    );
    Url::parse(&s).expect("resolver base url with a query stays valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("batch of {size} identifiers exceeds the cap of {cap}")]
pub struct BatchTooLarge {
    pub size: usize,
    pub cap: usize,
}

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub resolver_base_url: Url,
    pub batch_cap: usize,
}

pub struct MasterVerifier {
    registry: Arc<Registry>,
    client: RemoteClient,
    config: VerifierConfig,
}

impl MasterVerifier {
    pub fn new(registry: Arc<Registry>, client: RemoteClient, config: VerifierConfig) -> Self {
        Self { registry, client, config }
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    pub fn permanent_link(&self, id: &DatasetIdentifier) -> Url {
        make_permanent_link(&self.config.resolver_base_url, id)
    }

    pub async fn verify(&self, identifier: &str) -> VerificationResult {
        match dsid::parse(identifier) {
            Ok(id) => self.verify_parsed(identifier, &id).await,
            Err(e) => VerificationResult::failed(identifier, VerificationStatus::InvalidSyntax, e.to_string()),
        }
    }

    async fn verify_parsed(&self, submitted: &str, id: &DatasetIdentifier) -> VerificationResult {
        use VerificationStatus::*;
        let facility = id.facility_key();
        let profile = match self.registry.route(&facility) {
            Ok(p) => p,
            Err(e) => return VerificationResult::failed(submitted, UnknownFacility, e.to_string()),
        };
        match self.client.verify_local(&profile, &facility, id.private_id()).await {
            Ok(CenterAnswer::Found(_)) => VerificationResult {
                identifier: submitted.to_owned(),
                status: Valid,
                permanent_link: Some(self.permanent_link(id)),
                detail: format!("held by {}", profile.center_id),
            },
            Ok(CenterAnswer::NotFound) => {
                VerificationResult::failed(submitted, NotFound, format!("{} has no such dataset", profile.center_id))
            }
            Ok(CenterAnswer::FacilityNotServed) => VerificationResult::failed(
                submitted,
                UnknownFacility,
                format!("{} no longer serves facility `{facility}`", profile.center_id),
            ),
            Ok(CenterAnswer::BadRequest) => VerificationResult::failed(
                submitted,
                InvalidSyntax,
                format!("{} rejected the identifier", profile.center_id),
            ),
            Err(e) => VerificationResult::failed(submitted, CenterUnavailable, format!("{}: {e}", profile.center_id)),
        }
    }

    /// Verifies a manuscript's worth of identifiers. Each distinct dataset is
    /// asked about once; results line up with the input positions.
    pub async fn verify_batch(&self, identifiers: &[String]) -> Result<Vec<VerificationResult>, BatchTooLarge> {
        if identifiers.len() > self.config.batch_cap {
            return Err(BatchTooLarge {
                size: identifiers.len(),
                cap: self.config.batch_cap,
            });
        }
        let parsed: Vec<_> = identifiers.iter().map(|s| dsid::parse(s)).collect();

        let mut unique: HashMap<String, &DatasetIdentifier> = HashMap::new();
        for id in parsed.iter().flatten() {
            unique.entry(id.dataset_key()).or_insert(id);
        }
        let lookups = unique.into_iter().map(|(key, id)| async move {
            let result = self.verify_parsed(&id.to_string(), id).await;
            (key, result)
        });
        let answers: HashMap<String, VerificationResult> = futures::future::join_all(lookups).await.into_iter().collect();

        Ok(identifiers
            .iter()
            .zip(parsed)
            .map(|(submitted, parsed)| match parsed {
                Err(e) => VerificationResult::failed(submitted, VerificationStatus::InvalidSyntax, e.to_string()),
                Ok(id) => {
                    let shared = &answers[&id.dataset_key()];
                    VerificationResult {
                        identifier: submitted.clone(),
                        status: shared.status,
                        permanent_link: shared.permanent_link.as_ref().map(|_| self.permanent_link(&id)),
                        detail: shared.detail.clone(),
                    }
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permanent_link_shape() {
        let base = Url::parse("http://resolver.example").unwrap();
        let id = dsid::parse("ADS/MAST#hst.07442").unwrap();
        let link = make_permanent_link(&base, &id);
        assert_eq!(link.as_str(), "http://resolver.example/link?id=ADS%2FMAST%23hst.07442");
        assert_eq!(make_permanent_link(&base, &id), link);

        let base = Url::parse("http://ads.example/dsid/").unwrap();
        let id = dsid::parse("ADS/Sa.CXO#obs/12+34&x=1").unwrap();
        let link = make_permanent_link(&base, &id);
        assert_eq!(link.path(), "/dsid/link");
        let (_, value) = link.query().unwrap().split_once('=').unwrap();
        assert_eq!(dsid::parse(&crate::query::decode(value).unwrap()).unwrap(), id);
    }

    #[test]
    fn result_xml_round_trip() {
        let results = vec![
            VerificationResult {
                identifier: "ADS/MAST#a&b".into(),
                status: VerificationStatus::Valid,
                permanent_link: Some(Url::parse("http://r.example/link?id=ADS%2FMAST%23a%26b").unwrap()),
                detail: "held by MAST".into(),
            },
            VerificationResult::failed("bogus\"", VerificationStatus::InvalidSyntax, "MissingAuthority at byte 0"),
        ];
        let xml = results_to_xml(&results);
        assert!(xml.contains("<result id=\"ADS/MAST#a&amp;b\" status=\"valid\" link=\""));
        assert_eq!(results_from_xml(xml.as_bytes()).unwrap(), results);
        assert!(results_from_xml(b"<result id=\"x\" status=\"valid\"/>").is_err());
    }

    #[test]
    fn status_tokens_round_trip() {
        for s in VerificationStatus::ALL {
            assert_eq!(VerificationStatus::parse(s.as_str()), Some(s));
        }
    }
}
