//! Data-center profile documents.
//!
//! A profile is a small XML file a center publishes at a well-known path:
//!
//! ```xml
//! <datacenter id="MAST">
//!   <name>Multimission Archive at STScI</name>
//!   <verifier>http://archive.example/verify</verifier>
//!   <resolver>http://archive.example/resolve</resolver>
//!   <facility>hst</facility>
//! </datacenter>
//! ```
//!
//! Elements and attributes not listed here are skipped so that centers can
//! extend their documents without breaking older readers.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;
use url::Url;

use crate::dsid::{is_valid_facility, normalize_facility};
use crate::query::xml_escape;

/// Path of the profile document relative to a center's base URL.
pub const PROFILE_PATH: &str = "/.well-known/dsid-profile.xml";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataCenterProfile {
    pub center_id: String,
    pub display_name: String,
    pub verifier_url: Url,
    pub resolver_url: Url,
    /// Normalized facility tokens; never empty.
    pub facilities: BTreeSet<String>,
    pub fetched_at: DateTime<Utc>,
}

impl DataCenterProfile {
    pub fn serves(&self, facility_key: &str) -> bool {
        self.facilities.contains(facility_key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("malformed profile XML: {0}")]
    MalformedXml(String),
    #[error("profile is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("profile declares no facilities")]
    EmptyFacilities,
    #[error("profile field `{0}` is not an absolute http(s) URL")]
    BadUrl(&'static str),
    #[error("invalid facility token `{0}`")]
    BadFacility(String),
    #[error("invalid center id `{0}`")]
    BadCenterId(String),
}

/// Absolute http or https URL, the only kind a profile may point at.
pub fn parse_http_url(s: &str) -> Option<Url> {
    let url = Url::parse(s.trim()).ok()?;
    matches!(url.scheme(), "http" | "https").then_some(url)
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Name,
    Verifier,
    Resolver,
    Facility,
}

impl Field {
    fn from_tag(tag: &[u8]) -> Option<Self> {
        match tag {
            b"name" => Some(Field::Name),
            b"verifier" => Some(Field::Verifier),
            b"resolver" => Some(Field::Resolver),
            b"facility" => Some(Field::Facility),
            _ => None,
        }
    }
}

pub fn parse_profile(document: &[u8], fetched_at: DateTime<Utc>) -> Result<DataCenterProfile, ProfileError> {
    let malformed = |e: &dyn std::fmt::Display| ProfileError::MalformedXml(e.to_string());

    let mut reader = Reader::from_reader(document);
    reader.config_mut().trim_text(true);

    let mut buf = Vec::new();
    let mut depth = 0usize;
    let mut saw_root = false;
    let mut center_id = None;
    let mut name: Option<String> = None;
    let mut verifier: Option<String> = None;
    let mut resolver: Option<String> = None;
    let mut facilities: Vec<String> = Vec::new();
    // Field currently open at depth 2, with its accumulated text.
    let mut open: Option<(Field, String)> = None;

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| malformed(&e))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                let local = e.local_name();
                if depth == 0 {
                    if saw_root || local.as_ref() != b"datacenter" {
                        return Err(ProfileError::MalformedXml("root element must be <datacenter>".into()));
                    }
                    saw_root = true;
                    for attr in e.attributes() {
                        let attr = attr.map_err(|e| malformed(&e))?;
                        if attr.key.local_name().as_ref() == b"id" {
                            let v = attr.unescape_value().map_err(|e| malformed(&e))?;
                            center_id = Some(v.trim().to_owned());
                        }
                    }
                } else if depth == 1 {
                    if let Some(field) = Field::from_tag(local.as_ref()) {
                        if is_empty {
                            assign(field, String::new(), &mut name, &mut verifier, &mut resolver, &mut facilities);
                        } else {
                            open = Some((field, String::new()));
                        }
                    }
                }
                if !is_empty {
                    depth += 1;
                } else if depth == 0 {
                    // `<datacenter/>` with nothing inside.
                    break;
                }
            }
            Event::End(_) => {
                depth = depth.saturating_sub(1);
                if depth == 1 {
                    if let Some((field, text)) = open.take() {
                        assign(field, text, &mut name, &mut verifier, &mut resolver, &mut facilities);
                    }
                }
                if depth == 0 {
                    break;
                }
            }
            Event::Text(t) if depth == 2 => {
                if let Some((_, text)) = open.as_mut() {
                    text.push_str(&t.unescape().map_err(|e| malformed(&e))?);
                }
            }
            Event::CData(t) if depth == 2 => {
                if let Some((_, text)) = open.as_mut() {
                    text.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::Eof => {
                if depth > 0 {
                    return Err(ProfileError::MalformedXml("unexpected end of document".into()));
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }

    if !saw_root {
        return Err(ProfileError::MalformedXml("no root element".into()));
    }
    let center_id = center_id.ok_or(ProfileError::MissingField("id"))?;
    if !is_valid_facility(&center_id) {
        return Err(ProfileError::BadCenterId(center_id));
    }
    let display_name = name.ok_or(ProfileError::MissingField("name"))?;
    let verifier_url = parse_http_url(&verifier.ok_or(ProfileError::MissingField("verifier"))?)
        .ok_or(ProfileError::BadUrl("verifier"))?;
    let resolver_url = parse_http_url(&resolver.ok_or(ProfileError::MissingField("resolver"))?)
        .ok_or(ProfileError::BadUrl("resolver"))?;
    if facilities.is_empty() {
        return Err(ProfileError::EmptyFacilities);
    }
    let mut set = BTreeSet::new();
    for f in facilities {
        if !is_valid_facility(&f) {
            return Err(ProfileError::BadFacility(f));
        }
        set.insert(normalize_facility(&f));
    }

    Ok(DataCenterProfile {
        center_id,
        display_name,
        verifier_url,
        resolver_url,
        facilities: set,
        fetched_at,
    })
}

fn assign(
    field: Field,
    text: String,
    name: &mut Option<String>,
    verifier: &mut Option<String>,
    resolver: &mut Option<String>,
    facilities: &mut Vec<String>,
) {
    let text = text.trim().to_owned();
    match field {
        Field::Name => {
            name.get_or_insert(text);
        }
        Field::Verifier => {
            verifier.get_or_insert(text);
        }
        Field::Resolver => {
            resolver.get_or_insert(text);
        }
        Field::Facility => facilities.push(text),
    }
}

/// Serializes a profile. Output is deterministic: facilities in sorted
/// order, two-space indentation, trailing newline.
pub fn render_profile(
    center_id: &str,
    display_name: &str,
    verifier_url: &Url,
    resolver_url: &Url,
    facilities: &BTreeSet<String>,
) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!("<datacenter id=\"{}\">\n", xml_escape(center_id)));
    out.push_str(&format!("  <name>{}</name>\n", xml_escape(display_name)));
    out.push_str(&format!("  <verifier>{}</verifier>\n", xml_escape(verifier_url.as_str())));
    out.push_str(&format!("  <resolver>{}</resolver>\n", xml_escape(resolver_url.as_str())));
    for f in facilities {
        out.push_str(&format!("  <facility>{}</facility>\n", xml_escape(f)));
    }
    out.push_str("</datacenter>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> DateTime<Utc> {
        DateTime::from_timestamp(0, 0).unwrap()
    }

    const MAST: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<datacenter id="MAST">
  <name>Multimission Archive</name>
  <verifier>http://mast.example/verify</verifier>
  <resolver>http://mast.example/resolve</resolver>
  <facility>HST</facility>
  <facility>FUSE</facility>
</datacenter>
"#;

    #[test]
    fn parses_and_normalizes_facilities() {
        let p = parse_profile(MAST.as_bytes(), t0()).unwrap();
        assert_eq!(p.center_id, "MAST");
        assert_eq!(p.display_name, "Multimission Archive");
        assert_eq!(p.verifier_url.as_str(), "http://mast.example/verify");
        assert_eq!(p.facilities.iter().map(String::as_str).collect::<Vec<_>>(), ["fuse", "hst"]);
    }

    #[test]
    fn missing_verifier() {
        let doc = MAST.replace("  <verifier>http://mast.example/verify</verifier>\n", "");
        assert_eq!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::MissingField("verifier")));
    }

    #[test]
    fn zero_facilities() {
        let doc = MAST.replace("  <facility>HST</facility>\n  <facility>FUSE</facility>\n", "");
        assert_eq!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::EmptyFacilities));
    }

    #[test]
    fn bad_urls_and_tokens() {
        let doc = MAST.replace("http://mast.example/resolve", "/resolve");
        assert_eq!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::BadUrl("resolver")));
        let doc = MAST.replace("http://mast.example/verify", "ftp://mast.example/verify");
        assert_eq!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::BadUrl("verifier")));
        let doc = MAST.replace("<facility>HST</facility>", "<facility>H#ST</facility>");
        assert!(matches!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::BadFacility(_))));
        let doc = MAST.replace("id=\"MAST\"", "id=\"MA ST\"");
        assert!(matches!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::BadCenterId(_))));
        let doc = MAST.replace("id=\"MAST\"", "");
        assert_eq!(parse_profile(doc.as_bytes(), t0()), Err(ProfileError::MissingField("id")));
    }

    #[test]
    fn malformed() {
        assert!(matches!(parse_profile(b"<datacenter id=\"x\"><name>", t0()), Err(ProfileError::MalformedXml(_))));
        assert!(matches!(parse_profile(b"<profile/>", t0()), Err(ProfileError::MalformedXml(_))));
        assert!(matches!(parse_profile(b"", t0()), Err(ProfileError::MalformedXml(_))));
        assert!(matches!(parse_profile(b"<datacenter id='x'></wrong>", t0()), Err(ProfileError::MalformedXml(_))));
    }

    #[test]
    fn unknown_elements_are_ignored() {
        let doc = MAST.replace(
            "  <facility>HST</facility>",
            "  <contact email=\"a@b\"><facility>ignored</facility></contact>\n  <mirror/>\n  <facility>HST</facility>",
        );
        let p = parse_profile(doc.as_bytes(), t0()).unwrap();
        assert_eq!(p.facilities.len(), 2);
        assert!(!p.serves("ignored"));
    }

    #[test]
    fn render_round_trips() {
        let p = parse_profile(MAST.as_bytes(), t0()).unwrap();
        let doc = render_profile(&p.center_id, &p.display_name, &p.verifier_url, &p.resolver_url, &p.facilities);
        assert_eq!(parse_profile(doc.as_bytes(), t0()).unwrap(), p);
        let escaped = render_profile("X", "A & B <c>", &p.verifier_url, &p.resolver_url, &p.facilities);
        assert_eq!(parse_profile(escaped.as_bytes(), t0()).unwrap().display_name, "A & B <c>");
    }
}
