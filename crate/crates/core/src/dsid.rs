//! Dataset identifiers of the form `ADS/FacilityId#PrivateId`.
//!
//! The facility names the instrument or mission that collected the data and
//! is the routing key. The private id belongs to whichever data center holds
//! the data and is passed to it verbatim.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The only managing authority accepted.
pub const AUTHORITY: &str = "ADS";

pub const MAX_FACILITY_LEN: usize = 32;
pub const MAX_PRIVATE_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    MissingAuthority,
    BadAuthority,
    MissingSeparator,
    EmptyFacility,
    BadFacilityChar,
    EmptyPrivateId,
    BadPrivateChar,
    TooLong,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::MissingAuthority => "MissingAuthority",
            ParseErrorKind::BadAuthority => "BadAuthority",
            ParseErrorKind::MissingSeparator => "MissingSeparator",
            ParseErrorKind::EmptyFacility => "EmptyFacility",
            ParseErrorKind::BadFacilityChar => "BadFacilityChar",
            ParseErrorKind::EmptyPrivateId => "EmptyPrivateId",
            ParseErrorKind::BadPrivateChar => "BadPrivateChar",
            ParseErrorKind::TooLong => "TooLong",
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First grammar rule an input violates, with the byte offset where it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
#[error("{kind} at byte {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

impl ParseError {
    fn at(kind: ParseErrorKind, position: usize) -> Self {
        Self { kind, position }
    }
}

pub fn is_facility_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')
}

/// Printable, non-whitespace ASCII other than `#`.
pub fn is_private_char(c: char) -> bool {
    c.is_ascii_graphic() && c != '#'
}

/// Checks a bare facility token against the character and length rules.
pub fn is_valid_facility(token: &str) -> bool {
    !token.is_empty() && token.len() <= MAX_FACILITY_LEN && token.chars().all(is_facility_char)
}

/// Case-folded routing key for a facility token.
pub fn normalize_facility(facility: &str) -> String {
    facility.to_ascii_lowercase()
}

/// A parsed dataset identifier. Construction always goes through the
/// grammar, so every value satisfies the component rules.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DatasetIdentifier {
    facility: String,
    private: String,
}

impl DatasetIdentifier {
    pub fn new(facility: &str, private_id: &str) -> Result<Self, ParseError> {
        parse(&format!("{AUTHORITY}/{facility}#{private_id}"))
    }

    pub fn authority(&self) -> &'static str {
        AUTHORITY
    }

    /// Facility as written, case preserved.
    pub fn facility_id(&self) -> &str {
        &self.facility
    }

    pub fn private_id(&self) -> &str {
        &self.private
    }

    /// Routing key: normalized facility.
    pub fn facility_key(&self) -> String {
        normalize_facility(&self.facility)
    }

    /// Identity used for caching and deduplication: two spellings that differ
    /// only in facility case name the same dataset.
    pub fn dataset_key(&self) -> String {
        format!("{AUTHORITY}/{}#{}", self.facility_key(), self.private)
    }
}

impl fmt::Display for DatasetIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{AUTHORITY}/{}#{}", self.facility, self.private)
    }
}

impl FromStr for DatasetIdentifier {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Parses `ADS/FacilityId#PrivateId`, reporting the first violated rule.
pub fn parse(input: &str) -> Result<DatasetIdentifier, ParseError> {
    use ParseErrorKind::*;

    let slash = match input.find('/') {
        Some(0) | None => return Err(ParseError::at(MissingAuthority, 0)),
        Some(i) => i,
    };
    if &input[..slash] != AUTHORITY {
        return Err(ParseError::at(BadAuthority, 0));
    }

    let fac_start = slash + 1;
    let mut hash = None;
    for (off, c) in input[fac_start..].char_indices() {
        let pos = fac_start + off;
        if c == '#' {
            hash = Some(pos);
            break;
        }
        if !is_facility_char(c) {
            return Err(ParseError::at(BadFacilityChar, pos));
        }
        if off >= MAX_FACILITY_LEN {
            return Err(ParseError::at(TooLong, pos));
        }
    }
    let hash = match hash {
        Some(h) => h,
        None if input.len() == fac_start => return Err(ParseError::at(EmptyFacility, fac_start)),
        None => return Err(ParseError::at(MissingSeparator, input.len())),
    };
    if hash == fac_start {
        return Err(ParseError::at(EmptyFacility, fac_start));
    }

    let priv_start = hash + 1;
    if priv_start == input.len() {
        return Err(ParseError::at(EmptyPrivateId, priv_start));
    }
    for (count, (off, c)) in input[priv_start..].char_indices().enumerate() {
        let pos = priv_start + off;
        if !is_private_char(c) {
            return Err(ParseError::at(BadPrivateChar, pos));
        }
        if count >= MAX_PRIVATE_LEN {
            return Err(ParseError::at(TooLong, pos));
        }
    }

    Ok(DatasetIdentifier {
        facility: input[fac_start..hash].to_owned(),
        private: input[priv_start..].to_owned(),
    })
}

pub fn format(id: &DatasetIdentifier) -> String {
    id.to_string()
}

/// `format(parse(s))`, the canonical spelling of an accepted identifier.
pub fn canonicalize(input: &str) -> Result<String, ParseError> {
    parse(input).map(|id| id.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(s: &str) -> (ParseErrorKind, usize) {
        let e = parse(s).unwrap_err();
        assert!(e.position <= s.len());
        (e.kind, e.position)
    }

    #[test]
    fn parses_private_id_with_slash() {
        let id = parse("ADS/Sa.CXO#obs/1234").unwrap();
        assert_eq!(id.authority(), "ADS");
        assert_eq!(id.facility_id(), "Sa.CXO");
        assert_eq!(id.private_id(), "obs/1234");
    }

    #[test]
    fn formats_by_concatenation() {
        let id = DatasetIdentifier::new("MAST", "hst.07442").unwrap();
        assert_eq!(format(&id), "ADS/MAST#hst.07442");
        let id = DatasetIdentifier::new("Sa.CXO", "obs/1234").unwrap();
        assert_eq!(format(&id), "ADS/Sa.CXO#obs/1234");
    }

    #[test]
    fn rejects_with_first_violation() {
        use ParseErrorKind::*;
        assert_eq!(err("ADS/MAST#"), (EmptyPrivateId, 9));
        assert_eq!(err("DOI/MAST#x"), (BadAuthority, 0));
        assert_eq!(err("ads/MAST#x"), (BadAuthority, 0));
        assert_eq!(err(""), (MissingAuthority, 0));
        assert_eq!(err("MAST#x"), (MissingAuthority, 0));
        assert_eq!(err("/MAST#x"), (MissingAuthority, 0));
        assert_eq!(err("ADS/"), (EmptyFacility, 4));
        assert_eq!(err("ADS/#x"), (EmptyFacility, 4));
        assert_eq!(err("ADS/MAST"), (MissingSeparator, 8));
        assert_eq!(err("ADS/MA ST#x"), (BadFacilityChar, 6));
        assert_eq!(err("ADS/a/b#x"), (BadFacilityChar, 5));
        assert_eq!(err("ADS/MAST#a#b"), (BadPrivateChar, 10));
        assert_eq!(err("ADS/MAST#a b"), (BadPrivateChar, 10));
        assert_eq!(err("ADS/MAST#\u{e9}"), (BadPrivateChar, 9));
    }

    #[test]
    fn length_bounds() {
        let fac32 = "f".repeat(32);
        assert!(parse(&format!("ADS/{fac32}#x")).is_ok());
        assert_eq!(err(&format!("ADS/{fac32}f#x")), (ParseErrorKind::TooLong, 36));
        let p128 = "p".repeat(128);
        assert!(parse(&format!("ADS/M#{p128}")).is_ok());
        assert_eq!(err(&format!("ADS/M#{p128}p")), (ParseErrorKind::TooLong, 6 + 128));
    }

    #[test]
    fn normalize_is_ascii_fold_and_idempotent() {
        assert_eq!(normalize_facility("Sa.CXO"), "sa.cxo");
        assert_eq!(normalize_facility("MAST"), "mast");
        assert_eq!(normalize_facility("mast"), "mast");
        let once = normalize_facility("HeaSARC-2");
        assert_eq!(normalize_facility(&once), once);
    }

    #[test]
    fn dataset_key_folds_facility_only() {
        let a = parse("ADS/MAST#Hst.1").unwrap();
        let b = parse("ADS/mast#Hst.1").unwrap();
        let c = parse("ADS/mast#hst.1").unwrap();
        assert_eq!(a.dataset_key(), b.dataset_key());
        assert_ne!(a.dataset_key(), c.dataset_key());
        assert_ne!(a, b);
    }
}
