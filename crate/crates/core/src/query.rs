//! Percent-encoding for query values and small XML helpers shared by the
//! wire formats.

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

/// Everything except RFC 3986 unreserved characters is encoded.
const QUERY_VALUE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn encode(value: &str) -> String {
    utf8_percent_encode(value, QUERY_VALUE).to_string()
}

/// Decodes a percent-encoded value. `+` is left alone: every encoder in this
/// crate writes `%2B`, and private ids may legitimately contain `+`.
pub fn decode(value: &str) -> Option<String> {
    percent_decode_str(value).decode_utf8().ok().map(|s| s.into_owned())
}

/// Splits a raw query string into decoded `(key, value)` pairs.
pub fn pairs(query: &str) -> Vec<(String, String)> {
    query
        .split('&')
        .filter(|p| !p.is_empty())
        .filter_map(|p| {
            let (k, v) = p.split_once('=').unwrap_or((p, ""));
            Some((decode(k)?, decode(v)?))
        })
        .collect()
}

pub fn get<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub(crate) fn xml_escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_separators() {
        assert_eq!(encode("ADS/MAST#hst.07442"), "ADS%2FMAST%23hst.07442");
        assert_eq!(encode("a+b&c=d e"), "a%2Bb%26c%3Dd%20e");
        assert_eq!(decode("a%2Bb+c").as_deref(), Some("a+b+c"));
    }

    #[test]
    fn splits_pairs() {
        let p = pairs("4&OpenURL=http%3A%2F%2Fx&Icon=");
        assert_eq!(get(&p, "4"), Some(""));
        assert_eq!(get(&p, "OpenURL"), Some("http://x"));
        assert_eq!(get(&p, "Icon"), Some(""));
        assert_eq!(get(&p, "icon"), None);
    }
}
