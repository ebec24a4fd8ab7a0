//! Library "OpenURL settings" links: a URL pointing at the preferences page
//! that pre-fills a library's OpenURL server and link icon.
//!
//! ```text
//! http://adsabs.harvard.edu/cgi-bin/pref_set?4&OpenURL=serverURL&Icon=iconURL
//! ```
//!
//! Parameter names are matched case-sensitively. An icon given without a
//! scheme is resolved relative to the server URL.

use thiserror::Error;
use url::Url;

use crate::query::{encode, get, pairs};

pub const PREF_SET_PATH: &str = "/cgi-bin/pref_set";
/// Opaque leading query token the preferences page expects.
pub const PAGE_TOKEN: &str = "4";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenUrlSettings {
    pub server_url: Url,
    pub icon_url: Option<Url>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefError {
    #[error("link has no `OpenURL` parameter")]
    MissingOpenURL,
    #[error("`OpenURL` value is not an absolute URL: {0}")]
    BadServerUrl(String),
    #[error("`Icon` value cannot be resolved: {0}")]
    BadIconResolution(String),
}

/// True when `s` starts with an RFC 3986 scheme followed by `:`.
fn has_scheme(s: &str) -> bool {
    let Some((scheme, _)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
}

/// Resolves an icon value: kept as-is when it has a scheme, otherwise
/// resolved against the server URL treated as a directory.
pub fn resolve_icon(server: &Url, icon: &str) -> Result<Url, PrefError> {
    if has_scheme(icon) {
        return Url::parse(icon).map_err(|e| PrefError::BadIconResolution(format!("{icon}: {e}")));
    }
    let mut base = server.clone();
    if !base.path().ends_with('/') {
        let dir = format!("{}/", base.path());
        base.set_path(&dir);
    }
    base.set_query(None);
    base.set_fragment(None);
    base.join(icon).map_err(|e| PrefError::BadIconResolution(format!("{icon}: {e}")))
}

pub fn parse_pref_link(link: &str) -> Result<OpenUrlSettings, PrefError> {
    let query = match link.split_once('?') {
        Some((_, q)) => q.split('#').next().unwrap_or(""),
        None => return Err(PrefError::MissingOpenURL),
    };
    let params = pairs(query);
    let server = get(&params, "OpenURL").ok_or(PrefError::MissingOpenURL)?;
    let server_url = Url::parse(server).map_err(|e| PrefError::BadServerUrl(format!("{server}: {e}")))?;
    if server_url.cannot_be_a_base() {
        return Err(PrefError::BadServerUrl(server.to_owned()));
    }
    let icon_url = match get(&params, "Icon") {
        Some(icon) if !icon.is_empty() => Some(resolve_icon(&server_url, icon)?),
        _ => None,
    };
    Ok(OpenUrlSettings { server_url, icon_url })
}

/// `<base>/cgi-bin/pref_set?4&OpenURL=...&Icon=...`, values percent-encoded
/// and `Icon` omitted when there is none.
pub fn build_pref_link(settings: &OpenUrlSettings, base: &Url) -> String {
    let mut s = format!(
        "{}{PREF_SET_PATH}?{PAGE_TOKEN}&OpenURL={}",
        base.as_str().trim_end_matches('/'),
        encode(settings.server_url.as_str())
    );
    if let Some(icon) = &settings.icon_url {
        s.push_str("&Icon=");
        s.push_str(&encode(icon.as_str()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[test]
    fn relative_icon_is_prepended_with_server() {
        let s = parse_pref_link("http://adsabs.harvard.edu/cgi-bin/pref_set?4&OpenURL=http://lib.example/open&Icon=btn.gif")
            .unwrap();
        assert_eq!(s.server_url, u("http://lib.example/open"));
        assert_eq!(s.icon_url, Some(u("http://lib.example/open/btn.gif")));
    }

    #[test]
    fn absolute_icon_kept() {
        let s = parse_pref_link("http://ads.example/cgi-bin/pref_set?4&OpenURL=http://lib.example/open&Icon=http://cdn.example/btn.gif")
            .unwrap();
        assert_eq!(s.icon_url, Some(u("http://cdn.example/btn.gif")));
    }

    #[test]
    fn parameter_names_are_case_sensitive() {
        assert_eq!(
            parse_pref_link("http://ads.example/cgi-bin/pref_set?4&openurl=http://lib.example/open"),
            Err(PrefError::MissingOpenURL)
        );
        let s = parse_pref_link("http://ads.example/cgi-bin/pref_set?4&OpenURL=http://lib.example/open&icon=x.gif&ICON=y.gif")
            .unwrap();
        assert_eq!(s.icon_url, None);
    }

    #[test]
    fn error_cases() {
        assert_eq!(parse_pref_link("http://ads.example/cgi-bin/pref_set"), Err(PrefError::MissingOpenURL));
        assert!(matches!(
            parse_pref_link("http://ads.example/x?OpenURL=not-a-url"),
            Err(PrefError::BadServerUrl(_))
        ));
        assert!(matches!(
            parse_pref_link("http://ads.example/x?OpenURL=mailto:lib@example.org"),
            Err(PrefError::BadServerUrl(_))
        ));
        assert!(matches!(
            parse_pref_link("http://ads.example/x?OpenURL=http://lib.example/&Icon=http://%zz"),
            Err(PrefError::BadIconResolution(_))
        ));
    }

    #[test]
    fn prepend_fires_only_without_scheme() {
        let server = u("http://lib.example/sfx?sid=ads");
        assert_eq!(resolve_icon(&server, "img/b.png").unwrap(), u("http://lib.example/sfx/img/b.png"));
        assert_eq!(resolve_icon(&server, "/b.png").unwrap(), u("http://lib.example/b.png"));
        assert_eq!(resolve_icon(&server, "//cdn.example/b.png").unwrap(), u("http://cdn.example/b.png"));
        assert_eq!(resolve_icon(&server, "https://x.example/b.png").unwrap(), u("https://x.example/b.png"));
        let slash = u("http://lib.example/open/");
        assert_eq!(resolve_icon(&slash, "b.gif").unwrap(), u("http://lib.example/open/b.gif"));
    }

    #[test]
    fn build_emits_verbatim_shape() {
        let settings = OpenUrlSettings {
            server_url: u("http://lib.example/open?a=1&b=2"),
            icon_url: None,
        };
        let link = build_pref_link(&settings, &u("http://adsabs.harvard.edu/"));
        assert_eq!(
            link,
            "http://adsabs.harvard.edu/cgi-bin/pref_set?4&OpenURL=http%3A%2F%2Flib.example%2Fopen%3Fa%3D1%26b%3D2"
        );
        assert_eq!(parse_pref_link(&link).unwrap(), settings);

        let with_icon = OpenUrlSettings {
            icon_url: Some(u("http://lib.example/i.gif")),
            ..settings
        };
        let link = build_pref_link(&with_icon, &u("http://adsabs.harvard.edu"));
        assert!(link.ends_with("&Icon=http%3A%2F%2Flib.example%2Fi.gif"));
        assert_eq!(parse_pref_link(&link).unwrap(), with_icon);
    }
}
