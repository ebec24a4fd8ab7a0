//! Fixtures shared by the benchmarks.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use url::Url;

use dslink_core::DataCenterProfile;

/// `n` identifiers spread over a handful of facilities, with varied private ids.
pub fn identifiers(n: usize) -> Vec<String> {
    const FACILITIES: [&str; 6] = ["HST", "Chandra", "Spitzer", "2MASS", "XMM", "WMAP"];
    (0..n)
        .map(|i| format!("ADS/{}#obs{:05}/exp{}.fits", FACILITIES[i % FACILITIES.len()], i, i % 17))
        .collect()
}

/// A LaTeX document of roughly `paragraphs` paragraphs, one macro in each.
pub fn manuscript(paragraphs: usize) -> String {
    let mut s = String::from("\\documentclass{aastex}\n\\begin{document}\n");
    for (i, id) in identifiers(paragraphs).iter().enumerate() {
        s.push_str("We observed the target for 10\\,ks with \\emph{ACIS-S}; see Table~\\ref{t:obs}.\n");
        s.push_str(&format!("The reduced data are archived as \\dataset{{{id}}} (epoch {i}).\n"));
        s.push_str("% reviewer note: \\dataset{ADS/HST#draft} withdrawn\n\n");
    }
    s.push_str("\\end{document}\n");
    s
}

/// Profiles for `centers` centers holding `per_center` facilities each.
pub fn profiles(centers: usize, per_center: usize, fetched_at: DateTime<Utc>) -> Vec<DataCenterProfile> {
    (0..centers)
        .map(|c| {
            let base = Url::parse(&format!("http://center{c}.example/")).unwrap();
            DataCenterProfile {
                center_id: format!("C{c:03}"),
                display_name: format!("Center {c}"),
                verifier_url: base.join("verify").unwrap(),
                resolver_url: base.join("resolve").unwrap(),
                facilities: (0..per_center).map(|f| format!("f{c}-{f}")).collect::<BTreeSet<_>>(),
                fetched_at,
            }
        })
        .collect()
}
