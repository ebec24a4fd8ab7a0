use std::collections::BTreeMap;
use std::path::Path;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use url::Url;

use dslink_core::center::InventoryRecord;
use dslink_core::correlation::CorrelationStore;
use dslink_core::dsid::{canonicalize, format, normalize_facility, parse};
use dslink_core::manuscript::scan;
use dslink_core::openurl::{build_pref_link, parse_pref_link, resolve_icon, OpenUrlSettings};
use dslink_core::SimClock;

const FACILITY: &str = "[A-Za-z0-9._-]{1,32}";
const PRIVATE: &str = "[\x21\x22\x24-\x7E]{1,128}";

fn multiset(src: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for o in scan(src, Path::new("m.tex")).unwrap() {
        *m.entry(o.identifier_text).or_insert(0) += 1;
    }
    m
}

proptest! {
    #[test]
    fn normalize_is_idempotent(f in FACILITY) {
        let once = normalize_facility(&f);
        prop_assert_eq!(normalize_facility(&once), once.clone());
        prop_assert!(once.eq_ignore_ascii_case(&f));
    }

    #[test]
    fn facility_case_does_not_change_the_dataset_key(f in FACILITY, p in PRIVATE) {
        let a = parse(&format!("ADS/{}#{p}", f.to_ascii_uppercase())).unwrap();
        let b = parse(&format!("ADS/{}#{p}", f.to_ascii_lowercase())).unwrap();
        prop_assert_eq!(a.dataset_key(), b.dataset_key());
        prop_assert_eq!(canonicalize(&format(&a)).unwrap(), format(&a));
    }

    #[test]
    fn private_case_is_significant(f in FACILITY, p in "[a-z]{1,20}") {
        let a = parse(&format!("ADS/{f}#{p}")).unwrap();
        let b = parse(&format!("ADS/{f}#{}", p.to_ascii_uppercase())).unwrap();
        prop_assert_ne!(a.dataset_key(), b.dataset_key());
    }

    #[test]
    fn inventory_lines_round_trip(f in "[a-z0-9._-]{1,32}", p in PRIVATE, n in 0u32..100_000, t in 0i64..2_000_000_000) {
        let rec = InventoryRecord {
            facility_id: f,
            private_id: p,
            current_url: Url::parse(&format!("http://archive.example/d/{n}")).unwrap(),
            created_at: Utc.timestamp_opt(t, 0).unwrap(),
        };
        prop_assert_eq!(InventoryRecord::from_line(&rec.to_line()).unwrap(), rec);
    }

    #[test]
    fn pref_links_round_trip(
        host in "[a-z]{1,10}",
        path in "(/[a-z0-9~._-]{1,8}){0,3}",
        query in proptest::option::of("[a-zA-Z0-9&=+:/?@!$'()*,;._~-]{1,20}"),
        icon in proptest::option::of("[a-z]{1,8}\\.(gif|png)"),
    ) {
        let mut server = format!("http://{host}.example{path}");
        if let Some(q) = &query {
            server.push('?');
            server.push_str(q);
        }
        let server_url = Url::parse(&server).unwrap();
        let icon_url = icon.map(|i| resolve_icon(&server_url, &i).unwrap());
        let settings = OpenUrlSettings { server_url, icon_url };
        let link = build_pref_link(&settings, &Url::parse("http://ads.example/").unwrap());
        prop_assert_eq!(parse_pref_link(&link).unwrap(), settings);
    }

    #[test]
    fn relative_icons_land_under_the_server(host in "[a-z]{1,10}", dir in "[a-z]{1,8}", icon in "[a-z]{1,8}\\.gif") {
        let server = Url::parse(&format!("http://{host}.example/{dir}")).unwrap();
        let link = format!("http://ads.example/cgi-bin/pref_set?4&OpenURL={server}&Icon={icon}");
        let s = parse_pref_link(&link).unwrap();
        prop_assert_eq!(s.icon_url.unwrap().to_string(), format!("http://{host}.example/{dir}/{icon}"));
    }

    #[test]
    fn scanning_ignores_surrounding_prose(
        ids in proptest::collection::vec("ADS/[a-z]{1,6}#[a-z0-9]{1,8}", 0..6),
        prose in proptest::collection::vec("[A-Za-z ,.;:()$^=0-9\\n]{0,30}", 7),
    ) {
        let bare: String = ids.iter().map(|id| format!("\\dataset{{{id}}}\n")).collect();
        let mut padded = prose[0].clone();
        for (i, id) in ids.iter().enumerate() {
            padded.push_str(&format!(" \\dataset{{{id}}} "));
            padded.push_str(&prose[i + 1]);
        }
        prop_assert_eq!(multiset(&padded), multiset(&bare));
    }

    #[test]
    fn ingest_twice_equals_ingest_once(
        rows in proptest::collection::vec(("[0-9]{4}[A-Za-z.]{5}[0-9]{3}", "ADS/[a-z]{1,5}#[a-z0-9]{1,6}"), 0..40),
    ) {
        let feed: String = rows.iter().map(|(a, d)| format!("{a}\t{d}\n")).collect();
        let once = CorrelationStore::in_memory(SimClock::at_epoch());
        once.ingest_feed(feed.as_bytes(), "UCP").unwrap();
        let twice = CorrelationStore::in_memory(SimClock::at_epoch());
        twice.ingest_feed(feed.as_bytes(), "UCP").unwrap();
        let again = twice.ingest_feed(feed.as_bytes(), "UCP").unwrap();
        prop_assert_eq!(again.inserted, 0);
        prop_assert_eq!(once.harvest(None, None), twice.harvest(None, None));
        prop_assert_eq!(once.pairs(), twice.pairs());
    }
}
