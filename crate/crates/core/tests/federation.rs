use std::collections::BTreeSet;

use chrono::Duration;
use url::Url;

use dslink_core::harness::{default_topology, CenterSpec, Federation, FederationConfig};
use dslink_core::profile::{parse_profile, PROFILE_PATH};
use dslink_core::remote::{FACILITY_NOT_SERVED, STATUS_HEADER};
use dslink_core::{Clock, ResolutionOutcome, VerificationStatus};

fn u(s: &str) -> Url {
    Url::parse(s).unwrap()
}

async fn small() -> Federation {
    let specs = [
        CenterSpec::new("MAST", "Multimission Archive", &["hst", "fuse"]),
        CenterSpec::new("IRSA", "Infrared Science Archive", &["iras", "2mass"]),
    ];
    let fed = Federation::start(&specs, FederationConfig::default()).await.unwrap();
    let mast = fed.center("MAST").unwrap();
    mast.insert("hst", "u2ax0101t", u("http://stsci.example/u2ax0101t")).unwrap();
    mast.insert("fuse", "P1030101", u("http://stsci.example/P1030101")).unwrap();
    fed.center("IRSA").unwrap().insert("iras", "f12.5", u("http://irsa.example/f12.5")).unwrap();
    fed
}

#[tokio::test]
async fn batch_verification_queries_each_dataset_once() {
    let fed = small().await;
    let ids: Vec<String> = ["ADS/HST#u2ax0101t", "ADS/hst#u2ax0101t", "ADS/Hst#u2ax0101t", "ADS/iras#f12.5", "ADS/HST#u2ax0101t"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let results = fed.http_verify_batch(&ids).await.unwrap();
    assert_eq!(results.len(), 5);
    assert!(results.iter().all(|r| r.status == VerificationStatus::Valid));
    // Each result echoes what was submitted, in order.
    let echoed: Vec<&str> = results.iter().map(|r| r.identifier.as_str()).collect();
    assert_eq!(echoed, ids.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(fed.counters("MAST").unwrap().verify_count(), 1);
    assert_eq!(fed.counters("IRSA").unwrap().verify_count(), 1);
    fed.shutdown().await;
}

#[tokio::test]
async fn permanent_links_encode_the_identifier() {
    let fed = small().await;
    fed.center("MAST").unwrap().insert("hst", "a/b+c&d=e?f", u("http://stsci.example/odd")).unwrap();
    let r = fed.http_verify("ADS/HST#a/b+c&d=e?f").await.unwrap();
    assert_eq!(r.status, VerificationStatus::Valid);
    let link = r.permanent_link.unwrap();
    assert_eq!(
        link.as_str(),
        format!("{}link?id=ADS%2FHST%23a%2Fb%2Bc%26d%3De%3Ff", fed.services_url())
    );
    let resp = fed.http_get_link(&link).await.unwrap();
    assert_eq!(resp.location.as_deref(), Some("http://stsci.example/odd"));
    fed.shutdown().await;
}

#[tokio::test]
async fn oversize_batches_are_refused() {
    let config = FederationConfig {
        batch_cap: 3,
        ..FederationConfig::default()
    };
    let fed = Federation::start(&[CenterSpec::new("SSC", "Spitzer", &["spitzer"])], config).await.unwrap();
    let ids: Vec<String> = (0..4).map(|i| format!("ADS/spitzer#{i}")).collect();
    assert!(fed.http_verify_batch(&ids).await.is_err());
    assert_eq!(fed.http_verify_batch(&ids[..3]).await.unwrap().len(), 3);
    fed.shutdown().await;
}

#[tokio::test]
async fn resolver_cache_hits_expiry_and_invalidation() {
    let fed = small().await;
    let id = "ADS/HST#u2ax0101t";
    let hits = || fed.counters("MAST").unwrap().resolve_count();

    assert_eq!(fed.http_resolve(id).await.unwrap().status, 302);
    assert_eq!(fed.http_resolve(id).await.unwrap().status, 302);
    assert_eq!(hits(), 1);

    fed.resolver().invalidate(id);
    fed.http_resolve(id).await.unwrap();
    assert_eq!(hits(), 2);

    // A URL change is invisible until the entry expires.
    fed.update_url("hst", "u2ax0101t", u("http://mirror.example/u2ax0101t")).unwrap();
    let cached = fed.http_resolve(id).await.unwrap();
    assert_eq!(cached.location.as_deref(), Some("http://stsci.example/u2ax0101t"));
    fed.advance(Duration::seconds(3600)).await;
    let fresh = fed.http_resolve(id).await.unwrap();
    assert_eq!(fresh.location.as_deref(), Some("http://mirror.example/u2ax0101t"));
    assert_eq!(hits(), 3);
    fed.shutdown().await;
}

#[tokio::test]
async fn migration_switches_routing_after_refresh() {
    let fed = small().await;
    let id = "ADS/iras#f12.5";
    fed.http_resolve(id).await.unwrap();
    assert_eq!(fed.migrate("iras", "IRSA", "MAST").unwrap(), 1);
    assert_eq!(fed.owner_of("iras").as_deref(), Some("MAST"));

    // Until profiles are re-read, routing still points at IRSA, which now
    // disowns the facility; the cache entry is still fresh and bound to IRSA.
    assert_eq!(fed.registry().route("iras").unwrap().center_id, "IRSA");
    fed.refresh().await;
    assert_eq!(fed.registry().route("iras").unwrap().center_id, "MAST");

    // The cached IRSA entry no longer matches routing, so MAST is asked.
    let resp = fed.http_resolve(id).await.unwrap();
    assert_eq!(resp.location.as_deref(), Some("http://irsa.example/f12.5"));
    assert_eq!(fed.counters("MAST").unwrap().resolve_count(), 1);
    fed.shutdown().await;
}

#[tokio::test]
async fn facility_conflicts_go_to_the_freshest_profile() {
    let specs = [
        CenterSpec::new("IRSA", "Infrared Science Archive", &["iras"]),
        CenterSpec::new("HEASARC", "High Energy Archive", &["iras", "rosat"]),
    ];
    let mut fed = Federation::start(&specs, FederationConfig::default()).await.unwrap();
    // Same fetch time: the smaller center id wins.
    assert_eq!(fed.registry().route("iras").unwrap().center_id, "HEASARC");

    fed.kill("HEASARC").await.unwrap();
    fed.advance(Duration::hours(1)).await;
    let report = fed.refresh().await;
    assert_eq!(report.retained, vec!["HEASARC".to_string()]);
    assert_eq!(report.conflicts.len(), 1);
    assert_eq!(report.conflicts[0].winner, "IRSA");
    assert_eq!(fed.registry().route("iras").unwrap().center_id, "IRSA");
    assert_eq!(fed.registry().route("rosat").unwrap().center_id, "HEASARC");
    fed.shutdown().await;
}

#[tokio::test]
async fn center_endpoints_speak_the_wire_format() {
    let fed = small().await;
    let mast = fed.center("MAST").unwrap().base_url().clone();
    let http = reqwest::Client::builder()
        .redirect(reqwest::redirect::Policy::none())
        .no_proxy()
        .build()
        .unwrap();

    let profile = http.get(mast.join(PROFILE_PATH.trim_start_matches('/')).unwrap()).send().await.unwrap();
    let doc = profile.bytes().await.unwrap();
    let parsed = parse_profile(&doc, fed.clock().now()).unwrap();
    assert_eq!(parsed.center_id, "MAST");
    assert_eq!(parsed.facilities, BTreeSet::from(["fuse".to_string(), "hst".to_string()]));

    let r = http.get(mast.join("verify?facility=HST&private=u2ax0101t").unwrap()).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert!(r.text().await.unwrap().contains("status=\"valid\""));

    let r = http.get(mast.join("verify?facility=iras&private=x").unwrap()).send().await.unwrap();
    assert_eq!(r.status(), 404);
    assert_eq!(r.headers()[STATUS_HEADER], FACILITY_NOT_SERVED);

    let r = http.get(mast.join("resolve?facility=fuse&private=P1030101").unwrap()).send().await.unwrap();
    assert_eq!(r.status(), 302);
    assert_eq!(r.headers()["location"], "http://stsci.example/P1030101");

    let r = http.get(mast.join("verify?facility=hst").unwrap()).send().await.unwrap();
    assert_eq!(r.status(), 400);
    fed.shutdown().await;
}

#[tokio::test]
async fn correlation_endpoints_round_trip() {
    let fed = small().await;
    let report = fed
        .http_ingest("UCP", "2006ApJ...650..100S\tADS/HST#u2ax0101t\n2006ApJ...650..100S\tADS/iras#f12.5\nbad line\n")
        .await
        .unwrap();
    assert!(report.contains("inserted=\"2\""), "{report}");
    assert!(report.contains("<reject line=\"3\""), "{report}");

    assert_eq!(
        fed.http_harvest(Some("iras"), None).await.unwrap(),
        "2006ApJ...650..100S\tADS/iras#f12.5\n"
    );
    assert_eq!(fed.http_harvest(None, Some("2030-01-01T00:00:00Z")).await.unwrap(), "");
    assert_eq!(fed.correlations().lookup_dataset("ADS/HST#u2ax0101t").unwrap(), vec!["2006ApJ...650..100S"]);
    fed.shutdown().await;
}

#[tokio::test]
async fn default_topology_resolves_everything_seeded() {
    let fed = Federation::start(&default_topology(), FederationConfig::default()).await.unwrap();
    for spec in default_topology() {
        for f in &spec.facilities {
            fed.center(&spec.center_id)
                .unwrap()
                .insert(f, "seed-1", u(&format!("http://{}.example/{f}", spec.center_id.to_lowercase())))
                .unwrap();
        }
    }
    let truth = fed.truth();
    assert_eq!(truth.len(), 15);
    for (key, url) in &truth {
        match fed.resolver().resolve(key).await {
            ResolutionOutcome::Redirect { target, stale } => {
                assert_eq!(&target, url);
                assert!(!stale);
            }
            other => panic!("{key}: {other:?}"),
        }
    }
    fed.shutdown().await;
}
