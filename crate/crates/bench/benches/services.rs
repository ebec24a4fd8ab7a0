use std::hint::black_box;

use chrono::{Duration, TimeZone, Utc};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use url::Url;

use dslink_bench::{identifiers, profiles};
use dslink_core::harness::{default_topology, Federation, FederationConfig};
use dslink_core::registry::{build_table, RoutingTable};

fn routing_table(c: &mut Criterion) {
    let now = Utc.with_ymd_and_hms(2006, 9, 1, 0, 0, 0).unwrap();
    let mut g = c.benchmark_group("build_table");
    for centers in [6, 60, 600] {
        let fetched: Vec<_> = profiles(centers, 4, now)
            .into_iter()
            .map(|p| (p.center_id.clone(), Ok(p)))
            .collect();
        g.bench_with_input(BenchmarkId::from_parameter(centers), &fetched, |b, fetched| {
            b.iter(|| build_table(&RoutingTable::default(), black_box(fetched.clone()), now, Duration::days(7)))
        });
    }
    g.finish();
}

fn resolution(c: &mut Criterion) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let fed = rt.block_on(async {
        let fed = Federation::start(&default_topology(), FederationConfig::default()).await.unwrap();
        for (i, id) in identifiers(300).iter().enumerate() {
            let parsed = dslink_core::dsid::parse(id).unwrap();
            if let Some(owner) = fed.owner_of(parsed.facility_id()) {
                let url = Url::parse(&format!("http://archive.example/{i}")).unwrap();
                fed.center(&owner).unwrap().insert(parsed.facility_id(), parsed.private_id(), url).unwrap();
            }
        }
        fed
    });
    let ids: Vec<String> = fed.truth().into_keys().collect();

    let mut g = c.benchmark_group("resolve");
    g.bench_function("cached", |b| {
        b.to_async(&rt).iter(|| async {
            for id in &ids {
                black_box(fed.resolver().resolve(id).await);
            }
        })
    });
    g.bench_function("uncached", |b| {
        b.to_async(&rt).iter(|| async {
            for id in ids.iter().take(20) {
                fed.resolver().invalidate(id);
                black_box(fed.resolver().resolve(id).await);
            }
        })
    });
    g.finish();
    rt.block_on(fed.shutdown());
}

criterion_group!(benches, routing_table, resolution);
criterion_main!(benches);
