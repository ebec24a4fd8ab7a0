use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use dslink_bench::{identifiers, manuscript};
use dslink_core::dsid::{canonicalize, parse};
use dslink_core::manuscript::scan;

fn parsing(c: &mut Criterion) {
    let ids = identifiers(1000);
    let mut g = c.benchmark_group("dsid");
    g.throughput(Throughput::Elements(ids.len() as u64));
    g.bench_function("parse", |b| {
        b.iter(|| ids.iter().filter(|s| parse(black_box(s)).is_ok()).count())
    });
    g.bench_function("canonicalize", |b| {
        b.iter(|| ids.iter().map(|s| canonicalize(black_box(s)).unwrap().len()).sum::<usize>())
    });
    g.finish();
}

fn scanning(c: &mut Criterion) {
    let mut g = c.benchmark_group("scan");
    for paragraphs in [10, 100, 1000] {
        let doc = manuscript(paragraphs);
        g.throughput(Throughput::Bytes(doc.len() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(paragraphs), &doc, |b, doc| {
            b.iter(|| scan(black_box(doc), Path::new("paper.tex")).unwrap().len())
        });
    }
    g.finish();
}

criterion_group!(benches, parsing, scanning);
criterion_main!(benches);
