use std::hint::black_box;

use craftflow_bench::{sized, SIZES};
use craftflow_core::notation::{parse_cwn, parse_json, serialize_cwn, serialize_json};
use craftflow_core::transforms::{diff_workflows, export_dot, granularity_view};
use craftflow_core::validate::{validate, ValidationConfig};
use craftflow_core::GranularityLevel;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn notation(c: &mut Criterion) {
    let mut g = c.benchmark_group("notation");
    for n in SIZES {
        let w = sized(n, 1);
        let cwn = serialize_cwn(&w);
        let json = serialize_json(&w);
        g.bench_with_input(BenchmarkId::new("parse_cwn", n), &cwn, |b, t| b.iter(|| parse_cwn(black_box(t)).unwrap()));
        g.bench_with_input(BenchmarkId::new("parse_json", n), &json, |b, t| b.iter(|| parse_json(black_box(t)).unwrap()));
        g.bench_with_input(BenchmarkId::new("serialize_cwn", n), &w, |b, w| b.iter(|| serialize_cwn(black_box(w))));
        g.bench_with_input(BenchmarkId::new("serialize_json", n), &w, |b, w| b.iter(|| serialize_json(black_box(w))));
    }
    g.finish();
}

fn checks(c: &mut Criterion) {
    let mut g = c.benchmark_group("validate");
    let cfg = ValidationConfig::default();
    for n in SIZES {
        let w = sized(n, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| b.iter(|| validate(black_box(w), &cfg)));
    }
    g.finish();
}

fn views(c: &mut Criterion) {
    let mut g = c.benchmark_group("view");
    for n in SIZES {
        let w = sized(n, 3);
        g.bench_with_input(BenchmarkId::new("low", n), &w, |b, w| b.iter(|| granularity_view(black_box(w), GranularityLevel::Low)));
        if let Some(seg) = w.segments.first() {
            let v = granularity_view(&w, GranularityLevel::High);
            g.bench_with_input(BenchmarkId::new("collapse", n), &v, |b, v| b.iter(|| v.collapse_segment(black_box(&seg.id)).unwrap()));
        }
        g.bench_with_input(BenchmarkId::new("dot", n), &w, |b, w| b.iter(|| export_dot(black_box(w))));
    }
    g.finish();
}

fn diff(c: &mut Criterion) {
    let mut g = c.benchmark_group("diff");
    for n in SIZES {
        let (a, b) = (sized(n, 4), sized(n, 5));
        g.bench_with_input(BenchmarkId::from_parameter(n), &(a, b), |bench, (a, b)| {
            bench.iter(|| diff_workflows(black_box(a), black_box(b)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, notation, checks, views, diff);
criterion_main!(benches);
