use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gffperc::coarse::d3::coarse_grain_d3;
use gffperc::coarse::paths::{random_crossing_path, PathStyle};
use gffperc::excursion::{label_clusters, one_arm};
use gffperc::field::DirichletSampler;
use gffperc::lattice::{Adjacency, Point};
use gffperc::potential::{capacity_free, line_capacity_fast};
use gffperc::rng::stream;
use gffperc::{CgParams, GreenOracle, LambdaKind};
use gffperc_bench::{ball, segment};

fn green(c: &mut Criterion) {
    let mut g = c.benchmark_group("green");
    g.bench_function("oracle_cold_d3", |b| {
        b.iter_with_setup(|| GreenOracle::new(3).unwrap(), |o| black_box(o.value(&Point::new(&[7, 3, 2])).unwrap()))
    });
    let o = GreenOracle::new(3).unwrap();
    g.bench_function("table_d3_16", |b| b.iter(|| black_box(o.table(&[16, 16, 16]).unwrap())));
    g.finish();
}

fn capacity(c: &mut Criterion) {
    let o = GreenOracle::new(3).unwrap();
    let mut g = c.benchmark_group("capacity");
    g.sample_size(10);
    for n in [64i64, 256] {
        g.bench_with_input(BenchmarkId::new("segment_dense", n), &n, |b, &n| b.iter(|| black_box(capacity_free(&segment(3, n), &o).unwrap())));
    }
    g.bench_function("segment_fast_4096", |b| b.iter(|| black_box(line_capacity_fast(4096, 3, &o).unwrap())));
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let mut g = c.benchmark_group("sampler");
    g.sample_size(10);
    for r in [16i64, 32] {
        let s = DirichletSampler::new(ball(3, r)).unwrap();
        let mut i = 0;
        g.bench_with_input(BenchmarkId::new("dirichlet_d3", r), &r, |b, _| {
            b.iter(|| {
                i += 1;
                black_box(s.sample(1, i))
            })
        });
    }
    g.finish();
}

fn clusters(c: &mut Criterion) {
    let f = DirichletSampler::new(ball(3, 32)).unwrap().sample(2, 0);
    let mut g = c.benchmark_group("clusters");
    g.bench_function("label_d3_32", |b| b.iter(|| black_box(label_clusters(&f, 0.0, Adjacency::Nearest).n_clusters())));
    g.bench_function("one_arm_d3_32", |b| b.iter(|| black_box(one_arm(&f, 0.0, 24).unwrap())));
    g.finish();
}

fn coarse(c: &mut Criterion) {
    let p = CgParams::new(3, 4, 10, 1200, LambdaKind::Ball, 0.25, true).unwrap();
    let mut r = stream(3, "bench", 0);
    let path = random_crossing_path(&p.domain(), PathStyle::default(), &mut r).unwrap();
    let mut g = c.benchmark_group("coarse");
    g.sample_size(20);
    g.bench_function("d3_ball_1200", |b| b.iter(|| black_box(coarse_grain_d3(&path, &p).unwrap())));
    g.finish();
}

criterion_group!(benches, green, capacity, sampler, clusters, coarse);
criterion_main!(benches);
