use criterion::{black_box, criterion_group, criterion_main, Criterion};
use univcode_bench::{bsc, fading};
use univcode_core::infomeasures::{optimal_r1, ChannelTable, DEFAULT_RESOLUTION};

fn s_info(c: &mut Criterion) {
    let p = [0.5, 0.5];
    let dmc = ChannelTable::new(&p, &bsc(0.1), DEFAULT_RESOLUTION).unwrap();
    let gauss = ChannelTable::new(&p, &fading(), DEFAULT_RESOLUTION).unwrap();
    c.bench_function("s_info/bsc", |b| b.iter(|| dmc.s_info(black_box(0.37))));
    c.bench_function("s_info/fading", |b| b.iter(|| gauss.s_info(black_box(0.37))));
    c.bench_function("table/fading", |b| {
        b.iter(|| ChannelTable::new(black_box(&p), &fading(), DEFAULT_RESOLUTION).unwrap())
    });
}

fn threshold(c: &mut Criterion) {
    let points = [bsc(0.05), bsc(0.1), bsc(0.15)];
    c.bench_function("optimal_r1/grid3", |b| {
        b.iter(|| optimal_r1(&[0.5, 0.5], black_box(&points), 0.1).unwrap())
    });
}

criterion_group!(benches, s_info, threshold);
criterion_main!(benches);
