use criterion::{black_box, criterion_group, criterion_main, Criterion};
use univcode_bench::{binary_code, bsc, received};
use univcode_core::combinatorics::CompositionType;
use univcode_core::infomeasures::RateParameters;
use univcode_core::mixtures::{PriorKind, PriorSpec};
use univcode_core::simulator::{decode, estimate_error, EnsembleCode, ErrorMode};

fn decoding(c: &mut Criterion) {
    let point = bsc(0.05);
    let code = binary_code(64, 256, 0.1, 3);
    let ys = received(&code, &point, 17, 9);
    c.bench_function("decode/n64_m256", |b| b.iter(|| decode(&code, black_box(&ys))));
    let tiny = binary_code(6, 4, 0.05, 1);
    c.bench_function("exact_error/n6_m4", |b| {
        b.iter(|| estimate_error(&tiny, &point, ErrorMode::Exact).unwrap())
    });
}

fn ensemble(c: &mut Criterion) {
    let point = bsc(0.05);
    let priors = PriorSpec::uniform(PriorKind::Dirichlet { alpha: 1.0 });
    let rates = RateParameters { rate: 0.1, threshold_rate: 0.18 };
    c.bench_function("ensemble_exact/n24", |b| {
        b.iter(|| {
            let comp = CompositionType::new(vec![12, 12]).unwrap();
            let ens = EnsembleCode::for_rate(point.family().clone(), comp, rates, &priors).unwrap();
            ens.estimate_error(&point, ErrorMode::Exact).unwrap()
        })
    });
    let comp = CompositionType::new(vec![128, 128]).unwrap();
    let ens = EnsembleCode::for_rate(point.family().clone(), comp, rates, &priors).unwrap();
    c.bench_function("ensemble_mc/n256_t1000", |b| {
        b.iter(|| ens.estimate_error(&point, ErrorMode::MonteCarlo { trials: 1000, seed: 5 }).unwrap())
    });
}

criterion_group!(benches, decoding, ensemble);
criterion_main!(benches);
