use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mfpilot_bench::{gg_prior, iw_prior, monomial, r0, with_correlation};
use mfpilot_core::acv::{continuous_optimum, OptimizerConfig};
use mfpilot_core::matparam::DEFAULT_GAMMA_TOL;
use mfpilot_core::{
    bayes_update, expected_loss, gamma_forward, gamma_inverse, optimal_variance, optimal_weights, optimize_allocation,
    AllocationFamily, GammaStructure, InferenceConfig, LossConfig, RngStream,
};

fn acv(c: &mut Criterion) {
    let f = monomial(4, 10);
    let mut g = c.benchmark_group("acv");
    for family in AllocationFamily::ALL {
        let r = optimize_allocation(&f.oracle, 222.2, &f.costs, &[family]).unwrap();
        let a = r.config.allocation;
        g.bench_with_input(BenchmarkId::new("optimal_weights", family), &a, |b, a| {
            b.iter(|| optimal_weights(black_box(&f.oracle), a).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("optimal_variance", family), &a, |b, a| {
            b.iter(|| optimal_variance(black_box(&f.oracle), a).unwrap())
        });
        g.bench_function(BenchmarkId::new("continuous_optimum", family), |b| {
            b.iter(|| continuous_optimum(black_box(&f.oracle), &f.costs, family, &OptimizerConfig::default(), None).unwrap())
        });
    }
    g.bench_function("optimize_allocation/all", |b| {
        b.iter(|| optimize_allocation(black_box(&f.oracle), 222.2, &f.costs, &AllocationFamily::ALL).unwrap())
    });
    g.finish();
}

fn matparam(c: &mut Criterion) {
    let r = r0();
    let gamma = gamma_forward(&r).unwrap();
    let mut g = c.benchmark_group("matparam");
    g.bench_function("gamma_forward/4", |b| b.iter(|| gamma_forward(black_box(&r)).unwrap()));
    g.bench_function("gamma_inverse/4", |b| {
        b.iter(|| gamma_inverse(black_box(&gamma), DEFAULT_GAMMA_TOL).unwrap())
    });
    g.finish();
}

fn inference(c: &mut Criterion) {
    let f = monomial(4, 20);
    let center = with_correlation(&f.oracle, &r0());
    let priors = [
        ("iw", iw_prior(&center)),
        ("gamma_diag", gg_prior(&center, GammaStructure::Diagonal)),
        ("gamma_full", gg_prior(&center, GammaStructure::Full)),
    ];
    let cfg = InferenceConfig::default();
    let mut g = c.benchmark_group("bayes_update");
    g.sample_size(20);
    for (name, prior) in &priors {
        g.bench_function(*name, |b| b.iter(|| bayes_update(black_box(prior), &f.pilot, &cfg).unwrap()));
    }
    g.finish();
}

fn loss(c: &mut Criterion) {
    let f = monomial(4, 20);
    let post = bayes_update(&iw_prior(&f.oracle), &f.pilot, &InferenceConfig::default()).unwrap();
    let cfg = LossConfig {
        n_mc: 50,
        seed: RngStream::new(3),
        ..LossConfig::default()
    };
    let b_tot = 200.0 * f.costs.total();
    let mut g = c.benchmark_group("loss");
    g.sample_size(10);
    g.bench_function("expected_loss/n_mc=50", |b| {
        b.iter(|| expected_loss(black_box(&f.oracle), b_tot - 20.0 * f.costs.total(), &post, b_tot, &f.costs, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, acv, matparam, inference, loss);
criterion_main!(benches);
