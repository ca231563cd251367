use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array1;
use perturbvamp::denoiser::denoise;
use perturbvamp::harness::PerturbationKind;
use perturbvamp::solver::{run, PcRoute, SpectralLmmse};
use perturbvamp::VampConfig;
use perturbvamp_bench::{prior, problem};

fn bench_denoise(c: &mut Criterion) {
    let prior = prior();
    let r = Array1::from_shape_fn(4096, |i| ((i as f64) * 0.37).sin() * 2.0);
    c.bench_function("denoise/4096", |b| b.iter(|| denoise(&prior, black_box(r.view()), 3.0).unwrap()));
}

fn bench_lmmse(c: &mut Criterion) {
    let (p, x) = problem(PerturbationKind::Iid, 512);
    let factored = SpectralLmmse::new(p.a().view(), p.y().view()).unwrap();
    let r2 = &x * 0.9;
    c.bench_function("spectral_lmmse/256x512", |b| {
        b.iter(|| {
            factored
                .estimate(p.a().view(), p.y().view(), p.gamma_w(), black_box(r2.view()), 5.0)
                .unwrap()
        })
    });
}

fn bench_expected_covariance(c: &mut Criterion) {
    let mut group = c.benchmark_group("expected_covariance");
    group.sample_size(10);
    for kind in [PerturbationKind::Gaussian, PerturbationKind::Circulant, PerturbationKind::Restricted] {
        let (p, x) = problem(kind, 256);
        let model = p.perturbation();
        group.bench_with_input(BenchmarkId::from_parameter(kind), &x, |b, x| {
            b.iter(|| model.expected_covariance(p.gamma_e(), p.gamma_w(), black_box(x.view()), 4.0).unwrap())
        });
    }
    group.finish();
}

fn bench_pc_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("pc_run_10_iters");
    group.sample_size(10);
    let (p, _) = problem(PerturbationKind::Gaussian, 256);
    let prior = prior();
    for route in [PcRoute::Whitened, PcRoute::Direct] {
        let config = VampConfig {
            max_iters: 10,
            pc_route: route,
            ..VampConfig::default()
        };
        group.bench_function(route.label(), |b| b.iter(|| run(&p, &prior, &config, None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_denoise, bench_lmmse, bench_expected_covariance, bench_pc_run);
criterion_main!(benches);
