use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use specboot::bootstrap::{bootstrap_replicate, BootstrapConfig, StatisticSpec};
use specboot::estimators::sample_covariance_eigs;
use specboot::inference::prepare;
use specboot::mp::{esd_grid, EsdOptions};
use specboot::quest::{estimate_population_spectrum, QuestOptions};
use specboot::spectra::{make_covariance_setting, Setting};
use specboot::SpectrumModel;
use specboot_bench::s1_sample;

const N: usize = 400;
const P: usize = 200;

fn sampling(c: &mut Criterion) {
    c.bench_function("sample S1 400x200", |b| b.iter(|| s1_sample(N, P, black_box(1))));
}

fn eigs(c: &mut Criterion) {
    let x = s1_sample(N, P, 2);
    c.bench_function("sample eigenvalues 400x200", |b| b.iter(|| sample_covariance_eigs(black_box(&x)).unwrap()));
}

fn mp_grid(c: &mut Criterion) {
    let spec = make_covariance_setting(Setting::S3, P, None).unwrap();
    let h = SpectrumModel::from_eigenvalues(spec.eigenvalues()).unwrap();
    c.bench_function("esd grid S3 c=0.5", |b| b.iter(|| esd_grid(black_box(&h), 0.5, &EsdOptions::default()).unwrap()));
}

fn quest(c: &mut Criterion) {
    let eigs = sample_covariance_eigs(&s1_sample(N, P, 3)).unwrap();
    let mut g = c.benchmark_group("spectrum estimate");
    g.sample_size(10);
    g.bench_function("S1 400x200", |b| {
        b.iter(|| estimate_population_spectrum(black_box(&eigs), N, &QuestOptions::default()).unwrap())
    });
    g.finish();
}

fn replicate(c: &mut Criterion) {
    let d = prepare(&s1_sample(N, P, 4), &QuestOptions::default()).unwrap();
    let base = BootstrapConfig {
        b: 1,
        n: N,
        p: P,
        varsigma_sq_hat: d.bundle.varsigma_sq_hat,
        spectrum_tilde: d.spectrum_tilde,
        master_seed: 5,
        statistics: vec![StatisticSpec::StableRankStar],
    };
    c.bench_function("bootstrap replicate trace-only", |b| {
        b.iter(|| bootstrap_replicate(black_box(&base), 0).unwrap())
    });
    let eig = BootstrapConfig { statistics: vec![StatisticSpec::LargestEig], ..base };
    c.bench_function("bootstrap replicate eigen", |b| b.iter(|| bootstrap_replicate(black_box(&eig), 0).unwrap()));
}

criterion_group!(benches, sampling, eigs, mp_grid, quest, replicate);
criterion_main!(benches);
