//! Hot kernels under the rayon backend (one-thread pool vs the default pool)
//! or, when built with `--no-default-features`, the sequential fallback.

use criterion::{criterion_group, criterion_main, Criterion};
use qtomo::adaptive::{gaussian_scaled_mse, AdaptiveSettings, WeightRule};
use qtomo::bayes::{bayes_risk, BayesQuadrature, PriorSpec};
use qtomo::fitkit::{mse_by_subsampling, EstimationPipeline, SubsampleOptions};
use qtomo::noisekit::sample_shots;
use qtomo::povm::StPovmParams;
use qtomo::BlochVector;
use std::hint::black_box;

type Kernel = (&'static str, Box<dyn Fn() + Send + Sync>);

fn kernels() -> Vec<Kernel> {
    let theta = BlochVector::on_z(0.5);
    let params = StPovmParams::matched_to(theta).unwrap();
    let record = sample_shots(&params, theta, 180_000, 1, None).unwrap();
    let pipeline = EstimationPipeline::for_record(&record).unwrap();
    let prior = PriorSpec::new(theta, 10.0, 10.0).unwrap();
    vec![
        (
            "sample_shots_1e6",
            Box::new(move || {
                black_box(sample_shots(&params, theta, 1_000_000, 2, None).unwrap());
            }),
        ),
        (
            "subsample_180k_x200",
            Box::new(move || {
                let opts = SubsampleOptions {
                    n_instances: 200,
                    n_resamples: 200,
                    seed: 3,
                };
                black_box(mse_by_subsampling(&record, 100, &pipeline, &opts).unwrap());
            }),
        ),
        (
            "two_step_gaussian",
            Box::new(move || {
                let s = AdaptiveSettings::default();
                black_box(gaussian_scaled_mse(theta, 1e4, 671.0, WeightRule::OptimalPerRun, &s).unwrap());
            }),
        ),
        (
            "bayes_risk_lab_frame",
            Box::new(move || {
                let q = BayesQuadrature {
                    collapse_azimuth: false,
                    ..BayesQuadrature::default()
                };
                black_box(bayes_risk(&prior, 0.45, &q).unwrap());
            }),
        ),
    ]
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    for (name, f) in kernels() {
        let mut g = c.benchmark_group(name);
        g.sample_size(10);
        g.bench_function("rayon/1-thread", |b| b.iter(|| single.install(&f)));
        let label = format!("rayon/default-pool-{}t", default.current_num_threads());
        g.bench_function(label, |b| b.iter(|| default.install(&f)));
        g.finish();
    }
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    for (name, f) in kernels() {
        let mut g = c.benchmark_group(name);
        g.sample_size(10);
        g.bench_function("sequential", |b| b.iter(&f));
        g.finish();
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
