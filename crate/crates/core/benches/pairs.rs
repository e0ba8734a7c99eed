//! Sequential versus rayon execution of the two hot loops: feature
//! extraction and pairwise verification.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use image::DynamicImage;
use reid_core::features::{extract_features, FeatureSet, GrayImage, SiftParams};
use reid_core::geomverify::VerifyParams;
use reid_core::par::{self, Execution};
use reid_core::pipeline::{candidate_pairs, verify_all};
use reid_core::synthgen::{plan_dataset, SynthConfig};

fn corpus() -> (Vec<String>, Vec<GrayImage>) {
    let cfg = SynthConfig {
        n_individuals: 6,
        encounters_per_individual: 3,
        images_per_encounter: 2,
        image_size: 192,
        ..SynthConfig::default()
    };
    let plan = plan_dataset(&cfg).unwrap();
    plan.render_all(Execution::Parallel)
        .into_iter()
        .map(|(id, rgb)| (id, GrayImage::from_dynamic(&DynamicImage::ImageRgb8(rgb))))
        .unzip()
}

fn modes() -> Vec<Execution> {
    let mut v = vec![Execution::Sequential];
    if Execution::parallel_available() {
        v.push(Execution::Parallel);
    }
    v
}

fn bench(c: &mut Criterion) {
    let (ids, images) = corpus();
    let params = SiftParams {
        max_keypoints: Some(100),
        ..SiftParams::default()
    };

    let mut g = c.benchmark_group("extract");
    g.sample_size(10);
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| par::map(exec, &images, |img| extract_features(img, None, &params).unwrap()))
        });
    }
    g.finish();

    let feats: Vec<FeatureSet> = images.iter().map(|img| extract_features(img, None, &params).unwrap()).collect();
    let pairs = candidate_pairs(&feats, None);
    let verify = VerifyParams::default();
    let mut g = c.benchmark_group("verify_all");
    g.sample_size(10);
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| verify_all(&ids, &feats, &pairs, &verify, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
