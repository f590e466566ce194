use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use planloc_bench::scene;
use planloc_core::fusion::{fuse_views, warp_volume};
use planloc_core::infer::argmax_pose;
use planloc_core::mapenc::{Encoder, FeatureGrid};
use planloc_core::matcher::{pose_posterior, score_volume};
use planloc_core::synth::{gen_world, WorldSpec};
use planloc_core::{AnalyticEncoder, AnalyticParams, Backend, ClassTable, Pose2};

fn matching(c: &mut Criterion) {
    let (map, bev) = scene(1);
    let mut g = c.benchmark_group("score_volume");
    g.sample_size(10);
    for k in [16, 64] {
        g.bench_with_input(BenchmarkId::new("fourier", k), &k, |b, &k| {
            b.iter(|| score_volume(&map, &bev, k, Backend::Fourier).unwrap())
        });
    }
    g.finish();
}

fn encoding(c: &mut Criterion) {
    let world = gen_world(1, &WorldSpec::default()).unwrap();
    let enc = AnalyticEncoder::new(&ClassTable::default(), AnalyticParams::centered()).unwrap();
    c.bench_function("encode_analytic_256", |b| {
        b.iter(|| enc.encode(&FeatureGrid::zeros(0, 0, 0), &world.raster).unwrap())
    });
    c.bench_function("gen_world_128m", |b| b.iter(|| gen_world(7, &WorldSpec::default()).unwrap()));
}

fn posterior_ops(c: &mut Criterion) {
    let (map, bev) = scene(2);
    let scores = score_volume(&map, &bev, 64, Backend::Fourier).unwrap();
    let p = pose_posterior(&scores, &map.omega, None).unwrap();
    let rel = Pose2::new(3.0, -1.5, 0.2);
    let mut g = c.benchmark_group("posterior");
    g.sample_size(10);
    g.bench_function("softmax", |b| b.iter(|| pose_posterior(&scores, &map.omega, None).unwrap()));
    g.bench_function("argmax", |b| b.iter(|| argmax_pose(&p).unwrap()));
    g.bench_function("warp", |b| b.iter(|| warp_volume(&p, &rel).unwrap()));
    g.bench_function("fuse_2", |b| b.iter(|| fuse_views(&[(&p, Pose2::IDENTITY), (&p, rel)]).unwrap()));
    g.finish();
}

criterion_group!(benches, matching, encoding, posterior_ops);
criterion_main!(benches);
