//! Parallel against single-threaded rendering and gradient evaluation.
//! Build with `--no-default-features` to bench the sequential fallback.

use attrfield::config::SceneConfig;
use attrfield::optimize::{gradient, sample_points, training_cameras, Batch, LossWeights, Problem, RayTarget};
use attrfield::oracle::{generate_oracle_scene, OracleOptions};
use attrfield::par;
use attrfield::render::RenderSettings;
use attrfield::sampling::Camera;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn thread_counts() -> Vec<usize> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut v = vec![1, all.max(4)];
    v.dedup();
    v
}

fn bench(c: &mut Criterion) {
    let cfg = SceneConfig::default();
    let (scene, active) = generate_oracle_scene(1, &cfg, &OracleOptions::default()).unwrap();
    let pose = scene.rest_pose();
    let renderer = scene.renderer(&active, &pose, RenderSettings::default()).unwrap();
    let cam = Camera::orbit(25.0, 5.0, 2.8, 64).unwrap();

    let mut g = c.benchmark_group("render_64");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || renderer.render(&cam).unwrap()))
        });
    }
    g.finish();

    let problem = Problem::new(active, pose, RenderSettings::default());
    let view = &training_cameras(1, 32).unwrap()[0];
    let target = renderer.render(view).unwrap();
    let k = target.labels.len();
    let rays = (0..256)
        .map(|i| {
            let p = (i * 97) % (32 * 32);
            RayTarget {
                ray: view.ray(p % 32, p / 32),
                rgb: target.pixel_rgb(p),
                weights: target.weights[p * k..(p + 1) * k].to_vec(),
            }
        })
        .collect();
    let batch = Batch {
        rays,
        points: sample_points(&scene, 64, &mut ChaCha8Rng::seed_from_u64(0)),
    };
    let w = LossWeights::default();
    let mut g = c.benchmark_group("gradient_256_rays");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || gradient(&scene, &problem, &w, &batch).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
