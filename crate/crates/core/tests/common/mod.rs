#![allow(dead_code)]

use attrfield::config::SceneConfig;
use attrfield::field::FieldDims;
use attrfield::math::Vec3;
use attrfield::mlp::Dense;
use attrfield::sampling::{Camera, Ray};
use attrfield::scene::Scene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_dims() -> FieldDims {
    FieldDims {
        ranks: [2, 2, 2],
        feature_dim: 8,
        resolution: 8,
        attr_dim: 8,
    }
}

/// Random scene with the default catalog and config boxes whose decoder
/// heads are also random, so every output channel is exercised.
pub fn busy_scene(dims: FieldDims, seed: u64) -> Scene {
    let cfg = SceneConfig::default();
    let mut scene = Scene::new_random(cfg.catalog.clone(), dims, seed).unwrap();
    scene.bboxes = cfg.bboxes.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let last = scene.decoder.mlp.layers.last_mut().unwrap();
    *last = Dense::gaussian(last.inputs, last.outputs, 1.0, &mut rng);
    scene
}

pub fn label(scene: &Scene, name: &str) -> usize {
    scene.catalog.label(name).unwrap()
}

/// Rays from a sphere of radius 2.8 aimed at random points of the cube.
pub fn random_rays(n: usize, seed: u64) -> Vec<Ray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let yaw = rng.gen_range(0.0..360.0);
            let pitch = rng.gen_range(-60.0..60.0);
            let cam = Camera::orbit(yaw, pitch, 2.8, 1).unwrap();
            let target: Vec3 = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
            let d = attrfield::math::normalize(attrfield::math::sub(target, cam.position));
            Ray {
                origin: cam.position,
                dir: d,
                near: cam.near,
                far: cam.far,
            }
        })
        .collect()
}
