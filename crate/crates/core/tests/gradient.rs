mod common;

use attrfield::deform::Pose;
use attrfield::mlp::Dense;
use attrfield::optimize::{
    check_gradient, gradient, Batch, LossWeights, Objective, Problem, RayTarget, SceneObjective,
};
use attrfield::render::RenderSettings;
use attrfield::scene::Scene;
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A scene where every trainable block has a non-trivial gradient: random
/// decoder heads, a live non-rigid network and a non-rest pose.
fn setup(seed: u64) -> (Scene, Problem, Batch) {
    let mut scene = busy_scene(small_dims(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let last = scene.nonrigid.mlp.layers.last_mut().unwrap();
    *last = Dense::gaussian(last.inputs, last.outputs, 0.5, &mut rng);
    let pose = Pose::from_euler_degrees(
        &scene.template,
        &[("l_elbow", [0.0, 0.0, 25.0]), ("r_hip", [-20.0, 0.0, 0.0])],
        [0.2, 0.1],
    )
    .unwrap();
    let active = ["Body", "Top", "Haircut"]
        .iter()
        .map(|n| label(&scene, n))
        .collect::<Vec<_>>();
    let problem = Problem::new(
        active.clone(),
        pose,
        RenderSettings {
            samples: 24,
            ..RenderSettings::default()
        },
    );
    // Aim rays at the body so that samples land in the attribute boxes.
    let rays = random_rays(400, seed)
        .into_iter()
        .filter(|r| {
            let renderer = scene
                .renderer(&active, &problem.pose, problem.settings.clone())
                .unwrap();
            renderer.trace_ray(r).unwrap().opacity > 0.05
        })
        .take(24)
        .map(|ray| RayTarget {
            ray,
            rgb: [0, 1, 2].map(|_| rng.gen_range(0.0..1.0)),
            weights: (0..active.len()).map(|_| rng.gen_range(0.0..0.5)).collect(),
        })
        .collect::<Vec<_>>();
    assert_eq!(rays.len(), 24);
    let points = (0..24)
        .map(|_| {
            [
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.2..0.2),
            ]
        })
        .collect();
    (scene, problem, Batch { rays, points })
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let (scene, problem, batch) = setup(21);
    let weights = LossWeights {
        eik: 0.3,
        surf: 0.2,
        rsdf: 0.5,
        nonrig: 0.5,
        ..LossWeights::default()
    };
    let (_, grad) = gradient(&scene, &problem, &weights, &batch).unwrap();
    let mut obj = SceneObjective::new(scene, problem, weights, batch);
    let params = obj.parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut picks = Vec::new();
    for seg in &params.segments {
        let range: Vec<usize> = (seg.offset..seg.offset + seg.len).collect();
        let live: Vec<usize> = range.iter().copied().filter(|&i| grad[i].abs() > 1e-6).collect();
        assert!(!live.is_empty(), "segment {} has no gradient", seg.name);
        picks.extend(live.choose_multiple(&mut rng, 8).copied());
        picks.extend(range.choose_multiple(&mut rng, 3).copied());
    }
    let checks = check_gradient(&mut obj, &params.values, &picks, 1e-5).unwrap();
    let bad: Vec<_> = checks.iter().filter(|c| !c.passes(1e-4, 1e-7, 1e-6)).collect();
    assert!(
        bad.is_empty(),
        "{} of {} mismatched: {:?}",
        bad.len(),
        checks.len(),
        &bad[..bad.len().min(5)]
    );
    // The objective is restored after the check.
    let (f0, _) = obj.eval(&params.values, false).unwrap();
    let (f1, _) = obj.eval(&params.values, false).unwrap();
    assert_eq!(f0, f1);
}

#[test]
fn gradient_is_independent_of_thread_count() {
    let (scene, problem, batch) = setup(5);
    let w = LossWeights::default();
    let a = attrfield::par::with_threads(1, || gradient(&scene, &problem, &w, &batch).unwrap());
    let b = attrfield::par::with_threads(3, || gradient(&scene, &problem, &w, &batch).unwrap());
    assert_eq!(a.0, b.0);
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}
