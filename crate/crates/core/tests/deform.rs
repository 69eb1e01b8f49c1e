use attrfield::deform::{
    capsule_sdf, knn_weights, observation_to_canonical, template_sdf, Capsule, Joint, Pose, PosedTemplate, SkinVertex,
    TemplateSkeleton,
};
use nalgebra::{Point3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One joint at `pivot` with a single capsule; vertices carry no blend
/// shapes, so every vertex moves rigidly with the bone.
fn single_bone(pivot: [f64; 3]) -> TemplateSkeleton {
    let cap = Capsule {
        joint: 0,
        a: [0.0, -0.3, 0.0],
        b: [0.0, 0.3, 0.0],
        radius: 0.1,
    };
    let mut vertices = Vec::new();
    for i in 0..7 {
        let y = -0.3 + 0.1 * i as f64;
        for k in 0..8 {
            let phi = std::f64::consts::TAU * k as f64 / 8.0;
            vertices.push(SkinVertex {
                position: [0.1 * phi.cos(), y, 0.1 * phi.sin()],
                joint: 0,
                shape: [[0.0; 3]; 2],
                pose: [[0.0; 3]; 2],
            });
        }
    }
    let t = TemplateSkeleton {
        joints: vec![Joint {
            name: "root".into(),
            parent: None,
            rest_position: pivot,
            pose_group: 0,
        }],
        capsules: vec![cap],
        vertices,
        k: 4,
    };
    t.validate().unwrap();
    t
}

#[test]
fn single_bone_rotation_matches_rigid_oracle() {
    let pivot = [0.05, -0.2, 0.1];
    let t = single_bone(pivot);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let angles = [0, 1, 2].map(|_| rng.gen_range(-60.0..60.0f64));
        let pose = Pose::from_euler_degrees(&t, &[("root", angles)], [0.0; 2]).unwrap();
        let posed = PosedTemplate::new(&t, &pose).unwrap();
        let q =
            UnitQuaternion::from_euler_angles(angles[0].to_radians(), angles[1].to_radians(), angles[2].to_radians());
        let p = Vector3::from(pivot);
        // A canonical point on the bone, moved rigidly into observation space.
        let xc = Point3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.15..0.15),
        );
        let xt = Point3::from(q * (xc.coords - p) + p);
        let got = observation_to_canonical([xt.x, xt.y, xt.z], &posed).unwrap();
        let expected = Point3::from(q.inverse() * (xt.coords - p) + p);
        for a in 0..3 {
            assert!((got[a] - expected[a]).abs() < 1e-9, "{got:?} vs {expected:?}");
            assert!((got[a] - xc[a]).abs() < 1e-9);
        }
    }
}

#[test]
fn forearm_follows_elbow_when_blend_shapes_are_off() {
    let mut t = TemplateSkeleton::humanoid();
    for v in &mut t.vertices {
        v.pose = [[0.0; 3]; 2];
    }
    let pose = Pose::from_euler_degrees(&t, &[("l_elbow", [0.0, 0.0, 35.0])], [0.0; 2]).unwrap();
    let posed = PosedTemplate::new(&t, &pose).unwrap();
    let elbow = Vector3::from(t.joints[t.joint("l_elbow").unwrap()].rest_position);
    let q = UnitQuaternion::from_euler_angles(0.0, 0.0, 35f64.to_radians());
    // Just outside the forearm capsule, far from the upper arm.
    let xc = Vector3::new(0.34, 0.06, 0.05);
    let xt = q * (xc - elbow) + elbow;
    let got = observation_to_canonical([xt.x, xt.y, xt.z], &posed).unwrap();
    for a in 0..3 {
        assert!((got[a] - xc[a]).abs() < 1e-9, "{got:?}");
    }
}

#[test]
fn rest_pose_round_trip_inside_template_bounds() {
    let t = TemplateSkeleton::humanoid();
    let posed = PosedTemplate::new(&t, &Pose::rest(t.joints.len())).unwrap();
    let (lo, hi) = t.rest_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let x = [0, 1, 2].map(|a| rng.gen_range(lo[a]..hi[a]));
        let y = observation_to_canonical(x, &posed).unwrap();
        for a in 0..3 {
            assert!((x[a] - y[a]).abs() < 1e-6);
        }
    }
}

#[test]
fn template_sdf_agrees_with_sampled_surface() {
    let t = TemplateSkeleton::humanoid();
    // Dense surface samples: rings around every capsule plus hemispherical caps.
    let mut surface = Vec::new();
    let spacing = 0.01;
    for c in &t.capsules {
        let axis = Vector3::from(c.b) - Vector3::from(c.a);
        let len = axis.norm();
        let dir = if len > 0.0 { axis / len } else { Vector3::y() };
        let helper = if dir.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
        let e1 = dir.cross(&helper).normalize();
        let e2 = dir.cross(&e1);
        let around = ((std::f64::consts::TAU * c.radius / spacing).ceil() as usize).max(8);
        let rings = (len / spacing).ceil() as usize + 1;
        let mut push = |p: Vector3<f64>| {
            // Keep only points on the outer surface of the union.
            if t.capsules
                .iter()
                .all(|o| capsule_sdf([p.x, p.y, p.z], o.a, o.b, o.radius) >= -1e-9)
            {
                surface.push(p);
            }
        };
        for i in 0..rings {
            let base = Vector3::from(c.a) + axis * (i as f64 / (rings - 1).max(1) as f64);
            for k in 0..around {
                let phi = std::f64::consts::TAU * k as f64 / around as f64;
                push(base + (e1 * phi.cos() + e2 * phi.sin()) * c.radius);
            }
        }
        let lat = (std::f64::consts::FRAC_PI_2 * c.radius / spacing).ceil() as usize;
        for (end, sign) in [(Vector3::from(c.a), -1.0), (Vector3::from(c.b), 1.0)] {
            for i in 1..=lat {
                let th = std::f64::consts::FRAC_PI_2 * i as f64 / lat as f64;
                let ring = ((std::f64::consts::TAU * c.radius * th.cos() / spacing).ceil() as usize).max(1);
                for k in 0..ring {
                    let phi = std::f64::consts::TAU * k as f64 / ring as f64;
                    let n = (e1 * phi.cos() + e2 * phi.sin()) * th.cos() + dir * (sign * th.sin());
                    push(end + n * c.radius);
                }
            }
        }
    }
    assert!(surface.len() > 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let x = [
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.4..0.4),
        ];
        let d = template_sdf(x, &t);
        if d <= 0.0 {
            continue;
        }
        let xv = Vector3::from(x);
        let sampled = surface.iter().map(|s| (s - xv).norm()).fold(f64::INFINITY, f64::min);
        assert!((d - sampled).abs() < 2.0 * spacing, "at {x:?}: {d} vs {sampled}");
    }
}

#[test]
fn template_sdf_has_unit_gradient_outside() {
    let t = TemplateSkeleton::humanoid();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 300 {
        let x = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if template_sdf(x, &t) < 0.02 {
            continue;
        }
        let g: Vec<f64> = (0..3)
            .map(|a| {
                let mut p = x;
                let mut m = x;
                p[a] += h;
                m[a] -= h;
                (template_sdf(p, &t) - template_sdf(m, &t)) / (2.0 * h)
            })
            .collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Near the medial axis between two capsules the gradient kinks; skip those.
        if (n - 1.0).abs() < 5e-2 {
            checked += 1;
        } else {
            let closest: Vec<f64> = t.capsules.iter().map(|c| capsule_sdf(x, c.a, c.b, c.radius)).collect();
            let mut s = closest.clone();
            s.sort_by(f64::total_cmp);
            assert!(s[1] - s[0] < 1e-3, "|grad| {n} at {x:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn knn_weights_are_a_partition_of_unity(
        pts in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 4..60),
        x in prop::array::uniform3(-1.2..1.2f64),
        k in 1usize..6,
    ) {
        let w = knn_weights(x, &pts, k);
        prop_assert!(!w.is_empty() && w.len() <= k);
        prop_assert!(w.iter().all(|&(_, v)| v >= 0.0));
        prop_assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-9);
        // Every selected point is at least as close as every unselected one.
        let d = |i: usize| {
            let p = pts[i];
            ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2)).sqrt()
        };
        if w.len() == k.min(pts.len()) {
            let far = w.iter().map(|&(i, _)| d(i)).fold(0.0, f64::max);
            for i in 0..pts.len() {
                if !w.iter().any(|&(j, _)| j == i) {
                    prop_assert!(d(i) >= far);
                }
            }
        }
    }

    #[test]
    fn posed_blend_rows_stay_homogeneous(angle in -80.0..80.0f64, x in prop::array::uniform3(-0.5..0.5f64)) {
        let t = TemplateSkeleton::humanoid();
        let pose = Pose::from_euler_degrees(&t, &[("r_knee", [angle, 0.0, 0.0])], [0.2, -0.1]).unwrap();
        let posed = PosedTemplate::new(&t, &pose).unwrap();
        let m = posed.blended_transform(x);
        // Three stored rows; a blend of rigid maps with unit weights keeps a
        // positive determinant.
        let det = nalgebra::Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]).determinant();
        prop_assert!(det > 0.0);
        prop_assert!(m.iter().flatten().all(|v| v.is_finite()));
    }
}
