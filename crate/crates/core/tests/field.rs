use attrfield::field::{eval_attribute, eval_field, materialize_dense, node_coord, FieldDims, SpaceAttributeField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(rank: usize, features: usize, res: usize, attr: usize, seed: u64) -> SpaceAttributeField {
    let dims = FieldDims {
        ranks: [rank; 3],
        feature_dim: features,
        resolution: res,
        attr_dim: attr,
    };
    SpaceAttributeField::gaussian(dims, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Trilinear interpolation of a node-grid tabulation, then a linear
/// combination over the attribute basis.
fn interpolate_dense(dense: &attrfield::field::DenseTensor, p: [f64; 3], a: &[f64]) -> Vec<f64> {
    let [nx, ny, nz, na, f] = dense.shape;
    let axis = |t: f64, n: usize| {
        let s = ((t.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64).min((n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    let (ix, fx) = axis(p[0], nx);
    let (iy, fy) = axis(p[1], ny);
    let (iz, fz) = axis(p[2], nz);
    let mut out = vec![0.0; f];
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
                for (ia, &ak) in a.iter().enumerate().take(na) {
                    let cell = dense.at(ix + dx, iy + dy, iz + dz, ia);
                    for (o, v) in out.iter_mut().zip(cell) {
                        *o += wx * wy * wz * ak * v;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn dense_tabulation_matches_factored_evaluation() {
    let field = random_field(2, 4, 8, 4, 11);
    let dense = materialize_dense(&field, [8, 8, 8, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let p = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = eval_field(&field, p, &a).unwrap();
        let tab = interpolate_dense(&dense, p, &a);
        for (x, y) in direct.iter().zip(&tab) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-9, "max abs error {worst}");
}

#[test]
fn dense_nodes_are_exact() {
    let field = random_field(3, 5, 5, 3, 2);
    let dense = materialize_dense(&field, [5, 5, 5, 3]).unwrap();
    let p = [node_coord(1, 5), node_coord(4, 5), node_coord(2, 5)];
    let direct = eval_field(&field, p, &[0.0, 1.0, 0.0]).unwrap();
    for (x, y) in direct.iter().zip(dense.at(1, 4, 2, 1)) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn coord() -> impl Strategy<Value = f64> {
    -1.0..1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn field_is_linear_in_the_attribute_vector(
        seed in 0u64..1000,
        p in [coord(), coord(), coord()],
        a in prop::collection::vec(-2.0..2.0f64, 4),
        b in prop::collection::vec(-2.0..2.0f64, 4),
        s in -3.0..3.0f64,
    ) {
        let field = random_field(2, 3, 6, 4, seed);
        let fa = eval_field(&field, p, &a).unwrap();
        let fb = eval_field(&field, p, &b).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + y).collect();
        let fm = eval_field(&field, p, &mix).unwrap();
        for i in 0..3 {
            prop_assert!((fm[i] - (s * fa[i] + fb[i])).abs() < 1e-9 * (1.0 + fm[i].abs()));
        }
    }

    #[test]
    fn points_outside_the_cube_clamp_to_the_boundary(
        seed in 0u64..1000,
        p in [coord(), coord(), coord()],
        axis in 0usize..3,
        over in 1.0..5.0f64,
        sign in prop::bool::ANY,
    ) {
        let field = random_field(2, 3, 6, 4, seed);
        let a = [0.5, -0.5, 0.5, 0.5];
        let mut outside = p;
        let mut edge = p;
        let s = if sign { 1.0 } else { -1.0 };
        outside[axis] = s * (1.0 + over);
        edge[axis] = s;
        prop_assert_eq!(eval_field(&field, outside, &a).unwrap(), eval_field(&field, edge, &a).unwrap());
    }

    #[test]
    fn contraction_agrees_with_full_evaluation(
        seed in 0u64..1000,
        p in [coord(), coord(), coord()],
        a in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let field = random_field(3, 4, 7, 4, seed);
        let full = eval_field(&field, p, &a).unwrap();
        let c = field.contract_vector(&a).unwrap();
        let part = eval_attribute(&c, p);
        for (x, y) in full.iter().zip(&part) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }
}
