//! Synthetic oracle scenes used as fitting targets.
//!
//! The oracle is built by hand rather than trained: the indexer is
//! orthogonalized, the decoder is a near-identity network whose heads read
//! fixed feature channels, and the attribute planes are solved so that each
//! catalog index extracts a profile that decodes to that attribute's
//! signature (mask logit, residual SDF and color).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SceneConfig;
use crate::deform::{NonRigidMlp, TemplateSkeleton};
use crate::error::{Error, Result};
use crate::field::AxisPair;
use crate::field::{FieldDims, MixMatrix, PlaneGrid, SpaceAttributeField};
use crate::indexing::IndexerMlp;
use crate::math;
use crate::mlp::{Activation, Dense, Mlp};
use crate::optimize::fit_orthogonality;
use crate::render::{
    DecoderMlp, RenderSettings, DD_BOUND, DEFAULT_FEATURE_WIDTH, HEAD_COLOR, HEAD_DD, HEAD_FEATURE, HEAD_MASK,
};
use crate::sampling;
use crate::scene::{RenderDefaults, Scene};

const ORTH_LR: f64 = 1e-3;
const GAIN_DD: f64 = 2.0;
const GAIN_MASK: f64 = 4.0;
const GAIN_COLOR: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOptions {
    pub active_count: usize,
    pub dims: FieldDims,
    pub orth_steps: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            active_count: 3,
            dims: FieldDims {
                ranks: [4, 4, 4],
                feature_dim: 16,
                resolution: 16,
                attr_dim: 16,
            },
            orth_steps: 400,
        }
    }
}

/// Per-attribute decoded targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Signature {
    pub mask_logit: f64,
    pub delta_d: f64,
    pub color: [f64; 3],
}

pub fn signature(name: &str, label: usize) -> Signature {
    let (mask_logit, delta_d, color) = match name {
        "Body" => (-1.0, -0.01, [0.80, 0.62, 0.50]),
        "Outer" => (2.0, -0.06, [0.25, 0.30, 0.45]),
        "Top" => (2.0, -0.04, [0.85, 0.25, 0.25]),
        "Skirts" => (2.0, -0.05, [0.55, 0.30, 0.65]),
        "Dress" => (2.0, -0.05, [0.30, 0.60, 0.40]),
        "Pants" => (2.0, -0.03, [0.20, 0.25, 0.60]),
        "Rompers" => (2.0, -0.04, [0.85, 0.65, 0.20]),
        "Hats" => (2.0, -0.06, [0.35, 0.25, 0.15]),
        "Glasses" => (2.0, -0.03, [0.11, 0.11, 0.11]),
        "Shoes" => (2.0, -0.04, [0.15, 0.12, 0.11]),
        "Haircut" => (2.0, -0.06, [0.30, 0.18, 0.11]),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(label as u64);
            (2.0, -0.04, [0, 1, 2].map(|_| rng.gen_range(0.15..0.85)))
        }
    };
    Signature {
        mask_logit,
        delta_d,
        color,
    }
}

/// Near-identity decoder: both trunk layers copy the first `feature_dim`
/// channels, and each head reads one channel with a fixed gain.
pub fn oracle_decoder(feature_dim: usize, feature_width: usize) -> Result<DecoderMlp> {
    let w = crate::render::DECODER_WIDTH;
    if feature_dim < HEAD_FEATURE + feature_width || feature_dim > w {
        return Err(Error::Shape(format!(
            "oracle decoder needs {} <= feature_dim <= {w}",
            HEAD_FEATURE + feature_width
        )));
    }
    let mut l1 = Dense::zeros(feature_dim, w);
    for i in 0..feature_dim {
        l1.weight[i * feature_dim + i] = 1.0;
    }
    let mut l2 = Dense::zeros(w, w);
    for i in 0..w {
        l2.weight[i * w + i] = 1.0;
    }
    let out = HEAD_FEATURE + feature_width;
    let mut l3 = Dense::zeros(w, out);
    let gains = [(HEAD_DD, GAIN_DD), (HEAD_MASK, GAIN_MASK)];
    for (o, g) in gains {
        l3.weight[o * w + o] = g;
    }
    for c in 0..3 {
        l3.weight[(HEAD_COLOR + c) * w + HEAD_COLOR + c] = GAIN_COLOR;
    }
    for f in HEAD_FEATURE..out {
        l3.weight[f * w + f] = 1.0;
    }
    DecoderMlp::from_mlp(Mlp {
        layers: vec![l1, l2, l3],
        activation: Activation::Tanh,
    })
}

/// Feature values on channels `0..HEAD_FEATURE` that the oracle decoder maps
/// exactly to the signature.
fn invert_signature(s: &Signature) -> [f64; HEAD_FEATURE] {
    let logit = |c: f64| (c / (1.0 - c)).ln();
    let mut h2 = [0.0; HEAD_FEATURE];
    h2[HEAD_DD] = (s.delta_d / DD_BOUND).atanh() / GAIN_DD;
    h2[HEAD_MASK] = s.mask_logit / GAIN_MASK;
    for c in 0..3 {
        h2[HEAD_COLOR + c] = logit(s.color[c]) / GAIN_COLOR;
    }
    h2.map(|v| v.atanh().atanh())
}

/// Build the oracle scene and draw its active set under the config rules.
pub fn generate_oracle_scene(seed: u64, config: &SceneConfig, options: &OracleOptions) -> Result<(Scene, Vec<usize>)> {
    let dims = options.dims;
    let catalog = config.catalog.clone();
    let n = catalog.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tag, active) = config.rules.sample_set(options.active_count, &mut rng);

    let mut indexer = IndexerMlp::new(n, dims.attr_dim, rng.gen());
    fit_orthogonality(&mut indexer, 1.0, options.orth_steps, ORTH_LR, 0.9)?;
    let indexes = indexer.all()?;

    let decoder = oracle_decoder(dims.feature_dim, DEFAULT_FEATURE_WIDTH)?;
    let mix = MixMatrix::frozen(dims.ranks, dims.feature_dim);

    // Rank profile per label (concatenated over the three terms) whose mix
    // reproduces the inverted signature on the head channels.
    let rank_total: usize = dims.ranks.iter().sum();
    let mut sys = DMatrix::<f64>::zeros(HEAD_FEATURE, rank_total);
    let mut col = 0;
    for (t, m) in mix.iter().enumerate() {
        for r in 0..dims.ranks[t] {
            for c in 0..HEAD_FEATURE {
                sys[(c, col)] = m.row(r)[c];
            }
            col += 1;
        }
    }
    let sys_t = sys.transpose();
    let gram = (&sys * &sys_t)
        .try_inverse()
        .ok_or_else(|| Error::Shape("mixing matrices are rank deficient on the head channels".into()))?;
    let profiles: Vec<DVector<f64>> = (0..n)
        .map(|l| {
            let y = DVector::from_row_slice(&invert_signature(&signature(catalog.name(l), l)));
            &sys_t * (&gram * y)
        })
        .collect();

    // Attribute planes P with A P = C, A holding the index vectors as rows.
    let a = DMatrix::from_fn(n, dims.attr_dim, |i, k| indexes[i].vector()[k]);
    let a_t = a.transpose();
    let pinv = &a_t
        * (&a * &a_t)
            .try_inverse()
            .ok_or_else(|| Error::Shape("attribute indexes are linearly dependent".into()))?;
    let res = dims.resolution;
    let mut field = SpaceAttributeField::zeros(dims)?;
    let mut offset = 0;
    let attr_axes = [AxisPair::ZA, AxisPair::YA, AxisPair::XA];
    for t in 0..3 {
        let rank = dims.ranks[t];
        let c = DMatrix::from_fn(n, rank, |l, r| profiles[l][offset + r]);
        let p = &pinv * c;
        let mut data = vec![0.0; res * dims.attr_dim * rank];
        for row in 0..res {
            for k in 0..dims.attr_dim {
                for r in 0..rank {
                    data[(row * dims.attr_dim + k) * rank + r] = math::to_storage(p[(k, r)]);
                }
            }
        }
        let plane = PlaneGrid::from_data(attr_axes[t], res, dims.attr_dim, rank, data)?;
        match t {
            0 => field.za = plane,
            1 => field.ya = plane,
            _ => field.xa = plane,
        }
        offset += rank;
    }

    // Spatial planes: one plus a gentle sinusoidal texture.
    for plane in [&mut field.xy, &mut field.xz, &mut field.yz] {
        let rank = plane.rank();
        let waves: Vec<(f64, f64, f64)> = (0..rank)
            .map(|_| {
                (
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        for row in 0..plane.rows() {
            let u = crate::field::node_coord(row, plane.rows());
            for colm in 0..plane.cols() {
                let v = crate::field::node_coord(colm, plane.cols());
                let cell = plane.cell_mut(row, colm);
                for (r, &(fu, fv, ph)) in waves.iter().enumerate() {
                    cell[r] = math::to_storage(1.0 + 0.08 * (std::f64::consts::PI * (fu * u + fv * v) + ph).sin());
                }
            }
        }
    }

    let scene = Scene {
        catalog,
        field,
        indexer,
        decoder,
        nonrigid: NonRigidMlp::new(rng.gen()),
        template: TemplateSkeleton::humanoid(),
        bboxes: config.bboxes.clone(),
        defaults: RenderDefaults {
            settings: RenderSettings::default(),
            resolution: sampling::DEFAULT_RES,
            active: active.clone(),
        },
        style: config.rules.tags.get(tag).map(|t| t.name.clone()).unwrap_or_default(),
    };
    scene.validate()?;
    Ok((scene, active))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_decoder_hits_signatures() {
        let dec = oracle_decoder(16, 8).unwrap();
        for (l, name) in ["Body", "Top", "Glasses", "Haircut"].iter().enumerate() {
            let s = signature(name, l);
            let mut x = vec![0.0; 16];
            x[..HEAD_FEATURE].copy_from_slice(&invert_signature(&s));
            let o = dec.decode(&x);
            assert!((o.delta_d - s.delta_d).abs() < 1e-12);
            assert!((o.mask_logit - s.mask_logit).abs() < 1e-12);
            for c in 0..3 {
                assert!((o.color[c] - s.color[c]).abs() < 1e-12);
            }
        }
    }
}
