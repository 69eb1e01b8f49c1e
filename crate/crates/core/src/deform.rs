//! Skeletal canonicalization.
//!
//! Observation-space points are pulled back to the canonical (rest) frame
//! by blending the inverse per-vertex skinning transforms of their `k`
//! nearest posed template vertices, weighted by inverse distance. A small
//! MLP adds a bounded non-rigid offset on top. The template is a synthetic
//! humanoid made of capsules, which also provides the analytic template SDF.

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::mlp::{Activation, Dense, Mlp, MlpCache};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_MAX_OFFSET: f64 = 0.05;
pub const DEFAULT_OCTAVES: usize = 4;
pub const SHAPE_COEFFS: usize = 2;
pub const POSE_COEFFS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose world position; the rest rotation is the identity.
    pub rest_position: Vec3,
    /// Which pose-blend coefficient this joint's rotation feeds (0 upper, 1 lower body).
    pub pose_group: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Capsule {
    pub joint: usize,
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinVertex {
    pub position: Vec3,
    pub joint: usize,
    /// Per-coefficient displacement bases.
    pub shape: [Vec3; SHAPE_COEFFS],
    pub pose: [Vec3; POSE_COEFFS],
}

/// Articulated capsule template with surface samples and blend shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSkeleton {
    pub joints: Vec<Joint>,
    pub capsules: Vec<Capsule>,
    pub vertices: Vec<SkinVertex>,
    pub k: usize,
}

/// Signed distance to a capsule (negative inside).
#[inline]
pub fn capsule_sdf(p: Vec3, a: Vec3, b: Vec3, radius: f64) -> f64 {
    let pa = math::sub(p, a);
    let ba = math::sub(b, a);
    let len2 = math::dot(ba, ba);
    let h = if len2 > 0.0 {
        (math::dot(pa, ba) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    math::norm(math::sub(pa, math::scale(ba, h))) - radius
}

impl TemplateSkeleton {
    pub fn validate(&self) -> Result<()> {
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if self.joints.is_empty() || roots != 1 {
            return Err(Error::Shape("skeleton must have exactly one root joint".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::Shape(format!("joint {i} must come after its parent")));
                }
            }
            if j.pose_group as usize >= POSE_COEFFS {
                return Err(Error::Shape(format!("joint {i} has an invalid pose group")));
            }
        }
        for c in &self.capsules {
            if c.joint >= self.joints.len() || !(c.radius > 0.0) {
                return Err(Error::Shape("capsule with invalid joint or radius".into()));
            }
        }
        if self.k == 0 || self.vertices.len() < self.k {
            return Err(Error::Shape(format!(
                "template has {} vertices, needs at least k = {}",
                self.vertices.len(),
                self.k
            )));
        }
        for v in &self.vertices {
            if v.joint >= self.joints.len() {
                return Err(Error::Shape("vertex attached to a missing joint".into()));
            }
            if v.position.iter().any(|c| !(-1.0..=1.0).contains(c)) {
                return Err(Error::Shape("rest vertex outside the unit cube".into()));
            }
        }
        Ok(())
    }

    pub fn joint(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Minimum capsule distance in canonical space.
    pub fn sdf(&self, p: Vec3) -> f64 {
        self.capsules
            .iter()
            .map(|c| capsule_sdf(p, c.a, c.b, c.radius))
            .fold(f64::INFINITY, f64::min)
    }

    /// Synthetic humanoid of 15 capsules standing along +y inside the unit
    /// cube, facing +z.
    pub fn humanoid() -> Self {
        let j = |name: &str, parent: Option<usize>, p: Vec3, g: u8| Joint {
            name: name.to_string(),
            parent,
            rest_position: p,
            pose_group: g,
        };
        let joints = vec![
            j("pelvis", None, [0.0, 0.0, 0.0], 1),
            j("spine", Some(0), [0.0, 0.25, 0.0], 0),
            j("neck", Some(1), [0.0, 0.58, 0.0], 0),
            j("l_shoulder", Some(1), [0.2, 0.5, 0.0], 0),
            j("l_elbow", Some(3), [0.3, 0.25, 0.0], 0),
            j("r_shoulder", Some(1), [-0.2, 0.5, 0.0], 0),
            j("r_elbow", Some(5), [-0.3, 0.25, 0.0], 0),
            j("l_hip", Some(0), [0.1, -0.05, 0.0], 1),
            j("l_knee", Some(7), [0.11, -0.46, 0.0], 1),
            j("l_ankle", Some(8), [0.11, -0.86, 0.0], 1),
            j("r_hip", Some(0), [-0.1, -0.05, 0.0], 1),
            j("r_knee", Some(10), [-0.11, -0.46, 0.0], 1),
            j("r_ankle", Some(11), [-0.11, -0.86, 0.0], 1),
        ];
        let c = |joint: usize, a: Vec3, b: Vec3, radius: f64| Capsule { joint, a, b, radius };
        let capsules = vec![
            c(2, [0.0, 0.72, 0.0], [0.0, 0.8, 0.0], 0.11),
            c(2, [0.0, 0.56, 0.0], [0.0, 0.64, 0.0], 0.05),
            c(1, [-0.08, 0.42, 0.0], [0.08, 0.42, 0.0], 0.12),
            c(1, [0.0, 0.14, 0.0], [0.0, 0.3, 0.0], 0.12),
            c(0, [-0.07, 0.0, 0.0], [0.07, 0.0, 0.0], 0.11),
            c(3, [0.2, 0.5, 0.0], [0.3, 0.26, 0.0], 0.05),
            c(4, [0.3, 0.24, 0.0], [0.36, 0.0, 0.0], 0.045),
            c(5, [-0.2, 0.5, 0.0], [-0.3, 0.26, 0.0], 0.05),
            c(6, [-0.3, 0.24, 0.0], [-0.36, 0.0, 0.0], 0.045),
            c(7, [0.1, -0.06, 0.0], [0.11, -0.44, 0.0], 0.07),
            c(8, [0.11, -0.48, 0.0], [0.11, -0.84, 0.0], 0.055),
            c(9, [0.11, -0.9, 0.0], [0.11, -0.9, 0.12], 0.04),
            c(10, [-0.1, -0.06, 0.0], [-0.11, -0.44, 0.0], 0.07),
            c(11, [-0.11, -0.48, 0.0], [-0.11, -0.84, 0.0], 0.055),
            c(12, [-0.11, -0.9, 0.0], [-0.11, -0.9, 0.12], 0.04),
        ];
        let mut vertices = Vec::new();
        for cap in &capsules {
            let group = joints[cap.joint].pose_group as usize;
            for (p, n) in capsule_surface_samples(cap, 8, 0.06) {
                let mut pose = [[0.0; 3]; POSE_COEFFS];
                pose[group] = math::scale(n, 0.01);
                vertices.push(SkinVertex {
                    position: p,
                    joint: cap.joint,
                    shape: [math::scale(n, 0.02), [0.0, 0.03 * p[1], 0.0]],
                    pose,
                });
            }
        }
        Self {
            joints,
            capsules,
            vertices,
            k: DEFAULT_K,
        }
    }

    /// Axis-aligned bounds of the rest-pose vertices.
    pub fn rest_bounds(&self) -> (Vec3, Vec3) {
        bounds(self.vertices.iter().map(|v| v.position))
    }
}

fn bounds(points: impl Iterator<Item = Vec3>) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Points (with outward normals) on a capsule surface: rings of `around`
/// samples spaced about `spacing` along the axis plus one pole per cap.
fn capsule_surface_samples(cap: &Capsule, around: usize, spacing: f64) -> Vec<(Vec3, Vec3)> {
    let axis = math::sub(cap.b, cap.a);
    let len = math::norm(axis);
    let dir = math::scale(axis, 1.0 / len);
    let helper = if dir[1].abs() < 0.9 {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let e1 = math::normalize(math::cross(dir, helper));
    let e2 = math::cross(dir, e1);
    let rings = ((len / spacing).ceil() as usize).max(1) + 1;
    let mut out = Vec::new();
    for i in 0..rings {
        let t = i as f64 / (rings - 1) as f64;
        let c = math::add(cap.a, math::scale(axis, t));
        for k in 0..around {
            let phi = std::f64::consts::TAU * (k as f64 + 0.5 * (i % 2) as f64) / around as f64;
            let n = math::add(math::scale(e1, phi.cos()), math::scale(e2, phi.sin()));
            out.push((math::add(c, math::scale(n, cap.radius)), n));
        }
    }
    for (end, sign) in [(cap.a, -1.0), (cap.b, 1.0)] {
        let n = math::scale(dir, sign);
        out.push((math::add(end, math::scale(n, cap.radius)), n));
    }
    out
}

/// Joint rotations (unit quaternions `w, x, y, z`) and shape coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub theta: Vec<[f64; 4]>,
    pub beta: [f64; SHAPE_COEFFS],
}

impl Pose {
    pub fn rest(joints: usize) -> Self {
        Self {
            theta: vec![[1.0, 0.0, 0.0, 0.0]; joints],
            beta: [0.0; SHAPE_COEFFS],
        }
    }

    /// Rest pose with selected joints rotated by XYZ Euler angles in degrees.
    pub fn from_euler_degrees(
        template: &TemplateSkeleton,
        rotations: &[(&str, [f64; 3])],
        beta: [f64; SHAPE_COEFFS],
    ) -> Result<Self> {
        let mut pose = Self::rest(template.joints.len());
        pose.beta = beta;
        for (name, [ax, ay, az]) in rotations {
            let j = template
                .joint(name)
                .ok_or_else(|| Error::Config(format!("unknown joint `{name}`")))?;
            let q = UnitQuaternion::from_euler_angles(ax.to_radians(), ay.to_radians(), az.to_radians());
            pose.theta[j] = [q.w, q.i, q.j, q.k];
        }
        Ok(pose)
    }

    pub fn validate(&self, template: &TemplateSkeleton) -> Result<()> {
        if self.theta.len() != template.joints.len() {
            return Err(Error::Shape(format!(
                "pose has {} rotations for {} joints",
                self.theta.len(),
                template.joints.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Shape("non-finite shape coefficients".into()));
        }
        for q in &self.theta {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                return Err(Error::Shape(format!("rotation is not a unit quaternion (norm {n})")));
            }
        }
        Ok(())
    }

    pub fn is_rest(&self) -> bool {
        self.beta.iter().all(|&b| b == 0.0) && self.theta.iter().all(|q| *q == [1.0, 0.0, 0.0, 0.0])
    }

    /// Pose-blend coefficients: per body group, the sum of `sin^2(angle / 2)`
    /// over its joints. Zero at rest.
    pub fn blend_coefficients(&self, template: &TemplateSkeleton) -> [f64; POSE_COEFFS] {
        let mut f = [0.0; POSE_COEFFS];
        for (q, j) in self.theta.iter().zip(&template.joints) {
            f[j.pose_group as usize] += 1.0 - q[0] * q[0];
        }
        f
    }
}

/// Row-major 3x4 affine matrix.
pub type Affine = [[f64; 4]; 3];

#[inline]
fn apply_affine(m: &Affine, p: Vec3) -> Vec3 {
    [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
}

fn isometry_to_affine(iso: &Isometry3<f64>) -> Affine {
    let m = iso.to_homogeneous();
    [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]])
}

/// Template posed once for a given [`Pose`], shared read-only by every query.
#[derive(Clone, Debug)]
pub struct PosedTemplate {
    rest: bool,
    k: usize,
    pub vertices: Vec<Vec3>,
    /// Per-vertex inverse skinning transform `M(beta, theta)^-1`.
    pub inverse: Vec<Affine>,
    pub bounds: (Vec3, Vec3),
    pub beta: [f64; SHAPE_COEFFS],
    pub blend: [f64; POSE_COEFFS],
}

/// World transform of every joint.
pub fn forward_kinematics(template: &TemplateSkeleton, pose: &Pose) -> Vec<Isometry3<f64>> {
    let mut world: Vec<Isometry3<f64>> = Vec::with_capacity(template.joints.len());
    for (j, q) in template.joints.iter().zip(&pose.theta) {
        let p = Vector3::from(j.rest_position);
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        let local = Translation3::from(p) * rot * Translation3::from(-p);
        let g = match j.parent {
            Some(parent) => world[parent] * local,
            None => local,
        };
        world.push(g);
    }
    world
}

impl PosedTemplate {
    pub fn new(template: &TemplateSkeleton, pose: &Pose) -> Result<Self> {
        pose.validate(template)?;
        let blend = pose.blend_coefficients(template);
        if pose.is_rest() {
            let (lo, hi) = template.rest_bounds();
            return Ok(Self {
                rest: true,
                k: template.k,
                vertices: template.vertices.iter().map(|v| v.position).collect(),
                inverse: vec![
                    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
                    template.vertices.len()
                ],
                bounds: (lo, hi),
                beta: pose.beta,
                blend,
            });
        }
        let world = forward_kinematics(template, pose);
        let mut vertices = Vec::with_capacity(template.vertices.len());
        let mut inverse = Vec::with_capacity(template.vertices.len());
        for v in &template.vertices {
            let mut delta = [0.0; 3];
            for c in 0..SHAPE_COEFFS {
                delta = math::add(delta, math::scale(v.shape[c], pose.beta[c]));
            }
            for c in 0..POSE_COEFFS {
                delta = math::add(delta, math::scale(v.pose[c], blend[c]));
            }
            let m = world[v.joint] * Translation3::from(Vector3::from(delta));
            let posed = m.transform_point(&nalgebra::Point3::from(v.position));
            vertices.push([posed.x, posed.y, posed.z]);
            inverse.push(isometry_to_affine(&m.inverse()));
        }
        let bounds = bounds(vertices.iter().copied());
        Ok(Self {
            rest: false,
            k: template.k,
            vertices,
            inverse,
            bounds,
            beta: pose.beta,
            blend,
        })
    }

    pub fn is_rest(&self) -> bool {
        self.rest
    }

    /// Skinning part of the warp, without the non-rigid offset.
    pub fn to_canonical(&self, x: Vec3) -> Result<Vec3> {
        if self.rest {
            return Ok(x);
        }
        let m = self.blended_transform(x);
        let det = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
        .determinant();
        if !(det.abs() >= 1e-9) {
            return Err(Error::DegenerateSkinning { det });
        }
        Ok(apply_affine(&m, x))
    }

    /// `sum_i w_i M_0 M_i^-1` over the k nearest posed vertices; the
    /// canonical transform `M_0` is the identity (zero shape, rest pose).
    pub fn blended_transform(&self, x: Vec3) -> Affine {
        let mut m = [[0.0; 4]; 3];
        for (id, w) in knn_weights(x, &self.vertices, self.k) {
            let inv = &self.inverse[id];
            for r in 0..3 {
                for c in 0..4 {
                    m[r][c] += w * inv[r][c];
                }
            }
        }
        m
    }
}

/// `k` nearest points to `x` with normalized inverse-distance weights. A
/// query closer than `1e-9` to a point returns that point alone.
pub fn knn_weights(x: Vec3, points: &[Vec3], k: usize) -> Vec<(usize, f64)> {
    let k = k.min(points.len()).max(1);
    // Sorted ascending by squared distance; ties keep the lower index.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        let d = math::sub(*p, x);
        let d2 = math::dot(d, d);
        if best.len() == k && d2 >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d2);
        best.insert(pos, (d2, i));
        best.truncate(k);
    }
    if let Some(&(d2, i)) = best.first() {
        if d2.sqrt() < 1e-9 {
            return vec![(i, 1.0)];
        }
    }
    let inv: Vec<f64> = best.iter().map(|(d2, _)| 1.0 / d2.sqrt()).collect();
    let total: f64 = inv.iter().sum();
    best.iter().zip(inv).map(|(&(_, i), w)| (i, w / total)).collect()
}

/// Warp an observation-space point to canonical space (skinning only; see
/// [`NonRigidMlp`] for the learned offset).
pub fn observation_to_canonical(x: Vec3, posed: &PosedTemplate) -> Result<Vec3> {
    posed.to_canonical(x)
}

/// Analytic template SDF at a canonical point.
pub fn template_sdf(x: Vec3, template: &TemplateSkeleton) -> f64 {
    template.sdf(x)
}

/// Positional encoding `[p, sin(2^k pi p), cos(2^k pi p)]` for `k < octaves`.
pub fn embed(p: Vec3, octaves: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&p);
    for k in 0..octaves {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for c in p {
            out.push((f * c).sin());
        }
        for c in p {
            out.push((f * c).cos());
        }
    }
}

/// Non-rigid offset network: (embedding, shape, pose-blend, mask code) to a
/// 3-vector whose components are squashed by `tanh`, so the offset norm never
/// exceeds `max_offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonRigidMlp {
    pub mlp: Mlp,
    pub max_offset: f64,
    pub octaves: usize,
}

#[derive(Clone, Debug, Default)]
pub struct NonRigidCache {
    pub mlp: MlpCache,
    pub squashed: Vec3,
    input: Vec<f64>,
}

pub const NONRIGID_WIDTH: usize = 32;

impl NonRigidMlp {
    pub fn input_width(octaves: usize) -> usize {
        3 + 6 * octaves + SHAPE_COEFFS + POSE_COEFFS + 1
    }

    /// Random hidden layers with a zero output layer: offsets start at zero.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Self::input_width(DEFAULT_OCTAVES);
        let mut mlp = Mlp::gaussian(&[w, NONRIGID_WIDTH, NONRIGID_WIDTH, 3], Activation::Tanh, &mut rng);
        *mlp.layers.last_mut().unwrap() = Dense::zeros(NONRIGID_WIDTH, 3);
        Self {
            mlp,
            max_offset: DEFAULT_MAX_OFFSET,
            octaves: DEFAULT_OCTAVES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.mlp.input_width() != Self::input_width(self.octaves) || self.mlp.output_width() != 3 {
            return Err(Error::Shape(
                "non-rigid network has the wrong input/output width".into(),
            ));
        }
        if !(self.max_offset >= 0.0 && self.max_offset.is_finite()) {
            return Err(Error::Shape("invalid max offset".into()));
        }
        Ok(())
    }

    /// True when the output layer is identically zero, so every offset is
    /// exactly zero.
    pub fn is_identity(&self) -> bool {
        let last = self.mlp.layers.last().unwrap();
        last.weight.iter().chain(&last.bias).all(|&v| v == 0.0)
    }

    fn fill_input(
        &self,
        x0: Vec3,
        beta: &[f64; SHAPE_COEFFS],
        blend: &[f64; POSE_COEFFS],
        mask: f64,
        out: &mut Vec<f64>,
    ) {
        embed(x0, self.octaves, out);
        out.extend_from_slice(beta);
        out.extend_from_slice(blend);
        out.push(mask);
    }

    pub fn offset(&self, x0: Vec3, beta: &[f64; SHAPE_COEFFS], blend: &[f64; POSE_COEFFS], mask: f64) -> Vec3 {
        let mut cache = NonRigidCache::default();
        self.offset_cached(x0, beta, blend, mask, &mut cache)
    }

    pub fn offset_cached(
        &self,
        x0: Vec3,
        beta: &[f64; SHAPE_COEFFS],
        blend: &[f64; POSE_COEFFS],
        mask: f64,
        cache: &mut NonRigidCache,
    ) -> Vec3 {
        let mut input = std::mem::take(&mut cache.input);
        self.fill_input(x0, beta, blend, mask, &mut input);
        let raw = self.mlp.forward_cached(&input, &mut cache.mlp);
        let th = [math::tanh(raw[0]), math::tanh(raw[1]), math::tanh(raw[2])];
        cache.input = input;
        cache.squashed = th;
        let s = self.max_offset / 3f64.sqrt();
        [s * th[0], s * th[1], s * th[2]]
    }

    pub fn backward(&self, cache: &NonRigidCache, grad_offset: Vec3, grad_params: &mut [f64]) {
        let s = self.max_offset / 3f64.sqrt();
        let g = [0, 1, 2].map(|i| grad_offset[i] * s * (1.0 - cache.squashed[i] * cache.squashed[i]));
        self.mlp.backward(&cache.mlp, &g, grad_params, None);
    }
}

/// Free-function form of [`NonRigidMlp::offset`].
pub fn nonrigid_offset(mlp: &NonRigidMlp, x0: Vec3, posed: &PosedTemplate, mask_value: f64) -> Vec3 {
    mlp.offset(x0, &posed.beta, &posed.blend, mask_value)
}
