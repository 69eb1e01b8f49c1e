//! Losses, reverse-mode gradients and the fitting loop.
//!
//! A trainable scene is fitted to a frozen oracle scene by reconstructing its
//! renders, together with the eikonal, surface, residual-SDF, non-rigid and
//! orthogonality regularizers. Gradients are accumulated per fixed chunk of
//! rays or points and combined with a fixed-shape tree reduction, so results
//! do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::deform::Pose;
use crate::error::{Error, Result};
use crate::indexing::{opr_loss_with_grad, IndexerMlp};
use crate::math::{self, Vec3};
use crate::mlp::MlpCache;
use crate::par;
use crate::render::{GradAccum, PointGrad, PointTape, RayScratch, RenderOutput, RenderSettings, Renderer};
use crate::sampling::{Camera, Ray};
use crate::scene::Scene;

pub const SEGMENT_NAMES: [&str; 9] = [
    "plane_xy", "plane_yz", "plane_xz", "plane_xa", "plane_ya", "plane_za", "indexer", "decoder", "nonrigid",
];
pub const EIKONAL_STEP: f64 = 1e-3;
pub const SEMANTIC_WEIGHT: f64 = 0.1;
const RAY_CHUNK: usize = 8;
const POINT_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

/// Flat view of every trainable value of a scene. Mixing matrices and the
/// template are not part of it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub segments: Vec<Segment>,
    pub values: Vec<f64>,
}

fn segment_lengths(scene: &Scene) -> [usize; 9] {
    let p = scene.field.planes();
    [
        p[0].data().len(),
        p[1].data().len(),
        p[2].data().len(),
        p[3].data().len(),
        p[4].data().len(),
        p[5].data().len(),
        scene.indexer.mlp.param_count(),
        scene.decoder.mlp.param_count(),
        scene.nonrigid.mlp.param_count(),
    ]
}

impl ParameterSet {
    pub fn layout(scene: &Scene) -> Vec<Segment> {
        let mut off = 0;
        SEGMENT_NAMES
            .iter()
            .zip(segment_lengths(scene))
            .map(|(&name, len)| {
                let s = Segment { name, offset: off, len };
                off += len;
                s
            })
            .collect()
    }

    pub fn from_scene(scene: &Scene) -> Self {
        let segments = Self::layout(scene);
        let total = segments.last().map_or(0, |s| s.offset + s.len);
        let mut values = vec![0.0; total];
        for (i, p) in scene.field.planes().iter().enumerate() {
            let s = &segments[i];
            values[s.offset..s.offset + s.len].copy_from_slice(p.data());
        }
        let s = &segments[6];
        scene.indexer.mlp.write_params(&mut values[s.offset..s.offset + s.len]);
        let s = &segments[7];
        scene.decoder.mlp.write_params(&mut values[s.offset..s.offset + s.len]);
        let s = &segments[8];
        scene.nonrigid.mlp.write_params(&mut values[s.offset..s.offset + s.len]);
        Self { segments, values }
    }

    /// Write values back; the layout must match the scene's.
    pub fn apply(&self, scene: &mut Scene) -> Result<()> {
        write_params(&self.values, &self.segments, scene)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_of(&self, index: usize) -> &Segment {
        self.segments
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .expect("index within the parameter vector")
    }
}

fn write_params(values: &[f64], segments: &[Segment], scene: &mut Scene) -> Result<()> {
    if segments != ParameterSet::layout(scene).as_slice() {
        return Err(Error::Shape("parameter layout does not match the scene".into()));
    }
    for (i, p) in scene.field.planes_mut().into_iter().enumerate() {
        let s = &segments[i];
        p.data_mut().copy_from_slice(&values[s.offset..s.offset + s.len]);
    }
    let s = &segments[6];
    scene.indexer.mlp.read_params(&values[s.offset..s.offset + s.len]);
    let s = &segments[7];
    scene.decoder.mlp.read_params(&values[s.offset..s.offset + s.len]);
    let s = &segments[8];
    scene.nonrigid.mlp.read_params(&values[s.offset..s.offset + s.len]);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub eik: f64,
    pub surf: f64,
    pub rsdf: f64,
    pub nonrig: f64,
    pub orth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            eik: 0.1,
            surf: 0.01,
            rsdf: 0.01,
            nonrig: 0.01,
            orth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            recon: 0.0,
            eik: 0.0,
            surf: 0.0,
            rsdf: 0.0,
            nonrig: 0.0,
            orth: 0.0,
        }
    }

    fn as_array(&self) -> [f64; 6] {
        [self.recon, self.eik, self.surf, self.rsdf, self.nonrig, self.orth]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub recon: f64,
    pub eik: f64,
    pub surf: f64,
    pub rsdf: f64,
    pub nonrig: f64,
    pub orth: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [f64; 6] {
        [self.recon, self.eik, self.surf, self.rsdf, self.nonrig, self.orth]
    }

    /// Recompute `total` as the weighted sum of the terms.
    pub fn weigh(&mut self, w: &LossWeights) {
        self.total = self.terms().iter().zip(w.as_array()).map(|(t, w)| t * w).sum();
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|t| t.is_finite()) && self.total.is_finite()
    }
}

/// A pixel ray and the oracle's rendering of it.
#[derive(Clone, Debug, PartialEq)]
pub struct RayTarget {
    pub ray: Ray,
    pub rgb: [f64; 3],
    /// Accumulated mask weight per active attribute.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub rays: Vec<RayTarget>,
    /// Canonical points for the regularizers.
    pub points: Vec<Vec3>,
}

/// What is rendered: active attributes, pose and render settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub active: Vec<usize>,
    pub pose: Pose,
    pub settings: RenderSettings,
}

impl Problem {
    /// Training settings never stop early, so the loss is smooth.
    pub fn new(active: Vec<usize>, pose: Pose, mut settings: RenderSettings) -> Self {
        settings.early_stop = None;
        Self { active, pose, settings }
    }
}

/// Mean of `(|grad f| - 1)^2` with central differences of step `h`.
pub fn eikonal_of(f: impl Fn(Vec3) -> f64, points: &[Vec3], h: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sum: f64 = points
        .iter()
        .map(|&x| {
            let g = [0, 1, 2].map(|a| {
                let mut p = x;
                let mut m = x;
                p[a] += h;
                m[a] -= h;
                (f(p) - f(m)) / (2.0 * h)
            });
            (math::norm(g) - 1.0).powi(2)
        })
        .sum();
    sum / points.len() as f64
}

/// Eikonal term over the points whose probes all see the same acting
/// attributes. The fused SDF jumps where a box boundary cuts the stencil,
/// so those points carry no gradient information.
pub fn loss_eikonal(renderer: &Renderer<'_>, points: &[Vec3]) -> f64 {
    let kept: Vec<Vec3> = points
        .iter()
        .copied()
        .filter(|&x| stencil_is_uniform(renderer, x, EIKONAL_STEP))
        .collect();
    eikonal_of(|x| renderer.fused_sdf(x), &kept, EIKONAL_STEP)
}

fn stencil_is_uniform(renderer: &Renderer<'_>, x: Vec3, h: f64) -> bool {
    let acting = |p: Vec3| renderer.slots.iter().map(move |s| s.bbox.contains(p));
    (0..6).all(|k| {
        let mut p = x;
        p[k / 2] += if k % 2 == 0 { h } else { -h };
        acting(p).eq(acting(x))
    })
}

/// Mean of `exp(-100 |d|)`.
pub fn surface_of(d: &[f64]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.iter().map(|v| (-100.0 * v.abs()).exp()).sum::<f64>() / d.len() as f64
}

pub fn loss_surface(renderer: &Renderer<'_>, points: &[Vec3]) -> f64 {
    let d: Vec<f64> = points.iter().map(|&x| renderer.fused_sdf(x)).collect();
    surface_of(&d)
}

/// Mean absolute residual SDF.
pub fn loss_rsdf(delta_d: &[f64]) -> f64 {
    if delta_d.is_empty() {
        return 0.0;
    }
    delta_d.iter().map(|v| v.abs()).sum::<f64>() / delta_d.len() as f64
}

/// Mean Euclidean norm of non-rigid offsets.
pub fn loss_nonrig(offsets: &[Vec3]) -> f64 {
    if offsets.is_empty() {
        return 0.0;
    }
    offsets.iter().map(|&o| math::norm(o)).sum::<f64>() / offsets.len() as f64
}

/// Per-ray reconstruction error: rgb MSE plus the weighted MSE of the
/// semantic weights.
pub fn ray_error(rgb: [f64; 3], weights: &[f64], target_rgb: [f64; 3], target_weights: &[f64]) -> f64 {
    let c: f64 = (0..3).map(|i| (rgb[i] - target_rgb[i]).powi(2)).sum::<f64>() / 3.0;
    let s = if weights.is_empty() {
        0.0
    } else {
        weights
            .iter()
            .zip(target_weights)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / weights.len() as f64
    };
    c + SEMANTIC_WEIGHT * s
}

/// Mean [`ray_error`] over all pixels of two renders of the same view.
pub fn reconstruction_error(rendered: &RenderOutput, target: &RenderOutput) -> Result<f64> {
    if rendered.width != target.width || rendered.height != target.height || rendered.labels != target.labels {
        return Err(Error::Shape("renders differ in size or active attributes".into()));
    }
    let n = rendered.width * rendered.height;
    let k = rendered.labels.len();
    let sum: f64 = (0..n)
        .map(|i| {
            ray_error(
                rendered.pixel_rgb(i),
                &rendered.weights[i * k..(i + 1) * k],
                target.pixel_rgb(i),
                &target.weights[i * k..(i + 1) * k],
            )
        })
        .sum();
    Ok(sum / n as f64)
}

/// Reconstruction loss of `scene` against `oracle` over full renders.
pub fn loss_reconstruction(scene: &Scene, oracle: &Scene, cameras: &[Camera], problem: &Problem) -> Result<f64> {
    let mut total = 0.0;
    for cam in cameras {
        let a = scene
            .renderer(&problem.active, &problem.pose, problem.settings.clone())?
            .render(cam)?;
        let b = oracle
            .renderer(&problem.active, &problem.pose, problem.settings.clone())?
            .render(cam)?;
        total += reconstruction_error(&a, &b)?;
    }
    Ok(total / cameras.len().max(1) as f64)
}

/// Mean rgb PSNR in dB over all pixels.
pub fn psnr(a: &RenderOutput, b: &RenderOutput) -> f64 {
    let mse = a.rgb.iter().zip(&b.rgb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.rgb.len() as f64;
    -10.0 * mse.log10()
}

/// Partial sums of one chunk.
struct Part {
    recon: f64,
    eik: f64,
    surf: f64,
    rsdf: f64,
    nonrig: f64,
    grad: Option<GradAccum>,
}

impl Part {
    fn combine(mut self, other: Part) -> Part {
        self.recon += other.recon;
        self.eik += other.eik;
        self.surf += other.surf;
        self.rsdf += other.rsdf;
        self.nonrig += other.nonrig;
        if let (Some(a), Some(b)) = (self.grad.as_mut(), other.grad.as_ref()) {
            a.add(b);
        }
        self
    }
}

/// Loss and, optionally, its gradient over the [`ParameterSet`] layout.
pub fn evaluate(
    scene: &Scene,
    problem: &Problem,
    weights: &LossWeights,
    batch: &Batch,
    want_grad: bool,
) -> Result<(LossReport, Option<Vec<f64>>)> {
    weights.validate()?;
    let renderer = scene.renderer(&problem.active, &problem.pose, problem.settings.clone())?;
    let n_slots = renderer.slots.len();
    let n_rays = batch.rays.len();
    let n_pts = batch.points.len();

    let ray_chunks = n_rays.div_ceil(RAY_CHUNK);
    let ray_parts: Vec<Result<Part>> = par::map_indexed(ray_chunks, |c| {
        let mut part = Part {
            recon: 0.0,
            eik: 0.0,
            surf: 0.0,
            rsdf: 0.0,
            nonrig: 0.0,
            grad: want_grad.then(|| renderer.grad_zeros()),
        };
        let mut scratch = RayScratch::default();
        let mut g_w = vec![0.0; n_slots];
        for rt in &batch.rays[c * RAY_CHUNK..((c + 1) * RAY_CHUNK).min(n_rays)] {
            let r = renderer.trace(&rt.ray, &mut scratch, true)?;
            part.recon += ray_error(r.rgb, &r.weights, rt.rgb, &rt.weights);
            if let Some(acc) = part.grad.as_mut() {
                if weights.recon == 0.0 {
                    continue;
                }
                let scale = weights.recon / n_rays as f64;
                let g_rgb = [0, 1, 2].map(|i| scale * 2.0 * (r.rgb[i] - rt.rgb[i]) / 3.0);
                for (k, g) in g_w.iter_mut().enumerate() {
                    *g = scale * SEMANTIC_WEIGHT * 2.0 * (r.weights[k] - rt.weights[k]) / n_slots as f64;
                }
                renderer.backward_ray(&scratch, g_rgb, &g_w, acc);
            }
        }
        Ok(part)
    });

    // Pairs (point, acting attribute) do not depend on parameters.
    let pairs: usize = batch
        .points
        .iter()
        .map(|&x| renderer.slots.iter().filter(|s| s.bbox.contains(x)).count())
        .sum();
    let eik_pts = batch
        .points
        .iter()
        .filter(|&&x| stencil_is_uniform(&renderer, x, EIKONAL_STEP))
        .count();
    let point_chunks = n_pts.div_ceil(POINT_CHUNK);
    let point_parts: Vec<Part> = par::map_indexed(point_chunks, |c| {
        let mut part = Part {
            recon: 0.0,
            eik: 0.0,
            surf: 0.0,
            rsdf: 0.0,
            nonrig: 0.0,
            grad: want_grad.then(|| renderer.grad_zeros()),
        };
        let mut tape = PointTape::default();
        let mut probes: [PointTape; 6] = Default::default();
        let h = EIKONAL_STEP;
        for &x in &batch.points[c * POINT_CHUNK..((c + 1) * POINT_CHUNK).min(n_pts)] {
            renderer.eval_canonical(x, &mut tape, true);
            let d = tape.d;
            let e = (-100.0 * d.abs()).exp();
            part.surf += e;
            let members = tape.members();
            part.rsdf += members.iter().map(|s| s.dd.abs()).sum::<f64>();
            part.nonrig += members.iter().map(|s| math::norm(s.offset)).sum::<f64>();
            for (k, probe) in probes.iter_mut().enumerate() {
                let mut p = x;
                p[k / 2] += if k % 2 == 0 { h } else { -h };
                renderer.eval_canonical(p, probe, true);
            }
            let same = |t: &PointTape| t.members().iter().map(|s| s.slot).eq(members.iter().map(|s| s.slot));
            let uniform = probes.iter().all(same);
            let g = [0, 1, 2].map(|a| (probes[2 * a].d - probes[2 * a + 1].d) / (2.0 * h));
            let gn = math::norm(g);
            if uniform {
                part.eik += (gn - 1.0).powi(2);
            }

            if let Some(acc) = part.grad.as_mut() {
                let g_d = weights.surf * -100.0 * d.signum() * e / n_pts as f64;
                let per_pair = if pairs > 0 { 1.0 / pairs as f64 } else { 0.0 };
                let g_dd: Vec<f64> = members
                    .iter()
                    .map(|s| weights.rsdf * per_pair * s.dd.signum())
                    .collect();
                let g_off: Vec<Vec3> = members
                    .iter()
                    .map(|s| {
                        let n = math::norm(s.offset);
                        if n > 0.0 {
                            math::scale(s.offset, weights.nonrig * per_pair / n)
                        } else {
                            [0.0; 3]
                        }
                    })
                    .collect();
                renderer.backward_point(
                    &tape,
                    &PointGrad {
                        d: g_d,
                        color: [0.0; 3],
                        mask_weight: None,
                        delta_d: Some(&g_dd),
                        offset: Some(&g_off),
                    },
                    acc,
                );
                if weights.eik > 0.0 && gn > 0.0 && uniform {
                    let coef = weights.eik * 2.0 * (gn - 1.0) / gn / eik_pts as f64;
                    for (k, probe) in probes.iter().enumerate() {
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        let gd = coef * g[k / 2] * sign / (2.0 * h);
                        renderer.backward_point(
                            probe,
                            &PointGrad {
                                d: gd,
                                color: [0.0; 3],
                                mask_weight: None,
                                delta_d: None,
                                offset: None,
                            },
                            acc,
                        );
                    }
                }
            }
        }
        part
    });

    let mut parts = Vec::with_capacity(ray_parts.len() + point_parts.len());
    for p in ray_parts {
        parts.push(p?);
    }
    parts.extend(point_parts);
    let total = par::tree_reduce(parts, Part::combine);

    let mut report = LossReport::default();
    let mut grad_acc = None;
    if let Some(t) = total {
        report.recon = if n_rays > 0 { t.recon / n_rays as f64 } else { 0.0 };
        report.eik = if eik_pts > 0 { t.eik / eik_pts as f64 } else { 0.0 };
        report.surf = if n_pts > 0 { t.surf / n_pts as f64 } else { 0.0 };
        report.rsdf = if pairs > 0 { t.rsdf / pairs as f64 } else { 0.0 };
        report.nonrig = if pairs > 0 { t.nonrig / pairs as f64 } else { 0.0 };
        grad_acc = t.grad;
    }

    // Orthogonality over every catalog index, plus the index gradients
    // coming back through the contractions.
    let indexer = &scene.indexer;
    let labels = indexer.labels();
    let mut caches = vec![MlpCache::default(); labels];
    let indexes = (0..labels)
        .map(|l| indexer.forward_cached(l, &mut caches[l]))
        .collect::<Result<Vec<_>>>()?;
    let vecs: Vec<&[f64]> = indexes.iter().map(|i| i.vector()).collect();
    let (orth, orth_grad) = opr_loss_with_grad(&vecs);
    report.orth = orth;
    report.weigh(weights);

    if !want_grad {
        return Ok((report, None));
    }
    let segments = ParameterSet::layout(scene);
    let mut grad = vec![0.0; segments.last().map_or(0, |s| s.offset + s.len)];
    let mut index_grads: Vec<Vec<f64>> = orth_grad
        .into_iter()
        .map(|g| g.into_iter().map(|v| v * weights.orth).collect())
        .collect();
    if let Some(acc) = grad_acc {
        let seg = |i: usize| segments[i].offset..segments[i].offset + segments[i].len;
        // Spatial gradients arrive in term order xy, xz, yz.
        grad[seg(0)].copy_from_slice(&acc.spatial[0]);
        grad[seg(2)].copy_from_slice(&acc.spatial[1]);
        grad[seg(1)].copy_from_slice(&acc.spatial[2]);
        let mut za = vec![0.0; segments[5].len];
        let mut ya = vec![0.0; segments[4].len];
        let mut xa = vec![0.0; segments[3].len];
        for (slot, profiles) in renderer.slots.iter().zip(&acc.profiles) {
            let a = indexes[slot.label].vector();
            scene
                .field
                .contraction_backward(a, profiles, [&mut za, &mut ya, &mut xa], &mut index_grads[slot.label]);
        }
        grad[seg(3)].copy_from_slice(&xa);
        grad[seg(4)].copy_from_slice(&ya);
        grad[seg(5)].copy_from_slice(&za);
        grad[seg(7)].copy_from_slice(&acc.decoder);
        grad[seg(8)].copy_from_slice(&acc.nonrigid);
    }
    let s = &segments[6];
    let g_idx = &mut grad[s.offset..s.offset + s.len];
    for l in 0..labels {
        if index_grads[l].iter().any(|&v| v != 0.0) {
            indexer.backward(&caches[l], &indexes[l], &index_grads[l], g_idx);
        }
    }
    for s in &segments {
        if grad[s.offset..s.offset + s.len].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                segment: s.name.to_string(),
            });
        }
    }
    Ok((report, Some(grad)))
}

/// Weighted total loss.
pub fn total_loss(scene: &Scene, problem: &Problem, weights: &LossWeights, batch: &Batch) -> Result<LossReport> {
    Ok(evaluate(scene, problem, weights, batch, false)?.0)
}

/// Loss and flat gradient.
pub fn gradient(
    scene: &Scene,
    problem: &Problem,
    weights: &LossWeights,
    batch: &Batch,
) -> Result<(LossReport, Vec<f64>)> {
    let (r, g) = evaluate(scene, problem, weights, batch, true)?;
    Ok((r, g.expect("gradient requested")))
}

/// Scalar objective over a flat parameter vector.
pub trait Objective {
    fn eval(&mut self, params: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)>;
}

/// The scene loss as an [`Objective`] over its [`ParameterSet`].
pub struct SceneObjective {
    pub scene: Scene,
    pub problem: Problem,
    pub weights: LossWeights,
    pub batch: Batch,
    segments: Vec<Segment>,
}

impl SceneObjective {
    pub fn new(scene: Scene, problem: Problem, weights: LossWeights, batch: Batch) -> Self {
        let segments = ParameterSet::layout(&scene);
        Self {
            scene,
            problem,
            weights,
            batch,
            segments,
        }
    }

    pub fn parameters(&self) -> ParameterSet {
        ParameterSet::from_scene(&self.scene)
    }
}

impl Objective for SceneObjective {
    fn eval(&mut self, params: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        write_params(params, &self.segments, &mut self.scene)?;
        let (r, g) = evaluate(&self.scene, &self.problem, &self.weights, &self.batch, want_grad)?;
        Ok((r.total, g))
    }
}

/// Analytic gradient and central differences at selected coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientCheck {
    /// Relative error, or absolute error when both values are tiny.
    pub fn passes(&self, rel: f64, abs: f64, tiny: f64) -> bool {
        let diff = (self.analytic - self.numeric).abs();
        if self.analytic.abs().max(self.numeric.abs()) < tiny {
            diff < abs
        } else {
            diff / self.analytic.abs().max(self.numeric.abs()) < rel
        }
    }
}

pub fn check_gradient(
    obj: &mut dyn Objective,
    params: &[f64],
    indices: &[usize],
    h: f64,
) -> Result<Vec<GradientCheck>> {
    let (_, g) = obj.eval(params, true)?;
    let g = g.ok_or_else(|| Error::Shape("objective returned no gradient".into()))?;
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = p[i];
        p[i] = orig + h;
        let (fp, _) = obj.eval(&p, false)?;
        p[i] = orig - h;
        let (fm, _) = obj.eval(&p, false)?;
        p[i] = orig;
        out.push(GradientCheck {
            index: i,
            analytic: g[i],
            numeric: (fp - fm) / (2.0 * h),
        });
    }
    obj.eval(params, false)?;
    Ok(out)
}

/// Momentum SGD state. Parameters are rounded to storage precision after
/// every update.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub velocity: Vec<f64>,
    pub momentum: f64,
}

impl Momentum {
    pub fn new(len: usize, momentum: f64) -> Self {
        Self {
            velocity: vec![0.0; len],
            momentum,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) {
        for i in 0..params.len() {
            self.velocity[i] = self.momentum * self.velocity[i] + grad[i];
            params[i] = math::to_storage(params[i] - lr[i] * self.velocity[i]);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub rays_per_step: usize,
    pub points_per_step: usize,
    pub seed: u64,
    /// Render resolution of each stage; steps are split evenly.
    pub resolutions: Vec<usize>,
    /// Number of orbit views rendered from the oracle per stage.
    pub views: usize,
    pub samples: usize,
    /// Learning-rate multipliers for planes, indexer, decoder and non-rigid network.
    pub lr_scale: [f64; 4],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            learning_rate: 0.05,
            momentum: 0.9,
            steps: 2000,
            rays_per_step: 256,
            points_per_step: 64,
            seed: 0,
            resolutions: vec![32, 64],
            views: 8,
            samples: 64,
            lr_scale: [1.0, 0.1, 1.0, 0.1],
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.steps >= 1
            && self.rays_per_step >= 1
            && self.views >= 1
            && self.samples >= 1
            && !self.resolutions.is_empty()
            && self.resolutions.iter().all(|&r| r >= 1)
            && self.lr_scale.iter().all(|s| s.is_finite() && *s >= 0.0);
        if !ok {
            return Err(Error::Config("invalid fit configuration".into()));
        }
        Ok(())
    }

    fn lr_vector(&self, segments: &[Segment]) -> Vec<f64> {
        let mut lr = Vec::new();
        for s in segments {
            let group = match s.name {
                "indexer" => 1,
                "decoder" => 2,
                "nonrigid" => 3,
                _ => 0,
            };
            lr.extend(std::iter::repeat_n(self.learning_rate * self.lr_scale[group], s.len));
        }
        lr
    }
}

/// Oracle renders of one view, used as reconstruction targets.
#[derive(Clone, Debug)]
pub struct ViewTarget {
    pub camera: Camera,
    pub render: RenderOutput,
}

/// Orbit cameras spread evenly in yaw with alternating pitch.
pub fn training_cameras(views: usize, res: usize) -> Result<Vec<Camera>> {
    const PITCH: [f64; 3] = [0.0, 15.0, -10.0];
    (0..views)
        .map(|k| {
            Camera::orbit(
                360.0 * k as f64 / views as f64,
                PITCH[k % 3],
                crate::sampling::DEFAULT_DIST,
                res,
            )
        })
        .collect()
}

pub fn render_targets(oracle: &Scene, problem: &Problem, cameras: &[Camera]) -> Result<Vec<ViewTarget>> {
    let renderer = oracle.renderer(&problem.active, &problem.pose, problem.settings.clone())?;
    cameras
        .iter()
        .map(|c| {
            Ok(ViewTarget {
                camera: c.clone(),
                render: renderer.render(c)?,
            })
        })
        .collect()
}

/// Regularizer points: half uniform in the cube, half near the template.
pub fn sample_points<R: Rng + ?Sized>(scene: &Scene, n: usize, rng: &mut R) -> Vec<Vec3> {
    let noise = Normal::new(0.0, 0.05).unwrap();
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))
            } else {
                let v = &scene.template.vertices[rng.gen_range(0..scene.template.vertices.len())];
                v.position.map(|c| (c + noise.sample(rng)).clamp(-1.0, 1.0))
            }
        })
        .collect()
}

fn sample_rays<R: Rng + ?Sized>(targets: &[ViewTarget], n: usize, rng: &mut R) -> Vec<RayTarget> {
    (0..n)
        .map(|_| {
            let v = &targets[rng.gen_range(0..targets.len())];
            let (w, h) = (v.camera.width, v.camera.height);
            let (px, py) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let i = py * w + px;
            let k = v.render.labels.len();
            RayTarget {
                ray: v.camera.ray(px, py),
                rgb: v.render.pixel_rgb(i),
                weights: v.render.weights[i * k..(i + 1) * k].to_vec(),
            }
        })
        .collect()
}

/// Fit `scene` to renders of `oracle`. `on_step` sees every report as it
/// is produced.
pub fn fit(
    scene: &mut Scene,
    oracle: &Scene,
    problem: &Problem,
    config: &FitConfig,
    mut on_step: impl FnMut(&LossReport),
) -> Result<Vec<LossReport>> {
    config.validate()?;
    if scene.catalog != oracle.catalog {
        return Err(Error::CatalogMismatch);
    }
    let mut problem = problem.clone();
    problem.settings.early_stop = None;
    problem.settings.samples = config.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParameterSet::from_scene(scene);
    let lr = config.lr_vector(&params.segments);
    let mut opt = Momentum::new(params.len(), config.momentum);
    let mut history = Vec::with_capacity(config.steps);
    let stages = config.resolutions.len();
    let mut step = 0;
    for (k, &res) in config.resolutions.iter().enumerate() {
        let end = config.steps * (k + 1) / stages;
        if end == step {
            continue;
        }
        let cameras = training_cameras(config.views, res)?;
        let targets = render_targets(oracle, &problem, &cameras)?;
        while step < end {
            let batch = Batch {
                rays: sample_rays(&targets, config.rays_per_step, &mut rng),
                points: sample_points(scene, config.points_per_step, &mut rng),
            };
            let (mut report, grad) = match evaluate(scene, &problem, &config.weights, &batch, true) {
                Ok((r, g)) => (r, g.expect("gradient requested")),
                Err(Error::NonFiniteGradient { segment }) => {
                    return Err(Error::Divergence {
                        step,
                        detail: format!("non-finite gradient in {segment}"),
                    })
                }
                Err(e) => return Err(e),
            };
            report.step = step;
            if !report.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: "non-finite loss".into(),
                });
            }
            on_step(&report);
            history.push(report);
            opt.step(&mut params.values, &grad, &lr);
            params.apply(scene)?;
            step += 1;
        }
    }
    Ok(history)
}

/// Indexer-only momentum descent on `lambda * opr_loss`; returns the loss
/// history.
pub fn fit_orthogonality(
    indexer: &mut IndexerMlp,
    lambda: f64,
    steps: usize,
    lr: f64,
    momentum: f64,
) -> Result<Vec<f64>> {
    let n = indexer.mlp.param_count();
    let mut params = vec![0.0; n];
    indexer.mlp.write_params(&mut params);
    let mut opt = Momentum::new(n, momentum);
    let lrs = vec![lr; n];
    let mut history = Vec::with_capacity(steps);
    let labels = indexer.labels();
    let mut caches = vec![MlpCache::default(); labels];
    for step in 0..steps {
        let indexes = (0..labels)
            .map(|l| indexer.forward_cached(l, &mut caches[l]))
            .collect::<Result<Vec<_>>>()?;
        let vecs: Vec<&[f64]> = indexes.iter().map(|i| i.vector()).collect();
        let (loss, grads) = opr_loss_with_grad(&vecs);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite orthogonality loss".into(),
            });
        }
        history.push(loss);
        let mut g = vec![0.0; n];
        for l in 0..labels {
            let gl: Vec<f64> = grads[l].iter().map(|v| v * lambda).collect();
            indexer.backward(&caches[l], &indexes[l], &gl, &mut g);
        }
        opt.step(&mut params, &g, &lrs);
        indexer.mlp.read_params(&params);
    }
    Ok(history)
}
