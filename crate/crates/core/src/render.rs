//! Decoding, compositional fusion and volume rendering.
//!
//! Every active attribute is decoded at each sample that falls inside its
//! bounding box; the results are fused over the template SDF with softmax
//! mask weights and integrated front to back. The same per-sample tape backs
//! both plain rendering and the reverse pass used by the optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{NonRigidCache, NonRigidMlp, Pose, PosedTemplate, TemplateSkeleton};
use crate::error::{Error, Result};
use crate::field::{AttributeContribution, ContributionCache};
use crate::math::{self, Vec3};
use crate::mlp::{Activation, Dense, Mlp, MlpCache};
use crate::par;
use crate::sampling::{self, AttributeBBox, Camera, DepthSample, Ray};

pub const DD_BOUND: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.05;
pub const DECODER_WIDTH: usize = 64;
pub const DEFAULT_FEATURE_WIDTH: usize = 8;
pub const HEAD_DD: usize = 0;
pub const HEAD_MASK: usize = 1;
pub const HEAD_COLOR: usize = 2;
pub const HEAD_FEATURE: usize = 5;
/// Label written to the semantic image where nothing opaque was hit.
pub const BACKGROUND_LABEL: u8 = 255;

/// Shared decoder: two tanh trunk layers of width 64 and one linear layer
/// holding every head (Δd, mask logit, color, feature).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderMlp {
    pub mlp: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDecodeOutput {
    pub delta_d: f64,
    pub mask_logit: f64,
    pub color: [f64; 3],
    pub feature: Vec<f64>,
}

impl DecoderMlp {
    /// Random trunk, zero heads.
    pub fn new(feature_dim: usize, feature_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::gaussian(
            &[feature_dim, DECODER_WIDTH, DECODER_WIDTH, HEAD_FEATURE + feature_width],
            Activation::Tanh,
            &mut rng,
        );
        *mlp.layers.last_mut().unwrap() = Dense::zeros(DECODER_WIDTH, HEAD_FEATURE + feature_width);
        Self { mlp }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        let d = Self { mlp };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.mlp.layers.len() != 3 || self.mlp.output_width() < HEAD_FEATURE {
            return Err(Error::Shape("decoder needs two trunk layers and all heads".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn feature_width(&self) -> usize {
        self.mlp.output_width() - HEAD_FEATURE
    }

    pub fn decode(&self, features: &[f64]) -> AttributeDecodeOutput {
        let raw = self.mlp.forward(features);
        AttributeDecodeOutput {
            delta_d: DD_BOUND * math::tanh(raw[HEAD_DD]),
            mask_logit: raw[HEAD_MASK],
            color: [0, 1, 2].map(|c| math::sigmoid(raw[HEAD_COLOR + c])),
            feature: raw[HEAD_FEATURE..].to_vec(),
        }
    }
}

pub fn decode(decoder: &DecoderMlp, features: &[f64]) -> AttributeDecodeOutput {
    decoder.decode(features)
}

/// Numerically stable softmax written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend(logits.iter().map(|l| (l - m).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedSample {
    pub d: f64,
    pub color: [f64; 3],
    pub feature: Vec<f64>,
    pub mask_weights: Vec<f64>,
}

/// Softmax fusion of the decoded active attributes over the template SDF.
pub fn fuse(outputs: &[AttributeDecodeOutput], d_t: f64, background: [f64; 3]) -> FusedSample {
    if outputs.is_empty() {
        return FusedSample {
            d: d_t,
            color: background,
            feature: Vec::new(),
            mask_weights: Vec::new(),
        };
    }
    let logits: Vec<f64> = outputs.iter().map(|o| o.mask_logit).collect();
    let mut w = Vec::new();
    softmax_into(&logits, &mut w);
    let mut d = d_t;
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; outputs[0].feature.len()];
    for (o, &wi) in outputs.iter().zip(&w) {
        d += wi * o.delta_d;
        for c in 0..3 {
            color[c] += wi * o.color[c];
        }
        for (f, v) in feature.iter_mut().zip(&o.feature) {
            *f += wi * v;
        }
    }
    FusedSample {
        d,
        color,
        feature,
        mask_weights: w,
    }
}

/// `(1 / beta) * sigmoid(-d / beta)`.
#[inline]
pub fn sdf_to_density(d: f64, beta: f64) -> f64 {
    math::sigmoid(-d / beta) / beta
}

#[inline]
fn density_slope(d: f64, beta: f64) -> f64 {
    let s = math::sigmoid(-d / beta);
    -s * (1.0 - s) / (beta * beta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayResult {
    pub rgb: [f64; 3],
    /// Accumulated mask weight per active attribute.
    pub weights: Vec<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub feature: Vec<f64>,
}

/// Front-to-back quadrature over fused samples. `samples[j].1.mask_weights`
/// must have one entry per active attribute (zero where it does not act).
pub fn integrate_ray(samples: &[(DepthSample, FusedSample)], beta: f64, background: [f64; 3], far: f64) -> RayResult {
    let n_attr = samples.iter().map(|s| s.1.mask_weights.len()).max().unwrap_or(0);
    let n_feat = samples.iter().map(|s| s.1.feature.len()).max().unwrap_or(0);
    let mut out = RayResult {
        rgb: [0.0; 3],
        weights: vec![0.0; n_attr],
        depth: 0.0,
        opacity: 0.0,
        feature: vec![0.0; n_feat],
    };
    let mut trans = 1.0;
    for (ds, f) in samples {
        let alpha = 1.0 - (-sdf_to_density(f.d, beta) * ds.delta).exp();
        let w = trans * alpha;
        for c in 0..3 {
            out.rgb[c] += w * f.color[c];
        }
        for (acc, m) in out.weights.iter_mut().zip(&f.mask_weights) {
            *acc += w * m;
        }
        for (acc, v) in out.feature.iter_mut().zip(&f.feature) {
            *acc += w * v;
        }
        out.depth += w * ds.t;
        out.opacity += w;
        trans *= 1.0 - alpha;
    }
    for c in 0..3 {
        out.rgb[c] += trans * background[c];
    }
    out.depth += trans * far;
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub beta: f64,
    pub background: [f64; 3],
    pub samples: usize,
    /// Stop marching once transmittance drops below this value. Only used
    /// for plain rendering; the loss path always integrates every sample.
    pub early_stop: Option<f64>,
    /// Padding around the posed template bounds added to the sampling interval.
    pub template_margin: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            background: [1.0; 3],
            samples: sampling::DEFAULT_SAMPLES,
            early_stop: Some(1e-4),
            template_margin: 0.25,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) || self.samples == 0 {
            return Err(Error::Config("render settings need beta > 0 and samples > 0".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background color must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One active attribute as seen by the renderer.
#[derive(Clone, Debug)]
pub struct AttributeSlot<'a> {
    pub label: usize,
    pub contribution: AttributeContribution<'a>,
    pub bbox: AttributeBBox,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct SlotTape {
    pub slot: usize,
    pub offset: Vec3,
    pub dd: f64,
    pub logit: f64,
    pub color: [f64; 3],
    pub features: Vec<f64>,
    pub contrib: ContributionCache,
    pub dec: MlpCache,
    pub nr: NonRigidCache,
}

/// Everything one fused sample needs for its reverse pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct PointTape {
    pub d_t: f64,
    pub d: f64,
    pub color: [f64; 3],
    pub members: usize,
    pub weights: Vec<f64>,
    pub slots: Vec<SlotTape>,
    logits: Vec<f64>,
}

impl PointTape {
    pub fn members(&self) -> &[SlotTape] {
        &self.slots[..self.members]
    }
}

/// Gradient of a scalar loss with respect to one fused sample.
pub(crate) struct PointGrad<'g> {
    pub d: f64,
    pub color: [f64; 3],
    /// Direct gradient on each member's softmax weight.
    pub mask_weight: Option<&'g [f64]>,
    /// Direct gradient on each member's Δd.
    pub delta_d: Option<&'g [f64]>,
    /// Direct gradient on each member's non-rigid offset.
    pub offset: Option<&'g [Vec3]>,
}

/// Gradient buffers for everything a renderer reads that is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct GradAccum {
    /// Spatial plane gradients in term order (xy, xz, yz).
    pub spatial: [Vec<f64>; 3],
    /// Per-slot profile gradients (z, y, x profiles).
    pub profiles: Vec<[Vec<f64>; 3]>,
    pub decoder: Vec<f64>,
    pub nonrigid: Vec<f64>,
}

impl GradAccum {
    pub fn add(&mut self, other: &GradAccum) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for t in 0..3 {
            add(&mut self.spatial[t], &other.spatial[t]);
        }
        for (p, q) in self.profiles.iter_mut().zip(&other.profiles) {
            for t in 0..3 {
                add(&mut p[t], &q[t]);
            }
        }
        add(&mut self.decoder, &other.decoder);
        add(&mut self.nonrigid, &other.nonrigid);
    }
}

/// Reusable per-thread buffers.
#[derive(Default)]
pub(crate) struct RayScratch {
    pub tapes: Vec<PointTape>,
    pub samples: Vec<DepthSample>,
    pub alpha: Vec<f64>,
    pub trans: Vec<f64>,
}

/// A fully resolved render setup: active slots, networks and a posed template.
pub struct Renderer<'a> {
    pub slots: Vec<AttributeSlot<'a>>,
    pub decoder: &'a DecoderMlp,
    pub nonrigid: &'a NonRigidMlp,
    pub template: &'a TemplateSkeleton,
    pub posed: PosedTemplate,
    pub settings: RenderSettings,
    catalog_len: usize,
    nonrigid_active: bool,
}

/// Rendered images, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    /// Catalog labels of the active attributes, in slot order.
    pub labels: Vec<usize>,
    /// Per-pixel accumulated mask weight of every slot.
    pub weights: Vec<f64>,
    /// Argmax label per pixel, or [`BACKGROUND_LABEL`].
    pub semantic: Vec<u8>,
    pub features: Vec<f64>,
}

impl RenderOutput {
    pub fn pixel_rgb(&self, i: usize) -> [f64; 3] {
        [self.rgb[3 * i], self.rgb[3 * i + 1], self.rgb[3 * i + 2]]
    }
}

/// Argmax over accumulated weights; ties go to the lower catalog label.
/// Pixels with opacity below one half are background.
pub fn semantic_label(weights: &[f64], labels: &[usize], opacity: f64) -> u8 {
    if opacity < 0.5 || labels.is_empty() {
        return BACKGROUND_LABEL;
    }
    let mut best: Option<(f64, usize)> = None;
    for (&w, &l) in weights.iter().zip(labels) {
        best = match best {
            Some((bw, bl)) if bw > w || (bw == w && bl < l) => Some((bw, bl)),
            _ => Some((w, l)),
        };
    }
    best.map(|(_, l)| l as u8).unwrap_or(BACKGROUND_LABEL)
}

impl<'a> Renderer<'a> {
    pub fn new(
        slots: Vec<AttributeSlot<'a>>,
        decoder: &'a DecoderMlp,
        nonrigid: &'a NonRigidMlp,
        template: &'a TemplateSkeleton,
        pose: &Pose,
        settings: RenderSettings,
        catalog_len: usize,
    ) -> Result<Self> {
        settings.validate()?;
        for s in &slots {
            if s.contribution.feature_dim != decoder.input_width() {
                return Err(Error::Shape("field feature width does not match the decoder".into()));
            }
            if s.label >= catalog_len {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    len: catalog_len,
                });
            }
        }
        let posed = PosedTemplate::new(template, pose)?;
        Ok(Self {
            slots,
            decoder,
            nonrigid,
            template,
            posed,
            settings,
            catalog_len,
            nonrigid_active: !nonrigid.is_identity(),
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.label).collect()
    }

    /// Scalar fed to the non-rigid network for a label.
    pub fn mask_code(&self, label: usize) -> f64 {
        (label + 1) as f64 / self.catalog_len as f64
    }

    pub fn grad_zeros(&self) -> GradAccum {
        let spatial = match self.slots.first() {
            Some(s) => [0, 1, 2].map(|t| vec![0.0; s.contribution.spatial[t].data().len()]),
            None => [vec![], vec![], vec![]],
        };
        GradAccum {
            spatial,
            profiles: self
                .slots
                .iter()
                .map(|s| [0, 1, 2].map(|t| vec![0.0; s.contribution.profiles[t].data.len()]))
                .collect(),
            decoder: vec![0.0; self.decoder.mlp.param_count()],
            nonrigid: vec![0.0; self.nonrigid.mlp.param_count()],
        }
    }

    /// Sorted, disjoint depth intervals worth sampling along a ray.
    pub fn ray_intervals(&self, ray: &Ray) -> Vec<(f64, f64)> {
        let mut iv = Vec::with_capacity(self.slots.len() + 1);
        for s in &self.slots {
            if let Some(i) = sampling::ray_box_intersect(ray, s.bbox.min, s.bbox.max) {
                iv.push(i);
            }
        }
        let m = self.settings.template_margin;
        let (lo, hi) = self.posed.bounds;
        if let Some(i) = sampling::ray_box_intersect(ray, lo.map(|v| v - m), hi.map(|v| v + m)) {
            iv.push(i);
        }
        sampling::union_intervals(iv)
    }

    fn ray_samples(&self, ray: &Ray, out: &mut Vec<DepthSample>) {
        out.clear();
        let iv = self.ray_intervals(ray);
        out.extend(sampling::stratified_union::<ChaCha8Rng>(
            &iv,
            self.settings.samples,
            None,
        ));
    }

    /// Decode and fuse every active attribute at a canonical point.
    pub(crate) fn eval_canonical(&self, xc: Vec3, tape: &mut PointTape, track: bool) {
        tape.d_t = self.template.sdf(xc);
        tape.members = 0;
        let use_nr = track || self.nonrigid_active;
        for (i, slot) in self.slots.iter().enumerate() {
            if !slot.bbox.contains(xc) {
                continue;
            }
            if tape.slots.len() <= tape.members {
                tape.slots.push(SlotTape::default());
            }
            let st = &mut tape.slots[tape.members];
            st.slot = i;
            let x0 = if use_nr {
                st.offset = self.nonrigid.offset_cached(
                    xc,
                    &self.posed.beta,
                    &self.posed.blend,
                    self.mask_code(slot.label),
                    &mut st.nr,
                );
                math::add(xc, st.offset)
            } else {
                st.offset = [0.0; 3];
                xc
            };
            st.features.resize(slot.contribution.feature_dim, 0.0);
            slot.contribution.eval_cached(x0, &mut st.contrib, &mut st.features);
            let raw = self.decoder.mlp.forward_cached(&st.features, &mut st.dec);
            st.dd = DD_BOUND * math::tanh(raw[HEAD_DD]);
            st.logit = raw[HEAD_MASK];
            st.color = [0, 1, 2].map(|c| math::sigmoid(raw[HEAD_COLOR + c]));
            tape.members += 1;
        }
        let members = tape.members;
        tape.logits.clear();
        tape.logits.extend(tape.slots[..members].iter().map(|s| s.logit));
        softmax_into(&tape.logits, &mut tape.weights);
        tape.d = tape.d_t;
        if members == 0 {
            tape.color = self.settings.background;
            return;
        }
        tape.color = [0.0; 3];
        for (st, &w) in tape.slots[..members].iter().zip(&tape.weights) {
            tape.d += w * st.dd;
            for c in 0..3 {
                tape.color[c] += w * st.color[c];
            }
        }
    }

    /// Reverse pass of [`Renderer::eval_canonical`].
    pub(crate) fn backward_point(&self, tape: &PointTape, g: &PointGrad<'_>, acc: &mut GradAccum) {
        let members = tape.members();
        if members.is_empty() {
            return;
        }
        let mut g_w: Vec<f64> = members
            .iter()
            .map(|st| g.d * st.dd + (0..3).map(|c| g.color[c] * st.color[c]).sum::<f64>())
            .collect();
        if let Some(extra) = g.mask_weight {
            g_w.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
        }
        let mean: f64 = tape.weights.iter().zip(&g_w).map(|(w, gw)| w * gw).sum();
        let out_width = self.decoder.mlp.output_width();
        let mut g_raw = vec![0.0; out_width];
        let mut g_feat = vec![0.0; self.decoder.input_width()];
        for (k, st) in members.iter().enumerate() {
            let w = tape.weights[k];
            let mut g_dd = g.d * w;
            if let Some(extra) = g.delta_d {
                g_dd += extra[k];
            }
            let th = st.dd / DD_BOUND;
            g_raw[HEAD_DD] = g_dd * DD_BOUND * (1.0 - th * th);
            g_raw[HEAD_MASK] = w * (g_w[k] - mean);
            for c in 0..3 {
                g_raw[HEAD_COLOR + c] = g.color[c] * w * st.color[c] * (1.0 - st.color[c]);
            }
            g_feat.iter_mut().for_each(|v| *v = 0.0);
            self.decoder
                .mlp
                .backward(&st.dec, &g_raw, &mut acc.decoder, Some(&mut g_feat));
            let slot = &self.slots[st.slot];
            let mut g_x0 =
                slot.contribution
                    .backward(&st.contrib, &g_feat, &mut acc.spatial, &mut acc.profiles[st.slot]);
            if let Some(extra) = g.offset {
                g_x0 = math::add(g_x0, extra[k]);
            }
            self.nonrigid.backward(&st.nr, g_x0, &mut acc.nonrigid);
        }
    }

    /// Forward march along a ray. With `track` every sample is kept on the
    /// tape (no early stop) so [`Renderer::backward_ray`] can run after it.
    pub(crate) fn trace(&self, ray: &Ray, scratch: &mut RayScratch, track: bool) -> Result<RayResult> {
        let mut samples = std::mem::take(&mut scratch.samples);
        self.ray_samples(ray, &mut samples);
        let n_slots = self.slots.len();
        let n_feat = self.decoder.feature_width();
        let mut out = RayResult {
            rgb: [0.0; 3],
            weights: vec![0.0; n_slots],
            depth: 0.0,
            opacity: 0.0,
            feature: vec![0.0; n_feat],
        };
        scratch.alpha.clear();
        scratch.trans.clear();
        let mut trans = 1.0;
        let stop = if track { None } else { self.settings.early_stop };
        for (j, ds) in samples.iter().enumerate() {
            if scratch.tapes.len() <= j {
                scratch.tapes.push(PointTape::default());
            }
            let tape = &mut scratch.tapes[j];
            let xc = self.posed.to_canonical(ray.at(ds.t))?;
            self.eval_canonical(xc, tape, track);
            let alpha = 1.0 - (-sdf_to_density(tape.d, self.settings.beta) * ds.delta).exp();
            let w = trans * alpha;
            for c in 0..3 {
                out.rgb[c] += w * tape.color[c];
            }
            for (st, m) in tape.members().iter().zip(&tape.weights) {
                out.weights[st.slot] += w * m;
                if !track {
                    let raw = st.dec.output();
                    for (acc, v) in out.feature.iter_mut().zip(&raw[HEAD_FEATURE..]) {
                        *acc += w * m * v;
                    }
                }
            }
            out.depth += w * ds.t;
            out.opacity += w;
            scratch.alpha.push(alpha);
            scratch.trans.push(trans);
            trans *= 1.0 - alpha;
            if stop.is_some_and(|s| trans < s) {
                break;
            }
        }
        for c in 0..3 {
            out.rgb[c] += trans * self.settings.background[c];
        }
        out.depth += trans * ray.far;
        scratch.samples = samples;
        Ok(out)
    }

    /// Reverse pass of a tracked [`Renderer::trace`] for a loss that is
    /// linear in rgb and the per-slot weights with the given coefficients.
    pub(crate) fn backward_ray(&self, scratch: &RayScratch, g_rgb: [f64; 3], g_weights: &[f64], acc: &mut GradAccum) {
        let n = scratch.alpha.len();
        let bg = self.settings.background;
        let value = |tape: &PointTape| -> f64 {
            let mut e: f64 = (0..3).map(|c| g_rgb[c] * tape.color[c]).sum();
            for (st, m) in tape.members().iter().zip(&tape.weights) {
                e += g_weights[st.slot] * m;
            }
            e
        };
        // U_j: value of everything behind sample j, background included.
        let mut behind: f64 = (0..3).map(|c| g_rgb[c] * bg[c]).sum();
        let mut g_mw = Vec::new();
        for j in (0..n).rev() {
            let tape = &scratch.tapes[j];
            let alpha = scratch.alpha[j];
            let t = scratch.trans[j];
            let e = value(tape);
            let g_alpha = t * (e - behind);
            behind = alpha * e + (1.0 - alpha) * behind;
            let ds = scratch.samples[j];
            let g_sigma = g_alpha * ds.delta * (1.0 - alpha);
            let g_d = g_sigma * density_slope(tape.d, self.settings.beta);
            let w = t * alpha;
            g_mw.clear();
            g_mw.extend(tape.members().iter().map(|st| w * g_weights[st.slot]));
            let g = PointGrad {
                d: g_d,
                color: g_rgb.map(|v| v * w),
                mask_weight: Some(&g_mw),
                delta_d: None,
                offset: None,
            };
            self.backward_point(tape, &g, acc);
        }
    }

    pub fn trace_ray(&self, ray: &Ray) -> Result<RayResult> {
        let mut scratch = RayScratch::default();
        self.trace(ray, &mut scratch, false)
    }

    /// Fused sample at a canonical point, bypassing skinning.
    pub fn fused_at(&self, xc: Vec3) -> FusedSample {
        let mut tape = PointTape::default();
        self.eval_canonical(xc, &mut tape, false);
        let mut mask_weights = vec![0.0; self.slots.len()];
        let mut feature = vec![0.0; self.decoder.feature_width()];
        for (st, &m) in tape.members().iter().zip(&tape.weights) {
            mask_weights[st.slot] = m;
            for (f, v) in feature.iter_mut().zip(&st.dec.output()[HEAD_FEATURE..]) {
                *f += m * v;
            }
        }
        FusedSample {
            d: tape.d,
            color: tape.color,
            feature,
            mask_weights,
        }
    }

    /// Fused signed distance at a canonical point.
    pub fn fused_sdf(&self, xc: Vec3) -> f64 {
        let mut tape = PointTape::default();
        self.eval_canonical(xc, &mut tape, false);
        tape.d
    }

    /// Render every pixel; rows are processed in parallel and each pixel's
    /// arithmetic is independent of the schedule.
    pub fn render(&self, camera: &Camera) -> Result<RenderOutput> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let rows: Vec<Result<Vec<RayResult>>> = par::map_indexed(h, |py| {
            let mut scratch = RayScratch::default();
            (0..w)
                .map(|px| self.trace(&camera.ray(px, py), &mut scratch, false))
                .collect()
        });
        let labels = self.labels();
        let n_slots = labels.len();
        let n_feat = self.decoder.feature_width();
        let mut out = RenderOutput {
            width: w,
            height: h,
            rgb: Vec::with_capacity(3 * w * h),
            depth: Vec::with_capacity(w * h),
            opacity: Vec::with_capacity(w * h),
            labels: labels.clone(),
            weights: Vec::with_capacity(n_slots * w * h),
            semantic: Vec::with_capacity(w * h),
            features: Vec::with_capacity(n_feat * w * h),
        };
        for row in rows {
            for r in row? {
                out.rgb.extend_from_slice(&r.rgb);
                out.depth.push(r.depth);
                out.opacity.push(r.opacity);
                out.semantic.push(semantic_label(&r.weights, &labels, r.opacity));
                out.weights.extend_from_slice(&r.weights);
                out.features.extend_from_slice(&r.feature);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn reference_quadrature(sigma: &[f64], delta: &[f64], colors: &[[f64; 3]], bg: [f64; 3]) -> ([f64; 3], f64) {
        // Transmittance as an explicit product over earlier samples.
        let mut rgb = [0.0; 3];
        let mut opacity = 0.0;
        for j in 0..sigma.len() {
            let t: f64 = (0..j).map(|k| (-sigma[k] * delta[k]).exp()).product();
            let w = t * (1.0 - (-sigma[j] * delta[j]).exp());
            for c in 0..3 {
                rgb[c] += w * colors[j][c];
            }
            opacity += w;
        }
        let t_end: f64 = (0..sigma.len()).map(|k| (-sigma[k] * delta[k]).exp()).product();
        for c in 0..3 {
            rgb[c] += t_end * bg[c];
        }
        (rgb, opacity)
    }

    fn fused(d: f64, color: [f64; 3]) -> FusedSample {
        FusedSample {
            d,
            color,
            feature: vec![],
            mask_weights: vec![1.0],
        }
    }

    #[test]
    fn zero_heads_decode_to_neutral() {
        let dec = DecoderMlp::new(16, 8, 1);
        let o = dec.decode(&[0.3; 16]);
        assert_eq!(o.delta_d, 0.0);
        assert_eq!(o.mask_logit, 0.0);
        assert_eq!(o.color, [0.5; 3]);
        assert_eq!(o.feature, vec![0.0; 8]);
    }

    #[test]
    fn delta_d_is_bounded() {
        let mut dec = DecoderMlp::new(16, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        dec.mlp.for_each_param_mut(|v| *v = rng.gen_range(-3.0..3.0));
        for _ in 0..1000 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let o = dec.decode(&x);
            assert!(o.delta_d.abs() <= DD_BOUND);
            assert_eq!(o, dec.decode(&x));
        }
    }

    #[test]
    fn fuse_examples() {
        let out = |dd: f64, m: f64, c: f64| AttributeDecodeOutput {
            delta_d: dd,
            mask_logit: m,
            color: [c; 3],
            feature: vec![],
        };
        let one = fuse(&[out(0.1, 3.0, 0.2)], 0.05, [1.0; 3]);
        assert_eq!(one.mask_weights, vec![1.0]);
        assert!((one.d - 0.15).abs() < 1e-15);
        assert_eq!(one.color, [0.2; 3]);
        let two = fuse(&[out(0.0, 0.7, 0.2), out(0.0, 0.7, 0.6)], 0.0, [1.0; 3]);
        assert_eq!(two.mask_weights, vec![0.5, 0.5]);
        assert!((two.color[0] - 0.4).abs() < 1e-15);
        let three = fuse(
            &[out(0.1, 1.0, 0.0), out(-0.1, 0.0, 0.0), out(0.2, -1.0, 0.0)],
            0.05,
            [1.0; 3],
        );
        let e = [1f64.exp(), 1.0, (-1f64).exp()];
        let s: f64 = e.iter().sum();
        let want = 0.05 + (e[0] * 0.1 - e[1] * 0.1 + e[2] * 0.2) / s;
        assert!((three.d - want).abs() < 1e-12);
        let none = fuse(&[], 0.3, [1.0, 0.5, 0.0]);
        assert_eq!((none.d, none.color), (0.3, [1.0, 0.5, 0.0]));
    }

    #[test]
    fn density_examples() {
        assert_eq!(sdf_to_density(0.0, 0.1), 5.0);
        assert_eq!(sdf_to_density(1e6, 0.1), 0.0);
        let mut prev = f64::INFINITY;
        for i in -100..=100 {
            let s = sdf_to_density(i as f64 * 0.01, 0.05);
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn quadrature_matches_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = 0.05;
        let mut samples = Vec::new();
        let (mut sig, mut del, mut col) = (vec![], vec![], vec![]);
        let mut t = 0.5;
        for _ in 0..16 {
            let d = rng.gen_range(-0.2..0.3);
            let delta = rng.gen_range(0.01..0.1);
            let c = [rng.gen(), rng.gen(), rng.gen()];
            t += delta;
            samples.push((DepthSample { t, delta }, fused(d, c)));
            sig.push(sdf_to_density(d, beta));
            del.push(delta);
            col.push(c);
        }
        let r = integrate_ray(&samples, beta, [1.0; 3], 4.0);
        let (rgb, op) = reference_quadrature(&sig, &del, &col, [1.0; 3]);
        for c in 0..3 {
            assert!((r.rgb[c] - rgb[c]).abs() < 1e-12);
        }
        assert!((r.opacity - op).abs() < 1e-12);
        assert!((r.weights[0] - op).abs() < 1e-12);
    }

    #[test]
    fn empty_and_opaque_rays() {
        let empty = integrate_ray(
            &[(DepthSample { t: 1.0, delta: 0.1 }, fused(1e9, [0.0; 3]))],
            0.05,
            [1.0; 3],
            3.0,
        );
        assert_eq!((empty.rgb, empty.opacity, empty.depth), ([1.0; 3], 0.0, 3.0));
        let opaque = integrate_ray(
            &[
                (DepthSample { t: 1.5, delta: 1.0 }, fused(-10.0, [0.2, 0.4, 0.6])),
                (DepthSample { t: 2.5, delta: 1.0 }, fused(-10.0, [0.9; 3])),
            ],
            // Density saturates at 1/beta; 1000 makes the first sample exactly opaque.
            0.001,
            [1.0; 3],
            3.0,
        );
        assert!((opaque.rgb[0] - 0.2).abs() < 1e-12 && (opaque.depth - 1.5).abs() < 1e-12);
    }

    #[test]
    fn semantic_ties_prefer_lower_label() {
        assert_eq!(semantic_label(&[0.4, 0.4], &[5, 2], 0.9), 2);
        assert_eq!(semantic_label(&[0.1, 0.6], &[5, 2], 0.9), 2);
        assert_eq!(semantic_label(&[0.1, 0.6], &[5, 2], 0.2), BACKGROUND_LABEL);
    }
}
