//! Cameras, rays, stratified depths and per-attribute bounding boxes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::indexing::AttributeCatalog;
use crate::math::{self, Vec3};

pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_FOV_DEG: f64 = 40.0;
pub const DEFAULT_DIST: f64 = 2.8;
pub const DEFAULT_RES: usize = 128;
pub const NEAR: f64 = 0.01;

/// Pinhole camera. `fov_y` is the vertical field of view in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera on a sphere around the origin. Yaw is taken modulo 360 so
    /// that yaw 0 and yaw 360 produce the same camera bit for bit.
    pub fn orbit(yaw_deg: f64, pitch_deg: f64, dist: f64, res: usize) -> Result<Self> {
        if !yaw_deg.is_finite() || !(pitch_deg.abs() < 90.0) || !(dist > 0.0 && dist.is_finite()) || res == 0 {
            return Err(Error::InvalidCamera(format!(
                "yaw {yaw_deg}, pitch {pitch_deg}, dist {dist}, res {res}"
            )));
        }
        let yaw = yaw_deg.rem_euclid(360.0).to_radians();
        let pitch = pitch_deg.to_radians();
        let position = [
            dist * yaw.sin() * pitch.cos(),
            dist * pitch.sin(),
            dist * yaw.cos() * pitch.cos(),
        ];
        let cam = Self {
            position,
            look_at: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            fov_y: DEFAULT_FOV_DEG.to_radians(),
            width: res,
            height: res,
            near: NEAR,
            far: dist + 3f64.sqrt(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let fwd = math::sub(self.look_at, self.position);
        let side = math::cross(fwd, self.up);
        if !(math::norm(fwd) > 1e-12) || !(math::norm(side) > 1e-12 * math::norm(fwd) * math::norm(self.up)) {
            return Err(Error::InvalidCamera("degenerate camera basis".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::InvalidCamera(format!("fov {} outside (0, pi)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("empty image".into()));
        }
        if !(self.near >= 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::InvalidCamera("near must be below far".into()));
        }
        Ok(())
    }

    /// Orthonormal (forward, right, up) frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = math::normalize(math::sub(self.look_at, self.position));
        let r = math::normalize(math::cross(f, self.up));
        let u = math::cross(r, f);
        (f, r, u)
    }

    /// Ray through the center of pixel (`px`, `py`); row 0 is the top.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let (f, r, u) = self.basis();
        let t = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * t * aspect;
        let sy = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * t;
        let d = math::add(f, math::add(math::scale(r, sx), math::scale(u, sy)));
        Ray {
            origin: self.position,
            dir: math::normalize(d),
            near: self.near,
            far: self.far,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.dir, t))
    }
}

/// All pixel rays in row-major order.
pub fn generate_rays(camera: &Camera) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(camera.width * camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            rays.push(camera.ray(px, py));
        }
    }
    rays
}

/// Axis-aligned box in canonical space limiting where an attribute acts.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeBBox {
    pub label: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl AttributeBBox {
    pub fn new(label: usize, min: Vec3, max: Vec3) -> Result<Self> {
        let b = Self { label, min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn full(label: usize) -> Self {
        Self {
            label,
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) || self.min[a] < -1.0 || self.max[a] > 1.0 {
                return Err(Error::Config(format!(
                    "bbox for label {} must satisfy -1 <= min < max <= 1 on every axis",
                    self.label
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Slab intersection clipped to `[near, far]`; `None` when empty.
pub fn ray_box_intersect(ray: &Ray, min: Vec3, max: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (ray.near, ray.far);
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.dir[a];
        if d == 0.0 {
            if o < min[a] || o > max[a] {
                return None;
            }
            continue;
        }
        let (mut lo, mut hi) = ((min[a] - o) / d, (max[a] - o) / d);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 < t1).then_some((t0, t1))
}

/// Sorted union of possibly overlapping intervals.
pub fn union_intervals(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.retain(|(a, b)| a < b);
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (a, b) in intervals {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// A quadrature point along a ray: depth and segment length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSample {
    pub t: f64,
    pub delta: f64,
}

/// `n` samples over one interval; midpoints unless a jitter RNG is given.
pub fn stratified_samples<R: Rng + ?Sized>(interval: (f64, f64), n: usize, jitter: Option<&mut R>) -> Vec<DepthSample> {
    stratified_union(&[interval], n, jitter)
}

/// `n` strata laid end to end over the concatenated length of disjoint
/// sorted intervals; each sample carries the stratum width.
pub fn stratified_union<R: Rng + ?Sized>(
    intervals: &[(f64, f64)],
    n: usize,
    mut jitter: Option<&mut R>,
) -> Vec<DepthSample> {
    let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
    if n == 0 || !(total > 0.0) {
        return Vec::new();
    }
    let delta = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..n {
        let off = match jitter.as_deref_mut() {
            Some(rng) => rng.gen::<f64>(),
            None => 0.5,
        };
        let s = ((k as f64 + off) * delta).min(total);
        while seg + 1 < intervals.len() && s > seg_start + (intervals[seg].1 - intervals[seg].0) {
            seg_start += intervals[seg].1 - intervals[seg].0;
            seg += 1;
        }
        out.push(DepthSample {
            t: intervals[seg].0 + (s - seg_start),
            delta,
        });
    }
    out
}

/// Per-attribute containment of sample points.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMask {
    /// `per_attribute[i][s]` for the i-th active attribute.
    pub per_attribute: Vec<Vec<bool>>,
    pub template_only: Vec<bool>,
}

/// Which active attributes act at each point. `bboxes` is indexed by label.
pub fn attribute_sample_mask(points: &[Vec3], bboxes: &[AttributeBBox], active: &[usize]) -> SampleMask {
    let per_attribute: Vec<Vec<bool>> = active
        .iter()
        .map(|&l| points.iter().map(|&p| bboxes[l].contains(p)).collect())
        .collect();
    let template_only = (0..points.len()).map(|s| per_attribute.iter().all(|m| !m[s])).collect();
    SampleMask {
        per_attribute,
        template_only,
    }
}

/// Default boxes in canonical body coordinates (figure standing along +y,
/// feet at y = -0.94, head top at y = 0.91). Unknown names get the full cube.
pub fn default_bboxes(catalog: &AttributeCatalog) -> Vec<AttributeBBox> {
    catalog
        .names()
        .iter()
        .enumerate()
        .map(|(label, name)| {
            let (min, max) = match name.as_str() {
                "Outer" => ([-0.45, -0.1, -0.25], [0.45, 0.6, 0.25]),
                "Top" => ([-0.42, 0.0, -0.22], [0.42, 0.62, 0.22]),
                "Skirts" => ([-0.3, -0.45, -0.25], [0.3, 0.05, 0.25]),
                "Dress" => ([-0.35, -0.5, -0.25], [0.35, 0.6, 0.25]),
                "Pants" => ([-0.3, -0.92, -0.22], [0.3, 0.05, 0.22]),
                "Rompers" => ([-0.4, -0.45, -0.25], [0.4, 0.6, 0.25]),
                "Hats" => ([-0.2, 0.82, -0.2], [0.2, 1.0, 0.2]),
                "Glasses" => ([-0.16, 0.72, 0.0], [0.16, 0.84, 0.2]),
                "Shoes" => ([-0.3, -1.0, -0.2], [0.3, -0.84, 0.25]),
                "Haircut" => ([-0.2, 0.7, -0.2], [0.2, 1.0, 0.2]),
                "Body" => ([-0.55, -1.0, -0.28], [0.55, 1.0, 0.32]),
                _ => ([-1.0; 3], [1.0; 3]),
            };
            AttributeBBox { label, min, max }
        })
        .collect()
}
