//! Six-plane factorization of the 4D space-attribute feature volume.
//!
//! A feature at `(x, y, z, a)` is the sum of three terms, each the
//! element-wise product of a spatial plane sample and an attribute plane
//! contraction, projected to `F` channels by a frozen mixing matrix:
//!
//! ```text
//! D = (P_xy(x,y) . P_za(z)·a) V1 + (P_xz(x,z) . P_ya(y)·a) V2 + (P_yz(y,z) . P_xa(x)·a) V3
//! ```
//!
//! Spatial coordinates live in `[-1, 1]` and are clamped at the boundary.
//! The attribute axis is an embedding dimension: attribute planes are
//! contracted exactly along it, never interpolated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::indexing::AttributeIndex;
use crate::math::{to_storage, Vec3};

/// Seed of the frozen mixing matrices. Every field with the same dimensions
/// shares the same matrices.
pub const MIX_SEED: u64 = 0x6d69_785f_6672_7a6e;

/// Largest supported channel count per plane.
pub const MAX_RANK: usize = 64;

/// Upper bound on the number of entries [`materialize_dense`] will allocate.
pub const DENSE_LIMIT: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AxisPair {
    XY,
    YZ,
    XZ,
    XA,
    YA,
    ZA,
}

impl AxisPair {
    pub const ALL: [AxisPair; 6] = [
        AxisPair::XY,
        AxisPair::YZ,
        AxisPair::XZ,
        AxisPair::XA,
        AxisPair::YA,
        AxisPair::ZA,
    ];

    pub fn is_attribute(self) -> bool {
        matches!(self, AxisPair::XA | AxisPair::YA | AxisPair::ZA)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AxisPair::XY => "xy",
            AxisPair::YZ => "yz",
            AxisPair::XZ => "xz",
            AxisPair::XA => "xa",
            AxisPair::YA => "ya",
            AxisPair::ZA => "za",
        }
    }
}

/// Node-aligned grid coordinate: `t = -1` hits node 0, `t = 1` the last node.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct GridCoord {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
    /// d(frac)/dt, zero when the coordinate was clamped.
    pub slope: f64,
}

#[inline]
pub(crate) fn grid_coord(t: f64, n: usize) -> GridCoord {
    let scale = 0.5 * (n - 1) as f64;
    let (tc, slope) = if t < -1.0 {
        (-1.0, 0.0)
    } else if t > 1.0 {
        (1.0, 0.0)
    } else {
        (t, scale)
    };
    let s = (tc + 1.0) * scale;
    let i0 = (s.floor() as usize).min(n - 2);
    GridCoord {
        i0,
        i1: i0 + 1,
        frac: s - i0 as f64,
        slope,
    }
}

/// Node coordinate of index `i` on an `n`-node axis.
#[inline]
pub fn node_coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

/// Bilinear stencil: four cell offsets with their weights and the weight
/// derivatives with respect to the two plane coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Bilinear {
    pub cells: [usize; 4],
    pub w: [f64; 4],
    pub dw_du: [f64; 4],
    pub dw_dv: [f64; 4],
}

/// Two-tap stencil along a single axis.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Linear {
    pub idx: [usize; 2],
    pub w: [f64; 2],
    pub dw: [f64; 2],
}

#[inline]
pub(crate) fn linear_stencil(t: f64, n: usize) -> Linear {
    let g = grid_coord(t, n);
    Linear {
        idx: [g.i0, g.i1],
        w: [1.0 - g.frac, g.frac],
        dw: [-g.slope, g.slope],
    }
}

/// One of the six factor planes: a `rows x cols` grid of `rank`-channel
/// cells. The first axis of the pair runs along rows, the second along
/// columns; for attribute planes the columns are the attribute embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGrid {
    axis: AxisPair,
    rows: usize,
    cols: usize,
    rank: usize,
    data: Vec<f64>,
}

impl PlaneGrid {
    pub fn zeros(axis: AxisPair, rows: usize, cols: usize, rank: usize) -> Result<Self> {
        Self::from_data(axis, rows, cols, rank, vec![0.0; rows * cols * rank])
    }

    pub fn filled(axis: AxisPair, rows: usize, cols: usize, rank: usize, value: f64) -> Result<Self> {
        Self::from_data(axis, rows, cols, rank, vec![value; rows * cols * rank])
    }

    pub fn from_data(axis: AxisPair, rows: usize, cols: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols < 2 || rank == 0 || rank > MAX_RANK {
            return Err(Error::Shape(format!(
                "plane {} has invalid shape {rows}x{cols}x{rank}",
                axis.name()
            )));
        }
        if data.len() != rows * cols * rank {
            return Err(Error::Shape(format!(
                "plane {} expects {} values, got {}",
                axis.name(),
                rows * cols * rank,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("plane {} has non-finite entries", axis.name())));
        }
        Ok(Self {
            axis,
            rows,
            cols,
            rank,
            data,
        })
    }

    pub fn axis(&self) -> AxisPair {
        self.axis
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.cols + col) * self.rank;
        &self.data[o..o + self.rank]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = (row * self.cols + col) * self.rank;
        &mut self.data[o..o + self.rank]
    }

    #[inline]
    pub(crate) fn stencil(&self, u: f64, v: f64) -> Bilinear {
        let gu = grid_coord(u, self.rows);
        let gv = grid_coord(v, self.cols);
        let (fu, fv) = (gu.frac, gv.frac);
        let c = self.cols;
        Bilinear {
            cells: [
                gu.i0 * c + gv.i0,
                gu.i0 * c + gv.i1,
                gu.i1 * c + gv.i0,
                gu.i1 * c + gv.i1,
            ],
            w: [(1.0 - fu) * (1.0 - fv), (1.0 - fu) * fv, fu * (1.0 - fv), fu * fv],
            dw_du: [
                -gu.slope * (1.0 - fv),
                -gu.slope * fv,
                gu.slope * (1.0 - fv),
                gu.slope * fv,
            ],
            dw_dv: [
                -(1.0 - fu) * gv.slope,
                (1.0 - fu) * gv.slope,
                -fu * gv.slope,
                fu * gv.slope,
            ],
        }
    }

    #[inline]
    pub(crate) fn gather(&self, st: &Bilinear, out: &mut [f64]) {
        let r = self.rank;
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..4 {
            let base = st.cells[k] * r;
            let w = st.w[k];
            for (o, v) in out.iter_mut().zip(&self.data[base..base + r]) {
                *o += w * v;
            }
        }
    }
}

/// Bilinear lookup of `plane` at `(u, v)` (rows, columns), clamped to `[-1, 1]`.
pub fn sample_plane(plane: &PlaneGrid, u: f64, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; plane.rank];
    plane.gather(&plane.stencil(u, v), &mut out);
    out
}

/// Frozen `rank x features` projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MixMatrix {
    pub rank: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl MixMatrix {
    /// The three frozen matrices for the given ranks, drawn from [`MIX_SEED`].
    pub fn frozen(ranks: [usize; 3], features: usize) -> [MixMatrix; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(MIX_SEED);
        ranks.map(|rank| {
            let std = 1.0 / (rank as f64).sqrt();
            let data = (0..rank * features)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    to_storage(z * std)
                })
                .collect();
            MixMatrix { rank, features, data }
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.features..(r + 1) * self.features]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldDims {
    /// Ranks of the three terms: (xy, za), (xz, ya), (yz, xa).
    pub ranks: [usize; 3],
    pub feature_dim: usize,
    /// Node count of every spatial axis.
    pub resolution: usize,
    /// Length of attribute index vectors.
    pub attr_dim: usize,
}

impl Default for FieldDims {
    fn default() -> Self {
        Self {
            ranks: [4, 4, 4],
            feature_dim: 16,
            resolution: 32,
            attr_dim: 16,
        }
    }
}

/// The six feature planes plus the frozen mixing matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceAttributeField {
    dims: FieldDims,
    pub xy: PlaneGrid,
    pub yz: PlaneGrid,
    pub xz: PlaneGrid,
    pub xa: PlaneGrid,
    pub ya: PlaneGrid,
    pub za: PlaneGrid,
    mix: [MixMatrix; 3],
}

/// Spatial coordinates `(u, v)` and attribute-plane coordinate of term `t`.
#[inline]
pub(crate) fn term_coords(t: usize, p: Vec3) -> (f64, f64, f64) {
    match t {
        0 => (p[0], p[1], p[2]),
        1 => (p[0], p[2], p[1]),
        _ => (p[1], p[2], p[0]),
    }
}

/// Axis indices matching [`term_coords`].
pub(crate) const TERM_AXES: [(usize, usize, usize); 3] = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];

impl SpaceAttributeField {
    pub fn zeros(dims: FieldDims) -> Result<Self> {
        let [r1, r2, r3] = dims.ranks;
        let n = dims.resolution;
        let a = dims.attr_dim;
        Self::from_parts(
            dims,
            [
                PlaneGrid::zeros(AxisPair::XY, n, n, r1)?,
                PlaneGrid::zeros(AxisPair::YZ, n, n, r3)?,
                PlaneGrid::zeros(AxisPair::XZ, n, n, r2)?,
                PlaneGrid::zeros(AxisPair::XA, n, a, r3)?,
                PlaneGrid::zeros(AxisPair::YA, n, a, r2)?,
                PlaneGrid::zeros(AxisPair::ZA, n, a, r1)?,
            ],
            MixMatrix::frozen(dims.ranks, dims.feature_dim),
        )
    }

    /// Planes ordered xy, yz, xz, xa, ya, za.
    pub fn from_parts(dims: FieldDims, planes: [PlaneGrid; 6], mix: [MixMatrix; 3]) -> Result<Self> {
        let [xy, yz, xz, xa, ya, za] = planes;
        let [r1, r2, r3] = dims.ranks;
        let n = dims.resolution;
        let expect = [
            (&xy, AxisPair::XY, n, n, r1),
            (&yz, AxisPair::YZ, n, n, r3),
            (&xz, AxisPair::XZ, n, n, r2),
            (&xa, AxisPair::XA, n, dims.attr_dim, r3),
            (&ya, AxisPair::YA, n, dims.attr_dim, r2),
            (&za, AxisPair::ZA, n, dims.attr_dim, r1),
        ];
        for (p, axis, rows, cols, rank) in expect {
            if p.axis != axis || p.rows != rows || p.cols != cols || p.rank != rank {
                return Err(Error::Shape(format!(
                    "plane {} is {}x{}x{} ({}), expected {rows}x{cols}x{rank}",
                    axis.name(),
                    p.rows,
                    p.cols,
                    p.rank,
                    p.axis.name()
                )));
            }
        }
        for (m, rank) in mix.iter().zip(dims.ranks) {
            if m.rank != rank || m.features != dims.feature_dim || m.data.len() != rank * dims.feature_dim {
                return Err(Error::Shape("mixing matrix shape mismatch".into()));
            }
        }
        Ok(Self {
            dims,
            xy,
            yz,
            xz,
            xa,
            ya,
            za,
            mix,
        })
    }

    /// Fresh trainable field: spatial planes near one, attribute planes
    /// small Gaussian noise.
    pub fn init<R: Rng + ?Sized>(dims: FieldDims, rng: &mut R) -> Result<Self> {
        let mut f = Self::zeros(dims)?;
        for p in f.planes_mut() {
            let attr = p.axis.is_attribute();
            for v in p.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = to_storage(if attr { 0.3 * z } else { 1.0 + 0.1 * z });
            }
        }
        Ok(f)
    }

    /// Every plane entry drawn from `N(0, scale^2)`.
    pub fn gaussian<R: Rng + ?Sized>(dims: FieldDims, scale: f64, rng: &mut R) -> Result<Self> {
        let mut f = Self::zeros(dims)?;
        for p in f.planes_mut() {
            for v in p.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = to_storage(scale * z);
            }
        }
        Ok(f)
    }

    pub fn dims(&self) -> FieldDims {
        self.dims
    }

    pub fn mix(&self) -> &[MixMatrix; 3] {
        &self.mix
    }

    /// Planes in storage order xy, yz, xz, xa, ya, za.
    pub fn planes(&self) -> [&PlaneGrid; 6] {
        [&self.xy, &self.yz, &self.xz, &self.xa, &self.ya, &self.za]
    }

    pub fn planes_mut(&mut self) -> [&mut PlaneGrid; 6] {
        [
            &mut self.xy,
            &mut self.yz,
            &mut self.xz,
            &mut self.xa,
            &mut self.ya,
            &mut self.za,
        ]
    }

    /// (spatial plane, attribute plane) of term `t`.
    #[inline]
    pub(crate) fn term(&self, t: usize) -> (&PlaneGrid, &PlaneGrid) {
        match t {
            0 => (&self.xy, &self.za),
            1 => (&self.xz, &self.ya),
            _ => (&self.yz, &self.xa),
        }
    }

    fn check_vector(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.dims.attr_dim {
            return Err(Error::MalformedIndex {
                expected: self.dims.attr_dim,
                got: a.len(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIndex);
        }
        Ok(())
    }

    /// Evaluate the full decomposition at `p` for attribute vector `a`.
    pub fn eval(&self, p: Vec3, a: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(a)?;
        let mut out = vec![0.0; self.dims.feature_dim];
        let mut s = Vec::new();
        for t in 0..3 {
            let (spatial, attr) = self.term(t);
            let (u, v, w) = term_coords(t, p);
            let rank = spatial.rank;
            s.resize(rank, 0.0);
            spatial.gather(&spatial.stencil(u, v), &mut s);
            let lin = linear_stencil(w, attr.rows);
            let mix = &self.mix[t];
            for r in 0..rank {
                let mut contracted = 0.0;
                for (k, ak) in a.iter().enumerate() {
                    let c0 = attr.cell(lin.idx[0], k)[r];
                    let c1 = attr.cell(lin.idx[1], k)[r];
                    contracted += ak * (lin.w[0] * c0 + lin.w[1] * c1);
                }
                let y = s[r] * contracted;
                for (o, m) in out.iter_mut().zip(mix.row(r)) {
                    *o += y * m;
                }
            }
        }
        Ok(out)
    }

    /// Contract every attribute plane with an arbitrary vector `a`.
    pub fn contract_vector(&self, a: &[f64]) -> Result<AttributeContribution<'_>> {
        self.check_vector(a)?;
        let profiles = [0, 1, 2].map(|t| {
            let (_, attr) = self.term(t);
            let rank = attr.rank;
            let mut data = vec![0.0; attr.rows * rank];
            for row in 0..attr.rows {
                let out = &mut data[row * rank..(row + 1) * rank];
                for (k, ak) in a.iter().enumerate() {
                    for (o, c) in out.iter_mut().zip(attr.cell(row, k)) {
                        *o += ak * c;
                    }
                }
            }
            Profile {
                len: attr.rows,
                rank,
                data,
            }
        });
        Ok(AttributeContribution {
            spatial: [&self.xy, &self.xz, &self.yz],
            profiles,
            mix: &self.mix,
            feature_dim: self.dims.feature_dim,
        })
    }

    /// Extract one attribute's field using its (unit) index.
    pub fn contract(&self, index: &AttributeIndex) -> Result<AttributeContribution<'_>> {
        self.contract_vector(index.vector())
    }

    /// Back-propagate profile gradients through the contraction: adds to
    /// the attribute plane gradients (term order za, ya, xa) and to `grad_a`.
    pub(crate) fn contraction_backward(
        &self,
        a: &[f64],
        profile_grads: &[Vec<f64>; 3],
        attr_plane_grads: [&mut [f64]; 3],
        grad_a: &mut [f64],
    ) {
        for (t, gplane) in attr_plane_grads.into_iter().enumerate() {
            let (_, attr) = self.term(t);
            let rank = attr.rank;
            let gp = &profile_grads[t];
            for row in 0..attr.rows {
                let g = &gp[row * rank..(row + 1) * rank];
                for (k, ak) in a.iter().enumerate() {
                    let base = (row * attr.cols + k) * rank;
                    let cell = &attr.data[base..base + rank];
                    let mut acc = 0.0;
                    for r in 0..rank {
                        gplane[base + r] += ak * g[r];
                        acc += cell[r] * g[r];
                    }
                    grad_a[k] += acc;
                }
            }
        }
    }

    pub fn quantize(&mut self) {
        for p in self.planes_mut() {
            crate::math::quantize_slice(p.data_mut());
        }
    }
}

/// Free-function form of [`SpaceAttributeField::eval`].
pub fn eval_field(field: &SpaceAttributeField, p: Vec3, a: &[f64]) -> Result<Vec<f64>> {
    field.eval(p, a)
}

/// Free-function form of [`SpaceAttributeField::contract`].
pub fn contract_attribute<'a>(
    field: &'a SpaceAttributeField,
    index: &AttributeIndex,
) -> Result<AttributeContribution<'a>> {
    field.contract(index)
}

/// Free-function form of [`AttributeContribution::eval`].
pub fn eval_attribute(contribution: &AttributeContribution<'_>, p: Vec3) -> Vec<f64> {
    contribution.eval(p)
}

/// Attribute-plane contraction along one spatial axis: `len` rank-vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub len: usize,
    pub rank: usize,
    pub data: Vec<f64>,
}

impl Profile {
    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }
}

/// One attribute's feature field in factored form: the three spatial
/// planes paired with their contracted profiles (z, y and x respectively).
#[derive(Clone, Debug)]
pub struct AttributeContribution<'a> {
    pub spatial: [&'a PlaneGrid; 3],
    pub profiles: [Profile; 3],
    pub mix: &'a [MixMatrix; 3],
    pub feature_dim: usize,
}

/// Intermediate values of one [`AttributeContribution`] evaluation.
#[derive(Clone, Debug, Default)]
pub struct ContributionCache {
    pub(crate) bil: [Bilinear; 3],
    pub(crate) lin: [Linear; 3],
    pub(crate) s: [Vec<f64>; 3],
    pub(crate) u: [Vec<f64>; 3],
}

impl AttributeContribution<'_> {
    pub fn eval(&self, p: Vec3) -> Vec<f64> {
        let mut cache = ContributionCache::default();
        let mut out = vec![0.0; self.feature_dim];
        self.eval_cached(p, &mut cache, &mut out);
        out
    }

    pub(crate) fn eval_cached(&self, p: Vec3, cache: &mut ContributionCache, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in 0..3 {
            let spatial = self.spatial[t];
            let prof = &self.profiles[t];
            let (u, v, w) = term_coords(t, p);
            let rank = spatial.rank;
            let st = spatial.stencil(u, v);
            let s = &mut cache.s[t];
            s.resize(rank, 0.0);
            spatial.gather(&st, s);
            let lin = linear_stencil(w, prof.len);
            let uu = &mut cache.u[t];
            uu.resize(rank, 0.0);
            let (p0, p1) = (prof.at(lin.idx[0]), prof.at(lin.idx[1]));
            for r in 0..rank {
                uu[r] = lin.w[0] * p0[r] + lin.w[1] * p1[r];
            }
            let mix = &self.mix[t];
            for r in 0..rank {
                let y = s[r] * uu[r];
                for (o, m) in out.iter_mut().zip(mix.row(r)) {
                    *o += y * m;
                }
            }
            cache.bil[t] = st;
            cache.lin[t] = lin;
        }
    }

    /// Reverse pass. Adds to the spatial plane gradients (term order xy,
    /// xz, yz) and the profile gradients; returns d/dp.
    pub(crate) fn backward(
        &self,
        cache: &ContributionCache,
        grad_feature: &[f64],
        spatial_grads: &mut [Vec<f64>; 3],
        profile_grads: &mut [Vec<f64>; 3],
    ) -> Vec3 {
        let mut gp = [0.0; 3];
        let mut dy = [0.0f64; MAX_RANK];
        for t in 0..3 {
            let spatial = self.spatial[t];
            let prof = &self.profiles[t];
            let rank = spatial.rank;
            let mix = &self.mix[t];
            let s = &cache.s[t];
            let u = &cache.u[t];
            for r in 0..rank {
                dy[r] = mix.row(r).iter().zip(grad_feature).map(|(m, g)| m * g).sum();
            }
            let st = &cache.bil[t];
            let gs = &mut spatial_grads[t];
            let (mut du, mut dv) = (0.0, 0.0);
            for k in 0..4 {
                let base = st.cells[k] * rank;
                let cell = &spatial.data[base..base + rank];
                let mut dot = 0.0;
                for r in 0..rank {
                    let ds = dy[r] * u[r];
                    gs[base + r] += st.w[k] * ds;
                    dot += cell[r] * ds;
                }
                du += st.dw_du[k] * dot;
                dv += st.dw_dv[k] * dot;
            }
            let lin = &cache.lin[t];
            let gprof = &mut profile_grads[t];
            let mut dw = 0.0;
            for k in 0..2 {
                let base = lin.idx[k] * rank;
                let cell = &prof.data[base..base + rank];
                let mut dot = 0.0;
                for r in 0..rank {
                    let dvu = dy[r] * s[r];
                    gprof[base + r] += lin.w[k] * dvu;
                    dot += cell[r] * dvu;
                }
                dw += lin.dw[k] * dot;
            }
            let (au, av, aw) = TERM_AXES[t];
            gp[au] += du;
            gp[av] += dv;
            gp[aw] += dw;
        }
        gp
    }
}

/// Brute-force tabulation of the field on a node grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    /// (x, y, z, attribute basis, feature) extents.
    pub shape: [usize; 5],
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn at(&self, ix: usize, iy: usize, iz: usize, ia: usize) -> &[f64] {
        let [_, ny, nz, na, f] = self.shape;
        let o = (((ix * ny + iy) * nz + iz) * na + ia) * f;
        &self.data[o..o + f]
    }
}

/// Evaluate `field` at every node of an `nx x ny x nz` grid over the unit
/// cube for each of the first `na` attribute basis vectors.
pub fn materialize_dense(field: &SpaceAttributeField, grid_res: [usize; 4]) -> Result<DenseTensor> {
    let [nx, ny, nz, na] = grid_res;
    let f = field.dims.feature_dim;
    let cells = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(na))
        .and_then(|v| v.checked_mul(f))
        .unwrap_or(usize::MAX);
    if cells > DENSE_LIMIT {
        return Err(Error::DenseTooLarge {
            cells,
            limit: DENSE_LIMIT,
        });
    }
    if nx < 2 || ny < 2 || nz < 2 || na == 0 || na > field.dims.attr_dim {
        return Err(Error::Shape(format!("invalid dense grid {grid_res:?}")));
    }
    let mut data = Vec::with_capacity(cells);
    let mut basis = vec![0.0; field.dims.attr_dim];
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let p = [node_coord(ix, nx), node_coord(iy, ny), node_coord(iz, nz)];
                for ia in 0..na {
                    basis.iter_mut().for_each(|b| *b = 0.0);
                    basis[ia] = 1.0;
                    data.extend(field.eval(p, &basis)?);
                }
            }
        }
    }
    Ok(DenseTensor {
        shape: [nx, ny, nz, na, f],
        data,
    })
}
