//! `ATTRSCN1` scene container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "ATTRSCN1" | version u32 | payload | crc32(payload) u32
//! payload  = section*
//! section  = id u32 | byte length u64 | body
//! ```
//!
//! Trainable tensors (planes, mixing matrices, MLP weights) are stored as
//! f32; the scene keeps them rounded to f32 precision so a save/load round
//! trip is exact. Template geometry, boxes and render defaults are f64.

use std::path::Path;

use crate::deform::{Capsule, Joint, NonRigidMlp, SkinVertex, TemplateSkeleton, POSE_COEFFS, SHAPE_COEFFS};
use crate::error::{Error, Result};
use crate::field::{AxisPair, FieldDims, MixMatrix, PlaneGrid, SpaceAttributeField};
use crate::indexing::{AttributeCatalog, IndexerMlp};
use crate::math::Vec3;
use crate::mlp::{Activation, Dense, Mlp};
use crate::render::{DecoderMlp, RenderSettings};
use crate::sampling::AttributeBBox;
use crate::scene::{RenderDefaults, Scene};

pub const MAGIC: &[u8; 8] = b"ATTRSCN1";
pub const VERSION: u32 = 1;

const SEC_CATALOG: u32 = 1;
const SEC_DIMS: u32 = 2;
const SEC_PLANES: u32 = 3;
const SEC_MIX: u32 = 4;
const SEC_INDEXER: u32 = 5;
const SEC_DECODER: u32 = 6;
const SEC_NONRIGID: u32 = 7;
const SEC_TEMPLATE: u32 = 8;
const SEC_BBOXES: u32 = 9;
const SEC_RENDER: u32 = 10;
const SEC_META: u32 = 11;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension exceeds u32"));
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn vec3(&mut self, v: Vec3) {
        v.iter().for_each(|&c| self.f64(c));
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f32(x));
    }
    fn section(&mut self, id: u32, body: Writer) {
        self.u32(id);
        self.buf.extend_from_slice(&(body.buf.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&body.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> Error {
    Error::Malformed(what.to_string())
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed("unexpected end of section"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("invalid UTF-8 string"))
    }
    /// `n` f32 values, refusing counts larger than the remaining bytes.
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn count(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_item_bytes) > self.buf.len() - self.pos {
            return Err(malformed("item count exceeds section size"));
        }
        Ok(n)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(malformed("trailing bytes in section"));
        }
        Ok(())
    }
}

fn write_mlp(w: &mut Writer, mlp: &Mlp) {
    w.u8(mlp.activation.code());
    w.usize(mlp.layers.len());
    for l in &mlp.layers {
        w.usize(l.inputs);
        w.usize(l.outputs);
    }
    for l in &mlp.layers {
        w.f32s(&l.weight);
        w.f32s(&l.bias);
    }
}

fn read_mlp(r: &mut Reader<'_>) -> Result<Mlp> {
    let activation = Activation::from_code(r.u8()?).ok_or_else(|| malformed("unknown activation"))?;
    let n = r.count(8)?;
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        shapes.push((r.usize()?, r.usize()?));
    }
    let mut layers = Vec::with_capacity(n);
    for (inputs, outputs) in shapes {
        let weight = r.f32s(
            inputs
                .checked_mul(outputs)
                .ok_or_else(|| malformed("layer too large"))?,
        )?;
        let bias = r.f32s(outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            weight,
            bias,
        });
    }
    let mlp = Mlp { layers, activation };
    mlp.validate()?;
    Ok(mlp)
}

fn encode_payload(scene: &Scene) -> Vec<u8> {
    let mut out = Writer::default();

    let mut w = Writer::default();
    w.usize(scene.catalog.len());
    scene.catalog.names().iter().for_each(|n| w.str(n));
    out.section(SEC_CATALOG, w);

    let dims = scene.field.dims();
    let mut w = Writer::default();
    dims.ranks.iter().for_each(|&r| w.usize(r));
    w.usize(dims.feature_dim);
    w.usize(dims.resolution);
    w.usize(dims.attr_dim);
    out.section(SEC_DIMS, w);

    let mut w = Writer::default();
    for p in scene.field.planes() {
        w.u8(p.axis().code());
        w.usize(p.rows());
        w.usize(p.cols());
        w.usize(p.rank());
        w.f32s(p.data());
    }
    out.section(SEC_PLANES, w);

    let mut w = Writer::default();
    for m in scene.field.mix() {
        w.usize(m.rank);
        w.usize(m.features);
        w.f32s(&m.data);
    }
    out.section(SEC_MIX, w);

    let mut w = Writer::default();
    write_mlp(&mut w, &scene.indexer.mlp);
    out.section(SEC_INDEXER, w);

    let mut w = Writer::default();
    write_mlp(&mut w, &scene.decoder.mlp);
    out.section(SEC_DECODER, w);

    let mut w = Writer::default();
    w.f64(scene.nonrigid.max_offset);
    w.usize(scene.nonrigid.octaves);
    write_mlp(&mut w, &scene.nonrigid.mlp);
    out.section(SEC_NONRIGID, w);

    let t = &scene.template;
    let mut w = Writer::default();
    w.usize(t.k);
    w.usize(t.joints.len());
    for j in &t.joints {
        w.str(&j.name);
        w.i32(j.parent.map_or(-1, |p| p as i32));
        w.vec3(j.rest_position);
        w.u8(j.pose_group);
    }
    w.usize(t.capsules.len());
    for c in &t.capsules {
        w.usize(c.joint);
        w.vec3(c.a);
        w.vec3(c.b);
        w.f64(c.radius);
    }
    w.usize(t.vertices.len());
    for v in &t.vertices {
        w.vec3(v.position);
        w.usize(v.joint);
        v.shape.iter().for_each(|&s| w.vec3(s));
        v.pose.iter().for_each(|&s| w.vec3(s));
    }
    out.section(SEC_TEMPLATE, w);

    let mut w = Writer::default();
    w.usize(scene.bboxes.len());
    for b in &scene.bboxes {
        w.usize(b.label);
        w.vec3(b.min);
        w.vec3(b.max);
    }
    out.section(SEC_BBOXES, w);

    let d = &scene.defaults;
    let mut w = Writer::default();
    w.f64(d.settings.beta);
    w.vec3(d.settings.background);
    w.usize(d.settings.samples);
    w.u8(d.settings.early_stop.is_some() as u8);
    w.f64(d.settings.early_stop.unwrap_or(0.0));
    w.f64(d.settings.template_margin);
    w.usize(d.resolution);
    w.usize(d.active.len());
    d.active.iter().for_each(|&l| w.usize(l));
    out.section(SEC_RENDER, w);

    let mut w = Writer::default();
    w.str(&scene.style);
    out.section(SEC_META, w);

    out.buf
}

/// Serialize a scene to container bytes.
pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let payload = encode_payload(scene);
    let mut bytes = Vec::with_capacity(payload.len() + 16);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    bytes
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_scene(scene))?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    decode_scene(&std::fs::read(path)?)
}

/// Parse container bytes; header and checksum are verified before any
/// section is decoded.
pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let head = bytes.len().min(8);
    if bytes[..head] != MAGIC[..head] {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        // A prefix of a valid file: nothing left to checksum against.
        return Err(Error::Checksum {
            stored: 0,
            computed: crc32fast::hash(bytes.get(12..).unwrap_or(&[])),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let payload = &bytes[12..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut sections: Vec<(u32, &[u8])> = Vec::new();
    let mut r = Reader::new(payload);
    while r.pos < payload.len() {
        let id = r.u32()?;
        let len = usize::try_from(r.u64()?).map_err(|_| malformed("section too large"))?;
        sections.push((id, r.take(len)?));
    }
    let section = |id: u32| -> Result<Reader<'_>> {
        sections
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, b)| Reader::new(b))
            .ok_or_else(|| Error::Malformed(format!("missing section {id}")))
    };

    let mut r = section(SEC_CATALOG)?;
    let n = r.count(4)?;
    let names = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let catalog = AttributeCatalog::new(names)?;

    let mut r = section(SEC_DIMS)?;
    let dims = FieldDims {
        ranks: [r.usize()?, r.usize()?, r.usize()?],
        feature_dim: r.usize()?,
        resolution: r.usize()?,
        attr_dim: r.usize()?,
    };
    r.finish()?;

    let mut r = section(SEC_PLANES)?;
    let mut planes = Vec::with_capacity(6);
    for _ in 0..6 {
        let axis = AxisPair::from_code(r.u8()?).ok_or_else(|| malformed("unknown plane axis"))?;
        let (rows, cols, rank) = (r.usize()?, r.usize()?, r.usize()?);
        let len = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(rank))
            .ok_or_else(|| malformed("plane too large"))?;
        planes.push(PlaneGrid::from_data(axis, rows, cols, rank, r.f32s(len)?)?);
    }
    r.finish()?;

    let mut r = section(SEC_MIX)?;
    let mut mix = Vec::with_capacity(3);
    for _ in 0..3 {
        let (rank, features) = (r.usize()?, r.usize()?);
        let len = rank.checked_mul(features).ok_or_else(|| malformed("mix too large"))?;
        mix.push(MixMatrix {
            rank,
            features,
            data: r.f32s(len)?,
        });
    }
    r.finish()?;
    let planes: [PlaneGrid; 6] = planes.try_into().unwrap();
    let mix: [MixMatrix; 3] = mix.try_into().unwrap();
    let field = SpaceAttributeField::from_parts(dims, planes, mix)?;

    let mut r = section(SEC_INDEXER)?;
    let indexer = IndexerMlp::from_mlp(read_mlp(&mut r)?)?;
    r.finish()?;

    let mut r = section(SEC_DECODER)?;
    let decoder = DecoderMlp::from_mlp(read_mlp(&mut r)?)?;
    r.finish()?;

    let mut r = section(SEC_NONRIGID)?;
    let max_offset = r.f64()?;
    let octaves = r.usize()?;
    let nonrigid = NonRigidMlp {
        mlp: read_mlp(&mut r)?,
        max_offset,
        octaves,
    };
    r.finish()?;

    let mut r = section(SEC_TEMPLATE)?;
    let k = r.usize()?;
    let nj = r.count(33)?;
    let mut joints = Vec::with_capacity(nj);
    for _ in 0..nj {
        let name = r.str()?;
        let parent = r.i32()?;
        joints.push(Joint {
            name,
            parent: (parent >= 0).then_some(parent as usize),
            rest_position: r.vec3()?,
            pose_group: r.u8()?,
        });
    }
    let nc = r.count(60)?;
    let mut capsules = Vec::with_capacity(nc);
    for _ in 0..nc {
        capsules.push(Capsule {
            joint: r.usize()?,
            a: r.vec3()?,
            b: r.vec3()?,
            radius: r.f64()?,
        });
    }
    let nv = r.count(124)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let position = r.vec3()?;
        let joint = r.usize()?;
        let mut shape = [[0.0; 3]; SHAPE_COEFFS];
        for s in &mut shape {
            *s = r.vec3()?;
        }
        let mut pose = [[0.0; 3]; POSE_COEFFS];
        for s in &mut pose {
            *s = r.vec3()?;
        }
        vertices.push(SkinVertex {
            position,
            joint,
            shape,
            pose,
        });
    }
    r.finish()?;
    let template = TemplateSkeleton {
        joints,
        capsules,
        vertices,
        k,
    };

    let mut r = section(SEC_BBOXES)?;
    let nb = r.count(52)?;
    let mut bboxes = Vec::with_capacity(nb);
    for _ in 0..nb {
        bboxes.push(AttributeBBox {
            label: r.usize()?,
            min: r.vec3()?,
            max: r.vec3()?,
        });
    }
    r.finish()?;

    let mut r = section(SEC_RENDER)?;
    let beta = r.f64()?;
    let background = r.vec3()?;
    let samples = r.usize()?;
    let has_stop = r.u8()? != 0;
    let stop = r.f64()?;
    let template_margin = r.f64()?;
    let resolution = r.usize()?;
    let na = r.count(4)?;
    let active = (0..na).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    r.finish()?;

    let mut r = section(SEC_META)?;
    let style = r.str()?;
    r.finish()?;

    let scene = Scene {
        catalog,
        field,
        indexer,
        decoder,
        nonrigid,
        template,
        bboxes,
        defaults: RenderDefaults {
            settings: RenderSettings {
                beta,
                background,
                samples,
                early_stop: has_stop.then_some(stop),
                template_margin,
            },
            resolution,
            active,
        },
        style,
    };
    scene.validate()?;
    Ok(scene)
}
