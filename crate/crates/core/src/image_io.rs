//! PNG and depth-map output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::{RenderOutput, BACKGROUND_LABEL};

pub const DEPTH_MAGIC: &[u8; 8] = b"ATTRDPTH";

/// Display colors for semantic labels; label `i` uses entry `i % 16`.
const PALETTE: [[u8; 3]; 16] = [
    [66, 84, 140],
    [214, 64, 64],
    [150, 80, 170],
    [76, 160, 100],
    [52, 70, 160],
    [220, 170, 50],
    [110, 80, 50],
    [40, 40, 40],
    [230, 180, 150],
    [90, 60, 40],
    [120, 70, 30],
    [0, 150, 160],
    [200, 100, 160],
    [140, 140, 60],
    [60, 120, 200],
    [180, 120, 90],
];

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut w = enc.write_header()?;
        w.write_image_data(data)?;
    }
    Ok(out)
}

/// 8-bit RGB PNG bytes.
pub fn encode_rgb_png(out: &RenderOutput) -> Result<Vec<u8>> {
    let data: Vec<u8> = out.rgb.iter().map(|&v| to_u8(v)).collect();
    encode_png(out.width, out.height, png::ColorType::Rgb, None, &data)
}

/// Paletted PNG of the semantic argmax; index = catalog label, background
/// is white.
pub fn encode_semantic_png(out: &RenderOutput) -> Result<Vec<u8>> {
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..256usize {
        if i == BACKGROUND_LABEL as usize {
            palette.extend_from_slice(&[255, 255, 255]);
        } else {
            palette.extend_from_slice(&PALETTE[i % PALETTE.len()]);
        }
    }
    encode_png(
        out.width,
        out.height,
        png::ColorType::Indexed,
        Some(palette),
        &out.semantic,
    )
}

/// `"ATTRDPTH"`, u32 width, u32 height, then row-major f32, little-endian.
pub fn encode_depth(out: &RenderOutput) -> Vec<u8> {
    let mut b = Vec::with_capacity(16 + 4 * out.depth.len());
    b.extend_from_slice(DEPTH_MAGIC);
    b.extend_from_slice(&(out.width as u32).to_le_bytes());
    b.extend_from_slice(&(out.height as u32).to_le_bytes());
    for &d in &out.depth {
        b.extend_from_slice(&(d as f32).to_le_bytes());
    }
    b
}

pub fn decode_depth(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != DEPTH_MAGIC {
        return Err(Error::Malformed("not a depth map".into()));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 4 * w * h {
        return Err(Error::Malformed("depth map size mismatch".into()));
    }
    let d = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((w, h, d))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Write `rgb.png`, `sem.png` and `depth.bin` into `dir`.
pub fn write_render(dir: impl AsRef<Path>, out: &RenderOutput) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write(&dir.join("rgb.png"), &encode_rgb_png(out)?)?;
    write(&dir.join("sem.png"), &encode_semantic_png(out)?)?;
    write(&dir.join("depth.bin"), &encode_depth(out))?;
    Ok(())
}

pub fn write_rgb_png(path: impl AsRef<Path>, out: &RenderOutput) -> Result<()> {
    write(path.as_ref(), &encode_rgb_png(out)?)
}
