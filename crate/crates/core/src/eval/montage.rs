use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `[0, 1] -> [0, 255]`, clamped, rounding half up.
fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Splits a tensor into `(h, w)` frames over its last two axes; rank-1
/// tensors are a single `1 x n` frame.
fn frames(t: &Tensor<f32>) -> (usize, usize, Vec<&[f32]>) {
    let s = t.shape();
    let (h, w) = if s.len() == 1 {
        (1, s[0])
    } else {
        (s[s.len() - 2], s[s.len() - 1])
    };
    (h, w, t.data().chunks(h * w).collect())
}

/// Tiles the frames of each row's tensors left to right, one row of
/// examples per entry of `rows`, top to bottom. Short rows are padded black.
pub fn montage(rows: &[Vec<Tensor<f32>>]) -> Result<Image> {
    let mut frame_size = None;
    let mut strips: Vec<Vec<&[f32]>> = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let mut strip = Vec::new();
        for t in row {
            let (h, w, f) = frames(t);
            match frame_size {
                None => frame_size = Some((h, w)),
                Some(hw) if hw != (h, w) => {
                    return Err(Error::shape(
                        "montage",
                        format!("row {r} has {h}x{w} frames, earlier frames are {}x{}", hw.0, hw.1),
                    ))
                }
                _ => {}
            }
            strip.extend(f);
        }
        strips.push(strip);
    }
    let (fh, fw) = frame_size.ok_or_else(|| Error::invalid("montage needs at least one frame"))?;
    let cols = strips.iter().map(Vec::len).max().unwrap_or(0);
    let (width, height) = (cols * fw, strips.len() * fh);
    let mut pixels = vec![0u8; width * height];
    for (r, strip) in strips.iter().enumerate() {
        for (c, frame) in strip.iter().enumerate() {
            for y in 0..fh {
                let dst = (r * fh + y) * width + c * fw;
                for (d, &v) in pixels[dst..dst + fw].iter_mut().zip(&frame[y * fw..(y + 1) * fw]) {
                    *d = to_byte(v);
                }
            }
        }
    }
    Ok(Image { width, height, pixels })
}

/// Binary PGM (`P5`, maxval 255).
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn emit_montage(rows: &[Vec<Tensor<f32>>], path: &Path) -> Result<()> {
    let img = montage(rows)?;
    std::fs::write(path, encode_pgm(&img))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
