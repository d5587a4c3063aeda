//! Bouncing-digit clips.

use rand::Rng as _;

use super::ClipDataset;
use crate::config::digest_hex;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub clips: usize,
    pub digits: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive per-axis speed range in pixels per frame.
    pub speed_min: u32,
    pub speed_max: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clips: 2000,
            digits: 2,
            frames: 8,
            height: 32,
            width: 32,
            speed_min: 1,
            speed_max: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn describe(&self) -> String {
        format!(
            "clips={};digits={};frames={};height={};width={};speed={}..={};seed={}",
            self.clips,
            self.digits,
            self.frames,
            self.height,
            self.width,
            self.speed_min,
            self.speed_max,
            self.seed
        )
    }
}

/// One reflective step along an axis with positions in `[0, max]`.
/// Returns the new position and velocity.
pub fn bounce_step(pos: i64, vel: i64, max: i64) -> (i64, i64) {
    if max <= 0 {
        return (0, vel);
    }
    let (mut p, mut v) = (pos + vel, vel);
    loop {
        if p < 0 {
            p = -p;
            v = -v;
        } else if p > max {
            p = 2 * max - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Sprite {
    glyph: usize,
    pos: [i64; 2],
    vel: [i64; 2],
}

fn stamp(frame: &mut [f32], width: usize, glyph: &[f32], gh: usize, gw: usize, pos: [i64; 2]) {
    let (y0, x0) = (pos[0] as usize, pos[1] as usize);
    for y in 0..gh {
        let dst = &mut frame[(y0 + y) * width + x0..][..gw];
        for (d, &g) in dst.iter_mut().zip(&glyph[y * gw..(y + 1) * gw]) {
            *d = d.max(g);
        }
    }
}

/// Renders clips shaped `[1, frames, height, width]` from `[N, h, w]` glyphs.
///
/// Sprites move with constant integer velocity, reflect off the canvas edges
/// and composite by per-pixel maximum. Clip `i` draws from its own stream,
/// so output depends only on `(seed, i)`.
pub fn synth_moving_digits(glyphs: &Tensor<f32>, cfg: &SynthConfig) -> Result<ClipDataset> {
    if glyphs.rank() != 3 {
        return Err(Error::shape(
            "synth",
            format!("glyphs must be [N, h, w], got {:?}", glyphs.shape()),
        ));
    }
    let (n, gh, gw) = (glyphs.shape()[0], glyphs.shape()[1], glyphs.shape()[2]);
    if gh > cfg.height || gw > cfg.width {
        return Err(Error::invalid(format!(
            "glyph {gh}x{gw} larger than canvas {}x{}",
            cfg.height, cfg.width
        )));
    }
    if cfg.frames == 0 || cfg.clips == 0 || cfg.digits == 0 {
        return Err(Error::invalid("clips, digits and frames must be positive"));
    }
    if cfg.speed_min > cfg.speed_max {
        return Err(Error::invalid(format!(
            "speed range {}..={} is empty",
            cfg.speed_min, cfg.speed_max
        )));
    }
    let max = [(cfg.height - gh) as i64, (cfg.width - gw) as i64];
    let plane = cfg.height * cfg.width;
    let glyph_data: Vec<&[f32]> = glyphs.data().chunks(gh * gw).collect();

    let clips = (0..cfg.clips)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, Purpose::Synth, i as u64);
            let mut sprites: Vec<Sprite> = (0..cfg.digits)
                .map(|_| {
                    let glyph = r.random_range(0..n as u32) as usize;
                    let pos = [r.random_range(0..=max[0]), r.random_range(0..=max[1])];
                    let mut vel = [0i64; 2];
                    for v in &mut vel {
                        let speed = r.random_range(cfg.speed_min..=cfg.speed_max) as i64;
                        *v = if r.random_bool(0.5) { speed } else { -speed };
                    }
                    Sprite { glyph, pos, vel }
                })
                .collect();
            let mut data = vec![0.0f32; cfg.frames * plane];
            for frame in data.chunks_mut(plane) {
                for s in &mut sprites {
                    stamp(frame, cfg.width, glyph_data[s.glyph], gh, gw, s.pos);
                    for a in 0..2 {
                        (s.pos[a], s.vel[a]) = bounce_step(s.pos[a], s.vel[a], max[a]);
                    }
                }
            }
            Tensor::new(vec![1, cfg.frames, cfg.height, cfg.width], data)
        })
        .collect::<Result<Vec<_>>>()?;

    ClipDataset::new(clips, cfg.seed, digest_hex(cfg.describe().as_bytes()))
}
