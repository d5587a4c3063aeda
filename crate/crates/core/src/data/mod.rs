//! Clip datasets, (projection, signal) pairs and deterministic splits.

pub mod glyphs;
pub mod idx;
pub mod synth;

use std::path::Path;

use rand::seq::SliceRandom;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::projection::{project, ProjectionSpec};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

pub use glyphs::{builtin_glyphs, scale_glyphs};
pub use idx::{encode_idx, read_idx, read_idx_file};
pub use synth::{synth_moving_digits, SynthConfig};

/// Equally shaped signals with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipDataset {
    clips: Vec<Tensor<f32>>,
    seed: u64,
    config_hash: String,
}

impl ClipDataset {
    pub fn new(clips: Vec<Tensor<f32>>, seed: u64, config_hash: String) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one clip"))?;
        for (i, c) in clips.iter().enumerate() {
            if c.shape() != first.shape() {
                return Err(Error::shape(
                    "dataset",
                    format!("clip {i} is {:?}, clip 0 is {:?}", c.shape(), first.shape()),
                ));
            }
            if c.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("clip {i} has values outside [0, 1]")));
            }
        }
        Ok(ClipDataset {
            clips,
            seed,
            config_hash,
        })
    }

    pub fn clips(&self) -> &[Tensor<f32>] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip_shape(&self) -> &[usize] {
        self.clips[0].shape()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for (i, clip) in self.clips.iter().enumerate() {
            c.push_tensor(format!("clip/{i}"), clip.clone());
        }
        c.push_meta("kind", "clips");
        c.push_meta("seed", self.seed);
        c.push_meta("config_hash", &self.config_hash);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("kind") != Some("clips") {
            return Err(Error::Format("container does not hold a clip dataset".into()));
        }
        let clips = c
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, (name, t))| {
                if *name != format!("clip/{i}") {
                    return Err(Error::Format(format!("expected clip/{i}, found `{name}`")));
                }
                Ok(t.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clips, c.meta_parse("seed")?, c.require_meta("config_hash")?.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    fn subset(&self, idx: &[usize]) -> ClipDataset {
        ClipDataset {
            clips: idx.iter().map(|&i| self.clips[i].clone()).collect(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }
}

/// A projection `x` and the signal `y` it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pairs: Vec<Pair>,
    spec: ProjectionSpec,
    noise_sigma: f32,
}

impl PairSet {
    /// Wraps externally built pairs; every `y` must project to the shape of
    /// its `x` under `spec`.
    pub fn from_pairs(pairs: Vec<Pair>, spec: ProjectionSpec, noise_sigma: f32) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let expected = spec.projected_shape(first.y.shape())?;
            for (i, p) in pairs.iter().enumerate() {
                if p.y.shape() != first.y.shape() || p.x.shape() != expected {
                    return Err(Error::shape(
                        "pairs",
                        format!(
                            "pair {i} is x {:?}, y {:?}; expected x {expected:?}, y {:?}",
                            p.x.shape(),
                            p.y.shape(),
                            first.y.shape()
                        ),
                    ));
                }
            }
        }
        Ok(PairSet {
            pairs,
            spec,
            noise_sigma,
        })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn noise_sigma(&self) -> f32 {
        self.noise_sigma
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// First `n` pairs (all when `n` exceeds the size).
    pub fn truncated(&self, n: usize) -> PairSet {
        PairSet {
            pairs: self.pairs[..n.min(self.pairs.len())].to_vec(),
            spec: self.spec.clone(),
            noise_sigma: self.noise_sigma,
        }
    }
}

/// `x_i = project(y_i) + eps_i` with `eps_i ~ N(0, sigma^2)` drawn from the
/// stream keyed by `(seed, i)`. No clamping is applied.
pub fn make_pairs(
    dataset: &ClipDataset,
    spec: &ProjectionSpec,
    noise_sigma: f32,
    seed: u64,
) -> Result<PairSet> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let pairs = dataset
        .clips()
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let mut x = project(y, spec)?;
            if noise_sigma > 0.0 {
                let mut r = rng::stream(seed, Purpose::PairNoise, i as u64);
                let eps = rng::standard_normal(&mut r, x.numel());
                for (v, e) in x.data_mut().iter_mut().zip(eps) {
                    *v += noise_sigma * e;
                }
            }
            Ok(Pair { x, y: y.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairSet {
        pairs,
        spec: spec.clone(),
        noise_sigma,
    })
}

/// Seeded shuffle then contiguous train/val/test partition. Validation and
/// test sizes are floored; the remainder goes to training.
pub fn split(
    dataset: &ClipDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(ClipDataset, ClipDataset, ClipDataset)> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|&r| !(r > 0.0)) || (tr + va + te - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let n = dataset.len();
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_val == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::invalid(format!(
            "split of {n} clips by {ratios:?} leaves an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Split, 0));
    Ok((
        dataset.subset(&order[..n_train]),
        dataset.subset(&order[n_train..n_train + n_val]),
        dataset.subset(&order[n_train + n_val..]),
    ))
}

/// Shifts the last two axes by `(dy, dx)` pixels with zero fill.
pub fn translate(clip: &Tensor<f32>, dy: i64, dx: i64) -> Tensor<f32> {
    let s = clip.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = vec![0.0f32; clip.numel()];
    for (src, dst) in clip.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h as i64 {
            let sy = y - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w as i64 {
                let sx = x - dx;
                if sx >= 0 && sx < w as i64 {
                    dst[(y * w as i64 + x) as usize] = src[(sy * w as i64 + sx) as usize];
                }
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same shape")
}
