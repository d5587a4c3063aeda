//! Config-driven construction of glyphs, projections and pair splits.

use std::path::Path;

use crate::config::Config;
use crate::data::{builtin_glyphs, make_pairs, read_idx_file, scale_glyphs, split, ClipDataset, PairSet, SynthConfig};
use crate::error::{Error, Result};
use crate::projection::ProjectionSpec;
use crate::tensor::Tensor;

pub fn synth_config(cfg: &Config) -> Result<SynthConfig> {
    let speed = |key: &str| -> Result<u32> {
        u32::try_from(cfg.count(key, 0)?).map_err(|_| Error::Config {
            line: 0,
            key: key.into(),
            detail: "too large".into(),
        })
    };
    Ok(SynthConfig {
        clips: cfg.count("data.clips", 1)?,
        digits: cfg.count("data.digits", 1)?,
        frames: cfg.count("data.frames", 1)?,
        height: cfg.count("data.height", 1)?,
        width: cfg.count("data.width", 1)?,
        speed_min: speed("data.speed_min")?,
        speed_max: speed("data.speed_max")?,
        seed: cfg.seed("data.seed"),
    })
}

/// `data.glyphs` is `builtin` or the path of an IDX image file `[N, h, w]`,
/// resolved against `base`; then scaled by `data.glyph_scale`.
pub fn load_glyphs(cfg: &Config, base: &Path) -> Result<Tensor<f32>> {
    let src = cfg.string("data.glyphs");
    let glyphs = if src == "builtin" {
        builtin_glyphs()
    } else {
        let t = read_idx_file(&base.join(src))?;
        if t.rank() != 3 {
            return Err(Error::shape(
                "glyphs",
                format!("IDX glyph file must be [N, h, w], got {:?}", t.shape()),
            ));
        }
        t
    };
    Ok(scale_glyphs(&glyphs, cfg.count("data.glyph_scale", 1)?))
}

/// `data.projection_weights`: `average`, `slice:<k>` or comma-separated
/// weights, applied along `data.projection_axis` of `signal_shape`.
pub fn projection_spec(cfg: &Config, signal_shape: &[usize]) -> Result<ProjectionSpec> {
    let axis = cfg.count("data.projection_axis", 1)?;
    let extent = *signal_shape.get(axis).ok_or_else(|| Error::Config {
        line: 0,
        key: "data.projection_axis".into(),
        detail: format!("axis {axis} out of range for signals {signal_shape:?}"),
    })?;
    let raw = cfg.string("data.projection_weights");
    let bad = |detail: String| Error::Config {
        line: 0,
        key: "data.projection_weights".into(),
        detail,
    };
    let spec = if raw == "average" {
        ProjectionSpec::averaging(axis, extent)?
    } else if let Some(k) = raw.strip_prefix("slice:") {
        let k = k.parse().map_err(|_| bad(format!("bad slice index in `{raw}`")))?;
        ProjectionSpec::one_hot(axis, extent, k)?
    } else {
        let w = raw
            .split(',')
            .map(|p| p.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("expected average, slice:<k> or numbers, got `{raw}`")))?;
        ProjectionSpec::new(axis, w)?
    };
    spec.check(signal_shape)?;
    Ok(spec)
}

/// Train/validation/test pairs of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: PairSet,
    pub val: PairSet,
    pub test: PairSet,
}

/// Splits by `data.split_*` with `data.seed` and builds pairs with
/// `data.noise_sigma`. Each part draws noise from its own seed offset.
pub fn prepare_splits(dataset: &ClipDataset, cfg: &Config) -> Result<Splits> {
    let seed = cfg.seed("data.seed");
    let ratios = (
        cfg.float("data.split_train"),
        cfg.float("data.split_val"),
        cfg.float("data.split_test"),
    );
    let (tr, va, te) = split(dataset, ratios, seed)?;
    let spec = projection_spec(cfg, dataset.clip_shape())?;
    let sigma = cfg.float("data.noise_sigma") as f32;
    Ok(Splits {
        train: make_pairs(&tr, &spec, sigma, seed)?,
        val: make_pairs(&va, &spec, sigma, seed.wrapping_add(1))?,
        test: make_pairs(&te, &spec, sigma, seed.wrapping_add(2))?,
    })
}
