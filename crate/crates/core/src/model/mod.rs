//! Conditional deprojection model: prior encoder `p(z|x)`, posterior encoder
//! `q(z|y)` and the decoder `g(x, z)`.

mod gaussian;
mod net;
mod params;

use rand::Rng as _;

use crate::checkpoint::Container;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{FlushDenormals, Tape, Tensor};

pub use gaussian::{kl_diag, DiagonalGaussian, LOG_VAR_MAX, LOG_VAR_MIN};
pub use net::{GaussianVar, LossVars, Network};
pub use params::{ModelParams, ParamSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Latent-variable model.
    Cvae,
    /// Decoder only, no latent input.
    Det,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cvae => "cvae",
            Variant::Det => "det",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cvae" => Ok(Variant::Cvae),
            "det" => Ok(Variant::Det),
            _ => Err(Error::invalid(format!("unknown model variant `{s}` (cvae, det)"))),
        }
    }
}

/// Architecture hyperparameters. Shapes exclude the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `[channels, s0, s1, (s2)]`.
    pub signal_shape: Vec<usize>,
    /// Axis of `signal_shape` removed by the projection (never 0).
    pub collapse_axis: usize,
    pub latent_dim: usize,
    pub enc_channels: Vec<usize>,
    pub dec_channels: Vec<usize>,
    /// Channels of the latent image concatenated at the coarsest level.
    pub z_channels: usize,
    /// `F`: the expansion layer emits `T * F` channels.
    pub expand_features: usize,
    pub refine_channels: Vec<usize>,
    pub slope: f32,
    pub beta: f32,
    pub variant: Variant,
}

impl ModelConfig {
    /// Defaults for a `[1, frames, height, width]` clip collapsed along time.
    pub fn for_signal(signal_shape: Vec<usize>, collapse_axis: usize) -> Self {
        ModelConfig {
            signal_shape,
            collapse_axis,
            latent_dim: 10,
            enc_channels: vec![8, 16, 32],
            dec_channels: vec![16, 32, 32],
            z_channels: 8,
            expand_features: 4,
            refine_channels: vec![8],
            slope: 0.2,
            beta: 1.0,
            variant: Variant::Cvae,
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let signal_shape = vec![
            1,
            cfg.count("data.frames", 1)?,
            cfg.count("data.height", 1)?,
            cfg.count("data.width", 1)?,
        ];
        let mc = ModelConfig {
            signal_shape,
            collapse_axis: cfg.count("data.projection_axis", 1)?,
            latent_dim: cfg.count("model.latent_dim", 1)?,
            enc_channels: cfg.counts("model.enc_channels", 1)?,
            dec_channels: cfg.counts("model.dec_channels", 1)?,
            z_channels: cfg.count("model.z_channels", 1)?,
            expand_features: cfg.count("model.expand_features", 1)?,
            refine_channels: cfg.counts("model.refine_channels", 1)?,
            slope: cfg.float("model.slope") as f32,
            beta: cfg.float("model.beta") as f32,
            variant: Variant::parse(cfg.string("model.variant"))?,
        };
        mc.validate()?;
        Ok(mc)
    }

    pub fn validate(&self) -> Result<()> {
        let rank = self.signal_shape.len();
        if !(3..=4).contains(&rank) || self.signal_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "signal shape {:?} must be [channels, 2 or 3 positive extents]",
                self.signal_shape
            )));
        }
        if self.collapse_axis == 0 || self.collapse_axis >= rank {
            return Err(Error::invalid(format!(
                "collapse axis {} must be a spatial axis of {:?}",
                self.collapse_axis, self.signal_shape
            )));
        }
        let ladders = [
            ("enc_channels", &self.enc_channels),
            ("dec_channels", &self.dec_channels),
        ];
        for (name, l) in ladders {
            if l.is_empty() || l.contains(&0) {
                return Err(Error::invalid(format!("{name} {l:?} must be non-empty and positive")));
            }
        }
        if self.refine_channels.contains(&0) {
            return Err(Error::invalid("refine_channels entries must be positive"));
        }
        if self.latent_dim == 0 || self.z_channels == 0 || self.expand_features == 0 {
            return Err(Error::invalid("latent_dim, z_channels and expand_features must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::invalid(format!("slope {} must be in [0, 1)", self.slope)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta {} must be >= 0", self.beta)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.signal_shape[0]
    }

    /// `T`, the extent of the collapsed axis.
    pub fn collapsed_extent(&self) -> usize {
        self.signal_shape[self.collapse_axis]
    }

    pub fn projection_shape(&self) -> Vec<usize> {
        let mut s = self.signal_shape.clone();
        s.remove(self.collapse_axis);
        s
    }

    pub fn to_metadata(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("model.signal_shape".into(), list(&self.signal_shape)),
            ("model.collapse_axis".into(), self.collapse_axis.to_string()),
            ("model.latent_dim".into(), self.latent_dim.to_string()),
            ("model.enc_channels".into(), list(&self.enc_channels)),
            ("model.dec_channels".into(), list(&self.dec_channels)),
            ("model.z_channels".into(), self.z_channels.to_string()),
            ("model.expand_features".into(), self.expand_features.to_string()),
            ("model.refine_channels".into(), list(&self.refine_channels)),
            ("model.slope".into(), format!("{:?}", self.slope)),
            ("model.beta".into(), format!("{:?}", self.beta)),
            ("model.variant".into(), self.variant.name().into()),
        ]
    }

    pub fn from_metadata(c: &Container) -> Result<Self> {
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw = c.require_meta(key)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Format(format!("metadata `{key}` has bad entry `{p}`")))
                })
                .collect()
        };
        let mc = ModelConfig {
            signal_shape: list("model.signal_shape")?,
            collapse_axis: c.meta_parse("model.collapse_axis")?,
            latent_dim: c.meta_parse("model.latent_dim")?,
            enc_channels: list("model.enc_channels")?,
            dec_channels: list("model.dec_channels")?,
            z_channels: c.meta_parse("model.z_channels")?,
            expand_features: c.meta_parse("model.expand_features")?,
            refine_channels: list("model.refine_channels")?,
            slope: c.meta_parse("model.slope")?,
            beta: c.meta_parse("model.beta")?,
            variant: Variant::parse(c.require_meta("model.variant")?)?,
        };
        mc.validate()?;
        Ok(mc)
    }
}

/// Scalar loss terms of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// A configuration with its `f32` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams<f32>,
}

fn batched(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(shape)
}

fn unbatched(t: &Tensor<f32>) -> Vec<Tensor<f32>> {
    t.unstack()
}

const DECODE_CHUNK: usize = 16;

impl Model {
    /// Fresh parameters from the init stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<f32>) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<f32> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<f32> {
        self.params
    }

    fn network<'a>(&'a self, tape: &mut Tape<f32>) -> Network<'a, f32> {
        Network::bind(tape, &self.config, &self.params, false)
    }

    fn gaussian(tape: &Tape<f32>, g: GaussianVar) -> Result<DiagonalGaussian> {
        DiagonalGaussian::new(
            tape.value(g.mean).data().to_vec(),
            tape.value(g.log_var).data().to_vec(),
        )
    }

    /// `q(z|y)` for one unbatched signal.
    pub fn posterior_encode(&self, y: &Tensor<f32>) -> Result<DiagonalGaussian> {
        let mut tape = Tape::new();
        let net = self.network(&mut tape);
        let yv = tape.constant(batched(y)?);
        let g = net.posterior(&mut tape, yv)?;
        Self::gaussian(&tape, g)
    }

    /// `p(z|x)` for one unbatched projection.
    pub fn prior_encode(&self, x: &Tensor<f32>) -> Result<DiagonalGaussian> {
        let mut tape = Tape::new();
        let net = self.network(&mut tape);
        let xv = tape.constant(batched(x)?);
        let g = net.prior(&mut tape, xv)?;
        Self::gaussian(&tape, g)
    }

    /// `g(x, z)` for each latent in `zs`, sharing one projection `x`.
    /// `Det` models take no latent: pass a single empty slice.
    pub fn deproject_many(&self, x: &Tensor<f32>, zs: &[Vec<f32>]) -> Result<Vec<Tensor<f32>>> {
        let _flush = FlushDenormals::new();
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(DECODE_CHUNK) {
            let xs: Vec<&Tensor<f32>> = vec![x; chunk.len()];
            let mut tape = Tape::new();
            let net = self.network(&mut tape);
            let xv = tape.constant(Tensor::stack(&xs)?);
            let zv = match self.config.variant {
                Variant::Cvae => {
                    let l = self.config.latent_dim;
                    let mut flat = Vec::with_capacity(chunk.len() * l);
                    for z in chunk {
                        if z.len() != l {
                            return Err(Error::shape(
                                "deproject",
                                format!("latent has {} entries, expected {l}", z.len()),
                            ));
                        }
                        flat.extend_from_slice(z);
                    }
                    Some(tape.constant(Tensor::new(vec![chunk.len(), l], flat)?))
                }
                Variant::Det => None,
            };
            let y = net.decode(&mut tape, xv, zv)?;
            out.extend(unbatched(tape.value(y)));
        }
        Ok(out)
    }

    pub fn deproject(&self, x: &Tensor<f32>, z: &[f32]) -> Result<Tensor<f32>> {
        let mut v = self.deproject_many(x, &[z.to_vec()])?;
        Ok(v.remove(0))
    }

    /// `n` candidates for `x`: prior samples for `Cvae`, `n` copies of the
    /// single output for `Det`.
    pub fn sample(&self, x: &Tensor<f32>, n: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        match self.config.variant {
            Variant::Cvae => {
                let p = self.prior_encode(x)?;
                let zs = (0..n)
                    .map(|_| p.reparam_sample(&rng::standard_normal(rng, p.dim())))
                    .collect::<Result<Vec<_>>>()?;
                self.deproject_many(x, &zs)
            }
            Variant::Det => {
                let y = self.deproject(x, &[])?;
                Ok(vec![y; n])
            }
        }
    }

    /// One-sample loss for a single pair with noise `eps` (ignored by `Det`).
    pub fn loss(&self, x: &Tensor<f32>, y: &Tensor<f32>, eps: &[f32], beta: f32) -> Result<LossParts> {
        let mut tape = Tape::new();
        let net = self.network(&mut tape);
        let xv = tape.constant(batched(x)?);
        let yv = tape.constant(batched(y)?);
        let eps = match self.config.variant {
            Variant::Cvae => Some(tape.constant(Tensor::new(vec![1, eps.len()], eps.to_vec())?)),
            Variant::Det => None,
        };
        let l = net.loss(&mut tape, xv, yv, eps, beta)?;
        Ok(l.values(&tape))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for (name, t) in self.params.iter() {
            c.push_tensor(format!("param/{name}"), t.clone());
        }
        for (k, v) in self.config.to_metadata() {
            c.push_meta(k, v);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = ModelConfig::from_metadata(c)?;
        let params = ModelParams::from_container(&config, c, "param/")?;
        Model::from_parts(config, params)
    }
}

/// Uniform draw in `(-a, a)`.
pub(crate) fn uniform(rng: &mut Rng, a: f32) -> f32 {
    if a == 0.0 {
        0.0
    } else {
        rng.random_range(-a..a)
    }
}
