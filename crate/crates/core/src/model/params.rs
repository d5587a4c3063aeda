use super::{uniform, ModelConfig, Variant};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::{Scalar, Tensor};

pub(crate) const KERNEL: usize = 3;

/// Declared shape of one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamSpec {
    fn is_bias(&self) -> bool {
        self.name.ends_with("/b")
    }
}

/// Per-level strides and output extents of a conv ladder.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Level {
    pub stride: Vec<usize>,
    pub extent: Vec<usize>,
}

/// Encoder ladder: stride 2 on every axis longer than 1.
pub(crate) fn encoder_levels(input: &[usize], depth: usize) -> Vec<Level> {
    let mut ext = input.to_vec();
    (0..depth)
        .map(|_| {
            let stride: Vec<usize> = ext.iter().map(|&e| if e > 1 { 2 } else { 1 }).collect();
            ext = ext
                .iter()
                .zip(&stride)
                .map(|(&e, &s)| (e - 1) / s + 1)
                .collect();
            Level {
                stride,
                extent: ext.clone(),
            }
        })
        .collect()
}

/// Decoder ladder: level 0 keeps the resolution, later levels halve every
/// even axis so nearest upsampling restores it exactly.
pub(crate) fn decoder_levels(input: &[usize], depth: usize) -> Vec<Level> {
    let mut ext = input.to_vec();
    (0..depth)
        .map(|i| {
            let stride: Vec<usize> = ext
                .iter()
                .map(|&e| if i > 0 && e % 2 == 0 { 2 } else { 1 })
                .collect();
            ext = ext.iter().zip(&stride).map(|(&e, &s)| e / s).collect();
            Level {
                stride,
                extent: ext.clone(),
            }
        })
        .collect()
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, dims: usize) {
    let mut shape = vec![cout, cin];
    shape.extend(std::iter::repeat_n(KERNEL, dims));
    let fan_in = cin * KERNEL.pow(dims as u32);
    out.push(ParamSpec {
        name: format!("{name}/w"),
        shape,
        fan_in,
    });
    out.push(ParamSpec {
        name: format!("{name}/b"),
        shape: vec![cout],
        fan_in,
    });
}

fn dense(out: &mut Vec<ParamSpec>, name: &str, n_in: usize, n_out: usize) {
    out.push(ParamSpec {
        name: format!("{name}/w"),
        shape: vec![n_out, n_in],
        fan_in: n_in,
    });
    out.push(ParamSpec {
        name: format!("{name}/b"),
        shape: vec![n_out],
        fan_in: n_in,
    });
}

fn encoder(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig, input: &[usize]) {
    let levels = encoder_levels(input, cfg.enc_channels.len());
    let mut cin = cfg.channels();
    for (i, &c) in cfg.enc_channels.iter().enumerate() {
        conv(out, &format!("{prefix}/conv{i}"), cin, c, input.len());
        cin = c;
    }
    let flat = cin * levels.last().expect("non-empty ladder").extent.iter().product::<usize>();
    dense(out, &format!("{prefix}/mean"), flat, cfg.latent_dim);
    dense(out, &format!("{prefix}/logvar"), flat, cfg.latent_dim);
}

impl ModelConfig {
    /// Every parameter in canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let signal = &self.signal_shape[1..];
        let proj = &self.projection_shape()[1..];
        let dims = proj.len();
        if self.variant == Variant::Cvae {
            encoder(&mut out, "post", self, signal);
            encoder(&mut out, "prior", self, proj);
        }
        let d = &self.dec_channels;
        let levels = decoder_levels(proj, d.len());
        let mut cin = self.channels();
        for (i, &c) in d.iter().enumerate() {
            conv(&mut out, &format!("dec/down{i}"), cin, c, dims);
            cin = c;
        }
        let coarse: usize = levels.last().expect("non-empty ladder").extent.iter().product();
        let mut mid_in = cin;
        if self.variant == Variant::Cvae {
            dense(&mut out, "dec/z", self.latent_dim, self.z_channels * coarse);
            mid_in += self.z_channels;
        }
        conv(&mut out, "dec/mid", mid_in, cin, dims);
        for i in (1..d.len()).rev() {
            conv(&mut out, &format!("dec/up{i}"), d[i] + d[i - 1], d[i - 1], dims);
        }
        let f = self.expand_features;
        conv(&mut out, "dec/expand", d[0], self.collapsed_extent() * f, dims);
        let mut cin = f;
        for (j, &r) in self.refine_channels.iter().enumerate() {
            conv(&mut out, &format!("dec/refine{j}"), cin, r, dims + 1);
            cin = r;
        }
        conv(&mut out, "dec/out", cin, self.channels(), dims + 1);
        out
    }
}

/// Named parameter tensors in the canonical order of
/// [`ModelConfig::param_specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelParams<T> {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero. Parameter `i`
    /// draws from its own init stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let entries = cfg
            .param_specs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let t = if spec.is_bias() {
                    Tensor::zeros(spec.shape)?
                } else {
                    let a = (6.0 / spec.fan_in as f64).sqrt() as f32;
                    let mut r = rng::stream(seed, Purpose::Init, i as u64);
                    Tensor::from_fn(spec.shape, |_| T::lit(uniform(&mut r, a) as f64))?
                };
                Ok((spec.name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { entries })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let entries = cfg
            .param_specs()
            .into_iter()
            .map(|s| Ok((s.name, Tensor::zeros(s.shape)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { entries })
    }

    /// Rejects names or shapes that differ from `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = cfg.param_specs();
        if specs.len() != self.entries.len() {
            return Err(Error::shape(
                "params",
                format!("{} tensors, config declares {}", self.entries.len(), specs.len()),
            ));
        }
        for (spec, (name, t)) in specs.iter().zip(&self.entries) {
            if spec.name != *name || spec.shape != t.shape() {
                return Err(Error::shape(
                    "params",
                    format!(
                        "`{name}` {:?} where config declares `{}` {:?}",
                        t.shape(),
                        spec.name,
                        spec.shape
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Same names with every tensor replaced by `f(name, tensor)`.
    pub fn map(&self, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), f(n, t))).collect(),
        }
    }
}

impl ModelParams<f32> {
    /// Reads `<prefix><name>` for every declared parameter.
    pub fn from_container(cfg: &ModelConfig, c: &Container, prefix: &str) -> Result<Self> {
        let entries = cfg
            .param_specs()
            .into_iter()
            .map(|s| {
                let t = c.require_tensor(&format!("{prefix}{}", s.name))?.clone();
                Ok((s.name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = ModelParams { entries };
        p.check(cfg)?;
        Ok(p)
    }
}
