//! Optimization of the deprojection objective, checkpoints and the
//! validation-KL search for `beta`.

mod adam;
mod checkpoint;
mod tune;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::config::Config;
use crate::data::{translate, PairSet};
use crate::error::{Error, Result};
use crate::model::{LossParts, Model, ModelConfig, ModelParams, Network, Variant};
use crate::rng::{self, Purpose};
use crate::tensor::{FlushDenormals, Tape, Tensor};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{history_csv, Checkpoint};
pub use tune::{tune_beta, BetaProbe, BetaSearch, TuneConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub steps: usize,
    pub adam: AdamConfig,
    /// 1 trains on one batched tape. More threads split each batch into
    /// per-example passes whose gradients are summed in example order.
    pub threads: usize,
    /// Maximum random shift in pixels applied to each training pair; 0 disables.
    pub translate_augment: usize,
    pub output_bias: OutputBias,
}

/// Starting value of the output-layer bias.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputBias {
    #[default]
    Zero,
    /// Per channel, the logit of the mean training target.
    DataMean,
}

impl OutputBias {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(OutputBias::Zero),
            "data_mean" => Ok(OutputBias::DataMean),
            _ => Err(Error::invalid(format!(
                "unknown output bias init `{s}` (zero, data_mean)"
            ))),
        }
    }
}

/// Logit of the per-channel mean of the training signals, with the mean
/// clamped to `[1e-4, 1 - 1e-4]`.
pub fn output_bias_from_data(cfg: &ModelConfig, set: &PairSet) -> Vec<f32> {
    let c = cfg.channels();
    let mut sum = vec![0f64; c];
    let mut count = 0usize;
    for p in set.pairs() {
        let per = p.y.numel() / c;
        for (ch, chunk) in p.y.data().chunks(per).enumerate() {
            sum[ch] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        count += per;
    }
    sum.iter()
        .map(|s| {
            let m = (s / count.max(1) as f64).clamp(1e-4, 1.0 - 1e-4);
            (m / (1.0 - m)).ln() as f32
        })
        .collect()
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 30,
            steps: 0,
            adam: AdamConfig::default(),
            threads: 1,
            translate_augment: 0,
            output_bias: OutputBias::Zero,
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(TrainConfig {
            batch_size: cfg.count("train.batch_size", 1)?,
            epochs: cfg.count("train.epochs", 1)?,
            steps: cfg.count("train.steps", 0)?,
            adam: AdamConfig {
                lr: cfg.float("train.lr") as f32,
                beta1: cfg.float("train.adam_beta1") as f32,
                beta2: cfg.float("train.adam_beta2") as f32,
                eps: cfg.float("train.adam_eps") as f32,
            },
            threads: cfg.count("train.threads", 1)?,
            translate_augment: cfg.count("data.translate_augment", 0)?,
            output_bias: OutputBias::parse(cfg.string("train.output_bias"))?,
        })
    }
}

/// Per-epoch means over examples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: LossParts,
    pub val: Option<LossParts>,
}

#[derive(Default)]
struct Mean {
    total: f64,
    recon: f64,
    kl: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, l: LossParts, n: usize) {
        let w = n as f64;
        self.total += l.total * w;
        self.recon += l.recon * w;
        self.kl += l.kl * w;
        self.n += n;
    }

    fn get(&self) -> LossParts {
        let n = self.n.max(1) as f64;
        LossParts {
            total: self.total / n,
            recon: self.recon / n,
            kl: self.kl / n,
        }
    }
}

fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    Tensor::stack(items)
}

/// Loss and parameter gradients for one batch on a single tape.
pub fn loss_and_grads(
    cfg: &ModelConfig,
    params: &ModelParams<f32>,
    x: Tensor<f32>,
    y: Tensor<f32>,
    eps: Option<Tensor<f32>>,
    beta: f32,
) -> Result<(LossParts, Vec<Tensor<f32>>)> {
    let _flush = FlushDenormals::new();
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, cfg, params, true);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let ev = eps.map(|e| tape.constant(e));
    let loss = net.loss(&mut tape, xv, yv, ev, beta)?;
    let mut grads = tape.backward(loss.total)?;
    let g = net
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()).expect("valid shape"))
        })
        .collect();
    Ok((loss.values(&tape), g))
}

struct Batch<'a> {
    xs: Vec<&'a Tensor<f32>>,
    ys: Vec<&'a Tensor<f32>>,
    /// `[B, L]` noise, absent for `Det`.
    eps: Option<Vec<f32>>,
}

fn batch_grads(model: &Model, batch: &Batch, threads: usize) -> Result<(LossParts, Vec<Tensor<f32>>)> {
    let cfg = model.config();
    let l = cfg.latent_dim;
    let n = batch.xs.len();
    let eps_tensor = |rows: std::ops::Range<usize>| -> Result<Option<Tensor<f32>>> {
        batch
            .eps
            .as_ref()
            .map(|e| Tensor::new(vec![rows.len(), l], e[rows.start * l..rows.end * l].to_vec()))
            .transpose()
    };
    if threads <= 1 {
        return loss_and_grads(
            cfg,
            model.params(),
            stack(&batch.xs)?,
            stack(&batch.ys)?,
            eps_tensor(0..n)?,
            cfg.beta,
        );
    }
    let per_example = |i: usize| {
        loss_and_grads(
            cfg,
            model.params(),
            stack(&batch.xs[i..i + 1])?,
            stack(&batch.ys[i..i + 1])?,
            eps_tensor(i..i + 1)?,
            cfg.beta,
        )
    };
    let chunk = n.div_ceil(threads);
    let results: Vec<Result<(LossParts, Vec<Tensor<f32>>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let per_example = &per_example;
                s.spawn(move || (start..(start + chunk).min(n)).map(per_example).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut mean = Mean::default();
    let mut sum: Option<Vec<Tensor<f32>>> = None;
    for r in results {
        let (loss, grads) = r?;
        mean.add(loss, 1);
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av += gv;
                    }
                }
            }
        }
    }
    let scale = 1.0 / n as f32;
    let grads = sum
        .expect("non-empty batch")
        .into_iter()
        .map(|g| g.map(|v| v * scale))
        .collect();
    Ok((mean.get(), grads))
}

/// Mean loss over `pairs` with noise for example `i` drawn from the
/// validation stream `(seed, i)`.
pub fn evaluate(model: &Model, pairs: &PairSet, seed: u64, batch_size: usize) -> Result<LossParts> {
    let _flush = FlushDenormals::new();
    let cfg = model.config();
    let mut mean = Mean::default();
    let items = pairs.pairs();
    for (c, chunk) in items.chunks(batch_size.max(1)).enumerate() {
        let eps = (cfg.variant == Variant::Cvae).then(|| {
            (0..chunk.len())
                .flat_map(|j| {
                    let i = c * batch_size.max(1) + j;
                    rng::standard_normal(&mut rng::stream(seed, Purpose::Validation, i as u64), cfg.latent_dim)
                })
                .collect::<Vec<f32>>()
        });
        let xs: Vec<&Tensor<f32>> = chunk.iter().map(|p| &p.x).collect();
        let ys: Vec<&Tensor<f32>> = chunk.iter().map(|p| &p.y).collect();
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, cfg, model.params(), false);
        let xv = tape.constant(stack(&xs)?);
        let yv = tape.constant(stack(&ys)?);
        let ev = eps
            .map(|e| Tensor::new(vec![chunk.len(), cfg.latent_dim], e))
            .transpose()?
            .map(|e| tape.constant(e));
        let loss = net.loss(&mut tape, xv, yv, ev, cfg.beta)?;
        mean.add(loss.values(&tape), chunk.len());
    }
    Ok(mean.get())
}

fn check_pairs(cfg: &ModelConfig, set: &PairSet, what: &str) -> Result<()> {
    let proj = cfg.projection_shape();
    for (i, p) in set.pairs().iter().enumerate() {
        if p.y.shape() != cfg.signal_shape || p.x.shape() != proj {
            return Err(Error::shape(
                "train",
                format!(
                    "{what} pair {i} is x {:?}, y {:?}; model expects x {proj:?}, y {:?}",
                    p.x.shape(),
                    p.y.shape(),
                    cfg.signal_shape
                ),
            ));
        }
    }
    Ok(())
}

/// Trains a fresh model initialized from `seed`. `on_epoch` sees the
/// checkpoint after every epoch and may abort training by returning an error.
pub fn train_with(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    train_set: &PairSet,
    val_set: Option<&PairSet>,
    seed: u64,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if tc.batch_size == 0 || tc.epochs == 0 || tc.threads == 0 {
        return Err(Error::invalid("batch_size, epochs and threads must be >= 1"));
    }
    if tc.translate_augment > 0 && !(model_cfg.signal_shape.len() == 4 && model_cfg.collapse_axis == 1) {
        return Err(Error::invalid(
            "translation augmentation needs [C, T, H, W] signals collapsed along axis 1",
        ));
    }
    check_pairs(model_cfg, train_set, "training")?;
    if let Some(v) = val_set {
        check_pairs(model_cfg, v, "validation")?;
    }

    let mut model = Model::new(model_cfg.clone(), seed)?;
    if tc.output_bias == OutputBias::DataMean {
        let b = output_bias_from_data(model_cfg, train_set);
        if let Some(t) = model.params_mut().get_mut("dec/out/b") {
            t.data_mut().copy_from_slice(&b);
        }
    }
    let adam = AdamState::new(model.params(), tc.adam);
    let mut ckpt = Checkpoint::new(model, adam, seed);
    let pairs = train_set.pairs();
    let l = model_cfg.latent_dim;
    let mut step = 0usize;

    for epoch in 0..tc.epochs {
        if tc.steps > 0 && step >= tc.steps {
            break;
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(seed, Purpose::Shuffle, epoch as u64));
        let mut mean = Mean::default();
        for idx in order.chunks(tc.batch_size) {
            if tc.steps > 0 && step >= tc.steps {
                break;
            }
            let shifted: Vec<(Tensor<f32>, Tensor<f32>)>;
            let (xs, ys): (Vec<&Tensor<f32>>, Vec<&Tensor<f32>>) = if tc.translate_augment > 0 {
                let a = tc.translate_augment as i64;
                let mut r = rng::stream(seed, Purpose::Augment, step as u64);
                shifted = idx
                    .iter()
                    .map(|&i| {
                        let (dy, dx) = (r.random_range(-a..=a), r.random_range(-a..=a));
                        (translate(&pairs[i].x, dy, dx), translate(&pairs[i].y, dy, dx))
                    })
                    .collect();
                shifted.iter().map(|(x, y)| (x, y)).unzip()
            } else {
                idx.iter().map(|&i| (&pairs[i].x, &pairs[i].y)).unzip()
            };
            let eps = (model_cfg.variant == Variant::Cvae).then(|| {
                rng::standard_normal(&mut rng::stream(seed, Purpose::Latent, step as u64), idx.len() * l)
            });
            let batch = Batch { xs, ys, eps };
            let (loss, grads) = batch_grads(&ckpt.model, &batch, tc.threads)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!(
                        "total loss {} (recon {}, kl {}) in epoch {epoch}",
                        loss.total, loss.recon, loss.kl
                    ),
                });
            }
            adam_step(ckpt.model.params_mut(), &grads, &mut ckpt.adam)?;
            mean.add(loss, idx.len());
            step += 1;
        }
        if mean.n == 0 {
            break;
        }
        let val = val_set
            .map(|v| evaluate(&ckpt.model, v, seed, tc.batch_size))
            .transpose()?;
        ckpt.history.push(EpochStats {
            epoch,
            train: mean.get(),
            val,
        });
        on_epoch(&ckpt)?;
    }
    Ok(ckpt)
}

pub fn train(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    train_set: &PairSet,
    val_set: Option<&PairSet>,
    seed: u64,
) -> Result<Checkpoint> {
    train_with(model_cfg, tc, train_set, val_set, seed, &mut |_| Ok(()))
}
