use std::path::Path;

use super::{AdamConfig, AdamState, EpochStats};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::model::{LossParts, Model, ModelConfig, ModelParams};

/// Trained model with optimizer state, seed and per-epoch history.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub seed: u64,
    pub history: Vec<EpochStats>,
    /// Caller-supplied entries such as the config hash or data seed.
    pub extra: Vec<(String, String)>,
}

fn triple(l: &LossParts) -> String {
    format!("{:?},{:?},{:?}", l.total, l.recon, l.kl)
}

fn parse_triple(key: &str, raw: &str) -> Result<LossParts> {
    let v: Vec<f64> = raw
        .split(',')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("metadata `{key}` is not three numbers")))?;
    match v[..] {
        [total, recon, kl] => Ok(LossParts { total, recon, kl }),
        _ => Err(Error::Format(format!("metadata `{key}` is not three numbers"))),
    }
}

impl Checkpoint {
    pub fn new(model: Model, adam: AdamState, seed: u64) -> Self {
        Checkpoint {
            model,
            adam,
            seed,
            history: Vec::new(),
            extra: Vec::new(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = self.model.to_container();
        for (name, t) in self.adam.m.iter() {
            c.push_tensor(format!("adam/m/{name}"), t.clone());
        }
        for (name, t) in self.adam.v.iter() {
            c.push_tensor(format!("adam/v/{name}"), t.clone());
        }
        c.push_meta("kind", "checkpoint");
        c.push_meta("adam.t", self.adam.t);
        c.push_meta("adam.lr", format!("{:?}", self.adam.config.lr));
        c.push_meta("adam.beta1", format!("{:?}", self.adam.config.beta1));
        c.push_meta("adam.beta2", format!("{:?}", self.adam.config.beta2));
        c.push_meta("adam.eps", format!("{:?}", self.adam.config.eps));
        c.push_meta("seed", self.seed);
        c.push_meta("history.epochs", self.history.len());
        for (i, h) in self.history.iter().enumerate() {
            c.push_meta(format!("history.{i}.epoch"), h.epoch);
            c.push_meta(format!("history.{i}.train"), triple(&h.train));
            if let Some(v) = &h.val {
                c.push_meta(format!("history.{i}.val"), triple(v));
            }
        }
        for (k, v) in &self.extra {
            c.push_meta(format!("extra.{k}"), v);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("kind") != Some("checkpoint") {
            return Err(Error::Format("container does not hold a training checkpoint".into()));
        }
        let model = Model::from_container(c)?;
        let cfg: &ModelConfig = model.config();
        let adam = AdamState {
            m: ModelParams::from_container(cfg, c, "adam/m/")?,
            v: ModelParams::from_container(cfg, c, "adam/v/")?,
            t: c.meta_parse("adam.t")?,
            config: AdamConfig {
                lr: c.meta_parse("adam.lr")?,
                beta1: c.meta_parse("adam.beta1")?,
                beta2: c.meta_parse("adam.beta2")?,
                eps: c.meta_parse("adam.eps")?,
            },
        };
        let epochs: usize = c.meta_parse("history.epochs")?;
        let history = (0..epochs)
            .map(|i| {
                let key = format!("history.{i}.train");
                let val_key = format!("history.{i}.val");
                Ok(EpochStats {
                    epoch: c.meta_parse(&format!("history.{i}.epoch"))?,
                    train: parse_triple(&key, c.require_meta(&key)?)?,
                    val: c.meta(&val_key).map(|raw| parse_triple(&val_key, raw)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let extra = c
            .metadata()
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Checkpoint {
            seed: c.meta_parse("seed")?,
            model,
            adam,
            history,
            extra,
        })
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// `epoch,split,total,recon,kl` rows, train before val within an epoch.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,split,total,recon,kl\n");
    for h in history {
        let rows = std::iter::once(("train", &h.train)).chain(h.val.as_ref().map(|v| ("val", v)));
        for (split, l) in rows {
            out.push_str(&format!(
                "{},{split},{:.9},{:.9},{:.9}\n",
                h.epoch, l.total, l.recon, l.kl
            ));
        }
    }
    out
}
