use super::{evaluate, train, TrainConfig};
use crate::config::Config;
use crate::data::PairSet;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TuneConfig {
    /// Target interval for the validation KL.
    pub band: (f64, f64),
    pub probe_steps: usize,
    pub max_probes: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            band: (5.0, 15.0),
            probe_steps: 200,
            max_probes: 12,
        }
    }
}

impl TuneConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(TuneConfig {
            band: (cfg.float("train.kl_band_low"), cfg.float("train.kl_band_high")),
            probe_steps: cfg.count("train.probe_steps", 1)?,
            max_probes: cfg.count("train.max_probes", 1)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaProbe {
    pub beta: f64,
    pub val_kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaSearch {
    pub beta: f64,
    pub val_kl: f64,
    pub in_band: bool,
    /// Set when no probe landed inside the band.
    pub warning: Option<String>,
    pub trace: Vec<BetaProbe>,
}

const BISECTIONS: usize = 4;

fn distance(kl: f64, (lo, hi): (f64, f64)) -> f64 {
    if kl > hi {
        kl - hi
    } else if kl < lo {
        lo - kl
    } else {
        0.0
    }
}

/// Geometric search for a `beta` whose probe KL falls inside `band`,
/// assuming KL shrinks as `beta` grows. Starts at 1, doubles while KL is
/// above the band, halves while below, then bisects a bracket geometrically.
pub fn search_beta(
    band: (f64, f64),
    max_probes: usize,
    mut probe: impl FnMut(f64) -> Result<f64>,
) -> Result<BetaSearch> {
    let (lo, hi) = band;
    if !(lo < hi) || max_probes == 0 {
        return Err(Error::invalid(format!(
            "KL band {band:?} must be increasing and at least one probe allowed"
        )));
    }
    let mut trace: Vec<BetaProbe> = Vec::new();
    let mut too_small: Option<f64> = None;
    let mut too_large: Option<f64> = None;
    let mut bisections = 0;
    let mut beta = 1.0f64;
    while trace.len() < max_probes {
        let val_kl = probe(beta)?;
        trace.push(BetaProbe { beta, val_kl });
        if (lo..=hi).contains(&val_kl) {
            return Ok(BetaSearch {
                beta,
                val_kl,
                in_band: true,
                warning: None,
                trace,
            });
        }
        if !val_kl.is_finite() || val_kl > hi {
            too_small = Some(too_small.map_or(beta, |b| b.max(beta)));
        } else {
            too_large = Some(too_large.map_or(beta, |b| b.min(beta)));
        }
        beta = match (too_small, too_large) {
            (Some(a), Some(b)) => {
                if bisections == BISECTIONS {
                    break;
                }
                bisections += 1;
                (a * b).sqrt()
            }
            (Some(a), None) => a * 2.0,
            (None, Some(b)) => b / 2.0,
            (None, None) => unreachable!("every probe lands on one side"),
        };
    }
    let best = *trace
        .iter()
        .min_by(|a, b| distance(a.val_kl, band).total_cmp(&distance(b.val_kl, band)))
        .expect("at least one probe");
    Ok(BetaSearch {
        beta: best.beta,
        val_kl: best.val_kl,
        in_band: false,
        warning: Some(format!(
            "no probe reached KL in [{lo}, {hi}] within {} probes; closest was beta {} with KL {:.4}",
            trace.len(),
            best.beta,
            best.val_kl
        )),
        trace,
    })
}

/// Runs [`search_beta`] where each probe trains a fresh model for
/// `probe_steps` steps and measures the mean validation KL.
pub fn tune_beta(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    train_set: &PairSet,
    val_set: &PairSet,
    tune: &TuneConfig,
    seed: u64,
) -> Result<BetaSearch> {
    if val_set.is_empty() {
        return Err(Error::invalid("beta search needs a validation set"));
    }
    let per_epoch = train_set.len().div_ceil(tc.batch_size.max(1));
    let probe_tc = TrainConfig {
        steps: tune.probe_steps,
        epochs: tune.probe_steps.div_ceil(per_epoch.max(1)),
        ..tc.clone()
    };
    search_beta(tune.band, tune.max_probes, |beta| {
        let cfg = ModelConfig {
            beta: beta as f32,
            ..model_cfg.clone()
        };
        let ckpt = train(&cfg, &probe_tc, train_set, None, seed)?;
        Ok(evaluate(&ckpt.model, val_set, seed, tc.batch_size)?.kl)
    })
}
