//! PSNR, the best-of-k protocol, CSV curves and PGM montages.

mod montage;

use std::fmt;
use std::path::Path;

use crate::baselines::{knn_select, LinearGaussianModel};
use crate::data::PairSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::projection::project;
use crate::rng::{self, Purpose, Rng};
use crate::tensor::Tensor;

pub use montage::{emit_montage, encode_pgm, montage, Image};

pub const PSNR_CAP: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

/// `10 log10(peak^2 / mse)`, capped at 100 dB when `mse < 1e-10`.
pub fn psnr_peak(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    let mse = se / a.numel() as f64;
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    psnr_peak(a, b, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Cvae,
    Det,
    Knn,
    Lmmse,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cvae" => Ok(Method::Cvae),
            "det" => Ok(Method::Det),
            "knn" => Ok(Method::Knn),
            "lmmse" => Ok(Method::Lmmse),
            _ => Err(Error::invalid(format!(
                "unknown method `{s}` (cvae, det, knn, lmmse)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Cvae => "cvae",
            Method::Det => "det",
            Method::Knn => "knn",
            Method::Lmmse => "lmmse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Produces candidate signals for a projection.
pub trait Sampler: Sync {
    fn candidates(&self, x: &Tensor<f32>, n: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>>;
}

impl<S: Sampler + ?Sized> Sampler for &S {
    fn candidates(&self, x: &Tensor<f32>, n: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        (**self).candidates(x, n, rng)
    }
}

/// Prior samples for a latent model, replicated output for `Det`.
impl Sampler for Model {
    fn candidates(&self, x: &Tensor<f32>, n: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        self.sample(x, n, rng)
    }
}

pub struct KnnSampler<'a>(pub &'a PairSet);

impl Sampler for KnnSampler<'_> {
    fn candidates(&self, x: &Tensor<f32>, n: usize, _: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        knn_select(self.0, x, n)
    }
}

impl Sampler for LinearGaussianModel {
    fn candidates(&self, x: &Tensor<f32>, n: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        self.posterior(x)?.sample(n, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub k: usize,
    pub best_signal_psnr: f64,
    pub mean_reprojection_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurve {
    pub method: String,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    /// `per_example_best[i][j]`: best signal PSNR of example `i` at `ks[j]`.
    pub per_example_best: Vec<Vec<f64>>,
}

pub const CSV_HEADER: &str = "k,best_signal_psnr,mean_reprojection_psnr";

impl EvalCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6}\n",
                r.k, r.best_signal_psnr, r.mean_reprojection_psnr
            ));
        }
        out
    }

    /// Rows of a CSV written by [`to_csv`](Self::to_csv).
    pub fn parse_csv(text: &str) -> Result<Vec<EvalRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format(format!("expected header `{CSV_HEADER}`")));
        }
        lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || Error::Format(format!("bad CSV row {}: `{line}`", i + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(EvalRow {
                    k: f[0].parse().map_err(|_| bad())?,
                    best_signal_psnr: f[1].parse().map_err(|_| bad())?,
                    mean_reprojection_psnr: f[2].parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }
}

pub fn emit_csv(curve: &EvalCurve, path: &Path) -> Result<()> {
    std::fs::write(path, curve.to_csv())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct ExampleScores {
    best: Vec<f64>,
    reproj: Vec<f64>,
}

fn score_example(
    sampler: &dyn Sampler,
    pairs: &PairSet,
    i: usize,
    ks: &[usize],
    seed: u64,
) -> Result<ExampleScores> {
    let p = &pairs.pairs()[i];
    let k_max = *ks.last().expect("non-empty ks");
    let mut r = rng::stream(seed, Purpose::Eval, i as u64);
    let cands = sampler.candidates(&p.x, k_max, &mut r)?;
    if cands.len() != k_max {
        return Err(Error::invalid(format!(
            "sampler returned {} candidates, {k_max} requested",
            cands.len()
        )));
    }
    let signal: Vec<f64> = cands.iter().map(|c| psnr(c, &p.y)).collect::<Result<_>>()?;
    let reproj: Vec<f64> = cands
        .iter()
        .map(|c| psnr(&project(c, pairs.spec())?, &p.x))
        .collect::<Result<_>>()?;
    Ok(ExampleScores {
        best: ks
            .iter()
            .map(|&k| signal[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        reproj: ks
            .iter()
            .map(|&k| reproj[..k].iter().sum::<f64>() / k as f64)
            .collect(),
    })
}

/// Best-of-k evaluation. Each test example draws `max(ks)` candidates once
/// from the stream `(seed, example index)`; every `k` uses the first `k`.
/// Results do not depend on `threads`.
pub fn best_of_k(
    method: &str,
    sampler: &dyn Sampler,
    pairs: &PairSet,
    ks: &[usize],
    seed: u64,
    threads: usize,
) -> Result<EvalCurve> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "k list {ks:?} must be strictly increasing and positive"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let n = pairs.len();
    let threads = threads.clamp(1, n);
    let scores: Vec<Result<ExampleScores>> = if threads == 1 {
        (0..n).map(|i| score_example(sampler, pairs, i, ks, seed)).collect()
    } else {
        let chunk = n.div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    s.spawn(move || {
                        (start..(start + chunk).min(n))
                            .map(|i| score_example(sampler, pairs, i, ks, seed))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| EvalRow {
            k,
            best_signal_psnr: scores.iter().map(|s| s.best[j]).sum::<f64>() / n as f64,
            mean_reprojection_psnr: scores.iter().map(|s| s.reproj[j]).sum::<f64>() / n as f64,
        })
        .collect();
    Ok(EvalCurve {
        method: method.to_string(),
        seed,
        rows,
        per_example_best: scores.into_iter().map(|s| s.best).collect(),
    })
}
