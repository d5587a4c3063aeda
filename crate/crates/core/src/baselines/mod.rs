//! Comparison methods: closed-form linear-Gaussian estimator, nearest
//! neighbours in projection space, and the latent-free decoder.

mod lmmse;

use crate::data::PairSet;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::Tensor;
use crate::trainer::{train, Checkpoint, TrainConfig};

pub use lmmse::{lmmse_sample, LinearGaussianModel, Posterior};

fn mse(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
    s / a.len() as f64
}

/// Indices of the `k` training pairs whose projections are closest to `x`
/// in mean squared error, nearest first; ties go to the lower index.
pub fn knn_indices(train_set: &PairSet, x: &Tensor<f32>, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > train_set.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={} (training set size)",
            train_set.len()
        )));
    }
    let pairs = train_set.pairs();
    if pairs[0].x.shape() != x.shape() {
        return Err(Error::shape(
            "knn",
            format!("query {:?}, stored projections {:?}", x.shape(), pairs[0].x.shape()),
        ));
    }
    let mut scored: Vec<(f64, usize)> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (mse(p.x.data(), x.data()), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

/// The signals of [`knn_indices`].
pub fn knn_select(train_set: &PairSet, x: &Tensor<f32>, k: usize) -> Result<Vec<Tensor<f32>>> {
    Ok(knn_indices(train_set, x, k)?
        .into_iter()
        .map(|i| train_set.pairs()[i].y.clone())
        .collect())
}

/// Trains the latent-free variant of `model_cfg`.
pub fn det_train(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    train_set: &PairSet,
    val_set: Option<&PairSet>,
    seed: u64,
) -> Result<Checkpoint> {
    let cfg = ModelConfig {
        variant: Variant::Det,
        beta: 0.0,
        ..model_cfg.clone()
    };
    train(&cfg, tc, train_set, val_set, seed)
}

pub fn det_predict(model: &Model, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    if model.config().variant != Variant::Det {
        return Err(Error::invalid("det_predict needs a det model"));
    }
    model.deproject(x, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{builtin_glyphs, make_pairs, synth_moving_digits, SynthConfig};
    use crate::projection::ProjectionSpec;

    fn toy() -> PairSet {
        let ds = synth_moving_digits(
            &builtin_glyphs(),
            &SynthConfig {
                clips: 12,
                digits: 1,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        make_pairs(&ds, &ProjectionSpec::averaging(1, 8).unwrap(), 0.0, 0).unwrap()
    }

    #[test]
    fn exact_match_comes_first_and_full_k_sorts_everything() {
        let ps = toy();
        let q = &ps.pairs()[7];
        assert_eq!(knn_select(&ps, &q.x, 1).unwrap()[0], q.y);
        let all = knn_indices(&ps, &q.x, ps.len()).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..ps.len()).collect::<Vec<_>>());
        assert!(knn_indices(&ps, &q.x, 0).is_err());
        assert!(knn_indices(&ps, &q.x, ps.len() + 1).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let mut ps = toy().truncated(3);
        let dup = ps.pairs()[1].clone();
        let spec = ps.spec().clone();
        let mut pairs = ps.pairs().to_vec();
        pairs.push(dup.clone());
        ps = PairSet::from_pairs(pairs, spec, 0.0).unwrap();
        assert_eq!(knn_indices(&ps, &dup.x, 2).unwrap(), vec![1, 3]);
    }
}
