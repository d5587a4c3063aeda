use crate::error::{Error, Result};

pub const LOG_VAR_MIN: f32 = -10.0;
pub const LOG_VAR_MAX: f32 = 10.0;

/// Diagonal Gaussian parameterized by mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f32>,
    log_var: Vec<f32>,
}

impl DiagonalGaussian {
    /// Clamps `log_var` into `[-10, 10]`.
    pub fn new(mean: Vec<f32>, log_var: Vec<f32>) -> Result<Self> {
        if mean.len() != log_var.len() || mean.is_empty() {
            return Err(Error::shape(
                "gaussian",
                format!("mean has {} entries, log_var {}", mean.len(), log_var.len()),
            ));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(DiagonalGaussian { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f32] {
        &self.log_var
    }

    pub fn std(&self) -> Vec<f32> {
        self.log_var.iter().map(|v| (v * 0.5).exp()).collect()
    }

    /// `mean + exp(log_var / 2) * eps`.
    pub fn reparam_sample(&self, eps: &[f32]) -> Result<Vec<f32>> {
        if eps.len() != self.dim() {
            return Err(Error::shape(
                "reparam",
                format!("noise has {} entries, latent dim {}", eps.len(), self.dim()),
            ));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (lv * 0.5).exp() * e)
            .collect())
    }
}

/// `KL(q || p)` for diagonal Gaussians, summed over dimensions.
pub fn kl_diag(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::shape(
            "kl",
            format!("dimensions {} vs {}", q.dim(), p.dim()),
        ));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, mp) = (q.mean[i] as f64, p.mean[i] as f64);
        let (lq, lp) = (q.log_var[i] as f64, p.log_var[i] as f64);
        kl += 0.5 * (lp - lq) + (lq.exp() + (mq - mp).powi(2)) / (2.0 * lp.exp()) - 0.5;
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_log_var() {
        let g = DiagonalGaussian::new(vec![0.0, 0.0], vec![-50.0, 50.0]).unwrap();
        assert_eq!(g.log_var(), &[-10.0, 10.0]);
        assert!(g.std().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn reparam_cases() {
        let g = DiagonalGaussian::new(vec![1.0, -2.0], vec![0.3, -10.0]).unwrap();
        assert_eq!(g.reparam_sample(&[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        let z = g.reparam_sample(&[0.0, 3.0]).unwrap();
        assert!((z[1] + 2.0).abs() <= (-5.0f32).exp() * 3.0 + 1e-6);
        assert!(g.reparam_sample(&[0.0]).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        let q = DiagonalGaussian::new(vec![0.3, -1.0], vec![0.2, -0.5]).unwrap();
        assert!(kl_diag(&q, &q).unwrap().abs() < 1e-12);
        let q = DiagonalGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_diag(&q, &DiagonalGaussian::standard(1)).unwrap() - 0.5).abs() < 1e-12);
        assert!(kl_diag(&q, &DiagonalGaussian::standard(2)).is_err());
    }
}
