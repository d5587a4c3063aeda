use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::checkpoint::Container;
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

const PINV_CUTOFF: f64 = 1e-10;
const TRACE_KEPT: f64 = 1.0 - 1e-8;

/// Affine-Gaussian fit of `y` given `x`: posterior mean `G (x - x_mean) + y_mean`
/// and a shared covariance `L L^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianModel {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    sigma_x: DMatrix<f64>,
    sigma_yx: DMatrix<f64>,
    gain: DMatrix<f64>,
    l_post: DMatrix<f64>,
    signal_shape: Vec<usize>,
    projection_shape: Vec<usize>,
}

/// Posterior for one projection; the factor is shared by all inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<'a> {
    pub mean: DVector<f64>,
    pub factor: &'a DMatrix<f64>,
    signal_shape: &'a [usize],
}

fn rows(items: &[&Tensor<f32>]) -> DMatrix<f64> {
    let dim = items[0].numel();
    DMatrix::from_fn(items.len(), dim, |i, j| items[i].data()[j] as f64)
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn centered(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Pseudo-inverse of a symmetric PSD matrix, dropping eigenvalues below
/// `1e-10` of the largest.
fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let inv = eig.eigenvalues.map(|v| if max > 0.0 && v > PINV_CUTOFF * max { 1.0 / v } else { 0.0 });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&inv) * v.transpose()
}

/// Columns `v_i * sqrt(l_i)` for the largest eigenpairs covering the kept
/// share of the trace; negative eigenvalues count as zero. At least one column.
fn low_rank_factor(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let clamped: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let trace: f64 = clamped.iter().sum();
    let mut r = 0;
    let mut acc = 0.0;
    while r < clamped.len() && clamped[r] > 0.0 && acc < TRACE_KEPT * trace {
        acc += clamped[r];
        r += 1;
    }
    let r = r.max(1);
    DMatrix::from_fn(vectors.nrows(), r, |i, j| vectors[(i, order[j])] * clamped[j].sqrt())
}

impl LinearGaussianModel {
    /// Empirical fit with covariance denominator `N`. `Sigma_X` is inverted
    /// after adding `ridge * trace / d` to its diagonal.
    pub fn fit(pairs: &[Pair], ridge: f64) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::invalid(format!(
                "linear-Gaussian fit needs at least 2 pairs, got {}",
                pairs.len()
            )));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::invalid(format!("ridge {ridge} must be >= 0")));
        }
        let (xs0, ys0) = (pairs[0].x.shape(), pairs[0].y.shape());
        if let Some(i) = pairs.iter().position(|p| p.x.shape() != xs0 || p.y.shape() != ys0) {
            return Err(Error::shape("lmmse", format!("pair {i} differs in shape from pair 0")));
        }
        let n = pairs.len() as f64;
        let xm = rows(&pairs.iter().map(|p| &p.x).collect::<Vec<_>>());
        let ym = rows(&pairs.iter().map(|p| &p.y).collect::<Vec<_>>());
        let (x_mean, y_mean) = (column_means(&xm), column_means(&ym));
        let (xc, yc) = (centered(&xm, &x_mean), centered(&ym, &y_mean));
        drop((xm, ym));
        let d = xc.ncols();

        let mut sigma_x = xc.transpose() * &xc / n;
        symmetrize(&mut sigma_x);
        let sigma_yx = yc.transpose() * &xc / n;
        let mut reg = sigma_x.clone();
        let shift = ridge * sigma_x.trace() / d as f64;
        for i in 0..d {
            reg[(i, i)] += shift;
        }
        let k = pinv_sym(&reg);
        let gain = &sigma_yx * &k;

        let l_post = if yc.ncols() <= pairs.len() {
            let mut post = yc.transpose() * &yc / n - &gain * sigma_yx.transpose();
            symmetrize(&mut post);
            let eig = SymmetricEigen::new(post);
            low_rank_factor(&eig.eigenvalues, &eig.eigenvectors)
        } else {
            // Sigma_post = Yc^T M Yc / N with M = I - Xc K Xc^T / N, factored
            // through the N x N eigenproblems of M and B^T B.
            let mut m = -(&xc * &k * xc.transpose()) / n;
            for i in 0..pairs.len() {
                m[(i, i)] += 1.0;
            }
            symmetrize(&mut m);
            let em = SymmetricEigen::new(m);
            let root = em.eigenvalues.map(|v| v.max(0.0).sqrt() / n.sqrt());
            let b = yc.transpose() * (&em.eigenvectors * DMatrix::from_diagonal(&root));
            let mut btb = b.transpose() * &b;
            symmetrize(&mut btb);
            let eb = SymmetricEigen::new(btb);
            let mut order: Vec<usize> = (0..eb.eigenvalues.len()).collect();
            order.sort_by(|&a, &c| eb.eigenvalues[c].total_cmp(&eb.eigenvalues[a]).then(a.cmp(&c)));
            let cols = &b * &eb.eigenvectors;
            let unit = DMatrix::from_fn(cols.nrows(), cols.ncols(), |i, j| {
                let norm = eb.eigenvalues[j].max(0.0).sqrt();
                if norm > 0.0 {
                    cols[(i, j)] / norm
                } else {
                    0.0
                }
            });
            low_rank_factor(&eb.eigenvalues, &unit)
        };

        Ok(LinearGaussianModel {
            x_mean,
            y_mean,
            sigma_x,
            sigma_yx,
            gain,
            l_post,
            signal_shape: ys0.to_vec(),
            projection_shape: xs0.to_vec(),
        })
    }

    pub fn x_mean(&self) -> &DVector<f64> {
        &self.x_mean
    }

    pub fn y_mean(&self) -> &DVector<f64> {
        &self.y_mean
    }

    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.sigma_x
    }

    pub fn sigma_yx(&self) -> &DMatrix<f64> {
        &self.sigma_yx
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `D x r` factor of the posterior covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l_post
    }

    pub fn signal_shape(&self) -> &[usize] {
        &self.signal_shape
    }

    pub fn projection_shape(&self) -> &[usize] {
        &self.projection_shape
    }

    pub fn posterior_vec(&self, x: &[f64]) -> Result<Posterior<'_>> {
        if x.len() != self.x_mean.len() {
            return Err(Error::shape(
                "lmmse",
                format!("projection has {} entries, model expects {}", x.len(), self.x_mean.len()),
            ));
        }
        let dx = DVector::from_iterator(x.len(), x.iter().zip(self.x_mean.iter()).map(|(a, m)| a - m));
        Ok(Posterior {
            mean: &self.gain * dx + &self.y_mean,
            factor: &self.l_post,
            signal_shape: &self.signal_shape,
        })
    }

    pub fn posterior(&self, x: &Tensor<f32>) -> Result<Posterior<'_>> {
        if x.shape() != self.projection_shape {
            return Err(Error::shape(
                "lmmse",
                format!("projection {:?}, model expects {:?}", x.shape(), self.projection_shape),
            ));
        }
        let v: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        self.posterior_vec(&v)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let vec_t = |v: &DVector<f64>| Tensor::from_fn(vec![v.len()], |i| v[i] as f32).expect("non-empty");
        let mat_t = |m: &DMatrix<f64>| {
            let cols = m.ncols();
            Tensor::from_fn(vec![m.nrows(), cols], |i| m[(i / cols, i % cols)] as f32).expect("non-empty")
        };
        c.push_tensor("lmmse/x_mean", vec_t(&self.x_mean));
        c.push_tensor("lmmse/y_mean", vec_t(&self.y_mean));
        c.push_tensor("lmmse/sigma_x", mat_t(&self.sigma_x));
        c.push_tensor("lmmse/sigma_yx", mat_t(&self.sigma_yx));
        c.push_tensor("lmmse/gain", mat_t(&self.gain));
        c.push_tensor("lmmse/l_post", mat_t(&self.l_post));
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        c.push_meta("kind", "lmmse");
        c.push_meta("signal_shape", list(&self.signal_shape));
        c.push_meta("projection_shape", list(&self.projection_shape));
        c
    }

    /// Inverse of [`to_container`](Self::to_container); values come back at
    /// 32-bit precision.
    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("kind") != Some("lmmse") {
            return Err(Error::Format("container does not hold a linear-Gaussian model".into()));
        }
        let vec_of = |name: &str| -> Result<DVector<f64>> {
            let t = c.require_tensor(name)?;
            Ok(DVector::from_iterator(t.numel(), t.data().iter().map(|&v| v as f64)))
        };
        let mat_of = |name: &str| -> Result<DMatrix<f64>> {
            let t = c.require_tensor(name)?;
            if t.rank() != 2 {
                return Err(Error::Format(format!("`{name}` must be a matrix")));
            }
            let (r, k) = (t.shape()[0], t.shape()[1]);
            Ok(DMatrix::from_fn(r, k, |i, j| t.data()[i * k + j] as f64))
        };
        let shape = |key: &str| -> Result<Vec<usize>> {
            c.require_meta(key)?
                .split(',')
                .map(|p| p.parse().map_err(|_| Error::Format(format!("bad `{key}`"))))
                .collect()
        };
        let m = LinearGaussianModel {
            x_mean: vec_of("lmmse/x_mean")?,
            y_mean: vec_of("lmmse/y_mean")?,
            sigma_x: mat_of("lmmse/sigma_x")?,
            sigma_yx: mat_of("lmmse/sigma_yx")?,
            gain: mat_of("lmmse/gain")?,
            l_post: mat_of("lmmse/l_post")?,
            signal_shape: shape("signal_shape")?,
            projection_shape: shape("projection_shape")?,
        };
        let (d, big_d) = (m.x_mean.len(), m.y_mean.len());
        let ok = m.gain.shape() == (big_d, d)
            && m.sigma_x.shape() == (d, d)
            && m.sigma_yx.shape() == (big_d, d)
            && m.l_post.nrows() == big_d
            && m.signal_shape.iter().product::<usize>() == big_d
            && m.projection_shape.iter().product::<usize>() == d;
        if !ok {
            return Err(Error::Format("linear-Gaussian tensors have inconsistent shapes".into()));
        }
        Ok(m)
    }
}

impl Posterior<'_> {
    /// `mean + L u` for a standard-normal `u` of length `r`.
    pub fn sample_with(&self, u: &[f64]) -> Result<Tensor<f32>> {
        if u.len() != self.factor.ncols() {
            return Err(Error::shape(
                "lmmse",
                format!("noise has {} entries, factor rank is {}", u.len(), self.factor.ncols()),
            ));
        }
        let s = &self.mean + self.factor * DVector::from_column_slice(u);
        Tensor::new(self.signal_shape.to_vec(), s.iter().map(|&v| v as f32).collect())
    }

    pub fn mean_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.signal_shape.to_vec(), self.mean.iter().map(|&v| v as f32).collect())
            .expect("mean matches signal shape")
    }

    pub fn sample(&self, k: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        (0..k)
            .map(|_| self.sample_with(&rng::standard_normal_f64(rng, self.factor.ncols())))
            .collect()
    }
}

/// `k` posterior samples for `x` drawn from the stream keyed by `seed`.
pub fn lmmse_sample(model: &LinearGaussianModel, x: &Tensor<f32>, k: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let post = model.posterior(x)?;
    post.sample(k, &mut rng::stream(seed, rng::Purpose::Lmmse, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(x: Vec<f32>, y: Vec<f32>) -> Pair {
        Pair {
            x: Tensor::new(vec![x.len()], x).unwrap(),
            y: Tensor::new(vec![y.len()], y).unwrap(),
        }
    }

    #[test]
    fn identity_relationship() {
        let pairs: Vec<Pair> = [0.1f32, 0.5, 0.9, 0.3].iter().map(|&v| pair(vec![v], vec![v])).collect();
        let m = LinearGaussianModel::fit(&pairs, 0.0).unwrap();
        assert!((m.gain()[(0, 0)] - 1.0).abs() < 1e-9);
        let f = m.factor();
        assert!((f * f.transpose())[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn centering_and_rejections() {
        let pairs: Vec<Pair> = (0..5)
            .map(|i| pair(vec![i as f32, (i * i) as f32], vec![1.0 + i as f32, 2.0, -(i as f32)]))
            .collect();
        let m = LinearGaussianModel::fit(&pairs, 1e-6).unwrap();
        let post = m.posterior_vec(m.x_mean().as_slice()).unwrap();
        assert!((post.mean - m.y_mean()).amax() < 1e-12);
        assert!(m.posterior_vec(&[1.0]).is_err());
        assert!(LinearGaussianModel::fit(&pairs[..1], 0.0).is_err());
        let u = vec![0.0; m.factor().ncols()];
        let s = m.posterior_vec(&[1.0, 2.0]).unwrap();
        assert_eq!(s.sample_with(&u).unwrap(), s.mean_tensor());
    }

    #[test]
    fn direct_and_gram_paths_agree() {
        // D = 6 with N = 8 uses the direct path, N = 5 the Gram path
        let mut r = rng::stream(3, rng::Purpose::Lmmse, 1);
        let make = |n: usize, r: &mut Rng| -> Vec<Pair> {
            (0..n)
                .map(|_| {
                    let y: Vec<f32> = rng::standard_normal(r, 6);
                    let x = vec![y[0] + y[1], y[2] - y[3] + 0.5 * y[5]];
                    pair(x, y)
                })
                .collect()
        };
        let pairs = make(8, &mut r);
        let full = LinearGaussianModel::fit(&pairs, 0.0).unwrap();
        let small = LinearGaussianModel::fit(&pairs[..5], 0.0).unwrap();
        // independent direct computation on the 5-pair subset
        let sub = LinearGaussianModel::fit(&[&pairs[..5], &pairs[..5]].concat(), 0.0).unwrap();
        let cov = |m: &LinearGaussianModel| m.factor() * m.factor().transpose();
        assert!((cov(&small) - cov(&sub)).amax() < 1e-9);
        assert!(cov(&full).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn container_roundtrip_at_single_precision() {
        let pairs: Vec<Pair> = (0..6)
            .map(|i| pair(vec![i as f32 * 0.1], vec![i as f32 * 0.2, 1.0 - i as f32 * 0.1]))
            .collect();
        let m = LinearGaussianModel::fit(&pairs, 1e-6).unwrap();
        let back = LinearGaussianModel::from_container(&m.to_container()).unwrap();
        assert!((back.gain() - m.gain()).amax() < 1e-6);
        assert_eq!(back.signal_shape(), m.signal_shape());
    }
}
