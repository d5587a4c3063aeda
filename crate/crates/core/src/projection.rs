//! The known linear collapse `x = sum_k w_k * y[axis = k]`.

use crate::error::{Error, Result};
use crate::tensor::{weighted_sum_axis, Scalar, Tape, Tensor, Var};

/// Collapsed axis and its weights. The axis indexes the tensor passed to
/// [`project`]; for clips shaped `[1, T, H, W]` temporal averaging is axis 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSpec {
    axis: usize,
    weights: Vec<f32>,
}

impl ProjectionSpec {
    pub fn new(axis: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("projection needs at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("projection weights must be finite"));
        }
        Ok(ProjectionSpec { axis, weights })
    }

    /// Uniform weights `1 / extent`.
    pub fn averaging(axis: usize, extent: usize) -> Result<Self> {
        if extent == 0 {
            return Err(Error::invalid("averaging over an empty axis"));
        }
        Self::new(axis, vec![1.0 / extent as f32; extent])
    }

    /// Selects slice `k`.
    pub fn one_hot(axis: usize, extent: usize, k: usize) -> Result<Self> {
        if k >= extent {
            return Err(Error::invalid(format!("slice {k} outside extent {extent}")));
        }
        let mut w = vec![0.0; extent];
        w[k] = 1.0;
        Self::new(axis, w)
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn extent(&self) -> usize {
        self.weights.len()
    }

    /// Same weights, axis moved by `by` (e.g. past a leading batch axis).
    pub fn shifted(&self, by: usize) -> Self {
        ProjectionSpec {
            axis: self.axis + by,
            weights: self.weights.clone(),
        }
    }

    pub fn check(&self, signal_shape: &[usize]) -> Result<()> {
        if self.axis >= signal_shape.len() {
            return Err(Error::shape(
                "project",
                format!("axis {} out of range for shape {signal_shape:?}", self.axis),
            ));
        }
        if signal_shape[self.axis] != self.weights.len() {
            return Err(Error::shape(
                "project",
                format!(
                    "{} weights for extent {} of axis {} in {signal_shape:?}",
                    self.weights.len(),
                    signal_shape[self.axis],
                    self.axis
                ),
            ));
        }
        Ok(())
    }

    /// Signal shape with the collapsed axis removed.
    pub fn projected_shape(&self, signal_shape: &[usize]) -> Result<Vec<usize>> {
        self.check(signal_shape)?;
        let mut s = signal_shape.to_vec();
        s.remove(self.axis);
        if s.is_empty() {
            s.push(1);
        }
        Ok(s)
    }

    fn weights_as<T: Scalar>(&self) -> Vec<T> {
        self.weights.iter().map(|&w| T::lit(w as f64)).collect()
    }
}

pub fn project<T: Scalar>(signal: &Tensor<T>, spec: &ProjectionSpec) -> Result<Tensor<T>> {
    spec.check(signal.shape())?;
    weighted_sum_axis(signal, spec.axis, &spec.weights_as())
}

/// Differentiable projection of a tape value.
pub fn project_var<T: Scalar>(tape: &mut Tape<T>, signal: Var, spec: &ProjectionSpec) -> Result<Var> {
    spec.check(tape.value(signal).shape())?;
    tape.project(signal, spec.axis, &spec.weights_as())
}

/// Dense matrix `P` with `project(y) == P * vec(y)` (row-major vectorization).
pub fn projection_matrix<T: Scalar>(spec: &ProjectionSpec, signal_shape: &[usize]) -> Result<Tensor<T>> {
    spec.check(signal_shape)?;
    let n_in: usize = signal_shape.iter().product();
    let extent = spec.extent();
    let inner: usize = signal_shape[spec.axis + 1..].iter().product();
    let n_out = n_in / extent;
    let mut m = vec![T::zero(); n_out * n_in];
    for row in 0..n_out {
        let (outer, i) = (row / inner, row % inner);
        for (k, &w) in spec.weights.iter().enumerate() {
            let col = (outer * extent + k) * inner + i;
            m[row * n_in + col] = T::lit(w as f64);
        }
    }
    Tensor::new(vec![n_out, n_in], m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let y = t(&[2, 2], &[0., 1., 2., 3.]);
        let spec = ProjectionSpec::new(0, vec![0.5, 0.5]).unwrap();
        assert_eq!(project(&y, &spec).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn constant_signal_averages_to_itself() {
        let y = Tensor::<f32>::full(vec![1, 4, 3, 3], 0.5).unwrap();
        let spec = ProjectionSpec::averaging(1, 4).unwrap();
        let x = project(&y, &spec).unwrap();
        assert_eq!(x.shape(), &[1, 3, 3]);
        assert!(x.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn one_hot_selects_slice() {
        let y = Tensor::<f32>::from_fn(vec![1, 3, 2, 2], |i| i as f32).unwrap();
        let spec = ProjectionSpec::one_hot(1, 3, 2).unwrap();
        assert_eq!(project(&y, &spec).unwrap().data(), &[8., 9., 10., 11.]);
    }

    #[test]
    fn rejects_bad_axis_and_length() {
        let y = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        assert!(project(&y, &ProjectionSpec::averaging(2, 3).unwrap()).is_err());
        assert!(project(&y, &ProjectionSpec::averaging(1, 2).unwrap()).is_err());
    }

    #[test]
    fn matrix_structure_for_averaging() {
        let spec = ProjectionSpec::averaging(1, 4).unwrap();
        let p = projection_matrix::<f64>(&spec, &[1, 4, 2, 3]).unwrap();
        assert_eq!(p.shape(), &[6, 24]);
        for row in p.data().chunks(24) {
            let nz: Vec<f64> = row.iter().copied().filter(|&v| v != 0.0).collect();
            assert_eq!(nz.len(), 4);
            assert!(nz.iter().all(|&v| v == 0.25_f32 as f64));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-7);
        }
    }
}
