use super::kernels::{self, ConvGeom};
use super::{weighted_sum_axis, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Dense { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Exp { x: Var },
    Square { x: Var },
    Upsample { x: Var, factors: Vec<usize> },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Concat { a: Var, b: Var, axis: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Offset { x: Var },
    Clamp { x: Var, lo: T, hi: T },
    Sum { x: Var },
    Mean { x: Var },
    Mse { a: Var, b: Var },
    Project { x: Var, axis: usize, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Linear record of executed operations, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in execution order, so every input precedes its
/// consumers. A tape is meant to live for one forward/backward step.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `var` is not a trainable leaf or does not reach the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts_unchecked(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (data, noise draws).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Cross-correlation with zero padding over 1-3 spatial axes.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: &[usize], pad: &[usize]) -> Result<Var> {
        let geom = ConvGeom::new(
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
            stride,
            pad,
        )?;
        let out = kernels::conv_forward(&geom, self.value(x), self.value(w), self.value(b));
        Ok(self.push(out, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    /// `out[b] = w * x[b] + bias` for `x: [batch, n]`, `w: [m, n]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?}, weights {ws:?}, bias {bs:?}"),
            ));
        }
        let (batch, n, m) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            out.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            batch,
            n,
            m,
            T::one(),
            self.value(x).data(),
            n as isize,
            1,
            self.value(w).data(),
            1,
            n as isize,
            T::one(),
            &mut out,
            m as isize,
            1,
        );
        let out = Tensor::from_parts_unchecked(vec![batch, m], out);
        Ok(self.push(out, Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x }, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp { x }, &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square { x }, &[x])
    }

    pub fn upsample_nearest(&mut self, x: Var, factors: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() < 3 || factors.len() != xs.len() - 2 || factors.contains(&0) {
            return Err(Error::shape(
                "upsample",
                format!("input {xs:?} with factors {factors:?}"),
            ));
        }
        let out = kernels::upsample(self.value(x), factors);
        Ok(self.push(
            out,
            Op::Upsample {
                x,
                factors: factors.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.value(x).rank();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm
                .iter()
                .all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of {:?}", self.value(x).shape()),
            ));
        }
        let out = kernels::permute(self.value(x), perm);
        Ok(self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let ok = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{sa:?} and {sb:?} along axis {axis}"),
            ));
        }
        let out = kernels::concat(self.value(a), self.value(b), axis);
        Ok(self.push(out, Op::Concat { a, b, axis }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c }, &[x])
    }

    /// Adds the constant `c` to every element.
    pub fn offset(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::Offset { x }, &[x])
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::lit(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean { x }, &[x])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / T::lit(ta.numel() as f64);
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, b }, &[a, b]))
    }

    /// Weighted sum over `axis`, removing it.
    pub fn project(&mut self, x: Var, axis: usize, weights: &[T]) -> Result<Var> {
        let out = weighted_sum_axis(self.value(x), axis, weights)?;
        Ok(self.push(
            out,
            Op::Project {
                x,
                axis,
                weights: weights.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse sweep from a one-element `loss`. Does not modify the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts_unchecked(shape.to_vec(), vec![T::one()]));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            let mut emit = |v: Var, t: Tensor<T>| {
                if self.nodes[v.0].needs_grad {
                    add_into(&mut grads[v.0], t);
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) = kernels::conv_backward(
                        geom,
                        val(*x),
                        val(*w),
                        &g,
                        needs(*x),
                        needs(*w) || needs(*b),
                    );
                    if let Some(dx) = dx {
                        emit(*x, dx);
                    }
                    if let Some(dw) = dw {
                        emit(*w, dw);
                    }
                    if let Some(db) = db {
                        emit(*b, db);
                    }
                }
                Op::Dense { x, w, b } => {
                    let (xs, ws) = (val(*x), val(*w));
                    let (batch, n, m) = (xs.shape()[0], xs.shape()[1], ws.shape()[0]);
                    if needs(*x) {
                        let mut dx = vec![T::zero(); batch * n];
                        T::gemm(
                            batch,
                            m,
                            n,
                            T::one(),
                            g.data(),
                            m as isize,
                            1,
                            ws.data(),
                            n as isize,
                            1,
                            T::zero(),
                            &mut dx,
                            n as isize,
                            1,
                        );
                        emit(*x, Tensor::from_parts_unchecked(vec![batch, n], dx));
                    }
                    if needs(*w) {
                        let mut dw = vec![T::zero(); m * n];
                        T::gemm(
                            m,
                            batch,
                            n,
                            T::one(),
                            g.data(),
                            1,
                            m as isize,
                            xs.data(),
                            n as isize,
                            1,
                            T::zero(),
                            &mut dw,
                            n as isize,
                            1,
                        );
                        emit(*w, Tensor::from_parts_unchecked(vec![m, n], dw));
                    }
                    if needs(*b) {
                        let mut db = vec![T::zero(); m];
                        for row in g.data().chunks(m) {
                            for (d, &r) in db.iter_mut().zip(row) {
                                *d = *d + r;
                            }
                        }
                        emit(*b, Tensor::from_parts_unchecked(vec![m], db));
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let s = *slope;
                    emit(
                        *x,
                        zip_map(&g, val(*x), |g, v| if v >= T::zero() { g } else { s * g }),
                    );
                }
                Op::Sigmoid { x } => {
                    emit(
                        *x,
                        zip_map(&g, &node.value, |g, y| g * y * (T::one() - y)),
                    );
                }
                Op::Exp { x } => emit(*x, zip_map(&g, &node.value, |g, y| g * y)),
                Op::Square { x } => {
                    let two = T::lit(2.0);
                    emit(*x, zip_map(&g, val(*x), |g, v| two * v * g));
                }
                Op::Upsample { x, factors } => {
                    emit(
                        *x,
                        kernels::upsample_backward(&g, val(*x).shape(), factors),
                    );
                }
                Op::Reshape { x } => {
                    let shape = val(*x).shape().to_vec();
                    emit(*x, g.reshape(shape)?);
                }
                Op::Permute { x, perm } => {
                    emit(
                        *x,
                        kernels::permute(&g, &kernels::inverse_permutation(perm)),
                    );
                }
                Op::Concat { a, b, axis } => {
                    let (da, db) =
                        kernels::concat_backward(&g, val(*a).shape(), val(*b).shape(), *axis);
                    emit(*a, da);
                    emit(*b, db);
                }
                Op::Add { a, b } => {
                    emit(*a, g.clone());
                    emit(*b, g);
                }
                Op::Sub { a, b } => {
                    emit(*b, g.map(|v| -v));
                    emit(*a, g);
                }
                Op::Mul { a, b } => {
                    emit(*a, zip_map(&g, val(*b), |g, v| g * v));
                    emit(*b, zip_map(&g, val(*a), |g, v| g * v));
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    emit(*x, g.map(|v| v * c));
                }
                Op::Offset { x } => emit(*x, g),
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    emit(
                        *x,
                        zip_map(&g, val(*x), |g, v| {
                            if v >= lo && v <= hi {
                                g
                            } else {
                                T::zero()
                            }
                        }),
                    );
                }
                Op::Sum { x } => {
                    let s = g.data()[0];
                    emit(*x, val(*x).map(|_| s));
                }
                Op::Mean { x } => {
                    let s = g.data()[0] / T::lit(val(*x).numel() as f64);
                    emit(*x, val(*x).map(|_| s));
                }
                Op::Mse { a, b } => {
                    let (ta, tb) = (val(*a), val(*b));
                    let s = g.data()[0] * T::lit(2.0) / T::lit(ta.numel() as f64);
                    let da = zip_map(ta, tb, |x, y| s * (x - y));
                    emit(*b, da.map(|v| -v));
                    emit(*a, da);
                }
                Op::Project { x, axis, weights } => {
                    let xs = val(*x).shape();
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[*axis + 1..].iter().product();
                    let mut dx = Vec::with_capacity(val(*x).numel());
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for &w in weights {
                            dx.extend(src.iter().map(|&v| w * v));
                        }
                    }
                    emit(*x, Tensor::from_parts_unchecked(xs.to_vec(), dx));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn conv_1d_hand_arithmetic() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(t(&[1, 1, 4], &[1., 2., 3., 4.]));
        let w = tape.leaf(t(&[1, 1, 3], &[1., 0., -1.]));
        let b = tape.leaf(t(&[1], &[0.]));
        let y = tape.conv(x, w, b, &[1], &[0]).unwrap();
        assert_eq!(tape.value(y).data(), &[-2., -2.]);
    }

    #[test]
    fn conv_identity_kernel() {
        let data: Vec<f32> = (0..12).map(|v| v as f32 * 0.5 - 2.0).collect();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(t(&[1, 1, 3, 4], &data));
        let w = tape.leaf(t(&[1, 1, 1, 1], &[1.]));
        let b = tape.leaf(t(&[1], &[0.]));
        let y = tape.conv(x, w, b, &[1, 1], &[0, 0]).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn conv_output_extent_and_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![2, 3, 7, 9]).unwrap());
        let w = tape.leaf(Tensor::zeros(vec![4, 3, 3, 3]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![4]).unwrap());
        let y = tape.conv(x, w, b, &[2, 2], &[1, 1]).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4, 4, 5]);

        let w_bad = tape.leaf(Tensor::zeros(vec![4, 2, 3, 3]).unwrap());
        let err = tape.conv(x, w_bad, b, &[1, 1], &[0, 0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3, 7, 9]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn dense_hand_arithmetic() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(t(&[1, 2], &[1., 1.]));
        let w = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.leaf(t(&[2], &[0., 0.]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 7.]);

        let w_bad = tape.leaf(t(&[2, 3], &[0.; 6]));
        assert!(tape.dense(x, w_bad, b).is_err());
    }

    #[test]
    fn dense_identity() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(t(&[2, 3], &[1., -2., 3., 0.5, 0.25, -1.]));
        let w = tape.leaf(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let b = tape.leaf(t(&[3], &[0.; 3]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn leaky_relu_values_and_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(t(&[2], &[-1., 2.]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 2.]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.2, 1.]);

        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(t(&[2], &[-5., 0.]));
        let y = tape.leaky_relu(x, 0.0);
        assert_eq!(tape.value(y).data(), &[0., 0.]);
        let s = tape.sum(y);
        // subgradient at exactly zero is 1
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn upsample_replicates() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(t(&[1, 1, 2], &[1., 2.]));
        let y = tape.upsample_nearest(x, &[2]).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 1., 2., 2.]);
        let one = tape.upsample_nearest(x, &[1]).unwrap();
        assert_eq!(tape.value(one), tape.value(x));
        let s = tape.sum(y);
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[2., 2.]);
    }

    #[test]
    fn concat_and_reshape() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(t(&[2], &[1., 2.]));
        let b = tape.leaf(t(&[1], &[3.]));
        let c = tape.concat(a, b, 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 3.]);
        let r = tape.reshape(c, &[3, 1]).unwrap();
        assert!(tape.reshape(r, &[2, 2]).is_err());
        let bad = tape.leaf(t(&[1, 2], &[0., 0.]));
        assert!(tape.concat(a, bad, 0).is_err());
    }

    #[test]
    fn permute_roundtrip() {
        let mut tape = Tape::<f32>::new();
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let x = tape.leaf(t(&[2, 3, 4], &data));
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.value(p).shape(), &[4, 2, 3]);
        // element (i, j, k) of x lands at (k, i, j)
        assert_eq!(tape.value(p).data()[(3 * 2 + 1) * 3 + 2], data[(12) + 2 * 4 + 3]);
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
        assert!(tape.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn backward_sum_and_mse_minimum() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[2, 2], &[1., -2., 3., 0.5]));
        let s = tape.sum(w);
        assert_eq!(tape.backward(s).unwrap().get(w).unwrap().data(), &[1.; 4]);
        let m = tape.mse(w, w).unwrap();
        assert_eq!(tape.backward(m).unwrap().get(w).unwrap().data(), &[0.; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(w), Err(Error::Shape { .. })));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[1], &[3.]));
        let a = tape.mul(w, w).unwrap();
        let b = tape.add(a, w).unwrap();
        let s = tape.sum(b);
        assert_eq!(tape.backward(s).unwrap().get(w).unwrap().data(), &[7.]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(t(&[1], &[3.]));
        let w = tape.leaf(t(&[1], &[2.]));
        let p = tape.mul(c, w).unwrap();
        let g = tape.backward(p).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[3.]);
    }
}
