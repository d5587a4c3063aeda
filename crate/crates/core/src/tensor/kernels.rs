// Raw forward/adjoint kernels shared by the tape ops.

use super::{strides, Scalar, Tensor};
use crate::error::{Error, Result};

/// Convolution geometry, padded out to three spatial axes.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub spatial: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        w: &[usize],
        bias: &[usize],
        stride: &[usize],
        pad: &[usize],
    ) -> Result<Self> {
        let mismatch = |why: &str| {
            Error::shape(
                "conv",
                format!("input {x:?} vs kernel {w:?} (bias {bias:?}): {why}"),
            )
        };
        if x.len() < 3 || x.len() > 5 {
            return Err(mismatch("input must be [batch, channel, 1..=3 spatial]"));
        }
        let spatial = x.len() - 2;
        if w.len() != x.len() {
            return Err(mismatch("kernel rank differs from input rank"));
        }
        if w[1] != x[1] {
            return Err(mismatch("kernel input channels differ from input channels"));
        }
        if bias != [w[0]] {
            return Err(mismatch("bias must have one entry per output channel"));
        }
        if stride.len() != spatial || pad.len() != spatial {
            return Err(mismatch("stride/padding need one entry per spatial axis"));
        }
        if stride.contains(&0) {
            return Err(mismatch("stride must be positive"));
        }
        let input = pad3(&x[2..], 1);
        let kernel = pad3(&w[2..], 1);
        let stride3 = pad3(stride, 1);
        let pad3_ = pad3(pad, 0);
        let mut output = [1; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * pad3_[a];
            if kernel[a] > padded {
                return Err(mismatch("kernel larger than padded input"));
            }
            output[a] = (padded - kernel[a]) / stride3[a] + 1;
        }
        Ok(ConvGeom {
            batch: x[0],
            cin: x[1],
            cout: w[0],
            spatial,
            input,
            kernel,
            stride: stride3,
            pad: pad3_,
            output,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch, self.cout];
        s.extend_from_slice(&self.output[3 - self.spatial..]);
        s
    }

    pub fn in_size(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_size(&self) -> usize {
        self.output.iter().product()
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }

    /// Output indices `[lo, hi)` along one axis that read inside the input
    /// for kernel offset `k`.
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (inp, out, s, p) = (self.input[axis], self.output[axis], self.stride[axis], self.pad[axis]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if inp + p > k { ((inp + p - k - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Visits every in-bounds `(patch row, column offset, input offset, run length)`.
    /// Runs are contiguous in both the column and (for unit stride) the input.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let [s0, s1, _] = self.stride;
        let [p0, p1, p2] = self.pad;
        let mut row = 0;
        for c in 0..self.cin {
            let base = c * id * ih * iw;
            for a in 0..kd {
                let (zlo, zhi) = self.valid(0, a);
                for b in 0..kh {
                    let (ylo, yhi) = self.valid(1, b);
                    for e in 0..kw {
                        let (xlo, xhi) = self.valid(2, e);
                        if xhi > xlo {
                            for zo in zlo..zhi {
                                let zi = zo * s0 + a - p0;
                                for yo in ylo..yhi {
                                    let yi = yo * s1 + b - p1;
                                    let src = base + (zi * ih + yi) * iw;
                                    let dst = (zo * oh + yo) * ow;
                                    f(row, dst + xlo, src + xlo * self.stride[2] + e - p2, xhi - xlo);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Patch matrix `[cin * k, out positions]` for one batch element,
    /// written into `cols`. Entries that read padding are left untouched,
    /// so `cols` must start zeroed and may be reused for the same geometry.
    pub fn im2col_into<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.out_size();
        let s = self.stride[2];
        self.for_each_run(|row, dst, src, n| {
            let d = &mut cols[row * p + dst..row * p + dst + n];
            if s == 1 {
                d.copy_from_slice(&x[src..src + n]);
            } else {
                for (j, v) in d.iter_mut().enumerate() {
                    *v = x[src + j * s];
                }
            }
        });
    }

    /// Adjoint of [`im2col_into`](Self::im2col_into): accumulates `cols` into `dx`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        if self.is_pointwise() {
            for (d, &c) in dx.iter_mut().zip(cols) {
                *d = *d + c;
            }
            return;
        }
        let p = self.out_size();
        let s = self.stride[2];
        self.for_each_run(|row, dst, src, n| {
            let c = &cols[row * p + dst..row * p + dst + n];
            if s == 1 {
                for (d, &v) in dx[src..src + n].iter_mut().zip(c) {
                    *d = *d + v;
                }
            } else {
                for (j, &v) in c.iter().enumerate() {
                    dx[src + j * s] = dx[src + j * s] + v;
                }
            }
        });
    }
}

/// Column buffer reused across the batch.
struct Cols<T> {
    buf: Vec<T>,
}

impl<T: Scalar> Cols<T> {
    fn new(g: &ConvGeom) -> Self {
        let len = if g.is_pointwise() { 0 } else { g.col_rows() * g.out_size() };
        Cols { buf: vec![T::zero(); len] }
    }

    fn fill<'a>(&'a mut self, g: &ConvGeom, x: &'a [T]) -> &'a [T] {
        if g.is_pointwise() {
            x
        } else {
            g.im2col_into(x, &mut self.buf);
            &self.buf
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let (kr, p) = (g.col_rows(), g.out_size());
    let in_len = g.cin * g.in_size();
    let out_len = g.cout * p;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut buf = Cols::new(g);
    for bi in 0..g.batch {
        let cols = buf.fill(g, &x.data()[bi * in_len..(bi + 1) * in_len]);
        let dst = &mut out[bi * out_len..(bi + 1) * out_len];
        for (co, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        T::gemm(
            g.cout,
            kr,
            p,
            T::one(),
            w.data(),
            kr as isize,
            1,
            cols,
            p as isize,
            1,
            T::one(),
            dst,
            p as isize,
            1,
        );
    }
    Tensor::from_parts_unchecked(g.out_shape(), out)
}

/// Returns `(dx, dw, db)`; `dx` is skipped when not needed.
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let (kr, p) = (g.col_rows(), g.out_size());
    let in_len = g.cin * g.in_size();
    let out_len = g.cout * p;
    let mut dx = need_dx.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.numel()]);
    let mut db = need_dw.then(|| vec![T::zero(); g.cout]);
    let mut dcols = if need_dx {
        vec![T::zero(); kr * p]
    } else {
        Vec::new()
    };
    let mut buf = Cols::new(g);
    for bi in 0..g.batch {
        let go = &dout.data()[bi * out_len..(bi + 1) * out_len];
        if let (Some(dw), Some(db)) = (dw.as_mut(), db.as_mut()) {
            let cols = buf.fill(g, &x.data()[bi * in_len..(bi + 1) * in_len]);
            // dw[cout, kr] += go[cout, p] * cols[kr, p]^T
            T::gemm(
                g.cout, p, kr, T::one(), go, p as isize, 1, cols, 1, p as isize, T::one(), dw,
                kr as isize, 1,
            );
            for (co, chunk) in go.chunks(p).enumerate() {
                db[co] = db[co] + chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[kr, p] = w[cout, kr]^T * go[cout, p]
            T::gemm(
                kr,
                g.cout,
                p,
                T::one(),
                w.data(),
                1,
                kr as isize,
                go,
                p as isize,
                1,
                T::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            g.col2im(&dcols, &mut dx[bi * in_len..(bi + 1) * in_len]);
        }
    }
    (
        dx.map(|d| Tensor::from_parts_unchecked(x.shape().to_vec(), d)),
        dw.map(|d| Tensor::from_parts_unchecked(w.shape().to_vec(), d)),
        db.map(|d| Tensor::from_parts_unchecked(vec![g.cout], d)),
    )
}

/// Nearest-neighbour upsampling of the spatial axes of `[batch, channel, spatial...]`.
pub(crate) fn upsample<T: Scalar>(x: &Tensor<T>, factors: &[usize]) -> Tensor<T> {
    let spatial = x.rank() - 2;
    let [id, ih, iw] = pad3(&x.shape()[2..], 1);
    let [fd, fh, fw] = pad3(factors, 1);
    let (od, oh, ow) = (id * fd, ih * fh, iw * fw);
    let planes = x.shape()[0] * x.shape()[1];
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    for plane in x.data().chunks(id * ih * iw) {
        for z in 0..od {
            for y in 0..oh {
                let row = &plane[((z / fd) * ih + y / fh) * iw..][..iw];
                for xo in 0..ow {
                    out.push(row[xo / fw]);
                }
            }
        }
    }
    let mut shape = x.shape()[..2].to_vec();
    shape.extend_from_slice(&[od, oh, ow][3 - spatial..]);
    Tensor::from_parts_unchecked(shape, out)
}

/// Adjoint of [`upsample`]: sums each replicated block.
pub(crate) fn upsample_backward<T: Scalar>(
    dout: &Tensor<T>,
    in_shape: &[usize],
    factors: &[usize],
) -> Tensor<T> {
    let [id, ih, iw] = pad3(&in_shape[2..], 1);
    let [fd, fh, fw] = pad3(factors, 1);
    let (oh, ow) = (ih * fh, iw * fw);
    let in_plane = id * ih * iw;
    let out_plane = in_plane * fd * fh * fw;
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (dst, src) in dx.chunks_mut(in_plane).zip(dout.data().chunks(out_plane)) {
        for z in 0..id * fd {
            for y in 0..oh {
                let drow = &mut dst[((z / fd) * ih + y / fh) * iw..][..iw];
                let srow = &src[(z * oh + y) * ow..][..ow];
                for (xo, &g) in srow.iter().enumerate() {
                    drow[xo / fw] = drow[xo / fw] + g;
                }
            }
        }
    }
    Tensor::from_parts_unchecked(in_shape.to_vec(), dx)
}

pub(crate) fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(x.numel());
    for _ in 0..x.numel() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::from_parts_unchecked(out_shape, out)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Tensor<T> {
    let outer: usize = a.shape()[..axis].iter().product();
    let ablock = a.numel() / outer;
    let bblock = b.numel() / outer;
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        out.extend_from_slice(&a.data()[o * ablock..(o + 1) * ablock]);
        out.extend_from_slice(&b.data()[o * bblock..(o + 1) * bblock]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] += b.shape()[axis];
    Tensor::from_parts_unchecked(shape, out)
}

pub(crate) fn concat_backward<T: Scalar>(
    dout: &Tensor<T>,
    a_shape: &[usize],
    b_shape: &[usize],
    axis: usize,
) -> (Tensor<T>, Tensor<T>) {
    let outer: usize = a_shape[..axis].iter().product();
    let a_len: usize = a_shape.iter().product();
    let b_len: usize = b_shape.iter().product();
    let (ablock, bblock) = (a_len / outer, b_len / outer);
    let mut da = Vec::with_capacity(a_len);
    let mut db = Vec::with_capacity(b_len);
    for chunk in dout.data().chunks(ablock + bblock) {
        da.extend_from_slice(&chunk[..ablock]);
        db.extend_from_slice(&chunk[ablock..]);
    }
    (
        Tensor::from_parts_unchecked(a_shape.to_vec(), da),
        Tensor::from_parts_unchecked(b_shape.to_vec(), db),
    )
}
