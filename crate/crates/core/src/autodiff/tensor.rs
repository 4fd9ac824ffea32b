use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the graph can run in. Training runs in `f32`; gradient checks
/// run the same graph in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices, with `c` not aliasing `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Copy> Tensor<T> {
    /// Panics when `data.len()` does not match the shape.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshaped(self, shape: Vec<usize>) -> Self {
        Tensor::new(shape, self.data)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|x| U::from(x).expect("finite cast"))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` laid over `dst` (zero on broadcast axes).
fn aligned_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    assert!(src.len() <= dst.len(), "cannot align {src:?} to {dst:?}");
    let offset = dst.len() - src.len();
    let mut strides = vec![0; dst.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        let d = dst[i + offset];
        if src[i] == d {
            strides[i + offset] = acc;
        } else {
            assert_eq!(src[i], 1, "cannot broadcast {src:?} to {dst:?}");
        }
        acc *= src[i];
    }
    strides
}

/// Visits every index of `shape` in row-major order, passing the matching
/// offset under `strides`.
fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    if shape.is_empty() {
        f(0, 0);
        return;
    }
    let rank = shape.len();
    let inner = shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut flat = 0usize;
    loop {
        for j in 0..inner {
            f(flat + j, base + j * inner_stride);
        }
        flat += inner;
        if flat >= total {
            break;
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            base -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_to<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape == shape {
        return t.clone();
    }
    let strides = aligned_strides(&t.shape, shape);
    let mut out = vec![T::zero(); numel(shape)];
    for_each_offset(shape, &strides, |i, off| out[i] = t.data[off]);
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn sum_to<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape == shape {
        return t.clone();
    }
    let strides = aligned_strides(shape, &t.shape);
    let mut out = vec![T::zero(); numel(shape)];
    for_each_offset(&t.shape, &strides, |i, off| out[off] = out[off] + t.data[i]);
    Tensor::new(shape.to_vec(), out)
}

/// Shape bookkeeping for batched matmul. Rank-2 operands act as a single
/// matrix shared across the batch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

fn split_batch(shape: &[usize]) -> (Option<usize>, usize, usize) {
    match shape.len() {
        2 => (None, shape[0], shape[1]),
        3 => (Some(shape[0]), shape[1], shape[2]),
        _ => panic!("matmul operand must be rank 2 or 3, got {shape:?}"),
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> MatmulDims {
    let (ba, r0, c0) = split_batch(a);
    let (bb, r1, c1) = split_batch(b);
    let (m, k) = if ta { (c0, r0) } else { (r0, c0) };
    let (k2, n) = if tb { (c1, r1) } else { (r1, c1) };
    assert_eq!(k, k2, "matmul inner dims differ: {a:?} x {b:?} (ta={ta}, tb={tb})");
    let batch = match (ba, bb) {
        (Some(x), Some(y)) => {
            assert!(x == y || x == 1 || y == 1, "matmul batch mismatch {x} vs {y}");
            x.max(y)
        }
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => 1,
    };
    MatmulDims {
        batch,
        a_batched: ba.is_some_and(|x| x > 1),
        b_batched: bb.is_some_and(|x| x > 1),
        m,
        k,
        n,
    }
}

pub(crate) fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let d = matmul_dims(&a.shape, &b.shape, ta, tb);
    let out_shape = if a.shape.len() == 3 || b.shape.len() == 3 {
        vec![d.batch, d.m, d.n]
    } else {
        vec![d.m, d.n]
    };
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    // Row/col strides of the stored matrices, swapped when transposed.
    let (rsa, csa) = if ta { (1, d.m as isize) } else { (d.k as isize, 1) };
    let (rsb, csb) = if tb { (1, d.k as isize) } else { (d.n as isize, 1) };
    let a_step = if d.a_batched { d.m * d.k } else { 0 };
    let b_step = if d.b_batched { d.k * d.n } else { 0 };
    for bi in 0..d.batch {
        // SAFETY: offsets stay within the operand buffers by construction of
        // `MatmulDims`; `out` is a fresh buffer.
        unsafe {
            T::gemm(
                d.m,
                d.k,
                d.n,
                T::one(),
                a.data.as_ptr().add(bi * a_step),
                rsa,
                csa,
                b.data.as_ptr().add(bi * b_step),
                rsb,
                csb,
                T::zero(),
                out.as_mut_ptr().add(bi * d.m * d.n),
                d.n as isize,
                1,
            );
        }
    }
    Tensor::new(out_shape, out)
}

/// Stride-1 convolution patch layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }
}

/// `[N, C, H, W] -> [N, C*k*k, Ho*Wo]`
pub(crate) fn im2col<T: Real>(x: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let n = x.shape[0];
    let (c, h, w, k, p) = (g.channels, g.height, g.width, g.kernel, g.pad);
    assert_eq!(&x.shape[1..], &[c, h, w], "im2col geometry mismatch");
    let (ho, wo) = (g.out_height(), g.out_width());
    let rows = c * k * k;
    let mut out = vec![T::zero(); n * rows * ho * wo];
    for ni in 0..n {
        let src = &x.data[ni * c * h * w..(ni + 1) * c * h * w];
        let dst = &mut out[ni * rows * ho * wo..(ni + 1) * rows * ho * wo];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let drow = &mut dst[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = ox as isize + kx as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[oy * wo + ox] = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, rows, ho * wo], out)
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Real>(cols: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let n = cols.shape[0];
    let (c, h, w, k, p) = (g.channels, g.height, g.width, g.kernel, g.pad);
    let (ho, wo) = (g.out_height(), g.out_width());
    let rows = c * k * k;
    assert_eq!(&cols.shape[1..], &[rows, ho * wo], "col2im geometry mismatch");
    let mut out = vec![T::zero(); n * c * h * w];
    for ni in 0..n {
        let src = &cols.data[ni * rows * ho * wo..(ni + 1) * rows * ho * wo];
        let dst = &mut out[ni * c * h * w..(ni + 1) * c * h * w];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let srow = &src[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = ox as isize + kx as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                let d = &mut dst[base + ix as usize];
                                *d = *d + srow[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Nearest-neighbour 2x upsampling of the trailing two axes.
pub(crate) fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.shape.len();
    let (h, w) = (x.shape[r - 2], x.shape[r - 1]);
    let planes = x.numel() / (h * w);
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for pl in 0..planes {
        let src = &x.data[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * 4 * h * w..(pl + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    let mut shape = x.shape.clone();
    shape[r - 2] = 2 * h;
    shape[r - 1] = 2 * w;
    Tensor::new(shape, out)
}

/// 2x2 block sums of the trailing two axes; adjoint of [`upsample2`].
pub(crate) fn sum_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.shape.len();
    let (h2, w2) = (x.shape[r - 2], x.shape[r - 1]);
    assert!(h2 % 2 == 0 && w2 % 2 == 0, "sum_pool2 needs even spatial dims");
    let (h, w) = (h2 / 2, w2 / 2);
    let planes = x.numel() / (h2 * w2);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &x.data[pl * h2 * w2..(pl + 1) * h2 * w2];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                let d = &mut dst[(y / 2) * w + xx / 2];
                *d = *d + src[y * w2 + xx];
            }
        }
    }
    let mut shape = x.shape.clone();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::new(shape, out)
}

fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, inner)
}

pub(crate) fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let dim = x.shape[axis];
    assert!(start + len <= dim, "narrow out of range");
    let (outer, inner) = axis_blocks(&x.shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * dim * inner + start * inner;
        out.extend_from_slice(&x.data[base..base + len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Tensor::new(shape, out)
}

/// Adjoint of [`narrow`]: embeds `x` at `start` along `axis` of a zero tensor
/// with `total` entries on that axis.
pub(crate) fn pad_axis<T: Real>(x: &Tensor<T>, axis: usize, start: usize, total: usize) -> Tensor<T> {
    let len = x.shape[axis];
    let (outer, inner) = axis_blocks(&x.shape, axis);
    let mut out = vec![T::zero(); outer * total * inner];
    for o in 0..outer {
        let dst = o * total * inner + start * inner;
        out[dst..dst + len * inner].copy_from_slice(&x.data[o * len * inner..(o + 1) * len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = total;
    Tensor::new(shape, out)
}
