//! Raw compute kernels behind the tape ops. Everything here works on plain
//! slices and shapes; shape validation happens in the tape layer.

use crate::tensor::{numel, Real, Tensor};

/// Geometry of a 2-D convolution over NCHW input with an OIHW kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Geometry from an input shape and a kernel shape. `None` when the
    /// shapes are incompatible or the output would be empty.
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Option<Self> {
        if x.len() != 4 || w.len() != 4 || stride == 0 || x[1] != w[1] {
            return None;
        }
        let (h, wd) = (x[2] + 2 * pad, x[3] + 2 * pad);
        if h < w[2] || wd < w[3] {
            return None;
        }
        Some(Self {
            n: x[0],
            ci: x[1],
            h: x[2],
            w: x[3],
            co: w[0],
            kh: w[2],
            kw: w[3],
            stride,
            pad,
            oh: (h - w[2]) / stride + 1,
            ow: (wd - w[3]) / stride + 1,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.n, self.ci, self.h, self.w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.oh, self.ow]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.co, self.ci, self.kh, self.kw]
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − pad` lies
/// inside `0..w`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let s = g.stride;
    let lo = g.pad.saturating_sub(kj).div_ceil(s);
    let hi = if g.w + g.pad > kj { (g.w + g.pad - kj - 1) / s + 1 } else { 0 };
    let hi = hi.min(g.ow);
    (lo.min(hi), hi)
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.ci {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let start = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (d, &v) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.p();
    for c in 0..g.ci {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = valid_cols(g, kj);
                if hi <= lo {
                    continue;
                }
                let start = lo * g.stride + kj - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.ow + lo..row + oy * g.ow + hi];
                    let base = (c * g.h + iy as usize) * g.w;
                    let dst = &mut x[base + start..base + g.w];
                    for (d, &v) in dst.iter_mut().step_by(g.stride).zip(src) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Tensor<T> {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![T::zero(); g.n * g.co * p];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let in_len = g.ci * g.h * g.w;
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let b: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        let on = &mut out[n * g.co * p..(n + 1) * g.co * p];
        T::gemm(g.co, k, p, w, (k as isize, 1), b, (p as isize, 1), T::zero(), on, (p as isize, 1));
    }
    Tensor::from_parts(g.output_shape(), out)
}

/// Adjoint of [`conv2d`] with respect to its input.
pub(crate) fn conv2d_input_grad<T: Real>(gy: &[T], w: &[T], g: &ConvGeom) -> Tensor<T> {
    let (k, p) = (g.k(), g.p());
    let in_len = g.ci * g.h * g.w;
    let mut dx = vec![T::zero(); g.n * in_len];
    let mut cols = vec![T::zero(); if g.pointwise() { 0 } else { k * p }];
    for n in 0..g.n {
        let gn = &gy[n * g.co * p..(n + 1) * g.co * p];
        let dxn = &mut dx[n * in_len..(n + 1) * in_len];
        if g.pointwise() {
            T::gemm(k, g.co, p, w, (1, k as isize), gn, (p as isize, 1), T::zero(), dxn, (p as isize, 1));
        } else {
            T::gemm(k, g.co, p, w, (1, k as isize), gn, (p as isize, 1), T::zero(), &mut cols, (p as isize, 1));
            col2im(&cols, g, dxn);
        }
    }
    Tensor::from_parts(g.input_shape(), dx)
}

/// Adjoint of [`conv2d`] with respect to its kernel.
pub(crate) fn conv2d_weight_grad<T: Real>(x: &[T], gy: &[T], g: &ConvGeom) -> Tensor<T> {
    let (k, p) = (g.k(), g.p());
    let in_len = g.ci * g.h * g.w;
    let mut dw = vec![T::zero(); g.co * k];
    let mut cols = vec![T::zero(); if g.pointwise() { 0 } else { k * p }];
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let b: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        let gn = &gy[n * g.co * p..(n + 1) * g.co * p];
        let beta = if n == 0 { T::zero() } else { T::one() };
        T::gemm(g.co, p, k, gn, (p as isize, 1), b, (1, p as isize), beta, &mut dw, (k as isize, 1));
    }
    Tensor::from_parts(g.weight_shape(), dw)
}

/// Operand geometry for a 2-D product `op(a) · op(b)`.
pub(crate) struct MatGeom {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_strides: (isize, isize),
    pub b_strides: (isize, isize),
}

impl MatGeom {
    pub fn new(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Option<Self> {
        if a.len() != 2 || b.len() != 2 {
            return None;
        }
        let (m, ka, a_strides) = if ta {
            (a[1], a[0], (1, a[1] as isize))
        } else {
            (a[0], a[1], (a[1] as isize, 1))
        };
        let (kb, n, b_strides) = if tb {
            (b[1], b[0], (1, b[1] as isize))
        } else {
            (b[0], b[1], (b[1] as isize, 1))
        };
        (ka == kb).then_some(Self {
            m,
            k: ka,
            n,
            a_strides,
            b_strides,
        })
    }
}

pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], g: &MatGeom) -> Tensor<T> {
    let mut out = vec![T::zero(); g.m * g.n];
    T::gemm(g.m, g.k, g.n, a, g.a_strides, b, g.b_strides, T::zero(), &mut out, (g.n as isize, 1));
    Tensor::from_parts(vec![g.m, g.n], out)
}

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (right aligned); broadcast
/// dimensions get stride zero.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let d = i + r - shape.len();
        strides[d] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Walks all positions of `shape` except the innermost axis, handing the
/// flat output offset and per-operand offsets to `f`.
fn outer_walk<const N: usize>(shape: &[usize], strides: [&[usize]; N], mut f: impl FnMut(usize, [usize; N])) {
    let r = shape.len();
    if r == 0 {
        f(0, [0; N]);
        return;
    }
    let inner = shape[r - 1];
    let outer = &shape[..r - 1];
    let mut idx = vec![0usize; r - 1];
    let mut offs = [0usize; N];
    for o in 0..numel(outer) {
        f(o * inner, offs);
        let mut d = r - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            for k in 0..N {
                offs[k] += strides[k][d];
            }
            if idx[d] < outer[d] {
                break;
            }
            for k in 0..N {
                offs[k] -= strides[k][d] * idx[d];
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_parts(out_shape.to_vec(), data);
    }
    let sa = aligned_strides(a.shape(), out_shape);
    let sb = aligned_strides(b.shape(), out_shape);
    let inner = out_shape.last().copied().unwrap_or(1);
    let (ia, ib) = (sa.last().copied().unwrap_or(0), sb.last().copied().unwrap_or(0));
    let mut out = vec![T::zero(); numel(out_shape)];
    let (ad, bd) = (a.data(), b.data());
    outer_walk(out_shape, [&sa, &sb], |base, [oa, ob]| {
        for j in 0..inner {
            out[base + j] = f(ad[oa + j * ia], bd[ob + j * ib]);
        }
    });
    Tensor::from_parts(out_shape.to_vec(), out)
}

/// Sums `x` down to `target`, which must broadcast to `x`'s shape.
pub(crate) fn sum_to<T: Real>(x: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if x.shape() == target {
        return x.clone();
    }
    let st = aligned_strides(target, x.shape());
    let inner = x.shape().last().copied().unwrap_or(1);
    let it = st.last().copied().unwrap_or(0);
    let mut out = vec![T::zero(); numel(target)];
    let xd = x.data();
    outer_walk(x.shape(), [&st], |base, [ot]| {
        for j in 0..inner {
            let o = ot + j * it;
            out[o] = out[o] + xd[base + j];
        }
    });
    Tensor::from_parts(target.to_vec(), out)
}

pub(crate) fn broadcast_to<T: Real>(x: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if x.shape() == shape {
        return x.clone();
    }
    let sx = aligned_strides(x.shape(), shape);
    let inner = shape.last().copied().unwrap_or(1);
    let ix = sx.last().copied().unwrap_or(0);
    let mut out = vec![T::zero(); numel(shape)];
    let xd = x.data();
    outer_walk(shape, [&sx], |base, [ox]| {
        for j in 0..inner {
            out[base + j] = xd[ox + j * ix];
        }
    });
    Tensor::from_parts(shape.to_vec(), out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

pub(crate) fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize, out_shape: &[usize]) -> Tensor<T> {
    let (outer, inner) = split_axis(out_shape, axis);
    let mut out = Vec::with_capacity(numel(out_shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::from_parts(out_shape.to_vec(), out)
}

pub(crate) fn slice<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, inner) = split_axis(x.shape(), axis);
    let full = x.shape()[axis];
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::from_parts(shape, out)
}

/// Places `x` at `start` along `axis` inside a zero tensor of extent `full`.
pub(crate) fn embed<T: Real>(x: &Tensor<T>, axis: usize, start: usize, full: usize) -> Tensor<T> {
    let (outer, inner) = split_axis(x.shape(), axis);
    let len = x.shape()[axis];
    let mut shape = x.shape().to_vec();
    shape[axis] = full;
    let mut out = vec![T::zero(); numel(&shape)];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&x.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(shape, out)
}

/// Nearest-neighbour upsampling of the two trailing axes by `f`.
pub(crate) fn upsample<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let planes = x.numel() / (h * w);
    let mut shape = x.shape().to_vec();
    shape[r - 2] = h * f;
    shape[r - 1] = w * f;
    let mut out = Vec::with_capacity(x.numel() * f * f);
    for pl in 0..planes {
        let src = &x.data()[pl * h * w..(pl + 1) * h * w];
        for y in 0..h * f {
            let row = &src[(y / f) * w..(y / f + 1) * w];
            for xx in 0..w * f {
                out.push(row[xx / f]);
            }
        }
    }
    Tensor::from_parts(shape, out)
}

/// Sums non-overlapping `f`×`f` blocks of the two trailing axes.
pub(crate) fn sum_pool<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (oh, ow) = (h / f, w / f);
    let planes = x.numel() / (h * w);
    let mut shape = x.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x.data()[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                let o = (y / f) * ow + xx / f;
                dst[o] = dst[o] + src[y * w + xx];
            }
        }
    }
    Tensor::from_parts(shape, out)
}

/// Per-channel statistics over all axes except axis 1.
pub(crate) struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let spatial = numel(&shape[2..]);
    (shape[0], shape[1], spatial)
}

/// Training-mode batch normalisation without affine terms.
pub(crate) fn batch_norm<T: Real>(x: &Tensor<T>, eps: T) -> (Tensor<T>, ChannelStats<T>) {
    let (n, c, s) = channel_layout(x.shape());
    let m = T::from_usize(n * s).unwrap();
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            mean[ch] = mean[ch] + d[base..base + s].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / m);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            let mu = mean[ch];
            var[ch] = var[ch] + d[base..base + s].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = vec![T::zero(); d.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            for i in base..base + s {
                out[i] = (d[i] - mean[ch]) * inv_std[ch];
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), out),
        ChannelStats { mean, var, inv_std },
    )
}

/// Input adjoint of [`batch_norm`] given the normalised output `xhat`.
pub(crate) fn batch_norm_grad<T: Real>(g: &Tensor<T>, xhat: &Tensor<T>, inv_std: &[T]) -> Tensor<T> {
    let (n, c, s) = channel_layout(g.shape());
    let m = T::from_usize(n * s).unwrap();
    let (gd, xd) = (g.data(), xhat.data());
    let mut sg = vec![T::zero(); c];
    let mut sgx = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            for i in base..base + s {
                sg[ch] = sg[ch] + gd[i];
                sgx[ch] = sgx[ch] + gd[i] * xd[i];
            }
        }
    }
    let mut out = vec![T::zero(); gd.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            let k = inv_std[ch] / m;
            for i in base..base + s {
                out[i] = k * (m * gd[i] - sg[ch] - xd[i] * sgx[ch]);
            }
        }
    }
    Tensor::from_parts(g.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn conv_geometry() {
        let g = ConvGeom::new(&[1, 3, 128, 128], &[8, 3, 4, 4], 2, 1).unwrap();
        assert_eq!((g.oh, g.ow), (64, 64));
        assert!(ConvGeom::new(&[1, 3, 2, 2], &[8, 3, 3, 3], 1, 0).is_none());
        assert!(ConvGeom::new(&[1, 2, 8, 8], &[8, 3, 3, 3], 1, 0).is_none());
    }

    #[test]
    fn conv_hand_value() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 2, 2], &[1.0; 4]);
        let g = ConvGeom::new(x.shape(), w.shape(), 1, 0).unwrap();
        assert_eq!(conv2d(x.data(), w.data(), &g).data(), &[10.0]);
    }

    #[test]
    fn padded_conv_matches_direct_loop() {
        let x = Tensor::from_fn(vec![2, 2, 5, 4], |i| (i as f64 * 0.37).sin());
        let w = Tensor::from_fn(vec![3, 2, 3, 3], |i| (i as f64 * 0.11).cos());
        for (stride, pad) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
            let g = ConvGeom::new(x.shape(), w.shape(), stride, pad).unwrap();
            let y = conv2d(x.data(), w.data(), &g);
            for n in 0..g.n {
                for co in 0..g.co {
                    for oy in 0..g.oh {
                        for ox in 0..g.ow {
                            let mut acc = 0.0;
                            for ci in 0..g.ci {
                                for ki in 0..3 {
                                    for kj in 0..3 {
                                        let iy = (oy * stride + ki) as isize - pad as isize;
                                        let ix = (ox * stride + kj) as isize - pad as isize;
                                        if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                            continue;
                                        }
                                        acc += x.data()[((n * 2 + ci) * 5 + iy as usize) * 4 + ix as usize]
                                            * w.data()[((co * 2 + ci) * 3 + ki) * 3 + kj];
                                    }
                                }
                            }
                            let got = y.data()[((n * g.co + co) * g.oh + oy) * g.ow + ox];
                            assert!((got - acc).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4, 4], &[1, 3, 1, 1]), Some(vec![2, 3, 4, 4]));
        assert_eq!(broadcast_shape(&[2, 5], &[5]), Some(vec![2, 5]));
        assert_eq!(broadcast_shape(&[2, 5], &[3]), None);
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[10.0, 20.0]);
        let y = broadcast_binary(&a, &b, &[2, 2], |x, y| x + y);
        assert_eq!(y.data(), &[11.0, 12.0, 23.0, 24.0]);
        assert_eq!(sum_to(&y, &[1, 2]).data(), &[34.0, 36.0]);
        assert_eq!(sum_to(&y, &[]).data(), &[70.0]);
        assert_eq!(broadcast_to(&b, &[2, 3]).data(), &[10.0, 10.0, 10.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn concat_slice_embed() {
        let a = Tensor::from_fn(vec![2, 1, 2], |i| i as f64);
        let b = Tensor::from_fn(vec![2, 2, 2], |i| 10.0 + i as f64);
        let c = concat(&[&a, &b], 1, &[2, 3, 2]);
        assert_eq!(c.data(), &[0.0, 1.0, 10.0, 11.0, 12.0, 13.0, 2.0, 3.0, 14.0, 15.0, 16.0, 17.0]);
        assert_eq!(slice(&c, 1, 1, 2), b);
        let e = embed(&a, 1, 0, 3);
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_then_pool() {
        let x = Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f64 + 1.0);
        let u = upsample(&x, 2);
        assert_eq!(u.shape(), &[1, 1, 4, 4]);
        assert_eq!(&u.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(sum_pool(&u, 2).data(), &[4.0, 8.0, 12.0, 16.0]);
    }
}
