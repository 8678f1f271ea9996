//! Forward and backward kernels for the tensor operations recorded on a [`Graph`](super::Graph).
//!
//! Every kernel works on NCHW tensors and is written against [`Scalar`], so the same code path
//! serves f32 training and f64 gradient checks.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution with square kernel and symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, cols: &mut [S]) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let k = g.k;
    for c in 0..g.in_c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(S::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<S: Scalar>(cols: &[S], g: &ConvGeom, dx: &mut [S]) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let k = g.k;
    for c in 0..g.in_c {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w) + b`. `x: N x C x H x W`, `w: O x C x k x k`, `b: O`.
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let (n, c, h, wd) = x.dims4();
    let (o, wc, k, _) = w.dims4();
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
    let geom = ConvGeom {
        in_c: c,
        h,
        w: wd,
        k,
        stride,
        pad,
    };
    let (ho, wo) = geom.out_hw();
    let plane = ho * wo;
    let ckk = c * k * k;
    let mut out = Tensor::zeros(&[n, o, ho, wo]);
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![S::zero(); ckk * plane]
    };
    let xs = x.data();
    let in_sz = c * h * wd;
    for bi in 0..n {
        let xi = &xs[bi * in_sz..(bi + 1) * in_sz];
        let src: &[S] = if geom.is_pointwise() {
            xi
        } else {
            im2col(xi, &geom, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[bi * o * plane..(bi + 1) * o * plane];
        if let Some(b) = b {
            for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[oc]);
            }
        }
        S::gemm(
            o,
            ckk,
            plane,
            S::one(),
            w.data(),
            ckk as isize,
            1,
            src,
            plane as isize,
            1,
            S::one(),
            dst,
            plane as isize,
            1,
        );
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<S>>, Option<Tensor<S>>, Tensor<S>) {
    let (n, c, h, wd) = x.dims4();
    let (o, _, k, _) = w.dims4();
    let geom = ConvGeom {
        in_c: c,
        h,
        w: wd,
        k,
        stride,
        pad,
    };
    let (ho, wo) = geom.out_hw();
    let plane = ho * wo;
    let ckk = c * k * k;
    let in_sz = c * h * wd;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = Tensor::zeros(&[o]);
    let mut cols = vec![S::zero(); ckk * plane];
    let mut dcols = vec![S::zero(); ckk * plane];
    for bi in 0..n {
        let dyi = &dy.data()[bi * o * plane..(bi + 1) * o * plane];
        for (oc, chunk) in dyi.chunks(plane).enumerate() {
            db.data_mut()[oc] += chunk.iter().copied().sum::<S>();
        }
        let xi = &x.data()[bi * in_sz..(bi + 1) * in_sz];
        if let Some(dw) = dw.as_mut() {
            let src: &[S] = if geom.is_pointwise() {
                xi
            } else {
                im2col(xi, &geom, &mut cols);
                &cols
            };
            // dW += dY (O x P) * cols^T (P x CKK)
            S::gemm(
                o,
                plane,
                ckk,
                S::one(),
                dyi,
                plane as isize,
                1,
                src,
                1,
                plane as isize,
                S::one(),
                dw.data_mut(),
                ckk as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx.data_mut()[bi * in_sz..(bi + 1) * in_sz];
            if geom.is_pointwise() {
                // dX = W^T (C x O) * dY (O x P)
                S::gemm(
                    ckk,
                    o,
                    plane,
                    S::one(),
                    w.data(),
                    1,
                    ckk as isize,
                    dyi,
                    plane as isize,
                    1,
                    S::one(),
                    dxi,
                    plane as isize,
                    1,
                );
            } else {
                S::gemm(
                    ckk,
                    o,
                    plane,
                    S::one(),
                    w.data(),
                    1,
                    ckk as isize,
                    dyi,
                    plane as isize,
                    1,
                    S::zero(),
                    &mut dcols,
                    plane as isize,
                    1,
                );
                col2im_add(&dcols, &geom, dxi);
            }
        }
    }
    (dx, dw, db)
}

/// Normalizes groups of `len` values spaced `stride` apart. Returns output and per-group 1/std.
fn normalize_groups<S: Scalar>(
    x: &[S],
    groups: impl Iterator<Item = usize> + Clone,
    len: usize,
    stride: usize,
    eps: S,
    out: &mut [S],
    inv_std: &mut Vec<S>,
) {
    let nf = S::from_usize(len).unwrap();
    for base in groups {
        let mut mean = S::zero();
        for i in 0..len {
            mean += x[base + i * stride];
        }
        mean /= nf;
        let mut var = S::zero();
        for i in 0..len {
            let d = x[base + i * stride] - mean;
            var += d * d;
        }
        var /= nf;
        let inv = S::one() / (var + eps).sqrt();
        for i in 0..len {
            let idx = base + i * stride;
            out[idx] = (x[idx] - mean) * inv;
        }
        inv_std.push(inv);
    }
}

fn normalize_groups_backward<S: Scalar>(
    y: &[S],
    dy: &[S],
    groups: impl Iterator<Item = usize>,
    len: usize,
    stride: usize,
    inv_std: &[S],
    dx: &mut [S],
) {
    let nf = S::from_usize(len).unwrap();
    for (g, base) in groups.enumerate() {
        let mut mdy = S::zero();
        let mut mdyy = S::zero();
        for i in 0..len {
            let idx = base + i * stride;
            mdy += dy[idx];
            mdyy += dy[idx] * y[idx];
        }
        mdy /= nf;
        mdyy /= nf;
        let inv = inv_std[g];
        for i in 0..len {
            let idx = base + i * stride;
            dx[idx] = inv * (dy[idx] - mdy - y[idx] * mdyy);
        }
    }
}

/// Instance normalization: each `(n, c)` plane to zero mean, unit variance.
pub fn instance_norm_forward<S: Scalar>(x: &Tensor<S>, eps: S) -> (Tensor<S>, Vec<S>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut inv = Vec::with_capacity(n * c);
    normalize_groups(
        x.data(),
        (0..n * c).map(|g| g * hw),
        hw,
        1,
        eps,
        out.data_mut(),
        &mut inv,
    );
    (out, inv)
}

pub fn instance_norm_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>, inv: &[S]) -> Tensor<S> {
    let (n, c, h, w) = y.dims4();
    let hw = h * w;
    let mut dx = Tensor::zeros(y.shape());
    normalize_groups_backward(
        y.data(),
        dy.data(),
        (0..n * c).map(|g| g * hw),
        hw,
        1,
        inv,
        dx.data_mut(),
    );
    dx
}

fn channel_groups(n: usize, c: usize, hw: usize) -> impl Iterator<Item = usize> + Clone {
    (0..n).flat_map(move |b| (0..hw).map(move |p| b * c * hw + p))
}

/// Per-position normalization across channels (layer norm over the channel axis).
pub fn channel_norm_forward<S: Scalar>(x: &Tensor<S>, eps: S) -> (Tensor<S>, Vec<S>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut inv = Vec::with_capacity(n * hw);
    normalize_groups(
        x.data(),
        channel_groups(n, c, hw),
        c,
        hw,
        eps,
        out.data_mut(),
        &mut inv,
    );
    (out, inv)
}

pub fn channel_norm_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>, inv: &[S]) -> Tensor<S> {
    let (n, c, h, w) = y.dims4();
    let hw = h * w;
    let mut dx = Tensor::zeros(y.shape());
    normalize_groups_backward(
        y.data(),
        dy.data(),
        channel_groups(n, c, hw),
        c,
        hw,
        inv,
        dx.data_mut(),
    );
    dx
}

pub fn upsample2x_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let xs = x.data();
    let os = out.data_mut();
    for p in 0..n * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                os[(p * 2 * h + y) * 2 * w + xx] = xs[(p * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let (n, c, h2, w2) = dy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let ds = dy.data();
    let xs = dx.data_mut();
    for p in 0..n * c {
        for y in 0..h2 {
            for x in 0..w2 {
                xs[(p * h + y / 2) * w + x / 2] += ds[(p * h2 + y) * w2 + x];
            }
        }
    }
    dx
}

pub fn avg_pool_forward<S: Scalar>(x: &Tensor<S>, k: usize) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / k, w / k);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let scale = S::one() / S::from_usize(k * k).unwrap();
    let xs = x.data();
    let os = out.data_mut();
    for p in 0..n * c {
        for y in 0..ho * k {
            for xx in 0..wo * k {
                os[(p * ho + y / k) * wo + xx / k] += xs[(p * h + y) * w + xx] * scale;
            }
        }
    }
    out
}

pub fn avg_pool_backward<S: Scalar>(dy: &Tensor<S>, k: usize, in_shape: &[usize]) -> Tensor<S> {
    let (n, c, ho, wo) = dy.dims4();
    let (h, w) = (in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    let scale = S::one() / S::from_usize(k * k).unwrap();
    let ds = dy.data();
    let xs = dx.data_mut();
    for p in 0..n * c {
        for y in 0..ho * k {
            for x in 0..wo * k {
                xs[(p * h + y) * w + x] = ds[(p * ho + y / k) * wo + x / k] * scale;
            }
        }
    }
    dx
}

/// Bilinear sampling location of one output cell, with clamp-to-edge borders.
#[derive(Clone, Copy, Debug)]
pub struct Tap<S> {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: S,
    pub fy: S,
    /// Whether the unclamped coordinate lay strictly inside the grid (gradient w.r.t. flow flows).
    pub live_x: bool,
    pub live_y: bool,
}

#[inline]
pub fn bilinear_tap<S: Scalar>(sx: S, sy: S, h: usize, w: usize) -> Tap<S> {
    let maxx = S::from_usize(w - 1).unwrap();
    let maxy = S::from_usize(h - 1).unwrap();
    let live_x = sx >= S::zero() && sx <= maxx;
    let live_y = sy >= S::zero() && sy <= maxy;
    let cx = sx.max(S::zero()).min(maxx);
    let cy = sy.max(S::zero()).min(maxy);
    let x0 = cx.floor().to_usize().unwrap();
    let y0 = cy.floor().to_usize().unwrap();
    Tap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx: cx - S::from_usize(x0).unwrap(),
        fy: cy - S::from_usize(y0).unwrap(),
        live_x,
        live_y,
    }
}

/// `out[n, c, y, x] = bilinear(feat[n, c], x + flow[n, 0, y, x], y + flow[n, 1, y, x])`.
pub fn warp_forward<S: Scalar>(feat: &Tensor<S>, flow: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = feat.dims4();
    let mut out = Tensor::zeros(feat.shape());
    let fs = feat.data();
    let fl = flow.data();
    let os = out.data_mut();
    let hw = h * w;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let sx = S::from_usize(x).unwrap() + fl[(b * 2) * hw + p];
                let sy = S::from_usize(y).unwrap() + fl[(b * 2 + 1) * hw + p];
                let t = bilinear_tap(sx, sy, h, w);
                let (w00, w01, w10, w11) = (
                    (S::one() - t.fx) * (S::one() - t.fy),
                    t.fx * (S::one() - t.fy),
                    (S::one() - t.fx) * t.fy,
                    t.fx * t.fy,
                );
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    os[base + p] = fs[base + t.y0 * w + t.x0] * w00
                        + fs[base + t.y0 * w + t.x1] * w01
                        + fs[base + t.y1 * w + t.x0] * w10
                        + fs[base + t.y1 * w + t.x1] * w11;
                }
            }
        }
    }
    out
}

/// Gradients of [`warp_forward`] with respect to the feature map and the flow.
pub fn warp_backward<S: Scalar>(
    feat: &Tensor<S>,
    flow: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let (n, c, h, w) = feat.dims4();
    let mut dfeat = Tensor::zeros(feat.shape());
    let mut dflow = Tensor::zeros(flow.shape());
    let fs = feat.data();
    let fl = flow.data();
    let ds = dy.data();
    let hw = h * w;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let sx = S::from_usize(x).unwrap() + fl[(b * 2) * hw + p];
                let sy = S::from_usize(y).unwrap() + fl[(b * 2 + 1) * hw + p];
                let t = bilinear_tap(sx, sy, h, w);
                let one = S::one();
                let (w00, w01, w10, w11) = (
                    (one - t.fx) * (one - t.fy),
                    t.fx * (one - t.fy),
                    (one - t.fx) * t.fy,
                    t.fx * t.fy,
                );
                let mut gx = S::zero();
                let mut gy = S::zero();
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let g = ds[base + p];
                    let f00 = fs[base + t.y0 * w + t.x0];
                    let f01 = fs[base + t.y0 * w + t.x1];
                    let f10 = fs[base + t.y1 * w + t.x0];
                    let f11 = fs[base + t.y1 * w + t.x1];
                    let df = dfeat.data_mut();
                    df[base + t.y0 * w + t.x0] += g * w00;
                    df[base + t.y0 * w + t.x1] += g * w01;
                    df[base + t.y1 * w + t.x0] += g * w10;
                    df[base + t.y1 * w + t.x1] += g * w11;
                    gx += g * ((f01 - f00) * (one - t.fy) + (f11 - f10) * t.fy);
                    gy += g * ((f10 - f00) * (one - t.fx) + (f11 - f01) * t.fx);
                }
                let dfl = dflow.data_mut();
                if t.live_x {
                    dfl[(b * 2) * hw + p] = gx;
                }
                if t.live_y {
                    dfl[(b * 2 + 1) * hw + p] = gy;
                }
            }
        }
    }
    (dfeat, dflow)
}

/// Per-item Gram matrix `F F^T / (C H W)` with `F` the `C x HW` feature matrix. Output `N x 1 x C x C`.
pub fn gram_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let norm = S::one() / S::from_usize(c * hw).unwrap();
    let mut out = Tensor::zeros(&[n, 1, c, c]);
    for b in 0..n {
        let f = &x.data()[b * c * hw..(b + 1) * c * hw];
        S::gemm(
            c,
            hw,
            c,
            norm,
            f,
            hw as isize,
            1,
            f,
            1,
            hw as isize,
            S::zero(),
            &mut out.data_mut()[b * c * c..(b + 1) * c * c],
            c as isize,
            1,
        );
    }
    out
}

pub fn gram_backward<S: Scalar>(x: &Tensor<S>, dg: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let norm = S::one() / S::from_usize(c * hw).unwrap();
    let mut dx = Tensor::zeros(x.shape());
    let mut sym = vec![S::zero(); c * c];
    for b in 0..n {
        let g = &dg.data()[b * c * c..(b + 1) * c * c];
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = g[i * c + j] + g[j * c + i];
            }
        }
        let f = &x.data()[b * c * hw..(b + 1) * c * hw];
        S::gemm(
            c,
            c,
            hw,
            norm,
            &sym,
            c as isize,
            1,
            f,
            hw as isize,
            1,
            S::zero(),
            &mut dx.data_mut()[b * c * hw..(b + 1) * c * hw],
            hw as isize,
            1,
        );
    }
    dx
}

/// Spatial axis of a forward difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// `out[.., i] = x[.., i + 1] - x[.., i]` along `axis`.
pub fn diff_forward<S: Scalar>(x: &Tensor<S>, axis: Axis) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = match axis {
        Axis::X => (h, w - 1),
        Axis::Y => (h - 1, w),
    };
    let src = x.data();
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..ho {
            for xx in 0..wo {
                let a = p * h * w + y * w + xx;
                let b = match axis {
                    Axis::X => a + 1,
                    Axis::Y => a + w,
                };
                dst[(p * ho + y) * wo + xx] = src[b] - src[a];
            }
        }
    }
    out
}

pub fn diff_backward<S: Scalar>(dy: &Tensor<S>, in_shape: &[usize], axis: Axis) -> Tensor<S> {
    let (_, _, ho, wo) = dy.dims4();
    let (h, w) = (in_shape[2], in_shape[3]);
    let planes = in_shape[0] * in_shape[1];
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for p in 0..planes {
        for y in 0..ho {
            for xx in 0..wo {
                let g = dy.data()[(p * ho + y) * wo + xx];
                let a = p * h * w + y * w + xx;
                let b = match axis {
                    Axis::X => a + 1,
                    Axis::Y => a + w,
                };
                d[b] += g;
                d[a] -= g;
            }
        }
    }
    dx
}

/// Mean softmax cross-entropy over the channel axis. Returns loss and the softmax probabilities.
pub fn softmax_xent_forward<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> (S, Tensor<S>) {
    let (n, k, h, w) = logits.dims4();
    let hw = h * w;
    assert_eq!(labels.len(), n * hw, "one label per pixel");
    let mut probs = Tensor::zeros(logits.shape());
    let mut total = S::zero();
    let ls = logits.data();
    for b in 0..n {
        for p in 0..hw {
            let at = |c: usize| (b * k + c) * hw + p;
            let mx = (0..k).map(|c| ls[at(c)]).fold(S::neg_infinity(), S::max);
            let z: S = (0..k).map(|c| (ls[at(c)] - mx).exp()).sum();
            let lz = z.ln();
            for c in 0..k {
                probs.data_mut()[at(c)] = (ls[at(c)] - mx).exp() / z;
            }
            let lab = labels[b * hw + p];
            total += -(ls[at(lab)] - mx - lz);
        }
    }
    (total / S::from_usize(n * hw).unwrap(), probs)
}

pub fn softmax_xent_backward<S: Scalar>(probs: &Tensor<S>, labels: &[usize], dl: S) -> Tensor<S> {
    let (n, k, h, w) = probs.dims4();
    let hw = h * w;
    let scale = dl / S::from_usize(n * hw).unwrap();
    let mut d = probs.map(|p| p * scale);
    for b in 0..n {
        for p in 0..hw {
            let lab = labels[b * hw + p];
            d.data_mut()[(b * k + lab) * hw + p] -= scale;
        }
    }
    d
}

/// Mean binary cross-entropy with logits, numerically stable form.
pub fn bce_logits_forward<S: Scalar>(z: &Tensor<S>, t: &Tensor<S>) -> S {
    let total: S = z
        .data()
        .iter()
        .zip(t.data())
        .map(|(&z, &t)| z.max(S::zero()) - z * t + (S::one() + (-z.abs()).exp()).ln())
        .sum();
    total / S::from_usize(z.numel()).unwrap()
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}
