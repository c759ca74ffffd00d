//! Raw kernels behind the differentiable ops. Feature maps are `[C, H, W]`.

use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad_h - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad_w - self.kernel_w) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

/// Unfolds `input` into a `[C*kh*kw, Ho*Wo]` matrix.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, cols: &mut Vec<T>) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let n = ho * wo;
    cols.clear();
    cols.resize(g.col_rows() * n, T::zero());
    let (h, w) = (g.height as isize, g.width as isize);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < w {
                            *d = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `out`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, out: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let n = ho * wo;
    let (h, w) = (g.height as isize, g.width as isize);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv_geom<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: (usize, usize)) -> ConvGeom {
    assert_eq!(input.shape().len(), 3, "conv2d input must be [C,H,W], got {:?}", input.shape());
    assert_eq!(weight.shape().len(), 4, "conv2d weight must be [O,C,kh,kw]");
    assert_eq!(
        input.dim(0),
        weight.dim(1),
        "conv2d channel mismatch: input {:?} weight {:?}",
        input.shape(),
        weight.shape()
    );
    let g = ConvGeom {
        channels: input.dim(0),
        height: input.dim(1),
        width: input.dim(2),
        kernel_h: weight.dim(2),
        kernel_w: weight.dim(3),
        stride,
        pad_h: pad.0,
        pad_w: pad.1,
    };
    assert!(
        g.height + 2 * g.pad_h >= g.kernel_h && g.width + 2 * g.pad_w >= g.kernel_w,
        "conv2d kernel larger than padded input"
    );
    g
}

/// Output channel count up to which stride-1 convolutions skip im2col.
pub const DIRECT_MAX_OUT: usize = 4;

fn use_direct(g: &ConvGeom, out_c: usize) -> bool {
    g.stride == 1 && out_c <= DIRECT_MAX_OUT && !g.is_pointwise()
}

/// Valid output columns `ox` for kernel column `kx` (stride 1): `0 <= ox + kx - pad_w < width`.
#[inline]
fn col_span(g: &ConvGeom, kx: usize, wo: usize) -> (usize, usize) {
    let lo = g.pad_w.saturating_sub(kx);
    let hi = (g.width + g.pad_w).saturating_sub(kx).min(wo);
    (lo, hi.max(lo))
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yy, &xx) in y.iter_mut().zip(x) {
        *yy += a * xx;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| *x * *y).sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Row-wise stride-1 convolution, accumulating into `out`.
fn direct_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom, out_c: usize, out: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    for o in 0..out_c {
        for oy in 0..ho {
            let dst = &mut out[(o * ho + oy) * wo..(o * ho + oy + 1) * wo];
            for c in 0..g.channels {
                for ky in 0..kh {
                    let iy = (oy + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &x[(c * g.height + iy as usize) * g.width..][..g.width];
                    for kx in 0..kw {
                        let wv = w[((o * g.channels + c) * kh + ky) * kw + kx];
                        let (lo, hi) = col_span(g, kx, wo);
                        let off = lo + kx - g.pad_w;
                        axpy(wv, &src[off..off + hi - lo], &mut dst[lo..hi]);
                    }
                }
            }
        }
    }
}

fn direct_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    go: &[T],
    g: &ConvGeom,
    out_c: usize,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let mut dx = dx;
    let mut dw = dw;
    for o in 0..out_c {
        for oy in 0..ho {
            let grow = &go[(o * ho + oy) * wo..(o * ho + oy + 1) * wo];
            for c in 0..g.channels {
                for ky in 0..kh {
                    let iy = (oy + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let row = (c * g.height + iy as usize) * g.width;
                    for kx in 0..kw {
                        let wi = ((o * g.channels + c) * kh + ky) * kw + kx;
                        let (lo, hi) = col_span(g, kx, wo);
                        let off = lo + kx - g.pad_w;
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[wi] += dot(&grow[lo..hi], &x[row + off..row + off + hi - lo]);
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            axpy(w[wi], &grow[lo..hi], &mut dx[row + off..row + off + hi - lo]);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: (usize, usize),
) -> Tensor<T> {
    let g = conv_geom(input, weight, stride, pad);
    let out_c = weight.dim(0);
    let (ho, wo) = (g.out_h(), g.out_w());
    let n = ho * wo;
    let k = g.col_rows();
    let mut out = vec![T::zero(); out_c * n];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(b.data()[o]);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if use_direct(&g, out_c) {
        direct_forward(input.data(), weight.data(), &g, out_c, &mut out);
    } else if g.is_pointwise() {
        T::gemm(out_c, k, n, T::one(), weight.data(), false, input.data(), false, beta, &mut out);
    } else {
        let mut cols = Vec::new();
        im2col(input.data(), &g, &mut cols);
        T::gemm(out_c, k, n, T::one(), weight.data(), false, &cols, false, beta, &mut out);
    }
    Tensor::from_vec(&[out_c, ho, wo], out)
}

/// Returns `(d_input, d_weight, d_bias)`; each is only computed when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: (usize, usize),
    need: (bool, bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = conv_geom(input, weight, stride, pad);
    let out_c = weight.dim(0);
    let n = g.out_h() * g.out_w();
    let k = g.col_rows();
    let go = grad_out.data();

    let d_bias = need.2.then(|| {
        Tensor::from_vec(&[out_c], go.chunks(n).map(|c| c.iter().copied().sum()).collect())
    });

    if use_direct(&g, out_c) {
        let mut dx = need.0.then(|| vec![T::zero(); input.numel()]);
        let mut dw = need.1.then(|| vec![T::zero(); weight.numel()]);
        direct_backward(input.data(), weight.data(), go, &g, out_c, dx.as_deref_mut(), dw.as_deref_mut());
        return (
            dx.map(|d| Tensor::from_vec(input.shape(), d)),
            dw.map(|d| Tensor::from_vec(weight.shape(), d)),
            d_bias,
        );
    }

    let pointwise = g.is_pointwise();
    let mut cols = Vec::new();
    let d_weight = need.1.then(|| {
        let mut dw = vec![T::zero(); out_c * k];
        let src: &[T] = if pointwise {
            input.data()
        } else {
            im2col(input.data(), &g, &mut cols);
            &cols
        };
        T::gemm(out_c, n, k, T::one(), go, false, src, true, T::zero(), &mut dw);
        Tensor::from_vec(weight.shape(), dw)
    });

    let d_input = need.0.then(|| {
        let mut dcols = vec![T::zero(); k * n];
        T::gemm(k, out_c, n, T::one(), weight.data(), true, go, false, T::zero(), &mut dcols);
        if pointwise {
            Tensor::from_vec(input.shape(), dcols)
        } else {
            let mut dx = vec![T::zero(); input.numel()];
            col2im(&dcols, &g, &mut dx);
            Tensor::from_vec(input.shape(), dx)
        }
    });
    (d_input, d_weight, d_bias)
}

pub fn upsample2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = chw(x);
    let mut out = vec![T::zero(); c * 4 * h * w];
    let ow = 2 * w;
    for ch in 0..c {
        for y in 0..2 * h {
            let src = &x.data()[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * 2 * h + y) * ow..(ch * 2 * h + y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    Tensor::from_vec(&[c, 2 * h, 2 * w], out)
}

pub fn upsample2_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (c, h2, w2) = chw(grad);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xo in 0..w2 {
                out[(ch * h + y / 2) * w + xo / 2] += grad.data()[(ch * h2 + y) * w2 + xo];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

pub fn avgpool2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = chw(x);
    let (ho, wo) = (h / 2, w / 2);
    let q = T::from_f64(0.25).unwrap();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let base = ch * h * w;
                let s = x.data()[base + 2 * y * w + 2 * xo]
                    + x.data()[base + 2 * y * w + 2 * xo + 1]
                    + x.data()[base + (2 * y + 1) * w + 2 * xo]
                    + x.data()[base + (2 * y + 1) * w + 2 * xo + 1];
                out[(ch * ho + y) * wo + xo] = s * q;
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

pub fn avgpool2_backward<T: Scalar>(grad: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (ho, wo) = (h / 2, w / 2);
    let q = T::from_f64(0.25).unwrap();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let g = grad.data()[(ch * ho + y) * wo + xo] * q;
                let base = ch * h * w;
                out[base + 2 * y * w + 2 * xo] += g;
                out[base + 2 * y * w + 2 * xo + 1] += g;
                out[base + (2 * y + 1) * w + 2 * xo] += g;
                out[base + (2 * y + 1) * w + 2 * xo + 1] += g;
            }
        }
    }
    Tensor::from_vec(input_shape, out)
}

fn chw<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize) {
    assert_eq!(x.shape().len(), 3, "expected [C,H,W], got {:?}", x.shape());
    (x.dim(0), x.dim(1), x.dim(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (c, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
        let (o, kh, kw) = (w.dim(0), w.dim(2), w.dim(3));
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[o, ho, wo]);
        for oc in 0..o {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x.data()[(ic * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(oc * ho + y) * wo + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x = Tensor::from_fn(&[3, 7, 6], |i| (i as f64 * 0.13).sin());
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| (i as f64 * 0.29).cos());
        for (stride, pad) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
            let got = conv2d_forward(&x, &w, None, stride, (pad, pad));
            let want = conv_naive(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 6,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            pad_h: 1,
            pad_w: 1,
        };
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut cols = Vec::new();
        im2col(&x, &g, &mut cols);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 60];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn direct_and_unfolded_paths_agree() {
        let x = Tensor::from_fn(&[3, 9, 11], |i| (i as f64 * 0.37).sin());
        let narrow = Tensor::from_fn(&[2, 3, 3, 3], |i| (i as f64 * 0.61).cos());
        // padding with zero output channels forces the im2col path
        let mut wide_data = narrow.data().to_vec();
        wide_data.resize(narrow.numel() / 2 * (DIRECT_MAX_OUT + 1), 0.0);
        let wide = Tensor::from_vec(&[DIRECT_MAX_OUT + 1, 3, 3, 3], wide_data);
        for pad in [0, 1] {
            let yn = conv2d_forward(&x, &narrow, None, 1, (pad, pad));
            let yw = conv2d_forward(&x, &wide, None, 1, (pad, pad));
            let n = yn.numel();
            assert!(yn.data().iter().zip(&yw.data()[..n]).all(|(a, b)| (a - b).abs() < 1e-12));

            let gn = Tensor::from_fn(yn.shape(), |i| (i as f64 * 0.11).cos());
            let mut gw = vec![0.0; yw.numel()];
            gw[..n].copy_from_slice(gn.data());
            let gw = Tensor::from_vec(yw.shape(), gw);
            let (dxn, dwn, dbn) = conv2d_backward(&x, &narrow, &gn, 1, (pad, pad), (true, true, true));
            let (dxw, dww, dbw) = conv2d_backward(&x, &wide, &gw, 1, (pad, pad), (true, true, true));
            assert!(dxn.unwrap().max_abs_diff(&dxw.unwrap()) < 1e-12);
            let (dwn, dww) = (dwn.unwrap(), dww.unwrap());
            assert!(dwn.data().iter().zip(dww.data()).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!(dbn.unwrap().data().iter().zip(dbw.unwrap().data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
