//! Convolution kernels: im2col + GEMM for square kernels, a scatter GEMM
//! for the 2×2 stride-2 transposed convolution, and 2×2 max pooling.

use super::{matmul, recycle, scratch, Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// A 1×1 stride-1 unpadded kernel reads the input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + kx - pad`
    /// falls inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < self.wo && (lo * self.stride + kx) < self.pad {
            lo += 1;
        }
        let mut hi = self.wo;
        while hi > lo && (hi - 1) * self.stride + kx >= self.w + self.pad {
            hi -= 1;
        }
        (lo, hi)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let off = lo + kx - g.pad;
                        drow[lo..hi].copy_from_slice(&srow[off..off + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back onto the image.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in lo..hi {
                        let ix = ox * g.stride + kx - g.pad;
                        drow[ix] = drow[ix] + srow[ox];
                    }
                }
            }
        }
    }
}

/// `x: [n, ci, h, w]`, `w: [co, ci, k, k]`, `b: [co]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, ci, h, w) = x.dims4();
    let (co, wci, k, k2) = weight.dims4();
    assert_eq!(ci, wci, "conv input has {ci} channels, weight expects {wci}");
    assert_eq!(k, k2, "only square kernels are supported");
    assert_eq!(bias.len(), co);
    let g = ConvGeom::new(ci, h, w, k, stride, pad);
    let plane = g.ho * g.wo;
    let mut out = Tensor::zeros(&[n, co, g.ho, g.wo]);
    let mut col = scratch(if g.is_pointwise() { 0 } else { g.col_rows() * plane });
    for b in 0..n {
        let xs = &x.data()[b * ci * h * w..(b + 1) * ci * h * w];
        let ys = &mut out.data_mut()[b * co * plane..(b + 1) * co * plane];
        for (o, row) in ys.chunks_mut(plane).enumerate() {
            row.fill(bias.data()[o]);
        }
        let cols: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut col);
            &col
        };
        matmul(co, plane, g.col_rows(), weight.data(), false, cols, false, ys, true);
    }
    recycle(col);
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (n, ci, h, w) = x.dims4();
    let (co, _, k, _) = weight.dims4();
    let g = ConvGeom::new(ci, h, w, k, stride, pad);
    let plane = g.ho * g.wo;
    let rows = g.col_rows();
    let (need_dx, need_dw, need_db) = need;

    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_db.then(|| Tensor::zeros(&[co]));
    let pointwise = g.is_pointwise();
    let mut flipped = (need_dx && !pointwise && stride == 1 && pad < k).then(|| {
        let wd = weight.data();
        let mut wf = vec![T::zero(); ci * co * k * k];
        for o in 0..co {
            for i in 0..ci {
                for t in 0..k * k {
                    wf[(i * co + o) * k * k + (k * k - 1 - t)] = wd[(o * ci + i) * k * k + t];
                }
            }
        }
        let fg = ConvGeom::new(co, g.ho, g.wo, k, 1, k - 1 - pad);
        debug_assert_eq!((fg.ho, fg.wo), (h, w));
        let fcol = scratch(fg.col_rows() * h * w);
        (wf, fg, fcol)
    });
    let mut col = scratch(if pointwise || !need_dw { 0 } else { rows * plane });
    let mut dcol = scratch(if need_dx && !pointwise && flipped.is_none() { rows * plane } else { 0 });
    // dW is accumulated transposed (rows × co): the long reduction over
    // pixels runs faster with the pixel axis contiguous in both operands.
    let mut dwt = vec![T::zero(); if need_dw { rows * co } else { 0 }];

    for b in 0..n {
        let gys = &gy.data()[b * co * plane..(b + 1) * co * plane];
        if let Some(db) = db.as_mut() {
            for (o, row) in gys.chunks(plane).enumerate() {
                let s: T = row.iter().copied().sum();
                db.data_mut()[o] = db.data()[o] + s;
            }
        }
        let xs = &x.data()[b * ci * h * w..(b + 1) * ci * h * w];
        if need_dw {
            let cols: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, &g, &mut col);
                &col
            };
            // dWᵀ (rows × co) += col (rows × plane) · gYᵀ (plane × co)
            matmul(rows, co, plane, cols, false, gys, true, &mut dwt, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[b * ci * h * w..(b + 1) * ci * h * w];
            if let Some((wf, fg, fcol)) = flipped.as_mut() {
                // Stride 1: dx is gY convolved with the flipped, transposed kernel.
                im2col(gys, fg, fcol);
                matmul(ci, h * w, co * k * k, wf, false, fcol, false, dxs, false);
            } else if pointwise {
                matmul(rows, plane, co, weight.data(), true, gys, false, dxs, true);
            } else {
                // dcol (rows × plane) = Wᵀ (rows × co) · gY (co × plane)
                matmul(rows, plane, co, weight.data(), true, gys, false, &mut dcol, false);
                col2im(&dcol, &g, dxs);
            }
        }
    }
    if let Some(dw) = dw.as_mut() {
        for (o, row) in dw.data_mut().chunks_mut(rows).enumerate() {
            for (r, v) in row.iter_mut().enumerate() {
                *v = dwt[r * co + o];
            }
        }
    }
    recycle(col);
    recycle(dcol);
    if let Some((_, _, fcol)) = flipped {
        recycle(fcol);
    }
    ConvGrads { dx, dw, db }
}

/// 2×2 stride-2 transposed convolution. `w: [ci, co, 2, 2]`, `b: [co]`.
pub(crate) fn conv_t2_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let (n, ci, h, w) = x.dims4();
    let (wci, co, kh, kw) = weight.dims4();
    assert_eq!((wci, kh, kw), (ci, 2, 2), "transposed conv weight must be [ci, co, 2, 2]");
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, co, 2 * h, 2 * w]);
    let mut z = vec![T::zero(); co * 4 * plane];
    for b in 0..n {
        let xs = &x.data()[b * ci * plane..(b + 1) * ci * plane];
        // z (co*4 × plane) = Wᵀ (co*4 × ci) · x (ci × plane)
        matmul(co * 4, plane, ci, weight.data(), true, xs, false, &mut z, false);
        let ys = &mut out.data_mut()[b * co * 4 * plane..(b + 1) * co * 4 * plane];
        for o in 0..co {
            let bo = bias.data()[o];
            for tap in 0..4 {
                let (dy, dx) = (tap / 2, tap % 2);
                let zr = &z[(o * 4 + tap) * plane..(o * 4 + tap + 1) * plane];
                for i in 0..h {
                    let yrow = &mut ys[o * 4 * plane + (2 * i + dy) * 2 * w..];
                    for j in 0..w {
                        yrow[2 * j + dx] = zr[i * w + j] + bo;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_t2_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (n, ci, h, w) = x.dims4();
    let (_, co, _, _) = weight.dims4();
    let plane = h * w;
    let (need_dx, need_dw, need_db) = need;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_db.then(|| Tensor::zeros(&[co]));
    let mut gz = vec![T::zero(); co * 4 * plane];
    for b in 0..n {
        let gys = &gy.data()[b * co * 4 * plane..(b + 1) * co * 4 * plane];
        for o in 0..co {
            let mut s = T::zero();
            for tap in 0..4 {
                let (dy, dxo) = (tap / 2, tap % 2);
                let zr = &mut gz[(o * 4 + tap) * plane..(o * 4 + tap + 1) * plane];
                for i in 0..h {
                    let grow = &gys[o * 4 * plane + (2 * i + dy) * 2 * w..];
                    for j in 0..w {
                        let v = grow[2 * j + dxo];
                        zr[i * w + j] = v;
                        s = s + v;
                    }
                }
            }
            if let Some(db) = db.as_mut() {
                db.data_mut()[o] = db.data()[o] + s;
            }
        }
        let xs = &x.data()[b * ci * plane..(b + 1) * ci * plane];
        if let Some(dw) = dw.as_mut() {
            // dW (ci × co*4) += x (ci × plane) · gzᵀ (plane × co*4)
            matmul(ci, co * 4, plane, xs, false, &gz, true, dw.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[b * ci * plane..(b + 1) * ci * plane];
            // dx (ci × plane) = W (ci × co*4) · gz (co*4 × plane)
            matmul(ci, plane, co * 4, weight.data(), false, &gz, false, dxs, true);
        }
    }
    ConvGrads { dx, dw, db }
}

/// 2×2 max pooling; returns the pooled tensor and the flat argmax index of
/// each output element.
pub(crate) fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = x.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "max pooling needs even spatial dims, got {h}×{w}");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let xd = x.data();
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                let o = p * ho * wo + i * wo + j;
                out.data_mut()[o] = xd[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation reference convolution.
    fn conv_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, ci, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for bi in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += w.data()[((o * ci + c) * k + ky) * k + kx]
                                        * x.data()[((bi * ci + c) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((bi * co + o) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], f: f64) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| ((i as f64) * f).sin()).collect())
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = ramp(&[2, 3, 7, 6], 0.31);
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)] {
            let w = ramp(&[4, 3, k, k], 0.17);
            let b = ramp(&[4], 1.3);
            let got = conv2d_forward(&x, &w, &b, stride, pad);
            let want = conv_ref(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12, "k={k} s={stride} p={pad}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new(2, 5, 6, 3, 1, 1);
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| (i as f64 * 0.7).cos()).collect();
        let rows = g.col_rows() * g.ho * g.wo;
        let y: Vec<f64> = (0..rows).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut col = vec![0.0; rows];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_conv_places_taps() {
        // One input pixel, one channel: output block equals the 2×2 kernel + bias.
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[1], vec![0.5]);
        let y = conv_t2_forward(&x, &w, &b);
        assert_eq!(y.data(), &[2.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn maxpool_picks_block_maximum() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 5.0, 0.0, -1.0, 3.0, 2.0, -2.0, -3.0]);
        let (y, arg) = maxpool2_forward(&x);
        assert_eq!(y.data(), &[5.0, 0.0]);
        assert_eq!(arg, vec![1, 2]);
    }
}
