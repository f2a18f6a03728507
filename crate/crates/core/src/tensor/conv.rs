//! 2-D convolution through im2col and a dense matrix product.
//!
//! Column buffers are rebuilt per sample in the backward pass instead of
//! being kept alive with the graph; at 32×100 resolution they are several
//! times larger than the activations themselves.

use super::ops::gemm;
use super::{GradFn, Tensor};
use crate::error::{ensure_shape, Result};

/// Explicit zero padding on each side of the spatial axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const ZERO: Padding = Padding::uniform(0);

    pub const fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    /// (height, width) step.
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl Conv2dParams {
    pub const fn new(stride: (usize, usize), padding: Padding) -> Self {
        Conv2dParams { stride, padding }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    params: Conv2dParams,
}

impl Geometry {
    fn cols_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols_len(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1×1 kernels with unit stride and no padding read the input directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.params.stride == (1, 1) && self.params.padding == Padding::ZERO
    }

    /// Output columns `lo..hi` whose input column is in bounds for kernel
    /// column `kj`, assuming unit width stride.
    fn valid_columns(&self, kj: usize) -> (usize, usize) {
        let left = self.params.padding.left;
        let lo = left.saturating_sub(kj).min(self.w_out);
        let hi = (self.w + left).saturating_sub(kj).min(self.w_out).max(lo);
        (lo, hi)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (sh, sw) = self.params.stride;
        let pad = self.params.padding;
        let n = self.cols_len();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.h_out {
                        let line = &mut dst[oy * self.w_out..(oy + 1) * self.w_out];
                        let iy = (oy * sh + ki) as isize - pad.top as isize;
                        if iy < 0 || iy as usize >= self.h {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        if sw == 1 {
                            let (lo, hi) = self.valid_columns(kj);
                            line[..lo].fill(0.0);
                            line[hi..].fill(0.0);
                            if lo < hi {
                                let start = lo + kj - pad.left;
                                line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            }
                            continue;
                        }
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * sw + kj) as isize - pad.left as isize;
                            *v = if ix < 0 || ix as usize >= self.w {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (sh, sw) = self.params.stride;
        let pad = self.params.padding;
        let n = self.cols_len();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.h_out {
                        let iy = (oy * sh + ki) as isize - pad.top as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let line = &src[oy * self.w_out..(oy + 1) * self.w_out];
                        if sw == 1 {
                            let (lo, hi) = self.valid_columns(kj);
                            if lo < hi {
                                let start = lo + kj - pad.left;
                                dst[start..start + hi - lo]
                                    .iter_mut()
                                    .zip(&line[lo..hi])
                                    .for_each(|(d, v)| *d += v);
                            }
                            continue;
                        }
                        for (ox, v) in line.iter().enumerate() {
                            let ix = (ox * sw + kj) as isize - pad.left as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dGrad {
    input: Tensor,
    weight: Tensor,
    bias: Option<Tensor>,
    geo: Geometry,
}

impl GradFn for Conv2dGrad {
    fn inputs(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.input, &self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn backward(&self, _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = self.geo;
        let (k, n) = (g.cols_rows(), g.cols_len());
        let in_plane = g.c_in * g.h * g.w;
        let out_plane = g.c_out * n;
        let x = self.input.data();
        let w = self.weight.data();

        let need_dx = self.input.requires_grad();
        let need_dw = self.weight.requires_grad();
        let mut dx = need_dx.then(|| vec![0.0; g.batch * in_plane]);
        let mut dw = need_dw.then(|| vec![0.0; g.c_out * k]);
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * n] };

        for b in 0..g.batch {
            let xb = &x[b * in_plane..(b + 1) * in_plane];
            let gb = &grad[b * out_plane..(b + 1) * out_plane];
            if let Some(dw) = dw.as_mut() {
                let cols_ref: &[f64] = if g.is_pointwise() {
                    xb
                } else {
                    g.im2col(xb, &mut cols);
                    &cols
                };
                // dW[Cout,K] += dY[Cout,N] · colsᵀ[N,K]
                gemm(g.c_out, n, k, gb, (n, 1), cols_ref, (1, n), dw, 1.0);
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_plane..(b + 1) * in_plane];
                if g.is_pointwise() {
                    // dX[Cin,N] = Wᵀ[Cin,Cout] · dY[Cout,N]
                    gemm(k, g.c_out, n, &w, (1, k), gb, (n, 1), dxb, 0.0);
                } else {
                    gemm(k, g.c_out, n, &w, (1, k), gb, (n, 1), &mut cols, 0.0);
                    g.col2im(&cols, dxb);
                }
            }
        }

        let db = self.bias.as_ref().filter(|b| b.requires_grad()).map(|_| {
            let mut db = vec![0.0; g.c_out];
            for (i, plane) in grad.chunks(n).enumerate() {
                db[i % g.c_out] += plane.iter().sum::<f64>();
            }
            db
        });

        let mut out = vec![dx, dw];
        if self.bias.is_some() {
            out.push(db);
        }
        out
    }
}

/// Convolves `input: [B, Cin, H, W]` with `weight: [Cout, Cin, kh, kw]` and
/// adds an optional per-channel `bias: [Cout]`.
///
/// Output extents are `floor((H + top + bottom - kh) / sh) + 1` and likewise
/// for the width.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    params: Conv2dParams,
) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    ensure_shape!(is.len() == 4, "conv2d: input must be [B,C,H,W], got {:?}", is);
    ensure_shape!(ws.len() == 4, "conv2d: weight must be [Cout,Cin,kh,kw], got {:?}", ws);
    ensure_shape!(
        is[1] == ws[1],
        "conv2d: input has {} channels but weight expects {} (input {:?}, weight {:?})",
        is[1],
        ws[1],
        is,
        ws
    );
    let (sh, sw) = params.stride;
    ensure_shape!(sh >= 1 && sw >= 1, "conv2d: stride must be at least 1, got {:?}", params.stride);
    let pad = params.padding;
    let (ph, pw) = (is[2] + pad.top + pad.bottom, is[3] + pad.left + pad.right);
    ensure_shape!(
        ws[2] <= ph && ws[3] <= pw,
        "conv2d: kernel {}x{} does not fit padded input {}x{}",
        ws[2],
        ws[3],
        ph,
        pw
    );
    if let Some(b) = bias {
        ensure_shape!(b.shape() == [ws[0]], "conv2d: bias must be [{}], got {:?}", ws[0], b.shape());
    }

    let geo = Geometry {
        batch: is[0],
        c_in: is[1],
        h: is[2],
        w: is[3],
        c_out: ws[0],
        kh: ws[2],
        kw: ws[3],
        h_out: (ph - ws[2]) / sh + 1,
        w_out: (pw - ws[3]) / sw + 1,
        params,
    };
    let (k, n) = (geo.cols_rows(), geo.cols_len());
    let in_plane = geo.c_in * geo.h * geo.w;
    let out_plane = geo.c_out * n;
    let mut out = vec![0.0; geo.batch * out_plane];
    {
        let x = input.data();
        let w = weight.data();
        let bias_data = bias.map(|b| b.to_vec());
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; k * n] };
        for b in 0..geo.batch {
            let xb = &x[b * in_plane..(b + 1) * in_plane];
            let ob = &mut out[b * out_plane..(b + 1) * out_plane];
            if let Some(bd) = &bias_data {
                for (plane, &bv) in ob.chunks_mut(n).zip(bd) {
                    plane.fill(bv);
                }
            }
            let cols_ref: &[f64] = if geo.is_pointwise() {
                xb
            } else {
                geo.im2col(xb, &mut cols);
                &cols
            };
            // Y[Cout,N] = W[Cout,K] · cols[K,N]
            gemm(geo.c_out, k, n, &w, (k, 1), cols_ref, (n, 1), ob, 1.0);
        }
    }

    let mut inputs = vec![input, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(Tensor::from_op(
        vec![geo.batch, geo.c_out, geo.h_out, geo.w_out],
        out,
        || Conv2dGrad {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            geo,
        },
        &inputs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, Conv2dParams::new((1, 1), Padding::ZERO)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn pointwise_kernel_scales() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = Tensor::full(&[1, 1, 1, 1], 2.0);
        let y = conv2d(&x, &w, None, Conv2dParams::new((1, 1), Padding::ZERO)).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::zeros(&[2, 3, 2048, 25]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let y = conv2d(&x, &w, None, Conv2dParams::new((2, 1), Padding::uniform(1))).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1024, 25]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, None, Conv2dParams::new((1, 1), Padding::uniform(1))).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
    }

    #[test]
    fn rejects_oversized_kernel_and_zero_stride() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&x, &w, None, Conv2dParams::new((1, 1), Padding::ZERO)).is_err());
        assert!(conv2d(&x, &w, None, Conv2dParams::new((0, 1), Padding::uniform(1))).is_err());
    }

    #[test]
    fn asymmetric_padding_and_bias() {
        // 1×2 input, 1×2 kernel of ones, one column of zero padding on the right.
        let x = Tensor::new(&[1, 1, 1, 2], vec![3.0, 5.0]).unwrap();
        let w = Tensor::full(&[1, 1, 1, 2], 1.0);
        let b = Tensor::new(&[1], vec![0.5]).unwrap();
        let pad = Padding { right: 1, ..Padding::ZERO };
        let y = conv2d(&x, &w, Some(&b), Conv2dParams::new((1, 1), pad)).unwrap();
        assert_eq!(y.to_vec(), vec![8.5, 5.5]);
    }
}
