use super::conv::Padding;
use super::{GradFn, Tensor};
use crate::error::{ensure_shape, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Mean over the full window; padded cells count as zeros.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub kind: PoolKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl PoolParams {
    pub const fn max(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        PoolParams {
            kind: PoolKind::Max,
            kernel,
            stride,
            padding: Padding::ZERO,
        }
    }

    pub const fn average(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        PoolParams {
            kind: PoolKind::Average,
            kernel,
            stride,
            padding: Padding::ZERO,
        }
    }

    pub const fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }
}

struct PoolGrad {
    input: Tensor,
    params: PoolParams,
    out_hw: (usize, usize),
    /// Flat input index feeding each output cell (max pooling only).
    argmax: Vec<Option<usize>>,
}

impl GradFn for PoolGrad {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut gi = vec![0.0; self.input.numel()];
        match self.params.kind {
            PoolKind::Max => {
                for (g, src) in grad.iter().zip(&self.argmax) {
                    if let Some(i) = src {
                        gi[*i] += g;
                    }
                }
            }
            PoolKind::Average => {
                let s = self.input.shape();
                let (h, w) = (s[2], s[3]);
                let (ho, wo) = self.out_hw;
                let (kh, kw) = self.params.kernel;
                let scale = 1.0 / (kh * kw) as f64;
                for (p, gp) in grad.chunks(ho * wo).enumerate() {
                    let plane = &mut gi[p * h * w..(p + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = gp[oy * wo + ox] * scale;
                            for_window(&self.params, (h, w), (oy, ox), |iy, ix| {
                                plane[iy * w + ix] += g;
                            });
                        }
                    }
                }
            }
        }
        vec![Some(gi)]
    }
}

/// Calls `f` for every in-bounds input cell of the window at `(oy, ox)`, in
/// row-major order.
fn for_window(
    p: &PoolParams,
    (h, w): (usize, usize),
    (oy, ox): (usize, usize),
    mut f: impl FnMut(usize, usize),
) {
    for ki in 0..p.kernel.0 {
        let iy = (oy * p.stride.0 + ki) as isize - p.padding.top as isize;
        if iy < 0 || iy as usize >= h {
            continue;
        }
        for kj in 0..p.kernel.1 {
            let ix = (ox * p.stride.1 + kj) as isize - p.padding.left as isize;
            if ix < 0 || ix as usize >= w {
                continue;
            }
            f(iy as usize, ix as usize);
        }
    }
}

/// Max or average pooling over `[B, C, H, W]`.
///
/// Max pooling routes each output's gradient to the first maximal input in
/// row-major window order.
pub fn pool2d(input: &Tensor, params: PoolParams) -> Result<Tensor> {
    let s = input.shape();
    ensure_shape!(s.len() == 4, "pool2d: input must be [B,C,H,W], got {:?}", s);
    let (kh, kw) = params.kernel;
    let (sh, sw) = params.stride;
    ensure_shape!(kh >= 1 && kw >= 1 && sh >= 1 && sw >= 1, "pool2d: kernel and stride must be positive");
    let pad = params.padding;
    let (ph, pw) = (s[2] + pad.top + pad.bottom, s[3] + pad.left + pad.right);
    ensure_shape!(
        kh <= ph && kw <= pw,
        "pool2d: kernel {}x{} exceeds padded input {}x{} (zero-extent output)",
        kh,
        kw,
        ph,
        pw
    );
    let (h, w) = (s[2], s[3]);
    let (ho, wo) = ((ph - kh) / sh + 1, (pw - kw) / sw + 1);
    let planes = s[0] * s[1];
    let mut out = vec![0.0; planes * ho * wo];
    let mut argmax = Vec::new();
    {
        let x = input.data();
        if params.kind == PoolKind::Max {
            argmax.reserve(out.len());
        }
        let scale = 1.0 / (kh * kw) as f64;
        for p in 0..planes {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = &mut out[(p * ho + oy) * wo + ox];
                    match params.kind {
                        PoolKind::Max => {
                            let mut best: Option<(usize, f64)> = None;
                            for_window(&params, (h, w), (oy, ox), |iy, ix| {
                                let v = plane[iy * w + ix];
                                if best.is_none_or(|(_, b)| v > b) {
                                    best = Some((iy * w + ix, v));
                                }
                            });
                            *o = best.map_or(0.0, |(_, v)| v);
                            argmax.push(best.map(|(i, _)| p * h * w + i));
                        }
                        PoolKind::Average => {
                            let mut acc = 0.0;
                            for_window(&params, (h, w), (oy, ox), |iy, ix| acc += plane[iy * w + ix]);
                            *o = acc * scale;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![s[0], s[1], ho, wo],
        out,
        || PoolGrad {
            input: input.clone(),
            params,
            out_hw: (ho, wo),
            argmax,
        },
        &[input],
    ))
}
