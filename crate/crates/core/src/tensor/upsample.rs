use super::{GradFn, Tensor};
use crate::error::{ensure_shape, Result};

/// Source coordinate taps for one output axis under corner alignment:
/// `(low index, high index, weight of high)`.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

struct UpsampleGrad {
    input: Tensor,
    ty: Vec<(usize, usize, f64)>,
    tx: Vec<(usize, usize, f64)>,
}

impl GradFn for UpsampleGrad {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = self.input.shape();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let mut gi = vec![0.0; self.input.numel()];
        for (p, gp) in grad.chunks(oh * ow).enumerate() {
            let plane = &mut gi[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, fy)) in self.ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.tx.iter().enumerate() {
                    let g = gp[oy * ow + ox];
                    plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                    plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                    plane[y1 * w + x0] += g * fy * (1.0 - fx);
                    plane[y1 * w + x1] += g * fy * fx;
                }
            }
        }
        vec![Some(gi)]
    }
}

/// Corner-aligned bilinear upsampling of `[B, C, h, w]` to `[B, C, H, W]`.
pub fn bilinear_upsample(input: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = input.shape();
    ensure_shape!(s.len() == 4, "bilinear_upsample: input must be [B,C,H,W], got {:?}", s);
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = target;
    ensure_shape!(
        oh >= h && ow >= w,
        "bilinear_upsample: target {}x{} is smaller than input {}x{}",
        oh,
        ow,
        h,
        w
    );
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let planes = s[0] * s[1];
    let mut out = vec![0.0; planes * oh * ow];
    {
        let x = input.data();
        for p in 0..planes {
            let plane = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![s[0], s[1], oh, ow],
        out,
        || UpsampleGrad {
            input: input.clone(),
            ty,
            tx,
        },
        &[input],
    ))
}
