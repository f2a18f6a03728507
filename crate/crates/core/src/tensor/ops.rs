//! Pointwise, reduction and shape operations.

use super::{numel, GradFn, Tensor};
use crate::error::{ensure_shape, Result};

/// Backward rule given as a closure over the saved inputs.
struct ClosureGrad<F> {
    inputs: Vec<Tensor>,
    f: F,
}

impl<F> GradFn for ClosureGrad<F>
where
    F: Fn(&[Tensor], &Tensor, &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync,
{
    fn inputs(&self) -> Vec<&Tensor> {
        self.inputs.iter().collect()
    }

    fn backward(&self, output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        (self.f)(&self.inputs, output, grad)
    }
}

fn record<F>(shape: Vec<usize>, data: Vec<f64>, inputs: &[&Tensor], f: F) -> Tensor
where
    F: Fn(&[Tensor], &Tensor, &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
{
    Tensor::from_op(
        shape,
        data,
        || ClosureGrad {
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            f,
        },
        inputs,
    )
}

impl Tensor {
    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| x.max(0.0)).collect();
        record(self.shape().to_vec(), out, &[self], |ins, _, g| {
            let x = ins[0].data();
            vec![Some(
                x.iter()
                    .zip(g)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| sigmoid(x)).collect();
        record(self.shape().to_vec(), out, &[self], |_, out, g| {
            let y = out.data();
            vec![Some(
                y.iter().zip(g).map(|(&y, &g)| g * y * (1.0 - y)).collect(),
            )]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        ensure_shape!(
            self.shape() == other.shape(),
            "add: shapes {:?} and {:?} differ",
            self.shape(),
            other.shape()
        );
        let out: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(record(self.shape().to_vec(), out, &[self, other], |_, _, g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        ensure_shape!(
            self.shape() == other.shape(),
            "mul: shapes {:?} and {:?} differ",
            self.shape(),
            other.shape()
        );
        let out: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        Ok(record(
            self.shape().to_vec(),
            out,
            &[self, other],
            |ins, _, g| {
                let (a, b) = (ins[0].data(), ins[1].data());
                let ga = ins[0]
                    .requires_grad()
                    .then(|| g.iter().zip(b.iter()).map(|(g, y)| g * y).collect());
                let gb = ins[1]
                    .requires_grad()
                    .then(|| g.iter().zip(a.iter()).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            },
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x * factor).collect();
        record(self.shape().to_vec(), out, &[self], move |_, _, g| {
            vec![Some(g.iter().map(|g| g * factor).collect())]
        })
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x + value).collect();
        record(self.shape().to_vec(), out, &[self], |_, _, g| {
            vec![Some(g.to_vec())]
        })
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        record(vec![], vec![s], &[self], move |_, _, g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        ensure_shape!(
            numel(shape) == self.numel(),
            "reshape: cannot view {:?} as {:?}",
            self.shape(),
            shape
        );
        Ok(record(shape.to_vec(), self.to_vec(), &[self], |_, _, g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        ensure_shape!(
            axes.len() == nd && {
                let mut seen = vec![false; nd];
                axes.iter().all(|&a| a < nd && !std::mem::replace(&mut seen[a], true))
            },
            "permute: {:?} is not a permutation of {} axes",
            axes,
            nd
        );
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let map = permutation_map(&in_shape, axes);
        let out: Vec<f64> = {
            let x = self.data();
            map.iter().map(|&src| x[src]).collect()
        };
        Ok(record(out_shape, out, &[self], move |ins, _, g| {
            let mut gi = vec![0.0; ins[0].numel()];
            for (o, &src) in map.iter().enumerate() {
                gi[src] = g[o];
            }
            vec![Some(gi)]
        }))
    }

    /// Softmax over the last axis.
    pub fn row_softmax(&self) -> Result<Tensor> {
        ensure_shape!(self.ndim() >= 1, "row_softmax needs at least one axis");
        let k = *self.shape().last().unwrap();
        ensure_shape!(k > 0, "row_softmax over an empty axis");
        let mut out = self.to_vec();
        for row in out.chunks_mut(k) {
            softmax_in_place(row);
        }
        Ok(record(self.shape().to_vec(), out, &[self], move |_, out, g| {
            let y = out.data();
            let mut gi = vec![0.0; y.len()];
            for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(gi.chunks_mut(k)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((d, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = y * (g - dot);
                }
            }
            vec![Some(gi)]
        }))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output position of a permutation, the flat input index it reads.
fn permutation_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel(in_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

/// Concatenates 4-D tensors `[B, C_i, H, W]` along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    ensure_shape!(!parts.is_empty(), "concat_channels: no inputs");
    let first = parts[0].shape();
    ensure_shape!(first.len() == 4, "concat_channels: expected 4-D, got {:?}", first);
    let (b, h, w) = (first[0], first[2], first[3]);
    for p in parts {
        let s = p.shape();
        ensure_shape!(
            s.len() == 4 && s[0] == b && s[2] == h && s[3] == w,
            "concat_channels: {:?} does not match batch/height/width of {:?}",
            s,
            first
        );
    }
    let channels: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = vec![0.0; b * c_total * plane];
    let mut offset = 0;
    for (p, &c) in parts.iter().zip(&channels) {
        let x = p.data();
        for bi in 0..b {
            let dst = (bi * c_total + offset) * plane;
            out[dst..dst + c * plane].copy_from_slice(&x[bi * c * plane..(bi + 1) * c * plane]);
        }
        offset += c;
    }
    Ok(record(
        vec![b, c_total, h, w],
        out,
        parts,
        move |ins, _, g| {
            let mut offset = 0;
            ins.iter()
                .zip(&channels)
                .map(|(t, &c)| {
                    let gi = t.requires_grad().then(|| {
                        let mut gi = vec![0.0; b * c * plane];
                        for bi in 0..b {
                            let src = (bi * c_total + offset) * plane;
                            gi[bi * c * plane..(bi + 1) * c * plane]
                                .copy_from_slice(&g[src..src + c * plane]);
                        }
                        gi
                    });
                    offset += c;
                    gi
                })
                .collect()
        },
    ))
}

/// Affine map `x · Wᵀ + b` for `x: [N, K]`, `W: [M, K]`, `b: [M]`.
pub fn matmul_affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_shape!(
        x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1,
        "matmul_affine: expected x [N,K], W [M,K], b [M]; got {:?}, {:?}, {:?}",
        x.shape(),
        w.shape(),
        b.shape()
    );
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[0];
    ensure_shape!(
        w.shape()[1] == k && b.shape()[0] == m,
        "matmul_affine: x {:?} incompatible with W {:?} / b {:?}",
        x.shape(),
        w.shape(),
        b.shape()
    );
    let mut out = vec![0.0; n * m];
    {
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        for row in out.chunks_mut(m) {
            row.copy_from_slice(&bd);
        }
        // out[N,M] += x[N,K] · W[M,K]ᵀ
        gemm(n, k, m, &xd, (k, 1), &wd, (1, k), &mut out, 1.0);
    }
    Ok(record(vec![n, m], out, &[x, w, b], move |ins, _, g| {
        let (xd, wd) = (ins[0].data(), ins[1].data());
        let gx = ins[0].requires_grad().then(|| {
            let mut gx = vec![0.0; n * k];
            // gx[N,K] = g[N,M] · W[M,K]
            gemm(n, m, k, g, (m, 1), &wd, (k, 1), &mut gx, 0.0);
            gx
        });
        let gw = ins[1].requires_grad().then(|| {
            let mut gw = vec![0.0; m * k];
            // gW[M,K] = gᵀ[M,N] · x[N,K]
            gemm(m, n, k, g, (1, m), &xd, (k, 1), &mut gw, 0.0);
            gw
        });
        let gb = ins[2].requires_grad().then(|| {
            let mut gb = vec![0.0; m];
            for row in g.chunks(m) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            gb
        });
        vec![gx, gw, gb]
    }))
}

/// `c[m,n] = a[m,k] · b[k,n] + beta · c`, with `(row, col)` strides for `a`
/// and `b` and a dense row-major `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller's shapes and strides stay within the slices; checked
    // in debug builds through the bounds below.
    debug_assert!(k == 0 || (m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    debug_assert!(k == 0 || (k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let x = Tensor::zeros(&[1, 37]);
        let y = x.row_softmax().unwrap();
        for v in y.data().iter() {
            assert!((v - 1.0 / 37.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(Tensor::scalar(0.0).sigmoid().item(), 0.5);
    }

    #[test]
    fn concat_rejects_mismatched_height() {
        let a = Tensor::zeros(&[1, 2, 3, 4]);
        let b = Tensor::zeros(&[1, 1, 2, 4]);
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn concat_orders_channels() {
        let a = Tensor::full(&[2, 1, 1, 2], 1.0);
        let b = Tensor::full(&[2, 2, 1, 2], 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(
            c.to_vec(),
            vec![1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn affine_matches_hand_product() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 3.0, -1.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5, 0.0]).unwrap();
        let y = matmul_affine(&x, &w, &b).unwrap();
        assert_eq!(y.to_vec(), vec![1.5, 1.0]);
    }

    #[test]
    fn backward_through_shared_subexpression() {
        let x = Tensor::parameter(&[1], vec![1.5]).unwrap();
        x.add(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_of_square() {
        let x = Tensor::parameter(&[], vec![3.0]).unwrap();
        x.mul(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_of_sum_is_ones_and_accumulates() {
        let x = Tensor::parameter(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.relu().backward().is_err());
    }
}
