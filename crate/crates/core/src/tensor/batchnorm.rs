use super::{GradFn, Tensor};
use crate::error::{ensure_shape, Error, Result};

/// Weight of the previous running value in each statistics update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and update the running statistics.
    Train,
    /// Normalize with the stored running statistics.
    Infer,
}

/// Per-channel running statistics of one batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Set by the first train-mode update or when loaded from a checkpoint.
    pub initialized: bool,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    pub fn with_values(mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len());
        BatchNormStats {
            mean,
            var,
            initialized: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

struct BatchNormGrad {
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    /// Normalized input, before the affine rescale.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
    dims: (usize, usize, usize),
}

impl GradFn for BatchNormGrad {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input, &self.gamma, &self.beta]
    }

    fn backward(&self, _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (b, c, plane) = self.dims;
        let n = (b * plane) as f64;
        let gamma = self.gamma.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                let g = &grad[off..off + plane];
                let xh = &self.xhat[off..off + plane];
                sum_g[ci] += g.iter().sum::<f64>();
                sum_gx[ci] += g.iter().zip(xh).map(|(g, x)| g * x).sum::<f64>();
            }
        }

        let dx = self.input.requires_grad().then(|| {
            let mut dx = vec![0.0; grad.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * plane;
                    let k = gamma[ci] * self.inv_std[ci];
                    let g = &grad[off..off + plane];
                    let xh = &self.xhat[off..off + plane];
                    let d = &mut dx[off..off + plane];
                    match self.mode {
                        Mode::Train => {
                            let (mg, mgx) = (sum_g[ci] / n, sum_gx[ci] / n);
                            for ((d, g), x) in d.iter_mut().zip(g).zip(xh) {
                                *d = k * (g - mg - x * mgx);
                            }
                        }
                        Mode::Infer => {
                            for (d, g) in d.iter_mut().zip(g) {
                                *d = k * g;
                            }
                        }
                    }
                }
            }
            dx
        });
        vec![dx, Some(sum_gx), Some(sum_g)]
    }
}

/// Batch normalization over `[B, C, H, W]` with per-channel `gamma`/`beta`.
///
/// In [`Mode::Train`] the batch mean and (biased) variance normalize the
/// input and the running statistics move toward them with
/// [`BN_MOMENTUM`]; the running variance uses the unbiased estimate.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut BatchNormStats,
    mode: Mode,
) -> Result<Tensor> {
    let s = input.shape();
    ensure_shape!(s.len() == 4, "batch_norm: input must be [B,C,H,W], got {:?}", s);
    let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
    ensure_shape!(
        gamma.shape() == [c] && beta.shape() == [c] && stats.channels() == c,
        "batch_norm: {} channels but gamma {:?}, beta {:?}, stats {}",
        c,
        gamma.shape(),
        beta.shape(),
        stats.channels()
    );
    let count = b * plane;

    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batch_norm: train mode needs at least 2 values per channel, got {count}"
                )));
            }
            let x = input.data();
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..b {
                for (ci, m) in mean.iter_mut().enumerate() {
                    let off = (bi * c + ci) * plane;
                    *m += x[off..off + plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * plane;
                    let m = mean[ci];
                    var[ci] += x[off..off + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);

            let unbias = count as f64 / (count - 1) as f64;
            for ci in 0..c {
                stats.mean[ci] = BN_MOMENTUM * stats.mean[ci] + (1.0 - BN_MOMENTUM) * mean[ci];
                stats.var[ci] = BN_MOMENTUM * stats.var[ci] + (1.0 - BN_MOMENTUM) * var[ci] * unbias;
            }
            stats.initialized = true;
            (mean, var)
        }
        Mode::Infer => {
            if !stats.initialized {
                return Err(Error::UninitializedStatistics);
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = vec![0.0; input.numel()];
    let mut out = vec![0.0; input.numel()];
    {
        let (x, g, be) = (input.data(), gamma.data(), beta.data());
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                for i in off..off + plane {
                    let h = (x[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = h;
                    out[i] = g[ci] * h + be[ci];
                }
            }
        }
    }
    Ok(Tensor::from_op(
        s.to_vec(),
        out,
        || BatchNormGrad {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
            mode,
            dims: (b, c, plane),
        },
        &[input, gamma, beta],
    ))
}
