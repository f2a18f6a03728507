//! Composite layers of the feature encoder: conv-bn-relu units, densely
//! connected blocks and residual attention modules.

use std::sync::Mutex;

use rand::Rng;

use crate::error::{ensure_shape, Error, Result};
use crate::init::{init_msra, init_ones, init_zeros};
use crate::tensor::{
    batch_norm, bilinear_upsample, concat_channels, conv2d, pool2d, BatchNormStats, Conv2dParams,
    Mode, Padding, PoolParams, Tensor,
};

/// A named piece of layer state, as handed out by [`Layer::visit`].
pub enum Slot<'a> {
    Param(&'a Tensor),
    Stats(&'a Mutex<BatchNormStats>),
}

/// Anything holding parameters or batchnorm statistics.
pub trait Layer {
    /// Calls `f` for every parameter and statistics block, in a fixed order,
    /// with dotted names under `prefix`.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, Slot<'a>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `relu(batchnorm(conv(input)))` with explicit batchnorm state.
pub fn conv_bn_relu(
    input: &Tensor,
    weight: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut BatchNormStats,
    params: Conv2dParams,
    mode: Mode,
) -> Result<Tensor> {
    let z = conv2d(input, weight, None, params)?;
    Ok(batch_norm(&z, gamma, beta, stats, mode)?.relu())
}

/// Convolution without bias followed by batchnorm and ReLU.
pub struct ConvBnRelu {
    pub weight: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: Mutex<BatchNormStats>,
    pub params: Conv2dParams,
}

impl ConvBnRelu {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        params: Conv2dParams,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = c_in * kernel.0 * kernel.1;
        Ok(ConvBnRelu {
            weight: init_msra(&[c_out, c_in, kernel.0, kernel.1], fan_in, rng)?,
            gamma: init_ones(&[c_out]),
            beta: init_zeros(&[c_out]),
            stats: Mutex::new(BatchNormStats::new(c_out)),
            params,
        })
    }

    /// 3×3 kernel, unit stride, padding 1: spatial shape preserved.
    pub fn same3x3(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new(c_in, c_out, (3, 3), Conv2dParams::new((1, 1), Padding::uniform(1)), rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut stats = self.stats.lock().expect("batchnorm stats lock poisoned");
        conv_bn_relu(x, &self.weight, &self.gamma, &self.beta, &mut stats, self.params, mode)
    }
}

impl Layer for ConvBnRelu {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, Slot<'a>)) {
        f(join(prefix, "weight"), Slot::Param(&self.weight));
        f(join(prefix, "bn.gamma"), Slot::Param(&self.gamma));
        f(join(prefix, "bn.beta"), Slot::Param(&self.beta));
        f(join(prefix, "bn"), Slot::Stats(&self.stats));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBlockConfig {
    pub num_layers: usize,
    /// Channels each layer adds to the running concatenation.
    pub growth_rate: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl DenseBlockConfig {
    pub fn output_channels(&self, input_channels: usize) -> usize {
        input_channels + self.num_layers * self.growth_rate
    }
}

impl Default for DenseBlockConfig {
    fn default() -> Self {
        DenseBlockConfig {
            num_layers: 4,
            growth_rate: 18,
            kernel: (3, 3),
            stride: (1, 1),
        }
    }
}

/// Block in which every layer sees the concatenation of the block input and
/// all earlier layer outputs.
pub struct DenseBlock {
    pub config: DenseBlockConfig,
    pub input_channels: usize,
    pub layers: Vec<ConvBnRelu>,
}

impl DenseBlock {
    pub fn new(input_channels: usize, config: DenseBlockConfig, rng: &mut impl Rng) -> Result<Self> {
        let (kh, kw) = config.kernel;
        if kh % 2 == 0 || kw % 2 == 0 || config.stride != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "dense block needs odd kernels and unit stride, got {:?} / {:?}",
                config.kernel, config.stride
            )));
        }
        let pad = Padding {
            top: kh / 2,
            bottom: kh / 2,
            left: kw / 2,
            right: kw / 2,
        };
        let layers = (0..config.num_layers)
            .map(|i| {
                ConvBnRelu::new(
                    input_channels + i * config.growth_rate,
                    config.growth_rate,
                    config.kernel,
                    Conv2dParams::new(config.stride, pad),
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(DenseBlock {
            config,
            input_channels,
            layers,
        })
    }

    /// Wraps existing layers after checking them against the connectivity
    /// arithmetic.
    pub fn from_layers(
        input_channels: usize,
        config: DenseBlockConfig,
        layers: Vec<ConvBnRelu>,
    ) -> Result<Self> {
        ensure_shape!(
            layers.len() == config.num_layers,
            "dense block: {} layers given, config says {}",
            layers.len(),
            config.num_layers
        );
        for (i, l) in layers.iter().enumerate() {
            let expect_in = input_channels + i * config.growth_rate;
            ensure_shape!(
                l.in_channels() == expect_in && l.out_channels() == config.growth_rate,
                "dense block layer {}: weight {:?} should map {} -> {} channels",
                i,
                l.weight.shape(),
                expect_in,
                config.growth_rate
            );
        }
        Ok(DenseBlock {
            config,
            input_channels,
            layers,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.config.output_channels(self.input_channels)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        ensure_shape!(
            x.ndim() == 4 && x.shape()[1] == self.input_channels,
            "dense block expects [B,{},H,W], got {:?}",
            self.input_channels,
            x.shape()
        );
        let mut features = vec![x.clone()];
        for layer in &self.layers {
            let input = if features.len() == 1 {
                features[0].clone()
            } else {
                concat_channels(&features.iter().collect::<Vec<_>>())?
            };
            features.push(layer.forward(&input, mode)?);
        }
        concat_channels(&features.iter().collect::<Vec<_>>())
    }
}

impl Layer for DenseBlock {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, Slot<'a>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionModuleConfig {
    /// Max-pool/conv stages on the way down; mirrored on the way up.
    pub pool_stages: usize,
    pub feature_branch_layers: usize,
    pub skip_connections: bool,
}

impl AttentionModuleConfig {
    pub fn with_stages(pool_stages: usize) -> Self {
        AttentionModuleConfig {
            pool_stages,
            feature_branch_layers: 1,
            skip_connections: true,
        }
    }
}

/// Bottom-up top-down mask branch producing `A ∈ (0, 1)`.
pub struct AttentionBranch {
    pub down: Vec<ConvBnRelu>,
    pub up: Vec<ConvBnRelu>,
    pub mask_weight: Tensor,
    pub mask_bias: Tensor,
}

/// Tensors produced by one residual attention module.
pub struct AttentionOutput {
    /// `(1 + A) ⊙ F`.
    pub output: Tensor,
    /// The mask `A`; all zeros when the branch is ablated.
    pub attention: Tensor,
    /// Feature-branch output `F`.
    pub features: Tensor,
}

/// Transition module computing `(1 + A) ⊙ F` from a feature branch `F` and a
/// soft mask `A`.
///
/// With `branch == None` the module is ablated: `A := 0` and the output is
/// `F` itself.
pub struct ResidualAttention {
    pub config: AttentionModuleConfig,
    pub feature: ConvBnRelu,
    pub branch: Option<AttentionBranch>,
}

impl ResidualAttention {
    pub fn new(
        channels: usize,
        config: AttentionModuleConfig,
        enabled: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.feature_branch_layers != 1 {
            return Err(Error::InvalidArgument(format!(
                "feature branch has exactly one conv layer, got {}",
                config.feature_branch_layers
            )));
        }
        let feature = ConvBnRelu::same3x3(channels, channels, rng)?;
        let branch = if enabled {
            let down = (0..config.pool_stages)
                .map(|_| ConvBnRelu::same3x3(channels, channels, rng))
                .collect::<Result<_>>()?;
            let up = (0..config.pool_stages)
                .map(|_| ConvBnRelu::same3x3(channels, channels, rng))
                .collect::<Result<_>>()?;
            Some(AttentionBranch {
                down,
                up,
                mask_weight: init_msra(&[channels, channels, 1, 1], channels, rng)?,
                mask_bias: init_zeros(&[channels]),
            })
        } else {
            None
        };
        Ok(ResidualAttention {
            config,
            feature,
            branch,
        })
    }

    pub fn channels(&self) -> usize {
        self.feature.out_channels()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<AttentionOutput> {
        ensure_shape!(x.ndim() == 4, "residual attention expects [B,C,H,W], got {:?}", x.shape());
        let min = 1usize << self.config.pool_stages;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h < min || w < min {
            return Err(Error::Shape(format!(
                "residual attention with {} pool stages needs at least {min}x{min} input, got {h}x{w}",
                self.config.pool_stages
            )));
        }

        let features = self.feature.forward(x, mode)?;
        let Some(branch) = &self.branch else {
            return Ok(AttentionOutput {
                output: features.clone(),
                attention: Tensor::zeros(features.shape()),
                features,
            });
        };

        // Down path; `levels[j]` is the tensor at resolution level j + 1.
        let mut levels = Vec::with_capacity(branch.down.len());
        let mut cur = x.clone();
        for stage in &branch.down {
            let pooled = pool2d(&cur, PoolParams::max((2, 2), (2, 2)))?;
            cur = stage.forward(&pooled, mode)?;
            levels.push(cur.clone());
        }

        // Up path back to the input resolution, reusing the recorded extents.
        let mut u = cur;
        for (j, stage) in branch.up.iter().enumerate() {
            let level = branch.down.len() - j;
            u = stage.forward(&u, mode)?;
            let target = if level >= 2 {
                let s = levels[level - 2].shape();
                (s[2], s[3])
            } else {
                (h, w)
            };
            u = bilinear_upsample(&u, target)?;
            if self.config.skip_connections && level >= 2 {
                u = u.add(&levels[level - 2])?;
            }
        }

        let logits = conv2d(
            &u,
            &branch.mask_weight,
            Some(&branch.mask_bias),
            Conv2dParams::new((1, 1), Padding::ZERO),
        )?;
        let attention = logits.sigmoid();
        let output = features.mul(&attention.add_scalar(1.0))?;
        Ok(AttentionOutput {
            output,
            attention,
            features,
        })
    }
}

impl Layer for ResidualAttention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, Slot<'a>)) {
        self.feature.visit(&join(prefix, "feature"), f);
        if let Some(b) = &self.branch {
            for (i, l) in b.down.iter().enumerate() {
                l.visit(&join(prefix, &format!("down{i}")), f);
            }
            for (i, l) in b.up.iter().enumerate() {
                l.visit(&join(prefix, &format!("up{i}")), f);
            }
            f(join(prefix, "mask.weight"), Slot::Param(&b.mask_weight));
            f(join(prefix, "mask.bias"), Slot::Param(&b.mask_bias));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::RngSeed;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = RngSeed(seed).rng();
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_block_channel_arithmetic() {
        let mut rng = RngSeed(1).rng();
        let cfg = DenseBlockConfig::default();
        assert_eq!(cfg.output_channels(36), 108);
        assert_eq!(cfg.output_channels(108), 180);
        assert_eq!(cfg.output_channels(180), 252);
        let block = DenseBlock::new(36, cfg, &mut rng).unwrap();
        let y = block.forward(&random_input(&[2, 36, 5, 7], 2), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 108, 5, 7]);
    }

    #[test]
    fn dense_block_rejects_inconsistent_layers() {
        let mut rng = RngSeed(1).rng();
        let cfg = DenseBlockConfig {
            num_layers: 2,
            growth_rate: 3,
            ..Default::default()
        };
        let layers = vec![
            ConvBnRelu::same3x3(4, 3, &mut rng).unwrap(),
            ConvBnRelu::same3x3(4, 3, &mut rng).unwrap(),
        ];
        assert!(DenseBlock::from_layers(4, cfg, layers).is_err());
    }

    #[test]
    fn block_input_is_a_prefix_of_its_output() {
        let mut rng = RngSeed(3).rng();
        let cfg = DenseBlockConfig {
            num_layers: 2,
            growth_rate: 2,
            ..Default::default()
        };
        let block = DenseBlock::new(3, cfg, &mut rng).unwrap();
        let x = random_input(&[1, 3, 4, 4], 4);
        let y = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(&y.data()[..48], &x.data()[..]);
    }

    #[test]
    fn conv_bn_relu_zeroes_negative_preactivations() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let mut stats = BatchNormStats::with_values(vec![0.0], vec![1.0]);
        let y = conv_bn_relu(
            &x,
            &w,
            &Tensor::full(&[1], 1.0),
            &Tensor::full(&[1], -10.0),
            &mut stats,
            Conv2dParams::new((1, 1), Padding::ZERO),
            Mode::Infer,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_shapes_for_odd_extents() {
        let mut rng = RngSeed(5).rng();
        let m = ResidualAttention::new(4, AttentionModuleConfig::with_stages(3), true, &mut rng).unwrap();
        for (h, w) in [(8, 8), (9, 13), (16, 50), (32, 100)] {
            let out = m.forward(&random_input(&[2, 4, h, w], 6), Mode::Train).unwrap();
            assert_eq!(out.attention.shape(), out.features.shape());
            assert_eq!(out.output.shape(), &[2, 4, h, w]);
        }
    }

    #[test]
    fn attention_rejects_small_input() {
        let mut rng = RngSeed(5).rng();
        let m = ResidualAttention::new(2, AttentionModuleConfig::with_stages(3), true, &mut rng).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 2, 7, 20]), Mode::Train).is_err());
    }

    #[test]
    fn ablated_module_passes_features_through() {
        let mut rng = RngSeed(8).rng();
        let m = ResidualAttention::new(3, AttentionModuleConfig::with_stages(2), false, &mut rng).unwrap();
        let out = m.forward(&random_input(&[2, 3, 8, 8], 9), Mode::Train).unwrap();
        assert_eq!(out.output.to_vec(), out.features.to_vec());
        assert!(out.attention.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn saturated_mask_doubles_features() {
        let mut rng = RngSeed(10).rng();
        let m = ResidualAttention::new(3, AttentionModuleConfig::with_stages(2), true, &mut rng).unwrap();
        let b = m.branch.as_ref().unwrap();
        b.mask_weight.data_mut().fill(0.0);
        b.mask_bias.data_mut().fill(60.0);
        let out = m.forward(&random_input(&[2, 3, 8, 8], 11), Mode::Train).unwrap();
        for (o, f) in out.output.data().iter().zip(out.features.data().iter()) {
            assert!((o - 2.0 * f).abs() <= 1e-12 * f.abs().max(1.0));
        }
    }
}
