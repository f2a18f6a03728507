//! The recognizer: dense attention encoder, map-to-sequence, convolutional
//! sequence modeling and the per-frame classifier.

mod arch;
mod sequence;

pub use arch::{ArchitectureDescriptor, LayerSpec};
pub use sequence::{
    map_to_sequence, sequence_to_map, DistributionSequence, FeatureSequence, Projection,
    SequenceModeler,
};

use std::sync::Mutex;

use crate::error::{ensure_shape, Result};
use crate::init::RngSeed;
use crate::nn::{AttentionModuleConfig, AttentionOutput, ConvBnRelu, DenseBlock, Layer, ResidualAttention, Slot};
use crate::tensor::{pool2d, BatchNormStats, Mode, Padding, PoolParams, Tensor};

/// Intermediate results of one encoder pass.
pub struct EncoderTrace {
    /// `[B, encoder_channels, H/8, W/4]`.
    pub features: Tensor,
    /// One entry per attention module, in encoder order.
    pub attention: Vec<AttentionOutput>,
}

pub struct Model {
    arch: ArchitectureDescriptor,
    pub stem: ConvBnRelu,
    pub blocks: Vec<DenseBlock>,
    pub attention: Vec<ResidualAttention>,
    /// The two convolutions closing the encoder, around the 2×1 pool.
    pub head: Vec<ConvBnRelu>,
    pub sequence: SequenceModeler,
    pub projection: Projection,
}

impl Model {
    /// Builds a freshly initialized network; all randomness comes from `seed`.
    pub fn new(arch: ArchitectureDescriptor, seed: RngSeed) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed.rng();
        let [c1, c2, c3] = arch.block_channels();
        let e = arch.encoder_channels;
        let stem = ConvBnRelu::same3x3(1, arch.stem_channels, &mut rng)?;
        let mut blocks = Vec::with_capacity(3);
        let mut attention = Vec::with_capacity(2);
        blocks.push(DenseBlock::new(arch.stem_channels, arch.dense, &mut rng)?);
        attention.push(ResidualAttention::new(
            c1,
            AttentionModuleConfig::with_stages(arch.attention_stages[0]),
            arch.attention_enabled,
            &mut rng,
        )?);
        blocks.push(DenseBlock::new(c1, arch.dense, &mut rng)?);
        attention.push(ResidualAttention::new(
            c2,
            AttentionModuleConfig::with_stages(arch.attention_stages[1]),
            arch.attention_enabled,
            &mut rng,
        )?);
        blocks.push(DenseBlock::new(c2, arch.dense, &mut rng)?);
        let head = vec![
            ConvBnRelu::same3x3(c3, e, &mut rng)?,
            ConvBnRelu::same3x3(e, e, &mut rng)?,
        ];
        let sequence = SequenceModeler::new(arch.seq_layers, arch.seq_kernel, &mut rng)?;
        let projection = Projection::new(arch.context_dim(), arch.num_classes, &mut rng)?;
        Ok(Model {
            arch,
            stem,
            blocks,
            attention,
            head,
            sequence,
            projection,
        })
    }

    pub fn arch(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let (h, w) = (self.arch.input_height, self.arch.input_width);
        ensure_shape!(
            images.ndim() == 4 && images.shape()[1..] == [1, h, w],
            "expected images [B,1,{h},{w}], got {:?}",
            images.shape()
        );
        Ok(())
    }

    pub fn encode(&self, images: &Tensor, mode: Mode) -> Result<EncoderTrace> {
        self.check_input(images)?;
        let halve = PoolParams::average((2, 2), (2, 2));
        let mut x = self.stem.forward(images, mode)?;
        let mut trace = Vec::with_capacity(2);
        for (block, att) in self.blocks.iter().zip(&self.attention) {
            x = block.forward(&x, mode)?;
            let out = att.forward(&x, mode)?;
            x = pool2d(&out.output, halve)?;
            trace.push(out);
        }
        x = self.blocks[2].forward(&x, mode)?;
        x = self.head[0].forward(&x, mode)?;
        let right = Padding { right: 1, ..Padding::ZERO };
        x = pool2d(&x, PoolParams::average((2, 2), (2, 1)).with_padding(right))?;
        x = self.head[1].forward(&x, mode)?;
        Ok(EncoderTrace {
            features: x,
            attention: trace,
        })
    }

    /// Unnormalized class scores `[B, W, classes]`.
    pub fn logits(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        let trace = self.encode(images, mode)?;
        let seq = map_to_sequence(&trace.features)?;
        let map = sequence_to_map(&seq)?;
        let context = self.sequence.forward(&map, mode)?;
        self.projection.logits(&context)
    }

    /// Per-frame class probabilities for every image in the batch.
    pub fn forward(&self, images: &Tensor, mode: Mode) -> Result<Vec<DistributionSequence>> {
        let probs = self.logits(images, mode)?.row_softmax()?;
        DistributionSequence::batch_from_tensor(&probs)
    }

    /// Every learnable tensor with its dotted name, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, slot| {
            if let Slot::Param(t) = slot {
                out.push((name, t.clone()));
            }
        });
        out
    }

    /// Every batchnorm statistics block with its dotted name.
    pub fn statistics(&self) -> Vec<(String, &Mutex<BatchNormStats>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, slot| {
            if let Slot::Stats(s) = slot {
                out.push((name, s));
            }
        });
        out
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

impl Layer for Model {
    fn visit<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(String, Slot<'a>)) {
        self.stem.visit("stem", f);
        for (i, (b, a)) in self.blocks.iter().zip(&self.attention).enumerate() {
            b.visit(&format!("dense{}", i + 1), f);
            a.visit(&format!("attention{}", i + 1), f);
        }
        self.blocks[2].visit("dense3", f);
        self.head[0].visit("head0", f);
        self.head[1].visit("head1", f);
        self.sequence.visit("sequence", f);
        self.projection.visit("projection", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_model_shapes() {
        let m = Model::new(ArchitectureDescriptor::compact(), RngSeed(1)).unwrap();
        let x = Tensor::zeros(&[2, 1, 32, 100]);
        let trace = m.encode(&x, Mode::Train).unwrap();
        assert_eq!(trace.features.shape(), &[2, 32, 4, 25]);
        let l = m.logits(&x, Mode::Train).unwrap();
        assert_eq!(l.shape(), &[2, 25, 37]);
    }

    #[test]
    fn rejects_wrong_image_shape() {
        let m = Model::new(ArchitectureDescriptor::compact(), RngSeed(1)).unwrap();
        assert!(m.logits(&Tensor::zeros(&[1, 1, 32, 99]), Mode::Train).is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = Model::new(ArchitectureDescriptor::compact(), RngSeed(1)).unwrap();
        let names: Vec<String> = m.parameters().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"attention2.mask.bias".to_string()));
        let ablated = Model::new(ArchitectureDescriptor::compact().with_attention(false), RngSeed(1)).unwrap();
        assert!(ablated.parameters().len() < names.len());
    }
}
