use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::DenseBlockConfig;

/// Hyperparameters fixing every layer shape of the recognizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureDescriptor {
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub dense: DenseBlockConfig,
    /// Pool stages of each attention module, in encoder order.
    pub attention_stages: Vec<usize>,
    /// `false` removes every attention branch, leaving the masks at zero.
    pub attention_enabled: bool,
    /// Width of the two convolutions closing the encoder.
    pub encoder_channels: usize,
    pub seq_layers: usize,
    /// Square kernel of the sequence-modeling convolutions; odd.
    pub seq_kernel: usize,
    /// Label classes including the blank, which is the last index.
    pub num_classes: usize,
}

/// One row of [`ArchitectureDescriptor::layers`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub stage: &'static str,
    pub layer: &'static str,
    pub config: String,
    /// `[C, H, W]` after the layer.
    pub output: [usize; 3],
}

const KEYS: &[&str] = &[
    "input_height",
    "input_width",
    "stem_channels",
    "dense_layers",
    "growth_rate",
    "dense_kernel",
    "attention_stages",
    "attention_enabled",
    "encoder_channels",
    "seq_layers",
    "seq_kernel",
    "num_classes",
];

fn halve_up(x: usize) -> usize {
    x.div_ceil(2)
}

impl ArchitectureDescriptor {
    /// The full-width network: 36-channel stem, growth rate 18, two
    /// attention modules with 3 and 2 pool stages, 512-channel encoder head
    /// and four single-channel 3×3 sequence convolutions.
    pub fn standard() -> Self {
        ArchitectureDescriptor {
            input_height: 32,
            input_width: 100,
            stem_channels: 36,
            dense: DenseBlockConfig::default(),
            attention_stages: vec![3, 2],
            attention_enabled: true,
            encoder_channels: 512,
            seq_layers: 4,
            seq_kernel: 3,
            num_classes: 37,
        }
    }

    /// Same topology with narrow layers, sized for single-core training runs.
    pub fn compact() -> Self {
        ArchitectureDescriptor {
            stem_channels: 8,
            dense: DenseBlockConfig {
                growth_rate: 4,
                ..DenseBlockConfig::default()
            },
            encoder_channels: 32,
            ..Self::standard()
        }
    }

    pub fn with_attention(mut self, enabled: bool) -> Self {
        self.attention_enabled = enabled;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("architecture: {m}")));
        if self.attention_stages.len() != 2 {
            return bad(format!(
                "expected two attention modules, got {}",
                self.attention_stages.len()
            ));
        }
        if !self.input_height.is_multiple_of(8) || !self.input_width.is_multiple_of(4) {
            return bad(format!(
                "input {}x{} must have height divisible by 8 and width by 4",
                self.input_height, self.input_width
            ));
        }
        if self.seq_kernel.is_multiple_of(2) || self.dense.kernel.0.is_multiple_of(2) || self.dense.kernel.1.is_multiple_of(2) {
            return bad("kernels must be odd".into());
        }
        if self.num_classes < 2 {
            return bad("need at least one label class plus the blank".into());
        }
        let zero = [
            self.stem_channels,
            self.dense.num_layers,
            self.dense.growth_rate,
            self.encoder_channels,
            self.seq_layers,
        ];
        if zero.contains(&0) {
            return bad("layer counts and widths must be positive".into());
        }
        // Attention modules run at full and half resolution.
        for (i, &stages) in self.attention_stages.iter().enumerate() {
            let (h, w) = (self.input_height >> i, self.input_width >> i);
            if stages == 0 || h < (1 << stages) || w < (1 << stages) {
                return bad(format!(
                    "attention module {} with {stages} stages does not fit {h}x{w}",
                    i + 1
                ));
            }
        }
        Ok(())
    }

    pub fn block_channels(&self) -> [usize; 3] {
        let a = self.dense.output_channels(self.stem_channels);
        let b = self.dense.output_channels(a);
        [a, b, self.dense.output_channels(b)]
    }

    /// `(height, width)` of the encoder output map.
    pub fn encoder_extent(&self) -> (usize, usize) {
        (self.input_height / 8, self.input_width / 4)
    }

    /// Number of frames in every output sequence.
    pub fn sequence_length(&self) -> usize {
        self.encoder_extent().1
    }

    /// Frame dimension entering the sequence modeler (`C × H`).
    pub fn feature_dim(&self) -> usize {
        self.encoder_channels * self.encoder_extent().0
    }

    /// Frame dimension after the sequence modeler.
    pub fn context_dim(&self) -> usize {
        (0..self.seq_layers).fold(self.feature_dim(), |h, _| halve_up(h))
    }

    /// Frames one output frame of the sequence modeler can see.
    pub fn receptive_field(&self) -> usize {
        1 + self.seq_layers * (self.seq_kernel - 1)
    }

    pub fn blank(&self) -> usize {
        self.num_classes - 1
    }

    /// The full layer table with output shapes.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let [c1, c2, c3] = self.block_channels();
        let (h, w) = (self.input_height, self.input_width);
        let (kh, kw) = self.dense.kernel;
        let dense = format!("[{kh}x{kw}, stride 1x1] x {}, growth {}", self.dense.num_layers, self.dense.growth_rate);
        let att = |i: usize| {
            format!(
                "{} pool stages{}",
                self.attention_stages[i],
                if self.attention_enabled { "" } else { ", ablated" }
            )
        };
        let e = self.encoder_channels;
        let (eh, ew) = self.encoder_extent();
        let mut rows = vec![
            LayerSpec { stage: "encoder", layer: "convolution", config: format!("3x3, {}, stride 1x1", self.stem_channels), output: [self.stem_channels, h, w] },
            LayerSpec { stage: "encoder", layer: "dense block", config: dense.clone(), output: [c1, h, w] },
            LayerSpec { stage: "encoder", layer: "attention module", config: att(0), output: [c1, h, w] },
            LayerSpec { stage: "encoder", layer: "average pooling", config: "2x2, stride 2x2".into(), output: [c1, h / 2, w / 2] },
            LayerSpec { stage: "encoder", layer: "dense block", config: dense.clone(), output: [c2, h / 2, w / 2] },
            LayerSpec { stage: "encoder", layer: "attention module", config: att(1), output: [c2, h / 2, w / 2] },
            LayerSpec { stage: "encoder", layer: "average pooling", config: "2x2, stride 2x2".into(), output: [c2, h / 4, w / 4] },
            LayerSpec { stage: "encoder", layer: "dense block", config: dense, output: [c3, h / 4, w / 4] },
            LayerSpec { stage: "encoder", layer: "convolution", config: format!("3x3, {e}, stride 1x1"), output: [e, h / 4, w / 4] },
            LayerSpec { stage: "encoder", layer: "average pooling", config: "2x2, stride 2x1, right pad 1".into(), output: [e, eh, ew] },
            LayerSpec { stage: "encoder", layer: "convolution", config: format!("3x3, {e}, stride 1x1"), output: [e, eh, ew] },
        ];
        let k = self.seq_kernel;
        let mut seq_h = self.feature_dim();
        for _ in 0..self.seq_layers {
            seq_h = halve_up(seq_h);
            rows.push(LayerSpec {
                stage: "sequence",
                layer: "convolution",
                config: format!("{k}x{k}, 1, stride 2x1"),
                output: [1, seq_h, ew],
            });
        }
        rows.push(LayerSpec {
            stage: "ctc",
            layer: "affine + softmax",
            config: format!("{} -> {}", self.context_dim(), self.num_classes),
            output: [1, ew, self.num_classes],
        });
        rows
    }

    /// Flat `key=value` form, one key per line, stable key order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let stages: Vec<String> = self.attention_stages.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "input_height={}", self.input_height);
        let _ = writeln!(s, "input_width={}", self.input_width);
        let _ = writeln!(s, "stem_channels={}", self.stem_channels);
        let _ = writeln!(s, "dense_layers={}", self.dense.num_layers);
        let _ = writeln!(s, "growth_rate={}", self.dense.growth_rate);
        let _ = writeln!(s, "dense_kernel={}x{}", self.dense.kernel.0, self.dense.kernel.1);
        let _ = writeln!(s, "attention_stages={}", stages.join(","));
        let _ = writeln!(s, "attention_enabled={}", self.attention_enabled);
        let _ = writeln!(s, "encoder_channels={}", self.encoder_channels);
        let _ = writeln!(s, "seq_layers={}", self.seq_layers);
        let _ = writeln!(s, "seq_kernel={}", self.seq_kernel);
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("architecture descriptor: {m}"));
        let mut values = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            if !KEYS.contains(&k) {
                return Err(bad(format!("unknown key {k:?}")));
            }
            if values.insert(k, v).is_some() {
                return Err(bad(format!("duplicate key {k:?}")));
            }
        }
        let get = |k: &str| values.get(k).copied().ok_or_else(|| bad(format!("missing key {k:?}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("{k} is not a count")))
        };
        let kernel = get("dense_kernel")?;
        let (kh, kw) = kernel
            .split_once('x')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| bad(format!("dense_kernel {kernel:?} is not HxW")))?;
        let stages = get("attention_stages")?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("attention stage {s:?} is not a count"))))
            .collect::<Result<Vec<usize>>>()?;
        let arch = ArchitectureDescriptor {
            input_height: num("input_height")?,
            input_width: num("input_width")?,
            stem_channels: num("stem_channels")?,
            dense: DenseBlockConfig {
                num_layers: num("dense_layers")?,
                growth_rate: num("growth_rate")?,
                kernel: (kh, kw),
                stride: (1, 1),
            },
            attention_stages: stages,
            attention_enabled: get("attention_enabled")?
                .parse()
                .map_err(|_| bad("attention_enabled is not true/false".into()))?,
            encoder_channels: num("encoder_channels")?,
            seq_layers: num("seq_layers")?,
            seq_kernel: num("seq_kernel")?,
            num_classes: num("num_classes")?,
        };
        arch.validate()?;
        Ok(arch)
    }
}
