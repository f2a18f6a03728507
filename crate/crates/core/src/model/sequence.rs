use rand::Rng;

use crate::error::{ensure_shape, Error, Result};
use crate::init::{init_msra, init_zeros};
use crate::nn::{ConvBnRelu, Layer, Slot};
use crate::tensor::{matmul_affine, Conv2dParams, Mode, Padding, Tensor};

/// Batch of feature sequences held as a `[B, W, D]` tensor: `W` frames of
/// dimension `D`, ordered left to right over the image.
#[derive(Clone, Debug)]
pub struct FeatureSequence(Tensor);

impl FeatureSequence {
    pub fn new(t: Tensor) -> Result<Self> {
        ensure_shape!(t.ndim() == 3, "feature sequence must be [B,W,D], got {:?}", t.shape());
        Ok(FeatureSequence(t))
    }

    /// Builds a single-sequence batch from explicit frames.
    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        ensure_shape!(!frames.is_empty(), "feature sequence needs at least one frame");
        let d = frames[0].len();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != d) {
            return Err(Error::Shape(format!(
                "ragged feature sequence: frame 0 has dim {d}, frame {t} has dim {}",
                f.len()
            )));
        }
        let data = frames.concat();
        Ok(FeatureSequence(Tensor::new(&[1, frames.len(), d], data)?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn frame(&self, b: usize, t: usize) -> Vec<f64> {
        let (w, d) = (self.len(), self.dim());
        self.0.data()[(b * w + t) * d..(b * w + t + 1) * d].to_vec()
    }
}

/// Column `t` of every channel, concatenated channel-major, becomes frame `t`.
pub fn map_to_sequence(maps: &Tensor) -> Result<FeatureSequence> {
    ensure_shape!(maps.ndim() == 4, "map_to_sequence expects [B,C,H,W], got {:?}", maps.shape());
    let s = maps.shape().to_vec();
    let t = maps.permute(&[0, 3, 1, 2])?.reshape(&[s[0], s[3], s[1] * s[2]])?;
    FeatureSequence::new(t)
}

/// Packs a sequence into a one-channel `[B, 1, D, W]` map whose column `t`
/// is frame `t`.
pub fn sequence_to_map(seq: &FeatureSequence) -> Result<Tensor> {
    ensure_shape!(!seq.is_empty(), "sequence_to_map: empty sequence");
    let (b, w, d) = (seq.batch(), seq.len(), seq.dim());
    seq.tensor().permute(&[0, 2, 1])?.reshape(&[b, 1, d, w])
}

/// Stacked one-channel convolutions over the packed sequence map, each
/// halving the height and keeping the width.
pub struct SequenceModeler {
    pub layers: Vec<ConvBnRelu>,
}

impl SequenceModeler {
    pub fn new(num_layers: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "sequence kernel must be odd to preserve the width, got {kernel}"
            )));
        }
        let params = Conv2dParams::new((2, 1), Padding::uniform(kernel / 2));
        let layers = (0..num_layers)
            .map(|_| ConvBnRelu::new(1, 1, (kernel, kernel), params, rng))
            .collect::<Result<_>>()?;
        Ok(SequenceModeler { layers })
    }

    pub fn kernel(&self) -> usize {
        self.layers.first().map_or(1, |l| l.weight.shape()[3])
    }

    /// Frames of input visible to one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + self.layers.len() * (self.kernel() - 1)
    }

    /// `[B, 1, D, W]` map to a sequence of `W` frames of dimension
    /// `D / 2^layers` (rounded up per layer).
    pub fn forward(&self, map: &Tensor, mode: Mode) -> Result<FeatureSequence> {
        ensure_shape!(
            map.ndim() == 4 && map.shape()[1] == 1,
            "sequence modeler expects [B,1,D,W], got {:?}",
            map.shape()
        );
        let width = map.shape()[3];
        let mut x = map.clone();
        for layer in &self.layers {
            x = layer.forward(&x, mode)?;
            assert_eq!(x.shape()[3], width, "sequence convolution changed the width");
        }
        map_to_sequence(&x)
    }
}

impl Layer for SequenceModeler {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, Slot<'a>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layer{i}"), f);
        }
    }
}

/// Per-frame affine map to class logits, shared across frames.
pub struct Projection {
    /// `[classes, dim]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Projection {
    pub fn new(dim: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Projection {
            weight: init_msra(&[classes, dim], dim, rng)?,
            bias: init_zeros(&[classes]),
        })
    }

    /// `[B, W, D]` frames to `[B, W, classes]` logits.
    pub fn logits(&self, seq: &FeatureSequence) -> Result<Tensor> {
        let (b, w, d) = (seq.batch(), seq.len(), seq.dim());
        ensure_shape!(
            self.weight.shape()[1] == d,
            "projection expects frame dim {}, got {d}",
            self.weight.shape()[1]
        );
        let flat = seq.tensor().reshape(&[b * w, d])?;
        let k = self.weight.shape()[0];
        matmul_affine(&flat, &self.weight, &self.bias)?.reshape(&[b, w, k])
    }

    /// Row-softmax of [`Projection::logits`].
    pub fn project(&self, seq: &FeatureSequence) -> Result<Tensor> {
        self.logits(seq)?.row_softmax()
    }
}

impl Layer for Projection {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, Slot<'a>)) {
        f(format!("{prefix}.weight"), Slot::Param(&self.weight));
        f(format!("{prefix}.bias"), Slot::Param(&self.bias));
    }
}

/// Per-frame probability rows over the label space for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionSequence {
    frames: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl DistributionSequence {
    /// Validates that every row is a probability distribution (within 1e-6).
    pub fn new(frames: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        ensure_shape!(classes >= 2, "need at least one class plus blank, got {classes}");
        ensure_shape!(
            probs.len() == frames * classes,
            "{} values for {frames} frames x {classes} classes",
            probs.len()
        );
        for (t, row) in probs.chunks(classes).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::NonFinite(format!("distribution row {t}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("row {t} sums to {s}, not 1")));
            }
        }
        Ok(DistributionSequence { frames, classes, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        ensure_shape!(!rows.is_empty(), "distribution sequence needs at least one row");
        let k = rows[0].len();
        ensure_shape!(rows.iter().all(|r| r.len() == k), "ragged distribution rows");
        Self::new(rows.len(), k, rows.concat())
    }

    /// Splits a `[B, W, K]` probability tensor into one sequence per image.
    pub fn batch_from_tensor(probs: &Tensor) -> Result<Vec<Self>> {
        ensure_shape!(probs.ndim() == 3, "expected [B,W,K] probabilities, got {:?}", probs.shape());
        let (b, w, k) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
        let d = probs.data();
        (0..b)
            .map(|i| Self::new(w, k, d[i * w * k..(i + 1) * w * k].to_vec()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// Index of the blank class (always the last).
    pub fn blank(&self) -> usize {
        self.classes - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_and_dim() {
        let x = Tensor::zeros(&[1, 2, 3, 4]);
        let s = map_to_sequence(&x).unwrap();
        assert_eq!((s.len(), s.dim()), (4, 6));
    }

    #[test]
    fn channel_major_frames() {
        let mut v = vec![0.0; 2 * 2 * 3];
        v[6..].fill(1.0);
        let x = Tensor::new(&[1, 2, 2, 3], v).unwrap();
        let s = map_to_sequence(&x).unwrap();
        for t in 0..3 {
            assert_eq!(s.frame(0, t), vec![0.0, 0.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn single_channel_round_trip() {
        let v: Vec<f64> = (0..2 * 5 * 3).map(|i| i as f64).collect();
        let x = Tensor::new(&[2, 1, 5, 3], v.clone()).unwrap();
        let back = sequence_to_map(&map_to_sequence(&x).unwrap()).unwrap();
        assert_eq!(back.shape(), &[2, 1, 5, 3]);
        assert_eq!(back.to_vec(), v);
    }

    #[test]
    fn packed_map_shapes() {
        let frames = vec![vec![0.5; 2048]; 25];
        let m = sequence_to_map(&FeatureSequence::from_frames(&frames).unwrap()).unwrap();
        assert_eq!(m.shape(), &[1, 1, 2048, 25]);
        let one = sequence_to_map(&FeatureSequence::from_frames(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(one.shape(), &[1, 1, 2, 1]);
    }

    #[test]
    fn ragged_frames_rejected() {
        assert!(FeatureSequence::from_frames(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_projection_is_uniform() {
        let mut rng = crate::init::RngSeed(0).rng();
        let p = Projection::new(128, 37, &mut rng).unwrap();
        p.weight.data_mut().fill(0.0);
        let seq = FeatureSequence::from_frames(&vec![vec![0.3; 128]; 4]).unwrap();
        let y = p.project(&seq).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0 / 37.0).abs() < 1e-15));
    }

    #[test]
    fn projection_dim_mismatch() {
        let mut rng = crate::init::RngSeed(0).rng();
        let p = Projection::new(8, 37, &mut rng).unwrap();
        let seq = FeatureSequence::from_frames(&[vec![0.0; 7]]).unwrap();
        assert!(p.logits(&seq).is_err());
    }

    #[test]
    fn distribution_rows_must_normalize() {
        assert!(DistributionSequence::from_rows(&[vec![0.5, 0.4]]).is_err());
        let d = DistributionSequence::from_rows(&[vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
        assert_eq!(d.blank(), 1);
        assert_eq!(d.row(1), &[0.1, 0.9]);
    }
}
