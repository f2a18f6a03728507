//! Architecture-level properties shared by the model tests and the
//! acceptance report.

use acnv::init::RngSeed;
use acnv::model::{map_to_sequence, ArchitectureDescriptor, Model, SequenceModeler};
use acnv::nn::{AttentionModuleConfig, ResidualAttention};
use acnv::tensor::{BatchNormStats, Mode};
use acnv::train::Checkpoint;
use acnv::Tensor;

use super::random_param;

pub struct ShapeReport {
    pub block_channels: [usize; 3],
    pub encoder_shape: Vec<usize>,
    pub frame_dim: usize,
    pub sequence_length: usize,
    pub classes: usize,
    pub max_row_deviation: f64,
}

/// Runs the full-width network on one 32×100 image.
pub fn standard_shapes() -> ShapeReport {
    let arch = ArchitectureDescriptor::standard();
    let model = Model::new(arch.clone(), RngSeed(3)).unwrap();
    let image = random_param(&[1, 1, 32, 100], 4).detach();
    let trace = model.encode(&image, Mode::Train).unwrap();
    let seq = map_to_sequence(&trace.features).unwrap();
    let dists = model.forward(&image, Mode::Train).unwrap();
    let y = &dists[0];
    let max_row_deviation = y
        .rows()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ShapeReport {
        block_channels: arch.block_channels(),
        encoder_shape: trace.features.shape().to_vec(),
        frame_dim: seq.dim(),
        sequence_length: y.len(),
        classes: y.num_classes(),
        max_row_deviation,
    }
}

/// Output frames of the sequence modeler that change when input frame
/// `center` of a `[1, 1, 2048, 25]` map is perturbed. Infer mode keeps
/// batch statistics from mixing frames.
pub fn affected_frames(kernel: usize, positive: bool, seed: u64) -> Vec<usize> {
    let modeler = SequenceModeler::new(4, kernel, &mut RngSeed(seed).rng()).unwrap();
    for layer in &modeler.layers {
        *layer.stats.lock().unwrap() = BatchNormStats::with_values(vec![0.0], vec![1.0]);
        if positive {
            // all-positive weights and shifts keep every ReLU open, so the
            // affected set is the whole receptive field
            layer.weight.data_mut().iter_mut().for_each(|w| *w = w.abs() + 0.01);
            layer.beta.data_mut()[0] = 1.0;
        }
    }
    let (h, w, center) = (2048, 25, 12);
    let base = random_param(&[1, 1, h, w], seed + 1).detach();
    let mut bumped = base.to_vec();
    for r in 0..h {
        bumped[r * w + center] += if positive { 0.5 } else { 0.37 * (r % 7) as f64 - 1.0 };
    }
    let bumped = Tensor::new(&[1, 1, h, w], bumped).unwrap();
    let a = modeler.forward(&base, Mode::Infer).unwrap();
    let b = modeler.forward(&bumped, Mode::Infer).unwrap();
    (0..w).filter(|&t| a.frame(0, t) != b.frame(0, t)).collect()
}

/// Largest relative gap between the attention module output and its
/// feature branch when the mask is driven to ~0 by a very negative bias.
pub fn suppressed_mask_gap() -> f64 {
    let mut rng = RngSeed(8).rng();
    let module = ResidualAttention::new(6, AttentionModuleConfig::with_stages(2), true, &mut rng).unwrap();
    let branch = module.branch.as_ref().unwrap();
    branch.mask_bias.data_mut().iter_mut().for_each(|b| *b = -60.0);
    let x = random_param(&[2, 6, 8, 12], 9).detach();
    let out = module.forward(&x, Mode::Train).unwrap();
    let f = out.features.to_vec();
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.output
        .to_vec()
        .iter()
        .zip(&f)
        .map(|(o, f)| (o - f).abs() / scale)
        .fold(0.0, f64::max)
}

/// Saves a briefly trained compact model to disk, reloads it, and compares
/// infer-mode logits on a probe batch bit for bit.
pub fn checkpoint_reproduces_outputs(dir: &std::path::Path) -> bool {
    let model = Model::new(ArchitectureDescriptor::compact(), RngSeed(12)).unwrap();
    let warm = random_param(&[2, 1, 32, 100], 13).detach();
    model.logits(&warm, Mode::Train).unwrap();
    let path = dir.join("probe.acnv");
    Checkpoint::capture(&model, 5, None).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().restore().unwrap();
    let probe = random_param(&[3, 1, 32, 100], 14).detach();
    let a = model.logits(&probe, Mode::Infer).unwrap().to_vec();
    let b = loaded.logits(&probe, Mode::Infer).unwrap().to_vec();
    a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
}
