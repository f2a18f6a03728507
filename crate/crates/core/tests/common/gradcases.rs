//! Finite-difference cases shared by the gradient tests and the acceptance
//! report.

use acnv::ctc::{ctc_loss, LabelSequence};
use acnv::init::RngSeed;
use acnv::model::{ArchitectureDescriptor, Model};
use acnv::nn::{conv_bn_relu, Layer, Slot, AttentionModuleConfig, DenseBlock, DenseBlockConfig, ResidualAttention};
use acnv::tensor::{
    batch_norm, bilinear_upsample, concat_channels, conv2d, matmul_affine, pool2d, BatchNormStats,
    Conv2dParams, Mode, Padding, PoolParams,
};
use acnv::Tensor;

use super::{max_grad_error, random_param, weighted_sum};

pub const PLAIN_TOLERANCE: f64 = 1e-4;
pub const BATCHNORM_TOLERANCE: f64 = 1e-3;

pub struct GradCase {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn case(name: &'static str, tolerance: f64, inputs: &[&Tensor], f: &dyn Fn() -> Tensor) -> GradCase {
    GradCase {
        name,
        error: max_grad_error(inputs, 40, f),
        tolerance,
    }
}

/// Tiny network with the full topology, small enough for coordinate probes.
pub fn tiny_arch() -> ArchitectureDescriptor {
    ArchitectureDescriptor {
        stem_channels: 2,
        dense: DenseBlockConfig {
            num_layers: 1,
            growth_rate: 2,
            ..DenseBlockConfig::default()
        },
        encoder_channels: 2,
        ..ArchitectureDescriptor::standard()
    }
}

pub fn all_cases() -> Vec<GradCase> {
    let mut out = Vec::new();
    let x = random_param(&[2, 3, 4, 5], 1);
    let y = random_param(&[2, 3, 4, 5], 2);

    out.push(case("relu", PLAIN_TOLERANCE, &[&x], &|| weighted_sum(&x.relu(), 1)));
    out.push(case("sigmoid", PLAIN_TOLERANCE, &[&x], &|| weighted_sum(&x.sigmoid(), 2)));
    out.push(case("add", PLAIN_TOLERANCE, &[&x, &y], &|| weighted_sum(&x.add(&y).unwrap(), 3)));
    out.push(case("mul", PLAIN_TOLERANCE, &[&x, &y], &|| weighted_sum(&x.mul(&y).unwrap(), 4)));
    out.push(case("scale and shift", PLAIN_TOLERANCE, &[&x], &|| {
        weighted_sum(&x.scale(-2.5).add_scalar(1.0), 5)
    }));
    out.push(case("mean", PLAIN_TOLERANCE, &[&x], &|| x.mul(&x).unwrap().mean()));
    out.push(case("reshape and permute", PLAIN_TOLERANCE, &[&x], &|| {
        let p = x.permute(&[0, 3, 1, 2]).unwrap().reshape(&[2, 5, 12]).unwrap();
        weighted_sum(&p, 6)
    }));
    let rows = random_param(&[2, 7, 5], 3);
    out.push(case("row softmax", PLAIN_TOLERANCE, &[&rows], &|| {
        weighted_sum(&rows.row_softmax().unwrap(), 7)
    }));
    let z = random_param(&[2, 2, 4, 5], 4);
    out.push(case("concat channels", PLAIN_TOLERANCE, &[&x, &z], &|| {
        weighted_sum(&concat_channels(&[&x, &z]).unwrap(), 8)
    }));
    let a = random_param(&[6, 4], 5);
    let w = random_param(&[3, 4], 6);
    let b = random_param(&[3], 7);
    out.push(case("affine", PLAIN_TOLERANCE, &[&a, &w, &b], &|| {
        weighted_sum(&matmul_affine(&a, &w, &b).unwrap(), 9)
    }));

    let k = random_param(&[4, 3, 3, 3], 8);
    let kb = random_param(&[4], 9);
    out.push(case("conv 3x3 same with bias", PLAIN_TOLERANCE, &[&x, &k, &kb], &|| {
        let p = Conv2dParams::new((1, 1), Padding::uniform(1));
        weighted_sum(&conv2d(&x, &k, Some(&kb), p).unwrap(), 10)
    }));
    out.push(case("conv strided asymmetric padding", PLAIN_TOLERANCE, &[&x, &k], &|| {
        let pad = Padding { top: 1, bottom: 0, left: 0, right: 2 };
        weighted_sum(&conv2d(&x, &k, None, Conv2dParams::new((2, 1), pad)).unwrap(), 11)
    }));
    let k1 = random_param(&[2, 3, 1, 1], 10);
    out.push(case("conv 1x1", PLAIN_TOLERANCE, &[&x, &k1], &|| {
        weighted_sum(&conv2d(&x, &k1, None, Conv2dParams::new((1, 1), Padding::ZERO)).unwrap(), 12)
    }));
    out.push(case("max pool", PLAIN_TOLERANCE, &[&x], &|| {
        weighted_sum(&pool2d(&x, PoolParams::max((2, 2), (2, 2))).unwrap(), 13)
    }));
    out.push(case("average pool padded", PLAIN_TOLERANCE, &[&x], &|| {
        let right = Padding { right: 1, ..Padding::ZERO };
        weighted_sum(&pool2d(&x, PoolParams::average((2, 2), (2, 1)).with_padding(right)).unwrap(), 14)
    }));
    out.push(case("bilinear upsample", PLAIN_TOLERANCE, &[&x], &|| {
        weighted_sum(&bilinear_upsample(&x, (7, 11)).unwrap(), 15)
    }));

    let gamma = random_param(&[3], 11);
    let beta = random_param(&[3], 12);
    out.push(case("batchnorm train", BATCHNORM_TOLERANCE, &[&x, &gamma, &beta], &|| {
        let mut stats = BatchNormStats::new(3);
        weighted_sum(&batch_norm(&x, &gamma, &beta, &mut stats, Mode::Train).unwrap(), 16)
    }));
    let g4 = random_param(&[4], 13);
    let b4 = random_param(&[4], 14);
    out.push(case("conv-bn-relu", BATCHNORM_TOLERANCE, &[&x, &k, &g4, &b4], &|| {
        let mut stats = BatchNormStats::new(4);
        let p = Conv2dParams::new((1, 1), Padding::uniform(1));
        weighted_sum(&conv_bn_relu(&x, &k, &g4, &b4, &mut stats, p, Mode::Train).unwrap(), 17)
    }));

    let logits = random_param(&[2, 6, 5], 15);
    let targets = vec![
        LabelSequence::from_indices(vec![0, 1]),
        LabelSequence::from_indices(vec![2, 2, 3]),
    ];
    out.push(case("ctc loss", PLAIN_TOLERANCE, &[&logits], &|| ctc_loss(&logits, &targets).unwrap()));

    let mut rng = RngSeed(20).rng();
    let block = DenseBlock::new(
        3,
        DenseBlockConfig {
            num_layers: 2,
            growth_rate: 2,
            ..DenseBlockConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    out.push(case("dense block", BATCHNORM_TOLERANCE, &[&x], &|| {
        weighted_sum(&block.forward(&x, Mode::Train).unwrap(), 18)
    }));

    let xa = random_param(&[2, 3, 8, 8], 16);
    let att = ResidualAttention::new(3, AttentionModuleConfig::with_stages(2), true, &mut rng).unwrap();
    let mut att_params: Vec<Tensor> = Vec::new();
    att.visit("a", &mut |_, s| {
        if let Slot::Param(t) = s {
            att_params.push(t.clone());
        }
    });
    let mut att_inputs: Vec<&Tensor> = vec![&xa];
    att_inputs.extend(att_params.iter());
    out.push(case("residual attention", BATCHNORM_TOLERANCE, &att_inputs, &|| {
        weighted_sum(&att.forward(&xa, Mode::Train).unwrap().output, 19)
    }));

    let model = Model::new(tiny_arch(), RngSeed(21)).unwrap();
    let images = random_param(&[2, 1, 32, 100], 17);
    let params: Vec<Tensor> = model.parameters().into_iter().map(|(_, t)| t).collect();
    let mut inputs: Vec<&Tensor> = params.iter().collect();
    inputs.push(&images);
    let labels = vec![
        LabelSequence::from_indices(vec![1, 2, 3]),
        LabelSequence::from_indices(vec![4, 4, 5, 6]),
    ];
    out.push(GradCase {
        name: "end-to-end ctc loss",
        error: max_grad_error(&inputs, 3, &|| {
            ctc_loss(&model.logits(&images, Mode::Train).unwrap(), &labels).unwrap()
        }),
        tolerance: BATCHNORM_TOLERANCE,
    });
    out
}
