#![allow(dead_code)]
pub mod ctccases;
pub mod gradcases;
pub mod modelcases;

use acnv::init::RngSeed;
use acnv::Tensor;
use rand::Rng;

/// Central-difference step. With f64 the truncation and rounding errors are
/// both around 1e-10 relative at this size.
pub const FD_STEP: f64 = 1e-6;

/// Relative error with a floor on the denominator so exact zeros compare
/// absolutely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    rel_error_floor(a, b, 1e-6)
}

pub fn rel_error_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Learnable tensor of standard-normal-ish values bounded away from zero,
/// so ReLU kinks and pooling ties stay out of finite-difference reach.
pub fn random_param(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngSeed(seed).rng();
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::parameter(shape, values).unwrap()
}

/// Random weights turning a tensor output into a scalar objective.
pub fn projection(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngSeed(seed).derive(99).rng();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out * w)` for a fixed random `w`.
pub fn weighted_sum(out: &Tensor, seed: u64) -> Tensor {
    out.mul(&projection(out.shape(), seed)).unwrap().sum()
}

/// Compares the backward gradient of `f` with central differences at up to
/// `per_input` coordinates of every input. Returns the worst relative error.
pub fn max_grad_error(inputs: &[&Tensor], per_input: usize, f: &dyn Fn() -> Tensor) -> f64 {
    for t in inputs {
        t.zero_grad();
    }
    f().backward().unwrap();
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    // Entries far below the largest gradient (a bias feeding batch norm has
    // a true gradient of zero) are compared against a scale-aware floor.
    let largest = analytic.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * largest).max(1e-6);
    let mut worst: f64 = 0.0;
    for (t, g) in inputs.iter().zip(&analytic) {
        let n = t.numel();
        let stride = (n / per_input.max(1)).max(1);
        for i in (0..n).step_by(stride).take(per_input) {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + FD_STEP;
            let up = f().item();
            t.data_mut()[i] = orig - FD_STEP;
            let down = f().item();
            t.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error_floor(g[i], numeric, floor));
        }
    }
    worst
}
