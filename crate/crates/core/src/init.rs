//! Parameter initialization and seeded randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Seed for every random stream in the crate. Equal seeds give equal
/// initializations and equal synthetic data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed, e.g. one per dataset shard or per sample.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finalizer over the pair
        let mut z = self.0 ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Normal draws with mean zero and standard deviation `sqrt(2 / fan_in)`.
pub fn msra_values(len: usize, fan_in: usize, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("msra init needs fan_in >= 1".into()));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..len).map(|_| normal.sample(rng)).collect())
}

/// Learnable tensor of `shape` with msra-initialized values.
pub fn init_msra(shape: &[usize], fan_in: usize, rng: &mut impl rand::Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::parameter(shape, msra_values(n, fan_in, rng)?)
}

/// Learnable tensor of zeros, used for biases and batchnorm shifts.
pub fn init_zeros(shape: &[usize]) -> Tensor {
    Tensor::parameter(shape, vec![0.0; shape.iter().product()]).expect("consistent shape")
}

/// Learnable tensor of ones, used for batchnorm scales.
pub fn init_ones(shape: &[usize]) -> Tensor {
    Tensor::parameter(shape, vec![1.0; shape.iter().product()]).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msra_std_matches_fan_in() {
        let mut rng = RngSeed(7).rng();
        let v = msra_values(100_000, 8, &mut rng).unwrap();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd - 0.5).abs() < 0.025, "std {sd}");
        assert!(m.abs() < 0.01, "mean {m}");
    }

    #[test]
    fn same_seed_same_draws() {
        let a = msra_values(64, 9, &mut RngSeed(3).rng()).unwrap();
        let b = msra_values(64, 9, &mut RngSeed(3).rng()).unwrap();
        assert_eq!(a, b);
        let c = msra_values(64, 9, &mut RngSeed(4).rng()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biases_are_zero() {
        assert!(init_zeros(&[5]).to_vec().iter().all(|&x| x == 0.0));
        assert!(init_msra(&[2, 2], 0, &mut RngSeed(0).rng()).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(42);
        assert_ne!(s.derive(0), s.derive(1));
        assert_eq!(s.derive(5), s.derive(5));
    }
}
