use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DdsError, Result};
use crate::tensor::Tensor;

/// A point in the shared latent space, tagged with the seed that drew it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl LatentCode {
    pub fn new(values: Vec<f64>, seed: u64) -> Self {
        Self { values, seed }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim], 0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.values.len()], self.values.clone()).expect("1-d latent")
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Standard-normal latent from a seeded ChaCha8 stream.
pub fn sample_latent(seed: u64, dim: usize) -> Result<LatentCode> {
    if dim == 0 {
        return Err(DdsError::InvalidArgument("latent dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(LatentCode::new(values, seed))
}

/// `base + norm * u` where `u` is a seeded uniformly random unit direction.
pub fn perturb_latent(base: &LatentCode, norm: f64, seed: u64) -> Result<LatentCode> {
    let dir = sample_latent(seed, base.dim())?;
    let len = dir.norm();
    let values = base
        .values
        .iter()
        .zip(&dir.values)
        .map(|(b, d)| b + norm * d / len)
        .collect();
    Ok(LatentCode::new(values, seed))
}
