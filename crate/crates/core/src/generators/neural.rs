//! Mini convolutional generator: dense `z -> [C0, 4, 4]`, then
//! `upsample -> conv3x3 -> activation` blocks doubling the resolution up to
//! the output side, with a tanh on the last block.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DdsError, Result};
use crate::tensor::{Tensor, Var};

pub const NEURAL_LATENT_DIM: usize = 32;
pub const NEURAL_LEAKY_SLOPE: f64 = 0.2;
const BASE_CHANNELS: usize = 32;
const MIN_CHANNELS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    weight: Arc<Tensor>,
    bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralGenerator {
    latent_dim: usize,
    size: usize,
    dense: Layer,
    blocks: Vec<Layer>,
}

/// Channel plan `[C0, C1, ..., 3]` for an output of side `size`.
fn channel_plan(size: usize) -> Result<Vec<usize>> {
    if size < 8 || !size.is_power_of_two() || size > 64 {
        return Err(DdsError::InvalidArgument(format!(
            "neural generator size must be a power of two in [8, 64], got {size}"
        )));
    }
    let blocks = (size / 4).trailing_zeros() as usize;
    let mut plan = vec![BASE_CHANNELS];
    for b in 0..blocks {
        if b + 1 == blocks {
            plan.push(3);
        } else {
            plan.push((plan[b] / 2).max(MIN_CHANNELS));
        }
    }
    Ok(plan)
}

impl NeuralGenerator {
    /// He-scaled Gaussian weights and small Gaussian biases from `seed`.
    pub fn seeded(seed: u64, latent_dim: usize, size: usize) -> Result<Self> {
        let plan = channel_plan(size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: &[usize], std: f64| {
            let normal = Normal::new(0.0, std).expect("valid std");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let dense = Layer {
            weight: Arc::new(draw(&[plan[0] * 16, latent_dim], (2.0 / latent_dim as f64).sqrt())),
            bias: draw(&[plan[0] * 16], 0.05),
        };
        let blocks = plan
            .windows(2)
            .map(|w| Layer {
                weight: Arc::new(draw(&[w[1], w[0], 3, 3], (2.0 / (w[0] * 9) as f64).sqrt())),
                bias: draw(&[w[1]], 0.05),
            })
            .collect();
        Ok(Self {
            latent_dim,
            size,
            dense,
            blocks,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Copy with seeded `N(0, scale^2)` noise added to every weight and bias.
    /// The noise draws depend only on `seed`, so output drift grows with
    /// `scale` along a fixed direction.
    pub fn perturbed(&self, seed: u64, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(DdsError::InvalidArgument(format!("perturbation scale {scale} must be >= 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |t: &Tensor| {
            let mut out = t.clone();
            for v in out.data_mut() {
                let eps: f64 = rand_distr::StandardNormal.sample(&mut rng);
                *v += scale * eps;
            }
            out
        };
        let mut layer = |l: &Layer| Layer {
            weight: Arc::new(jitter(&l.weight)),
            bias: jitter(&l.bias),
        };
        let dense = layer(&self.dense);
        let blocks = self.blocks.iter().map(&mut layer).collect();
        Ok(Self {
            latent_dim: self.latent_dim,
            size: self.size,
            dense,
            blocks,
        })
    }

    /// Image and the output of every block (the last one being the image).
    pub fn forward<'t>(&self, z: &Var<'t>) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let d = z.value().len();
        if d != self.latent_dim {
            return Err(DdsError::LatentDim {
                expected: self.latent_dim,
                actual: d,
            });
        }
        let c0 = self.dense.bias.len() / 16;
        let mut h = z
            .linear(&self.dense.weight, &self.dense.bias)?
            .reshape(&[c0, 4, 4])?
            .leaky_relu(NEURAL_LEAKY_SLOPE);
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let conv = h.upsample2x()?.conv2d(&block.weight, &block.bias, 1, 1)?;
            h = if i + 1 == self.blocks.len() {
                conv.tanh()
            } else {
                conv.leaky_relu(NEURAL_LEAKY_SLOPE)
            };
            hidden.push(h);
        }
        Ok((h, hidden))
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("dense.weight".to_string(), self.dense.weight.as_ref()),
            ("dense.bias".to_string(), &self.dense.bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.weight"), b.weight.as_ref()));
            out.push((format!("block{i}.bias"), &b.bias));
        }
        out
    }

    /// All weights as concatenated little-endian f64 values, in manifest order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.named_tensors().iter().flat_map(|(_, t)| t.to_le_bytes()).collect()
    }

    pub fn manifest(&self) -> WeightManifest {
        let mut offset = 0;
        let tensors = self
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name,
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                entry
            })
            .collect();
        WeightManifest {
            format: MANIFEST_FORMAT.to_string(),
            latent_dim: self.latent_dim,
            image_size: self.size,
            leaky_slope: NEURAL_LEAKY_SLOPE,
            tensors,
        }
    }

    /// Writes the flat weight file and its JSON shape manifest.
    pub fn save(&self, weights: &Path, manifest: &Path) -> Result<()> {
        fs::write(weights, self.to_bytes())?;
        fs::write(manifest, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    /// Loads weights, validating the manifest against the architecture.
    pub fn load(weights: &Path, manifest: &Path) -> Result<Self> {
        let manifest: WeightManifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        let bytes = fs::read(weights)?;
        Self::from_parts(&manifest, &bytes)
    }

    pub fn from_parts(manifest: &WeightManifest, bytes: &[u8]) -> Result<Self> {
        if manifest.format != MANIFEST_FORMAT {
            return Err(DdsError::Manifest(format!("unknown format '{}'", manifest.format)));
        }
        if !bytes.len().is_multiple_of(8) {
            return Err(DdsError::Manifest(format!("weight file length {} is not a multiple of 8", bytes.len())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let template = Self::seeded(0, manifest.latent_dim, manifest.image_size)?.manifest();
        if template.tensors.len() != manifest.tensors.len() {
            return Err(DdsError::Manifest(format!(
                "expected {} tensors, manifest lists {}",
                template.tensors.len(),
                manifest.tensors.len()
            )));
        }
        let mut loaded = Vec::with_capacity(manifest.tensors.len());
        for (want, got) in template.tensors.iter().zip(&manifest.tensors) {
            if want.name != got.name || want.shape != got.shape || want.offset != got.offset {
                return Err(DdsError::Manifest(format!(
                    "tensor '{}' {:?}@{} does not match expected '{}' {:?}@{}",
                    got.name, got.shape, got.offset, want.name, want.shape, want.offset
                )));
            }
            let len: usize = got.shape.iter().product();
            let slice = values.get(got.offset..got.offset + len).ok_or_else(|| {
                DdsError::Manifest(format!("weight file too short for tensor '{}'", got.name))
            })?;
            loaded.push(Tensor::new(&got.shape, slice.to_vec())?);
        }
        let total: usize = template.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if total != values.len() {
            return Err(DdsError::Manifest(format!(
                "weight file holds {} values, manifest describes {total}",
                values.len()
            )));
        }

        let mut it = loaded.into_iter();
        let mut next_layer = || Layer {
            weight: Arc::new(it.next().expect("weight")),
            bias: it.next().expect("bias"),
        };
        let dense = next_layer();
        let blocks = (0..(manifest.tensors.len() - 2) / 2).map(|_| next_layer()).collect();
        Ok(Self {
            latent_dim: manifest.latent_dim,
            size: manifest.image_size,
            dense,
            blocks,
        })
    }
}

const MANIFEST_FORMAT: &str = "dds-neural-generator-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub latent_dim: usize,
    pub image_size: usize,
    pub leaky_slope: f64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weight file, in f64 values.
    pub offset: usize,
}
