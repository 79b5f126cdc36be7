//! Frozen convolutional feature extractors and feature stacks.
//!
//! Backbones are stacks of 3x3 zero-padded convolutions with leaky-ReLU
//! activations whose weights are seeded He-scaled Gaussian draws. A subset
//! of layers are taps; their post-activation outputs form the feature stack
//! consumed by the masked perceptual loss.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DdsError, Result};
use crate::generators::{DomainGenerator, LatentCode};
use crate::metrics::FeatureSample;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_BACKBONE: &str = "default";
pub const BACKBONE_LEAKY_SLOPE: f64 = 0.2;
const BIAS_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub tap: bool,
}

const fn layer(out_channels: usize, stride: usize, tap: bool) -> ConvLayerSpec {
    ConvLayerSpec {
        out_channels,
        kernel: 3,
        stride,
        tap,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub name: String,
    pub layers: Vec<ConvLayerSpec>,
    pub weight_seed: u64,
}

impl BackboneSpec {
    /// Number of tap layers (J).
    pub fn tap_count(&self) -> usize {
        self.layers.iter().filter(|l| l.tap).count()
    }

    /// Tap shapes `[C, h, w]` for a `[3, H, W]` input.
    pub fn tap_shapes(&self, input: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        self.check_input(input)?;
        let [_, mut h, mut w] = input;
        let mut shapes = Vec::new();
        for l in &self.layers {
            h = (h + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
            w = (w + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
            if l.tap {
                shapes.push([l.out_channels, h, w]);
            }
        }
        Ok(shapes)
    }

    /// Element counts `N_j` of each tap for a `[3, H, W]` input.
    pub fn tap_sizes(&self, input: [usize; 3]) -> Result<Vec<usize>> {
        Ok(self.tap_shapes(input)?.iter().map(|s| s.iter().product()).collect())
    }

    fn downsampling(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Accepts `[3, H, W]` with `H == W` divisible by the total stride.
    pub fn check_input(&self, input: [usize; 3]) -> Result<()> {
        let [c, h, w] = input;
        let f = self.downsampling();
        if c != 3 || h != w || h == 0 || h % f != 0 {
            return Err(DdsError::ShapeMismatch {
                op: "backbone input",
                left: input.to_vec(),
                right: vec![3, f, f],
            });
        }
        Ok(())
    }
}

/// Toy backbones with distinct depth/width profiles.
pub fn backbone_catalog() -> Vec<BackboneSpec> {
    vec![
        BackboneSpec {
            name: "shallow-wide".into(),
            layers: vec![layer(32, 1, true), layer(64, 2, true), layer(96, 2, true)],
            weight_seed: 0x5eed_0002,
        },
        BackboneSpec {
            name: DEFAULT_BACKBONE.into(),
            layers: vec![layer(16, 1, true), layer(16, 1, true), layer(32, 2, true), layer(64, 2, true)],
            weight_seed: 0x5eed_0001,
        },
        BackboneSpec {
            name: "deep-narrow".into(),
            layers: vec![
                layer(8, 1, false),
                layer(8, 1, true),
                layer(12, 2, false),
                layer(12, 1, true),
                layer(16, 2, false),
                layer(16, 1, true),
                layer(24, 2, true),
            ],
            weight_seed: 0x5eed_0003,
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
struct ConvWeights {
    weight: Arc<Tensor>,
    bias: Tensor,
}

/// A backbone with materialized frozen weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    spec: BackboneSpec,
    weights: Vec<ConvWeights>,
}

impl Backbone {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        if spec.tap_count() == 0 {
            return Err(DdsError::InvalidArgument(format!("backbone '{}' has no tap layers", spec.name)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.weight_seed);
        let mut in_ch = 3;
        let mut weights = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let fan_in = in_ch * l.kernel * l.kernel;
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let weight = Tensor::from_fn(&[l.out_channels, in_ch, l.kernel, l.kernel], |_| he.sample(&mut rng));
            let bn = Normal::new(0.0, BIAS_STD).expect("valid std");
            let bias = Tensor::from_fn(&[l.out_channels], |_| bn.sample(&mut rng));
            weights.push(ConvWeights {
                weight: Arc::new(weight),
                bias,
            });
            in_ch = l.out_channels;
        }
        Ok(Self { spec, weights })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let spec = backbone_catalog()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| DdsError::UnknownBackbone(name.to_string()))?;
        Self::new(spec)
    }

    pub fn default_backbone() -> Self {
        Self::by_name(DEFAULT_BACKBONE).expect("default backbone in catalog")
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Tap activations for `image`, differentiable with respect to it.
    pub fn extract<'t>(&self, image: &Var<'t>) -> Result<FeatureStack<'t>> {
        self.spec.check_input(image.value().chw()?)?;
        let mut h = *image;
        let mut layers = Vec::with_capacity(self.spec.tap_count());
        for (l, w) in self.spec.layers.iter().zip(&self.weights) {
            h = h
                .conv2d(&w.weight, &w.bias, l.stride, l.kernel / 2)?
                .leaky_relu(BACKBONE_LEAKY_SLOPE);
            if l.tap {
                layers.push(h);
            }
        }
        Ok(FeatureStack { layers })
    }

    /// Tap activations as plain tensors.
    pub fn extract_values(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let x = tape.constant(image.clone())?;
        Ok(self.extract(&x)?.values())
    }

    /// Global-average-pooled last tap: one embedding vector per image.
    pub fn pooled_embedding(&self, image: &Tensor) -> Result<Vec<f64>> {
        let feats = self.extract_values(image)?;
        let last = feats.last().expect("at least one tap");
        let [c, h, w] = last.chw()?;
        Ok((0..c)
            .map(|ch| last.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
            .collect())
    }

    /// Last-tap feature vectors at every spatial position of one image, as
    /// a sample set (`h*w` samples of dimension `C`).
    pub fn spatial_samples(&self, image: &Tensor) -> Result<FeatureSample> {
        let feats = self.extract_values(image)?;
        let last = feats.last().expect("at least one tap");
        let [c, h, w] = last.chw()?;
        let rows = (0..h * w)
            .map(|p| (0..c).map(|ch| last.data()[ch * h * w + p]).collect())
            .collect();
        FeatureSample::new(rows)
    }

    /// Every weight and bias as little-endian f64 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.weights
            .iter()
            .flat_map(|w| {
                let mut b = w.weight.to_le_bytes();
                b.extend(w.bias.to_le_bytes());
                b
            })
            .collect()
    }
}

/// Per-layer activations `F_j` recorded on a tape.
#[derive(Clone, Debug)]
pub struct FeatureStack<'t> {
    pub layers: Vec<Var<'t>>,
}

impl<'t> FeatureStack<'t> {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.shape()).collect()
    }

    /// `N_j`: number of scalars in each layer.
    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.value().len()).collect()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.layers.iter().map(|l| l.value().as_ref().clone()).collect()
    }
}

/// Hidden activations of `generator` at `z` as a feature stack (block
/// outputs for neural generators, blob fields for analytic ones).
pub fn generator_intermediate_features<'t>(
    generator: &DomainGenerator,
    z: &Var<'t>,
) -> Result<FeatureStack<'t>> {
    let (_, hidden) = generator.generate_with_hidden(z)?;
    Ok(FeatureStack { layers: hidden })
}

/// Plain-valued variant of [`generator_intermediate_features`].
pub fn generator_intermediate_values(generator: &DomainGenerator, z: &LatentCode) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let zv = tape.constant(z.to_tensor())?;
    Ok(generator_intermediate_features(generator, &zv)?.values())
}

/// `[C, h, w]` shapes of a generator's hidden layers.
pub fn generator_intermediate_shapes(generator: &DomainGenerator) -> Result<Vec<[usize; 3]>> {
    let z = LatentCode::zeros(generator.latent_dim());
    generator_intermediate_values(generator, &z)?
        .iter()
        .map(|t| t.chw())
        .collect()
}
