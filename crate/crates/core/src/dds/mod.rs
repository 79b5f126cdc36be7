//! Dual-domain synthesis: search the shared latent space for a code whose
//! source rendering matches the source image inside the source mask, whose
//! target rendering matches the target image outside the target mask, and
//! whose spliced renderings match the naive cut-and-paste crossover.
//!
//! Only the latent code is optimized. Generators, feature extractors and the
//! reference images stay fixed for the whole run.

mod config;
mod losses;

pub use config::{CrossoverNorm, DdsConfig, FeatureSourceKind, InitMode, LossWeights};
pub use losses::{
    combine_losses, crossover_loss, domain_loss, masked_pixel_mse, naive_crossover, perceptual_loss,
    perceptual_loss_images,
};

use std::collections::BTreeSet;

use crate::error::{DdsError, Result};
use crate::features::{generator_intermediate_shapes, generator_intermediate_values, Backbone, FeatureStack};
use crate::generators::{sample_latent, DomainGenerator, GeneratorPair, LatentCode};
use crate::segmentation::{build_mask_pyramid, Mask, MaskPyramid};
use crate::tensor::{adam_step, AdamState, Tape, Tensor, Var};

/// Where the perceptual features `F_j` come from.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSource {
    Backbone(Backbone),
    /// The generator's own hidden activations at the latent being compared.
    GeneratorIntermediate,
}

impl FeatureSource {
    pub fn from_config(config: &DdsConfig) -> Result<Self> {
        Ok(match config.feature_source {
            FeatureSourceKind::Backbone => Self::Backbone(Backbone::by_name(&config.backbone)?),
            FeatureSourceKind::GeneratorIntermediate => Self::GeneratorIntermediate,
        })
    }

    fn layer_shapes(&self, generator: &DomainGenerator) -> Result<Vec<[usize; 3]>> {
        match self {
            Self::Backbone(b) => b.spec().tap_shapes(generator.output_shape()),
            Self::GeneratorIntermediate => generator_intermediate_shapes(generator),
        }
    }

    fn reference_features(&self, generator: &DomainGenerator, z: &LatentCode, image: &Tensor) -> Result<Vec<Tensor>> {
        match self {
            Self::Backbone(b) => b.extract_values(image),
            Self::GeneratorIntermediate => generator_intermediate_values(generator, z),
        }
    }

    /// Renders `generator` at `z` and extracts its features in one pass.
    fn render<'t>(&self, generator: &DomainGenerator, z: &Var<'t>) -> Result<(Var<'t>, FeatureStack<'t>)> {
        match self {
            Self::Backbone(b) => {
                let image = generator.generate(z)?;
                let feats = b.extract(&image)?;
                Ok((image, feats))
            }
            Self::GeneratorIntermediate => {
                let (image, hidden) = generator.generate_with_hidden(z)?;
                Ok((image, FeatureStack { layers: hidden }))
            }
        }
    }
}

/// The fixed inputs of one synthesis: reference latents, the two domain
/// images and their part masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub z_source: LatentCode,
    pub z_target: LatentCode,
    pub x_s: Tensor,
    pub x_t: Tensor,
    pub y_s: Mask,
    pub y_t: Mask,
}

impl Scene {
    /// Both images rendered from the same latent.
    pub fn paired(pair: &GeneratorPair, z_star: &LatentCode, y_s: Mask, y_t: Mask) -> Result<Self> {
        Self::unpaired(pair, z_star, z_star, y_s, y_t)
    }

    pub fn unpaired(
        pair: &GeneratorPair,
        z_source: &LatentCode,
        z_target: &LatentCode,
        y_s: Mask,
        y_t: Mask,
    ) -> Result<Self> {
        let x_s = pair.source.image(z_source)?;
        let x_t = pair.target.image(z_target)?;
        let n = pair.image_size();
        for m in [&y_s, &y_t] {
            if (m.height(), m.width()) != (n, n) {
                return Err(DdsError::ShapeMismatch {
                    op: "scene mask",
                    left: vec![n, n],
                    right: vec![m.height(), m.width()],
                });
            }
        }
        Ok(Self {
            z_source: z_source.clone(),
            z_target: z_target.clone(),
            x_s,
            x_t,
            y_s,
            y_t,
        })
    }

    /// Binary complement of the target mask.
    pub fn y_t_bar(&self) -> Mask {
        self.y_t.complement()
    }

    /// `x_s ⊗ y_s + x_t ⊗ ȳ_t`.
    pub fn crossover(&self) -> Result<Tensor> {
        naive_crossover(&self.x_s, &self.y_s, &self.x_t, &self.y_t_bar())
    }
}

struct DomainTerm<'a> {
    generator: &'a DomainGenerator,
    reference: Tensor,
    mask_image: Tensor,
    pyramid: MaskPyramid,
    reference_features: Vec<Tensor>,
}

impl<'a> DomainTerm<'a> {
    fn new(
        generator: &'a DomainGenerator,
        features: &FeatureSource,
        z_ref: &LatentCode,
        reference: &Tensor,
        mask: &Mask,
    ) -> Result<Self> {
        let pyramid = build_mask_pyramid(mask, &features.layer_shapes(generator)?)?;
        Ok(Self {
            generator,
            reference: reference.clone(),
            mask_image: mask.broadcast(3),
            pyramid,
            reference_features: features.reference_features(generator, z_ref, reference)?,
        })
    }

    fn loss<'t>(&self, image: &Var<'t>, feats: &FeatureStack<'t>) -> Result<Var<'t>> {
        let perceptual = perceptual_loss(feats, &self.reference_features, &self.pyramid)?;
        let pixel = masked_pixel_mse(image, &self.reference, &self.mask_image)?;
        perceptual.add(&pixel)
    }
}

/// Loss values recorded on a tape for one latent.
#[derive(Clone, Debug)]
pub struct LossTerms<'t> {
    pub source: Var<'t>,
    pub target: Var<'t>,
    pub crossover: Var<'t>,
    pub total: Var<'t>,
    pub source_image: Var<'t>,
    pub target_image: Var<'t>,
}

/// A scene bound to a generator pair and feature source, with everything
/// that does not depend on the optimized latent precomputed.
pub struct DdsProblem<'a> {
    features: &'a FeatureSource,
    source: DomainTerm<'a>,
    target: DomainTerm<'a>,
    crossover_image: Tensor,
    y_s_image: Tensor,
    y_t_bar_image: Tensor,
    weights: LossWeights,
    crossover_norm: CrossoverNorm,
}

impl<'a> DdsProblem<'a> {
    pub fn new(
        pair: &'a GeneratorPair,
        features: &'a FeatureSource,
        scene: &Scene,
        weights: LossWeights,
        crossover_norm: CrossoverNorm,
    ) -> Result<Self> {
        let y_t_bar = scene.y_t_bar();
        Ok(Self {
            features,
            source: DomainTerm::new(&pair.source, features, &scene.z_source, &scene.x_s, &scene.y_s)?,
            target: DomainTerm::new(&pair.target, features, &scene.z_target, &scene.x_t, &y_t_bar)?,
            crossover_image: scene.crossover()?,
            y_s_image: scene.y_s.broadcast(3),
            y_t_bar_image: y_t_bar.broadcast(3),
            weights,
            crossover_norm,
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    /// `L_s`, `L_t`, `L_c` and `α L_s + β L_t + γ L_c` at `z`.
    pub fn evaluate<'t>(&self, z: &Var<'t>) -> Result<LossTerms<'t>> {
        let (img_s, feats_s) = self.features.render(self.source.generator, z)?;
        let (img_t, feats_t) = self.features.render(self.target.generator, z)?;
        let source = self.source.loss(&img_s, &feats_s)?;
        let target = self.target.loss(&img_t, &feats_t)?;
        let splice = img_s.mul_const(&self.y_s_image)?.add(&img_t.mul_const(&self.y_t_bar_image)?)?;
        let crossover = losses::crossover_distance(&splice, &self.crossover_image, self.crossover_norm)?;
        let total = combine_losses(&source, &target, &crossover, self.weights)?;
        Ok(LossTerms {
            source,
            target,
            crossover,
            total,
            source_image: img_s,
            target_image: img_t,
        })
    }

    /// Loss values and latent gradient of the total loss.
    pub fn value_and_gradient(&self, z: &LatentCode) -> Result<(LossRow, Tensor)> {
        let tape = Tape::new();
        let zv = tape.leaf(z.to_tensor())?;
        let terms = self.evaluate(&zv)?;
        let row = LossRow::from_terms(0, &terms);
        let grad = tape.backward(&terms.total)?.get(&zv);
        Ok((row, grad))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    /// 1-based; row `i` holds the losses evaluated before the `i`-th update.
    pub iteration: usize,
    pub source: f64,
    pub target: f64,
    pub crossover: f64,
    pub total: f64,
}

impl LossRow {
    fn from_terms(iteration: usize, t: &LossTerms<'_>) -> Self {
        Self {
            iteration,
            source: t.source.item(),
            target: t.target.item(),
            crossover: t.crossover.item(),
            total: t.total.item(),
        }
    }

    fn is_finite(&self) -> bool {
        [self.source, self.target, self.crossover, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Renderings after `iteration` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub source_image: Tensor,
    pub target_image: Tensor,
}

/// Pooled backbone embedding of the target rendering after `iteration`
/// updates; batches of these feed FID-vs-iteration curves.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub iteration: usize,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub losses: Vec<LossRow>,
    pub snapshots: Vec<Snapshot>,
    pub probes: Vec<Probe>,
    pub initial_latent: LatentCode,
    pub final_latent: LatentCode,
    /// `G_t` at the initial latent.
    pub initial_image: Tensor,
    /// The dual-domain image `G_t(ẑ)`.
    pub final_image: Tensor,
    pub final_source_image: Tensor,
}

impl RunRecord {
    pub fn iterations(&self) -> usize {
        self.losses.len()
    }

    pub fn first_loss(&self) -> Option<&LossRow> {
        self.losses.first()
    }

    pub fn last_loss(&self) -> Option<&LossRow> {
        self.losses.last()
    }
}

/// Mixed into the run seed so random initializations never coincide with
/// instance latents drawn from the same integer seed.
const INIT_SEED_STREAM: u64 = 0x1417_0000_0000_0000;

/// Starting latent of a run.
pub fn initial_latent(config: &DdsConfig, scene: &Scene, dim: usize) -> Result<LatentCode> {
    match config.init {
        InitMode::Random => sample_latent(config.seed ^ INIT_SEED_STREAM, dim),
        InitMode::FromZStar => Ok(scene.z_target.clone()),
    }
}

/// Builds the feature source named by `config` and runs [`run_dds_with`].
pub fn run_dds(config: &DdsConfig, pair: &GeneratorPair, scene: &Scene) -> Result<RunRecord> {
    let features = FeatureSource::from_config(config)?;
    let probe_backbone = match &features {
        FeatureSource::Backbone(b) => b.clone(),
        FeatureSource::GeneratorIntermediate => Backbone::by_name(&config.backbone)?,
    };
    run_dds_with(config, pair, scene, &features, &probe_backbone)
}

/// Adam on the latent for `config.max_iterations` steps. `probe_backbone`
/// embeds the target rendering at every probe iteration.
pub fn run_dds_with(
    config: &DdsConfig,
    pair: &GeneratorPair,
    scene: &Scene,
    features: &FeatureSource,
    probe_backbone: &Backbone,
) -> Result<RunRecord> {
    config.validate()?;
    let problem = DdsProblem::new(pair, features, scene, config.weights, config.crossover_norm)?;
    let dim = pair.latent_dim();
    let initial_latent = initial_latent(config, scene, dim)?;

    let snapshot_at: BTreeSet<usize> = config.snapshot_iterations.iter().copied().collect();
    let probe_every = config.fid_probe_every.filter(|&k| k > 0);
    let wants_probe = |i: usize| probe_every.is_some_and(|k| i.is_multiple_of(k) || i == config.max_iterations);

    let mut z = initial_latent.to_tensor();
    let mut adam = AdamState::new(&[dim]);
    let mut losses = Vec::with_capacity(config.max_iterations);
    let mut snapshots = Vec::new();
    let mut probes = Vec::new();
    let mut initial_image = None;

    for i in 0..config.max_iterations {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone())?;
        let terms = problem.evaluate(&zv)?;
        let row = LossRow::from_terms(i + 1, &terms);
        if !row.is_finite() {
            return Err(DdsError::NonFiniteLoss {
                iteration: i + 1,
                source_loss: row.source,
                target_loss: row.target,
                crossover_loss: row.crossover,
            });
        }
        let target_image = terms.target_image.value();
        if i == 0 {
            initial_image = Some(target_image.as_ref().clone());
        }
        if snapshot_at.contains(&i) {
            snapshots.push(Snapshot {
                iteration: i,
                source_image: terms.source_image.value().as_ref().clone(),
                target_image: target_image.as_ref().clone(),
            });
        }
        if wants_probe(i) {
            probes.push(Probe {
                iteration: i,
                embedding: probe_backbone.pooled_embedding(&target_image)?,
            });
        }
        let grad = tape.backward(&terms.total)?.get(&zv);
        if !grad.is_finite() {
            return Err(DdsError::NonFiniteLoss {
                iteration: i + 1,
                source_loss: row.source,
                target_loss: row.target,
                crossover_loss: row.crossover,
            });
        }
        losses.push(row);
        let (next, state) = adam_step(&z, &grad, &adam, config.lr)?;
        z = next;
        adam = state;
    }

    let final_latent = LatentCode::new(z.into_data(), initial_latent.seed);
    let (final_source_image, final_image) = pair.images(&final_latent)?;
    let n = config.max_iterations;
    if snapshot_at.contains(&n) {
        snapshots.push(Snapshot {
            iteration: n,
            source_image: final_source_image.clone(),
            target_image: final_image.clone(),
        });
    }
    if wants_probe(n) {
        probes.push(Probe {
            iteration: n,
            embedding: probe_backbone.pooled_embedding(&final_image)?,
        });
    }
    Ok(RunRecord {
        losses,
        snapshots,
        probes,
        initial_image: initial_image.unwrap_or_else(|| final_image.clone()),
        initial_latent,
        final_latent,
        final_image,
        final_source_image,
    })
}

/// Mean squared difference between two images restricted to a mask,
/// averaged over the masked pixels (all channels). Zero for an empty mask.
pub fn region_mse(a: &Tensor, b: &Tensor, mask: &Mask) -> Result<f64> {
    crate::tensor::ensure_same_shape("region_mse", a.shape(), b.shape())?;
    let m = mask.broadcast(a.chw()?[0]);
    crate::tensor::ensure_same_shape("region_mse", a.shape(), m.shape())?;
    let weight: f64 = m.sum();
    if weight == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .zip(m.data())
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum();
    Ok(sum / weight)
}
