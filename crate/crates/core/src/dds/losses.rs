use crate::error::{DdsError, Result};
use crate::features::{Backbone, FeatureStack};
use crate::generators::{DomainGenerator, GeneratorPair};
use crate::segmentation::{build_mask_pyramid, Mask, MaskPyramid};
use crate::tensor::{ensure_same_shape, Tensor, Var};

use super::{CrossoverNorm, LossWeights};

/// Cut-and-paste composite `x_s ⊗ y_s + x_t ⊗ ȳ_t`.
pub fn naive_crossover(x_s: &Tensor, y_s: &Mask, x_t: &Tensor, y_t_bar: &Mask) -> Result<Tensor> {
    ensure_same_shape("naive_crossover", x_s.shape(), x_t.shape())?;
    let c = x_s.chw()?[0];
    let (ms, mt) = (y_s.broadcast(c), y_t_bar.broadcast(c));
    ensure_same_shape("naive_crossover", x_s.shape(), ms.shape())?;
    ensure_same_shape("naive_crossover", x_t.shape(), mt.shape())?;
    Tensor::new(
        x_s.shape(),
        (0..x_s.len())
            .map(|i| x_s.data()[i] * ms.data()[i] + x_t.data()[i] * mt.data()[i])
            .collect(),
    )
}

/// `Σ_j ‖(F_j − R_j) ⊙ λ_j‖² / N_j` for live features `F_j`, fixed
/// reference features `R_j` and mask levels `λ_j`.
pub fn perceptual_loss<'t>(features: &FeatureStack<'t>, reference: &[Tensor], pyramid: &MaskPyramid) -> Result<Var<'t>> {
    if features.len() != reference.len() || features.len() != pyramid.len() {
        return Err(DdsError::PyramidMismatch {
            pyramid: pyramid.len(),
            features: features.len(),
        });
    }
    let first = features
        .layers
        .first()
        .ok_or_else(|| DdsError::InvalidArgument("perceptual loss over no layers".into()))?;
    let terms = features
        .layers
        .iter()
        .zip(reference)
        .zip(&pyramid.levels)
        .map(|((f, r), m)| Ok((f.sub_const(r)?.mul_const(m)?.mean_square(), 1.0)))
        .collect::<Result<Vec<_>>>()?;
    first.tape().weighted_sum(&terms)
}

/// [`perceptual_loss`] between a live image and a fixed one under `backbone`.
pub fn perceptual_loss_images<'t>(
    backbone: &Backbone,
    image: &Var<'t>,
    reference: &Tensor,
    pyramid: &MaskPyramid,
) -> Result<Var<'t>> {
    let feats = backbone.extract(image)?;
    perceptual_loss(&feats, &backbone.extract_values(reference)?, pyramid)
}

/// `mean(((image − reference) ⊙ mask)²)` over all pixels and channels.
pub fn masked_pixel_mse<'t>(image: &Var<'t>, reference: &Tensor, mask_image: &Tensor) -> Result<Var<'t>> {
    Ok(image.sub_const(reference)?.mul_const(mask_image)?.mean_square())
}

/// Masked perceptual plus masked pixel loss of `generator` at `z` against
/// `reference` inside `mask`.
pub fn domain_loss<'t>(
    generator: &DomainGenerator,
    backbone: &Backbone,
    z: &Var<'t>,
    reference: &Tensor,
    mask: &Mask,
) -> Result<Var<'t>> {
    let image = generator.generate(z)?;
    let pyramid = build_mask_pyramid(mask, &backbone.spec().tap_shapes(generator.output_shape())?)?;
    let perceptual = perceptual_loss_images(backbone, &image, reference, &pyramid)?;
    perceptual.add(&masked_pixel_mse(&image, reference, &mask.broadcast(3))?)
}

pub(super) fn crossover_distance<'t>(splice: &Var<'t>, crossover: &Tensor, norm: CrossoverNorm) -> Result<Var<'t>> {
    let diff = splice.sub_const(crossover)?;
    Ok(match norm {
        CrossoverNorm::Mse => diff.mean_square(),
        CrossoverNorm::L2 => diff.mul(&diff)?.sum().sqrt(),
    })
}

/// Distance between the spliced renderings `G_s(z) ⊗ y_s + G_t(z) ⊗ ȳ_t`
/// and the naive crossover image.
pub fn crossover_loss<'t>(
    pair: &GeneratorPair,
    z: &Var<'t>,
    y_s: &Mask,
    y_t_bar: &Mask,
    crossover: &Tensor,
    norm: CrossoverNorm,
) -> Result<Var<'t>> {
    let img_s = pair.source.generate(z)?;
    let img_t = pair.target.generate(z)?;
    let splice = img_s.mul_const(&y_s.broadcast(3))?.add(&img_t.mul_const(&y_t_bar.broadcast(3))?)?;
    crossover_distance(&splice, crossover, norm)
}

/// `α L_s + β L_t + γ L_c`.
pub fn combine_losses<'t>(source: &Var<'t>, target: &Var<'t>, crossover: &Var<'t>, w: LossWeights) -> Result<Var<'t>> {
    source
        .tape()
        .weighted_sum(&[(*source, w.source), (*target, w.target), (*crossover, w.crossover)])
}
