//! Pose-aligned generator pairs over a shared latent space.

mod analytic;
mod latent;
mod neural;

pub use analytic::{
    AnalyticGenerator, AnalyticStyle, BlobGeometry, ANALYTIC_LATENT_DIM, BLOB_CENTER_RANGES, BLOB_COUNT,
    BLOB_RADIUS_RANGE,
};
pub use latent::{perturb_latent, sample_latent, LatentCode};
pub use neural::{NeuralGenerator, TensorEntry, WeightManifest, NEURAL_LATENT_DIM};

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_IMAGE_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Analytic,
    Neural,
}

/// A frozen differentiable map from latent code to a `[3, n, n]` image in
/// `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainGenerator {
    Analytic(AnalyticGenerator),
    Neural(NeuralGenerator),
}

impl DomainGenerator {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            Self::Analytic(_) => GeneratorKind::Analytic,
            Self::Neural(_) => GeneratorKind::Neural,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Analytic(_) => ANALYTIC_LATENT_DIM,
            Self::Neural(g) => g.latent_dim(),
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            Self::Analytic(g) => g.size(),
            Self::Neural(g) => g.size(),
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let n = self.image_size();
        [3, n, n]
    }

    pub fn generate<'t>(&self, z: &Var<'t>) -> Result<Var<'t>> {
        match self {
            Self::Analytic(g) => {
                g.check_dim(z.value().len())?;
                g.render(z)
            }
            Self::Neural(g) => Ok(g.forward(z)?.0),
        }
    }

    /// Image together with the generator's hidden activations: block outputs
    /// for neural generators, the blob fields for analytic ones.
    pub fn generate_with_hidden<'t>(&self, z: &Var<'t>) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        match self {
            Self::Analytic(g) => {
                g.check_dim(z.value().len())?;
                let fields = g.blob_fields(z)?;
                Ok((g.render(z)?, fields.to_vec()))
            }
            Self::Neural(g) => g.forward(z),
        }
    }

    /// Evaluates the generator off-tape.
    pub fn image(&self, z: &LatentCode) -> Result<Tensor> {
        let tape = Tape::new();
        let zv = tape.constant(z.to_tensor())?;
        Ok(self.generate(&zv)?.value().as_ref().clone())
    }

    /// Byte serialization of everything that determines the generator's output.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Self::Analytic(g) => g.to_bytes(),
            Self::Neural(g) => g.to_bytes(),
        }
    }
}

/// Source and target generators accepting the same latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPair {
    pub source: DomainGenerator,
    pub target: DomainGenerator,
}

impl GeneratorPair {
    pub fn latent_dim(&self) -> usize {
        self.source.latent_dim()
    }

    pub fn image_size(&self) -> usize {
        self.source.image_size()
    }

    pub fn kind(&self) -> GeneratorKind {
        self.source.kind()
    }

    /// The analytic pair: style A as source, style B as target.
    pub fn analytic(size: usize) -> Result<Self> {
        Ok(Self {
            source: DomainGenerator::Analytic(AnalyticGenerator::new(AnalyticStyle::A, size)?),
            target: DomainGenerator::Analytic(AnalyticGenerator::new(AnalyticStyle::B, size)?),
        })
    }

    /// `(G_s, G_t)` images for one latent.
    pub fn images(&self, z: &LatentCode) -> Result<(Tensor, Tensor)> {
        Ok((self.source.image(z)?, self.target.image(z)?))
    }
}

/// Seeded neural pair: the target is the source with every weight perturbed
/// by `N(0, perturbation_scale^2)` noise.
pub fn make_neural_pair(seed: u64, perturbation_scale: f64) -> Result<GeneratorPair> {
    make_neural_pair_sized(seed, perturbation_scale, DEFAULT_IMAGE_SIZE)
}

pub fn make_neural_pair_sized(seed: u64, perturbation_scale: f64, size: usize) -> Result<GeneratorPair> {
    let source = NeuralGenerator::seeded(seed, NEURAL_LATENT_DIM, size)?;
    let target = source.perturbed(seed ^ 0x9e37_79b9_7f4a_7c15, perturbation_scale)?;
    Ok(GeneratorPair {
        source: DomainGenerator::Neural(source),
        target: DomainGenerator::Neural(target),
    })
}
