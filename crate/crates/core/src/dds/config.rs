use serde::{Deserialize, Serialize};

use crate::error::{DdsError, Result};
use crate::features::DEFAULT_BACKBONE;

/// Coefficients of the source, target and crossover terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub source: f64,
    pub target: f64,
    pub crossover: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            source: 0.9,
            target: 1.0,
            crossover: 0.5,
        }
    }
}

/// Distance used by the crossover term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossoverNorm {
    /// Mean squared difference.
    #[default]
    Mse,
    /// Euclidean norm of the difference.
    L2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSourceKind {
    #[default]
    Backbone,
    GeneratorIntermediate,
}

/// Starting point of the latent search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// A fresh standard-normal draw from the run seed.
    #[default]
    Random,
    /// The target reference latent.
    FromZStar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdsConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub max_iterations: usize,
    pub backbone: String,
    pub feature_source: FeatureSourceKind,
    pub crossover_norm: CrossoverNorm,
    pub init: InitMode,
    /// Iteration counts (number of updates applied) at which renderings are kept.
    pub snapshot_iterations: Vec<usize>,
    /// Embed the target rendering every this many updates.
    pub fid_probe_every: Option<usize>,
    pub seed: u64,
}

impl Default for DdsConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 0.01,
            max_iterations: 1000,
            backbone: DEFAULT_BACKBONE.to_string(),
            feature_source: FeatureSourceKind::Backbone,
            crossover_norm: CrossoverNorm::Mse,
            init: InitMode::Random,
            snapshot_iterations: Vec::new(),
            fid_probe_every: None,
            seed: 0,
        }
    }
}

impl DdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DdsError::Config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        let w = self.weights;
        for (name, v) in [("alpha", w.source), ("beta", w.target), ("gamma", w.crossover)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DdsError::Config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }
}
