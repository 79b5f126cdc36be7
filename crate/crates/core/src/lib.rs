//! Dual-domain image synthesis by latent optimization over paired
//! generators, with FID, SSIM and PSNR evaluation.

pub mod dds;
pub mod error;
pub mod experiment;
pub mod features;
pub mod generators;
pub mod imageio;
pub mod metrics;
pub mod segmentation;
pub mod tensor;

pub use error::{DdsError, Result};
