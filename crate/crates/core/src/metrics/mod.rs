//! FID, SSIM and PSNR.
//!
//! SSIM uses whole-image statistics (no sliding window) with population
//! variances. FID uses unbiased covariances and the symmetric square-root
//! form `tr (S_a^½ S_b S_a^½)^½`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DdsError, Result};
use crate::features::Backbone;
use crate::tensor::{ensure_same_shape, Tensor};

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// Peak value for PSNR on unit-range images.
pub const PSNR_PEAK: f64 = 1.0;
const FID_NEGATIVE_TOLERANCE: f64 = 1e-8;
const SYMMETRY_TOLERANCE: f64 = 1e-10;
const EIGEN_TOLERANCE: f64 = 1e-10;

/// `m` feature vectors of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSample {
    rows: Vec<Vec<f64>>,
}

impl FeatureSample {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(DdsError::InvalidArgument("feature sample needs d >= 1 and m >= 1".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(DdsError::ShapeMismatch {
                op: "feature sample",
                left: vec![d],
                right: vec![bad.len()],
            });
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Mean vector and unbiased covariance.
    pub fn mean_and_covariance(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.rows.len();
        if m < 2 {
            return Err(DdsError::TooFewSamples(m));
        }
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for r in &self.rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= m as f64;
        let mut cov = DMatrix::zeros(d, d);
        for r in &self.rows {
            let c = DVector::from_column_slice(r) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (m - 1) as f64;
        Ok((mean, cov))
    }
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues within the
/// solver's rounding error `n ε max|λ|` of zero are treated as zero, so
/// rank-deficient covariances do not pick up `sqrt(ε)`-sized noise.
/// Eigenvalues down to `-1e-10` (relative to the matrix scale) are clipped
/// to zero; anything more negative is an error.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(DdsError::ShapeMismatch {
            op: "matrix_sqrt_psd",
            left: vec![m.nrows(), m.ncols()],
            right: vec![m.nrows(), m.nrows()],
        });
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(DdsError::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let min = eig.eigenvalues.min();
    if min < -EIGEN_TOLERANCE * scale {
        return Err(DdsError::NotPsd(min));
    }
    let spread = eig.eigenvalues.amax();
    let noise = m.nrows() as f64 * f64::EPSILON * spread;
    let roots = eig.eigenvalues.map(|l| if l <= noise { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Fréchet distance between Gaussian fits of two sample sets.
pub fn fid(a: &FeatureSample, b: &FeatureSample) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(DdsError::ShapeMismatch {
            op: "fid",
            left: vec![a.len(), a.dim()],
            right: vec![b.len(), b.dim()],
        });
    }
    let (mu_a, cov_a) = a.mean_and_covariance()?;
    let (mu_b, cov_b) = b.mean_and_covariance()?;
    let root_a = matrix_sqrt_psd(&cov_a)?;
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?;
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    if value < 0.0 {
        if value >= -FID_NEGATIVE_TOLERANCE {
            return Ok(0.0);
        }
        return Err(DdsError::NotPsd(value));
    }
    Ok(value)
}

/// `[-1, 1]` to `[0, 1]`.
pub fn to_unit_range(image: &Tensor) -> Tensor {
    image.map(|v| (v + 1.0) * 0.5)
}

/// Global-statistics SSIM for unit-range images.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    ensure_same_shape("ssim", x.shape(), y.shape())?;
    let n = x.len() as f64;
    let mu_x = x.sum() / n;
    let mu_y = y.sum() / n;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (da, db) = (a - mu_x, b - mu_y);
        var_x += da * da;
        var_y += db * db;
        cov += da * db;
    }
    var_x /= n;
    var_y /= n;
    cov /= n;
    let num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2);
    Ok(num / den)
}

/// PSNR in dB for unit-range images; `+inf` for identical images.
pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    ensure_same_shape("psnr", x.shape(), y.shape())?;
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// FID between the last-tap spatial feature vectors of the two images.
    pub fid: f64,
    pub ssim: f64,
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr '{t}'"))),
    }
}

impl MetricReport {
    /// Compares two `[-1, 1]` images: SSIM and PSNR on the unit range, FID
    /// on the backbone's last-tap spatial features.
    pub fn compare(backbone: &Backbone, x: &Tensor, y: &Tensor) -> Result<Self> {
        let (ux, uy) = (to_unit_range(x), to_unit_range(y));
        Ok(Self {
            fid: fid(&backbone.spatial_samples(x)?, &backbone.spatial_samples(y)?)?,
            ssim: ssim(&ux, &uy)?,
            psnr: psnr(&ux, &uy)?,
        })
    }
}
