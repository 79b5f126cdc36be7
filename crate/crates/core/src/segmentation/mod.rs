//! Part masks and their per-layer pyramids.

use std::fmt;
use std::str::FromStr;

use crate::error::{DdsError, Result};
use crate::generators::{DomainGenerator, LatentCode, BLOB_COUNT};
use crate::tensor::Tensor;

/// An `H x W` grid of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask {
    /// Values are clamped into `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DdsError::DataLength {
                shape: vec![height, width],
                expected: height * width,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DdsError::NonFinite { context: "mask" });
        }
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("consistent size")
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width)
            .map(|i| if f(i / width, i % width) { 1.0 } else { 0.0 })
            .collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    pub fn area(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Pointwise `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// `[channels, H, W]` tensor repeating the mask in every channel.
    pub fn broadcast(&self, channels: usize) -> Tensor {
        let plane = self.data.len();
        Tensor::from_fn(&[channels, self.height, self.width], |i| self.data[i % plane])
    }

    fn ensure_same_extent(&self, other: &Mask, op: &'static str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(DdsError::ShapeMismatch {
                op,
                left: vec![self.height, self.width],
                right: vec![other.height, other.width],
            });
        }
        Ok(())
    }

    /// Intersection over union of the supports (`> 0.5`) of two masks.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        self.ensure_same_extent(other, "iou")?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            let (a, b) = (*a > 0.5, *b > 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// Coverage diagnostics for a source mask and target complement mask that
/// are meant to partition the image.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskCoverage {
    /// `Σ y_s · ȳ_t`: pixels taken from both images.
    pub overlap_area: f64,
    /// `Σ (1 - y_s)(1 - ȳ_t)`: pixels taken from neither image.
    pub hole_area: f64,
}

pub fn mask_coverage(y_s: &Mask, y_t_bar: &Mask) -> Result<MaskCoverage> {
    y_s.ensure_same_extent(y_t_bar, "mask_coverage")?;
    let mut c = MaskCoverage {
        overlap_area: 0.0,
        hole_area: 0.0,
    };
    for (a, b) in y_s.data.iter().zip(&y_t_bar.data) {
        c.overlap_area += a * b;
        c.hole_area += (1.0 - a) * (1.0 - b);
    }
    Ok(c)
}

/// Which blob(s) of the analytic generator a mask selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Blob(usize),
    Union,
}

impl FromStr for Part {
    type Err = DdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "union" => Ok(Part::Union),
            other => other
                .parse::<usize>()
                .map(Part::Blob)
                .map_err(|_| DdsError::InvalidPart(other.to_string())),
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Part::Blob(b) => write!(f, "{b}"),
            Part::Union => f.write_str("union"),
        }
    }
}

/// Binary support (soft field `> 0.5`) of the selected analytic blob(s).
/// Geometry is style-independent, so both members of an analytic pair give
/// the same mask.
pub fn segment_analytic(generator: &DomainGenerator, z: &LatentCode, part: Part) -> Result<Mask> {
    let DomainGenerator::Analytic(g) = generator else {
        return Err(DdsError::UnsupportedGenerator("analytic segmentation"));
    };
    let selected: Vec<usize> = match part {
        Part::Blob(b) if b < BLOB_COUNT => vec![b],
        Part::Blob(b) => return Err(DdsError::InvalidPart(format!("blob {b} (have {BLOB_COUNT})"))),
        Part::Union => (0..BLOB_COUNT).collect(),
    };
    let fields = g.field_values(&z.values)?;
    let n = g.size();
    Ok(Mask::from_fn(n, n, |y, x| {
        selected.iter().any(|&b| fields[b].data()[y * n + x] > 0.5)
    }))
}

/// Binary mask of pixels whose `channel` value exceeds `tau`.
pub fn segment_threshold(image: &Tensor, channel: usize, tau: f64) -> Result<Mask> {
    let [c, h, w] = image.chw()?;
    if channel >= c {
        return Err(DdsError::ChannelOutOfRange { channel, channels: c });
    }
    let plane = &image.data()[channel * h * w..(channel + 1) * h * w];
    Mask::new(h, w, plane.iter().map(|&v| if v > tau { 1.0 } else { 0.0 }).collect())
}

/// A mask resampled to each feature layer's extent and repeated across its
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPyramid {
    pub levels: Vec<Tensor>,
}

impl MaskPyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Area-average pools `mask` down to every `[C, h, w]` layer shape and
/// repeats it over `C` channels.
pub fn build_mask_pyramid(mask: &Mask, layer_shapes: &[[usize; 3]]) -> Result<MaskPyramid> {
    let levels = layer_shapes
        .iter()
        .map(|&[c, h, w]| {
            let pooled = area_pool(mask, h, w)?;
            Ok(Tensor::from_fn(&[c, h, w], |i| pooled[i % (h * w)]))
        })
        .collect::<Result<_>>()?;
    Ok(MaskPyramid { levels })
}

fn area_pool(mask: &Mask, h: usize, w: usize) -> Result<Vec<f64>> {
    let (mh, mw) = (mask.height, mask.width);
    let divisible = h > 0 && w > 0 && mh % h == 0 && mw % w == 0 && mh / h == mw / w;
    if !divisible {
        return Err(DdsError::NonDivisible {
            layer: h,
            layer_w: w,
            mask: mh,
            mask_w: mw,
        });
    }
    let f = mh / h;
    let inv = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..f {
                let row = (y * f + dy) * mw + x * f;
                acc += mask.data[row..row + f].iter().sum::<f64>();
            }
            out[y * w + x] = acc * inv;
        }
    }
    Ok(out)
}
