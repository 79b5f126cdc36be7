//! Two-blob analytic renderer.
//!
//! Latent layout (dimension 8): `z[3b..3b+3]` drive centre x, centre y and
//! radius of blob `b`; `z[6]` tints the blob colours and `z[7]` shifts the
//! background. Geometry is `lo + (hi - lo) * sigmoid(z_k)`, so the zero
//! latent puts every blob at the middle of its range.
//!
//! Style A paints filled blobs over a background. Style B draws the same
//! blobs as ring strokes `4 s (1 - s)` with the negated palette. Both styles
//! share the geometry path, so their blob supports agree exactly.

use std::sync::Arc;

use crate::error::{DdsError, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const ANALYTIC_LATENT_DIM: usize = 8;
pub const BLOB_COUNT: usize = 2;

/// Per blob: `[cx_lo, cx_hi, cy_lo, cy_hi]` as fractions of the image side.
pub const BLOB_CENTER_RANGES: [[f64; 4]; BLOB_COUNT] = [[0.15, 0.55, 0.2, 0.8], [0.45, 0.85, 0.2, 0.8]];
/// `[r_lo, r_hi]` as a fraction of the image side.
pub const BLOB_RADIUS_RANGE: [f64; 2] = [0.08, 0.20];

pub const BACKGROUND_RGB: [f64; 3] = [-0.6, -0.45, -0.15];
pub const BACKGROUND_SHIFT: f64 = 0.2;
pub const BLOB_RGB: [[f64; 3]; BLOB_COUNT] = [[0.85, 0.25, -0.3], [0.1, 0.75, 0.55]];
/// Blob colours are scaled by `TINT_BASE + TINT_GAIN * tanh(z[6])`.
pub const TINT_BASE: f64 = 0.85;
pub const TINT_GAIN: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AnalyticStyle {
    /// Filled blobs.
    A,
    /// Ring strokes, inverted palette.
    B,
}

/// Blob placement in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobGeometry {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticGenerator {
    style: AnalyticStyle,
    size: usize,
}

fn selector(rows: &[usize]) -> Arc<Tensor> {
    let mut w = Tensor::zeros(&[rows.len(), ANALYTIC_LATENT_DIM]);
    for (r, &col) in rows.iter().enumerate() {
        w.data_mut()[r * ANALYTIC_LATENT_DIM + col] = 1.0;
    }
    Arc::new(w)
}

impl AnalyticGenerator {
    pub fn new(style: AnalyticStyle, size: usize) -> Result<Self> {
        if size < 4 {
            return Err(DdsError::InvalidArgument(format!("analytic image size {size} too small")));
        }
        Ok(Self { style, size })
    }

    pub fn style(&self) -> AnalyticStyle {
        self.style
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `[cx, cy, r]` per blob in pixel units, as tape values.
    pub fn blob_params<'t>(&self, z: &Var<'t>) -> Result<[Var<'t>; BLOB_COUNT]> {
        let n = self.size as f64;
        let build = |b: usize| -> Result<Var<'t>> {
            let [x_lo, x_hi, y_lo, y_hi] = BLOB_CENTER_RANGES[b];
            let [r_lo, r_hi] = BLOB_RADIUS_RANGE;
            let span = Tensor::new(&[3], vec![(x_hi - x_lo) * n, (y_hi - y_lo) * n, (r_hi - r_lo) * n])?;
            let lo = Tensor::new(&[3], vec![x_lo * n, y_lo * n, r_lo * n])?;
            z.linear(&selector(&[3 * b, 3 * b + 1, 3 * b + 2]), &Tensor::zeros(&[3]))?
                .sigmoid()
                .mul_const(&span)?
                .add_const(&lo)
        };
        Ok([build(0)?, build(1)?])
    }

    /// Soft supports `2^(-d^2/r^2)` of each blob, each `[1, n, n]`.
    pub fn blob_fields<'t>(&self, z: &Var<'t>) -> Result<[Var<'t>; BLOB_COUNT]> {
        let [p0, p1] = self.blob_params(z)?;
        Ok([p0.blob_field(self.size)?, p1.blob_field(self.size)?])
    }

    pub fn render<'t>(&self, z: &Var<'t>) -> Result<Var<'t>> {
        let n = self.size;
        let img = [3, n, n];
        let channel_const = |rgb: [f64; 3]| Tensor::from_fn(&img, |i| rgb[i / (n * n)]);

        let fields = self.blob_fields(z)?;
        let tint = z
            .linear(&selector(&[6]), &Tensor::zeros(&[1]))?
            .tanh()
            .affine(TINT_GAIN, TINT_BASE)
            .broadcast_to(&img)?;
        let shift = z
            .linear(&selector(&[7]), &Tensor::zeros(&[1]))?
            .tanh()
            .scale(BACKGROUND_SHIFT)
            .broadcast_to(&img)?;

        let sign = match self.style {
            AnalyticStyle::A => 1.0,
            AnalyticStyle::B => -1.0,
        };
        let mut x = shift.add_const(&channel_const(BACKGROUND_RGB))?.scale(sign);
        for (b, field) in fields.iter().enumerate() {
            let colour = tint.mul_const(&channel_const(BLOB_RGB[b]))?.scale(sign);
            let s = field.broadcast_to(&img)?;
            let coverage = match self.style {
                AnalyticStyle::A => s,
                // ring stroke peaking on the support boundary
                AnalyticStyle::B => s.mul(&s.affine(-1.0, 1.0))?.scale(4.0),
            };
            x = x.add(&coverage.mul(&colour.sub(&x)?)?)?;
        }
        Ok(x)
    }

    /// Plain-valued blob geometry for `z`.
    pub fn geometry(&self, z: &[f64]) -> Result<[BlobGeometry; BLOB_COUNT]> {
        self.check_dim(z.len())?;
        let tape = Tape::new();
        let zv = tape.constant(Tensor::new(&[z.len()], z.to_vec())?)?;
        let params = self.blob_params(&zv)?;
        Ok(params.map(|p| {
            let v = p.value();
            BlobGeometry {
                cx: v.data()[0],
                cy: v.data()[1],
                radius: v.data()[2],
            }
        }))
    }

    /// Soft blob fields for `z` as plain `[n, n]` grids.
    pub fn field_values(&self, z: &[f64]) -> Result<[Tensor; BLOB_COUNT]> {
        self.check_dim(z.len())?;
        let tape = Tape::new();
        let zv = tape.constant(Tensor::new(&[z.len()], z.to_vec())?)?;
        let fields = self.blob_fields(&zv)?;
        let n = self.size;
        Ok(fields.map(|f| f.value().reshape(&[n, n]).expect("field shape")))
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != ANALYTIC_LATENT_DIM {
            return Err(DdsError::LatentDim {
                expected: ANALYTIC_LATENT_DIM,
                actual: dim,
            });
        }
        Ok(())
    }

    /// Serialized rendering constants; these are the analytic "weights".
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![match self.style {
            AnalyticStyle::A => b'A',
            AnalyticStyle::B => b'B',
        }];
        out.extend((self.size as u64).to_le_bytes());
        let consts = BLOB_CENTER_RANGES
            .iter()
            .flatten()
            .chain(&BLOB_RADIUS_RANGE)
            .chain(&BACKGROUND_RGB)
            .chain(BLOB_RGB.iter().flatten())
            .chain(&[BACKGROUND_SHIFT, TINT_BASE, TINT_GAIN]);
        for c in consts {
            out.extend(c.to_le_bytes());
        }
        out
    }
}
