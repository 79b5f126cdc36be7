//! 8-bit PNG import/export for images and masks.
//!
//! Images map `[-1, 1]` linearly onto `0..=255` with round-half-up after
//! clamping. Masks are written as 0/255 gray and binarized at 128 on import.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{DdsError, Result};
use crate::segmentation::Mask;
use crate::tensor::Tensor;

fn png_err(path: &Path, e: impl std::fmt::Display) -> DdsError {
    DdsError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// `[-1, 1]` to a byte, clamping first.
pub fn quantize(v: f64) -> u8 {
    let t = (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0;
    (t + 0.5).floor().min(255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))?;
    Ok(())
}

/// Decoded 8-bit pixels as `(width, height, channels, bytes)`.
fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok((info.width as usize, info.height as usize, channels, buf))
}

/// Writes a `[3, H, W]` image as 8-bit RGB.
pub fn write_image_png(path: &Path, image: &Tensor) -> Result<()> {
    let [c, h, w] = image.chw()?;
    if c != 3 {
        return Err(DdsError::InvalidArgument(format!("expected 3 channels, got {c}")));
    }
    let d = image.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            bytes.push(quantize(d[ch * h * w + p]));
        }
    }
    write_png(path, w, h, png::ColorType::Rgb, &bytes)
}

/// Reads an 8-bit PNG as a `[3, H, W]` image in `[-1, 1]`. Gray images are
/// replicated into all three channels; alpha is dropped.
pub fn read_image_png(path: &Path) -> Result<Tensor> {
    let (w, h, channels, bytes) = read_png(path)?;
    let plane = h * w;
    Tensor::new(
        &[3, h, w],
        (0..3 * plane)
            .map(|i| {
                let (ch, p) = (i / plane, i % plane);
                let src = if channels >= 3 { ch } else { 0 };
                dequantize(bytes[p * channels + src])
            })
            .collect(),
    )
}

/// Writes a mask as 8-bit gray: 255 where the value is at least 0.5, else 0.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    write_png(path, mask.width(), mask.height(), png::ColorType::Grayscale, &bytes)
}

/// Reads a gray PNG (first channel otherwise) and binarizes at 128.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let (w, h, channels, bytes) = read_png(path)?;
    Mask::new(
        h,
        w,
        (0..h * w)
            .map(|p| if bytes[p * channels] >= 128 { 1.0 } else { 0.0 })
            .collect(),
    )
}
