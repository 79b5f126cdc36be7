//! Raw loops behind the tape ops. All images are `[C, H, W]` row-major.

use nalgebra::DMatrixView;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output columns `ox` whose input column `ox*stride + k - pad` lies
    /// inside the image.
    fn valid_range(&self, k: usize, in_extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= in_extent - 1
        let hi_num = in_extent as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let hi = hi.min(out_extent as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

/// Unfolds `input` into a row-major `[C*k*k, oh*ow]` patch matrix.
fn im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let p = oh * ow;
    let mut cols = vec![0.0; g.in_channels * k * k * p];
    for c in 0..g.in_channels {
        let in_plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (y0, y1) = g.valid_range(ky, g.height, oh);
            for kx in 0..k {
                let (x0, x1) = g.valid_range(kx, g.width, ow);
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in y0..y1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let row_in = &in_plane[iy * g.width..(iy + 1) * g.width];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for ox in x0..x1 {
                        dst[ox] = row_in[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Folds a `[C*k*k, oh*ow]` patch-gradient matrix back onto the input grid.
fn col2im(g: &ConvGeometry, cols: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let p = oh * ow;
    let mut out = vec![0.0; g.in_channels * g.height * g.width];
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (y0, y1) = g.valid_range(ky, g.height, oh);
            for kx in 0..k {
                let (x0, x1) = g.valid_range(kx, g.width, ow);
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in y0..y1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for ox in x0..x1 {
                        dst[ox * g.stride + kx - g.pad] += src[ox];
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let p = g.out_height() * g.out_width();
    let kk = g.in_channels * g.kernel * g.kernel;
    let cols = im2col(g, input);
    // Row-major buffers read as column-major matrices are transposes, so
    // this computes `(W · cols)ᵀ` in column-major order, i.e. `W · cols`
    // in row-major order.
    let cols_t = DMatrixView::from_slice(&cols, p, kk);
    let w_t = DMatrixView::from_slice(weight, kk, g.out_channels);
    let mut out: Vec<f64> = (cols_t * w_t).data.into();
    add_bias(&mut out, bias, p);
    out
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        for v in chunk {
            *v += bias[o];
        }
    }
}

/// Gradient of a convolution with respect to its input.
pub fn conv2d_backward_input(g: &ConvGeometry, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let p = g.out_height() * g.out_width();
    let kk = g.in_channels * g.kernel * g.kernel;
    let go_t = DMatrixView::from_slice(grad_out, p, g.out_channels);
    let w_t = DMatrixView::from_slice(weight, kk, g.out_channels);
    let cols: Vec<f64> = (go_t * w_t.transpose()).data.into();
    col2im(g, &cols)
}

pub fn upsample2x_forward(c: usize, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                out[(ch * h2 + y) * w2 + x] = input[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward(c: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut grad = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                grad[(ch * h + y / 2) * w + x / 2] += grad_out[(ch * h2 + y) * w2 + x];
            }
        }
    }
    grad
}

/// `out = W x + b` for a `[rows, cols]` matrix.
pub fn linear_forward(rows: usize, cols: usize, weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let row = &weight[r * cols..(r + 1) * cols];
            bias[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub fn linear_backward(rows: usize, cols: usize, weight: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; cols];
    for r in 0..rows {
        let go = grad_out[r];
        if go == 0.0 {
            continue;
        }
        for (gc, w) in g.iter_mut().zip(&weight[r * cols..(r + 1) * cols]) {
            *gc += go * w;
        }
    }
    g
}

const LN2: f64 = std::f64::consts::LN_2;

/// Soft blob support `2^(-d^2 / r^2)` sampled at pixel centres; equals 0.5
/// exactly on the circle of radius `r` around `(cx, cy)`.
pub fn blob_field_forward(n: usize, cx: f64, cy: f64, r: f64) -> Vec<f64> {
    let inv_r2 = 1.0 / (r * r);
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..n {
            let dx = x as f64 + 0.5 - cx;
            out[y * n + x] = (-LN2 * (dx * dx + dy * dy) * inv_r2).exp();
        }
    }
    out
}

/// Gradient of `sum(grad_out * field)` with respect to `(cx, cy, r)`.
pub fn blob_field_backward(n: usize, cx: f64, cy: f64, r: f64, field: &[f64], grad_out: &[f64]) -> [f64; 3] {
    let inv_r2 = 1.0 / (r * r);
    let (mut gx, mut gy, mut gr) = (0.0, 0.0, 0.0);
    for y in 0..n {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..n {
            let i = y * n + x;
            let dx = x as f64 + 0.5 - cx;
            let t = grad_out[i] * field[i] * 2.0 * LN2 * inv_r2;
            gx += t * dx;
            gy += t * dy;
            gr += t * (dx * dx + dy * dy) / r;
        }
    }
    [gx, gy, gr]
}
