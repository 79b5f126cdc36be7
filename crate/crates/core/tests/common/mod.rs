//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the engine's loss, metric or optimizer code.

#![allow(dead_code)]

use dds_core::dds::Scene;
use dds_core::features::Backbone;
use dds_core::generators::{sample_latent, DomainGenerator, GeneratorPair, LatentCode};
use dds_core::segmentation::{segment_analytic, Mask, Part};
use dds_core::tensor::Tensor;

/// Area-average of `mask` down to `h`×`w`, by explicit loops.
pub fn pooled_mask(mask: &Mask, h: usize, w: usize) -> Vec<f64> {
    let f = mask.height() / h;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    acc += mask.get(y * f + dy, x * f + dx);
                }
            }
            out[y * w + x] = acc / (f * f) as f64;
        }
    }
    out
}

/// `Σ_j (1/N_j) Σ_{c,y,x} (a·λ − b·λ)²` over `[C, h, w]` feature maps.
pub fn brute_perceptual(a: &[Tensor], b: &[Tensor], mask: &Mask) -> f64 {
    let mut total = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        let (c, h, w) = (fa.shape()[0], fa.shape()[1], fa.shape()[2]);
        let lambda = pooled_mask(mask, h, w);
        let mut layer = 0.0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = (ch * h + y) * w + x;
                    let l = lambda[y * w + x];
                    let d = fa.data()[i] * l - fb.data()[i] * l;
                    layer += d * d;
                }
            }
        }
        total += layer / (c * h * w) as f64;
    }
    total
}

/// `mean((a⊗m − b⊗m)²)` over a `[3, n, n]` image pair.
pub fn brute_masked_mse(a: &Tensor, b: &Tensor, mask: &Mask) -> f64 {
    let n = mask.height();
    let mut acc = 0.0;
    for ch in 0..3 {
        for y in 0..n {
            for x in 0..n {
                let i = (ch * n + y) * n + x;
                let m = mask.get(y, x);
                let d = a.data()[i] * m - b.data()[i] * m;
                acc += d * d;
            }
        }
    }
    acc / (3 * n * n) as f64
}

pub fn brute_domain(generator: &DomainGenerator, backbone: &Backbone, z: &LatentCode, reference: &Tensor, mask: &Mask) -> f64 {
    let image = generator.image(z).unwrap();
    let fa = backbone.extract_values(&image).unwrap();
    let fb = backbone.extract_values(reference).unwrap();
    brute_perceptual(&fa, &fb, mask) + brute_masked_mse(&image, reference, mask)
}

/// `x_s ⊗ y_s + x_t ⊗ ȳ_t` by explicit loops.
pub fn brute_splice(x_s: &Tensor, y_s: &Mask, x_t: &Tensor, y_t_bar: &Mask) -> Tensor {
    let n = y_s.height();
    let mut out = Tensor::zeros(&[3, n, n]);
    for ch in 0..3 {
        for y in 0..n {
            for x in 0..n {
                let i = (ch * n + y) * n + x;
                out.data_mut()[i] = x_s.data()[i] * y_s.get(y, x) + x_t.data()[i] * y_t_bar.get(y, x);
            }
        }
    }
    out
}

pub fn brute_crossover(pair: &GeneratorPair, z: &LatentCode, y_s: &Mask, y_t_bar: &Mask, x_c: &Tensor) -> f64 {
    let (g_s, g_t) = pair.images(z).unwrap();
    let s_c = brute_splice(&g_s, y_s, &g_t, y_t_bar);
    let mut acc = 0.0;
    for (a, b) in s_c.data().iter().zip(x_c.data()) {
        acc += (a - b) * (a - b);
    }
    acc / s_c.len() as f64
}

/// `(L_s, L_t, L_c)` recomputed from scratch.
pub fn brute_components(pair: &GeneratorPair, backbone: &Backbone, scene: &Scene, z: &LatentCode) -> (f64, f64, f64) {
    let y_t_bar = scene.y_t.complement();
    let x_c = brute_splice(&scene.x_s, &scene.y_s, &scene.x_t, &y_t_bar);
    (
        brute_domain(&pair.source, backbone, z, &scene.x_s, &scene.y_s),
        brute_domain(&pair.target, backbone, z, &scene.x_t, &y_t_bar),
        brute_crossover(pair, z, &scene.y_s, &y_t_bar, &x_c),
    )
}

/// Analytic pair at `size` with a paired scene for `seed`, masked on blob 0.
pub fn analytic_scene(size: usize, seed: u64) -> (GeneratorPair, Scene) {
    let pair = GeneratorPair::analytic(size).unwrap();
    let z = sample_latent(seed, pair.latent_dim()).unwrap();
    let y = segment_analytic(&pair.source, &z, Part::Blob(0)).unwrap();
    let scene = Scene::paired(&pair, &z, y.clone(), y).unwrap();
    (pair, scene)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| ≤ tol · max(|a|, |b|)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as columns.
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// Symmetric PSD square root via [`jacobi_eigen`], clipping negative
/// eigenvalues to zero.
pub fn sqrt_psd_oracle(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let (vals, v) = jacobi_eigen(m);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| v[i][k] * vals[k].max(0.0).sqrt() * v[j][k]).sum())
                .collect()
        })
        .collect()
}

/// Mean vector and unbiased covariance of row samples.
pub fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (m, d) = (rows.len(), rows[0].len());
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
    let cov = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (m - 1) as f64)
                .collect()
        })
        .collect();
    (mean, cov)
}

/// Fréchet distance using the Jacobi square root in the symmetric form.
pub fn fid_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mu_a, ca) = moments(a);
    let (mu_b, cb) = moments(b);
    let ra = sqrt_psd_oracle(&ca);
    let inner = matmul(&matmul(&ra, &cb), &ra);
    let n = inner.len();
    let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (inner[i][j] + inner[j][i])).collect()).collect();
    let cross = sqrt_psd_oracle(&sym);
    let diff: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    diff + (0..n).map(|i| ca[i][i] + cb[i][i] - 2.0 * cross[i][i]).sum::<f64>()
}

/// Plain Adam on a scalar parameter, written out step by step.
pub fn adam_reference(p0: f64, lr: f64, steps: usize, grad: impl Fn(f64) -> f64) -> Vec<f64> {
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    let mut trajectory = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(p);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1.powi(t as i32));
        let v_hat = v / (1.0 - beta2.powi(t as i32));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
        trajectory.push(p);
    }
    trajectory
}

/// Squared error per masked pixel, by explicit loops.
pub fn region_error(a: &Tensor, b: &Tensor, mask: &Mask) -> f64 {
    let n = mask.height();
    let (mut acc, mut weight) = (0.0, 0.0);
    for ch in 0..3 {
        for y in 0..n {
            for x in 0..n {
                let i = (ch * n + y) * n + x;
                let m = mask.get(y, x);
                acc += m * (a.data()[i] - b.data()[i]).powi(2);
                weight += m;
            }
        }
    }
    if weight == 0.0 {
        0.0
    } else {
        acc / weight
    }
}
