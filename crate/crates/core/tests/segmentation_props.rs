mod common;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::pooled_mask;
use dds_core::features::Backbone;
use dds_core::generators::{sample_latent, DomainGenerator, GeneratorPair, LatentCode};
use dds_core::imageio::{read_mask_png, write_mask_png};
use dds_core::segmentation::{build_mask_pyramid, mask_coverage, segment_analytic, segment_threshold, Mask, Part};
use dds_core::tensor::Tensor;

const N: usize = 32;

fn random_mask(rng: &mut ChaCha8Rng) -> Mask {
    let density = rng.random_range(0.05..0.95);
    Mask::new(N, N, (0..N * N).map(|_| f64::from(rng.random_bool(density))).collect()).unwrap()
}

fn layer_shapes() -> Vec<[usize; 3]> {
    let mut shapes = Backbone::default_backbone().spec().tap_shapes([3, N, N]).unwrap();
    shapes.extend([[2, 1, 1], [5, 8, 8]]);
    shapes
}

#[test]
fn pyramid_preserves_mask_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes = layer_shapes();
    for _ in 0..100 {
        let mask = random_mask(&mut rng);
        let pyramid = build_mask_pyramid(&mask, &shapes).unwrap();
        for (level, [c, h, w]) in pyramid.levels.iter().zip(&shapes) {
            let cell = (N / h * N / w) as f64;
            let plane = h * w;
            for ch in 0..*c {
                let mass: f64 = level.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() * cell;
                assert!((mass - mask.area()).abs() <= 1e-9, "{mass} vs {}", mask.area());
            }
            let oracle = pooled_mask(&mask, *h, *w);
            for (a, b) in level.data()[..plane].iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn pyramid_of_complement_is_complement_of_pyramid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shapes = layer_shapes();
    for _ in 0..100 {
        let mask = random_mask(&mut rng);
        let direct = build_mask_pyramid(&mask, &shapes).unwrap();
        let complement = build_mask_pyramid(&mask.complement(), &shapes).unwrap();
        for (a, b) in direct.levels.iter().zip(&complement.levels) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x + y - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn pyramid_is_monotone_in_the_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = layer_shapes();
    for _ in 0..100 {
        let small = random_mask(&mut rng);
        let extra = random_mask(&mut rng);
        let large = Mask::new(N, N, small.data().iter().zip(extra.data()).map(|(a, b)| a.max(*b)).collect()).unwrap();
        let ps = build_mask_pyramid(&small, &shapes).unwrap();
        let pl = build_mask_pyramid(&large, &shapes).unwrap();
        for (a, b) in ps.levels.iter().zip(&pl.levels) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x <= y));
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn indivisible_layer_shapes_are_rejected() {
    assert!(build_mask_pyramid(&Mask::ones(N, N), &[[1, 5, 5]]).is_err());
}

#[test]
fn zero_latent_blob_is_a_disk_of_the_mid_radius() {
    let pair = GeneratorPair::analytic(64).unwrap();
    let DomainGenerator::Analytic(g) = &pair.source else { unreachable!() };
    let z = LatentCode::zeros(pair.latent_dim());
    let geometry = g.geometry(&z.values).unwrap();
    for (b, blob) in geometry.iter().enumerate() {
        let mask = segment_analytic(&pair.source, &z, Part::Blob(b)).unwrap();
        let disk = PI * blob.radius * blob.radius;
        assert!((mask.area() - disk).abs() <= 2.0 * blob.radius, "blob {b}: {} vs {disk}", mask.area());
        assert!((mask.area() - disk).abs() / disk <= 0.05);
    }
}

#[test]
fn analytic_masks_agree_across_styles_and_union_covers_parts() {
    let pair = GeneratorPair::analytic(N).unwrap();
    for seed in 0..10 {
        let z = sample_latent(seed, pair.latent_dim()).unwrap();
        let union = segment_analytic(&pair.source, &z, Part::Union).unwrap();
        for b in 0..2 {
            let s = segment_analytic(&pair.source, &z, Part::Blob(b)).unwrap();
            assert_eq!(s, segment_analytic(&pair.target, &z, Part::Blob(b)).unwrap());
            assert!(s.data().iter().zip(union.data()).all(|(p, u)| p <= u));
            assert!(s.area() > 0.0);
        }
    }
    let z = LatentCode::zeros(8);
    assert!(segment_analytic(&pair.source, &z, Part::Blob(2)).is_err());
}

#[test]
fn threshold_segmentation_examples() {
    let image = Tensor::from_fn(&[3, 2, 2], |i| [0.1, 0.6, -0.2, 0.9, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, 0.5][i]);
    assert_eq!(segment_threshold(&image, 0, 0.5).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    assert_eq!(segment_threshold(&image, 1, 0.0).unwrap().data(), &[0.0; 4]);
    assert_eq!(segment_threshold(&image, 2, 0.5).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
    assert!(segment_threshold(&image, 3, 0.0).is_err());
}

#[test]
fn coverage_counts_overlap_and_holes() {
    let y_s = Mask::from_fn(4, 4, |_, x| x < 2);
    let y_t_bar = Mask::from_fn(4, 4, |_, x| x >= 1 && x < 3);
    let c = mask_coverage(&y_s, &y_t_bar).unwrap();
    assert_eq!((c.overlap_area, c.hole_area), (4.0, 4.0));
}

#[test]
fn iou_examples() {
    let a = Mask::from_fn(4, 4, |y, _| y < 2);
    let b = Mask::from_fn(4, 4, |y, _| y >= 1 && y < 3);
    assert!((a.iou(&b).unwrap() - 4.0 / 12.0).abs() < 1e-15);
    assert_eq!(a.iou(&a).unwrap(), 1.0);
}

#[test]
fn mask_png_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dir = tempfile::tempdir().unwrap();
    for k in 0..5 {
        let mask = random_mask(&mut rng);
        let path = dir.path().join(format!("mask_{k}.png"));
        write_mask_png(&path, &mask).unwrap();
        assert_eq!(read_mask_png(&path).unwrap(), mask);
    }
}

#[test]
fn mask_values_are_clamped_and_validated() {
    assert_eq!(Mask::new(1, 3, vec![-0.5, 0.5, 2.0]).unwrap().data(), &[0.0, 0.5, 1.0]);
    assert!(Mask::new(1, 2, vec![0.0]).is_err());
    assert!(Mask::new(1, 2, vec![0.0, f64::NAN]).is_err());
}
