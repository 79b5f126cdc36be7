mod common;

use common::{analytic_scene, brute_components, region_error};
use dds_core::dds::{
    run_dds, CrossoverNorm, DdsConfig, DdsProblem, FeatureSource, InitMode, LossWeights, Scene,
};
use dds_core::error::DdsError;
use dds_core::features::Backbone;
use dds_core::generators::{perturb_latent, sample_latent, GeneratorPair};
use dds_core::segmentation::{segment_analytic, Mask, Part};
use dds_core::tensor::Tensor;

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[test]
fn gradient_vanishes_at_the_generating_latent() {
    let (pair, scene) = analytic_scene(16, 5);
    let features = FeatureSource::Backbone(Backbone::default_backbone());
    for weights in [
        LossWeights { source: 0.0, target: 0.0, crossover: 1.0 },
        LossWeights::default(),
    ] {
        let problem = DdsProblem::new(&pair, &features, &scene, weights, CrossoverNorm::Mse).unwrap();
        let (row, grad) = problem.value_and_gradient(&scene.z_source).unwrap();
        assert_eq!(row.crossover, 0.0);
        assert!(grad.data().iter().all(|g| g.abs() <= 1e-10), "{:?}", grad.data());
    }
}

#[test]
fn zero_weights_give_zero_loss_and_unit_weight_isolates_a_term() {
    let (pair, scene) = analytic_scene(16, 6);
    let features = FeatureSource::Backbone(Backbone::default_backbone());
    let z = sample_latent(99, 8).unwrap();
    let zero = LossWeights { source: 0.0, target: 0.0, crossover: 0.0 };
    let problem = DdsProblem::new(&pair, &features, &scene, zero, CrossoverNorm::Mse).unwrap();
    assert_eq!(problem.value_and_gradient(&z).unwrap().0.total, 0.0);
    let only_source = LossWeights { source: 1.0, target: 0.0, crossover: 0.0 };
    let problem = DdsProblem::new(&pair, &features, &scene, only_source, CrossoverNorm::Mse).unwrap();
    let row = problem.value_and_gradient(&z).unwrap().0;
    let (ls, _, _) = brute_components(&pair, &Backbone::default_backbone(), &scene, &z);
    assert!((row.total - ls).abs() <= 1e-12 * ls);
}

#[test]
fn zero_iterations_return_the_initial_rendering() {
    let (pair, scene) = analytic_scene(16, 1);
    let config = DdsConfig { max_iterations: 0, ..DdsConfig::default() };
    let record = run_dds(&config, &pair, &scene).unwrap();
    assert!(record.losses.is_empty());
    assert_eq!(record.initial_latent, record.final_latent);
    assert_eq!(record.final_image, pair.target.image(&record.initial_latent).unwrap());
    assert_ne!(record.initial_latent.values, scene.z_source.values);
}

#[test]
fn degenerate_masks_reduce_to_target_reconstruction() {
    let (pair, scene) = analytic_scene(32, 0);
    let scene = Scene::paired(&pair, &scene.z_source, Mask::zeros(32, 32), Mask::zeros(32, 32)).unwrap();
    let config = DdsConfig { max_iterations: 500, seed: 3, ..DdsConfig::default() };
    let record = run_dds(&config, &pair, &scene).unwrap();
    let before = mse(&record.initial_image, &scene.x_t);
    let after = mse(&record.final_image, &scene.x_t);
    assert!(after < 0.1 * before, "{after} vs {before}");
}

#[test]
fn moving_average_of_the_loss_does_not_increase() {
    let (pair, scene) = analytic_scene(32, 2);
    let config = DdsConfig { seed: 2, ..DdsConfig::default() };
    let record = run_dds(&config, &pair, &scene).unwrap();
    let totals: Vec<f64> = record.losses.iter().map(|r| r.total).collect();
    let averages: Vec<f64> = totals.windows(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    let worst = averages.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    assert!(worst <= 0.0, "moving average rose by {worst:e}");
    assert!(totals[999] <= 0.5 * totals[0]);
}

#[test]
fn overflowing_reference_aborts_with_the_iteration() {
    let (pair, mut scene) = analytic_scene(16, 0);
    scene.x_s = Tensor::full(&[3, 16, 16], 1e200);
    let config = DdsConfig { max_iterations: 5, ..DdsConfig::default() };
    match run_dds(&config, &pair, &scene) {
        Err(DdsError::NonFiniteLoss { iteration, source_loss, .. }) => {
            assert_eq!(iteration, 1);
            assert!(!source_loss.is_finite());
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn l2_crossover_variant_converges() {
    let (pair, scene) = analytic_scene(16, 4);
    let config = DdsConfig {
        crossover_norm: CrossoverNorm::L2,
        max_iterations: 200,
        ..DdsConfig::default()
    };
    let record = run_dds(&config, &pair, &scene).unwrap();
    let (first, last) = (record.first_loss().unwrap(), record.last_loss().unwrap());
    assert!(last.total < 0.5 * first.total);
    let mse_config = DdsConfig { max_iterations: 200, ..DdsConfig::default() };
    let mse_record = run_dds(&mse_config, &pair, &scene).unwrap();
    assert_ne!(mse_record.final_latent, record.final_latent);
}

#[test]
fn starting_from_the_generating_latent_stays_there() {
    let (pair, scene) = analytic_scene(16, 8);
    let config = DdsConfig {
        init: InitMode::FromZStar,
        max_iterations: 20,
        ..DdsConfig::default()
    };
    let record = run_dds(&config, &pair, &scene).unwrap();
    assert_eq!(record.initial_latent.values, scene.z_target.values);
    assert!(record.losses.iter().all(|r| r.total == 0.0));
    assert_eq!(record.final_latent.values, scene.z_target.values);
}

#[test]
fn runs_are_deterministic_and_seeded() {
    let (pair, scene) = analytic_scene(16, 3);
    let config = DdsConfig { max_iterations: 25, seed: 12, ..DdsConfig::default() };
    let a = run_dds(&config, &pair, &scene).unwrap();
    let b = run_dds(&config, &pair, &scene).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.final_image, b.final_image);
    let other = run_dds(&DdsConfig { seed: 13, ..config }, &pair, &scene).unwrap();
    assert_ne!(a.initial_latent, other.initial_latent);
}

#[test]
fn snapshots_and_probes_follow_the_schedule() {
    let (pair, scene) = analytic_scene(16, 3);
    let config = DdsConfig {
        max_iterations: 10,
        snapshot_iterations: vec![0, 3, 10, 50],
        fid_probe_every: Some(4),
        ..DdsConfig::default()
    };
    let record = run_dds(&config, &pair, &scene).unwrap();
    let snaps: Vec<usize> = record.snapshots.iter().map(|s| s.iteration).collect();
    let probes: Vec<usize> = record.probes.iter().map(|p| p.iteration).collect();
    assert_eq!(snaps, [0, 3, 10]);
    assert_eq!(probes, [0, 4, 8, 10]);
    assert_eq!(record.snapshots[0].target_image, record.initial_image);
    assert_eq!(record.snapshots[2].target_image, record.final_image);
    let rows: Vec<usize> = record.losses.iter().map(|r| r.iteration).collect();
    assert_eq!(rows, (1..=10).collect::<Vec<_>>());
}

#[test]
fn invalid_configs_are_rejected() {
    let (pair, scene) = analytic_scene(16, 0);
    for config in [
        DdsConfig { lr: 0.0, ..DdsConfig::default() },
        DdsConfig { lr: f64::NAN, ..DdsConfig::default() },
        DdsConfig {
            weights: LossWeights { source: -1.0, target: 1.0, crossover: 0.5 },
            ..DdsConfig::default()
        },
        DdsConfig { backbone: "missing".into(), ..DdsConfig::default() },
    ] {
        assert!(run_dds(&config, &pair, &scene).is_err());
    }
}

fn unpaired_iou(pair: &GeneratorPair, seed: u64, norm: f64) -> f64 {
    let z_s = sample_latent(seed, 8).unwrap();
    let z_t = perturb_latent(&z_s, norm, seed + 500).unwrap();
    let y_s = segment_analytic(&pair.source, &z_s, Part::Blob(0)).unwrap();
    let y_t = segment_analytic(&pair.target, &z_t, Part::Blob(0)).unwrap();
    y_s.iou(&y_t).unwrap()
}

#[test]
fn small_latent_offsets_keep_masks_aligned() {
    let pair = GeneratorPair::analytic(32).unwrap();
    let small: Vec<f64> = (0..10).map(|s| unpaired_iou(&pair, s, 0.1)).collect();
    let large: Vec<f64> = (0..10).map(|s| unpaired_iou(&pair, s, 3.0)).collect();
    eprintln!("mask IoU at offset 0.1: {small:?}");
    eprintln!("mask IoU at offset 3: {large:?}");
    assert!(small.iter().all(|&v| v > 0.5));
    assert!(large.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn unpaired_run_with_large_offset_completes() {
    let pair = GeneratorPair::analytic(16).unwrap();
    let z_s = sample_latent(1, 8).unwrap();
    let z_t = perturb_latent(&z_s, 3.0, 9).unwrap();
    let y_s = segment_analytic(&pair.source, &z_s, Part::Blob(0)).unwrap();
    let y_t = segment_analytic(&pair.target, &z_t, Part::Blob(0)).unwrap();
    let scene = Scene::unpaired(&pair, &z_s, &z_t, y_s, y_t).unwrap();
    let config = DdsConfig { max_iterations: 50, ..DdsConfig::default() };
    let record = run_dds(&config, &pair, &scene).unwrap();
    assert_eq!(record.iterations(), 50);
    let err = region_error(&record.final_image, &scene.x_t, &scene.y_t_bar());
    eprintln!("complement error to x_t at offset 3 after 50 iterations: {err}");
    assert!(err.is_finite());
}
