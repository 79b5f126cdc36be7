//! End-to-end acceptance checks. Each test prints one `PASS` or `FAIL` line
//! naming its criterion before asserting.

mod common;

use std::fs;
use std::sync::OnceLock;

use common::{analytic_scene, brute_components, central_gradient, pooled_mask, region_error};
use dds_core::dds::{
    region_mse, run_dds, run_dds_with, CrossoverNorm, DdsConfig, DdsProblem, FeatureSource, LossWeights, RunRecord,
    Scene,
};
use dds_core::experiment::{cmd_run, fid_curve, reference_embeddings, ExperimentConfig};
use dds_core::features::Backbone;
use dds_core::generators::{make_neural_pair_sized, perturb_latent, sample_latent, GeneratorPair, LatentCode};
use dds_core::metrics::{fid, psnr, ssim, FeatureSample, SSIM_C1};
use dds_core::segmentation::{build_mask_pyramid, segment_analytic, Mask, Part};
use dds_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;
const SIZE: usize = 32;

fn report(criterion: &str, pass: bool, detail: String) {
    println!("{} {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion}: {detail}");
}

struct SeedRun {
    scene: Scene,
    record: RunRecord,
}

/// The ten default-weight runs on the analytic pair shared by the
/// convergence, dual-domain and FID criteria.
fn batch() -> &'static (GeneratorPair, Vec<SeedRun>) {
    static BATCH: OnceLock<(GeneratorPair, Vec<SeedRun>)> = OnceLock::new();
    BATCH.get_or_init(|| {
        let pair = GeneratorPair::analytic(SIZE).unwrap();
        let runs = (0..SEEDS)
            .map(|s| {
                let (_, scene) = analytic_scene(SIZE, s);
                let config = DdsConfig { seed: 1000 + s, fid_probe_every: Some(1000), ..DdsConfig::default() };
                let record = run_dds(&config, &pair, &scene).unwrap();
                SeedRun { scene, record }
            })
            .collect();
        (pair, runs)
    })
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let (pair, scene) = analytic_scene(8, 11);
    let features = FeatureSource::Backbone(Backbone::default_backbone());
    let problem = DdsProblem::new(&pair, &features, &scene, LossWeights::default(), CrossoverNorm::Mse).unwrap();
    let z = sample_latent(12, 8).unwrap();
    let (_, grad) = problem.value_and_gradient(&z).unwrap();
    let numeric = central_gradient(&z.values, 1e-5, |p| {
        problem.value_and_gradient(&LatentCode::new(p.to_vec(), 0)).unwrap().0.total
    });
    let worst = grad
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    report("gradient oracle", worst <= 1e-4, format!("worst relative error {worst:e} over 8 coordinates"));
}

#[test]
fn criterion_02_losses_match_explicit_loops() {
    let backbone = Backbone::default_backbone();
    let features = FeatureSource::Backbone(backbone.clone());
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = GeneratorPair::analytic(16).unwrap();
        let z_s = sample_latent(40 + seed, 8).unwrap();
        let z_t = perturb_latent(&z_s, 0.3, 60 + seed).unwrap();
        let part = Part::Blob(rng.random_range(0..2));
        let y_s = segment_analytic(&pair.source, &z_s, part).unwrap();
        let y_t = segment_analytic(&pair.target, &z_t, part).unwrap();
        let scene = Scene::unpaired(&pair, &z_s, &z_t, y_s, y_t).unwrap();
        let weights = LossWeights {
            source: rng.random_range(0.0..2.0),
            target: rng.random_range(0.0..2.0),
            crossover: rng.random_range(0.0..2.0),
        };
        let z = sample_latent(80 + seed, 8).unwrap();
        let problem = DdsProblem::new(&pair, &features, &scene, weights, CrossoverNorm::Mse).unwrap();
        let (row, _) = problem.value_and_gradient(&z).unwrap();
        let (ls, lt, lc) = brute_components(&pair, &backbone, &scene, &z);
        let total = weights.source * ls + weights.target * lt + weights.crossover * lc;
        for (engine, oracle) in [(row.source, ls), (row.target, lt), (row.crossover, lc), (row.total, total)] {
            worst = worst.max((engine - oracle).abs() / oracle.abs().max(1.0));
        }
    }
    report("loss oracles", worst <= 1e-10, format!("worst deviation {worst:e} over 5 instances"));
}

#[test]
fn criterion_03_loss_halves_within_the_budget() {
    let (_, runs) = batch();
    let ratios: Vec<f64> = runs
        .iter()
        .map(|r| r.record.losses[999].total / r.record.losses[0].total)
        .collect();
    let passing = ratios.iter().filter(|&&q| q <= 0.5).count();
    report("convergence", passing == 10, format!("{passing}/10 seeds halve the loss; ratios {ratios:.3?}"));
}

#[test]
fn criterion_04_result_is_closer_to_each_domain_in_its_region() {
    let (_, runs) = batch();
    let mut passing = 0;
    let mut details = Vec::new();
    for r in runs {
        let x = &r.record.final_image;
        let y_t_bar = r.scene.y_t_bar();
        let inside = (region_mse(x, &r.scene.x_s, &r.scene.y_s).unwrap(), region_mse(x, &r.scene.x_t, &r.scene.y_s).unwrap());
        let outside = (region_mse(x, &r.scene.x_s, &y_t_bar).unwrap(), region_mse(x, &r.scene.x_t, &y_t_bar).unwrap());
        if inside.0 < inside.1 && outside.1 < outside.0 {
            passing += 1;
        }
        details.push(format!("in {:.2e}/{:.2e} out {:.2e}/{:.2e}", inside.0, inside.1, outside.0, outside.1));
    }
    report(
        "dual-domain outcome",
        passing >= 8,
        format!("{passing}/10 seeds; masked and complement MSE to source/target: {}", details.join("; ")),
    );
}

#[test]
fn criterion_05_fid_moves_toward_the_target_domain() {
    let (pair, runs) = batch();
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let config = ExperimentConfig { image_size: SIZE, ..ExperimentConfig::default() };
    let (ref_s, ref_t) = reference_embeddings(&config, pair, &Backbone::default_backbone(), 64).unwrap();
    let rows = fid_curve(&records, &ref_s, &ref_t).unwrap();
    let (first, last) = (rows.first().unwrap(), rows.last().unwrap());
    let pass = last.iteration == 1000 && last.fid_to_target < first.fid_to_target && last.fid_to_target < last.fid_to_source;
    report(
        "FID trend",
        pass,
        format!(
            "to target {:.4e} -> {:.4e}, final to source {:.4e}",
            first.fid_to_target, last.fid_to_target, last.fid_to_source
        ),
    );
}

#[test]
fn criterion_06_metrics_hit_their_exact_cases() {
    let x = Tensor::from_fn(&[3, 8, 8], |i| ((i * 37) % 101) as f64 / 100.0);
    let self_ssim = ssim(&x, &x).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let sample = FeatureSample::new(rows).unwrap();
    let self_fid = fid(&sample, &sample).unwrap();

    let a = [0.1, 0.5, -0.3, 0.9, 0.2];
    let b = [1.2, 0.7, 1.9, 0.4];
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
    let closed_fid = (ma - mb).powi(2) + va + vb - 2.0 * (va * vb).sqrt();
    let one_d = |v: &[f64]| FeatureSample::new(v.iter().map(|&x| vec![x]).collect()).unwrap();
    let fid_1d = fid(&one_d(&a), &one_d(&b)).unwrap();

    let p = Tensor::full(&[3, 8, 8], 0.3);
    let q = Tensor::full(&[3, 8, 8], 0.4);
    let uniform_psnr = psnr(&p, &q).unwrap();

    let (ca, cb) = (0.25, 0.7);
    let closed_ssim = (2.0 * ca * cb + SSIM_C1) / (ca * ca + cb * cb + SSIM_C1);
    let const_ssim = ssim(&Tensor::full(&[3, 8, 8], ca), &Tensor::full(&[3, 8, 8], cb)).unwrap();

    let pass = self_ssim == 1.0
        && self_fid <= 1e-8
        && (fid_1d - closed_fid).abs() <= 1e-9
        && (uniform_psnr - 20.0).abs() <= 1e-9
        && (const_ssim - closed_ssim).abs() <= 1e-9;
    report(
        "metric exactness",
        pass,
        format!(
            "ssim(x,x) {self_ssim}, fid(a,a) {self_fid:e}, 1-d fid error {:e}, psnr {uniform_psnr}, constant ssim error {:e}",
            (fid_1d - closed_fid).abs(),
            (const_ssim - closed_ssim).abs()
        ),
    );
}

#[test]
fn criterion_07_mask_pyramid_preserves_mass_and_complements() {
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut shapes = Backbone::default_backbone().spec().tap_shapes([3, n, n]).unwrap();
    shapes.push([1, 1, 1]);
    let (mut mass_err, mut complement_err, mut oracle_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let density = rng.random_range(0.05..0.95);
        let mask = Mask::new(n, n, (0..n * n).map(|_| f64::from(rng.random_bool(density))).collect()).unwrap();
        let direct = build_mask_pyramid(&mask, &shapes).unwrap();
        let complement = build_mask_pyramid(&mask.complement(), &shapes).unwrap();
        for ((level, other), [c, h, w]) in direct.levels.iter().zip(&complement.levels).zip(&shapes) {
            let plane = h * w;
            let cell = (n * n / plane) as f64;
            for ch in 0..*c {
                let mass: f64 = level.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() * cell;
                mass_err = mass_err.max((mass - mask.area()).abs());
            }
            for (a, b) in level.data().iter().zip(other.data()) {
                complement_err = complement_err.max((a + b - 1.0).abs());
            }
            for (a, b) in level.data()[..plane].iter().zip(pooled_mask(&mask, *h, *w)) {
                oracle_err = oracle_err.max((a - b).abs());
            }
        }
    }
    report(
        "mask pyramid",
        mass_err <= 1e-9 && complement_err <= 1e-12 && oracle_err <= 1e-12,
        format!("mass error {mass_err:e}, complement error {complement_err:e}, pooling error {oracle_err:e}"),
    );
}

#[test]
fn criterion_08_dropping_the_target_term_hurts_the_target_region() {
    let pair = GeneratorPair::analytic(SIZE).unwrap();
    let z_s = sample_latent(0, 8).unwrap();
    let z_t = perturb_latent(&z_s, 0.5, 50).unwrap();
    let y_s = segment_analytic(&pair.source, &z_s, Part::Blob(0)).unwrap();
    let y_t = segment_analytic(&pair.target, &z_t, Part::Blob(0)).unwrap();
    let scene = Scene::unpaired(&pair, &z_s, &z_t, y_s, y_t).unwrap();
    let error = |target: f64| {
        let weights = LossWeights { target, ..LossWeights::default() };
        let record = run_dds(&DdsConfig { weights, seed: 8, ..DdsConfig::default() }, &pair, &scene).unwrap();
        region_error(&record.final_image, &scene.x_t, &scene.y_t_bar())
    };
    let (without, with) = (error(0.0), error(1.0));
    report(
        "target-weight sensitivity",
        without > with,
        format!("target-region error {without:.4e} without the target term, {with:.4e} with it"),
    );
}

#[test]
fn criterion_09_cmd_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let config = ExperimentConfig {
                out: dir.path().join(name),
                dds: DdsConfig { snapshot_iterations: vec![0, 500, 1000], ..DdsConfig::default() },
                ..ExperimentConfig::default()
            };
            cmd_run(&config).unwrap();
            config.out
        })
        .collect();
    let parse = |p: &std::path::Path| -> Vec<Vec<f64>> {
        fs::read_to_string(p.join("loss.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (ra, rb) = (parse(&outputs[0]), parse(&outputs[1]));
    let worst = ra
        .iter()
        .flatten()
        .zip(rb.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut pngs: Vec<_> = fs::read_dir(&outputs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".png"))
        .collect();
    pngs.sort();
    let differing: Vec<_> = pngs
        .iter()
        .filter(|n| fs::read(outputs[0].join(n)).unwrap() != fs::read(outputs[1].join(n)).unwrap())
        .collect();
    report(
        "determinism",
        ra.len() == rb.len() && ra.len() == 1000 && worst <= 1e-12 && differing.is_empty() && !pngs.is_empty(),
        format!("{} loss rows, worst row difference {worst:e}, {} PNGs, {} differ", ra.len(), pngs.len(), differing.len()),
    );
}

#[test]
fn criterion_10_weights_stay_frozen() {
    let mut unchanged = true;
    for pair in [GeneratorPair::analytic(16).unwrap(), make_neural_pair_sized(3, 0.05, 16).unwrap()] {
        let backbone = Backbone::default_backbone();
        let before = (pair.source.to_bytes(), pair.target.to_bytes(), backbone.to_bytes());
        let z = sample_latent(5, pair.latent_dim()).unwrap();
        let y = segment_analytic(&pair.source, &LatentCode::zeros(8), Part::Blob(0))
            .unwrap_or_else(|_| Mask::from_fn(16, 16, |y, x| y < 8 && x < 8));
        let scene = Scene::paired(&pair, &z, y.clone(), y).unwrap();
        let config = DdsConfig { max_iterations: 50, fid_probe_every: Some(10), ..DdsConfig::default() };
        let features = FeatureSource::Backbone(backbone.clone());
        run_dds_with(&config, &pair, &scene, &features, &backbone).unwrap();
        let after = (pair.source.to_bytes(), pair.target.to_bytes(), backbone.to_bytes());
        unchanged &= before == after;
    }
    report("frozen weights", unchanged, format!("serializations unchanged: {unchanged}"));
}
