//! Experiment drivers behind the `dds` command line: single runs with
//! snapshots, weight sweeps, FID-vs-iteration curves, backbone comparisons
//! and unpaired-latent runs. Every driver writes its artifacts under the
//! configured output directory.

mod config;

pub use config::{Command, ExperimentConfig, GeneratorChoice, MaskSource};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dds::{region_mse, run_dds_with, FeatureSource, LossRow, LossWeights, RunRecord, Scene};
use crate::error::{DdsError, Result};
use crate::features::Backbone;
use crate::generators::{make_neural_pair_sized, perturb_latent, sample_latent, GeneratorPair, LatentCode};
use crate::imageio::{read_image_png, read_mask_png, write_image_png, write_mask_png};
use crate::metrics::{fid, FeatureSample, MetricReport};
use crate::segmentation::{mask_coverage, segment_analytic, segment_threshold};

/// Offset between batch instance seeds and the seeds of the reference
/// images used by FID curves, so the two never overlap.
const REFERENCE_SEED_OFFSET: u64 = 1 << 32;

pub fn build_pair(config: &ExperimentConfig) -> Result<GeneratorPair> {
    match config.generator {
        GeneratorChoice::Analytic => GeneratorPair::analytic(config.image_size),
        GeneratorChoice::Neural => {
            make_neural_pair_sized(config.generator_seed, config.perturbation_scale, config.image_size)
        }
    }
}

/// Source and target latents for instance seed `z_seed`.
pub fn instance_latents(config: &ExperimentConfig, pair: &GeneratorPair, z_seed: u64) -> Result<(LatentCode, LatentCode)> {
    let dim = pair.latent_dim();
    let z_s = sample_latent(z_seed, dim)?;
    let z_t = match (config.perturbation_norm, config.z_seed_target) {
        (Some(norm), target) => perturb_latent(&z_s, norm, target.unwrap_or(z_seed.wrapping_add(1)))?,
        (None, Some(target)) => sample_latent(target, dim)?,
        (None, None) => z_s.clone(),
    };
    Ok((z_s, z_t))
}

/// Renders both images and derives their masks.
pub fn build_scene(config: &ExperimentConfig, pair: &GeneratorPair, z_s: &LatentCode, z_t: &LatentCode) -> Result<Scene> {
    let (y_s, y_t) = match config.mask_source {
        MaskSource::Analytic => (
            segment_analytic(&pair.source, z_s, config.part)?,
            segment_analytic(&pair.target, z_t, config.part)?,
        ),
        MaskSource::Png => {
            let path = |p: &Option<PathBuf>, key: &str| {
                p.clone()
                    .ok_or_else(|| DdsError::Config(format!("mask_source = png needs '{key}'")))
            };
            (
                read_mask_png(&path(&config.mask_source_path, "mask_source_path")?)?,
                read_mask_png(&path(&config.mask_target_path, "mask_target_path")?)?,
            )
        }
        MaskSource::Threshold => (
            segment_threshold(&pair.source.image(z_s)?, config.threshold_channel, config.threshold_tau)?,
            segment_threshold(&pair.target.image(z_t)?, config.threshold_channel, config.threshold_tau)?,
        ),
    };
    Scene::unpaired(pair, z_s, z_t, y_s, y_t)
}

/// Generator pair and scene for the configured instance seed.
pub fn build_instance(config: &ExperimentConfig) -> Result<(GeneratorPair, Scene)> {
    let pair = build_pair(config)?;
    let (z_s, z_t) = instance_latents(config, &pair, config.z_seed)?;
    let scene = build_scene(config, &pair, &z_s, &z_t)?;
    Ok((pair, scene))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub source: f64,
    pub target: f64,
    pub crossover: f64,
    pub total: f64,
}

impl From<&LossRow> for LossSummary {
    fn from(r: &LossRow) -> Self {
        Self {
            source: r.source,
            target: r.target,
            crossover: r.crossover,
            total: r.total,
        }
    }
}

/// `x̂` compared against each reference image, plus `x̂` against itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub vs_source: MetricReport,
    pub vs_target: MetricReport,
    pub vs_crossover: MetricReport,
    pub self_check: MetricReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub overlap_area: f64,
    pub hole_area: f64,
    /// Intersection over union of the source and target masks.
    pub mask_iou: f64,
    /// Squared error of `x̂` per masked pixel against each image, inside the
    /// source mask and inside the target complement.
    pub masked_mse_to_source: f64,
    pub masked_mse_to_target: f64,
    pub complement_mse_to_source: f64,
    pub complement_mse_to_target: f64,
    pub iterations: usize,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: BTreeMap<String, String>,
    pub final_losses: Option<LossSummary>,
    pub metrics: MetricTable,
    pub diagnostics: Diagnostics,
    pub files: Vec<String>,
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub record: RunRecord,
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_loss_csv(path: &Path, losses: &[LossRow]) -> Result<()> {
    write_csv(
        path,
        "iter,L_s,L_t,L_c,total",
        losses.iter().map(|r| {
            format!("{},{},{},{},{}", r.iteration, num(r.source), num(r.target), num(r.crossover), num(r.total))
        }),
    )
}

/// Runs one synthesis and writes its images, `loss.csv` and `summary.json`
/// into `dir`.
pub fn execute_run(config: &ExperimentConfig, pair: &GeneratorPair, scene: &Scene, dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(dir)?;
    let started = Instant::now();
    let features = FeatureSource::from_config(&config.dds)?;
    let probe_backbone = Backbone::by_name(&config.dds.backbone)?;
    let record = run_dds_with(&config.dds, pair, scene, &features, &probe_backbone)?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let mut files = Vec::new();
    let mut image = |name: String, t: &crate::tensor::Tensor| -> Result<()> {
        write_image_png(&dir.join(&name), t)?;
        files.push(name);
        Ok(())
    };
    let x_c = scene.crossover()?;
    image("x_s.png".into(), &scene.x_s)?;
    image("x_t.png".into(), &scene.x_t)?;
    image("x_c.png".into(), &x_c)?;
    image("x_hat.png".into(), &record.final_image)?;
    image("x_hat_source.png".into(), &record.final_source_image)?;
    for s in &record.snapshots {
        image(format!("snapshot_{:05}_source.png", s.iteration), &s.source_image)?;
        image(format!("snapshot_{:05}_target.png", s.iteration), &s.target_image)?;
    }
    let y_t_bar = scene.y_t_bar();
    for (name, m) in [("y_s.png", &scene.y_s), ("y_t.png", &scene.y_t), ("y_t_bar.png", &y_t_bar)] {
        write_mask_png(&dir.join(name), m)?;
        files.push(name.to_string());
    }
    write_loss_csv(&dir.join("loss.csv"), &record.losses)?;
    files.push("loss.csv".into());

    let eval = Backbone::default_backbone();
    let x_hat = &record.final_image;
    let metrics = MetricTable {
        vs_source: MetricReport::compare(&eval, x_hat, &scene.x_s)?,
        vs_target: MetricReport::compare(&eval, x_hat, &scene.x_t)?,
        vs_crossover: MetricReport::compare(&eval, x_hat, &x_c)?,
        self_check: MetricReport::compare(&eval, x_hat, x_hat)?,
    };
    let coverage = mask_coverage(&scene.y_s, &y_t_bar)?;
    let diagnostics = Diagnostics {
        overlap_area: coverage.overlap_area,
        hole_area: coverage.hole_area,
        mask_iou: scene.y_s.iou(&scene.y_t)?,
        masked_mse_to_source: region_mse(x_hat, &scene.x_s, &scene.y_s)?,
        masked_mse_to_target: region_mse(x_hat, &scene.x_t, &scene.y_s)?,
        complement_mse_to_source: region_mse(x_hat, &scene.x_s, &y_t_bar)?,
        complement_mse_to_target: region_mse(x_hat, &scene.x_t, &y_t_bar)?,
        iterations: record.iterations(),
        wall_time_seconds,
    };
    files.push("summary.json".into());
    let summary = RunSummary {
        config: config.to_pairs(),
        final_losses: record.last_loss().map(LossSummary::from),
        metrics,
        diagnostics,
        files,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutput { summary, record })
}

/// Maps `f` over `items` on at most `jobs` threads, keeping input order.
fn run_parallel<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DdsError::Config(format!("cannot start {jobs} jobs: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Single paired run.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    let (pair, scene) = build_instance(config)?;
    Ok(execute_run(config, &pair, &scene, &config.out)?.summary)
}

/// Run with separately seeded source and target latents.
pub fn cmd_unpaired(config: &ExperimentConfig) -> Result<RunSummary> {
    if config.z_seed_target.is_none() && config.perturbation_norm.is_none() {
        return Err(DdsError::Config(
            "unpaired runs need 'z_seed_target' or 'perturbation_norm'".into(),
        ));
    }
    cmd_run(config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub weights: LossWeights,
    pub final_losses: Option<LossSummary>,
    pub fid_to_target: f64,
    pub complement_mse_to_target: f64,
}

/// One run per `(α, β, γ)` grid cell over a shared instance; writes
/// `sweep.csv` plus a subdirectory per cell.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let mut grid = Vec::new();
    for &source in &config.sweep_alpha {
        for &target in &config.sweep_beta {
            for &crossover in &config.sweep_gamma {
                grid.push(LossWeights {
                    source,
                    target,
                    crossover,
                });
            }
        }
    }
    if grid.is_empty() {
        return Err(DdsError::Config("sweep grid is empty".into()));
    }
    let (pair, scene) = build_instance(config)?;
    let cells: Vec<(usize, LossWeights)> = grid.into_iter().enumerate().collect();
    let rows = run_parallel(config.jobs, &cells, |(idx, w)| {
        let mut cell = config.clone();
        cell.dds.weights = *w;
        let out = execute_run(&cell, &pair, &scene, &config.out.join(format!("cell_{idx:03}")))?;
        Ok(SweepRow {
            weights: *w,
            final_losses: out.summary.final_losses,
            fid_to_target: out.summary.metrics.vs_target.fid,
            complement_mse_to_target: out.summary.diagnostics.complement_mse_to_target,
        })
    })?;
    fs::create_dir_all(&config.out)?;
    write_csv(
        &config.out.join("sweep.csv"),
        "alpha,beta,gamma,L_s,L_t,L_c,total,fid_to_target,complement_mse_to_target",
        rows.iter().map(|r| {
            let l = r.final_losses.map_or([f64::NAN; 4], |l| [l.source, l.target, l.crossover, l.total]);
            let mut line = format!("{},{},{}", num(r.weights.source), num(r.weights.target), num(r.weights.crossover));
            for v in l.into_iter().chain([r.fid_to_target, r.complement_mse_to_target]) {
                let _ = write!(line, ",{}", num(v));
            }
            line
        }),
    )?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidRow {
    pub iteration: usize,
    pub fid_to_source: f64,
    pub fid_to_target: f64,
}

/// Pooled embeddings of `count` fresh renderings of each domain.
pub fn reference_embeddings(
    config: &ExperimentConfig,
    pair: &GeneratorPair,
    backbone: &Backbone,
    count: usize,
) -> Result<(FeatureSample, FeatureSample)> {
    let mut source = Vec::with_capacity(count);
    let mut target = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let z = sample_latent(config.z_seed.wrapping_add(REFERENCE_SEED_OFFSET + i), pair.latent_dim())?;
        let (s, t) = pair.images(&z)?;
        source.push(backbone.pooled_embedding(&s)?);
        target.push(backbone.pooled_embedding(&t)?);
    }
    Ok((FeatureSample::new(source)?, FeatureSample::new(target)?))
}

/// FID of the probed batch population against both reference sets at
/// every probe iteration shared by all runs.
pub fn fid_curve(records: &[RunRecord], reference_source: &FeatureSample, reference_target: &FeatureSample) -> Result<Vec<FidRow>> {
    if records.len() < 2 {
        return Err(DdsError::TooFewSamples(records.len()));
    }
    let iterations: Vec<usize> = records[0].probes.iter().map(|p| p.iteration).collect();
    iterations
        .iter()
        .enumerate()
        .map(|(k, &iteration)| {
            let rows = records
                .iter()
                .map(|r| {
                    r.probes
                        .get(k)
                        .filter(|p| p.iteration == iteration)
                        .map(|p| p.embedding.clone())
                        .ok_or_else(|| DdsError::InvalidArgument(format!("missing probe at iteration {iteration}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = FeatureSample::new(rows)?;
            Ok(FidRow {
                iteration,
                fid_to_source: fid(&batch, reference_source)?,
                fid_to_target: fid(&batch, reference_target)?,
            })
        })
        .collect()
}

/// Runs a batch of instances with FID probes and writes `fid_curve.csv`.
pub fn cmd_fidcurve(config: &ExperimentConfig) -> Result<Vec<FidRow>> {
    if config.batch_size < 2 {
        return Err(DdsError::TooFewSamples(config.batch_size));
    }
    if !config.dds.fid_probe_every.is_some_and(|k| k >= 1) {
        return Err(DdsError::Config("fidcurve needs 'fid_probe_every' >= 1".into()));
    }
    let pair = build_pair(config)?;
    let seeds: Vec<u64> = (0..config.batch_size as u64).collect();
    let records = run_parallel(config.jobs, &seeds, |&b| {
        let (z_s, z_t) = instance_latents(config, &pair, config.z_seed.wrapping_add(b))?;
        let scene = build_scene(config, &pair, &z_s, &z_t)?;
        let mut dds = config.dds.clone();
        dds.seed = dds.seed.wrapping_add(b);
        let features = FeatureSource::from_config(&dds)?;
        run_dds_with(&dds, &pair, &scene, &features, &Backbone::by_name(&dds.backbone)?)
    })?;
    let backbone = Backbone::by_name(&config.dds.backbone)?;
    let (ref_s, ref_t) = reference_embeddings(config, &pair, &backbone, config.reference_count)?;
    let rows = fid_curve(&records, &ref_s, &ref_t)?;
    fs::create_dir_all(&config.out)?;
    write_csv(
        &config.out.join("fid_curve.csv"),
        "iteration,fid_to_source,fid_to_target",
        rows.iter()
            .map(|r| format!("{},{},{}", r.iteration, num(r.fid_to_source), num(r.fid_to_target))),
    )?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneRow {
    pub backbone: String,
    pub final_losses: Option<LossSummary>,
    pub metrics: MetricTable,
}

/// The same instance optimized under each backbone; writes
/// `backbones.csv` plus a subdirectory per backbone.
pub fn cmd_backbones(config: &ExperimentConfig) -> Result<Vec<BackboneRow>> {
    let names = config.backbone_names();
    let (pair, scene) = build_instance(config)?;
    let rows = run_parallel(config.jobs, &names, |name| {
        let mut cell = config.clone();
        cell.dds.backbone = name.clone();
        let out = execute_run(&cell, &pair, &scene, &config.out.join(format!("backbone_{name}")))?;
        Ok(BackboneRow {
            backbone: name.clone(),
            final_losses: out.summary.final_losses,
            metrics: out.summary.metrics,
        })
    })?;
    fs::create_dir_all(&config.out)?;
    write_csv(
        &config.out.join("backbones.csv"),
        "backbone,total,fid_to_source,fid_to_target,ssim_to_target,psnr_to_target",
        rows.iter().map(|r| {
            let total = r.final_losses.map_or(f64::NAN, |l| l.total);
            let m = &r.metrics;
            format!(
                "{},{},{},{},{},{}",
                r.backbone,
                num(total),
                num(m.vs_source.fid),
                num(m.vs_target.fid),
                num(m.vs_target.ssim),
                num(m.vs_target.psnr)
            )
        }),
    )?;
    Ok(rows)
}

/// Compares two image files.
pub fn cmd_metrics(a: &Path, b: &Path) -> Result<MetricReport> {
    MetricReport::compare(&Backbone::default_backbone(), &read_image_png(a)?, &read_image_png(b)?)
}
