//! Flat `key = value` experiment configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dds::{CrossoverNorm, DdsConfig, FeatureSourceKind, InitMode, LossWeights};
use crate::error::{DdsError, Result};
use crate::generators::DEFAULT_IMAGE_SIZE;
use crate::segmentation::Part;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Command {
    #[default]
    Run,
    Sweep,
    FidCurve,
    Backbones,
    Unpaired,
    Metrics,
}

impl Command {
    const NAMES: [(Command, &'static str); 6] = [
        (Command::Run, "run"),
        (Command::Sweep, "sweep"),
        (Command::FidCurve, "fidcurve"),
        (Command::Backbones, "backbones"),
        (Command::Unpaired, "unpaired"),
        (Command::Metrics, "metrics"),
    ];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GeneratorChoice {
    #[default]
    Analytic,
    Neural,
}

/// How the source and target masks are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskSource {
    /// Analytic blob supports selected by `part`.
    #[default]
    Analytic,
    /// `mask_source_path` and `mask_target_path` PNG files.
    Png,
    /// `threshold_channel` of each image above `threshold_tau`.
    Threshold,
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub dds: DdsConfig,
    pub generator: GeneratorChoice,
    pub generator_seed: u64,
    pub perturbation_scale: f64,
    pub image_size: usize,
    pub mask_source: MaskSource,
    pub part: Part,
    pub mask_source_path: Option<PathBuf>,
    pub mask_target_path: Option<PathBuf>,
    pub threshold_channel: usize,
    pub threshold_tau: f64,
    /// Seed of the paired latent, and of the source latent when unpaired.
    pub z_seed: u64,
    /// Seed of the target latent (unpaired runs only).
    pub z_seed_target: Option<u64>,
    /// When set, the unpaired target latent is the source latent moved by
    /// this distance in a direction drawn from `z_seed_target`.
    pub perturbation_norm: Option<f64>,
    pub sweep_alpha: Vec<f64>,
    pub sweep_beta: Vec<f64>,
    pub sweep_gamma: Vec<f64>,
    pub batch_size: usize,
    pub reference_count: usize,
    pub backbones: Vec<String>,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            command: Command::Run,
            dds: DdsConfig::default(),
            generator: GeneratorChoice::Analytic,
            generator_seed: 7,
            perturbation_scale: 0.1,
            image_size: DEFAULT_IMAGE_SIZE,
            mask_source: MaskSource::Analytic,
            part: Part::Blob(0),
            mask_source_path: None,
            mask_target_path: None,
            threshold_channel: 0,
            threshold_tau: 0.0,
            z_seed: 0,
            z_seed_target: None,
            perturbation_norm: None,
            sweep_alpha: vec![w.source],
            sweep_beta: vec![w.target],
            sweep_gamma: vec![w.crossover],
            batch_size: 10,
            reference_count: 64,
            backbones: Vec::new(),
            jobs: 1,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DdsError::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_enum<T: Copy>(key: &str, value: &str, names: &[(T, &str)]) -> Result<T> {
    names
        .iter()
        .find(|(_, n)| *n == value)
        .map(|(v, _)| *v)
        .ok_or_else(|| {
            let allowed: Vec<&str> = names.iter().map(|(_, n)| *n).collect();
            DdsError::Config(format!("bad value '{value}' for key '{key}' (expected one of {allowed:?})"))
        })
}

fn name_of<T: PartialEq>(value: T, names: &[(T, &'static str)]) -> &'static str {
    names.iter().find(|(v, _)| *v == value).map(|(_, n)| *n).expect("every variant named")
}

const GENERATORS: [(GeneratorChoice, &str); 2] =
    [(GeneratorChoice::Analytic, "analytic"), (GeneratorChoice::Neural, "neural")];
const MASK_SOURCES: [(MaskSource, &str); 3] = [
    (MaskSource::Analytic, "analytic"),
    (MaskSource::Png, "png"),
    (MaskSource::Threshold, "threshold"),
];
const FEATURE_SOURCES: [(FeatureSourceKind, &str); 2] = [
    (FeatureSourceKind::Backbone, "backbone"),
    (FeatureSourceKind::GeneratorIntermediate, "generator-intermediate"),
];
const CROSSOVER_NORMS: [(CrossoverNorm, &str); 2] = [(CrossoverNorm::Mse, "mse"), (CrossoverNorm::L2, "l2")];
const INIT_MODES: [(InitMode, &str); 2] = [(InitMode::Random, "random"), (InitMode::FromZStar, "from-z-star")];

impl FromStr for Command {
    type Err = DdsError;

    fn from_str(s: &str) -> Result<Self> {
        parse_enum("command", s, &Command::NAMES)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(name_of(*self, &Command::NAMES))
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn optional<T: ToString>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DdsError::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DdsError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dds;
        match key {
            "command" => self.command = value.parse()?,
            "alpha" => d.weights.source = parse(key, value)?,
            "beta" => d.weights.target = parse(key, value)?,
            "gamma" => d.weights.crossover = parse(key, value)?,
            "lr" => d.lr = parse(key, value)?,
            "max_iterations" => d.max_iterations = parse(key, value)?,
            "backbone" => d.backbone = value.to_string(),
            "feature_source" => d.feature_source = parse_enum(key, value, &FEATURE_SOURCES)?,
            "crossover_norm" => d.crossover_norm = parse_enum(key, value, &CROSSOVER_NORMS)?,
            "init" => d.init = parse_enum(key, value, &INIT_MODES)?,
            "snapshot_iters" => d.snapshot_iterations = parse_list(key, value)?,
            "fid_probe_every" => d.fid_probe_every = parse_optional(key, value)?,
            "seed" => d.seed = parse(key, value)?,
            "generator" => self.generator = parse_enum(key, value, &GENERATORS)?,
            "generator_seed" => self.generator_seed = parse(key, value)?,
            "perturbation_scale" => self.perturbation_scale = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "mask_source" => self.mask_source = parse_enum(key, value, &MASK_SOURCES)?,
            "part" => self.part = value.parse()?,
            "mask_source_path" => self.mask_source_path = parse_optional(key, value)?,
            "mask_target_path" => self.mask_target_path = parse_optional(key, value)?,
            "threshold_channel" => self.threshold_channel = parse(key, value)?,
            "threshold_tau" => self.threshold_tau = parse(key, value)?,
            "z_seed" => self.z_seed = parse(key, value)?,
            "z_seed_target" => self.z_seed_target = parse_optional(key, value)?,
            "perturbation_norm" => self.perturbation_norm = parse_optional(key, value)?,
            "sweep_alpha" => self.sweep_alpha = parse_list(key, value)?,
            "sweep_beta" => self.sweep_beta = parse_list(key, value)?,
            "sweep_gamma" => self.sweep_gamma = parse_list(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "reference_count" => self.reference_count = parse(key, value)?,
            "backbones" => self.backbones = parse_list(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(DdsError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`Self::parse`] accepts.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let d = &self.dds;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string());
        [
            ("command", self.command.to_string()),
            ("alpha", d.weights.source.to_string()),
            ("beta", d.weights.target.to_string()),
            ("gamma", d.weights.crossover.to_string()),
            ("lr", d.lr.to_string()),
            ("max_iterations", d.max_iterations.to_string()),
            ("backbone", d.backbone.clone()),
            ("feature_source", name_of(d.feature_source, &FEATURE_SOURCES).into()),
            ("crossover_norm", name_of(d.crossover_norm, &CROSSOVER_NORMS).into()),
            ("init", name_of(d.init, &INIT_MODES).into()),
            ("snapshot_iters", join(&d.snapshot_iterations)),
            ("fid_probe_every", optional(&d.fid_probe_every)),
            ("seed", d.seed.to_string()),
            ("generator", name_of(self.generator, &GENERATORS).into()),
            ("generator_seed", self.generator_seed.to_string()),
            ("perturbation_scale", self.perturbation_scale.to_string()),
            ("image_size", self.image_size.to_string()),
            ("mask_source", name_of(self.mask_source, &MASK_SOURCES).into()),
            ("part", self.part.to_string()),
            ("mask_source_path", path(&self.mask_source_path)),
            ("mask_target_path", path(&self.mask_target_path)),
            ("threshold_channel", self.threshold_channel.to_string()),
            ("threshold_tau", self.threshold_tau.to_string()),
            ("z_seed", self.z_seed.to_string()),
            ("z_seed_target", optional(&self.z_seed_target)),
            ("perturbation_norm", optional(&self.perturbation_norm)),
            ("sweep_alpha", join(&self.sweep_alpha)),
            ("sweep_beta", join(&self.sweep_beta)),
            ("sweep_gamma", join(&self.sweep_gamma)),
            ("batch_size", self.batch_size.to_string()),
            ("reference_count", self.reference_count.to_string()),
            ("backbones", join(&self.backbones)),
            ("jobs", self.jobs.to_string()),
            ("out", self.out.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in pairs {
            config.set(k, v)?;
        }
        Ok(config)
    }

    /// Backbones compared by the `backbones` command: the configured list,
    /// or the whole catalog when empty.
    pub fn backbone_names(&self) -> Vec<String> {
        if self.backbones.is_empty() {
            crate::features::backbone_catalog().into_iter().map(|s| s.name).collect()
        } else {
            self.backbones.clone()
        }
    }
}
