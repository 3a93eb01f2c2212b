//! Resolved run settings and the `key = value` echo format.
//!
//! Values resolve in order: built-in defaults, then a `--config` file, then
//! command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use dinn::model::ModelConfig;
use dinn::training::{AdamConfig, Precision, TrainConfig, CLIP_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub frames: usize,
    pub subjects: usize,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub lambda: f64,
    pub batch: usize,
    pub pretrain_epochs: usize,
    pub adversarial_epochs: usize,
    pub lr1: f64,
    pub lr2: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub ablation: bool,
    pub precision: Precision,
    pub lrelu_alpha: f64,
    pub tau: f64,
    pub dump_images: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            frames: 600,
            subjects: 5,
            out: PathBuf::from("."),
            dataset: None,
            checkpoint: None,
            lambda: t.lambda,
            batch: t.batch_size,
            pretrain_epochs: t.epochs_pretrain,
            adversarial_epochs: t.epochs_adversarial,
            lr1: t.lr_feature_generator,
            lr2: t.lr_discriminator,
            decay_factor: t.decay_factor,
            decay_period: t.decay_period,
            ablation: false,
            precision: Precision::F32,
            lrelu_alpha: t.model.lrelu_alpha,
            tau: dinn::eval::DEFAULT_TAU,
            dump_images: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_precision(value: &str) -> Result<Precision> {
    match value {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => bail!("invalid value {value:?} for precision: expected f32 or f64"),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Keys in echo order.
    pub const KEYS: [&'static str; 19] = [
        "seed",
        "frames",
        "subjects",
        "out",
        "dataset",
        "checkpoint",
        "lambda",
        "batch",
        "pretrain_epochs",
        "adversarial_epochs",
        "lr1",
        "lr2",
        "decay_factor",
        "decay_period",
        "ablation",
        "precision",
        "lrelu_alpha",
        "tau",
        "dump_images",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "subjects" => self.subjects = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "dataset" => self.dataset = optional_path(value),
            "checkpoint" => self.checkpoint = optional_path(value),
            "lambda" => self.lambda = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "adversarial_epochs" => self.adversarial_epochs = parse(key, value)?,
            "lr1" => self.lr1 = parse(key, value)?,
            "lr2" => self.lr2 = parse(key, value)?,
            "decay_factor" => self.decay_factor = parse(key, value)?,
            "decay_period" => self.decay_period = parse(key, value)?,
            "ablation" => self.ablation = parse(key, value)?,
            "precision" => self.precision = parse_precision(value)?,
            "lrelu_alpha" => self.lrelu_alpha = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "dump_images" => self.dump_images = parse(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        match key {
            "seed" => self.seed.to_string(),
            "frames" => self.frames.to_string(),
            "subjects" => self.subjects.to_string(),
            "out" => self.out.display().to_string(),
            "dataset" => path(&self.dataset),
            "checkpoint" => path(&self.checkpoint),
            "lambda" => self.lambda.to_string(),
            "batch" => self.batch.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "adversarial_epochs" => self.adversarial_epochs.to_string(),
            "lr1" => self.lr1.to_string(),
            "lr2" => self.lr2.to_string(),
            "decay_factor" => self.decay_factor.to_string(),
            "decay_period" => self.decay_period.to_string(),
            "ablation" => self.ablation.to_string(),
            "precision" => self.precision.to_string(),
            "lrelu_alpha" => self.lrelu_alpha.to_string(),
            "tau" => self.tau.to_string(),
            "dump_images" => self.dump_images.to_string(),
            _ => unreachable!("keys come from KEYS"),
        }
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{origin}:{}: expected `key = value`", n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset.dset"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.dinn"))
    }

    pub fn model_config(&self, domains: usize) -> ModelConfig {
        ModelConfig {
            domains,
            lrelu_alpha: self.lrelu_alpha,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self, domains: usize) -> TrainConfig {
        TrainConfig {
            lr_feature_generator: self.lr1,
            lr_discriminator: self.lr2,
            lambda: self.lambda,
            batch_size: self.batch,
            epochs_pretrain: self.pretrain_epochs,
            epochs_adversarial: self.adversarial_epochs,
            decay_factor: self.decay_factor,
            decay_period: self.decay_period,
            seed: self.seed,
            precision: self.precision,
            ablation: self.ablation,
            adam: AdamConfig::default(),
            clip_eps: CLIP_EPS,
            model: self.model_config(domains),
        }
    }
}
