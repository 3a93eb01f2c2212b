//! Losses, Adam, and the two-stage training procedure.
//!
//! Both stages run two optimizers on every batch. Optimizer one owns the
//! feature extractor and generator, optimizer two owns the discriminator.
//! In pre-training the feature extractor follows `∂L_g/∂θ_f`; in the
//! adversarial stage it follows `∂L_g/∂θ_f − λ·∂L_d/∂θ_f`, i.e. it descends
//! the joint loss `L = L_g − λ·L_d` while the discriminator keeps descending
//! `L_d`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::model::{self, ModelConfig, ModelParams, CSI_SHAPE, IMAGE_SHAPE};
use crate::synth::{Dataset, DatasetSplit};
use crate::tensor::{fmt_shape, Real, Tensor};

/// Probabilities are clipped to `[CLIP_EPS, 1 − CLIP_EPS]` before either
/// cross-entropy.
pub const CLIP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Adversarial,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Adversarial => "adversarial",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Initial rate of the feature-extractor + generator optimizer.
    pub lr_feature_generator: f64,
    /// Initial rate of the discriminator optimizer.
    pub lr_discriminator: f64,
    /// Adversarial weight used in the adversarial stage.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs_pretrain: usize,
    pub epochs_adversarial: usize,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Train with λ = 0 in both stages.
    pub ablation: bool,
    pub adam: AdamConfig,
    pub clip_eps: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_feature_generator: 1e-3,
            lr_discriminator: 1e-4,
            lambda: 0.1,
            batch_size: 32,
            epochs_pretrain: 6,
            epochs_adversarial: 20,
            decay_factor: 0.95,
            decay_period: 5,
            seed: 0,
            precision: Precision::F32,
            ablation: false,
            adam: AdamConfig::default(),
            clip_eps: CLIP_EPS,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_pretrain + self.epochs_adversarial
    }

    pub fn stage(&self, epoch: usize) -> Stage {
        if epoch < self.epochs_pretrain {
            Stage::Pretrain
        } else {
            Stage::Adversarial
        }
    }

    /// λ in effect for a stage.
    pub fn lambda_for(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Pretrain => 0.0,
            Stage::Adversarial if self.ablation => 0.0,
            Stage::Adversarial => self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr1", self.lr_feature_generator)?;
        positive("lr2", self.lr_discriminator)?;
        positive("clip epsilon", self.clip_eps)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.epochs_adversarial > 0 && !self.ablation && self.lambda == 0.0 {
            return Err(Error::Config(
                "the adversarial stage needs lambda > 0 (use the ablation to train with lambda = 0)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.total_epochs() == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_period == 0 {
            return Err(Error::Config(format!(
                "learning-rate decay {} every {} epochs is invalid",
                self.decay_factor, self.decay_period
            )));
        }
        Ok(())
    }
}

/// `initial · factor^⌊epoch / period⌋`.
pub fn lr_schedule(initial: f64, epoch: usize, factor: f64, period: usize) -> f64 {
    initial * factor.powi((epoch / period) as i32)
}

fn cross_entropy_sum<T: Real>(pred: &[T], target: &[T], eps: f64) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.to_f64().clamp(eps, 1.0 - eps);
            let t = t.to_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

fn check_probabilities<T: Real>(what: &str, values: &[T]) -> Result<()> {
    match values.iter().find(|v| !(v.to_f64() >= 0.0 && v.to_f64() <= 1.0)) {
        Some(v) => Err(Error::ModelDefect(format!("{what} value {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn check_one_hot<T: Real>(labels: &Tensor<T>) -> Result<()> {
    let width = *labels.shape().last().unwrap_or(&1);
    for row in labels.data().chunks(width) {
        let ones = row.iter().filter(|v| v.to_f64() == 1.0).count();
        let zeros = row.iter().filter(|v| v.to_f64() == 0.0).count();
        if ones != 1 || zeros + 1 != width {
            return Err(Error::InvalidArgument(format!("domain label {row:?} is not one-hot")));
        }
    }
    Ok(())
}

/// Pixel cross-entropy summed per image and averaged over the batch
/// (leading axis).
pub fn loss_generation<T: Real>(y: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<f64> {
    if y.shape() != target.shape() || y.rank() < 2 {
        return Err(Error::shape(
            "loss_generation",
            fmt_shape(y.shape()),
            fmt_shape(target.shape()),
        ));
    }
    check_probabilities("generated pixel", y.data())?;
    let m = y.shape()[0] as f64;
    Ok(cross_entropy_sum(y.data(), target.data(), eps) / m)
}

/// Domain cross-entropy over all `K` outputs, averaged over the batch.
pub fn loss_domain<T: Real>(d: &Tensor<T>, labels: &Tensor<T>, eps: f64) -> Result<f64> {
    if d.shape() != labels.shape() || d.rank() != 2 {
        return Err(Error::shape(
            "loss_domain",
            fmt_shape(d.shape()),
            fmt_shape(labels.shape()),
        ));
    }
    check_probabilities("domain probability", d.data())?;
    check_one_hot(labels)?;
    let m = d.shape()[0] as f64;
    Ok(cross_entropy_sum(d.data(), labels.data(), eps) / m)
}

/// `L = L_g − λ·L_d`.
pub fn loss_joint(loss_g: f64, loss_d: f64, lambda: f64) -> f64 {
    loss_g - lambda * loss_d
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Steps taken so far.
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new<'p>(params: impl IntoIterator<Item = &'p Tensor<T>>, config: AdamConfig) -> Self {
        let m: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `params` at rate `lr`.
    pub fn step<'p>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut Tensor<T>>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        let params: Vec<_> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::shape("adam", fmt_shape(m.shape()), fmt_shape(g.shape())));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step * *mv / ((*vv * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Optimizer one (feature extractor + generator) and optimizer two
/// (discriminator). They never share state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers<T> {
    pub feature_generator: AdamState<T>,
    pub discriminator: AdamState<T>,
}

impl<T: Real> Optimizers<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Optimizers {
            feature_generator: AdamState::new(
                params.feature.iter().chain(params.generator.iter()).map(|p| &p.value),
                config,
            ),
            discriminator: AdamState::new(params.discriminator.iter().map(|p| &p.value), config),
        }
    }
}

/// A training mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `M×30×20×4`.
    pub csi: Tensor<T>,
    /// `M×120×160×1` in {0, 1}.
    pub skeletons: Tensor<T>,
    /// `M×K` one-hot.
    pub labels: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples(data: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let k = data.domains();
        let m = indices.len();
        let mut csi = Vec::with_capacity(m * model::CSI_SHAPE.iter().product::<usize>());
        let mut skeletons = Vec::with_capacity(m * model::IMAGE_PIXELS);
        let mut labels = vec![T::ZERO; m * k];
        for (row, &i) in indices.iter().enumerate() {
            let s = &data.samples[i];
            let label = s
                .label
                .ok_or_else(|| Error::Config(format!("sample {i} (subject {}) has no domain label", s.subject)))?;
            csi.extend(s.csi.iter().map(|&v| T::from_f64(v as f64)));
            skeletons.extend(s.skeleton.iter().map(|&v| T::from_f64(v as f64)));
            labels[row * k + label] = T::ONE;
        }
        let mut csi_shape = vec![m];
        csi_shape.extend_from_slice(&CSI_SHAPE);
        let mut img_shape = vec![m];
        img_shape.extend_from_slice(&IMAGE_SHAPE);
        Ok(Batch {
            csi: Tensor::new(csi_shape, csi)?,
            skeletons: Tensor::new(img_shape, skeletons)?,
            labels: Tensor::new(vec![m, k], labels)?,
        })
    }

    pub fn len(&self) -> usize {
        self.csi.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients one step applies, and the batch losses they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGradients<T> {
    /// `∂L_g/∂θ_f − λ·∂L_d/∂θ_f`.
    pub feature: Vec<Tensor<T>>,
    /// `∂L_g/∂θ_g`.
    pub generator: Vec<Tensor<T>>,
    /// `∂L_d/∂θ_d`.
    pub discriminator: Vec<Tensor<T>>,
    pub loss_g: f64,
    pub loss_d: f64,
}

fn take_all<T: Real>(grads: &mut Gradients<T>, ids: &[NodeId]) -> Vec<Tensor<T>> {
    ids.iter()
        .map(|&id| grads.take(id).expect("trainable leaf has a gradient"))
        .collect()
}

/// Forward pass plus the two backward passes (from `L_g` and from `L_d`) of
/// one batch.
pub fn step_gradients<T: Real>(
    batch: &Batch<T>,
    params: &ModelParams<T>,
    lambda: f64,
    clip_eps: f64,
) -> Result<StepGradients<T>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let k = params.config.domains;
    if batch.labels.shape() != [batch.len(), k] {
        return Err(Error::Config(format!(
            "labels are {} but the discriminator separates {k} domains",
            fmt_shape(batch.labels.shape())
        )));
    }
    check_one_hot(&batch.labels)?;
    let m = batch.len();
    let scale = T::from_f64(1.0 / m as f64);
    let eps = T::from_f64(clip_eps);

    let mut graph = Graph::new();
    let fwd = model::forward(&mut graph, params, batch.csi.clone(), None)?;
    check_probabilities("generated pixel", graph.value(fwd.y).data())?;
    check_probabilities("domain probability", graph.value(fwd.d).data())?;
    let lg = graph.binary_cross_entropy(fwd.y, batch.skeletons.clone(), scale, eps)?;
    let ld = graph.binary_cross_entropy(fwd.d, batch.labels.clone(), scale, eps)?;
    let mut from_g = graph.backward(lg)?;
    let mut from_d = graph.backward(ld)?;

    let mut feature = take_all(&mut from_g, &fwd.params.feature);
    let generator = take_all(&mut from_g, &fwd.params.generator);
    let discriminator = take_all(&mut from_d, &fwd.params.discriminator);
    if lambda != 0.0 {
        let adversarial = take_all(&mut from_d, &fwd.params.feature);
        let l = T::from_f64(lambda);
        for (f, a) in feature.iter_mut().zip(&adversarial) {
            for (fv, &av) in f.data_mut().iter_mut().zip(a.data()) {
                *fv -= l * av;
            }
        }
    }
    Ok(StepGradients {
        feature,
        generator,
        discriminator,
        loss_g: graph.value(lg).data()[0].to_f64(),
        loss_d: graph.value(ld).data()[0].to_f64(),
    })
}

/// Learning rates and λ for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub lr_feature_generator: f64,
    pub lr_discriminator: f64,
    pub lambda: f64,
    pub clip_eps: f64,
}

/// Batch losses of one step, measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss_g: f64,
    pub loss_d: f64,
    pub loss_joint: f64,
}

fn apply<T: Real>(
    grads: StepGradients<T>,
    params: &mut ModelParams<T>,
    opts: &mut Optimizers<T>,
    settings: &StepSettings,
) -> Result<StepReport> {
    let mut fg = grads.feature;
    fg.extend(grads.generator);
    let fg_params = params
        .feature
        .iter_mut()
        .chain(params.generator.iter_mut())
        .map(|p| &mut p.value);
    opts.feature_generator
        .step(fg_params, &fg, settings.lr_feature_generator)?;
    let d_params = params.discriminator.iter_mut().map(|p| &mut p.value);
    opts.discriminator
        .step(d_params, &grads.discriminator, settings.lr_discriminator)?;
    Ok(StepReport {
        loss_g: grads.loss_g,
        loss_d: grads.loss_d,
        loss_joint: loss_joint(grads.loss_g, grads.loss_d, settings.lambda),
    })
}

/// Pre-training update: `θ_f, θ_g` descend `L_g`; `θ_d` descends `L_d`.
/// `settings.lambda` is ignored.
pub fn pretrain_step<T: Real>(
    batch: &Batch<T>,
    params: &mut ModelParams<T>,
    opts: &mut Optimizers<T>,
    settings: &StepSettings,
) -> Result<StepReport> {
    let settings = StepSettings {
        lambda: 0.0,
        ..*settings
    };
    let grads = step_gradients(batch, params, 0.0, settings.clip_eps)?;
    apply(grads, params, opts, &settings)
}

/// Adversarial update: `θ_f` descends `L_g − λ·L_d`, `θ_g` descends `L_g`,
/// `θ_d` descends `L_d`. With `λ = 0` this is exactly [`pretrain_step`].
pub fn adversarial_step<T: Real>(
    batch: &Batch<T>,
    params: &mut ModelParams<T>,
    opts: &mut Optimizers<T>,
    settings: &StepSettings,
) -> Result<StepReport> {
    let grads = step_gradients(batch, params, settings.lambda, settings.clip_eps)?;
    apply(grads, params, opts, settings)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax matches `labels`.
pub fn accuracy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    let width = probs.shape()[probs.rank() - 1];
    let hits = probs
        .data()
        .chunks(width)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    hits as f64 / labels.len() as f64
}

const INFERENCE_BATCH: usize = 64;

fn csi_batch<T: Real>(data: &Dataset, indices: &[usize]) -> Result<Tensor<T>> {
    let mut values = Vec::with_capacity(indices.len() * crate::synth::CSI_LEN);
    for &i in indices {
        values.extend(data.samples[i].csi.iter().map(|&v| T::from_f64(v as f64)));
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(&CSI_SHAPE);
    Tensor::new(shape, values)
}

/// Discriminator accuracy over labeled samples.
pub fn discriminator_accuracy<T: Real>(params: &ModelParams<T>, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0usize;
    for chunk in indices.chunks(INFERENCE_BATCH) {
        let labels = chunk
            .iter()
            .map(|&i| {
                data.samples[i]
                    .label
                    .ok_or_else(|| Error::InvalidArgument(format!("sample {i} has no domain label")))
            })
            .collect::<Result<Vec<_>>>()?;
        let z = model::extract_features(&csi_batch::<T>(data, chunk)?, params)?;
        let d = model::discriminate(&z, params)?;
        hits += (accuracy(&d, &labels) * labels.len() as f64).round() as usize;
    }
    Ok(hits as f64 / indices.len() as f64)
}

/// Generator output for each sample, as `120×160` row-major probabilities.
pub fn predict_skeletons<T: Real>(params: &ModelParams<T>, data: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(INFERENCE_BATCH) {
        let z = model::extract_features(&csi_batch::<T>(data, chunk)?, params)?;
        let y = model::generate(&z, params)?;
        for img in y.data().chunks(model::IMAGE_PIXELS) {
            out.push(img.iter().map(|v| v.to_f64()).collect());
        }
    }
    Ok(out)
}

/// One epoch's summary.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean over the epoch's batches.
    pub loss_g: f64,
    pub loss_d: f64,
    /// `loss_g − λ·loss_d` for the epoch's λ.
    pub loss_joint: f64,
    /// Discriminator accuracy on the held-out source samples after the
    /// epoch.
    pub disc_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,stage,loss_g,loss_d,loss_joint,disc_acc";

pub fn metrics_csv(history: &[LossRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.stage, r.loss_g, r.loss_d, r.loss_joint, r.disc_acc
        ));
    }
    out
}

/// Resumable two-stage trainer over a dataset's training split.
#[derive(Clone)]
pub struct Trainer<'d, T> {
    data: &'d Dataset,
    split: &'d DatasetSplit,
    config: TrainConfig,
    params: ModelParams<T>,
    opts: Optimizers<T>,
    rng: ChaCha8Rng,
    history: Vec<LossRecord>,
}

const SHUFFLE_STREAM: u64 = 7;

impl<'d, T: Real> Trainer<'d, T> {
    pub fn new(data: &'d Dataset, split: &'d DatasetSplit, config: TrainConfig) -> Result<Self> {
        let params = ModelParams::init(config.seed, &config.model)?;
        Self::with_params(data, split, config, params)
    }

    pub fn with_params(
        data: &'d Dataset,
        split: &'d DatasetSplit,
        config: TrainConfig,
        params: ModelParams<T>,
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() || split.train.is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        if data.domains() != config.model.domains {
            return Err(Error::Config(format!(
                "dataset has {} source domains but the model expects {}",
                data.domains(),
                config.model.domains
            )));
        }
        if params.config != config.model {
            return Err(Error::Config(
                "parameters were built for a different model config".into(),
            ));
        }
        for &i in split.train.iter().chain(&split.test_source) {
            match data.samples.get(i) {
                Some(s) if s.label.is_some() => {}
                Some(_) => return Err(Error::Config(format!("sample {i} is unlabeled but listed as source"))),
                None => return Err(Error::Config(format!("split index {i} out of range"))),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SHUFFLE_STREAM);
        Ok(Trainer {
            data,
            split,
            opts: Optimizers::new(&params, config.adam),
            config,
            params,
            rng,
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.epoch() >= self.config.total_epochs()
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn optimizers(&self) -> &Optimizers<T> {
        &self.opts
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Switches the remaining adversarial epochs to λ = 0 (or back). Only
    /// allowed before the adversarial stage starts, so the result matches a
    /// run configured that way from the beginning.
    pub fn set_ablation(&mut self, ablation: bool) -> Result<()> {
        if self.epoch() > self.config.epochs_pretrain {
            return Err(Error::Config("the adversarial stage has already started".into()));
        }
        let mut config = self.config.clone();
        config.ablation = ablation;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<LossRecord> {
        if self.is_finished() {
            return Err(Error::Config("training schedule already completed".into()));
        }
        let epoch = self.epoch();
        let stage = self.config.stage(epoch);
        let c = &self.config;
        let settings = StepSettings {
            lr_feature_generator: lr_schedule(c.lr_feature_generator, epoch, c.decay_factor, c.decay_period),
            lr_discriminator: lr_schedule(c.lr_discriminator, epoch, c.decay_factor, c.decay_period),
            lambda: c.lambda_for(stage),
            clip_eps: c.clip_eps,
        };
        let mut order = self.split.train.clone();
        order.shuffle(&mut self.rng);

        let (mut sum_g, mut sum_d, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let batch = Batch::from_samples(self.data, chunk)?;
            let report = match stage {
                Stage::Pretrain => pretrain_step(&batch, &mut self.params, &mut self.opts, &settings)?,
                Stage::Adversarial => adversarial_step(&batch, &mut self.params, &mut self.opts, &settings)?,
            };
            sum_g += report.loss_g;
            sum_d += report.loss_d;
            batches += 1;
        }
        let loss_g = sum_g / batches as f64;
        let loss_d = sum_d / batches as f64;
        let record = LossRecord {
            epoch,
            stage,
            loss_g,
            loss_d,
            loss_joint: loss_joint(loss_g, loss_d, settings.lambda),
            disc_acc: discriminator_accuracy(&self.params, self.data, &self.split.test_source)?,
        };
        self.history.push(record.clone());
        Ok(record)
    }

    pub fn run(mut self) -> Result<TrainOutcome<T>> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(self.into_outcome())
    }

    pub fn into_outcome(self) -> TrainOutcome<T> {
        TrainOutcome {
            params: self.params,
            history: self.history,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub history: Vec<LossRecord>,
}

impl<T> TrainOutcome<T> {
    /// Highest held-out discriminator accuracy during pre-training.
    pub fn pretrain_peak_accuracy(&self) -> Option<f64> {
        self.history
            .iter()
            .filter(|r| r.stage == Stage::Pretrain)
            .map(|r| r.disc_acc)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().map(|r| r.disc_acc)
    }
}

/// Runs the full schedule from freshly initialized parameters.
pub fn train<T: Real>(data: &Dataset, split: &DatasetSplit, config: TrainConfig) -> Result<TrainOutcome<T>> {
    Trainer::new(data, split, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn binary_image(m: usize, seed: usize) -> Tensor<f64> {
        Tensor::from_fn(&[m, 120, 160, 1], |i| (i * 7 + seed).is_multiple_of(13) as u8 as f64)
    }

    #[test]
    fn generation_loss_at_half() {
        let y = Tensor::full(&[1, 120, 160, 1], 0.5);
        let l = loss_generation(&y, &binary_image(1, 0), CLIP_EPS).unwrap();
        let expected = 19200.0 * 2f64.ln();
        assert!((l - expected).abs() < 1e-6, "{l}");
        assert!((l - 13308.43).abs() < 0.01);
    }

    #[test]
    fn generation_loss_perfect_prediction_is_tiny() {
        let target = binary_image(1, 3);
        let l = loss_generation(&target, &target, CLIP_EPS).unwrap();
        assert!(l <= 19200.0 * 1.1e-6, "{l}");
    }

    #[test]
    fn generation_loss_is_a_batch_mean() {
        let y = Tensor::from_fn(&[1, 120, 160, 1], |i| 0.1 + 0.8 * ((i % 17) as f64 / 17.0));
        let target = binary_image(1, 1);
        let one = loss_generation(&y, &target, CLIP_EPS).unwrap();
        let y2 = Tensor::stack(&[&y.outer(0), &y.outer(0)]).unwrap();
        let t2 = Tensor::stack(&[&target.outer(0), &target.outer(0)]).unwrap();
        let two = loss_generation(&y2, &t2, CLIP_EPS).unwrap();
        assert!((one - two).abs() < 1e-9 * one);
    }

    #[test]
    fn generation_loss_rejects_out_of_range() {
        let mut y = Tensor::full(&[1, 120, 160, 1], 0.5);
        y.data_mut()[5] = 1.5;
        let err = loss_generation(&y, &binary_image(1, 0), CLIP_EPS).unwrap_err();
        assert!(matches!(err, Error::ModelDefect(_)));
    }

    #[test]
    fn domain_loss_examples() {
        let d = t(&[1, 4], &[0.25; 4]);
        let labels = t(&[1, 4], &[0.0, 1.0, 0.0, 0.0]);
        let l = loss_domain(&d, &labels, CLIP_EPS).unwrap();
        let expected = 4f64.ln() + 3.0 * (4.0f64 / 3.0).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 2.2493).abs() < 1e-4);

        let l = loss_domain(&labels, &labels, CLIP_EPS).unwrap();
        assert!(l <= 5e-7, "{l}");

        let bad = t(&[1, 4], &[0.0, 1.0, 1.0, 0.0]);
        assert!(loss_domain(&d, &bad, CLIP_EPS).is_err());
    }

    #[test]
    fn domain_loss_ignores_batch_order() {
        let d = t(&[3, 2], &[0.9, 0.1, 0.3, 0.7, 0.5, 0.5]);
        let labels = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let dp = t(&[3, 2], &[0.5, 0.5, 0.9, 0.1, 0.3, 0.7]);
        let lp = t(&[3, 2], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let a = loss_domain(&d, &labels, CLIP_EPS).unwrap();
        let b = loss_domain(&dp, &lp, CLIP_EPS).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_arithmetic() {
        assert_eq!(loss_joint(10.0, 2.0, 0.5), 9.0);
        assert_eq!(loss_joint(10.0, 2.0, 0.0), 10.0);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0.001, 0, 0.95, 5), 0.001);
        assert_eq!(lr_schedule(0.001, 4, 0.95, 5), 0.001);
        assert!((lr_schedule(0.0001, 5, 0.95, 5) - 0.000095).abs() < 1e-15);
        let f = lr_schedule(1.0, 25, 0.95, 5);
        assert!((f - 0.95f64.powi(5)).abs() < 1e-15 && (f - 0.7738).abs() < 1e-4);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = t(&[3], &[1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut state = AdamState::new([&p], AdamConfig::default());
        state.step([&mut p], &[Tensor::zeros(&[3])], 0.01).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let lr = 0.001;
        let mut p = t(&[3], &[1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut state = AdamState::new([&p], AdamConfig::default());
        state.step([&mut p], &[t(&[3], &[0.3, -4.0, 1e-2])], lr).unwrap();
        for ((a, b), g) in p.data().iter().zip(before.data()).zip([0.3f64, -4.0, 1e-2]) {
            let delta = a - b;
            assert!((delta + lr * g.signum()).abs() <= lr * 1e-6, "{delta}");
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = t(&[3], &[1.0, -2.0, 0.5]);
        let mut state = AdamState::new([&p], AdamConfig::default());
        assert!(state.step([&mut p], &[Tensor::zeros(&[2])], 0.01).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25f64; 4]), 0);
        assert_eq!(argmax(&[0.1f64, 0.4, 0.4, 0.1]), 1);
        let probs = t(&[3, 4], &[0.25; 12]);
        assert!((accuracy(&probs, &[0, 1, 0]) - 2.0 / 3.0).abs() < 1e-12);
        let perfect = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(&perfect, &[0, 1]), 1.0);
    }

    #[test]
    fn config_validation() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_epochs(), 26);
        assert_eq!(c.lambda_for(Stage::Pretrain), 0.0);
        assert_eq!(c.lambda_for(Stage::Adversarial), 0.1);

        let zero_lambda = TrainConfig {
            lambda: 0.0,
            ..c.clone()
        };
        assert!(zero_lambda.validate().is_err());
        let ablation = TrainConfig {
            ablation: true,
            ..c.clone()
        };
        ablation.validate().unwrap();
        assert_eq!(ablation.lambda_for(Stage::Adversarial), 0.0);
        assert!(TrainConfig {
            lr_discriminator: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: -0.1,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn metrics_csv_format() {
        let rec = LossRecord {
            epoch: 0,
            stage: Stage::Pretrain,
            loss_g: 1.5,
            loss_d: 0.25,
            loss_joint: 1.5,
            disc_acc: 0.75,
        };
        let csv = metrics_csv(&[rec]);
        assert_eq!(
            csv,
            "epoch,stage,loss_g,loss_d,loss_joint,disc_acc\n0,pretrain,1.5,0.25,1.5,0.75\n"
        );
    }
}
