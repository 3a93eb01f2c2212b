use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dinn::eval::{binarize, euclidean_distance, Binarize, PcsReport, THRESHOLDS};
use dinn::synth::{self, Dataset, DatasetSplit};
use dinn::training::{metrics_csv, predict_skeletons, Precision, Trainer};
use dinn::{checkpoint, Real};

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "dinn",
    version,
    about = "Train and evaluate CSI-to-skeleton networks on synthetic subjects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its split.
    GenData(Flags),
    /// Run pre-training then adversarial training and save a checkpoint.
    Train(Flags),
    /// Compute PCS of a checkpoint on the held-out windows.
    Eval(Flags),
    /// Summarize the metrics and PCS files of a run directory.
    Report(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::GenData(f) | Command::Train(f) | Command::Eval(f) | Command::Report(f) => f,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
struct Flags {
    /// `key = value` file applied before the other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames generated per subject.
    #[arg(long)]
    frames: Option<usize>,
    /// Subjects including the held-out target.
    #[arg(long)]
    subjects: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset file (default: <out>/dataset.dset).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint file (default: <out>/checkpoint.dinn).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    adversarial_epochs: Option<usize>,
    /// Initial learning rate of the feature extractor and generator.
    #[arg(long)]
    lr1: Option<f64>,
    /// Initial learning rate of the discriminator.
    #[arg(long)]
    lr2: Option<f64>,
    /// Train with lambda = 0 in both stages.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    ablation: Option<bool>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    /// Prediction binarization threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Write the first N prediction/ground-truth pairs as PGM images.
    #[arg(long)]
    dump_images: Option<usize>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        let mut set = |key: &str, value: Option<String>| match value {
            Some(v) => c.set(key, &v),
            None => Ok(()),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("frames", self.frames.map(|v| v.to_string()))?;
        set("subjects", self.subjects.map(|v| v.to_string()))?;
        set("out", path(&self.out))?;
        set("dataset", path(&self.dataset))?;
        set("checkpoint", path(&self.checkpoint))?;
        set("lambda", self.lambda.map(|v| v.to_string()))?;
        set("batch", self.batch.map(|v| v.to_string()))?;
        set("pretrain_epochs", self.pretrain_epochs.map(|v| v.to_string()))?;
        set("adversarial_epochs", self.adversarial_epochs.map(|v| v.to_string()))?;
        set("lr1", self.lr1.map(|v| v.to_string()))?;
        set("lr2", self.lr2.map(|v| v.to_string()))?;
        set("ablation", self.ablation.map(|v| v.to_string()))?;
        set("precision", self.precision.clone())?;
        set("tau", self.tau.map(|v| v.to_string()))?;
        set("dump_images", self.dump_images.map(|v| v.to_string()))?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DINN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("DINN_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("cannot configure the worker pool")
}

fn run(command: &Command) -> Result<()> {
    configure_threads()?;
    let config = command.flags().resolve()?;
    fs::create_dir_all(&config.out).with_context(|| format!("cannot create {}", config.out.display()))?;
    let echo = config.out.join(format!("{}.config", command.name()));
    write(&echo, config.echo())?;
    match command {
        Command::GenData(_) => gen_data(&config),
        Command::Train(_) => train(&config),
        Command::Eval(_) => eval(&config),
        Command::Report(_) => report(&config),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn load_dataset(config: &RunConfig) -> Result<(Dataset, DatasetSplit)> {
    let path = config.dataset_path();
    synth::io::load_dataset(&path).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn gen_data(config: &RunConfig) -> Result<()> {
    let subjects = synth::make_subjects(config.seed, config.subjects)?;
    let (data, split) = synth::build_dataset(&subjects, config.frames, config.seed)?;
    let path = config.dataset_path();
    synth::io::save_dataset(&path, &data, &split).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {} samples to {}", data.len(), path.display());
    println!(
        "{:<10}{:>8}{:>8}{:>13}{:>13}",
        "subject", "role", "train", "test_source", "test_target"
    );
    for s in 0..data.subjects as u32 {
        let count = |idx: &[usize]| idx.iter().filter(|&&i| data.samples[i].subject == s).count();
        let role = if s == data.target_subject() { "target" } else { "source" };
        println!(
            "{s:<10}{role:>8}{:>8}{:>13}{:>13}",
            count(&split.train),
            count(&split.test_source),
            count(&split.test_target)
        );
    }
    Ok(())
}

fn train(config: &RunConfig) -> Result<()> {
    let (data, split) = load_dataset(config)?;
    match config.precision {
        Precision::F32 => train_as::<f32>(config, &data, &split),
        Precision::F64 => train_as::<f64>(config, &data, &split),
    }
}

fn train_as<T: Real>(config: &RunConfig, data: &Dataset, split: &DatasetSplit) -> Result<()> {
    let mut trainer = Trainer::<T>::new(data, split, config.train_config(data.domains()))?;
    println!("epoch  stage          loss_g     loss_d  disc_acc");
    while !trainer.is_finished() {
        let r = trainer.run_epoch()?;
        println!(
            "{:>5}  {:<11} {:>10.3} {:>10.4} {:>9.3}",
            r.epoch, r.stage, r.loss_g, r.loss_d, r.disc_acc
        );
    }
    let outcome = trainer.into_outcome();
    let ckpt = config.checkpoint_path();
    checkpoint::save(&ckpt, &outcome.params).with_context(|| format!("cannot write {}", ckpt.display()))?;
    write(&config.out.join("metrics.csv"), metrics_csv(&outcome.history))?;
    println!(
        "wrote {} and {}",
        ckpt.display(),
        config.out.join("metrics.csv").display()
    );
    Ok(())
}

/// Binary PGM of a `120×160` image with values in `[0, 1]`.
fn pgm(values: impl Iterator<Item = f64>) -> Vec<u8> {
    let (h, w) = (dinn::model::IMAGE_SHAPE[0], dinn::model::IMAGE_SHAPE[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn eval(config: &RunConfig) -> Result<()> {
    let (data, split) = load_dataset(config)?;
    let ckpt = config.checkpoint_path();
    let params = checkpoint::load::<f32>(&ckpt, &config.model_config(data.domains()))
        .with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    let indices: Vec<usize> = split.test_target.iter().chain(&split.test_source).copied().collect();
    if indices.is_empty() {
        bail!("the dataset has no held-out samples");
    }
    let predictions = predict_skeletons(&params, &data, &indices)?;
    let mut distances = Vec::with_capacity(indices.len());
    for (&i, pred) in indices.iter().zip(&predictions) {
        let sample = &data.samples[i];
        let truth: Vec<f64> = sample.skeleton.iter().map(|&v| v as f64).collect();
        let d = euclidean_distance(
            &binarize(pred, Binarize::Prediction { tau: config.tau }),
            &binarize(&truth, Binarize::GroundTruth),
        )?;
        distances.push((sample.subject, d));
    }
    let report = PcsReport::from_distances(&distances, data.target_subject(), config.tau, &THRESHOLDS)?;
    print!("{}", report.to_text());
    write(&config.out.join("pcs.txt"), report.to_text())?;
    write(&config.out.join("pcs.csv"), report.to_csv())?;

    if config.dump_images > 0 {
        let dir = config.out.join("images");
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (n, (&i, pred)) in indices.iter().zip(&predictions).take(config.dump_images).enumerate() {
            let sample = &data.samples[i];
            let stem = format!("{n:04}_subject{}", sample.subject);
            write(&dir.join(format!("{stem}_pred.pgm")), pgm(pred.iter().copied()))?;
            write(
                &dir.join(format!("{stem}_truth.pgm")),
                pgm(sample.skeleton.iter().map(|&v| v as f64)),
            )?;
        }
        println!(
            "wrote {} image pairs to {}",
            config.dump_images.min(indices.len()),
            dir.display()
        );
    }
    Ok(())
}

struct MetricsRow {
    epoch: usize,
    stage: String,
    loss_g: f64,
    loss_d: f64,
    disc_acc: f64,
}

fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(dinn::training::METRICS_HEADER) {
        bail!("metrics file does not start with {:?}", dinn::training::METRICS_HEADER);
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                bail!("metrics line {} has {} fields", n + 2, f.len());
            }
            let num = |s: &str| s.parse::<f64>().with_context(|| format!("metrics line {}", n + 2));
            Ok(MetricsRow {
                epoch: f[0].parse().with_context(|| format!("metrics line {}", n + 2))?,
                stage: f[1].to_string(),
                loss_g: num(f[2])?,
                loss_d: num(f[3])?,
                disc_acc: num(f[5])?,
            })
        })
        .collect()
}

fn report(config: &RunConfig) -> Result<()> {
    let mut out = String::new();
    let metrics = config.out.join("metrics.csv");
    if metrics.exists() {
        let text = fs::read_to_string(&metrics).with_context(|| format!("cannot read {}", metrics.display()))?;
        let rows = parse_metrics(&text)?;
        let peak = rows
            .iter()
            .filter(|r| r.stage == "pretrain")
            .map(|r| r.disc_acc)
            .fold(f64::NAN, f64::max);
        let switch = rows.iter().find(|r| r.stage == "adversarial").map(|r| r.epoch);
        out += &format!("epochs: {}\n", rows.len());
        if let Some(e) = switch {
            out += &format!("adversarial stage from epoch: {e}\n");
        }
        out += &format!("pre-training peak discriminator accuracy: {peak:.4}\n");
        if let Some(last) = rows.last() {
            out += &format!("final discriminator accuracy: {:.4}\n", last.disc_acc);
            out += &format!("final generation loss: {:.3}\n", last.loss_g);
            out += &format!("final domain loss: {:.4}\n", last.loss_d);
            if peak > 0.0 {
                out += &format!("final / peak accuracy: {:.3}\n", last.disc_acc / peak);
            }
        }
    }
    let pcs = config.out.join("pcs.txt");
    if pcs.exists() {
        out += &fs::read_to_string(&pcs).with_context(|| format!("cannot read {}", pcs.display()))?;
    }
    if out.is_empty() {
        bail!("no metrics.csv or pcs.txt in {}", config.out.display());
    }
    print!("{out}");
    write(&config.out.join("report.txt"), out)
}
