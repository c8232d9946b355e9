//! Mini-batch AdamW training with a per-step cosine schedule, label
//! smoothing and on-the-fly augmentation.
//!
//! Per-sample gradients may be computed in parallel; they are always summed
//! in batch order, so a run is a pure function of its seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{augment, with_estimated_normals, AugmentPolicy, Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, DEFAULT_NORMAL_K};
use crate::metrics::{argmax_rows, ConfusionMatrix};
use crate::network::{Model, NetworkConfig, Task};
use crate::numerics::checkpoint::save_params;
use crate::numerics::{cosine_lr, AdamW, AdamWConfig, Session, Tensor};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_metric,val_metric";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
/// Sidecar next to the checkpoints recording the network they belong to.
pub const MODEL_MANIFEST: &str = "model.manifest";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Neighborhood size for normals re-estimated after augmentation.
    pub normal_k: usize,
    pub augment: AugmentPolicy,
    /// Stop once the epoch's training metric reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            lr_min: 0.0,
            weight_decay: 1e-4,
            label_smoothing: 0.2,
            normal_k: DEFAULT_NORMAL_K,
            augment: AugmentPolicy::standard(),
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return err("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return err("need 0 <= lr_min <= lr and lr > 0");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) || !(self.weight_decay >= 0.0) {
            return err("label_smoothing must lie in [0, 1) and weight_decay be non-negative");
        }
        if self.normal_k < 3 {
            return err("normal_k must be at least 3");
        }
        self.augment.validate()
    }

    pub fn to_manifest(&self) -> String {
        let a = &self.augment;
        let scale = a.scale.map_or("none".to_string(), |(lo, hi)| format!("{lo:?},{hi:?}"));
        let stop = self.stop_at.map_or("none".to_string(), |v| format!("{v:?}"));
        [
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
            format!("lr={:?}", self.lr),
            format!("lr_min={:?}", self.lr_min),
            format!("weight_decay={:?}", self.weight_decay),
            format!("label_smoothing={:?}", self.label_smoothing),
            format!("normal_k={}", self.normal_k),
            format!("augment.rotate_up={}", a.rotate_up),
            format!("augment.scale={scale}"),
            format!("augment.jitter={:?}", a.jitter),
            format!("stop_at={stop}"),
        ]
        .into_iter()
        .map(|l| format!("train.{l}\n"))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        let key = key.strip_prefix("train.").unwrap_or(key);
        let value = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "label_smoothing" => self.label_smoothing = parse(key, value)?,
            "normal_k" => self.normal_k = parse(key, value)?,
            "augment.rotate_up" => self.augment.rotate_up = parse(key, value)?,
            "augment.scale" => {
                self.augment.scale = match value {
                    "none" => None,
                    v => {
                        let (lo, hi) = v.split_once(',').ok_or_else(|| Error::Config(format!("{key}: expected lo,hi")))?;
                        Some((parse(key, lo)?, parse(key, hi)?))
                    }
                }
            }
            "augment.jitter" => self.augment.jitter = parse(key, value)?,
            "augment" => {
                self.augment = match value {
                    "none" => AugmentPolicy::identity(),
                    "standard" => AugmentPolicy::standard(),
                    _ => return Err(Error::Config(format!("augment: expected none or standard, got {value:?}"))),
                }
            }
            "stop_at" => self.stop_at = if value == "none" { None } else { Some(parse(key, value)?) },
            _ => return Err(Error::Config(format!("unknown train setting {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy (classification) or mIoU (segmentation) on the augmented
    /// training batches, measured before each update.
    pub train_metric: f64,
    pub val_metric: Option<f64>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let val = self.val_metric.map_or(String::new(), |v| format!("{v:?}"));
        format!("{},{:?},{:?},{:?},{val}", self.epoch, self.lr, self.train_loss, self.train_metric)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.history {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }
}

/// Scores of one pass over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub loss: f64,
}

impl Evaluation {
    /// The task's headline number: OA for classification, mIoU for segmentation.
    pub fn headline(&self, task: Task) -> f64 {
        match task {
            Task::Classification => self.confusion.overall_accuracy(),
            Task::Segmentation => self.confusion.mean_iou(),
        }
    }
}

/// Checks that a model can consume a dataset.
pub fn check_compatible(config: &NetworkConfig, data: &Dataset) -> Result<()> {
    let m = &data.manifest;
    if config.task != m.task {
        return Err(Error::Config(format!("model task {} but dataset task {}", config.task, m.task)));
    }
    if config.input_points != m.points {
        return Err(Error::Config(format!("model expects {} points, dataset has {}", config.input_points, m.points)));
    }
    if config.classes != m.classes.len() {
        return Err(Error::Config(format!("model has {} classes, dataset {}", config.classes, m.classes.len())));
    }
    Ok(())
}

/// Ground truth of a sample in the shape the model predicts.
fn targets(task: Task, sample: &Sample) -> Result<Vec<usize>> {
    match task {
        Task::Classification => {
            let l = sample.label.ok_or_else(|| Error::Config("classification sample without a class".into()))?;
            Ok(vec![l as usize])
        }
        Task::Segmentation => {
            let labels = sample.cloud.labels().ok_or_else(|| Error::Config("segmentation sample without labels".into()))?;
            Ok(labels.iter().map(|&l| l as usize).collect())
        }
    }
}

/// The cloud the network sees: normals re-estimated from positions when the
/// network embeds them, dropped otherwise.
pub fn prepare_input(config: &NetworkConfig, cloud: &PointCloud, normal_k: usize) -> Result<PointCloud> {
    if config.ene {
        with_estimated_normals(cloud, normal_k)
    } else {
        let mut c = cloud.clone();
        c.set_normals(None)?;
        Ok(c)
    }
}

struct SampleStep {
    loss: f64,
    grads: Vec<Option<Tensor>>,
    truth: Vec<u32>,
    pred: Vec<u32>,
}

fn sample_step(model: &Model, cloud: &PointCloud, truth: &[usize], smoothing: f64) -> Result<SampleStep> {
    let mut s = Session::new(&model.store);
    let out = model.forward(&mut s, cloud)?;
    let loss = s.graph.cross_entropy(out.logits, truth, smoothing)?;
    let value = s.value(loss).item()?;
    let logits = s.value(out.logits);
    let pred = argmax_rows(logits.data(), logits.last_dim());
    let mut g = s.backward(loss)?;
    let grads = s.param_grads(&mut g);
    Ok(SampleStep { loss: value, grads, truth: truth.iter().map(|&t| t as u32).collect(), pred })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Loss and confusion over `samples` without augmentation.
pub fn evaluate(model: &Model, samples: &[Sample], normal_k: usize) -> Result<Evaluation> {
    let cfg = &model.config;
    let results: Vec<Result<(f64, Vec<u32>, Vec<u32>)>> = samples
        .par_iter()
        .map(|sample| {
            let truth = targets(cfg.task, sample)?;
            let input = prepare_input(cfg, &sample.cloud, normal_k)?;
            let mut s = Session::new(&model.store);
            let out = model.forward(&mut s, &input)?;
            let loss = s.graph.cross_entropy(out.logits, &truth, 0.0)?;
            let logits = s.value(out.logits);
            let pred = argmax_rows(logits.data(), logits.last_dim());
            Ok((s.value(loss).item()?, truth.into_iter().map(|t| t as u32).collect(), pred))
        })
        .collect();
    let mut confusion = ConfusionMatrix::new(cfg.classes);
    let mut loss = 0.0;
    for r in results {
        let (l, truth, pred) = r?;
        loss += l;
        confusion.add_all(&truth, &pred)?;
    }
    Ok(Evaluation { confusion, loss: loss / samples.len().max(1) as f64 })
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn save(&self, model: &Model, file: &str) -> Result<()> {
        save_params(&model.store, &self.dir.join(file))?;
        fs::write(self.dir.join(MODEL_MANIFEST), model.config.to_manifest())?;
        Ok(())
    }
}

/// Trains `model` in place. With `out`, writes the metrics CSV after every
/// epoch, the best checkpoint whenever the selection metric improves, and
/// the final checkpoint at the end. Selection uses the validation metric
/// when a validation split exists, the training metric otherwise.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    out: Option<&RunOutput>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(&model.config, data)?;
    if data.train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let task = model.config.task;
    let truths: Vec<Vec<usize>> = data.train.iter().map(|s| targets(task, s)).collect::<Result<_>>()?;
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, &model.store);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (0, f64::NEG_INFINITY);
    let mut stopped_early = false;
    let mut csv = format!("{METRICS_HEADER}\n");

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 0)));
        let mut confusion = ConfusionMatrix::new(model.config.classes);
        let mut loss_sum = 0.0;
        let mut first_lr = None;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            let lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min)?;
            first_lr.get_or_insert(lr);
            let model_ref: &Model = model;
            let results: Vec<Result<SampleStep>> = batch
                .par_iter()
                .map(|&i| {
                    let seed_i = mix(seed, epoch as u64 + 1, i as u64 + 1);
                    let cloud = augment(&data.train[i].cloud, seed_i, &cfg.augment)?;
                    let input = prepare_input(&model_ref.config, &cloud, cfg.normal_k)?;
                    sample_step(model_ref, &input, &truths[i], cfg.label_smoothing)
                })
                .collect();
            // Fixed-order reduction keeps runs bitwise reproducible.
            let mut sum: Vec<Option<Tensor>> = vec![None; model.store.len()];
            for r in results {
                let r = r?;
                loss_sum += r.loss;
                confusion.add_all(&r.truth, &r.pred)?;
                for (acc, g) in sum.iter_mut().zip(r.grads) {
                    match (acc.as_mut(), g) {
                        (Some(a), Some(g)) => a.add_assign(&g)?,
                        (None, Some(g)) => *acc = Some(g),
                        (_, None) => {}
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in sum.iter_mut().flatten() {
                g.scale(inv);
            }
            if sum.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("gradients"));
            }
            opt.step(&mut model.store, &sum, lr)?;
        }
        let train_metric = match task {
            Task::Classification => confusion.overall_accuracy(),
            Task::Segmentation => confusion.mean_iou(),
        };
        let val_metric = if data.val.is_empty() {
            None
        } else {
            Some(evaluate(model, &data.val, cfg.normal_k)?.headline(task))
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: first_lr.unwrap_or(cfg.lr),
            train_loss: loss_sum / data.train.len() as f64,
            train_metric,
            val_metric,
        };
        if !record.train_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let selection = val_metric.unwrap_or(train_metric);
        if selection > best.1 {
            best = (record.epoch, selection);
            if let Some(o) = out {
                o.save(model, BEST_CHECKPOINT)?;
            }
        }
        let _ = writeln!(csv, "{}", record.csv_row());
        if let Some(o) = out {
            fs::write(o.dir.join(METRICS_FILE), &csv)?;
        }
        on_epoch(&record);
        history.push(record);
        if cfg.stop_at.is_some_and(|t| train_metric >= t) {
            stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    if let Some(o) = out {
        o.save(model, FINAL_CHECKPOINT)?;
    }
    Ok(TrainReport { history, best_epoch: best.0, best_metric: best.1, stopped_early })
}

/// Rebuilds a model from a run directory's sidecar and loads a checkpoint.
pub fn load_model(dir: &Path, checkpoint: &str) -> Result<Model> {
    let config = NetworkConfig::from_manifest(&fs::read_to_string(dir.join(MODEL_MANIFEST))?)?;
    let mut model = Model::build(config, 0)?;
    crate::numerics::checkpoint::load_params(&mut model.store, &dir.join(checkpoint))?;
    Ok(model)
}
