//! The `pdnet` command line.
//!
//! Settings come from three layers, later ones winning: a `key=value`
//! config file (`--config`), the dedicated flags, then `--set key=value`
//! overrides. Every command writes the effective settings to
//! `run.manifest` in its output directory before doing any work; that file
//! is itself a valid `--config`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::blocks::{Grouping, LocalGroups, Pdsa, Plam};
use crate::checks::{format_table, gradient_suite, SuiteOptions};
use crate::data::{
    load_dataset, parse_kinds, read_cloud, save_dataset, with_estimated_normals, write_ply, ClassificationOptions,
    Dataset, SegmentationOptions, Split,
};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, knn, knn_grid, Point3, PointCloud, DEFAULT_NORMAL_K};
use crate::metrics::argmax_rows;
use crate::network::{Ablation, Model, NetworkConfig, Task, Variant};
use crate::numerics::{Fault, ParamStore, Session, Tensor};
use crate::pdam::{Pdam, PdamConfig};
use crate::train::{evaluate, load_model, prepare_input, train, RunOutput, TrainConfig, BEST_CHECKPOINT, FINAL_CHECKPOINT};

pub const RUN_MANIFEST: &str = "run.manifest";

#[derive(Debug, Parser)]
#[command(name = "pdnet", version, about = "Point deformable network: data, training, evaluation and diagnostics")]
pub struct Cli {
    /// Settings file of `key=value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub task: Option<Task>,
    #[arg(long, global = true)]
    pub ablation: Option<Ablation>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a network on a dataset directory.
    Train(TrainArgs),
    /// Score a trained run on a dataset; prints JSON lines.
    Eval(EvalArgs),
    /// Finite-difference gradient check of every block.
    Gradcheck(GradcheckArgs),
    /// Write clouds as ASCII PLY with estimated normals and labels.
    ExportPly(ExportArgs),
    /// Time geometry kernels and block forwards.
    Bench(BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::ExportPly(_) => "export-ply",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Comma-separated shape kinds (sphere, cube, torus, cylinder, plane).
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub val_scenes: Option<usize>,
    /// Points per sample (at least 16).
    #[arg(long, value_parser = parse_points)]
    pub points: Option<usize>,
}

fn parse_points(v: &str) -> std::result::Result<usize, String> {
    let n: usize = v.parse().map_err(|_| format!("{v:?} is not a count"))?;
    if n < crate::data::MIN_SHAPE_POINTS {
        return Err(format!("need at least {} points", crate::data::MIN_SHAPE_POINTS));
    }
    Ok(n)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop once the training metric reaches this value.
    #[arg(long)]
    pub stop_at: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by train.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `best`, `final` or a checkpoint path.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// `train`, `val` or `all`.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Corrupt the backward pass on purpose (`relu-leak`).
    #[arg(long, hide = true)]
    pub fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// A single PDCLOUD1 file.
    #[arg(long, conflicts_with = "data")]
    pub cloud: Option<PathBuf>,
    /// A dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Export at most this many samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Label with predictions of this trained run instead of ground truth.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidLabel { .. } => 2,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: 2, message: msg.into() }
}

/// Ordered `key=value` settings; later entries win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    entries: Vec<(String, String)>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            s.push_pair(line).map_err(|_| Error::Config(format!("config line {}: expected key=value", n + 1)))?;
        }
        Ok(s)
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.trim().to_string(), value.to_string().trim().to_string()));
    }

    fn push_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.push(k, v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Entries under `prefix.`, in order, with the prefix kept.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k.strip_prefix(prefix).is_some_and(|r| r.starts_with('.')))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }

    /// Rejects keys no part of `command` reads.
    fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            let ok = allowed.iter().any(|a| match a.strip_suffix(".*") {
                Some(prefix) => k.starts_with(prefix) && k[prefix.len()..].starts_with('.'),
                None => k == a,
            });
            if !ok {
                return Err(Error::Config(format!("setting {k:?} does not apply here")));
            }
        }
        Ok(())
    }
}

fn collect_settings(cli: &Cli) -> Result<Settings> {
    let mut s = match &cli.config {
        Some(p) => Settings::parse(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        )?,
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        s.push("seed", seed);
    }
    if let Some(t) = cli.task {
        s.push("task", t);
    }
    if let Some(v) = cli.variant {
        s.push("network.variant", v);
    }
    if let Some(a) = cli.ablation {
        s.push("network.ablation", a);
    }
    if let Some(o) = &cli.out {
        s.push("out", o.display());
    }
    let opt = |s: &mut Settings, key: &str, v: Option<String>| {
        if let Some(v) = v {
            s.push(key, v);
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match &cli.command {
        Command::GenData(a) => {
            opt(&mut s, "data.classes", a.classes.clone());
            opt(&mut s, "data.per_class", a.per_class.map(|v| v.to_string()));
            opt(&mut s, "data.val_per_class", a.val_per_class.map(|v| v.to_string()));
            opt(&mut s, "data.scenes", a.scenes.map(|v| v.to_string()));
            opt(&mut s, "data.val_scenes", a.val_scenes.map(|v| v.to_string()));
            opt(&mut s, "data.points", a.points.map(|v| v.to_string()));
        }
        Command::Train(a) => {
            opt(&mut s, "run.data", path(&a.data));
            opt(&mut s, "train.epochs", a.epochs.map(|v| v.to_string()));
            opt(&mut s, "train.batch_size", a.batch_size.map(|v| v.to_string()));
            opt(&mut s, "train.lr", a.lr.map(|v| format!("{v:?}")));
            opt(&mut s, "train.stop_at", a.stop_at.map(|v| format!("{v:?}")));
        }
        Command::Eval(a) => {
            opt(&mut s, "run.model", path(&a.run));
            opt(&mut s, "run.data", path(&a.data));
            opt(&mut s, "run.checkpoint", a.checkpoint.clone());
            opt(&mut s, "run.split", a.split.clone());
        }
        Command::Gradcheck(a) => {
            opt(&mut s, "gradcheck.tolerance", a.tolerance.map(|v| format!("{v:?}")));
            opt(&mut s, "gradcheck.fault", a.fault.clone());
        }
        Command::ExportPly(a) => {
            opt(&mut s, "run.cloud", path(&a.cloud));
            opt(&mut s, "run.data", path(&a.data));
            opt(&mut s, "run.split", a.split.clone());
            opt(&mut s, "run.limit", a.limit.map(|v| v.to_string()));
            opt(&mut s, "run.model", path(&a.run));
            opt(&mut s, "run.checkpoint", a.checkpoint.clone());
        }
        Command::Bench(a) => {
            opt(&mut s, "bench.iterations", a.iterations.map(|v| v.to_string()));
            opt(&mut s, "bench.warmup", a.warmup.map(|v| v.to_string()));
        }
    }
    for o in &cli.overrides {
        s.push_pair(o)?;
    }
    Ok(s)
}

/// Output directory and run manifest, written before any work.
struct Run {
    out: PathBuf,
    seed: u64,
}

impl Run {
    fn start(command: &str, settings: &Settings, effective: &str) -> Result<Run> {
        let out = settings.get("out").map_or_else(|| PathBuf::from("runs").join(command), PathBuf::from);
        let seed = settings.parsed("seed")?.unwrap_or(0);
        fs::create_dir_all(&out)?;
        let mut text = format!("command={command}\nseed={seed}\nout={}\n", out.display());
        text.push_str(effective);
        fs::write(out.join(RUN_MANIFEST), text)?;
        Ok(Run { out, seed })
    }
}

fn required_path(settings: &Settings, key: &str, flag: &str) -> Result<PathBuf> {
    let p = settings.get(key).map(PathBuf::from).ok_or_else(|| Error::Config(format!("{flag} is required")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn parse_split(v: Option<&str>) -> Result<Vec<Split>> {
    match v.unwrap_or("val") {
        "train" => Ok(vec![Split::Train]),
        "val" => Ok(vec![Split::Val]),
        "all" => Ok(vec![Split::Train, Split::Val]),
        other => Err(Error::Config(format!("split must be train, val or all, got {other:?}"))),
    }
}

fn checkpoint_path(run: &Path, which: Option<&str>) -> PathBuf {
    match which.unwrap_or("best") {
        "best" => run.join(BEST_CHECKPOINT),
        "final" => run.join(FINAL_CHECKPOINT),
        other => PathBuf::from(other),
    }
}

fn load_run_model(run: &Path, which: Option<&str>) -> Result<Model> {
    let ckpt = checkpoint_path(run, which);
    let name = ckpt.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let dir = ckpt.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(run);
    if dir != run {
        // An explicit checkpoint still takes its network from the run's sidecar.
        let mut m = load_model(run, FINAL_CHECKPOINT).or_else(|_| load_model(run, BEST_CHECKPOINT))?;
        crate::numerics::checkpoint::load_params(&mut m.store, &ckpt)?;
        return Ok(m);
    }
    load_model(run, &name)
}

fn gen_data(settings: &Settings) -> Result<String> {
    settings.check_known(&["seed", "out", "task", "command", "data.*"])?;
    let task: Task = settings.parsed("task")?.unwrap_or(Task::Classification);
    let points: usize = settings.parsed("data.points")?.unwrap_or(512);
    if points < crate::data::MIN_SHAPE_POINTS {
        return Err(Error::Config(format!("data.points must be at least {}", crate::data::MIN_SHAPE_POINTS)));
    }
    let mut effective = format!("task={task}\ndata.points={points}\n");
    let classes = settings.get("data.classes").map(parse_kinds).transpose()?;
    let seed: u64 = settings.parsed("seed")?.unwrap_or(0);
    let dataset = match task {
        Task::Classification => {
            let kinds = classes.unwrap_or_else(|| parse_kinds("sphere,cube,torus,cylinder").expect("known kinds"));
            let mut o = ClassificationOptions::new(kinds, settings.parsed("data.per_class")?.unwrap_or(16), points);
            o.val_per_class = settings.parsed("data.val_per_class")?.unwrap_or(0);
            o.noise = settings.parsed("data.noise")?.unwrap_or(o.noise);
            settings.check_known(&[
                "seed", "out", "task", "command", "data.points", "data.classes", "data.per_class", "data.val_per_class",
                "data.noise",
            ])?;
            let names: Vec<&str> = o.classes.iter().map(|k| k.name()).collect();
            let _ = write!(
                effective,
                "data.classes={}\ndata.per_class={}\ndata.val_per_class={}\ndata.noise={:?}\n",
                names.join(","),
                o.per_class,
                o.val_per_class,
                o.noise
            );
            let run = Run::start("gen-data", settings, &effective)?;
            let d = crate::data::generate_classification_set(&o, seed)?;
            (run, d)
        }
        Task::Segmentation => {
            let mut o = SegmentationOptions::new(settings.parsed("data.scenes")?.unwrap_or(64), points);
            if let Some(k) = classes {
                o.classes = k;
            }
            o.val_scenes = settings.parsed("data.val_scenes")?.unwrap_or(0);
            o.noise = settings.parsed("data.noise")?.unwrap_or(o.noise);
            if let Some(p) = settings.get("data.parts") {
                let (lo, hi) = p.split_once(',').ok_or_else(|| Error::Config("data.parts expects min,max".into()))?;
                let num = |v: &str| v.trim().parse().map_err(|_| Error::Config(format!("data.parts: bad count {v:?}")));
                o.parts = (num(lo)?, num(hi)?);
            }
            settings.check_known(&[
                "seed", "out", "task", "command", "data.points", "data.classes", "data.scenes", "data.val_scenes",
                "data.noise", "data.parts",
            ])?;
            let names: Vec<&str> = o.classes.iter().map(|k| k.name()).collect();
            let _ = write!(
                effective,
                "data.classes={}\ndata.scenes={}\ndata.val_scenes={}\ndata.noise={:?}\ndata.parts={},{}\n",
                names.join(","),
                o.scenes,
                o.val_scenes,
                o.noise,
                o.parts.0,
                o.parts.1
            );
            let run = Run::start("gen-data", settings, &effective)?;
            let d = crate::data::generate_segmentation_set(&o, seed)?;
            (run, d)
        }
    };
    let (run, dataset) = dataset;
    save_dataset(&dataset, &run.out)?;
    Ok(format!(
        "wrote {} train and {} val samples to {}\n",
        dataset.train.len(),
        dataset.val.len(),
        run.out.display()
    ))
}

/// Network settings applied over the dataset-derived defaults.
fn network_config(settings: &Settings, data: &Dataset) -> Result<NetworkConfig> {
    let m = &data.manifest;
    let mut cfg = NetworkConfig::variant(Variant::S, m.task, m.classes.len());
    cfg.input_points = m.points;
    if let Some(t) = settings.get("task") {
        cfg.set("task", t)?;
    }
    for (k, v) in settings.section("network") {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    crate::train::check_compatible(&cfg, data)?;
    Ok(cfg)
}

fn train_cmd(settings: &Settings) -> Result<String> {
    settings.check_known(&["seed", "out", "task", "command", "run.data", "network.*", "train.*"])?;
    let data_dir = required_path(settings, "run.data", "--data")?;
    let data = load_dataset(&data_dir)?;
    let net = network_config(settings, &data)?;
    let mut tc = TrainConfig::default();
    for (k, v) in settings.section("train") {
        tc.set(k, v)?;
    }
    tc.validate()?;
    let effective = format!("run.data={}\n{}{}", data_dir.display(), net.to_manifest(), tc.to_manifest());
    let run = Run::start("train", settings, &effective)?;
    let mut model = Model::build(net, run.seed)?;
    let out = RunOutput::new(&run.out)?;
    let report = train(&mut model, &data, &tc, run.seed, Some(&out), |r| println!("{}", r.csv_row()))?;
    Ok(format!(
        "trained {} epochs{}; best {:.4} at epoch {}; parameters {}\n",
        report.history.len(),
        if report.stopped_early { " (stopped early)" } else { "" },
        report.best_metric,
        report.best_epoch,
        model.parameter_count()
    ))
}

fn eval_cmd(settings: &Settings) -> Result<String> {
    settings.check_known(&["seed", "out", "command", "run.model", "run.data", "run.checkpoint", "run.split", "eval.normal_k"])?;
    let run_dir = required_path(settings, "run.model", "--run")?;
    let data_dir = required_path(settings, "run.data", "--data")?;
    let splits = parse_split(settings.get("run.split"))?;
    let normal_k: usize = settings.parsed("eval.normal_k")?.unwrap_or(DEFAULT_NORMAL_K);
    let which = settings.get("run.checkpoint").unwrap_or("best").to_string();
    let effective = format!(
        "run.model={}\nrun.data={}\nrun.checkpoint={which}\nrun.split={}\neval.normal_k={normal_k}\n",
        run_dir.display(),
        data_dir.display(),
        settings.get("run.split").unwrap_or("val")
    );
    let run = Run::start("eval", settings, &effective)?;
    let data = load_dataset(&data_dir)?;
    let model = load_run_model(&run_dir, Some(&which))?;
    crate::train::check_compatible(&model.config, &data)?;
    let mut lines = String::new();
    for split in splits {
        let samples = data.split(split);
        if samples.is_empty() {
            continue;
        }
        let e = evaluate(&model, samples, normal_k)?;
        let c = &e.confusion;
        let line = json!({
            "split": split.name(),
            "checkpoint": which,
            "task": model.config.task.to_string(),
            "samples": samples.len(),
            "targets": c.total(),
            "loss": e.loss,
            "oa": c.overall_accuracy(),
            "macc": c.mean_class_accuracy(),
            "miou": c.mean_iou(),
        });
        let _ = writeln!(lines, "{line}");
    }
    fs::write(run.out.join("eval.jsonl"), &lines)?;
    Ok(lines)
}

fn gradcheck_cmd(settings: &Settings) -> std::result::Result<String, CliError> {
    settings.check_known(&["seed", "out", "command", "gradcheck.tolerance", "gradcheck.fault"])?;
    let tolerance: f64 = settings.parsed("gradcheck.tolerance")?.unwrap_or(1e-4);
    if !(tolerance > 0.0) {
        return Err(usage("--tolerance must be positive"));
    }
    let fault = match settings.get("gradcheck.fault") {
        None | Some("none") => None,
        Some("relu-leak") => Some(Fault::ReluLeak),
        Some(other) => return Err(usage(format!("unknown fault {other:?}"))),
    };
    let mut effective = format!("gradcheck.tolerance={tolerance:?}\n");
    if fault.is_some() {
        effective.push_str("gradcheck.fault=relu-leak\n");
    }
    let run = Run::start("gradcheck", settings, &effective)?;
    let checks = gradient_suite(&SuiteOptions { tolerance, seed: run.seed, fault })?;
    let table = format_table(&checks);
    fs::write(run.out.join("gradcheck.txt"), &table).map_err(Error::from)?;
    if checks.iter().all(|c| c.passed()) {
        Ok(table)
    } else {
        print!("{table}");
        Err(CliError { code: 1, message: "gradient check failed".into() })
    }
}

fn export_cmd(settings: &Settings) -> Result<String> {
    settings.check_known(&[
        "seed", "out", "command", "run.cloud", "run.data", "run.split", "run.limit", "run.model", "run.checkpoint",
        "export.normal_k",
    ])?;
    let normal_k: usize = settings.parsed("export.normal_k")?.unwrap_or(DEFAULT_NORMAL_K);
    let limit: Option<usize> = settings.parsed("run.limit")?;
    let model_dir = settings.get("run.model").map(PathBuf::from);
    let mut effective = String::new();
    for key in ["run.cloud", "run.data", "run.split", "run.limit", "run.model", "run.checkpoint"] {
        if let Some(v) = settings.get(key) {
            let _ = writeln!(effective, "{key}={v}");
        }
    }
    let _ = writeln!(effective, "export.normal_k={normal_k}");
    let clouds: Vec<(String, PointCloud)> = match (settings.get("run.cloud"), settings.get("run.data")) {
        (Some(c), None) => vec![("cloud".into(), read_cloud(Path::new(c))?)],
        (None, Some(d)) => {
            let data = load_dataset(Path::new(d))?;
            let mut v = Vec::new();
            for split in parse_split(settings.get("run.split"))? {
                for (i, s) in data.split(split).iter().enumerate() {
                    v.push((format!("{}_{i:05}", split.name()), s.cloud.clone()));
                }
            }
            v
        }
        _ => return Err(Error::Config("exactly one of --cloud or --data is required".into())),
    };
    let run = Run::start("export-ply", settings, &effective)?;
    let model = model_dir.as_deref().map(|d| load_run_model(d, settings.get("run.checkpoint"))).transpose()?;
    let mut written = 0;
    for (name, cloud) in clouds.into_iter().take(limit.unwrap_or(usize::MAX)) {
        let mut out = with_estimated_normals(&cloud, normal_k)?;
        if let Some(m) = &model {
            let logits = m.predict(&prepare_input(&m.config, &cloud, normal_k)?)?;
            let pred = argmax_rows(logits.data(), logits.last_dim());
            let labels = if pred.len() == 1 { vec![pred[0]; cloud.len()] } else { pred };
            out.set_labels(Some(labels))?;
        }
        write_ply(&out, &run.out.join(format!("{name}.ply")))?;
        written += 1;
    }
    Ok(format!("wrote {written} PLY files to {}\n", run.out.display()))
}

/// Median wall time in milliseconds over `iterations` runs after `warmup`.
pub fn median_ms(iterations: usize, warmup: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut t: Vec<f64> = (0..iterations)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    t.sort_by(f64::total_cmp);
    let n = t.len();
    if n % 2 == 1 {
        t[n / 2]
    } else {
        0.5 * (t[n / 2 - 1] + t[n / 2])
    }
}

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

fn bench_cmd(settings: &Settings) -> Result<String> {
    settings.check_known(&["seed", "out", "command", "bench.iterations", "bench.warmup"])?;
    let iterations: usize = settings.parsed("bench.iterations")?.unwrap_or(30);
    let warmup: usize = settings.parsed("bench.warmup")?.unwrap_or(3);
    if iterations < 30 {
        return Err(Error::Config("bench.iterations must be at least 30".into()));
    }
    let run = Run::start("bench", settings, &format!("bench.iterations={iterations}\nbench.warmup={warmup}\n"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut rows: Vec<(String, usize, f64)> = Vec::new();
    let mut notes = String::new();

    for n in [1024, 4096, 16384] {
        let pts = random_points(n, &mut rng);
        let ms = median_ms(iterations, warmup, || {
            std::hint::black_box(farthest_point_sample(&pts, 256, 0).expect("valid sizes"));
        });
        rows.push(("fps-256".into(), n, ms));
    }
    let pts = random_points(4096, &mut rng);
    let brute = knn(&pts, &pts, 16)?;
    let grid = knn_grid(&pts, &pts, 16)?;
    let identical = brute.iter().zip(grid.iter()).all(|(a, b)| a.0 == b.0);
    let _ = writeln!(notes, "knn brute vs grid identical indices: {identical}");
    rows.push(("knn-brute-k16".into(), 4096, median_ms(iterations, warmup, || {
        std::hint::black_box(knn(&pts, &pts, 16).expect("valid sizes"));
    })));
    rows.push(("knn-grid-k16".into(), 4096, median_ms(iterations, warmup, || {
        std::hint::black_box(knn_grid(&pts, &pts, 16).expect("valid sizes"));
    })));

    let (n, c) = (128, 64);
    let pos = random_points(n, &mut rng);
    let normals = with_estimated_normals(&PointCloud::new(pos.clone())?, DEFAULT_NORMAL_K)?
        .normals()
        .expect("just estimated")
        .to_vec();
    let feats = Tensor::from_fn(&[n, c], |_| rng.random_range(-1.0..1.0));
    let mut store = ParamStore::new();
    let plam = Plam::new(&mut store, "plam", c, true, run.seed)?;
    let pdam = Pdam::new(&mut store, "pdam", PdamConfig::new(n, 32, c), run.seed)?;
    let pdsa = Pdsa::new(&mut store, "pdsa", c, 2 * c, 4, Grouping::Knn { k: 32 }, true, run.seed)?;
    let groups = LocalGroups::new(&pos, &pos, &knn(&pos, &pos, 32)?)?;
    rows.push(("plam-forward".into(), n, median_ms(iterations, warmup, || {
        let mut s = Session::new(&store);
        let x = s.constant(feats.clone());
        std::hint::black_box(plam.forward(&mut s, x, &groups, Some(&normals)).expect("valid block"));
    })));
    rows.push(("pdam-forward".into(), n, median_ms(iterations, warmup, || {
        let mut s = Session::new(&store);
        let x = s.constant(feats.clone());
        std::hint::black_box(pdam.forward(&mut s, &pos, Some(&normals), x).expect("valid block"));
    })));
    rows.push(("pdsa-forward".into(), n, median_ms(iterations, warmup, || {
        let mut s = Session::new(&store);
        let x = s.constant(feats.clone());
        std::hint::black_box(pdsa.forward(&mut s, &pos, Some(&normals), x).expect("valid block"));
    })));

    let mut csv = String::from("kernel,n,median_ms\n");
    let mut table = format!("{:<16} {:>7} {:>12}\n", "kernel", "n", "median_ms");
    for (k, n, ms) in &rows {
        let _ = writeln!(csv, "{k},{n},{ms:?}");
        let _ = writeln!(table, "{k:<16} {n:>7} {ms:>12.3}");
    }
    fs::write(run.out.join("bench.csv"), csv)?;
    table.push_str(&notes);
    if !identical {
        return Err(Error::InvalidArgument("grid kNN disagrees with brute force".into()));
    }
    Ok(table)
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString>,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                let mut cmd = Cli::command();
                let sub = args.iter().skip(1).filter_map(|a| a.to_str()).find(|a| cmd.find_subcommand(a).is_some());
                let usage = match sub.and_then(|n| cmd.find_subcommand_mut(n).map(|c| (n, c))) {
                    Some((n, c)) => c.render_usage().to_string().replacen(n, &format!("pdnet {n}"), 1),
                    None => cmd.render_usage().to_string(),
                };
                eprintln!("\n{usage}");
            }
            return 2;
        }
    };
    let name = cli.command.name();
    let result = collect_settings(&cli).map_err(CliError::from).and_then(|s| match &cli.command {
        Command::GenData(_) => gen_data(&s).map_err(CliError::from),
        Command::Train(_) => train_cmd(&s).map_err(CliError::from),
        Command::Eval(_) => eval_cmd(&s).map_err(CliError::from),
        Command::Gradcheck(_) => gradcheck_cmd(&s),
        Command::ExportPly(_) => export_cmd(&s).map_err(CliError::from),
        Command::Bench(_) => bench_cmd(&s).map_err(CliError::from),
    });
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("pdnet {name}: {}", e.message);
            if e.code == 2 {
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    let usage = sub.render_usage().to_string();
                    eprintln!("\n{}", usage.replacen(name, &format!("pdnet {name}"), 1));
                    eprintln!("Run 'pdnet {name} --help' for the list of settings.");
                }
            }
            e.code
        }
    }
}
