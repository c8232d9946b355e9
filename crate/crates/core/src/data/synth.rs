use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shapes::{parse_kinds, random_quaternion, ShapeKind, ShapeSpec};
use crate::error::{Error, Result};
use crate::geometry::{dist2, knn_grid, Point3, PointCloud};
use crate::network::Task;

/// Gaussian position noise of generated shapes.
pub const DEFAULT_NOISE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Recipe for one sample: the primitives it is made of and the seed that
/// samples them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub seed: u64,
    pub parts: Vec<ShapeSpec>,
    /// Class index for classification samples.
    pub label: Option<u32>,
}

/// A generated cloud. Normals are the analytic surface normals; per-point
/// labels are the class (classification) or the part's shape class
/// (segmentation).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub label: Option<u32>,
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub task: Task,
    pub seed: u64,
    pub points: usize,
    pub classes: Vec<ShapeKind>,
    pub train: Vec<SampleSpec>,
    pub val: Vec<SampleSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }
}

fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    let salt = match split {
        Split::Train => 0x7472_6169_6e00_0000,
        Split::Val => 0x7661_6c00_0000_0000,
    };
    seed.rotate_left(17) ^ salt ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Classification samples: one randomly rotated, scaled primitive per cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationOptions {
    pub classes: Vec<ShapeKind>,
    pub per_class: usize,
    pub val_per_class: usize,
    pub points: usize,
    pub noise: f64,
    pub scale: (f64, f64),
}

impl ClassificationOptions {
    pub fn new(classes: Vec<ShapeKind>, per_class: usize, points: usize) -> Self {
        Self { classes, per_class, val_per_class: 0, points, noise: DEFAULT_NOISE, scale: (0.8, 1.0) }
    }
}

pub fn plan_classification(opts: &ClassificationOptions, seed: u64) -> Result<DatasetManifest> {
    if opts.classes.is_empty() {
        return Err(Error::InvalidArgument("at least one class is required".into()));
    }
    if opts.per_class == 0 {
        return Err(Error::InvalidArgument("per-class count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = |split: Split, count: usize| -> Result<Vec<SampleSpec>> {
        let mut specs = Vec::with_capacity(count * opts.classes.len());
        for (c, &kind) in opts.classes.iter().enumerate() {
            for _ in 0..count {
                let mut spec = ShapeSpec::new(kind, rng.random_range(opts.scale.0..=opts.scale.1), opts.points);
                spec.rotation = random_quaternion(&mut rng);
                spec.noise = opts.noise;
                spec.validate()?;
                let index = specs.len();
                specs.push(SampleSpec { seed: sample_seed(seed, split, index), parts: vec![spec], label: Some(c as u32) });
            }
        }
        Ok(specs)
    };
    let train = plan(Split::Train, opts.per_class)?;
    let val = plan(Split::Val, opts.val_per_class)?;
    Ok(DatasetManifest { task: Task::Classification, seed, points: opts.points, classes: opts.classes.clone(), train, val })
}

pub fn generate_classification_set(opts: &ClassificationOptions, seed: u64) -> Result<Dataset> {
    realize(plan_classification(opts, seed)?)
}

/// Segmentation scenes: 2-4 distinct primitives, each near its class's anchor
/// on a ring in the xy plane, non-overlapping, with equal point shares.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationOptions {
    pub classes: Vec<ShapeKind>,
    pub scenes: usize,
    pub val_scenes: usize,
    pub points: usize,
    pub parts: (usize, usize),
    pub noise: f64,
    pub scale: (f64, f64),
    /// Radius of the anchor ring.
    pub anchor_radius: f64,
    /// Half-width of the uniform xy offset from the anchor.
    pub anchor_jitter: f64,
    /// Minimum clearance between bounding balls.
    pub gap: f64,
    /// Smallest share of a scene's points any part may hold.
    pub min_fraction: f64,
}

impl SegmentationOptions {
    pub fn new(scenes: usize, points: usize) -> Self {
        Self {
            classes: ShapeKind::ALL.to_vec(),
            scenes,
            val_scenes: 0,
            points,
            parts: (2, 4),
            noise: DEFAULT_NOISE,
            scale: (0.22, 0.3),
            anchor_radius: 0.7,
            anchor_jitter: 0.35,
            gap: 0.05,
            min_fraction: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.parts;
        if lo < 1 || lo > hi || hi > self.classes.len() {
            return Err(Error::InvalidArgument(format!(
                "part count range {lo}..={hi} invalid for {} classes",
                self.classes.len()
            )));
        }
        if self.scenes == 0 {
            return Err(Error::InvalidArgument("scene count must be positive".into()));
        }
        if self.points / hi < super::shapes::MIN_SHAPE_POINTS {
            return Err(Error::InvalidArgument(format!("{} points cannot hold {hi} parts", self.points)));
        }
        if ((self.points / hi) as f64) < self.min_fraction * self.points as f64 {
            return Err(Error::InvalidArgument(format!(
                "{hi} equal parts cannot each hold {} of the points",
                self.min_fraction
            )));
        }
        Ok(())
    }
}

/// Attempts at placing one scene before giving up.
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

fn plan_scene(opts: &SegmentationOptions, rng: &mut ChaCha8Rng) -> Result<Vec<ShapeSpec>> {
    let count = rng.random_range(opts.parts.0..=opts.parts.1);
    let mut classes: Vec<usize> = (0..opts.classes.len()).collect();
    classes.shuffle(rng);
    classes.truncate(count);
    classes.sort_unstable();
    let base = opts.points / count;
    let extra = opts.points % count;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut parts = Vec::with_capacity(count);
        for (i, &c) in classes.iter().enumerate() {
            let kind = opts.classes[c];
            let angle = std::f64::consts::TAU * c as f64 / opts.classes.len() as f64;
            let j = opts.anchor_jitter;
            let offset = [rng.random_range(-j..=j), rng.random_range(-j..=j)];
            let mut spec = ShapeSpec::new(kind, rng.random_range(opts.scale.0..=opts.scale.1), base + usize::from(i < extra));
            spec.rotation = random_quaternion(rng);
            spec.translation =
                [opts.anchor_radius * angle.cos() + offset[0], opts.anchor_radius * angle.sin() + offset[1], 0.0];
            spec.noise = opts.noise;
            parts.push(spec);
        }
        // Overlapping primitives are resampled rather than clipped.
        let separated = parts.iter().enumerate().all(|(i, a)| {
            parts[i + 1..].iter().all(|b| {
                let reach = a.bounding_radius() + b.bounding_radius() + opts.gap;
                dist2(&a.translation, &b.translation) >= reach * reach
            })
        });
        if separated {
            return Ok(parts);
        }
    }
    Err(Error::InvalidArgument("could not place non-overlapping primitives".into()))
}

pub fn plan_segmentation(opts: &SegmentationOptions, seed: u64) -> Result<DatasetManifest> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = |split: Split, count: usize| -> Result<Vec<SampleSpec>> {
        (0..count)
            .map(|i| {
                let parts = plan_scene(opts, &mut rng)?;
                for p in &parts {
                    p.validate()?;
                    if (p.points as f64) < opts.min_fraction * opts.points as f64 {
                        return Err(Error::InvalidArgument("part below minimum share".into()));
                    }
                }
                Ok(SampleSpec { seed: sample_seed(seed, split, i), parts, label: None })
            })
            .collect()
    };
    let train = plan(Split::Train, opts.scenes)?;
    let val = plan(Split::Val, opts.val_scenes)?;
    Ok(DatasetManifest { task: Task::Segmentation, seed, points: opts.points, classes: opts.classes.clone(), train, val })
}

pub fn generate_segmentation_set(opts: &SegmentationOptions, seed: u64) -> Result<Dataset> {
    realize(plan_segmentation(opts, seed)?)
}

/// Samples one recipe. Part `i` draws from its own stream so that parts are
/// independent of each other's point counts.
pub fn realize_sample(spec: &SampleSpec, classes: &[ShapeKind]) -> Result<Sample> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut labels = Vec::new();
    for (i, part) in spec.parts.iter().enumerate() {
        let (p, n) = part.sample(spec.seed.wrapping_add((i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)))?;
        let class = match spec.label {
            Some(c) => c,
            None => classes
                .iter()
                .position(|&k| k == part.kind)
                .ok_or_else(|| Error::InvalidArgument(format!("{} is not a listed class", part.kind)))?
                as u32,
        };
        labels.extend(std::iter::repeat_n(class, p.len()));
        positions.extend(p);
        normals.extend(n);
    }
    let cloud = PointCloud::new(positions)?.with_normals(normals)?.with_labels(labels)?;
    Ok(Sample { cloud, label: spec.label })
}

pub fn realize(manifest: DatasetManifest) -> Result<Dataset> {
    let build = |specs: &[SampleSpec]| -> Result<Vec<Sample>> {
        specs
            .iter()
            .map(|s| {
                let sample = realize_sample(s, &manifest.classes)?;
                if sample.cloud.len() != manifest.points {
                    return Err(Error::InvalidArgument(format!(
                        "sample has {} points, manifest says {}",
                        sample.cloud.len(),
                        manifest.points
                    )));
                }
                Ok(sample)
            })
            .collect()
    };
    let train = build(&manifest.train)?;
    let val = build(&manifest.val)?;
    Ok(Dataset { manifest, train, val })
}

/// Per-point labels from a majority vote of the `k` nearest training points,
/// using raw coordinates only. Ties go to the smallest label.
pub fn knn_baseline(train: &[Sample], queries: &[Sample], k: usize) -> Result<Vec<Vec<u32>>> {
    let mut support: Vec<Point3> = Vec::new();
    let mut support_labels = Vec::new();
    for s in train {
        let labels = s.cloud.labels().ok_or_else(|| Error::InvalidArgument("training sample without labels".into()))?;
        support.extend_from_slice(s.cloud.positions());
        support_labels.extend_from_slice(labels);
    }
    let classes = support_labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    queries
        .iter()
        .map(|q| {
            let index = knn_grid(q.cloud.positions(), &support, k)?;
            Ok(index
                .iter()
                .map(|(nbrs, _)| {
                    let mut votes = vec![0usize; classes];
                    for &j in nbrs {
                        votes[support_labels[j] as usize] += 1;
                    }
                    let best = votes.iter().copied().max().unwrap_or(0);
                    votes.iter().position(|&v| v == best).unwrap_or(0) as u32
                })
                .collect())
        })
        .collect()
}

fn fmt_f64s(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_f64s<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::MalformedHeader(format!("bad number in {what}: '{t}'"))))
        .collect::<Result<_>>()?;
    vals.try_into().map_err(|_| Error::MalformedHeader(format!("{what} needs {N} values")))
}

fn format_shape(s: &ShapeSpec) -> String {
    format!(
        "{} scale={:?} rotation={} translation={} noise={:?} points={}",
        s.kind,
        s.scale,
        fmt_f64s(&s.rotation),
        fmt_f64s(&s.translation),
        s.noise,
        s.points
    )
}

fn parse_shape(text: &str) -> Result<ShapeSpec> {
    let mut tokens = text.split_whitespace();
    let kind: ShapeKind = tokens.next().ok_or_else(|| Error::MalformedHeader("empty shape".into()))?.parse()?;
    let mut spec = ShapeSpec::new(kind, 1.0, 0);
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::MalformedHeader(format!("bad shape field '{tok}'")))?;
        let bad = |_| Error::MalformedHeader(format!("bad value for {k}: '{v}'"));
        match k {
            "scale" => spec.scale = v.parse().map_err(bad)?,
            "rotation" => spec.rotation = parse_f64s(v, k)?,
            "translation" => spec.translation = parse_f64s(v, k)?,
            "noise" => spec.noise = v.parse().map_err(bad)?,
            "points" => spec.points = v.parse().map_err(|_| Error::MalformedHeader(format!("bad points '{v}'")))?,
            _ => return Err(Error::MalformedHeader(format!("unknown shape field '{k}'"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[SampleSpec] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// UTF-8 `key=value` lines; floats are written so they parse back exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let task = match self.task {
            Task::Classification => "cls",
            Task::Segmentation => "seg",
        };
        let _ = writeln!(out, "dataset.task={task}");
        let _ = writeln!(out, "dataset.seed={}", self.seed);
        let _ = writeln!(out, "dataset.points={}", self.points);
        let names: Vec<&str> = self.classes.iter().map(|k| k.name()).collect();
        let _ = writeln!(out, "dataset.classes={}", names.join(","));
        for split in [Split::Train, Split::Val] {
            let specs = self.split(split);
            let _ = writeln!(out, "{}.count={}", split.name(), specs.len());
            for (i, s) in specs.iter().enumerate() {
                let _ = writeln!(out, "{}.{i}.seed={}", split.name(), s.seed);
                if let Some(l) = s.label {
                    let _ = writeln!(out, "{}.{i}.label={l}", split.name());
                }
                for (j, p) in s.parts.iter().enumerate() {
                    let _ = writeln!(out, "{}.{i}.part.{j}={}", split.name(), format_shape(p));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedHeader(format!("line {}: expected key=value", n + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::MalformedHeader(format!("duplicate key '{}'", k.trim())));
            }
        }
        let mut take = |key: &str| map.remove(key).ok_or_else(|| Error::MalformedHeader(format!("missing key '{key}'")));
        let int = |v: String, key: &str| v.parse::<u64>().map_err(|_| Error::MalformedHeader(format!("bad {key}: '{v}'")));
        let task = match take("dataset.task")?.as_str() {
            "cls" => Task::Classification,
            "seg" => Task::Segmentation,
            other => return Err(Error::MalformedHeader(format!("unknown task '{other}'"))),
        };
        let seed = int(take("dataset.seed")?, "seed")?;
        let points = int(take("dataset.points")?, "points")? as usize;
        let classes = parse_kinds(&take("dataset.classes")?)?;
        let mut splits = Vec::new();
        for split in [Split::Train, Split::Val] {
            let name = split.name();
            let count = int(take(&format!("{name}.count"))?, "count")? as usize;
            let mut specs = Vec::with_capacity(count);
            for i in 0..count {
                let seed = int(take(&format!("{name}.{i}.seed"))?, "sample seed")?;
                let label = match take(&format!("{name}.{i}.label")) {
                    Ok(v) => Some(int(v, "label")? as u32),
                    Err(_) => None,
                };
                let mut parts = Vec::new();
                while let Ok(p) = take(&format!("{name}.{i}.part.{}", parts.len())) {
                    parts.push(parse_shape(&p)?);
                }
                if parts.is_empty() {
                    return Err(Error::MalformedHeader(format!("{name}.{i} has no parts")));
                }
                specs.push(SampleSpec { seed, parts, label });
            }
            splits.push(specs);
        }
        if let Some(k) = map.keys().next() {
            return Err(Error::MalformedHeader(format!("unknown key '{k}'")));
        }
        let val = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        Ok(Self { task, seed, points, classes, train, val })
    }
}
