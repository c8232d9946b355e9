use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pdam::ReferenceInit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    S,
    L,
    Xxl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::S, Variant::L, Variant::Xxl];

    pub fn width(self) -> usize {
        match self {
            Variant::S | Variant::L => 32,
            Variant::Xxl => 64,
        }
    }

    pub fn blocks(self) -> [usize; 4] {
        match self {
            Variant::S => [0, 0, 0, 0],
            Variant::L => [2, 4, 2, 2],
            Variant::Xxl => [4, 8, 4, 4],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::S => "pdnet-s",
            Variant::L => "pdnet-l",
            Variant::Xxl => "pdnet-xxl",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdnet-s" | "s" => Ok(Variant::S),
            "pdnet-l" | "l" => Ok(Variant::L),
            "pdnet-xxl" | "xxl" => Ok(Variant::Xxl),
            _ => Err(Error::Config(format!("unknown variant {s:?} (pdnet-s, pdnet-l, pdnet-xxl)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Classification,
    Segmentation,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "cls",
            Task::Segmentation => "seg",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" | "classification" => Ok(Task::Classification),
            "seg" | "segmentation" => Ok(Task::Segmentation),
            _ => Err(Error::Config(format!("unknown task {s:?} (cls, seg)"))),
        }
    }
}

/// How the local and deformable branches of a block are joined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wiring {
    /// Both branches read the same input; their residuals are summed.
    Parallel,
    /// The deformable branch reads the local branch's output.
    Successive,
}

impl fmt::Display for Wiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wiring::Parallel => "parallel",
            Wiring::Successive => "successive",
        })
    }
}

impl FromStr for Wiring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Wiring::Parallel),
            "successive" => Ok(Wiring::Successive),
            _ => Err(Error::Config(format!("unknown wiring {s:?}"))),
        }
    }
}

fn init_name(i: ReferenceInit) -> &'static str {
    match i {
        ReferenceInit::Fps => "fps",
        ReferenceInit::Random => "random",
        ReferenceInit::Center => "center",
    }
}

fn parse_init(s: &str) -> Result<ReferenceInit> {
    match s {
        "fps" => Ok(ReferenceInit::Fps),
        "random" => Ok(ReferenceInit::Random),
        "center" => Ok(ReferenceInit::Center),
        _ => Err(Error::Config(format!("unknown reference init {s:?} (fps, random, center)"))),
    }
}

/// Named structural variations of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    PlamOnly,
    PdamOnly,
    NoEne,
    Successive,
    Parallel,
    CenterInit,
    RandomInit,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::PlamOnly,
        Ablation::PdamOnly,
        Ablation::NoEne,
        Ablation::Successive,
        Ablation::Parallel,
        Ablation::CenterInit,
        Ablation::RandomInit,
    ];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::PlamOnly => "plam-only",
            Ablation::PdamOnly => "pdam-only",
            Ablation::NoEne => "no-ene",
            Ablation::Successive => "successive",
            Ablation::Parallel => "parallel",
            Ablation::CenterInit => "center-init",
            Ablation::RandomInit => "random-init",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Everything needed to rebuild a model with identical parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub variant: Option<Variant>,
    pub task: Task,
    pub classes: usize,
    pub input_points: usize,
    /// Stem width; stage `l` has width `width * 2^l`.
    pub width: usize,
    pub blocks: [usize; 4],
    pub strides: [usize; 4],
    pub neighbor_k: usize,
    pub references: usize,
    pub interp_k: usize,
    /// Local aggregation in the last two stages.
    pub plam: bool,
    /// Deformable aggregation in the last two stages.
    pub pdam: bool,
    /// Normal embeddings everywhere.
    pub ene: bool,
    pub wiring: Wiring,
    pub reference_init: ReferenceInit,
    pub head_hidden: [usize; 2],
}

impl NetworkConfig {
    pub fn variant(variant: Variant, task: Task, classes: usize) -> Self {
        Self {
            variant: Some(variant),
            task,
            classes,
            input_points: 512,
            width: variant.width(),
            blocks: variant.blocks(),
            strides: [1, 4, 4, 4],
            neighbor_k: 32,
            references: 32,
            interp_k: 3,
            plam: true,
            pdam: true,
            ene: true,
            wiring: Wiring::Parallel,
            reference_init: ReferenceInit::Fps,
            head_hidden: [512, 256],
        }
    }

    pub fn apply(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::PlamOnly => (self.plam, self.pdam) = (true, false),
            Ablation::PdamOnly => (self.plam, self.pdam) = (false, true),
            Ablation::NoEne => self.ene = false,
            Ablation::Successive => self.wiring = Wiring::Successive,
            Ablation::Parallel => self.wiring = Wiring::Parallel,
            Ablation::CenterInit => self.reference_init = ReferenceInit::Center,
            Ablation::RandomInit => self.reference_init = ReferenceInit::Random,
        }
    }

    pub fn with(mut self, ablation: Ablation) -> Self {
        self.apply(ablation);
        self
    }

    /// Point count after each stage.
    pub fn stage_points(&self) -> [usize; 4] {
        let mut n = self.input_points;
        let mut out = [0; 4];
        for (o, &s) in out.iter_mut().zip(&self.strides) {
            n /= s.max(1);
            *o = n;
        }
        out
    }

    pub fn stage_widths(&self) -> [usize; 4] {
        [self.width, self.width * 2, self.width * 4, self.width * 8]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.classes == 0 || self.input_points == 0 {
            return err("width, classes and input_points must be positive".into());
        }
        if self.neighbor_k == 0 || self.references == 0 || self.interp_k == 0 {
            return err("neighbor_k, references and interp_k must be positive".into());
        }
        if self.head_hidden.contains(&0) {
            return err("head widths must be positive".into());
        }
        let mut n = self.input_points;
        for (l, &s) in self.strides.iter().enumerate() {
            if s == 0 {
                return err(format!("stage {} stride is zero", l + 1));
            }
            if n % s != 0 || n / s == 0 {
                return err(format!("stage {} stride {s} does not divide {n} points", l + 1));
            }
            n /= s;
        }
        if !self.plam && !self.pdam && self.blocks[2..].iter().any(|&b| b > 0) {
            return err("stages 3-4 need at least one of plam / pdam".into());
        }
        Ok(())
    }

    /// `network.key=value` lines, one per field.
    pub fn to_manifest(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut lines = Vec::new();
        if let Some(v) = self.variant {
            lines.push(format!("variant={v}"));
        }
        lines.extend([
            format!("task={}", self.task),
            format!("classes={}", self.classes),
            format!("input_points={}", self.input_points),
            format!("width={}", self.width),
            format!("blocks={}", list(&self.blocks)),
            format!("strides={}", list(&self.strides)),
            format!("neighbor_k={}", self.neighbor_k),
            format!("references={}", self.references),
            format!("interp_k={}", self.interp_k),
            format!("plam={}", self.plam),
            format!("pdam={}", self.pdam),
            format!("ene={}", self.ene),
            format!("wiring={}", self.wiring),
            format!("reference_init={}", init_name(self.reference_init)),
            format!("head_hidden={}", list(&self.head_hidden)),
        ]);
        lines.into_iter().map(|l| format!("network.{l}\n")).collect()
    }

    /// Applies one setting. `variant` resets width and block counts.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: expected true or false, got {v:?}")))
        }
        fn list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
            let parts: Vec<usize> = v.split(',').map(|p| num(key, p)).collect::<Result<_>>()?;
            parts.try_into().map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated integers")))
        }
        let key = key.strip_prefix("network.").unwrap_or(key);
        match key {
            "variant" => {
                let v: Variant = value.parse()?;
                self.variant = Some(v);
                self.width = v.width();
                self.blocks = v.blocks();
            }
            "task" => self.task = value.parse()?,
            "classes" => self.classes = num(key, value)?,
            "input_points" => self.input_points = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "blocks" => self.blocks = list(key, value)?,
            "strides" => self.strides = list(key, value)?,
            "neighbor_k" => self.neighbor_k = num(key, value)?,
            "references" => self.references = num(key, value)?,
            "interp_k" => self.interp_k = num(key, value)?,
            "plam" => self.plam = flag(key, value)?,
            "pdam" => self.pdam = flag(key, value)?,
            "ene" => self.ene = flag(key, value)?,
            "wiring" => self.wiring = value.parse()?,
            "reference_init" => self.reference_init = parse_init(value)?,
            "head_hidden" => self.head_hidden = list(key, value)?,
            "ablation" => self.apply(value.parse()?),
            _ => return Err(Error::Config(format!("unknown network setting {key:?}"))),
        }
        Ok(())
    }

    /// Parses manifest text; lines outside the `network.` namespace are ignored.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut cfg = Self::variant(Variant::S, Task::Classification, 1);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("malformed line {line:?}")))?;
            if let Some(k) = k.trim().strip_prefix("network.") {
                cfg.set(k, v.trim())?;
            }
        }
        // Explicit block counts and width win over the variant regardless of line order.
        for line in text.lines() {
            if let Some((k, v)) = line.trim().split_once('=') {
                if matches!(k.trim(), "network.width" | "network.blocks") {
                    cfg.set(k.trim(), v.trim())?;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
