use super::config::{NetworkConfig, Task, Wiring};
use crate::blocks::{Grouping, Pdsa, Plam, StageCloud};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, DEFAULT_EPSILON};
use crate::numerics::{Activation, Mlp, ParamId, ParamStore, Session, Tensor, Var};
use crate::pdam::{Pdam, PdamConfig, PdamTrace};

/// `(f + local) + deformable`: the shared input's residual counted once.
pub fn parallel_combine(s: &mut Session, features: Var, local: Var, deformable: Var) -> Result<Var> {
    let a = s.graph.add(features, local)?;
    s.graph.add(a, deformable)
}

/// One residual unit of an encoder stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageBlock {
    pub plam: Option<Plam>,
    pub pdam: Option<Pdam>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub down: Pdsa,
    pub blocks: Vec<StageBlock>,
    pub points: usize,
    pub width: usize,
    pub grouping: Grouping,
}

/// Upsamples coarse features onto finer points and fuses the skip features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePropagation {
    pub mlp: Mlp,
    pub interp_k: usize,
}

impl FeaturePropagation {
    pub fn new(store: &mut ParamStore, name: &str, coarse: usize, skip: usize, out: usize, interp_k: usize, seed: u64) -> Result<Self> {
        let mlp = Mlp::new(store, name, coarse + skip, &[(out, Activation::Relu), (out, Activation::Relu)], seed)?;
        Ok(Self { mlp, interp_k })
    }

    pub fn forward(
        &self,
        s: &mut Session,
        coarse_positions: &[Point3],
        coarse: Var,
        fine_positions: &[Point3],
        skip: Option<Var>,
    ) -> Result<Var> {
        if coarse_positions.len() > fine_positions.len() {
            return Err(Error::InvalidArgument(format!(
                "coarse level has {} points, more than the fine level's {}",
                coarse_positions.len(),
                fine_positions.len()
            )));
        }
        let skip = skip.ok_or_else(|| Error::InvalidArgument("feature propagation needs skip features".into()))?;
        if s.value(skip).rows() != fine_positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} skip rows for {} fine points",
                s.value(skip).rows(),
                fine_positions.len()
            )));
        }
        let q = s.constant(Tensor::new(&[fine_positions.len(), 3], fine_positions.iter().flatten().copied().collect())?);
        let k = self.interp_k.min(coarse_positions.len());
        let up = s.graph.idw(q, coarse, coarse_positions, k, DEFAULT_EPSILON)?;
        let cat = s.graph.concat(up, skip)?;
        self.mlp.forward(s, cat)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[1, classes]` or `[N, classes]`.
    pub logits: Var,
    pub stages: Vec<StageCloud>,
    pub traces: Vec<PdamTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub stem: Mlp,
    pub stages: Vec<Stage>,
    /// Coarse-to-fine, one per stage transition.
    pub decoder: Vec<FeaturePropagation>,
    /// Final upsampling onto the input points when stage 1 downsamples.
    pub input_propagation: Option<FeaturePropagation>,
    pub head: Mlp,
}

impl Model {
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config.width;
        let stem = Mlp::new(&mut store, "stem", 3, &[(c, Activation::Relu)], seed)?;
        let points = config.stage_points();
        let widths = config.stage_widths();
        let mut stages = Vec::with_capacity(4);
        let mut in_w = c;
        let mut support = config.input_points;
        for l in 0..4 {
            let name = format!("stage{}", l + 1);
            let (n, w) = (points[l], widths[l]);
            let down = Pdsa::new(
                &mut store,
                &format!("{name}.down"),
                in_w,
                w,
                config.strides[l],
                Grouping::Knn { k: config.neighbor_k.min(support) },
                config.ene,
                seed,
            )?;
            let deep = l >= 2;
            let mut blocks = Vec::with_capacity(config.blocks[l]);
            for b in 0..config.blocks[l] {
                let bname = format!("{name}.block{b}");
                let plam = if !deep || config.plam {
                    Some(Plam::new(&mut store, &format!("{bname}.local"), w, config.ene, seed)?)
                } else {
                    None
                };
                let pdam = if deep && config.pdam {
                    let pc = PdamConfig {
                        with_normals: config.ene,
                        init: config.reference_init,
                        interp_k: config.interp_k.min(n),
                        ..PdamConfig::new(n, config.references.min(n), w)
                    };
                    Some(Pdam::new(&mut store, &format!("{bname}.deform"), pc, seed)?)
                } else {
                    None
                };
                blocks.push(StageBlock { plam, pdam });
            }
            stages.push(Stage { down, blocks, points: n, width: w, grouping: Grouping::Knn { k: config.neighbor_k.min(n) } });
            in_w = w;
            support = n;
        }
        let (decoder, input_propagation, head) = match config.task {
            Task::Classification => {
                let [h1, h2] = config.head_hidden;
                let head = Mlp::new(
                    &mut store,
                    "head",
                    widths[3],
                    &[(h1, Activation::Relu), (h2, Activation::Relu), (config.classes, Activation::None)],
                    seed,
                )?;
                (Vec::new(), None, head)
            }
            Task::Segmentation => {
                let mut decoder = Vec::with_capacity(3);
                let mut coarse = widths[3];
                for l in (0..3).rev() {
                    let fp = FeaturePropagation::new(
                        &mut store,
                        &format!("decoder{}", l + 1),
                        coarse,
                        widths[l],
                        widths[l],
                        config.interp_k,
                        seed,
                    )?;
                    decoder.push(fp);
                    coarse = widths[l];
                }
                let input_propagation = if config.strides[0] > 1 {
                    Some(FeaturePropagation::new(&mut store, "decoder0", c, c, c, config.interp_k, seed)?)
                } else {
                    None
                };
                let head =
                    Mlp::new(&mut store, "head", c, &[(c, Activation::Relu), (config.classes, Activation::None)], seed)?;
                (decoder, input_propagation, head)
            }
        };
        Ok(Self { config, store, stem, stages, decoder, input_propagation, head })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.element_count()
    }

    fn check_input(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.len() != self.config.input_points {
            return Err(Error::StagePointCount { expected: self.config.input_points, actual: cloud.len() });
        }
        if self.config.ene && cloud.normals().is_none() {
            return Err(Error::MissingNormals);
        }
        Ok(())
    }

    /// Stem plus the four encoder stages; returns stem features and stage outputs.
    pub fn encode(&self, s: &mut Session, cloud: &PointCloud) -> Result<(Var, Vec<StageCloud>, Vec<PdamTrace>)> {
        self.check_input(cloud)?;
        let xyz = Tensor::new(&[cloud.len(), 3], cloud.positions().iter().flatten().copied().collect())?;
        let x = s.constant(xyz);
        let stem = self.stem.forward(s, x)?;
        let normals = if self.config.ene { cloud.normals() } else { None };
        let mut positions: Vec<Point3> = cloud.positions().to_vec();
        let mut stage_normals: Option<Vec<Point3>> = normals.map(|n| n.to_vec());
        let mut features = stem;
        let mut outs = Vec::with_capacity(4);
        let mut traces = Vec::new();
        for stage in &self.stages {
            let mut st = stage.down.forward(s, &positions, stage_normals.as_deref(), features)?;
            if st.len() != stage.points {
                return Err(Error::StagePointCount { expected: stage.points, actual: st.len() });
            }
            let groups = if stage.blocks.iter().any(|b| b.plam.is_some()) {
                Some(stage.grouping.group(&st.positions, &st.positions)?)
            } else {
                None
            };
            let mut f = st.features;
            let n = st.normals.as_deref();
            for block in &stage.blocks {
                let local = match (&block.plam, &groups) {
                    (Some(p), Some(g)) => Some(p.delta(s, f, g, n)?),
                    _ => None,
                };
                f = match (local, &block.pdam) {
                    (Some(dl), None) => s.graph.add(f, dl)?,
                    (None, Some(pd)) => {
                        let o = pd.delta(s, &st.positions, n, f)?;
                        traces.push(o.trace);
                        s.graph.add(f, o.delta)?
                    }
                    (Some(dl), Some(pd)) => match self.config.wiring {
                        Wiring::Parallel => {
                            let o = pd.delta(s, &st.positions, n, f)?;
                            traces.push(o.trace);
                            parallel_combine(s, f, dl, o.delta)?
                        }
                        Wiring::Successive => {
                            let mid = s.graph.add(f, dl)?;
                            let o = pd.delta(s, &st.positions, n, mid)?;
                            traces.push(o.trace);
                            s.graph.add(mid, o.delta)?
                        }
                    },
                    (None, None) => f,
                };
            }
            st.features = f;
            positions = st.positions.clone();
            stage_normals = st.normals.clone();
            features = f;
            outs.push(st);
        }
        Ok((stem, outs, traces))
    }

    pub fn forward(&self, s: &mut Session, cloud: &PointCloud) -> Result<ForwardOutput> {
        match self.config.task {
            Task::Classification => self.forward_classification(s, cloud),
            Task::Segmentation => self.forward_segmentation(s, cloud),
        }
    }

    /// `[1, classes]` logits.
    pub fn forward_classification(&self, s: &mut Session, cloud: &PointCloud) -> Result<ForwardOutput> {
        if self.config.task != Task::Classification {
            return Err(Error::Config("model was built for segmentation".into()));
        }
        let (_, stages, traces) = self.encode(s, cloud)?;
        let last = stages.last().expect("four stages");
        let w = s.value(last.features).last_dim();
        let grouped = s.graph.reshape(last.features, &[1, last.len(), w])?;
        let pooled = s.graph.max_pool(grouped)?;
        let logits = self.head.forward(s, pooled)?;
        Ok(ForwardOutput { logits, stages, traces })
    }

    /// `[N, classes]` logits, one row per input point.
    pub fn forward_segmentation(&self, s: &mut Session, cloud: &PointCloud) -> Result<ForwardOutput> {
        if self.config.task != Task::Segmentation {
            return Err(Error::Config("model was built for classification".into()));
        }
        let (stem, stages, traces) = self.encode(s, cloud)?;
        let mut f = stages[3].features;
        for (fp, l) in self.decoder.iter().zip((0..3).rev()) {
            f = fp.forward(s, &stages[l + 1].positions, f, &stages[l].positions, Some(stages[l].features))?;
        }
        if let Some(fp) = &self.input_propagation {
            f = fp.forward(s, &stages[0].positions, f, cloud.positions(), Some(stem))?;
        }
        let logits = self.head.forward(s, f)?;
        Ok(ForwardOutput { logits, stages, traces })
    }

    /// Logits without gradient bookkeeping beyond one throwaway graph.
    pub fn predict(&self, cloud: &PointCloud) -> Result<Tensor> {
        let mut s = Session::new(&self.store);
        let out = self.forward(&mut s, cloud)?;
        Ok(s.value(out.logits).clone())
    }

    /// Names of every deformable-branch parameter.
    pub fn deformable_params(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(|st| st.blocks.iter()).filter_map(|b| b.pdam.as_ref()).flat_map(|p| p.param_ids()).collect()
    }

    /// Zeroes the last layer of every deformable branch, making each branch an exact no-op.
    pub fn zero_deformable_branches(&mut self) {
        let ids: Vec<ParamId> = self
            .stages
            .iter()
            .flat_map(|st| st.blocks.iter())
            .filter_map(|b| b.pdam.as_ref())
            .flat_map(|p| {
                let last = p.update.last_layer();
                [last.weight, last.bias]
            })
            .collect();
        for id in ids {
            let z = Tensor::zeros(self.store.get(id).shape());
            self.store.set(id, z).expect("same shape");
        }
    }
}
