//! Deformable aggregation over stage-global reference points.
//!
//! A stage holds `R` reference points, initialized by FPS over the stage's
//! points. Two small networks read the whole (channel-averaged) feature set:
//! one emits an offset per reference, the other a gate in `(0, 1)`. Features
//! and normals are interpolated at the shifted references once per forward;
//! every point then max-pools over all references, using its own relative
//! position to each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{NormalEmbedding, PositionEncoding};
use crate::error::{Error, Result};
use crate::geometry::{centroid, farthest_point_sample, Point3, DEFAULT_EPSILON};
use crate::numerics::{Activation, Init, Linear, Mlp, ParamId, ParamStore, Session, Tensor, Var};

/// Where the references start before deformation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReferenceInit {
    /// Farthest point sampling from index 0.
    Fps,
    /// Uniform positions inside the stage's bounding box.
    Random,
    /// Every reference at the centroid.
    Center,
}

pub fn init_reference_points(positions: &[Point3], count: usize, init: ReferenceInit, seed: u64) -> Result<Vec<Point3>> {
    if positions.is_empty() {
        return Err(Error::EmptyInput("positions"));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("reference count must be positive".into()));
    }
    if count > positions.len() {
        return Err(Error::SampleCountExceedsPopulation { requested: count, available: positions.len() });
    }
    Ok(match init {
        ReferenceInit::Fps => farthest_point_sample(positions, count, 0)?.into_iter().map(|i| positions[i]).collect(),
        ReferenceInit::Center => vec![centroid(positions); count],
        ReferenceInit::Random => {
            let mut lo = positions[0];
            let mut hi = positions[0];
            for p in positions {
                for d in 0..3 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for d in 0..3 {
                        let t: f64 = rng.random();
                        p[d] = lo[d] + t * (hi[d] - lo[d]);
                    }
                    p
                })
                .collect()
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdamConfig {
    /// Fixed point count of the stage.
    pub points: usize,
    pub references: usize,
    pub width: usize,
    pub interp_k: usize,
    pub epsilon: f64,
    /// Add the embedding of interpolated normals to the pooled term.
    pub with_normals: bool,
    pub init: ReferenceInit,
}

impl PdamConfig {
    pub fn new(points: usize, references: usize, width: usize) -> Self {
        Self {
            points,
            references,
            width,
            interp_k: 3,
            epsilon: DEFAULT_EPSILON,
            with_normals: true,
            init: ReferenceInit::Fps,
        }
    }
}

/// Values of the deformed reference set after one forward.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    pub initial: Vec<Point3>,
    pub offsets: Vec<Point3>,
    pub deformed: Vec<Point3>,
    pub modulation: Vec<f64>,
    /// `[R, C]` interpolated features.
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdamTrace {
    /// Reference positions at which features were interpolated.
    pub interpolations: usize,
    pub references: ReferenceSet,
}

#[derive(Clone, Debug)]
pub struct PdamOutput {
    /// Residual branch, `[N, C]`.
    pub delta: Var,
    pub trace: PdamTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pdam {
    pub config: PdamConfig,
    pub offset_hidden: Linear,
    pub offset_out: Linear,
    pub modulation_hidden: Linear,
    pub modulation_out: Linear,
    pub position: PositionEncoding,
    pub normal: Option<NormalEmbedding>,
    pub update: Mlp,
    seed: u64,
}

fn as_points(t: &Tensor) -> Vec<Point3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl Pdam {
    pub fn new(store: &mut ParamStore, name: &str, config: PdamConfig, seed: u64) -> Result<Self> {
        let (n, r, c) = (config.points, config.references, config.width);
        if n == 0 || r == 0 || c == 0 {
            return Err(Error::Config(format!("{name}: points, references and width must be positive")));
        }
        if r > n {
            return Err(Error::SampleCountExceedsPopulation { requested: r, available: n });
        }
        if config.interp_k == 0 || config.interp_k > n {
            return Err(Error::NeighborCountTooLarge { k: config.interp_k, support: n });
        }
        let lin = |store: &mut ParamStore, part: &str, out, act, init| {
            Linear::new(store, &format!("{name}.{part}"), n, out, act, init, seed)
        };
        let offset_hidden = lin(store, "offset.0", n, Activation::Relu, Init::Uniform)?;
        let offset_out = lin(store, "offset.1", 3 * r, Activation::None, Init::Zeros)?;
        let modulation_hidden = lin(store, "modulation.0", n, Activation::Relu, Init::Uniform)?;
        let modulation_out = lin(store, "modulation.1", r, Activation::Sigmoid, Init::Uniform)?;
        let position = PositionEncoding::new(store, &format!("{name}.position"), c, seed)?;
        let normal = if config.with_normals {
            Some(NormalEmbedding::new(store, &format!("{name}.normal"), c, seed)?)
        } else {
            None
        };
        let update = crate::blocks::update_mlp(store, &format!("{name}.update"), c, seed)?;
        Ok(Self {
            config,
            offset_hidden,
            offset_out,
            modulation_hidden,
            modulation_out,
            position,
            normal,
            update,
            seed,
        })
    }

    /// Channel mean of every point, as a `[1, N]` row.
    fn collapse(&self, s: &mut Session, features: Var) -> Result<Var> {
        let shape = s.value(features).shape().to_vec();
        if shape.len() != 2 || shape[0] != self.config.points {
            return Err(Error::StagePointCount {
                expected: self.config.points,
                actual: shape.first().copied().unwrap_or(0),
            });
        }
        if shape[1] != self.config.width {
            return Err(Error::ShapeMismatch(format!("width {} expected {}", shape[1], self.config.width)));
        }
        let mean = s.graph.mean_last_dim(features)?;
        s.graph.reshape(mean, &[1, self.config.points])
    }

    /// `[R, 3]` offsets.
    pub fn offset_generation(&self, s: &mut Session, features: Var) -> Result<Var> {
        let row = self.collapse(s, features)?;
        let h = self.offset_hidden.forward(s, row)?;
        let h = s.graph.relu(h);
        let o = self.offset_out.forward(s, h)?;
        s.graph.reshape(o, &[self.config.references, 3])
    }

    /// `[R]` gates in `(0, 1)`.
    pub fn modulation_scalars(&self, s: &mut Session, features: Var) -> Result<Var> {
        let row = self.collapse(s, features)?;
        let h = self.modulation_hidden.forward(s, row)?;
        let h = s.graph.relu(h);
        let m = self.modulation_out.forward(s, h)?;
        let m = s.graph.sigmoid(m);
        s.graph.reshape(m, &[self.config.references])
    }

    /// Shifts the references and interpolates features at them; returns
    /// (`[R, 3]` deformed positions, `[R, C]` features).
    pub fn deform_and_sample(
        &self,
        s: &mut Session,
        positions: &[Point3],
        initial: &[Point3],
        offsets: Var,
        features: Var,
    ) -> Result<(Var, Var)> {
        if initial.len() != self.config.references {
            return Err(Error::ShapeMismatch(format!(
                "{} initial references, expected {}",
                initial.len(),
                self.config.references
            )));
        }
        let init = s.constant(Tensor::new(&[initial.len(), 3], initial.iter().flatten().copied().collect())?);
        let deformed = s.graph.add(init, offsets)?;
        let sampled = s.graph.idw(deformed, features, positions, self.config.interp_k, self.config.epsilon)?;
        Ok((deformed, sampled))
    }

    pub fn initial_references(&self, positions: &[Point3]) -> Result<Vec<Point3>> {
        init_reference_points(positions, self.config.references, self.config.init, self.seed)
    }

    /// Residual branch with references initialized per the config.
    pub fn delta(
        &self,
        s: &mut Session,
        positions: &[Point3],
        normals: Option<&[Point3]>,
        features: Var,
    ) -> Result<PdamOutput> {
        if positions.len() != self.config.points {
            return Err(Error::StagePointCount { expected: self.config.points, actual: positions.len() });
        }
        let initial = self.initial_references(positions)?;
        self.delta_from(s, positions, normals, features, &initial)
    }

    /// Residual branch from explicit initial references.
    pub fn delta_from(
        &self,
        s: &mut Session,
        positions: &[Point3],
        normals: Option<&[Point3]>,
        features: Var,
        initial: &[Point3],
    ) -> Result<PdamOutput> {
        if positions.len() != self.config.points {
            return Err(Error::StagePointCount { expected: self.config.points, actual: positions.len() });
        }
        let normals = match (&self.normal, normals) {
            (Some(_), None) => return Err(Error::MissingNormals),
            (Some(_), Some(n)) if n.len() != positions.len() => {
                return Err(Error::ShapeMismatch(format!("{} normals for {} points", n.len(), positions.len())))
            }
            (_, n) => n,
        };
        let offsets = self.offset_generation(s, features)?;
        let gate = self.modulation_scalars(s, features)?;
        let (deformed, sampled) = self.deform_and_sample(s, positions, initial, offsets, features)?;
        let interpolations = s.value(deformed).rows();

        let mut term = s.graph.scale_rows(sampled, gate)?;
        if let (Some(gamma), Some(n)) = (&self.normal, normals) {
            let nt = s.constant(Tensor::new(&[n.len(), 3], n.iter().flatten().copied().collect())?);
            let raw = s.graph.idw(deformed, nt, positions, self.config.interp_k, self.config.epsilon)?;
            let unit = s.graph.normalize_rows(raw)?;
            let e = gamma.forward(s, unit)?;
            term = s.graph.add(term, e)?;
        }
        let query = s.constant(Tensor::new(&[positions.len(), 3], positions.iter().flatten().copied().collect())?);
        let rel = s.graph.pairwise_diff(deformed, query)?;
        let pe = self.position.forward(s, rel)?;
        let a = s.graph.add_broadcast(pe, term)?;
        let pooled = s.graph.max_pool(a)?;
        let delta = self.update.forward(s, pooled)?;

        let references = ReferenceSet {
            initial: initial.to_vec(),
            offsets: as_points(s.value(offsets)),
            deformed: as_points(s.value(deformed)),
            modulation: s.value(gate).data().to_vec(),
            features: s.value(sampled).clone(),
        };
        Ok(PdamOutput { delta, trace: PdamTrace { interpolations, references } })
    }

    pub fn forward(
        &self,
        s: &mut Session,
        positions: &[Point3],
        normals: Option<&[Point3]>,
        features: Var,
    ) -> Result<(Var, PdamTrace)> {
        let out = self.delta(s, positions, normals, features)?;
        Ok((s.graph.add(features, out.delta)?, out.trace))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in [&self.offset_hidden, &self.offset_out, &self.modulation_hidden, &self.modulation_out] {
            ids.extend([l.weight, l.bias]);
        }
        ids.extend(self.position.param_ids());
        if let Some(g) = &self.normal {
            ids.extend(g.param_ids());
        }
        ids.extend(self.update.param_ids());
        ids
    }

    /// Offset and modulation network parameters only.
    pub fn generator_ids(&self) -> Vec<ParamId> {
        [&self.offset_hidden, &self.offset_out, &self.modulation_hidden, &self.modulation_out]
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}
