use super::embedding::{NormalEmbedding, PositionEncoding};
use super::grouping::Grouping;
use super::local::SetAbstraction;
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, Point3};
use crate::numerics::{ParamId, ParamStore, Session, Var};

/// Points, normals and features of one encoder stage.
#[derive(Clone, Debug)]
pub struct StageCloud {
    pub positions: Vec<Point3>,
    pub normals: Option<Vec<Point3>>,
    /// Indices of these points in the previous stage.
    pub centers: Vec<usize>,
    pub features: Var,
}

impl StageCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Downsampling set abstraction with position encoding and (optionally)
/// normal embedding added to each encoded member before pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct Pdsa {
    pub sa: SetAbstraction,
    pub position: PositionEncoding,
    pub normal: Option<NormalEmbedding>,
    pub stride: usize,
    pub grouping: Grouping,
}

impl Pdsa {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        stride: usize,
        grouping: Grouping,
        with_normals: bool,
        seed: u64,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        let sa = SetAbstraction::new(store, name, in_dim, out_dim, seed)?;
        let position = PositionEncoding::new(store, &format!("{name}.position"), out_dim, seed)?;
        let normal = if with_normals {
            Some(NormalEmbedding::new(store, &format!("{name}.normal"), out_dim, seed)?)
        } else {
            None
        };
        Ok(Self { sa, position, normal, stride, grouping })
    }

    pub fn out_dim(&self) -> usize {
        self.sa.out_dim()
    }

    /// Center indices: every point in order for stride 1, otherwise FPS from index 0.
    pub fn centers(&self, positions: &[Point3]) -> Result<Vec<usize>> {
        if positions.is_empty() {
            return Err(Error::EmptyInput("positions"));
        }
        if self.stride > positions.len() {
            return Err(Error::SampleCountExceedsPopulation { requested: self.stride, available: positions.len() });
        }
        if self.stride == 1 {
            return Ok((0..positions.len()).collect());
        }
        farthest_point_sample(positions, positions.len() / self.stride, 0)
    }

    pub fn forward(
        &self,
        s: &mut Session,
        positions: &[Point3],
        normals: Option<&[Point3]>,
        features: Var,
    ) -> Result<StageCloud> {
        if s.value(features).rows() != positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} positions",
                s.value(features).rows(),
                positions.len()
            )));
        }
        let centers = self.centers(positions)?;
        let center_pos: Vec<Point3> = centers.iter().map(|&i| positions[i]).collect();
        let groups = self.grouping.group(&center_pos, positions)?;
        let enc = self.sa.encode_members(s, features, &groups)?;
        let rel = s.constant(groups.relative.clone());
        let pe = self.position.forward(s, rel)?;
        let mut a = s.graph.add(enc, pe)?;
        if let Some(gamma) = &self.normal {
            let n = normals.ok_or(Error::MissingNormals)?;
            if n.len() != positions.len() {
                return Err(Error::ShapeMismatch(format!("{} normals for {} points", n.len(), positions.len())));
            }
            let e = gamma.embed(s, n)?;
            let c = self.out_dim();
            let ge = s.graph.gather(e, &groups.index, &[groups.groups, groups.members, c])?;
            a = s.graph.add(a, ge)?;
        }
        let pooled = s.graph.max_pool(a)?;
        Ok(StageCloud {
            normals: normals.map(|n| centers.iter().map(|&i| n[i]).collect()),
            positions: center_pos,
            centers,
            features: pooled,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = [self.sa.param_ids(), self.position.param_ids()].concat();
        if let Some(g) = &self.normal {
            ids.extend(g.param_ids());
        }
        ids
    }
}
