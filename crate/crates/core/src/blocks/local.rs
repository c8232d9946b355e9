use super::embedding::{NormalEmbedding, PositionEncoding};
use super::grouping::LocalGroups;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::numerics::{Activation, Init, Mlp, ParamId, ParamStore, Session, Var};

fn gather_members(s: &mut Session, x: Var, groups: &LocalGroups) -> Result<Var> {
    let rows = s.value(x).rows();
    groups.check_support(rows)?;
    let c = s.value(x).last_dim();
    s.graph.gather(x, &groups.index, &[groups.groups, groups.members, c])
}

fn check_residual(s: &Session, f: Var, groups: &LocalGroups, width: usize) -> Result<()> {
    let shape = s.value(f).shape();
    if shape.len() != 2 || shape[0] != groups.groups || shape[1] != width {
        return Err(Error::ShapeMismatch(format!(
            "residual block of width {width} over {} groups got features {shape:?}",
            groups.groups
        )));
    }
    Ok(())
}

/// Two-layer residual update; the last layer starts at zero so a fresh block is an identity.
pub(crate) fn update_mlp(store: &mut ParamStore, name: &str, width: usize, seed: u64) -> Result<Mlp> {
    Mlp::with_init(store, name, width, &[(width, Activation::Relu), (width, Activation::None)], seed, Init::Zeros)
}

/// Max-pool of a shared MLP over `[neighbor feature, neighbor - center]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SetAbstraction {
    pub encode: Mlp,
}

impl SetAbstraction {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let encode = Mlp::new(store, &format!("{name}.encode"), in_dim + 3, &[(out_dim, Activation::Relu)], seed)?;
        Ok(Self { encode })
    }

    pub fn out_dim(&self) -> usize {
        self.encode.out_dim()
    }

    /// Encoded members before pooling, `[groups, members, out]`.
    pub fn encode_members(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        let gathered = gather_members(s, features, groups)?;
        let rel = s.constant(groups.relative.clone());
        let cat = s.graph.concat(gathered, rel)?;
        self.encode.forward(s, cat)
    }

    /// `[groups, out]` features at the centers.
    pub fn forward(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        let enc = self.encode_members(s, features, groups)?;
        s.graph.max_pool(enc)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.encode.param_ids()
    }
}

/// Residual block: one-layer grouped reduction, max-pool, two-layer update.
#[derive(Clone, Debug, PartialEq)]
pub struct InvResMlp {
    pub reduce: Mlp,
    pub update: Mlp,
}

impl InvResMlp {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, seed: u64) -> Result<Self> {
        let reduce = Mlp::new(store, &format!("{name}.reduce"), width + 3, &[(width, Activation::Relu)], seed)?;
        let update = update_mlp(store, &format!("{name}.update"), width, seed)?;
        Ok(Self { reduce, update })
    }

    pub fn width(&self) -> usize {
        self.update.out_dim()
    }

    /// The residual branch alone.
    pub fn delta(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        check_residual(s, features, groups, self.width())?;
        let gathered = gather_members(s, features, groups)?;
        let rel = s.constant(groups.relative.clone());
        let cat = s.graph.concat(gathered, rel)?;
        let reduced = self.reduce.forward(s, cat)?;
        let pooled = s.graph.max_pool(reduced)?;
        self.update.forward(s, pooled)
    }

    pub fn forward(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        let d = self.delta(s, features, groups)?;
        s.graph.add(features, d)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.reduce.param_ids(), self.update.param_ids()].concat()
    }
}

/// Pointwise reduction before grouping, position encoding added inside the
/// pooled term, two-layer update and residual.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMetaBlock {
    pub pre: Mlp,
    pub position: PositionEncoding,
    pub update: Mlp,
}

impl PointMetaBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, seed: u64) -> Result<Self> {
        let pre = Mlp::new(store, &format!("{name}.pre"), width, &[(width, Activation::Relu)], seed)?;
        let position = PositionEncoding::new(store, &format!("{name}.position"), width, seed)?;
        let update = update_mlp(store, &format!("{name}.update"), width, seed)?;
        Ok(Self { pre, position, update })
    }

    pub fn width(&self) -> usize {
        self.update.out_dim()
    }

    /// `pre(f)_j + position(p_j - p_i)` per member, `[groups, members, C]`.
    pub fn aggregand(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        check_residual(s, features, groups, self.width())?;
        let reduced = self.pre.forward(s, features)?;
        let gathered = gather_members(s, reduced, groups)?;
        let rel = s.constant(groups.relative.clone());
        let pe = self.position.forward(s, rel)?;
        s.graph.add(gathered, pe)
    }

    pub fn delta(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        let a = self.aggregand(s, features, groups)?;
        let pooled = s.graph.max_pool(a)?;
        self.update.forward(s, pooled)
    }

    pub fn forward(&self, s: &mut Session, features: Var, groups: &LocalGroups) -> Result<Var> {
        let d = self.delta(s, features, groups)?;
        s.graph.add(features, d)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.pre.param_ids(), self.position.param_ids(), self.update.param_ids()].concat()
    }
}

/// [`PointMetaBlock`] with the neighbors' normal embedding added to the
/// pooled term. Without a normal embedding it is exactly a PointMeta block.
#[derive(Clone, Debug, PartialEq)]
pub struct Plam {
    pub meta: PointMetaBlock,
    pub normal: Option<NormalEmbedding>,
}

impl Plam {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, with_normals: bool, seed: u64) -> Result<Self> {
        let meta = PointMetaBlock::new(store, name, width, seed)?;
        let normal = if with_normals {
            Some(NormalEmbedding::new(store, &format!("{name}.normal"), width, seed)?)
        } else {
            None
        };
        Ok(Self { meta, normal })
    }

    pub fn width(&self) -> usize {
        self.meta.width()
    }

    pub fn delta(
        &self,
        s: &mut Session,
        features: Var,
        groups: &LocalGroups,
        normals: Option<&[Point3]>,
    ) -> Result<Var> {
        let mut a = self.meta.aggregand(s, features, groups)?;
        if let Some(gamma) = &self.normal {
            let normals = normals.ok_or(Error::MissingNormals)?;
            if normals.len() != s.value(features).rows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} normals for {} points",
                    normals.len(),
                    s.value(features).rows()
                )));
            }
            let e = gamma.embed(s, normals)?;
            let ge = gather_members(s, e, groups)?;
            a = s.graph.add(a, ge)?;
        }
        let pooled = s.graph.max_pool(a)?;
        self.meta.update.forward(s, pooled)
    }

    pub fn forward(
        &self,
        s: &mut Session,
        features: Var,
        groups: &LocalGroups,
        normals: Option<&[Point3]>,
    ) -> Result<Var> {
        let d = self.delta(s, features, groups, normals)?;
        s.graph.add(features, d)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.meta.param_ids();
        if let Some(g) = &self.normal {
            ids.extend(g.param_ids());
        }
        ids
    }
}
