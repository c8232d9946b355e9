use crate::error::{Error, Result};
use crate::geometry::{check_unit_normals, Point3};
use crate::numerics::{Activation, Mlp, ParamId, ParamStore, Session, Tensor, Var};

fn two_layer(store: &mut ParamStore, name: &str, width: usize, seed: u64) -> Result<Mlp> {
    Mlp::new(store, name, 3, &[(width, Activation::Relu), (width, Activation::None)], seed)
}

/// Lifts relative coordinates to feature width: `3 -> C -> C`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionEncoding {
    pub mlp: Mlp,
}

impl PositionEncoding {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, seed: u64) -> Result<Self> {
        Ok(Self { mlp: two_layer(store, name, width, seed)? })
    }

    pub fn width(&self) -> usize {
        self.mlp.out_dim()
    }

    /// `rel` is any `[..., 3]` tensor.
    pub fn forward(&self, s: &mut Session, rel: Var) -> Result<Var> {
        if s.value(rel).last_dim() != 3 {
            return Err(Error::ShapeMismatch(format!("position encoding input {:?}", s.value(rel).shape())));
        }
        self.mlp.forward(s, rel)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

/// Lifts unit normals to feature width: `3 -> C -> C`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEmbedding {
    pub mlp: Mlp,
}

impl NormalEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, seed: u64) -> Result<Self> {
        Ok(Self { mlp: two_layer(store, name, width, seed)? })
    }

    pub fn width(&self) -> usize {
        self.mlp.out_dim()
    }

    /// Embeds per-point normals into `[N, C]`; rejects vectors that are not unit length.
    pub fn embed(&self, s: &mut Session, normals: &[Point3]) -> Result<Var> {
        if normals.is_empty() {
            return Err(Error::EmptyInput("normals"));
        }
        check_unit_normals(normals)?;
        let t = Tensor::new(&[normals.len(), 3], normals.iter().flatten().copied().collect())?;
        let v = s.constant(t);
        self.mlp.forward(s, v)
    }

    /// Embeds normals already held in the graph, of any `[..., 3]` shape.
    pub fn forward(&self, s: &mut Session, normals: Var) -> Result<Var> {
        if s.value(normals).last_dim() != 3 {
            return Err(Error::ShapeMismatch(format!("normal embedding input {:?}", s.value(normals).shape())));
        }
        self.mlp.forward(s, normals)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}
