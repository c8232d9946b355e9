//! Local aggregation blocks.
//!
//! All blocks take features as graph variables and positions / normals as
//! plain data: geometry is never differentiated. Grouping is resolved once
//! into a [`LocalGroups`] and can be shared by every block of a stage.

mod embedding;
mod grouping;
mod local;
mod pdsa;

pub use embedding::{NormalEmbedding, PositionEncoding};
pub use grouping::{Grouping, LocalGroups};
pub(crate) use local::update_mlp;
pub use local::{InvResMlp, Plam, PointMetaBlock, SetAbstraction};
pub use pdsa::{Pdsa, StageCloud};

#[cfg(test)]
mod tests;
