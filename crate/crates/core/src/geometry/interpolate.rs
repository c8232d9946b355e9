use super::cloud::Point3;
use super::neighbors::{knn, NeighborIndex};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Guard added to distances so coincident points get a large but finite weight.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Inverse-distance weighted average of `support_features` (N x C) at each
/// query, over its `k` nearest supports with weights `1 / (d + epsilon)`.
pub fn inverse_distance_interpolate(
    queries: &[Point3],
    support: &[Point3],
    support_features: &Tensor,
    k: usize,
    epsilon: f64,
) -> Result<Tensor> {
    if support_features.rank() != 2 || support_features.shape()[0] != support.len() {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} for {} support points",
            support_features.shape(),
            support.len()
        )));
    }
    if !support_features.is_finite() {
        return Err(Error::NonFinite("support features"));
    }
    let neighbors = knn(queries, support, k)?;
    interpolate_with(&neighbors, support_features, epsilon)
}

/// Same weighting as [`inverse_distance_interpolate`] over a precomputed grouping.
pub fn interpolate_with(neighbors: &NeighborIndex, support_features: &Tensor, epsilon: f64) -> Result<Tensor> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let c = support_features.shape()[1];
    let src = support_features.data();
    let mut out = vec![0.0; neighbors.query_count() * c];
    for (q, (idx, dist)) in neighbors.iter().enumerate() {
        let row = &mut out[q * c..(q + 1) * c];
        let mut total = 0.0;
        for (&i, &d) in idx.iter().zip(dist) {
            let w = 1.0 / (d + epsilon);
            total += w;
            for (o, &f) in row.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o += w * f;
            }
        }
        for o in row.iter_mut() {
            *o /= total;
        }
    }
    Tensor::new(&[neighbors.query_count(), c], out)
}
