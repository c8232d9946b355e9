//! Deterministic point-cloud primitives: sampling, grouping, interpolation
//! and covariance-based normal estimation.
//!
//! Every routine here is a pure function of its inputs. Neighbor searches are
//! exact (squared Euclidean ordering, ties to the smaller index), so results
//! can be compared against exhaustive oracles bit for bit.

mod cloud;
mod interpolate;
mod neighbors;
mod normals;
mod sampling;

pub use cloud::{
    centroid, check_unit_normals, dist2, dot, norm, sub, Point3, PointCloud, UNIT_NORMAL_TOLERANCE,
};
pub use interpolate::{interpolate_with, inverse_distance_interpolate, DEFAULT_EPSILON};
pub use neighbors::{ball_query, knn, knn_grid, NeighborIndex, UniformGrid};
pub use normals::{
    canonicalize_sign, covariance_matrix, estimate_normals, plane_normal, Covariance3, NormalEstimate,
    DEFAULT_NORMAL_K,
};
pub use sampling::farthest_point_sample;
