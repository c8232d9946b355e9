use nalgebra::DMatrix;

use super::cloud::{centroid, norm, Point3};
use super::neighbors::knn;
use crate::error::{Error, Result};

/// Default neighborhood size (the point itself plus k - 1 neighbors).
pub const DEFAULT_NORMAL_K: usize = 16;

/// Symmetric positive semidefinite 3x3 spread matrix of a neighborhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance3 {
    pub m: [[f64; 3]; 3],
}

impl Covariance3 {
    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let m = nalgebra::Matrix3::from_fn(|r, c| self.m[r][c]);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2]]
    }
}

/// `M = (1/k) * sum (p - mean)(p - mean)^T` over the given points.
pub fn covariance_matrix(points: &[Point3]) -> Result<Covariance3> {
    if points.len() < 3 {
        return Err(Error::DegenerateNeighborhood(points.len()));
    }
    let c = centroid(points);
    let mut m = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for r in 0..3 {
            for col in r..3 {
                m[r][col] += d[r] * d[col];
            }
        }
    }
    let k = points.len() as f64;
    for r in 0..3 {
        for col in r..3 {
            m[r][col] /= k;
            m[col][r] = m[r][col];
        }
    }
    Ok(Covariance3 { m })
}

/// Flips `v` so its largest-magnitude component is positive.
pub fn canonicalize_sign(v: Point3) -> Point3 {
    let mut lead = 0;
    for a in 1..3 {
        if v[a].abs() > v[lead].abs() {
            lead = a;
        }
    }
    if v[lead] < 0.0 {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

/// Least-squares plane normal of a neighborhood: the right singular vector of
/// the centered data matrix with the smallest singular value. The flag is set
/// when the two smallest singular values coincide and the direction is not
/// unique.
pub fn plane_normal(points: &[Point3]) -> Result<(Point3, bool)> {
    if points.len() < 3 {
        return Err(Error::DegenerateNeighborhood(points.len()));
    }
    let c = centroid(points);
    let centered = DMatrix::from_fn(points.len(), 3, |r, a| points[r][a] - c[a]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::InvalidArgument("SVD did not converge".into()))?;
    let s = &svd.singular_values;
    // A k x 3 matrix with k >= 3 has three singular values.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let (min_i, next_i, max_i) = (order[0], order[1], order[2]);
    let scale = s[max_i].max(f64::MIN_POSITIVE);
    let ambiguous = (s[next_i] - s[min_i]) <= 1e-9 * scale;
    let row = v_t.row(min_i);
    let mut n = [row[0], row[1], row[2]];
    let len = norm(&n);
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::NonFinite("normal"));
    }
    n = [n[0] / len, n[1] / len, n[2] / len];
    Ok((canonicalize_sign(n), ambiguous))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<Point3>,
    /// Points whose neighborhood has no unique least-spread direction.
    pub ambiguous: Vec<usize>,
}

/// Per-point normals from each point and its `k - 1` nearest neighbors.
pub fn estimate_normals(positions: &[Point3], k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("normal neighborhood k must be >= 3, got {k}")));
    }
    if positions.len() < k {
        return Err(Error::NeighborCountTooLarge { k, support: positions.len() });
    }
    let neighbors = knn(positions, positions, k)?;
    let mut normals = Vec::with_capacity(positions.len());
    let mut ambiguous = Vec::new();
    let mut patch = Vec::with_capacity(k);
    for (i, (idx, _)) in neighbors.iter().enumerate() {
        patch.clear();
        patch.extend(idx.iter().map(|&j| positions[j]));
        let (n, amb) = plane_normal(&patch)?;
        if amb {
            ambiguous.push(i);
        }
        normals.push(n);
    }
    Ok(NormalEstimate { normals, ambiguous })
}
