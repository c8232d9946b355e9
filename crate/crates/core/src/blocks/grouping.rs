use crate::error::{Error, Result};
use crate::geometry::{ball_query, knn, sub, NeighborIndex, Point3};
use crate::numerics::Tensor;

/// How neighbors of a center are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Grouping {
    /// `k` nearest support points, clamped to the support size.
    Knn { k: usize },
    /// Up to `max_k` points within `radius`, padded to `max_k` by repetition.
    Ball { radius: f64, max_k: usize },
}

impl Grouping {
    pub fn members(&self, support: usize) -> usize {
        match *self {
            Grouping::Knn { k } => k.min(support),
            Grouping::Ball { max_k, .. } => max_k,
        }
    }

    pub fn group(&self, centers: &[Point3], support: &[Point3]) -> Result<LocalGroups> {
        let nb = match *self {
            Grouping::Knn { k } => knn(centers, support, k.min(support.len()))?,
            Grouping::Ball { radius, max_k } => ball_query(centers, support, radius, max_k)?.pad_to(max_k),
        };
        LocalGroups::new(centers, support, &nb)
    }
}

/// Fixed-size neighbor groups with their relative coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGroups {
    /// `groups * members` support indices, group-major.
    pub index: Vec<usize>,
    pub groups: usize,
    pub members: usize,
    /// `[groups, members, 3]`, neighbor minus center.
    pub relative: Tensor,
}

impl LocalGroups {
    pub fn new(centers: &[Point3], support: &[Point3], neighbors: &NeighborIndex) -> Result<Self> {
        if neighbors.query_count() != centers.len() || neighbors.support_len() != support.len() {
            return Err(Error::ShapeMismatch(format!(
                "grouping has {} queries over {} supports, expected {} over {}",
                neighbors.query_count(),
                neighbors.support_len(),
                centers.len(),
                support.len()
            )));
        }
        let members = neighbors
            .uniform_len()
            .ok_or_else(|| Error::ShapeMismatch("neighbor lists must have equal length".into()))?;
        if members == 0 {
            return Err(Error::EmptyInput("neighbor list"));
        }
        let index = neighbors.flat_indices()?.to_vec();
        let mut rel = Vec::with_capacity(index.len() * 3);
        for (g, c) in centers.iter().enumerate() {
            for &j in &index[g * members..(g + 1) * members] {
                rel.extend_from_slice(&sub(&support[j], c));
            }
        }
        let relative = Tensor::new(&[centers.len(), members, 3], rel)?;
        Ok(Self { index, groups: centers.len(), members, relative })
    }

    pub(crate) fn check_support(&self, rows: usize) -> Result<()> {
        match self.index.iter().find(|&&i| i >= rows) {
            Some(&bad) => Err(Error::IndexOutOfRange { index: bad, len: rows }),
            None => Ok(()),
        }
    }
}
