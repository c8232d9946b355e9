use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub type Point3 = [f64; 3];

/// Tolerance on the Euclidean norm of a stored normal.
pub const UNIT_NORMAL_TOLERANCE: f64 = 1e-6;

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

/// Positions plus optional per-point features, unit normals and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    features: Option<Tensor>,
    normals: Option<Vec<Point3>>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("positions"));
        }
        Ok(Self { positions, features: None, normals: None, labels: None })
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        self.set_features(Some(features))?;
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Point3>) -> Result<Self> {
        self.set_normals(Some(normals))?;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        self.set_labels(Some(labels))?;
        Ok(self)
    }

    pub fn set_features(&mut self, features: Option<Tensor>) -> Result<()> {
        if let Some(f) = &features {
            if f.rank() != 2 || f.shape()[0] != self.len() {
                return Err(Error::ShapeMismatch(format!(
                    "features {:?} for {} points",
                    f.shape(),
                    self.len()
                )));
            }
            if !f.is_finite() {
                return Err(Error::NonFinite("features"));
            }
        }
        self.features = features;
        Ok(())
    }

    pub fn set_normals(&mut self, normals: Option<Vec<Point3>>) -> Result<()> {
        if let Some(n) = &normals {
            if n.len() != self.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} normals for {} points",
                    n.len(),
                    self.len()
                )));
            }
            check_unit_normals(n)?;
        }
        self.normals = normals;
        Ok(())
    }

    pub fn set_labels(&mut self, labels: Option<Vec<u32>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    self.len()
                )));
            }
        }
        self.labels = labels;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Keeps the rows at `indices`, in that order, across every attribute.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
        }
        Ok(Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.as_ref().map(|f| f.gather_rows(indices)),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        })
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.positions)
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        c[0] += p[0];
        c[1] += p[1];
        c[2] += p[2];
    }
    let n = points.len().max(1) as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

pub fn check_unit_normals(normals: &[Point3]) -> Result<()> {
    for (row, n) in normals.iter().enumerate() {
        let len = norm(n);
        if !len.is_finite() || (len - 1.0).abs() > UNIT_NORMAL_TOLERANCE {
            return Err(Error::NonUnitNormal { row, norm: len });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_positions() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn attribute_lengths_must_match() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(cloud.clone().with_labels(vec![0]).is_err());
        assert!(cloud.clone().with_normals(vec![[0.0, 0.0, 1.0]]).is_err());
        assert!(cloud.clone().with_features(Tensor::zeros(&[3, 2])).is_err());
        assert!(cloud.with_labels(vec![0, 1]).is_ok());
    }

    #[test]
    fn normals_must_be_unit() {
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(matches!(
            cloud.clone().with_normals(vec![[0.0, 0.0, 1.1]]),
            Err(Error::NonUnitNormal { row: 0, .. })
        ));
        assert!(cloud.with_normals(vec![[0.0, 0.0, 1.0 + 1e-8]]).is_ok());
    }

    #[test]
    fn select_reorders_all_attributes() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
            .unwrap()
            .with_labels(vec![5, 6, 7])
            .unwrap()
            .with_features(Tensor::new(&[3, 1], vec![0.5, 1.5, 2.5]).unwrap())
            .unwrap();
        let sub = cloud.select(&[2, 0]).unwrap();
        assert_eq!(sub.positions(), &[[2.0, 0.0, 0.0], [0.0; 3]]);
        assert_eq!(sub.labels().unwrap(), &[7, 5]);
        assert_eq!(sub.features().unwrap().data(), &[2.5, 0.5]);
        assert!(cloud.select(&[3]).is_err());
    }
}
