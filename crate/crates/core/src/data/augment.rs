use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::shapes::rotate;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Training-time perturbations. The up axis is z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Uniform rotation about the up axis.
    pub rotate_up: bool,
    /// Uniform isotropic scale range.
    pub scale: Option<(f64, f64)>,
    /// Standard deviation of per-point Gaussian jitter.
    pub jitter: f64,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self { rotate_up: false, scale: None, jitter: 0.0 }
    }

    /// Rotation about z, scale in [0.8, 1.2], jitter 0.01.
    pub fn standard() -> Self {
        Self { rotate_up: true, scale: Some((0.8, 1.2)), jitter: 0.01 }
    }

    pub fn is_identity(&self) -> bool {
        !self.rotate_up && self.scale.is_none() && self.jitter == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::InvalidArgument(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        if let Some((lo, hi)) = self.scale {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid scale range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Perturbed copy of `cloud`. Normals follow the rotation (isotropic scale
/// leaves them unchanged); labels and features are carried over.
pub fn augment(cloud: &PointCloud, seed: u64, policy: &AugmentPolicy) -> Result<PointCloud> {
    policy.validate()?;
    if policy.is_identity() {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = if policy.rotate_up {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = a.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    } else {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    };
    let scale = policy.scale.map_or(1.0, |(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) });
    let positions = cloud
        .positions()
        .iter()
        .map(|p| {
            let r = rotate(&rot, p);
            std::array::from_fn(|d| {
                let z: f64 = if policy.jitter > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
                r[d] * scale + z * policy.jitter
            })
        })
        .collect();
    let mut out = PointCloud::new(positions)?;
    out.set_features(cloud.features().cloned())?;
    out.set_normals(cloud.normals().map(|ns| ns.iter().map(|n| rotate(&rot, n)).collect()))?;
    out.set_labels(cloud.labels().map(<[u32]>::to_vec))?;
    Ok(out)
}
