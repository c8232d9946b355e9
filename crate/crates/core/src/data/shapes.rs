use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{norm, Point3};

/// Tube radius of a torus relative to its ring radius.
pub const TORUS_TUBE_RATIO: f64 = 0.35;

/// Smallest cloud a shape may be sampled with.
pub const MIN_SHAPE_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    /// Radius `scale`.
    Sphere,
    /// Half-side `scale`.
    Cube,
    /// Ring radius `scale`, tube radius `TORUS_TUBE_RATIO * scale`, ring in the xy plane.
    Torus,
    /// Radius `scale`, height `2 * scale` along z, capped.
    Cylinder,
    /// Square of half-side `scale` in the xy plane.
    Plane,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [Self::Sphere, Self::Cube, Self::Torus, Self::Cylinder, Self::Plane];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Cube => "cube",
            Self::Torus => "torus",
            Self::Cylinder => "cylinder",
            Self::Plane => "plane",
        }
    }

    /// Radius of a ball around the origin containing the unposed shape.
    pub fn bounding_radius(self, scale: f64) -> f64 {
        scale
            * match self {
                Self::Sphere => 1.0,
                Self::Cube => 3f64.sqrt(),
                Self::Torus => 1.0 + TORUS_TUBE_RATIO,
                Self::Cylinder | Self::Plane => 2f64.sqrt(),
            }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape kind '{s}'")))
    }
}

pub fn parse_kinds(list: &str) -> Result<Vec<ShapeKind>> {
    let kinds = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("empty shape list".into()));
    }
    Ok(kinds)
}

/// Unit quaternion `(w, x, y, z)` to a row-major rotation matrix.
pub fn rotation_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(m: &[[f64; 3]; 3], p: &Point3) -> Point3 {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

/// Uniformly distributed rotation.
pub fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub scale: f64,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub translation: Point3,
    /// Standard deviation of the Gaussian position noise.
    pub noise: f64,
    pub points: usize,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, scale: f64, points: usize) -> Self {
        Self { kind, scale, rotation: [1.0, 0.0, 0.0, 0.0], translation: [0.0; 3], noise: 0.0, points }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {}", self.noise)));
        }
        if self.points < MIN_SHAPE_POINTS {
            return Err(Error::InvalidArgument(format!(
                "shape needs at least {MIN_SHAPE_POINTS} points, got {}",
                self.points
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {}", self.scale)));
        }
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-9 || self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pose must be a unit quaternion and a finite translation".into()));
        }
        Ok(())
    }

    pub fn bounding_radius(&self) -> f64 {
        self.kind.bounding_radius(self.scale)
    }

    /// Area-uniform surface samples with their analytic normals, posed and
    /// jittered. A pure function of `(self, seed)`.
    pub fn sample(&self, seed: u64) -> Result<(Vec<Point3>, Vec<Point3>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot = rotation_matrix(self.rotation);
        let mut positions = Vec::with_capacity(self.points);
        let mut normals = Vec::with_capacity(self.points);
        for _ in 0..self.points {
            let (p, n) = unit_surface_point(self.kind, &mut rng);
            let p = rotate(&rot, &p.map(|v| v * self.scale));
            let n = rotate(&rot, &n);
            let l = norm(&n);
            let jitter: [f64; 3] = std::array::from_fn(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * self.noise
            });
            positions.push(std::array::from_fn(|d| p[d] + self.translation[d] + jitter[d]));
            normals.push(n.map(|v| v / l));
        }
        Ok((positions, normals))
    }
}

/// One area-uniform sample on the unit-scale surface and its outward normal.
fn unit_surface_point(kind: ShapeKind, rng: &mut impl Rng) -> (Point3, Point3) {
    use std::f64::consts::TAU;
    match kind {
        ShapeKind::Sphere => loop {
            let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let n = norm(&v);
            if n > 1e-9 {
                let u = v.map(|x| x / n);
                return (u, u);
            }
        },
        ShapeKind::Cube => {
            let face = rng.random_range(0..6usize);
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = [0.0; 3];
            for (d, v) in p.iter_mut().enumerate() {
                *v = if d == axis { sign } else { rng.random_range(-1.0..1.0) };
            }
            let mut n = [0.0; 3];
            n[axis] = sign;
            (p, n)
        }
        ShapeKind::Torus => {
            // Rejection on the tube angle keeps the density uniform in area.
            let r = TORUS_TUBE_RATIO;
            loop {
                let u = rng.random_range(0.0..TAU);
                let v = rng.random_range(0.0..TAU);
                let w: f64 = rng.random();
                if w * (1.0 + r) <= 1.0 + r * v.cos() {
                    let n = [v.cos() * u.cos(), v.cos() * u.sin(), v.sin()];
                    let ring = 1.0 + r * v.cos();
                    return ([ring * u.cos(), ring * u.sin(), r * v.sin()], n);
                }
            }
        }
        ShapeKind::Cylinder => {
            // Lateral area 4*pi, caps 2*pi together.
            let pick: f64 = rng.random();
            if pick < 2.0 / 3.0 {
                let u = rng.random_range(0.0..TAU);
                let z = rng.random_range(-1.0..1.0);
                ([u.cos(), u.sin(), z], [u.cos(), u.sin(), 0.0])
            } else {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let u = rng.random_range(0.0..TAU);
                let rad = rng.random::<f64>().sqrt();
                ([rad * u.cos(), rad * u.sin(), sign], [0.0, 0.0, sign])
            }
        }
        ShapeKind::Plane => ([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0], [0.0, 0.0, 1.0]),
    }
}
