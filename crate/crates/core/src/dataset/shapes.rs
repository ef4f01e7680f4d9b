//! Procedural primitives with exact signed-distance functions and uniform
//! surface samplers.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, add, norm, normalize, sub, RigidTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Sphere,
    /// Cylinder body plus a box handle on the +x side.
    Mug,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Mug => "mug",
        }
    }

    /// Number of dimension values and their meaning.
    pub fn dims_len(&self) -> usize {
        match self {
            ShapeKind::Box => 3,      // full extents x, y, z
            ShapeKind::Cylinder => 2, // radius, height
            ShapeKind::Sphere => 1,   // radius
            ShapeKind::Mug => 5,      // radius, height, handle reach, handle width, handle height
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(ShapeKind::Box),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "sphere" => Ok(ShapeKind::Sphere),
            "mug" => Ok(ShapeKind::Mug),
            other => Err(Error::InvalidArgument(format!("unknown shape kind `{other}`"))),
        }
    }
}

/// Description of a procedural object (meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveShape {
    pub kind: ShapeKind,
    pub dims: Vec<f64>,
    pub seed: u64,
}

/// Convex building block of an [`Object`], centered at `center`.
#[derive(Clone, Debug, PartialEq)]
enum Part {
    Box { center: Vec3<f64>, half: Vec3<f64> },
    Cylinder { center: Vec3<f64>, radius: f64, half_height: f64 },
    Sphere { center: Vec3<f64>, radius: f64 },
}

impl Part {
    fn sdf(&self, p: Vec3<f64>) -> f64 {
        match *self {
            Part::Box { center, half } => {
                let q = sub(p, center);
                let d = [q[0].abs() - half[0], q[1].abs() - half[1], q[2].abs() - half[2]];
                let outside = norm([d[0].max(0.0), d[1].max(0.0), d[2].max(0.0)]);
                outside + d[0].max(d[1]).max(d[2]).min(0.0)
            }
            Part::Cylinder { center, radius, half_height } => {
                let q = sub(p, center);
                let dr = (q[0] * q[0] + q[1] * q[1]).sqrt() - radius;
                let dz = q[2].abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
            Part::Sphere { center, radius } => norm(sub(p, center)) - radius,
        }
    }

    fn area(&self) -> f64 {
        match *self {
            Part::Box { half, .. } => {
                8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
            }
            Part::Cylinder { radius, half_height, .. } => {
                2.0 * PI * radius * (2.0 * half_height) + 2.0 * PI * radius * radius
            }
            Part::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3<f64> {
        match *self {
            Part::Box { center, half } => {
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let total: f64 = areas.iter().sum();
                let mut u = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if u < *a {
                        axis = i;
                        break;
                    }
                    u -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut q = [0.0; 3];
                for d in 0..3 {
                    q[d] = if d == axis { sign * half[d] } else { rng.random_range(-half[d]..=half[d]) };
                }
                add(center, q)
            }
            Part::Cylinder { center, radius, half_height } => {
                let side = 2.0 * PI * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                let u = rng.random_range(0.0..side + 2.0 * cap);
                let q = if u < side {
                    let th = rng.random_range(0.0..2.0 * PI);
                    [radius * th.cos(), radius * th.sin(), rng.random_range(-half_height..=half_height)]
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let th = rng.random_range(0.0..2.0 * PI);
                    let z = if u < side + cap { half_height } else { -half_height };
                    [r * th.cos(), r * th.sin(), z]
                };
                add(center, q)
            }
            Part::Sphere { center, radius } => add(center, geom::scale(geom::random_unit_vector(rng), radius)),
        }
    }
}

/// Solid object: union of convex parts, optionally viewed in another frame
/// (`sdf(p)` evaluates the shape at `frame.apply(p)`).
#[derive(Clone, Debug, PartialEq)]
pub struct Object {
    pub shape: PrimitiveShape,
    parts: Vec<Part>,
    frame: RigidTransform<f64>,
}

/// Builds the object for `spec`.
pub fn generate_object(spec: &PrimitiveShape) -> Result<Object> {
    let need = spec.kind.dims_len();
    if spec.dims.len() != need {
        return Err(Error::InvalidArgument(format!(
            "{} needs {need} dims, got {}",
            spec.kind.name(),
            spec.dims.len()
        )));
    }
    if spec.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidArgument(format!("dimensions must be positive: {:?}", spec.dims)));
    }
    let d = &spec.dims;
    let origin = [0.0; 3];
    let parts = match spec.kind {
        ShapeKind::Box => vec![Part::Box { center: origin, half: [d[0] / 2.0, d[1] / 2.0, d[2] / 2.0] }],
        ShapeKind::Cylinder => vec![Part::Cylinder { center: origin, radius: d[0], half_height: d[1] / 2.0 }],
        ShapeKind::Sphere => vec![Part::Sphere { center: origin, radius: d[0] }],
        ShapeKind::Mug => {
            let (r, h, reach, width, hh) = (d[0], d[1], d[2], d[3], d[4]);
            if hh > h {
                return Err(Error::InvalidArgument("mug handle taller than the body".into()));
            }
            // The handle overlaps the body by a quarter radius so the union is connected.
            let overlap = 0.25 * r;
            let hx = (reach + overlap) / 2.0;
            vec![
                Part::Cylinder { center: origin, radius: r, half_height: h / 2.0 },
                Part::Box { center: [r - overlap + hx, 0.0, 0.0], half: [hx, width / 2.0, hh / 2.0] },
            ]
        }
    };
    Ok(Object { shape: spec.clone(), parts, frame: RigidTransform::identity() })
}

impl Object {
    /// The same solid expressed in a frame whose origin sits at `offset`
    /// (object coordinates).
    pub fn in_frame(&self, offset: Vec3<f64>) -> Object {
        Object { frame: self.frame.compose(&RigidTransform::from_translation(offset)), ..self.clone() }
    }

    /// The solid moved by `tf`: `moved.sdf(tf.apply(p)) == self.sdf(p)`.
    pub fn transformed(&self, tf: &RigidTransform<f64>) -> Object {
        Object { frame: self.frame.compose(&tf.inverse()), ..self.clone() }
    }

    /// Maps current-frame coordinates to object coordinates.
    pub fn frame(&self) -> &RigidTransform<f64> {
        &self.frame
    }

    /// Exact signed distance (negative inside). For composites this is the
    /// minimum of the parts, exact outside and a lower bound on depth inside.
    pub fn sdf(&self, p: Vec3<f64>) -> f64 {
        let q = self.frame.apply(p);
        self.parts.iter().map(|part| part.sdf(q)).fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal from the central-difference SDF gradient.
    pub fn normal(&self, p: Vec3<f64>) -> Vec3<f64> {
        let h = 1e-6;
        let mut g = [0.0; 3];
        for d in 0..3 {
            let mut a = p;
            let mut b = p;
            a[d] += h;
            b[d] -= h;
            g[d] = self.sdf(a) - self.sdf(b);
        }
        normalize(g).unwrap_or([0.0, 0.0, 1.0])
    }

    pub fn surface_area(&self) -> f64 {
        self.parts.iter().map(Part::area).sum()
    }

    /// Uniform-area surface point (rejecting part surface buried inside
    /// another part) with its outward normal.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3<f64>, Vec3<f64>) {
        let areas: Vec<f64> = self.parts.iter().map(Part::area).collect();
        let total: f64 = areas.iter().sum();
        loop {
            let mut u = rng.random_range(0.0..total);
            let mut idx = areas.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if u < *a {
                    idx = i;
                    break;
                }
                u -= a;
            }
            let q = self.parts[idx].sample_surface(rng);
            let buried = self.parts.iter().enumerate().any(|(j, part)| j != idx && part.sdf(q) < -1e-9);
            if buried {
                continue;
            }
            let p = self.frame.inverse().apply(q);
            return (p, self.normal(p));
        }
    }

    pub fn sample_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3<f64>> {
        (0..n).map(|_| self.sample_surface(rng).0).collect()
    }

    /// Axis-aligned bounding box `(min, max)` in the current frame.
    pub fn bounds(&self) -> (Vec3<f64>, Vec3<f64>) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let to_frame = self.frame.inverse();
        for part in &self.parts {
            let (c, h) = match *part {
                Part::Box { center, half } => (center, half),
                Part::Cylinder { center, radius, half_height } => (center, [radius, radius, half_height]),
                Part::Sphere { center, radius } => (center, [radius; 3]),
            };
            // Corners of the part's box, so rotated frames stay conservative.
            for corner in 0..8 {
                let sign = |bit: usize| if corner >> bit & 1 == 1 { 1.0 } else { -1.0 };
                let p = to_frame.apply([c[0] + sign(0) * h[0], c[1] + sign(1) * h[1], c[2] + sign(2) * h[2]]);
                for d in 0..3 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
        (lo, hi)
    }

    /// Where a ray entering the solid at surface point `start` along unit
    /// `dir` leaves it again. `None` if it never leaves within `max_dist`.
    pub fn ray_exit(&self, start: Vec3<f64>, dir: Vec3<f64>, max_dist: f64) -> Option<Vec3<f64>> {
        let at = |s: f64| add(start, geom::scale(dir, s));
        let mut s = 1e-5;
        if self.sdf(at(s)) >= 0.0 {
            return None;
        }
        let mut inside = s;
        while s < max_dist {
            let d = self.sdf(at(s));
            if d >= 0.0 {
                let mut outside = s;
                for _ in 0..60 {
                    let mid = 0.5 * (inside + outside);
                    if self.sdf(at(mid)) < 0.0 {
                        inside = mid;
                    } else {
                        outside = mid;
                    }
                }
                return Some(at(0.5 * (inside + outside)));
            }
            inside = s;
            s += (-d).max(1e-5);
        }
        None
    }

    /// First surface point hit travelling from `start` (outside) along unit
    /// `dir` for at most `max_dist`. Returns the distance travelled.
    pub fn first_hit(&self, start: Vec3<f64>, dir: Vec3<f64>, max_dist: f64) -> Option<f64> {
        let at = |s: f64| add(start, geom::scale(dir, s));
        if self.sdf(start) <= 0.0 {
            return Some(0.0);
        }
        let mut s = 0.0;
        for _ in 0..10_000 {
            let d = self.sdf(at(s));
            if d < 1e-9 {
                return Some(s);
            }
            s += d.max(1e-7);
            if s > max_dist {
                return None;
            }
        }
        None
    }
}
