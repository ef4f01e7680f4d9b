//! SE(3) pose algebra: unit quaternions, scaled modified Rodrigues parameters,
//! rigid transforms and the centroid frame.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Vec3<T> = [T; 3];

/// Scale factor in `a = scale/(1+q_w)·q_vec`.
pub const DEFAULT_MRP_SCALE: f64 = 4.0;

pub fn add<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale<T: Scalar>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm<T: Scalar>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn normalize<T: Scalar>(a: Vec3<T>) -> Option<Vec3<T>> {
    let n = norm(a);
    (n > T::zero() && n.is_finite()).then(|| scale(a, T::one() / n))
}

/// Unit quaternion `(w, x, y, z)` on the canonical hemisphere: `w ≥ 0`, and
/// when `w = 0` the first nonzero vector component is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion<T> {
    w: T,
    x: T,
    y: T,
    z: T,
}

impl<T: Scalar> UnitQuaternion<T> {
    /// Normalizes and canonicalizes.
    pub fn new(w: T, x: T, y: T, z: T) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > T::zero()) {
            return Err(Error::InvalidArgument(format!("cannot normalize quaternion ({w}, {x}, {y}, {z})")));
        }
        // Already-unit input is kept bit-for-bit so serialized poses round trip.
        if (n - T::one()).abs() <= T::lit(4.0) * T::epsilon() {
            return Ok(Self { w, x, y, z }.canonical());
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n }.canonical())
    }

    /// Wraps raw components without normalizing or canonicalizing.
    pub fn new_unchecked(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Result<Self> {
        let axis = normalize(axis).ok_or_else(|| Error::InvalidArgument("zero rotation axis".into()))?;
        let half = angle / T::lit(2.0);
        let s = half.sin();
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Rotation whose matrix has the given orthonormal columns.
    pub fn from_matrix(m: [[T; 3]; 3]) -> Result<Self> {
        let one = T::one();
        let quarter = T::lit(0.25);
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > T::zero() {
            let s = (trace + one).sqrt() * T::lit(2.0);
            w = quarter * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
            w = (m[2][1] - m[1][2]) / s;
            x = quarter * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = quarter * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = quarter * s;
        }
        Self::new(w, x, y, z)
    }

    pub fn w(&self) -> T {
        self.w
    }

    pub fn vector(&self) -> Vec3<T> {
        [self.x, self.y, self.z]
    }

    /// `[w, x, y, z]`.
    pub fn to_array(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> T {
        self.to_array().iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Picks the representative of `±q` on the canonical hemisphere.
    pub fn canonical(self) -> Self {
        let flip = if self.w != T::zero() {
            self.w < T::zero()
        } else {
            [self.x, self.y, self.z].into_iter().find(|v| *v != T::zero()).is_some_and(|v| v < T::zero())
        };
        if flip {
            Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }

    pub fn conjugate(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }.canonical()
    }

    /// Hamilton product `self ⊗ rhs`: rotating by the result equals rotating
    /// by `rhs` first, then by `self`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        let q = Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        };
        let n = q.norm();
        Self { w: q.w / n, x: q.x / n, y: q.y / n, z: q.z / n }.canonical()
    }

    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        // v' = v + 2w (u×v) + 2 u×(u×v)
        let u = self.vector();
        let two = T::lit(2.0);
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        add(v, add(scale(uv, two * self.w), scale(uuv, two)))
    }

    /// Rotation matrix, row-major.
    pub fn to_matrix(&self) -> [[T; 3]; 3] {
        let cols = [
            self.rotate([T::one(), T::zero(), T::zero()]),
            self.rotate([T::zero(), T::one(), T::zero()]),
            self.rotate([T::zero(), T::zero(), T::one()]),
        ];
        let mut m = [[T::zero(); 3]; 3];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..3 {
                m[i][j] = col[i];
            }
        }
        m
    }

    /// `|⟨q_a, q_b⟩|`, invariant to the sign of either quaternion.
    pub fn abs_dot(&self, other: &Self) -> T {
        self.to_array().iter().zip(other.to_array()).map(|(&a, b)| a * b).sum::<T>().abs()
    }

    /// Rotation angle in `[0, π]` between two orientations.
    pub fn angle_to(&self, other: &Self) -> T {
        (T::lit(2.0) * self.abs_dot(other).min(T::one()).acos()).abs()
    }

    pub fn cast<U: Scalar>(&self) -> UnitQuaternion<U> {
        UnitQuaternion { w: U::lit(self.w.as_f64()), x: U::lit(self.x.as_f64()), y: U::lit(self.y.as_f64()), z: U::lit(self.z.as_f64()) }
    }
}

/// `a = scale/(1+q_w) · (q_x, q_y, q_z)`.
pub fn quat_to_mrp<T: Scalar>(q: &UnitQuaternion<T>, scale_factor: T) -> Result<Vec3<T>> {
    let denom = T::one() + q.w();
    if denom <= T::epsilon() {
        return Err(Error::InvalidArgument("q_w = -1 has no MRP; canonicalize first".into()));
    }
    Ok(scale(q.vector(), scale_factor / denom))
}

/// Inverse of [`quat_to_mrp`]: with `p = a/scale`,
/// `q = ((1−‖p‖²), 2p) / (1+‖p‖²)`, then canonicalized.
pub fn mrp_to_quat<T: Scalar>(a: Vec3<T>, scale_factor: T) -> UnitQuaternion<T> {
    let p = scale(a, T::one() / scale_factor);
    let n2 = dot(p, p);
    let d = T::one() + n2;
    let two = T::lit(2.0);
    let q = UnitQuaternion::new_unchecked((T::one() - n2) / d, two * p[0] / d, two * p[1] / d, two * p[2] / d);
    q.canonical()
}

/// Axis uniform on the sphere, angle uniform in `[0, π]`. This is not the
/// Haar measure on SO(3); small angles are over-represented.
pub fn random_rotation<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<T> {
    let axis = random_unit_vector(rng);
    let angle: f64 = rng.random_range(0.0..=std::f64::consts::PI);
    UnitQuaternion::from_axis_angle(axis, T::lit(angle)).expect("unit axis")
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec3<T> {
    loop {
        let v: [f64; 3] = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
        if let Some(u) = normalize(v) {
            return [T::lit(u[0]), T::lit(u[1]), T::lit(u[2])];
        }
    }
}

/// Element of SE(3): `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: UnitQuaternion<T>,
    pub translation: Vec3<T>,
}

impl<T: Scalar> RigidTransform<T> {
    pub fn new(rotation: UnitQuaternion<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: [T::zero(); 3] }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: t }
    }

    pub fn from_rotation(q: UnitQuaternion<T>) -> Self {
        Self { rotation: q, translation: [T::zero(); 3] }
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        add(self.rotation.rotate(p), self.translation)
    }

    pub fn apply_vector(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(v)
    }

    /// `self ∘ rhs`: apply `rhs` first.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self { rotation: self.rotation.mul(&rhs.rotation), translation: self.apply(rhs.translation) }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.conjugate();
        Self { rotation: r, translation: scale(r.rotate(self.translation), -T::one()) }
    }

    /// Column `i` of the rotation matrix (the frame's i-th axis).
    pub fn axis(&self, i: usize) -> Vec3<T> {
        let mut e = [T::zero(); 3];
        e[i] = T::one();
        self.rotation.rotate(e)
    }

    /// `[q_w, q_x, q_y, q_z, t_x, t_y, t_z]`.
    pub fn to_array7(&self) -> [T; 7] {
        let q = self.rotation.to_array();
        let t = self.translation;
        [q[0], q[1], q[2], q[3], t[0], t[1], t[2]]
    }

    pub fn from_array7(a: [T; 7]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pose".into()));
        }
        Ok(Self { rotation: UnitQuaternion::new(a[0], a[1], a[2], a[3])?, translation: [a[4], a[5], a[6]] })
    }

    pub fn cast<U: Scalar>(&self) -> RigidTransform<U> {
        RigidTransform {
            rotation: self.rotation.cast(),
            translation: [U::lit(self.translation[0].as_f64()), U::lit(self.translation[1].as_f64()), U::lit(self.translation[2].as_f64())],
        }
    }
}

/// Six-parameter grasp encoding `[t, a]`: translation then scaled MRP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6<T> {
    pub t: Vec3<T>,
    pub a: Vec3<T>,
}

impl<T: Scalar> Pose6<T> {
    pub fn from_transform(tf: &RigidTransform<T>, mrp_scale: T) -> Result<Self> {
        Ok(Self { t: tf.translation, a: quat_to_mrp(&tf.rotation, mrp_scale)? })
    }

    pub fn to_transform(&self, mrp_scale: T) -> RigidTransform<T> {
        RigidTransform { rotation: mrp_to_quat(self.a, mrp_scale), translation: self.t }
    }

    /// `[t_x, t_y, t_z, a_x, a_y, a_z]`.
    pub fn to_array(&self) -> [T; 6] {
        [self.t[0], self.t[1], self.t[2], self.a[0], self.a[1], self.a[2]]
    }

    pub fn from_slice(v: &[T]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::Shape(format!("Pose6 needs 6 values, got {}", v.len())));
        }
        Ok(Self { t: [v[0], v[1], v[2]], a: [v[3], v[4], v[5]] })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Shifts the cloud and grasps so the cloud centroid is the origin. Returns
/// the centroid (add it back to un-normalize).
pub fn centroid_frame<T: Scalar>(
    pc: &PointCloud<T>,
    grasps: &[RigidTransform<T>],
) -> Result<(PointCloud<T>, Vec<RigidTransform<T>>, Vec3<T>)> {
    let c = pc.centroid().ok_or(Error::Empty("point cloud"))?;
    let shifted = pc.translated(scale(c, -T::one()), true);
    let grasps = grasps
        .iter()
        .map(|g| RigidTransform { rotation: g.rotation, translation: sub(g.translation, c) })
        .collect();
    Ok((shifted, grasps, c))
}
