//! Procedural objects, analytic grasp annotation, augmentation, region
//! labels and dataset persistence.

mod annotate;
mod augment;
mod gripper;
mod io;
mod shapes;

pub use annotate::{annotate_grasps, AnnotationReport};
pub use augment::{augment, partial_view, AugmentConfig, Augmented};
pub use gripper::GripperSpec;
pub use io::{
    dataset_to_string, desk_suite, generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig, GraspEntry, ObjectEntry,
    ObjectRecord,
};
pub use shapes::{generate_object, Object, PrimitiveShape, ShapeKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, RigidTransform, Vec3};
use crate::scalar::Scalar;

/// Ordered set of 3-D points (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Vec3<T>>,
    centered: bool,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        Ok(Self { points, centered: false })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new(), centered: false }
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether the cloud was produced by a centroid-frame operation.
    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn centroid(&self) -> Option<Vec3<T>> {
        if self.points.is_empty() {
            return None;
        }
        let n = T::lit(self.points.len() as f64);
        let mut c = [T::zero(); 3];
        for p in &self.points {
            c = geom::add(c, *p);
        }
        Some(geom::scale(c, T::one() / n))
    }

    pub fn translated(&self, d: Vec3<T>, centered: bool) -> Self {
        Self { points: self.points.iter().map(|p| geom::add(*p, d)).collect(), centered }
    }

    pub fn transformed(&self, tf: &RigidTransform<T>) -> Self {
        Self { points: self.points.iter().map(|p| tf.apply(*p)).collect(), centered: false }
    }

    /// Min and max `z`.
    pub fn z_extent(&self) -> Option<(T, T)> {
        let mut it = self.points.iter().map(|p| p[2]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), z| (lo.min(z), hi.max(z))))
    }

    pub(crate) fn mark_centered(mut self) -> Self {
        self.centered = true;
        self
    }

    /// Flattened `[x0, y0, z0, x1, ...]`.
    pub fn flat(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.iter().map(|p| [U::lit(p[0].as_f64()), U::lit(p[1].as_f64()), U::lit(p[2].as_f64())]).collect(),
            centered: self.centered,
        }
    }
}

/// Region-semantic grasp class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Top,
    Body,
    Bottom,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 3] = [RegionLabel::Top, RegionLabel::Body, RegionLabel::Bottom];

    /// Class id fed to the task-conditioned score network.
    pub fn index(&self) -> usize {
        match self {
            RegionLabel::Top => 0,
            RegionLabel::Body => 1,
            RegionLabel::Bottom => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegionLabel::Top => "top",
            RegionLabel::Body => "body",
            RegionLabel::Bottom => "bottom",
        }
    }
}

impl std::str::FromStr for RegionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(RegionLabel::Top),
            "body" => Ok(RegionLabel::Body),
            "bottom" => Ok(RegionLabel::Bottom),
            other => Err(Error::InvalidArgument(format!("unknown region label `{other}`"))),
        }
    }
}

/// One annotated grasp.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspRecord {
    pub object_id: String,
    /// Grasp pose in the object's centroid frame.
    pub pose: RigidTransform<f64>,
    pub label: RegionLabel,
    pub success: bool,
}

/// Labels a grasp by where its gripper root sits relative to the `z` extent
/// of an unrotated, centroid-framed cloud.
pub fn assign_region_label(grasp: &RigidTransform<f64>, pc: &PointCloud<f64>, gripper: &GripperSpec) -> RegionLabel {
    let root = gripper.root_position(grasp);
    let (lo, hi) = pc.z_extent().unwrap_or((0.0, 0.0));
    if root[2] > hi {
        RegionLabel::Top
    } else if root[2] < lo {
        RegionLabel::Bottom
    } else {
        RegionLabel::Body
    }
}
