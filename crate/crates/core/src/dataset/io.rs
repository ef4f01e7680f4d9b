use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    annotate_grasps, generate_object, AugmentConfig, GraspRecord, GripperSpec, Object, PointCloud, PrimitiveShape,
    RegionLabel, ShapeKind,
};
use crate::error::{Error, Result};
use crate::geom::{self, RigidTransform, Vec3};
use crate::io::write_atomic;

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_points: usize,
    pub grasps_per_object: usize,
    /// Explicit object list. When empty, `num_objects` random primitives are drawn.
    pub objects: Vec<PrimitiveShape>,
    pub num_objects: usize,
    /// Annotation proposal budget per object.
    pub max_proposals: usize,
    pub gripper: GripperSpec,
    /// Online augmentation used by the trainers.
    pub augment: AugmentConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_points: 1024,
            grasps_per_object: 128,
            objects: Vec::new(),
            num_objects: 8,
            max_proposals: 50_000,
            gripper: GripperSpec::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_points == 0 || self.grasps_per_object == 0 {
            return Err(Error::Config("num_points and grasps_per_object must be positive".into()));
        }
        if self.objects.is_empty() && self.num_objects == 0 {
            return Err(Error::Config("dataset has no objects".into()));
        }
        self.gripper.validate()?;
        self.augment.validate()
    }

    fn shapes(&self, seed: u64) -> Vec<PrimitiveShape> {
        if !self.objects.is_empty() {
            return self.objects.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        (0..self.num_objects).map(|i| random_shape(i as u64, &mut rng)).collect()
    }
}

/// A random graspable primitive (one extent fits the default gripper).
fn random_shape<R: Rng + ?Sized>(seed: u64, rng: &mut R) -> PrimitiveShape {
    let kind = [ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Sphere, ShapeKind::Mug][rng.random_range(0..4)];
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let dims = match kind {
        ShapeKind::Box => vec![u(0.03, 0.065), u(0.03, 0.12), u(0.04, 0.15)],
        ShapeKind::Cylinder => vec![u(0.015, 0.033), u(0.04, 0.15)],
        ShapeKind::Sphere => vec![u(0.015, 0.029)],
        ShapeKind::Mug => {
            let h = u(0.07, 0.12);
            vec![u(0.025, 0.033), h, u(0.025, 0.045), u(0.008, 0.015), u(0.03, 0.9 * h)]
        }
    };
    PrimitiveShape { kind, dims, seed }
}

/// Eight training and four held-out primitives, all graspable by the
/// default gripper.
pub fn desk_suite() -> (Vec<PrimitiveShape>, Vec<PrimitiveShape>) {
    let s = |kind, dims: &[f64], seed| PrimitiveShape { kind, dims: dims.to_vec(), seed };
    let train = vec![
        s(ShapeKind::Box, &[0.05, 0.06, 0.12], 0),
        s(ShapeKind::Box, &[0.04, 0.10, 0.07], 1),
        s(ShapeKind::Box, &[0.06, 0.06, 0.06], 2),
        s(ShapeKind::Cylinder, &[0.025, 0.12], 3),
        s(ShapeKind::Cylinder, &[0.03, 0.08], 4),
        s(ShapeKind::Sphere, &[0.024], 5),
        s(ShapeKind::Sphere, &[0.029], 6),
        s(ShapeKind::Mug, &[0.03, 0.09, 0.04, 0.012, 0.05], 7),
    ];
    let held_out = vec![
        s(ShapeKind::Box, &[0.045, 0.08, 0.10], 8),
        s(ShapeKind::Cylinder, &[0.028, 0.10], 9),
        s(ShapeKind::Sphere, &[0.027], 10),
        s(ShapeKind::Mug, &[0.032, 0.10, 0.035, 0.012, 0.06], 11),
    ];
    (train, held_out)
}

/// One object with its centroid-framed cloud and annotations.
#[derive(Clone, Debug)]
pub struct ObjectEntry {
    pub id: String,
    pub shape: PrimitiveShape,
    /// Object coordinates of the cloud centroid.
    pub centroid: Vec3<f64>,
    /// The solid expressed in the centroid frame.
    pub object: Object,
    pub cloud: PointCloud<f64>,
    pub grasps: Vec<GraspRecord>,
}

impl ObjectEntry {
    pub fn poses(&self) -> Vec<RigidTransform<f64>> {
        self.grasps.iter().map(|g| g.pose).collect()
    }

    /// Labels with at least one annotated grasp.
    pub fn present_labels(&self) -> Vec<RegionLabel> {
        RegionLabel::ALL.into_iter().filter(|l| self.grasps.iter().any(|g| g.label == *l)).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub objects: Vec<ObjectEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn num_grasps(&self) -> usize {
        self.objects.iter().map(|o| o.grasps.len()).sum()
    }

    pub fn get(&self, id: &str) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Objects that have at least one successful grasp.
    pub fn trainable(&self) -> Vec<&ObjectEntry> {
        self.objects.iter().filter(|o| o.grasps.iter().any(|g| g.success)).collect()
    }

    pub fn to_records(&self) -> Vec<ObjectRecord> {
        self.objects.iter().map(ObjectRecord::from_entry).collect()
    }

    pub fn from_records(records: Vec<ObjectRecord>) -> Result<Self> {
        let objects = records.into_iter().map(ObjectRecord::into_entry).collect::<Result<Vec<_>>>()?;
        Ok(Self { objects })
    }
}

/// Serialized grasp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspEntry {
    /// `[qw, qx, qy, qz, tx, ty, tz]` in the centroid frame.
    pub pose: [f64; 7],
    pub label: RegionLabel,
    pub success: bool,
}

/// One JSON line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: String,
    pub shape: ShapeKind,
    pub dims: Vec<f64>,
    pub centroid: [f64; 3],
    pub points: Vec<[f64; 3]>,
    pub grasps: Vec<GraspEntry>,
}

impl ObjectRecord {
    fn from_entry(e: &ObjectEntry) -> Self {
        Self {
            id: e.id.clone(),
            shape: e.shape.kind,
            dims: e.shape.dims.clone(),
            centroid: e.centroid,
            points: e.cloud.points().to_vec(),
            grasps: e
                .grasps
                .iter()
                .map(|g| GraspEntry { pose: g.pose.to_array7(), label: g.label, success: g.success })
                .collect(),
        }
    }

    fn into_entry(self) -> Result<ObjectEntry> {
        let shape = PrimitiveShape { kind: self.shape, dims: self.dims, seed: 0 };
        let object = generate_object(&shape)?.in_frame(self.centroid);
        if self.points.is_empty() {
            return Err(Error::Empty("object point cloud"));
        }
        let cloud = PointCloud::new(self.points)?.mark_centered();
        let grasps = self
            .grasps
            .into_iter()
            .map(|g| {
                Ok(GraspRecord {
                    object_id: self.id.clone(),
                    pose: RigidTransform::from_array7(g.pose)?,
                    label: g.label,
                    success: g.success,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectEntry { id: self.id, shape, centroid: self.centroid, object, cloud, grasps })
    }
}

/// Builds the dataset. A pure function of `(cfg, seed)`: object `i` draws
/// from its own stream of the master seed.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut objects = Vec::new();
    for (i, shape) in cfg.shapes(seed).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let id = format!("{}-{i:03}", shape.kind.name());
        let solid = generate_object(&shape)?;
        let raw = PointCloud::new(solid.sample_points(cfg.num_points, &mut rng))?;
        let (cloud, _, centroid) = geom::centroid_frame(&raw, &[])?;
        let object = solid.in_frame(centroid);
        let report = annotate_grasps(
            &object,
            &id,
            &cloud,
            &cfg.gripper,
            cfg.grasps_per_object,
            cfg.max_proposals,
            &mut rng,
        )?;
        info!("{id}: {} grasps from {} proposals", report.grasps.len(), report.proposals);
        objects.push(ObjectEntry { id, shape, centroid, object, cloud, grasps: report.grasps });
    }
    Ok(Dataset { objects })
}

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    for rec in ds.to_records() {
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes JSON lines atomically.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, dataset_to_string(ds)?.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObjectRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1)))?;
        records.push(rec);
    }
    Dataset::from_records(records)
}
