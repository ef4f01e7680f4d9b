use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{self, dot, RigidTransform, Vec3};

/// Online augmentation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-axis Gaussian jitter (meters).
    pub jitter_sd: f64,
    /// Upper bound of the uniformly drawn dropout fraction.
    pub max_dropout: f64,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { jitter_sd: 0.01, max_dropout: 0.4, rotate: true }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn none() -> Self {
        Self { jitter_sd: 0.0, max_dropout: 0.0, rotate: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sd >= 0.0 && self.jitter_sd.is_finite()) {
            return Err(Error::Config(format!("jitter_sd must be non-negative, got {}", self.jitter_sd)));
        }
        if !(0.0..1.0).contains(&self.max_dropout) {
            return Err(Error::Config(format!("max_dropout must be in [0, 1), got {}", self.max_dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub cloud: PointCloud<f64>,
    pub grasps: Vec<RigidTransform<f64>>,
    /// Maps input coordinates to output coordinates.
    pub transform: RigidTransform<f64>,
}

/// Random rotation, jitter and dropout, then back to the centroid frame.
///
/// The rotation is shared by cloud and grasps. Dropped points are replaced
/// by copies of surviving ones so the size is unchanged.
pub fn augment<R: Rng + ?Sized>(
    pc: &PointCloud<f64>,
    grasps: &[RigidTransform<f64>],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmented> {
    cfg.validate()?;
    if pc.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let rot = if cfg.rotate {
        RigidTransform::from_rotation(geom::random_rotation(rng))
    } else {
        RigidTransform::identity()
    };
    let mut points: Vec<Vec3<f64>> = pc.points().iter().map(|p| rot.apply(*p)).collect();
    if cfg.jitter_sd > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sd).expect("validated sd");
        for p in &mut points {
            for v in p.iter_mut() {
                *v += normal.sample(rng);
            }
        }
    }
    if cfg.max_dropout > 0.0 {
        let f = rng.random_range(0.0..=cfg.max_dropout);
        dropout(&mut points, f, rng);
    }
    let changed = cfg.rotate || cfg.jitter_sd > 0.0 || cfg.max_dropout > 0.0;
    let mut transform = rot;
    let cloud = PointCloud::new(points)?;
    let identity = !(changed || !pc.is_centered());
    let cloud = if !identity {
        let c = cloud.centroid().expect("non-empty");
        let shift = RigidTransform::from_translation(geom::scale(c, -1.0));
        transform = shift.compose(&transform);
        cloud.translated(geom::scale(c, -1.0), true)
    } else {
        cloud.mark_centered()
    };
    let grasps = if identity { grasps.to_vec() } else { grasps.iter().map(|g| transform.compose(g)).collect() };
    Ok(Augmented { cloud, grasps, transform })
}

/// Removes `⌊frac·N⌋` random points and refills to `N` by duplicating random
/// survivors.
pub fn dropout<R: Rng + ?Sized>(points: &mut Vec<Vec3<f64>>, frac: f64, rng: &mut R) {
    let n = points.len();
    let drop = ((frac.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n.saturating_sub(1));
    if drop == 0 {
        return;
    }
    let mut keep = index::sample(rng, n, n - drop).into_vec();
    keep.sort_unstable();
    let mut kept: Vec<Vec3<f64>> = keep.iter().map(|&i| points[i]).collect();
    let survivors = kept.len();
    for _ in 0..drop {
        let j = rng.random_range(0..survivors);
        kept.push(kept[j]);
    }
    *points = kept;
}

/// Single-view approximation: keeps the points whose outward normal faces
/// the camera, then subsamples or duplicates to exactly `n` points.
pub fn partial_view<R: Rng + ?Sized>(
    points: &[Vec3<f64>],
    normals: &[Vec3<f64>],
    camera_dir: Vec3<f64>,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud<f64>> {
    if points.len() != normals.len() {
        return Err(Error::Shape(format!("{} points but {} normals", points.len(), normals.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("partial view of zero points".into()));
    }
    let dir = geom::normalize(camera_dir)
        .ok_or_else(|| Error::InvalidArgument("camera direction must be non-zero".into()))?;
    let visible: Vec<Vec3<f64>> = points
        .iter()
        .zip(normals)
        .filter(|(_, nrm)| -dot(**nrm, dir) > 0.0)
        .map(|(p, _)| *p)
        .collect();
    if visible.is_empty() {
        return Err(Error::Empty("partial view (every point culled)"));
    }
    let out = if visible.len() >= n {
        let mut idx = index::sample(rng, visible.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| visible[i]).collect()
    } else {
        let mut out = visible.clone();
        while out.len() < n {
            out.push(visible[rng.random_range(0..visible.len())]);
        }
        out
    };
    PointCloud::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_object, PrimitiveShape, ShapeKind};
    use crate::geom::UnitQuaternion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let obj = generate_object(&PrimitiveShape { kind: ShapeKind::Box, dims: vec![0.05, 0.06, 0.1], seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pc = PointCloud::new(obj.sample_points(n, &mut rng)).unwrap();
        geom::centroid_frame(&pc, &[]).unwrap().0
    }

    fn uniques(pc: &PointCloud<f64>) -> usize {
        pc.points().iter().map(|p| p.map(f64::to_bits)).collect::<HashSet<_>>().len()
    }

    #[test]
    fn identity_config_is_exact() {
        let pc = cloud(128, 1);
        let g = RigidTransform::new(UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 0.3).unwrap(), [0.01, 0.0, 0.02]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&pc, &[g], &AugmentConfig::none(), &mut rng).unwrap();
        assert_eq!(out.cloud, pc);
        assert_eq!(out.grasps[0], g);
    }

    #[test]
    fn size_and_centroid_preserved() {
        let pc = cloud(1024, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let out = augment(&pc, &[], &AugmentConfig::default(), &mut rng).unwrap();
            assert_eq!(out.cloud.len(), 1024);
            assert!(geom::norm(out.cloud.centroid().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn dropout_keeps_enough_unique_points() {
        let pc = cloud(1024, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = pc.points().to_vec();
        dropout(&mut pts, 0.4, &mut rng);
        assert_eq!(pts.len(), 1024);
        let out = PointCloud::new(pts).unwrap();
        assert!(uniques(&out) >= (0.6f64 * 1024.0).ceil() as usize);
        assert!(uniques(&out) < 1024);
    }

    #[test]
    fn grasps_follow_the_cloud() {
        let pc = cloud(256, 6);
        let g = RigidTransform::new(UnitQuaternion::identity(), pc.points()[0]);
        let cfg = AugmentConfig { jitter_sd: 0.0, max_dropout: 0.0, rotate: true };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = augment(&pc, &[g], &cfg, &mut rng).unwrap();
        assert!(geom::norm(geom::sub(out.grasps[0].translation, out.cloud.points()[0])) < 1e-12);
    }

    #[test]
    fn sphere_half_is_visible() {
        let obj = generate_object(&PrimitiveShape { kind: ShapeKind::Sphere, dims: vec![0.04], seed: 0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (pts, nrm): (Vec<_>, Vec<_>) = (0..20_000).map(|_| obj.sample_surface(&mut rng)).unzip();
        let cam = [0.0, 0.0, -1.0];
        let seen = nrm.iter().filter(|n| -dot(**n, cam) > 0.0).count() as f64 / 20_000.0;
        // Binomial sd is ~0.0035.
        assert!((seen - 0.5).abs() < 0.015, "{seen}");
        let view = partial_view(&pts, &nrm, cam, 1024, &mut rng).unwrap();
        assert_eq!(view.len(), 1024);
        assert!(view.points().iter().all(|p| p[2] > -1e-9));
        let back = partial_view(&pts, &nrm, [0.0, 0.0, 1.0], 1024, &mut rng).unwrap();
        assert!(back.points().iter().all(|p| p[2] < 1e-9));
    }

    #[test]
    fn fully_culled_view_is_an_error() {
        let pts = vec![[0.0, 0.0, 1.0]];
        let nrm = vec![[0.0, 0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(partial_view(&pts, &nrm, [0.0, 0.0, 1.0], 4, &mut rng).is_err());
        assert_eq!(partial_view(&pts, &nrm, [0.0, 0.0, -1.0], 4, &mut rng).unwrap().len(), 4);
    }
}
