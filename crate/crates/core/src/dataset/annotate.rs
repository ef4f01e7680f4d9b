use log::warn;
use rand::Rng;

use crate::dataset::{assign_region_label, GraspRecord, GripperSpec, Object, PointCloud};
use crate::error::{Error, Result};
use crate::eval::GraspOracle;
use crate::geom::{self, cross, dot, norm, normalize, RigidTransform, UnitQuaternion, Vec3};

#[derive(Clone, Debug)]
pub struct AnnotationReport {
    pub grasps: Vec<GraspRecord>,
    pub proposals: usize,
    /// How many of the requested grasps were not found.
    pub shortfall: usize,
}

/// Antipodal grasp annotation.
///
/// Each proposal samples a surface point, shoots the inward normal through
/// the solid to the opposite surface, keeps the pair if it fits in the
/// gripper and both normals lie in the friction cone of the closing line,
/// then places the grasp frame at the contact midpoint with `x` along the
/// closing line and a random approach axis orthogonal to it. Only grasps the
/// oracle accepts are returned. `object` must be expressed in the same
/// (centroid) frame as `cloud`.
pub fn annotate_grasps<R: Rng + ?Sized>(
    object: &Object,
    object_id: &str,
    cloud: &PointCloud<f64>,
    gripper: &GripperSpec,
    n: usize,
    max_proposals: usize,
    rng: &mut R,
) -> Result<AnnotationReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("requested zero grasps".into()));
    }
    let oracle = GraspOracle::new(gripper)?;
    let cone = gripper.cone_cos();
    let mut grasps = Vec::with_capacity(n);
    let mut proposals = 0;
    while grasps.len() < n && proposals < max_proposals {
        proposals += 1;
        let (p1, n1) = object.sample_surface(rng);
        let inward = [-n1[0], -n1[1], -n1[2]];
        let Some(p2) = object.ray_exit(p1, inward, 1.0) else { continue };
        let span = geom::sub(p2, p1);
        let width = norm(span);
        if width >= gripper.max_opening || width < 1e-6 {
            continue;
        }
        let closing = geom::scale(span, 1.0 / width);
        let n2 = object.normal(p2);
        if dot(n1, closing) > -cone || dot(n2, closing) < cone {
            continue;
        }
        let approach = random_orthogonal(closing, rng);
        let y = cross(approach, closing);
        let m = [
            [closing[0], y[0], approach[0]],
            [closing[1], y[1], approach[1]],
            [closing[2], y[2], approach[2]],
        ];
        let pose = RigidTransform::new(UnitQuaternion::from_matrix(m)?, geom::scale(geom::add(p1, p2), 0.5));
        if !oracle.evaluate(object, &pose).success {
            continue;
        }
        grasps.push(GraspRecord {
            object_id: object_id.to_string(),
            pose,
            label: assign_region_label(&pose, cloud, gripper),
            success: true,
        });
    }
    let shortfall = n - grasps.len();
    if shortfall > 0 {
        warn!("{object_id}: found {} of {n} grasps after {proposals} proposals", grasps.len());
    }
    Ok(AnnotationReport { grasps, proposals, shortfall })
}

/// Uniform unit vector orthogonal to unit `axis`.
fn random_orthogonal<R: Rng + ?Sized>(axis: Vec3<f64>, rng: &mut R) -> Vec3<f64> {
    loop {
        let v: Vec3<f64> = geom::random_unit_vector(rng);
        let w = geom::sub(v, geom::scale(axis, dot(v, axis)));
        if let Some(u) = normalize(w).filter(|_| norm(w) > 1e-3) {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_object, PrimitiveShape, ShapeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(kind: ShapeKind, dims: &[f64]) -> (Object, PointCloud<f64>) {
        let obj = generate_object(&PrimitiveShape { kind, dims: dims.to_vec(), seed: 0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = PointCloud::new(obj.sample_points(256, &mut rng)).unwrap();
        (obj, cloud)
    }

    #[test]
    fn sphere_pairs_are_exactly_antipodal() {
        let (obj, cloud) = build(ShapeKind::Sphere, &[0.03]);
        let g = GripperSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = annotate_grasps(&obj, "s", &cloud, &g, 20, 2000, &mut rng).unwrap();
        assert_eq!(rep.grasps.len(), 20);
        let oracle = GraspOracle::new(&g).unwrap();
        for r in &rep.grasps {
            let (res, c) = oracle.evaluate_detailed(&obj, &r.pose);
            assert!(res.success && r.success);
            let c = c.unwrap();
            assert!(dot(c.left_normal, c.right_normal) < -1.0 + 1e-6);
        }
    }

    #[test]
    fn oversized_box_yields_nothing() {
        let (obj, cloud) = build(ShapeKind::Box, &[0.1, 0.12, 0.15]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep = annotate_grasps(&obj, "b", &cloud, &GripperSpec::default(), 5, 300, &mut rng).unwrap();
        assert!(rep.grasps.is_empty());
        assert_eq!(rep.shortfall, 5);
        assert_eq!(rep.proposals, 300);
    }

    #[test]
    fn cylinder_widths_match_diameter() {
        // Tall thin cylinder: only diameter pairs fit in the gripper.
        let (obj, cloud) = build(ShapeKind::Cylinder, &[0.025, 0.12]);
        let g = GripperSpec::default();
        let oracle = GraspOracle::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = annotate_grasps(&obj, "c", &cloud, &g, 30, 5000, &mut rng).unwrap();
        assert_eq!(rep.grasps.len(), 30);
        for r in &rep.grasps {
            let (_, c) = oracle.evaluate_detailed(&obj, &r.pose);
            assert!((c.unwrap().width - 0.05).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_request_is_an_error() {
        let (obj, cloud) = build(ShapeKind::Sphere, &[0.03]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(annotate_grasps(&obj, "s", &cloud, &GripperSpec::default(), 0, 10, &mut rng).is_err());
    }
}
