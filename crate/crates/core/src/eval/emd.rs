use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::hungarian;
use crate::geom::{norm, sub, RigidTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmdConfig {
    /// Poses drawn (with replacement) from each set per iteration.
    pub samples: usize,
    pub iterations: usize,
    pub translation_weight: f64,
    pub rotation_weight: f64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self { samples: 100, iterations: 500, translation_weight: 1.0, rotation_weight: 1.0 }
    }
}

impl EmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.iterations == 0 {
            return Err(Error::Config("EMD samples and iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Translation distance plus `1 − |q_a·q_b|`.
pub fn pose_distance(a: &RigidTransform<f64>, b: &RigidTransform<f64>, cfg: &EmdConfig) -> f64 {
    let dt = norm(sub(a.translation, b.translation));
    // For unit quaternions 1 − |p·q| = ½·min(‖p − q‖², ‖p + q‖²); the
    // right side is exact at zero distance.
    let (p, q) = (a.rotation.to_array(), b.rotation.to_array());
    let minus: f64 = (0..4).map(|i| (p[i] - q[i]).powi(2)).sum();
    let plus: f64 = (0..4).map(|i| (p[i] + q[i]).powi(2)).sum();
    let dr = 0.5 * minus.min(plus);
    cfg.translation_weight * dt + cfg.rotation_weight * dr
}

/// Mean optimally assigned cost between two equal-size pose sets.
pub fn emd_fixed(a: &[RigidTransform<f64>], b: &[RigidTransform<f64>], cfg: &EmdConfig) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("pose set"));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!("pose sets differ in size: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    let cost: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| (p, q))).map(|(p, q)| pose_distance(p, q, cfg)).collect();
    let assignment = hungarian(&cost, n)?;
    Ok(hungarian::assignment_cost(&cost, n, &assignment) / n as f64)
}

/// Resampled EMD: each iteration draws `cfg.samples` poses with replacement
/// from both sets and averages the matched cost; the result is the mean over
/// iterations.
pub fn se3_emd<R: Rng + ?Sized>(
    a: &[RigidTransform<f64>],
    b: &[RigidTransform<f64>],
    cfg: &EmdConfig,
    rng: &mut R,
) -> Result<f64> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("pose set"));
    }
    let mut total = 0.0;
    for _ in 0..cfg.iterations {
        let sa: Vec<_> = (0..cfg.samples).map(|_| a[rng.random_range(0..a.len())]).collect();
        let sb: Vec<_> = (0..cfg.samples).map(|_| b[rng.random_range(0..b.len())]).collect();
        total += emd_fixed(&sa, &sb, cfg)?;
    }
    Ok(total / cfg.iterations as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{self, UnitQuaternion};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, rng: &mut ChaCha8Rng) -> Vec<RigidTransform<f64>> {
        (0..n)
            .map(|_| {
                let t = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
                RigidTransform::new(geom::random_rotation(rng), t)
            })
            .collect()
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_set(30, &mut rng);
        assert_eq!(emd_fixed(&x, &x, &EmdConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn pure_translation_recovers_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Spread-out set so the shifted copy matches itself one to one.
        let x: Vec<_> = (0..20)
            .map(|i| RigidTransform::new(geom::random_rotation(&mut rng), [i as f64, 0.0, 0.0]))
            .collect();
        let d = [0.0, 0.03, 0.04];
        let y: Vec<_> = x.iter().map(|p| RigidTransform::new(p.rotation, geom::add(p.translation, d))).collect();
        let emd = emd_fixed(&x, &y, &EmdConfig::default()).unwrap();
        assert!((emd - 0.05).abs() < 1e-12, "{emd}");
    }

    #[test]
    fn double_cover_is_free() {
        let q = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 1.0).unwrap();
        let a = q.to_array();
        let neg = UnitQuaternion::new_unchecked(-a[0], -a[1], -a[2], -a[3]);
        let p = RigidTransform::from_rotation(q);
        let r = RigidTransform::from_rotation(neg);
        assert!(pose_distance(&p, &r, &EmdConfig::default()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_for_fixed_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(15, &mut rng);
        let b = random_set(15, &mut rng);
        let cfg = EmdConfig::default();
        let ab = emd_fixed(&a, &b, &cfg).unwrap();
        let ba = emd_fixed(&b, &a, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_set(3, &mut rng);
        assert!(se3_emd(&a, &[], &EmdConfig::default(), &mut rng).is_err());
        assert!(emd_fixed(&a, &a[..2], &EmdConfig::default()).is_err());
    }
}
