use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};

/// Parallel-jaw gripper geometry in the grasp frame.
///
/// Frame convention: `x` is the closing axis, `z` is the approach axis and
/// points from the gripper root toward the object, the origin is the midpoint
/// of the closing line between the finger pads. Fingers span
/// `z ∈ [contact_depth − finger_length, contact_depth]`; the palm fills the
/// remaining space back to the root at `z = −root_offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperSpec {
    pub max_opening: f64,
    pub finger_length: f64,
    pub finger_thickness: f64,
    /// Finger extent along the grasp-frame `y` axis.
    pub finger_width: f64,
    /// How far the fingertips reach past the closing line.
    pub contact_depth: f64,
    /// Distance from the grasp origin back to the gripper root.
    pub root_offset: f64,
    /// Coulomb friction coefficient of the finger pads.
    pub friction: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            max_opening: 0.085,
            finger_length: 0.04,
            finger_thickness: 0.01,
            finger_width: 0.02,
            contact_depth: 0.01,
            root_offset: 0.05,
            friction: 0.5,
        }
    }
}

impl GripperSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_opening", self.max_opening),
            ("finger_length", self.finger_length),
            ("finger_thickness", self.finger_thickness),
            ("finger_width", self.finger_width),
            ("friction", self.friction),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("gripper {name} must be positive, got {v}")));
            }
        }
        if !(self.contact_depth >= 0.0 && self.contact_depth < self.finger_length) {
            return Err(Error::InvalidArgument("contact_depth must lie in [0, finger_length)".into()));
        }
        if self.root_offset <= self.finger_length - self.contact_depth {
            return Err(Error::InvalidArgument("root_offset must lie behind the finger bases".into()));
        }
        Ok(())
    }

    /// `z` of the finger bases (palm front face).
    pub fn finger_base_z(&self) -> f64 {
        self.contact_depth - self.finger_length
    }

    /// Cosine of the friction-cone half angle `atan(μ)`.
    pub fn cone_cos(&self) -> f64 {
        1.0 / (1.0 + self.friction * self.friction).sqrt()
    }

    /// Gripper root in the frame of `grasp`'s parent.
    pub fn root_position(&self, grasp: &RigidTransform<f64>) -> Vec3<f64> {
        grasp.apply([0.0, 0.0, -self.root_offset])
    }

    /// Grid samples over both open fingers and the palm, grasp frame.
    pub fn body_samples(&self, spacing: f64) -> Vec<Vec3<f64>> {
        let half_open = self.max_opening / 2.0;
        let (y0, y1) = (-self.finger_width / 2.0, self.finger_width / 2.0);
        let (zb, zt) = (self.finger_base_z(), self.contact_depth);
        let outer = half_open + self.finger_thickness;
        let mut pts = Vec::new();
        grid(&mut pts, [half_open, y0, zb], [outer, y1, zt], spacing);
        grid(&mut pts, [-outer, y0, zb], [-half_open, y1, zt], spacing);
        grid(&mut pts, [-outer, y0, -self.root_offset], [outer, y1, zb], spacing);
        pts
    }
}

fn grid(out: &mut Vec<Vec3<f64>>, lo: Vec3<f64>, hi: Vec3<f64>, spacing: f64) {
    let counts: Vec<usize> = (0..3).map(|d| ((hi[d] - lo[d]) / spacing).ceil().max(1.0) as usize + 1).collect();
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let f = |d: usize, n: usize| lo[d] + (hi[d] - lo[d]) * n as f64 / (counts[d] - 1) as f64;
                out.push([f(0, i), f(1, j), f(2, k)]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        GripperSpec::default().validate().unwrap();
    }

    #[test]
    fn invalid_specs() {
        let bad = GripperSpec { max_opening: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GripperSpec { friction: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GripperSpec { root_offset: 0.01, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn samples_cover_fingers_and_palm() {
        let g = GripperSpec::default();
        let pts = g.body_samples(0.004);
        let max_x = pts.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        let min_z = pts.iter().map(|p| p[2]).fold(f64::MAX, f64::min);
        let max_z = pts.iter().map(|p| p[2]).fold(f64::MIN, f64::max);
        assert!((max_x - 0.0525).abs() < 1e-12);
        assert!((min_z + 0.05).abs() < 1e-12);
        assert!((max_z - 0.01).abs() < 1e-12);
        // Nothing inside the open gap in front of the palm.
        assert!(!pts.iter().any(|p| p[0].abs() < 0.0425 - 1e-12 && p[2] > g.finger_base_z() + 1e-12));
    }
}
