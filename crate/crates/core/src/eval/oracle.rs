//! Geometric grasp-success oracle.
//!
//! The check runs in the grasp frame of [`GripperSpec`]:
//! 1. `too_wide`: an end of the closing line (the open finger pads) lies
//!    inside the object, so the jaws cannot straddle it;
//! 2. `collision`: a sample of the open fingers or palm lies inside the object;
//! 3. `free_space`: closing from either side reaches no surface;
//! 4. `non_antipodal`: a contact normal falls outside the friction cone
//!    around the closing axis.
//!
//! Shaking, lifting and torque are not modeled.

use serde::{Deserialize, Serialize};

use crate::dataset::{GripperSpec, Object};
use crate::error::Result;
use crate::geom::{dot, RigidTransform, Vec3};

/// Sample spacing of the gripper body, meters.
pub const BODY_SAMPLE_SPACING: f64 = 0.004;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Collision,
    FreeSpace,
    NonAntipodal,
    TooWide,
}

impl FailureReason {
    pub fn name(&self) -> &'static str {
        match self {
            FailureReason::Collision => "collision",
            FailureReason::FreeSpace => "free_space",
            FailureReason::NonAntipodal => "non_antipodal",
            FailureReason::TooWide => "too_wide",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
}

impl OracleResult {
    pub fn ok() -> Self {
        Self { success: true, failure_reason: None }
    }

    pub fn fail(reason: FailureReason) -> Self {
        Self { success: false, failure_reason: Some(reason) }
    }
}

/// Contact geometry found while closing, world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contacts {
    pub left: Vec3<f64>,
    pub right: Vec3<f64>,
    pub left_normal: Vec3<f64>,
    pub right_normal: Vec3<f64>,
    pub width: f64,
}

/// Oracle with the gripper body samples precomputed.
#[derive(Clone, Debug)]
pub struct GraspOracle {
    gripper: GripperSpec,
    body: Vec<Vec3<f64>>,
}

impl GraspOracle {
    pub fn new(gripper: &GripperSpec) -> Result<Self> {
        gripper.validate()?;
        Ok(Self { gripper: gripper.clone(), body: gripper.body_samples(BODY_SAMPLE_SPACING) })
    }

    pub fn gripper(&self) -> &GripperSpec {
        &self.gripper
    }

    pub fn evaluate(&self, object: &Object, grasp: &RigidTransform<f64>) -> OracleResult {
        self.evaluate_detailed(object, grasp).0
    }

    pub fn evaluate_detailed(&self, object: &Object, grasp: &RigidTransform<f64>) -> (OracleResult, Option<Contacts>) {
        if grasp.to_array7().iter().any(|v| !v.is_finite()) {
            return (OracleResult::fail(FailureReason::FreeSpace), None);
        }
        let half = self.gripper.max_opening / 2.0;
        let left_end = grasp.apply([-half, 0.0, 0.0]);
        let right_end = grasp.apply([half, 0.0, 0.0]);
        if object.sdf(left_end) < 0.0 || object.sdf(right_end) < 0.0 {
            return (OracleResult::fail(FailureReason::TooWide), None);
        }
        if self.body.iter().any(|&p| object.sdf(grasp.apply(p)) < 0.0) {
            return (OracleResult::fail(FailureReason::Collision), None);
        }
        let x_axis = grasp.axis(0);
        let neg_x = [-x_axis[0], -x_axis[1], -x_axis[2]];
        let span = self.gripper.max_opening;
        let (Some(sl), Some(sr)) = (object.first_hit(left_end, x_axis, span), object.first_hit(right_end, neg_x, span))
        else {
            return (OracleResult::fail(FailureReason::FreeSpace), None);
        };
        let left = crate::geom::add(left_end, crate::geom::scale(x_axis, sl));
        let right = crate::geom::add(right_end, crate::geom::scale(neg_x, sr));
        let left_normal = object.normal(left);
        let right_normal = object.normal(right);
        let contacts = Contacts { left, right, left_normal, right_normal, width: span - sl - sr };
        let cone = self.gripper.cone_cos();
        // Left pad pushes along +x, so the surface there must face −x.
        if dot(left_normal, neg_x) < cone || dot(right_normal, x_axis) < cone {
            return (OracleResult::fail(FailureReason::NonAntipodal), Some(contacts));
        }
        (OracleResult::ok(), Some(contacts))
    }
}

/// One-shot oracle evaluation; prefer [`GraspOracle`] in loops.
pub fn success_oracle(object: &Object, grasp: &RigidTransform<f64>, gripper: &GripperSpec) -> Result<OracleResult> {
    Ok(GraspOracle::new(gripper)?.evaluate(object, grasp))
}
