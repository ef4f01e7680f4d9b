//! Grasp-quality oracle and distribution metrics.

mod emd;
pub mod hungarian;
mod metrics;
mod oracle;

pub use emd::{emd_fixed, pose_distance, se3_emd, EmdConfig};
pub use hungarian::hungarian;
pub use metrics::{
    label_precision, median, quantile, success_rate, GraspOutcome, LabelScore, ObjectScore, PrecisionSummary,
    SuccessSummary,
};
pub use oracle::{success_oracle, Contacts, FailureReason, GraspOracle, OracleResult, BODY_SAMPLE_SPACING};
