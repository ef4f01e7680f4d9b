use serde::Serialize;

use crate::dataset::{assign_region_label, GripperSpec, ObjectEntry, RegionLabel};
use crate::error::{Error, Result};
use crate::eval::{FailureReason, GraspOracle};
use crate::geom::RigidTransform;

/// Oracle outcome of one generated grasp.
#[derive(Clone, Debug, Serialize)]
pub struct GraspOutcome {
    pub object_id: String,
    pub index: usize,
    /// `[qw, qx, qy, qz, tx, ty, tz]` in the object's centroid frame.
    pub pose: [f64; 7],
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ObjectScore {
    pub object_id: String,
    pub n: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuccessSummary {
    pub per_object: Vec<ObjectScore>,
    pub mean: f64,
    pub median: f64,
    /// Interquartile range `q75 − q25`.
    pub iqr: f64,
    #[serde(skip)]
    pub outcomes: Vec<GraspOutcome>,
}

/// Linearly interpolated quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Scores grasps with the oracle.
///
/// `generate(entry)` must return grasps in the entry's centroid frame; it is
/// responsible for any augmentation and for mapping its outputs back.
pub fn success_rate<F>(objects: &[&ObjectEntry], gripper: &GripperSpec, mut generate: F) -> Result<SuccessSummary>
where
    F: FnMut(&ObjectEntry) -> Result<Vec<RigidTransform<f64>>>,
{
    if objects.is_empty() {
        return Err(Error::Empty("evaluation objects"));
    }
    let oracle = GraspOracle::new(gripper)?;
    let mut per_object = Vec::with_capacity(objects.len());
    let mut outcomes = Vec::new();
    for entry in objects {
        let grasps = generate(entry)?;
        if grasps.is_empty() {
            return Err(Error::Empty("generated grasps"));
        }
        let mut ok = 0;
        for (index, g) in grasps.iter().enumerate() {
            let r = oracle.evaluate(&entry.object, g);
            ok += r.success as usize;
            outcomes.push(GraspOutcome {
                object_id: entry.id.clone(),
                index,
                pose: g.to_array7(),
                success: r.success,
                failure_reason: r.failure_reason,
            });
        }
        per_object.push(ObjectScore {
            object_id: entry.id.clone(),
            n: grasps.len(),
            success_rate: ok as f64 / grasps.len() as f64,
        });
    }
    let rates: Vec<f64> = per_object.iter().map(|o| o.success_rate).collect();
    Ok(SuccessSummary {
        mean: rates.iter().sum::<f64>() / rates.len() as f64,
        median: median(&rates)?,
        iqr: quantile(&rates, 0.75)? - quantile(&rates, 0.25)?,
        per_object,
        outcomes,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelScore {
    pub object_id: String,
    pub label: RegionLabel,
    pub n: usize,
    pub precision: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrecisionSummary {
    pub per_label: Vec<LabelScore>,
    /// Mean over (object, label) pairs.
    pub mean: f64,
}

/// Fraction of generated grasps whose region label matches the requested one.
///
/// Only labels that occur in an object's annotations are requested.
/// `generate(entry, label)` returns grasps in the unrotated centroid frame.
pub fn label_precision<F>(objects: &[&ObjectEntry], gripper: &GripperSpec, mut generate: F) -> Result<PrecisionSummary>
where
    F: FnMut(&ObjectEntry, RegionLabel) -> Result<Vec<RigidTransform<f64>>>,
{
    let mut per_label = Vec::new();
    for entry in objects {
        for label in entry.present_labels() {
            let grasps = generate(entry, label)?;
            if grasps.is_empty() {
                return Err(Error::Empty("generated grasps"));
            }
            let hits = grasps.iter().filter(|g| assign_region_label(g, &entry.cloud, gripper) == label).count();
            per_label.push(LabelScore {
                object_id: entry.id.clone(),
                label,
                n: grasps.len(),
                precision: hits as f64 / grasps.len() as f64,
            });
        }
    }
    if per_label.is_empty() {
        return Err(Error::Empty("labelled objects"));
    }
    let mean = per_label.iter().map(|s| s.precision).sum::<f64>() / per_label.len() as f64;
    Ok(PrecisionSummary { per_label, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{desk_suite, generate_dataset, DatasetConfig};

    fn data() -> crate::dataset::Dataset {
        let (train, _) = desk_suite();
        let cfg = DatasetConfig { num_points: 128, grasps_per_object: 24, objects: train[..4].to_vec(), ..Default::default() };
        generate_dataset(&cfg, 3).unwrap()
    }

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v).unwrap(), 2.5);
        assert_eq!(quantile(&v, 0.25).unwrap(), 1.75);
        assert_eq!(quantile(&[7.0], 0.9).unwrap(), 7.0);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let ds = data();
        let objs: Vec<_> = ds.objects.iter().collect();
        let g = GripperSpec::default();
        let s = success_rate(&objs, &g, |e| Ok(e.poses())).unwrap();
        assert_eq!(s.median, 1.0);
        assert_eq!(s.iqr, 0.0);
        let p = label_precision(&objs, &g, |e, l| {
            Ok(e.grasps.iter().filter(|r| r.label == l).map(|r| r.pose).collect())
        })
        .unwrap();
        assert_eq!(p.mean, 1.0);
    }

    #[test]
    fn far_away_grasps_fail() {
        let ds = data();
        let objs: Vec<_> = ds.objects.iter().collect();
        let s = success_rate(&objs, &GripperSpec::default(), |_| Ok(vec![RigidTransform::from_translation([1.0, 0.0, 0.0])]))
            .unwrap();
        assert_eq!(s.mean, 0.0);
        assert!(s.outcomes.iter().all(|o| o.failure_reason == Some(FailureReason::FreeSpace)));
    }
}
