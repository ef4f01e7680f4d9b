//! Minibatch assembly shared by both training stages.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{augment, AugmentConfig, GraspRecord, ObjectEntry, PointCloud, RegionLabel};
use crate::error::{Error, Result};
use crate::geom::Pose6;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// One training minibatch.
///
/// Each slot holds one grasp; slots of the same object share one augmented
/// cloud, encoded once.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub clouds: Vec<PointCloud<T>>,
    /// Cloud index of every slot.
    pub slot_cloud: Vec<usize>,
    /// `(B, 6)` poses `[t, a]` in the augmented frame.
    pub poses: Tensor<T>,
    pub labels: Vec<usize>,
}

/// How grasps are picked within an object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraspPick {
    Uniform,
    /// Uniform over the labels the object has, then uniform within the label.
    LabelBalanced,
}

/// Deterministic per-step generator: stream `step` of `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Fills `batch_size` slots by cycling over a shuffled object order, one
/// successful grasp per slot.
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    objects: &[&ObjectEntry],
    batch_size: usize,
    augment_cfg: &AugmentConfig,
    mrp_scale: f64,
    pick: GraspPick,
    rng: &mut R,
) -> Result<Batch<T>> {
    if objects.is_empty() {
        return Err(Error::Empty("training objects"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let pools: Vec<Vec<&GraspRecord>> =
        objects.iter().map(|o| o.grasps.iter().filter(|g| g.success).collect()).collect();
    let mut order: Vec<usize> = (0..objects.len()).filter(|&i| !pools[i].is_empty()).collect();
    if order.is_empty() {
        return Err(Error::Empty("successful grasps"));
    }
    order.shuffle(rng);
    let used = order.len().min(batch_size);

    let mut picks: Vec<Vec<&GraspRecord>> = vec![Vec::new(); used];
    let mut slot_cloud = Vec::with_capacity(batch_size);
    for slot in 0..batch_size {
        let c = slot % used;
        let pool = &pools[order[c]];
        let rec = match pick {
            GraspPick::Uniform => pool[rng.random_range(0..pool.len())],
            GraspPick::LabelBalanced => {
                let labels: Vec<RegionLabel> =
                    RegionLabel::ALL.into_iter().filter(|l| pool.iter().any(|g| g.label == *l)).collect();
                let l = labels[rng.random_range(0..labels.len())];
                let sub: Vec<&&GraspRecord> = pool.iter().filter(|g| g.label == l).collect();
                sub[rng.random_range(0..sub.len())]
            }
        };
        picks[c].push(rec);
        slot_cloud.push(c);
    }

    let mut clouds = Vec::with_capacity(used);
    let mut per_cloud_poses: Vec<Vec<[f64; 6]>> = Vec::with_capacity(used);
    for (c, recs) in picks.iter().enumerate() {
        let entry = objects[order[c]];
        let poses: Vec<_> = recs.iter().map(|r| r.pose).collect();
        let aug = augment(&entry.cloud, &poses, augment_cfg, rng)?;
        let six = aug
            .grasps
            .iter()
            .map(|g| Pose6::from_transform(g, mrp_scale).map(|p| p.to_array()))
            .collect::<Result<Vec<_>>>()?;
        per_cloud_poses.push(six);
        clouds.push(aug.cloud.cast());
    }

    let mut cursor = vec![0usize; used];
    let mut data = Vec::with_capacity(batch_size * 6);
    let mut labels = Vec::with_capacity(batch_size);
    for &c in &slot_cloud {
        data.extend(per_cloud_poses[c][cursor[c]].iter().map(|v| T::lit(*v)));
        labels.push(picks[c][cursor[c]].label.index());
        cursor[c] += 1;
    }
    Ok(Batch { clouds, slot_cloud, poses: Tensor::new([batch_size, 6], data)?, labels })
}
