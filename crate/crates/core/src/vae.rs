//! Stage one: conditional VAE objective and trainer.

use std::path::Path;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{sample_batch, step_rng, GraspPick};
use crate::dataset::{AugmentConfig, ObjectEntry, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{Pose6, RigidTransform};
use crate::io::write_atomic;
use crate::models::{pose_weights, Vae};
use crate::numerics::{adam_step, backward, step_lr, AdamState, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// KL weight annealing.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboConfig {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub anneal_fraction: f64,
    pub total_steps: u64,
}

impl ElboConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_start > 0.0 && self.lambda_start <= self.lambda_end) {
            return Err(Error::Config("need 0 < lambda_start <= lambda_end".into()));
        }
        if !(self.anneal_fraction > 0.0 && self.anneal_fraction <= 1.0) {
            return Err(Error::Config("anneal_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Linear from `lambda_start` to `lambda_end` over the first
/// `anneal_fraction` of training, then constant.
pub fn lambda_schedule(step: u64, cfg: &ElboConfig) -> f64 {
    let ramp = cfg.anneal_fraction * cfg.total_steps as f64;
    if ramp <= 0.0 {
        return cfg.lambda_end;
    }
    let frac = (step as f64 / ramp).min(1.0);
    cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * frac
}

/// `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::Shape(format!("mu has {} entries, logvar {}", mu.len(), logvar.len())));
    }
    Ok(0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>())
}

/// Batch mean of the per-row Gaussian KL.
pub fn kl_gaussian_var<'g, T: Scalar>(mu: Var<'g, T>, logvar: Var<'g, T>) -> Result<Var<'g, T>> {
    let rows = mu.shape()[0];
    let terms = mu.square().add(logvar.exp())?.sub(logvar)?.offset(-T::one());
    Ok(terms.sum().scale(T::lit(0.5 / rows as f64)))
}

/// Graph handles of one ELBO evaluation; all three are batch means.
pub struct ElboTerms<'g, T> {
    pub loss: Var<'g, T>,
    pub recon: Var<'g, T>,
    pub kl: Var<'g, T>,
    pub mu: Var<'g, T>,
}

/// `‖dec(μ + σ⊙ε, z_pc) − h‖² + λ·KL(q ‖ N(0, I))`, averaged over rows.
///
/// `noise` is `ε`, shape `(B, k)`; pass zeros for the posterior mean.
pub fn elbo_loss<'g, T: Scalar>(
    g: &'g Graph<T>,
    store: &ParamStore<T>,
    vae: &Vae,
    h: Var<'g, T>,
    z_pc: Var<'g, T>,
    lambda: f64,
    noise: Tensor<T>,
) -> Result<ElboTerms<'g, T>> {
    elbo_loss_weighted(g, store, vae, h, z_pc, lambda, 1.0, noise)
}

/// [`elbo_loss`] with translation residuals multiplied by `translation_weight`
/// before squaring.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss_weighted<'g, T: Scalar>(
    g: &'g Graph<T>,
    store: &ParamStore<T>,
    vae: &Vae,
    h: Var<'g, T>,
    z_pc: Var<'g, T>,
    lambda: f64,
    translation_weight: f64,
    noise: Tensor<T>,
) -> Result<ElboTerms<'g, T>> {
    let rows = h.shape()[0];
    let k = vae.config.grasp_latent;
    if h.shape() != [rows, 6] || noise.shape() != [rows, k] {
        return Err(Error::Shape(format!("poses {:?} and noise {:?} for k = {k}", h.shape(), noise.shape())));
    }
    let (mu, logvar) = vae.enc.forward(g, store, h, z_pc)?;
    let sigma = logvar.scale(T::lit(0.5)).exp();
    let z = mu.add(sigma.mul(g.constant(noise))?)?;
    let rec = vae.dec.forward(g, store, z, z_pc)?;
    let w = g.constant(pose_weights(translation_weight));
    let recon = rec.sub(h)?.mul(w)?.square().sum().scale(T::lit(1.0 / rows as f64));
    let kl = kl_gaussian_var(mu, logvar)?;
    let loss = recon.add(kl.scale(T::lit(lambda)))?;
    Ok(ElboTerms { loss, recon, kl, mu })
}

/// Stage-one training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub anneal_fraction: f64,
    pub log_every: u64,
    pub augment: bool,
    /// Multiplies translation residuals (meters) in the reconstruction term.
    pub translation_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 64,
            lr: 1e-3,
            lambda_start: 1e-7,
            lambda_end: 0.1,
            anneal_fraction: 0.5,
            log_every: 10,
            augment: true,
            translation_weight: 1.0,
        }
    }
}

impl VaeConfig {
    pub fn elbo(&self) -> ElboConfig {
        ElboConfig {
            lambda_start: self.lambda_start,
            lambda_end: self.lambda_end,
            anneal_fraction: self.anneal_fraction,
            total_steps: self.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("vae steps, batch_size and log_every must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("vae lr must be positive".into()));
        }
        if !(self.translation_weight > 0.0 && self.translation_weight.is_finite()) {
            return Err(Error::Config("vae translation_weight must be positive".into()));
        }
        self.elbo().validate()
    }
}

/// One logged training step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: u64,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub lambda: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("step,loss,recon,kl,lambda,lr\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e},{:e},{:e},{:e}\n", r.step, r.loss, r.recon, r.kl, r.lambda, r.lr));
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_atomic(path, metrics_csv(rows).as_bytes())
}

/// Parameters, optimizer state and logged metrics after training.
pub struct TrainOutcome<T> {
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    pub metrics: Vec<MetricRow>,
}

/// Trains the VAE from `start` (fresh or resumed) up to step `end`, capped
/// at `cfg.steps`. Schedules always follow `cfg.steps`.
///
/// Step `s` draws all of its randomness from stream `s` of `seed`, so a
/// resumed run replays the remaining steps exactly.
pub fn train_vae<T: Scalar>(
    objects: &[&ObjectEntry],
    vae: &Vae,
    cfg: &VaeConfig,
    augment: &AugmentConfig,
    seed: u64,
    start: (ParamStore<T>, Option<AdamState<T>>),
    end: u64,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if objects.iter().all(|o| o.grasps.iter().all(|g| !g.success)) {
        return Err(Error::Empty("training set has no successful grasps"));
    }
    let (mut params, adam) = start;
    let mut adam = adam.unwrap_or_else(|| AdamState::new(&params, cfg.lr));
    let elbo = cfg.elbo();
    let aug = if cfg.augment { augment.clone() } else { AugmentConfig::none() };
    let k = vae.config.grasp_latent;
    let mut metrics = Vec::new();
    for step in params.step()..end.min(cfg.steps) {
        let mut rng = step_rng(seed, step);
        let batch = sample_batch::<T, _>(objects, cfg.batch_size, &aug, vae.config.mrp_scale, GraspPick::Uniform, &mut rng)?;
        let lambda = lambda_schedule(step, &elbo);
        adam.lr = step_lr(step, cfg.steps, cfg.lr)?;
        let noise = Tensor::randn([cfg.batch_size, k], &mut rng);
        let g = Graph::new();
        let clouds: Vec<&PointCloud<T>> = batch.clouds.iter().collect();
        let z_pc = vae.pc.encode(&g, &params, &clouds)?.index_select(&batch.slot_cloud)?;
        let terms = elbo_loss_weighted(&g, &params, vae, g.constant(batch.poses), z_pc, lambda, cfg.translation_weight, noise)?;
        let grads = backward(terms.loss, &params)?;
        let row = MetricRow {
            step,
            loss: terms.loss.value().data()[0].as_f64(),
            recon: terms.recon.value().data()[0].as_f64(),
            kl: terms.kl.value().data()[0].as_f64(),
            lambda,
            lr: adam.lr,
        };
        drop(g);
        if !row.loss.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite loss at step {step}")));
        }
        adam_step(&mut params, &grads, &mut adam)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            if step % (cfg.log_every * 50) == 0 {
                info!("vae step {step}: loss {:.5} recon {:.5} kl {:.4}", row.loss, row.recon, row.kl);
            }
            metrics.push(row);
        }
    }
    Ok(TrainOutcome { params, adam, metrics })
}

/// Posterior-mean reconstruction error `‖dec(μ) − h‖²` per grasp in pose
/// units (meters and MRP components), on unaugmented clouds.
pub fn reconstruction_errors<T: Scalar>(
    objects: &[&ObjectEntry],
    vae: &Vae,
    params: &ParamStore<T>,
) -> Result<Vec<f64>> {
    let k = vae.config.grasp_latent;
    let mut errors = Vec::new();
    for entry in objects {
        let poses: Vec<_> = entry.grasps.iter().filter(|g| g.success).map(|g| g.pose).collect();
        if poses.is_empty() {
            continue;
        }
        let six = poses_to_tensor::<T>(&poses, vae.config.mrp_scale)?;
        let g = Graph::new();
        let cloud = entry.cloud.cast::<T>();
        let z_pc = vae.pc.encode(&g, params, &[&cloud])?;
        let terms = elbo_loss(&g, params, vae, g.constant(six.clone()), z_pc, 0.0, Tensor::zeros([poses.len(), k]))?;
        let rec = vae.dec.forward(&g, params, terms.mu, z_pc)?.value();
        for (r, h) in rec.data().chunks(6).zip(six.data().chunks(6)) {
            errors.push(r.iter().zip(h).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum());
        }
    }
    Ok(errors)
}

/// `(B, 6)` tensor of `[t, a]` rows.
pub fn poses_to_tensor<T: Scalar>(poses: &[RigidTransform<f64>], mrp_scale: f64) -> Result<Tensor<T>> {
    if poses.is_empty() {
        return Err(Error::Empty("poses"));
    }
    let mut data = Vec::with_capacity(poses.len() * 6);
    for p in poses {
        data.extend(Pose6::from_transform(p, mrp_scale)?.to_array().iter().map(|v| T::lit(*v)));
    }
    Tensor::new([poses.len(), 6], data)
}

/// Reads `(B, 6)` rows back as rigid transforms.
pub fn tensor_to_poses<T: Scalar>(t: &Tensor<T>, mrp_scale: f64) -> Result<Vec<RigidTransform<f64>>> {
    if t.rank() != 2 || t.shape()[1] != 6 {
        return Err(Error::Shape(format!("expected (B, 6), got {:?}", t.shape())));
    }
    t.data()
        .chunks(6)
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.as_f64()).collect();
            Ok(Pose6::from_slice(&v)?.to_transform(mrp_scale))
        })
        .collect()
}

/// Decodes `n` prior draws `z ~ N(0, I)` for one cloud.
pub fn sample_prior<T: Scalar, R: Rng + ?Sized>(
    vae: &Vae,
    params: &ParamStore<T>,
    cloud: &PointCloud<T>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<RigidTransform<f64>>> {
    let g = Graph::new();
    let z_pc = vae.pc.encode(&g, params, &[cloud])?;
    let z = g.constant(Tensor::randn([n, vae.config.grasp_latent], rng));
    let out = vae.dec.forward(&g, params, z, z_pc)?.value();
    tensor_to_poses(&out, vae.config.mrp_scale)
}
