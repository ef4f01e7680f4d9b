//! Stage-level training, checkpoint plumbing and grasp generation shared by
//! the command line and the test suites.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::{augment, AugmentConfig, Dataset, PointCloud, RegionLabel};
use crate::diffusion::{
    decode_latents, init_ldm_params, sample_latents, train_ldm, DiffusionSchedule, SamplerConfig, Trajectory,
};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::models::{ScoreNet, Vae};
use crate::numerics::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ParamStore};
use crate::scalar::Scalar;
use crate::vae::{sample_prior, train_vae, write_metrics_csv, TrainOutcome};

/// Name prefixes of the stage-one parameters.
pub const VAE_PREFIXES: [&str; 3] = ["pc.", "enc.", "dec."];
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Vae,
    Ldm,
    TaskLdm,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Vae => "vae",
            Stage::Ldm => "ldm",
            Stage::TaskLdm => "task-ldm",
        }
    }

    pub fn is_diffusion(&self) -> bool {
        !matches!(self, Stage::Vae)
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Stage::Vae),
            "ldm" => Ok(Stage::Ldm),
            "task-ldm" => Ok(Stage::TaskLdm),
            other => Err(Error::InvalidArgument(format!("unknown stage `{other}`"))),
        }
    }
}

/// Generator for parameter initialization, independent of the per-step
/// training streams.
pub fn init_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - stage as u64);
    rng
}

pub fn score_net(cfg: &RunConfig, stage: Stage) -> ScoreNet {
    let task = (stage == Stage::TaskLdm).then_some(cfg.model.task_classes);
    ScoreNet::new(&cfg.model, cfg.diffusion.timesteps, task)
}

/// Stage-one parameters of `params`, frozen.
pub fn frozen_vae_params<T: Scalar>(params: &ParamStore<T>) -> Result<ParamStore<T>> {
    let mut out = ParamStore::new();
    for p in VAE_PREFIXES {
        out.merge(params.subset(p))?;
    }
    if out.is_empty() {
        return Err(Error::Checkpoint("no VAE parameters found".into()));
    }
    out.freeze();
    out.set_step(0);
    Ok(out)
}

/// Where a training run starts from.
pub enum Start<T> {
    Fresh,
    /// Continue a checkpoint of the same stage.
    Resume(Checkpoint<T>),
}

/// Runs one training stage. Diffusion stages need the stage-one parameters
/// unless resuming (a diffusion checkpoint carries its own frozen copy).
pub fn train_stage<T: Scalar>(
    stage: Stage,
    cfg: &RunConfig,
    data: &Dataset,
    vae_params: Option<&ParamStore<T>>,
    start: Start<T>,
) -> Result<TrainOutcome<T>> {
    train_stage_until(stage, cfg, data, vae_params, start, u64::MAX)
}

/// [`train_stage`] that stops before step `end`, leaving a resumable state.
pub fn train_stage_until<T: Scalar>(
    stage: Stage,
    cfg: &RunConfig,
    data: &Dataset,
    vae_params: Option<&ParamStore<T>>,
    start: Start<T>,
    end: u64,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let objects: Vec<_> = data.trainable();
    if objects.is_empty() {
        return Err(Error::Empty("dataset has no successful grasps"));
    }
    let vae = Vae::new(&cfg.model)?;
    let mut rng = init_rng(cfg.seed, stage);
    match stage {
        Stage::Vae => {
            let start = match start {
                Start::Fresh => (vae.init(&mut rng)?, None),
                Start::Resume(ck) => (ck.params, ck.adam),
            };
            train_vae(&objects, &vae, &cfg.vae, &cfg.dataset.augment, cfg.seed, start, end)
        }
        Stage::Ldm | Stage::TaskLdm => {
            let net = score_net(cfg, stage);
            let start = match start {
                Start::Fresh => {
                    let frozen = vae_params.ok_or_else(|| Error::Checkpoint("diffusion training needs a VAE checkpoint".into()))?;
                    (init_ldm_params(&frozen_vae_params(frozen)?, &net, &mut rng)?, None)
                }
                Start::Resume(ck) => {
                    let step = ck.params.step();
                    let mut params = frozen_vae_params(&ck.params)?;
                    params.merge(ck.params.subset("score."))?;
                    params.set_step(step);
                    (params, ck.adam)
                }
            };
            let mut expected = frozen_vae_params(&start.0)?;
            net.init(&mut expected, &mut ChaCha8Rng::seed_from_u64(0))?;
            start.0.check_layout(&expected)?;
            train_ldm(&objects, &vae, &net, &cfg.diffusion, &cfg.dataset.augment, cfg.seed, start, end)
        }
    }
}

/// Writes the checkpoint and its metrics CSV into `dir`.
pub fn save_stage<T: Scalar>(dir: &Path, stage: Stage, cfg: &RunConfig, outcome: &TrainOutcome<T>) -> Result<()> {
    let meta = CheckpointMeta { stage: stage.name().to_string(), config: cfg.to_value() };
    save_checkpoint(dir, &outcome.params, Some(&outcome.adam), &meta)?;
    write_metrics_csv(&dir.join(METRICS_FILE), &outcome.metrics)
}

/// Loads a checkpoint together with its stage and configuration.
pub fn load_stage<T: Scalar>(dir: &Path) -> Result<(Stage, RunConfig, Checkpoint<T>)> {
    let ck = load_checkpoint::<T>(dir)?;
    let stage: Stage = ck.manifest.stage.parse()?;
    let cfg = RunConfig::from_value(&ck.manifest.config)?;
    Ok((stage, cfg, ck))
}

/// A trained model that turns clouds into grasps.
pub struct Generator<T> {
    pub stage: Stage,
    pub config: RunConfig,
    pub vae: Vae,
    pub net: Option<ScoreNet>,
    pub params: ParamStore<T>,
    pub schedule: DiffusionSchedule,
}

impl<T: Scalar> Generator<T> {
    pub fn new(stage: Stage, config: RunConfig, params: ParamStore<T>) -> Result<Self> {
        let vae = Vae::new(&config.model)?;
        let net = stage.is_diffusion().then(|| score_net(&config, stage));
        let schedule = config.diffusion.schedule()?;
        Ok(Self { stage, config, vae, net, params, schedule })
    }

    pub fn from_checkpoint(dir: &Path) -> Result<Self> {
        let (stage, cfg, ck) = load_stage::<T>(dir)?;
        Self::new(stage, cfg, ck.params)
    }

    pub fn is_task_conditional(&self) -> bool {
        self.net.as_ref().is_some_and(|n| n.task_classes.is_some())
    }

    /// `n` grasps in the frame of `cloud` (a centroid-framed cloud). With
    /// `rotate`, the cloud is randomly rotated first and the grasps are
    /// rotated back.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        cloud: &PointCloud<f64>,
        n: usize,
        sampler: &SamplerConfig,
        task: Option<RegionLabel>,
        rotate: bool,
        rng: &mut R,
    ) -> Result<Vec<RigidTransform<f64>>> {
        Ok(self.generate_inner(cloud, n, sampler, task, rotate, rng, None)?.0)
    }

    /// Like [`generate`](Self::generate) and also decodes the latent chain
    /// every `every` steps; returns `(t, poses)` pairs from noisy to clean.
    #[allow(clippy::type_complexity)]
    pub fn generate_with_trajectory<R: Rng + ?Sized>(
        &self,
        cloud: &PointCloud<f64>,
        n: usize,
        sampler: &SamplerConfig,
        task: Option<RegionLabel>,
        rotate: bool,
        every: usize,
        rng: &mut R,
    ) -> Result<(Vec<RigidTransform<f64>>, Vec<(usize, Vec<RigidTransform<f64>>)>)> {
        let (poses, traj) = self.generate_inner(cloud, n, sampler, task, rotate, rng, Some(every))?;
        Ok((poses, traj.unwrap_or_default()))
    }

    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn generate_inner<R: Rng + ?Sized>(
        &self,
        cloud: &PointCloud<f64>,
        n: usize,
        sampler: &SamplerConfig,
        task: Option<RegionLabel>,
        rotate: bool,
        rng: &mut R,
        every: Option<usize>,
    ) -> Result<(Vec<RigidTransform<f64>>, Option<Vec<(usize, Vec<RigidTransform<f64>>)>>)> {
        let (view, back) = if rotate {
            let cfg = AugmentConfig { jitter_sd: 0.0, max_dropout: 0.0, rotate: true };
            let aug = augment(cloud, &[], &cfg, rng)?;
            (aug.cloud, aug.transform.inverse())
        } else {
            (cloud.clone(), RigidTransform::identity())
        };
        let view_t: PointCloud<T> = view.cast();
        let map_back = |poses: Vec<RigidTransform<f64>>| poses.iter().map(|g| back.compose(g)).collect::<Vec<_>>();
        match &self.net {
            None => {
                if task.is_some() {
                    return Err(Error::InvalidArgument("task given to a VAE checkpoint".into()));
                }
                let poses = sample_prior(&self.vae, &self.params, &view_t, n, rng)?;
                Ok((map_back(poses), every.map(|_| Vec::new())))
            }
            Some(net) => {
                let mut traj: Trajectory<T> = Vec::new();
                let record = every.map(|e| (&mut traj, e));
                let z = sample_latents(
                    &self.vae,
                    net,
                    &self.params,
                    &self.schedule,
                    &view_t,
                    n,
                    sampler,
                    task.map(|l| l.index()),
                    rng,
                    record,
                )?;
                let poses = map_back(decode_latents(&self.vae, &self.params, &view_t, &z)?);
                let decoded = match every {
                    None => None,
                    Some(_) => Some(
                        traj.iter()
                            .map(|(t, zt)| Ok((*t, map_back(decode_latents(&self.vae, &self.params, &view_t, zt)?))))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                };
                Ok((poses, decoded))
            }
        }
    }
}
