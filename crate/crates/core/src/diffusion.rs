//! Stage two: forward noising, noise-prediction loss, DDPM and DDIM
//! samplers, and the latent diffusion trainer.

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{sample_batch, step_rng, GraspPick};
use crate::dataset::{AugmentConfig, ObjectEntry, PointCloud};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::models::{ScoreNet, Vae};
use crate::numerics::{adam_step, backward, step_lr, AdamState, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;
use crate::vae::{tensor_to_poses, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Noise schedule tables indexed by `t ∈ 0..=T`; index 0 is the clean end
/// (`β_0 = 0`, `ᾱ_0 = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// `β_t` linear from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let betas = (1..=timesteps)
            .map(|t| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * (t - 1) as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Squared-cosine `ᾱ` with offset `s = 0.008`, `β` capped at 0.999.
    pub fn cosine(timesteps: usize) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let s = 0.008;
        let f = |t: usize| (((t as f64 / timesteps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let betas = (1..=timesteps).map(|t| (1.0 - f(t) / f(t - 1)).min(0.999)).collect();
        Self::from_betas(betas)
    }

    /// `betas[i]` is `β_{i+1}`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Empty("beta schedule"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let mut full = Vec::with_capacity(betas.len() + 1);
        full.push(0.0);
        full.extend(betas);
        let mut alpha_bar = Vec::with_capacity(full.len());
        alpha_bar.push(1.0);
        for b in &full[1..] {
            alpha_bar.push(alpha_bar.last().unwrap() * (1.0 - b));
        }
        Ok(Self { betas: full, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.timesteps() {
            return Err(Error::OutOfRange(format!("timestep {t} outside 0..={}", self.timesteps())));
        }
        Ok(())
    }
}

/// `z_t = √ᾱ_t·z_0 + √(1−ᾱ_t)·ε`.
pub fn q_sample<T: Scalar>(z0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &DiffusionSchedule) -> Result<Tensor<T>> {
    sched.check(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::Shape(format!("z0 {:?} vs noise {:?}", z0.shape(), eps.shape())));
    }
    let a = T::lit(sched.sqrt_alpha_bar(t));
    let b = T::lit(sched.sqrt_one_minus_alpha_bar(t));
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * *z + b * *e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

/// Row-wise `q_sample` with per-row timesteps.
fn q_sample_rows<T: Scalar>(z0: &Tensor<T>, ts: &[usize], eps: &Tensor<T>, sched: &DiffusionSchedule) -> Result<Tensor<T>> {
    let k = z0.shape()[1];
    let mut data = Vec::with_capacity(z0.numel());
    for (row, &t) in ts.iter().enumerate() {
        sched.check(t)?;
        let a = T::lit(sched.sqrt_alpha_bar(t));
        let b = T::lit(sched.sqrt_one_minus_alpha_bar(t));
        for j in 0..k {
            data.push(a * z0.data()[row * k + j] + b * eps.data()[row * k + j]);
        }
    }
    Tensor::new(z0.shape().to_vec(), data)
}

/// Batch mean of `‖ε − ε_θ(z_t, t, z_pc[, task])‖²` with `z_t` from
/// [`q_sample`].
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss<'g, T: Scalar>(
    g: &'g Graph<T>,
    store: &ParamStore<T>,
    net: &ScoreNet,
    z0: &Tensor<T>,
    z_pc: Var<'g, T>,
    ts: &[usize],
    eps: &Tensor<T>,
    task: Option<&[usize]>,
    sched: &DiffusionSchedule,
) -> Result<Var<'g, T>> {
    let rows = z0.shape()[0];
    if ts.len() != rows || eps.shape() != z0.shape() {
        return Err(Error::Shape(format!("{rows} latents, {} timesteps, noise {:?}", ts.len(), eps.shape())));
    }
    let zt = q_sample_rows(z0, ts, eps, sched)?;
    let pred = net.forward(g, store, g.constant(zt), ts, z_pc, task)?;
    Ok(pred.sub(g.constant(eps.clone()))?.square().sum().scale(T::lit(1.0 / rows as f64)))
}

/// Anything that predicts the noise in `z_t` for a batch sharing one `t`.
pub trait NoisePredictor<T> {
    fn predict(&self, z_t: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

/// A trained score network bound to one shape latent and optional task.
pub struct ScorePredictor<'a, T> {
    pub net: &'a ScoreNet,
    pub params: &'a ParamStore<T>,
    /// `(1, m)`.
    pub z_pc: Tensor<T>,
    pub task: Option<usize>,
}

impl<T: Scalar> NoisePredictor<T> for ScorePredictor<'_, T> {
    fn predict(&self, z_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let g = Graph::new();
        let task = self.task.map(|c| [c]);
        let out = self.net.forward(
            &g,
            self.params,
            g.constant(z_t.clone()),
            &[t],
            g.constant(self.z_pc.clone()),
            task.as_ref().map(|c| &c[..]),
        )?;
        Ok((*out.value()).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            other => Err(Error::InvalidArgument(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// DDIM step count (DDPM always runs every step).
    pub steps: usize,
    /// DDIM stochasticity.
    pub eta: f64,
    /// Reproduces the printed ancestral update, noise inside the
    /// `1/√(1−β_t)` factor and `β_t/(1−ᾱ_t)` as the noise coefficient.
    pub paper_literal_eq5: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { kind: SamplerKind::Ddpm, steps: 100, eta: 0.0, paper_literal_eq5: false }
    }
}

impl SamplerConfig {
    pub fn ddim(steps: usize) -> Self {
        Self { kind: SamplerKind::Ddim, steps, ..Self::default() }
    }

    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.kind == SamplerKind::Ddim && (self.steps == 0 || self.steps > timesteps) {
            return Err(Error::Config(format!("ddim steps must be in 1..={timesteps}, got {}", self.steps)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Latents recorded during sampling, `(t, z_t)` from noisy to clean.
pub type Trajectory<T> = Vec<(usize, Tensor<T>)>;

fn record<T: Scalar>(traj: &mut Option<&mut Trajectory<T>>, every: usize, t: usize, z: &Tensor<T>) {
    if let Some(tr) = traj.as_deref_mut() {
        if t == 0 || t % every.max(1) == 0 {
            tr.push((t, z.clone()));
        }
    }
}

/// Ancestral sampling from `z_T`:
/// `z_{t−1} = (z_t − β_t/√(1−ᾱ_t)·ε̂)/√(1−β_t) + √β_t·η`, no noise at t = 1.
pub fn ddpm_sample_from<T: Scalar, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    sched: &DiffusionSchedule,
    z_t: Tensor<T>,
    literal: bool,
    rng: &mut R,
    mut traj: Option<&mut Trajectory<T>>,
    record_every: usize,
) -> Result<Tensor<T>> {
    let mut z = z_t;
    let total = sched.timesteps();
    record(&mut traj, record_every, total, &z);
    for t in (1..=total).rev() {
        let eps = pred.predict(&z, t)?;
        let beta = sched.beta(t);
        let inv = 1.0 / (1.0 - beta).sqrt();
        let coef = if literal { beta / (1.0 - sched.alpha_bar(t)) } else { beta / sched.sqrt_one_minus_alpha_bar(t) };
        let sigma = if t > 1 { beta.sqrt() } else { 0.0 };
        let noise = if t > 1 { Some(Tensor::<T>::randn(z.shape().to_vec(), rng)) } else { None };
        let data = z
            .data()
            .iter()
            .zip(eps.data())
            .enumerate()
            .map(|(i, (zi, ei))| {
                let n = noise.as_ref().map_or(0.0, |n| n.data()[i].as_f64());
                let v = if literal {
                    inv * (zi.as_f64() - coef * ei.as_f64() + sigma * n)
                } else {
                    inv * (zi.as_f64() - coef * ei.as_f64()) + sigma * n
                };
                T::lit(v)
            })
            .collect();
        z = Tensor::new(z.shape().to_vec(), data)?;
        record(&mut traj, record_every, t - 1, &z);
    }
    Ok(z)
}

pub fn ddpm_sample<T: Scalar, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    sched: &DiffusionSchedule,
    n: usize,
    k: usize,
    literal: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let z = Tensor::randn([n, k], rng);
    ddpm_sample_from(pred, sched, z, literal, rng, None, 1)
}

/// `τ_i = ⌊i·T/S⌋` for `i = 0..=S`.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(Error::InvalidArgument(format!("ddim steps must be in 1..={timesteps}, got {steps}")));
    }
    Ok((0..=steps).map(|i| i * timesteps / steps).collect())
}

/// DDIM over the evenly spaced subsequence, starting from `z_T`.
pub fn ddim_sample_from<T: Scalar, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    sched: &DiffusionSchedule,
    z_t: Tensor<T>,
    steps: usize,
    eta: f64,
    rng: &mut R,
    mut traj: Option<&mut Trajectory<T>>,
    record_every: usize,
) -> Result<Tensor<T>> {
    let taus = ddim_timesteps(sched.timesteps(), steps)?;
    let mut z = z_t;
    record(&mut traj, 1, *taus.last().unwrap(), &z);
    for i in (1..taus.len()).rev() {
        let (t, prev) = (taus[i], taus[i - 1]);
        let eps = pred.predict(&z, t)?;
        let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(prev));
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let noise = if sigma > 0.0 { Some(Tensor::<T>::randn(z.shape().to_vec(), rng)) } else { None };
        let data = z
            .data()
            .iter()
            .zip(eps.data())
            .enumerate()
            .map(|(j, (zj, ej))| {
                let (zj, ej) = (zj.as_f64(), ej.as_f64());
                let x0 = (zj - (1.0 - ab).sqrt() * ej) / ab.sqrt();
                let n = noise.as_ref().map_or(0.0, |n| n.data()[j].as_f64());
                T::lit(ab_prev.sqrt() * x0 + dir * ej + sigma * n)
            })
            .collect();
        z = Tensor::new(z.shape().to_vec(), data)?;
        if i - 1 == 0 || (steps - (i - 1)) % record_every.max(1) == 0 {
            if let Some(tr) = traj.as_deref_mut() {
                tr.push((prev, z.clone()));
            }
        }
    }
    Ok(z)
}

#[allow(clippy::too_many_arguments)]
pub fn ddim_sample<T: Scalar, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    sched: &DiffusionSchedule,
    n: usize,
    k: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let z = Tensor::randn([n, k], rng);
    ddim_sample_from(pred, sched, z, cfg.steps, cfg.eta, rng, None, 1)
}

/// Stage-two settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub schedule: ScheduleKind,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub log_every: u64,
    pub augment: bool,
    /// Task training draws labels uniformly among each object's labels.
    pub balance_labels: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 5e-5,
            beta_end: 1e-3,
            schedule: ScheduleKind::Linear,
            steps: 4000,
            batch_size: 64,
            lr: 1e-3,
            log_every: 10,
            augment: true,
            balance_labels: true,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        match self.schedule {
            ScheduleKind::Linear => DiffusionSchedule::linear(self.timesteps, self.beta_start, self.beta_end),
            ScheduleKind::Cosine => DiffusionSchedule::cosine(self.timesteps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("diffusion timesteps, steps, batch_size and log_every must be positive".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config("need 0 < beta_start < beta_end < 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("diffusion lr must be positive".into()));
        }
        Ok(())
    }
}

/// Fresh score-network parameters alongside a frozen copy of the VAE.
pub fn init_ldm_params<T: Scalar, R: Rng + ?Sized>(
    vae_params: &ParamStore<T>,
    net: &ScoreNet,
    rng: &mut R,
) -> Result<ParamStore<T>> {
    let mut store = vae_params.clone();
    store.freeze();
    store.set_step(0);
    let mut score = ParamStore::new();
    net.init(&mut score, rng)?;
    store.merge(score)?;
    Ok(store)
}

/// Trains the score network on posterior samples of the frozen VAE.
///
/// `start.0` holds the frozen VAE parameters plus the score parameters (see
/// [`init_ldm_params`]). Step `s` draws from stream `s` of `seed`. Stops
/// before step `end`.
#[allow(clippy::too_many_arguments)]
pub fn train_ldm<T: Scalar>(
    objects: &[&ObjectEntry],
    vae: &Vae,
    net: &ScoreNet,
    cfg: &DiffusionConfig,
    augment: &AugmentConfig,
    seed: u64,
    start: (ParamStore<T>, Option<AdamState<T>>),
    end: u64,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let sched = cfg.schedule()?;
    let (mut params, adam) = start;
    let mut adam = adam.unwrap_or_else(|| AdamState::new(&params, cfg.lr));
    let aug = if cfg.augment { augment.clone() } else { AugmentConfig::none() };
    let pick = if net.task_classes.is_some() && cfg.balance_labels { GraspPick::LabelBalanced } else { GraspPick::Uniform };
    let k = vae.config.grasp_latent;
    let mut metrics = Vec::new();
    for step in params.step()..end.min(cfg.steps) {
        let mut rng = step_rng(seed, step);
        let batch = sample_batch::<T, _>(objects, cfg.batch_size, &aug, vae.config.mrp_scale, pick, &mut rng)?;
        adam.lr = step_lr(step, cfg.steps, cfg.lr)?;
        let post_noise = Tensor::<T>::randn([cfg.batch_size, k], &mut rng);
        let ts: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(1..=sched.timesteps())).collect();
        let eps = Tensor::<T>::randn([cfg.batch_size, k], &mut rng);

        let g = Graph::new();
        let clouds: Vec<&PointCloud<T>> = batch.clouds.iter().collect();
        let z_pc = vae.pc.encode(&g, &params, &clouds)?;
        let z_pc = g.constant((*z_pc.value()).clone()).index_select(&batch.slot_cloud)?;
        let (mu, logvar) = vae.enc.forward(&g, &params, g.constant(batch.poses), z_pc)?;
        let z0 = posterior_sample(&mu.value(), &logvar.value(), &post_noise)?;
        let task = net.task_classes.map(|_| batch.labels.as_slice());
        let loss = diffusion_loss(&g, &params, net, &z0, z_pc, &ts, &eps, task, &sched)?;
        let value = loss.value().data()[0].as_f64();
        let grads = backward(loss, &params)?;
        drop(g);
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite loss at step {step}")));
        }
        adam_step(&mut params, &grads, &mut adam)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            if step % (cfg.log_every * 50) == 0 {
                info!("ldm step {step}: loss {value:.5}");
            }
            metrics.push(crate::vae::MetricRow { step, loss: value, recon: 0.0, kl: 0.0, lambda: 0.0, lr: adam.lr });
        }
    }
    Ok(TrainOutcome { params, adam, metrics })
}

/// `μ + exp(½ log σ²)⊙ε`.
pub fn posterior_sample<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(Error::Shape("posterior parameter shapes differ".into()));
    }
    let half = T::lit(0.5);
    let data = mu.data().iter().zip(logvar.data()).zip(eps.data()).map(|((m, lv), e)| *m + (*lv * half).exp() * *e).collect();
    Tensor::new(mu.shape().to_vec(), data)
}

/// Shape latent of one cloud as a `(1, m)` tensor.
pub fn shape_latent<T: Scalar>(vae: &Vae, params: &ParamStore<T>, cloud: &PointCloud<T>) -> Result<Tensor<T>> {
    let g = Graph::new();
    let z = vae.pc.encode(&g, params, &[cloud])?;
    Ok((*z.value()).clone())
}

/// Samples `n` grasp latents with the score network and decodes them.
#[allow(clippy::too_many_arguments)]
pub fn sample_grasps<T: Scalar, R: Rng + ?Sized>(
    vae: &Vae,
    net: &ScoreNet,
    params: &ParamStore<T>,
    sched: &DiffusionSchedule,
    cloud: &PointCloud<T>,
    n: usize,
    sampler: &SamplerConfig,
    task: Option<usize>,
    rng: &mut R,
) -> Result<Vec<RigidTransform<f64>>> {
    let z = sample_latents(vae, net, params, sched, cloud, n, sampler, task, rng, None)?;
    decode_latents(vae, params, cloud, &z)
}

#[allow(clippy::too_many_arguments)]
pub fn sample_latents<T: Scalar, R: Rng + ?Sized>(
    vae: &Vae,
    net: &ScoreNet,
    params: &ParamStore<T>,
    sched: &DiffusionSchedule,
    cloud: &PointCloud<T>,
    n: usize,
    sampler: &SamplerConfig,
    task: Option<usize>,
    rng: &mut R,
    trajectory: Option<(&mut Trajectory<T>, usize)>,
) -> Result<Tensor<T>> {
    sampler.validate(sched.timesteps())?;
    if n == 0 {
        return Err(Error::InvalidArgument("asked for zero samples".into()));
    }
    if task.is_some() && net.task_classes.is_none() {
        return Err(Error::InvalidArgument("task given to an unconditional checkpoint".into()));
    }
    let pred = ScorePredictor { net, params, z_pc: shape_latent(vae, params, cloud)?, task };
    let z_t = Tensor::randn([n, vae.config.grasp_latent], rng);
    let (traj, every) = match trajectory {
        Some((t, e)) => (Some(t), e),
        None => (None, 1),
    };
    match sampler.kind {
        SamplerKind::Ddpm => ddpm_sample_from(&pred, sched, z_t, sampler.paper_literal_eq5, rng, traj, every),
        SamplerKind::Ddim => ddim_sample_from(&pred, sched, z_t, sampler.steps, sampler.eta, rng, traj, every),
    }
}

/// Decodes `(n, k)` latents into poses for one cloud.
pub fn decode_latents<T: Scalar>(
    vae: &Vae,
    params: &ParamStore<T>,
    cloud: &PointCloud<T>,
    z: &Tensor<T>,
) -> Result<Vec<RigidTransform<f64>>> {
    let g = Graph::new();
    let z_pc = vae.pc.encode(&g, params, &[cloud])?;
    let out = vae.dec.forward(&g, params, g.constant(z.clone()), z_pc)?.value();
    tensor_to_poses(&out, vae.config.mrp_scale)
}
