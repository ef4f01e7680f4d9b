use rand::Rng;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::models::{FilmStack, Linear, ModelConfig};
use crate::numerics::{sinusoidal_embedding_batch, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Lower and upper clamp of the posterior log-variance.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Shared per-point MLP, max-pool over points, dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudEncoder {
    pub layers: Vec<Linear>,
    pub head: Linear,
    pub num_points: usize,
    pub input_scale: f64,
}

impl PointCloudEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut dims = vec![3];
        dims.extend(&cfg.pc_widths);
        let layers = dims.windows(2).enumerate().map(|(i, w)| Linear::new(format!("pc.point{i}"), w[0], w[1])).collect();
        Self {
            layers,
            head: Linear::new("pc.head", *dims.last().unwrap(), cfg.shape_latent),
            num_points: cfg.num_points,
            input_scale: cfg.input_scale,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))?;
        self.head.init(store, rng)
    }

    /// Stacks clouds into a `(C·N, 3)` tensor.
    pub fn batch_tensor<T: Scalar>(&self, clouds: &[&PointCloud<T>]) -> Result<Tensor<T>> {
        if clouds.is_empty() {
            return Err(Error::Empty("point cloud batch"));
        }
        let s = T::lit(self.input_scale);
        let mut data = Vec::with_capacity(clouds.len() * self.num_points * 3);
        for pc in clouds {
            if pc.len() != self.num_points {
                return Err(Error::Shape(format!("expected {} points, got {}", self.num_points, pc.len())));
            }
            data.extend(pc.points().iter().flat_map(|p| p.iter().map(|v| *v * s)));
        }
        Tensor::new([clouds.len() * self.num_points, 3], data)
    }

    /// `(C·N, 3)` points to `(C, m)` shape latents.
    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, points: Var<'g, T>) -> Result<Var<'g, T>> {
        let rows = points.shape()[0];
        if rows % self.num_points != 0 {
            return Err(Error::Shape(format!("{rows} rows is not a multiple of {} points", self.num_points)));
        }
        let mut h = points;
        for l in &self.layers {
            h = l.forward(g, store, h)?.relu();
        }
        let width = h.shape()[1];
        let batch = rows / self.num_points;
        let pooled = h.reshape([batch, self.num_points, width])?.max_axis(1)?;
        let z = self.head.forward(g, store, pooled)?;
        // Standardize each code across features so conditioning is unit scale.
        let inv = T::one() / T::lit(self.head.fan_out as f64);
        let centered = z.sub(z.sum_axis(1)?.reshape([batch, 1])?.scale(inv))?;
        let var = centered.square().sum_axis(1)?.reshape([batch, 1])?.scale(inv);
        centered.div(var.offset(T::lit(1e-6)).sqrt())
    }

    pub fn encode<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        clouds: &[&PointCloud<T>],
    ) -> Result<Var<'g, T>> {
        self.forward(g, store, g.constant(self.batch_tensor(clouds)?))
    }
}

/// `q(z_h | h, z_pc)`: pose to posterior mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspEncoder {
    pub stack: FilmStack,
    pub mu: Linear,
    pub logvar: Linear,
    pub input_scale: f64,
}

impl GraspEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            stack: FilmStack::new("enc", 6, cfg.width, cfg.blocks, cfg.shape_latent),
            mu: Linear::new("enc.mu", cfg.width, cfg.grasp_latent),
            logvar: Linear::new("enc.logvar", cfg.width, cfg.grasp_latent),
            input_scale: cfg.input_scale,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.stack.init(store, rng)?;
        self.mu.init(store, rng)?;
        self.logvar.init(store, rng)
    }

    /// `h: (B, 6)`, `z_pc: (B or 1, m)` to `(μ, log σ²)`, each `(B, k)`.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        h: Var<'g, T>,
        z_pc: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let x = self.stack.forward(g, store, h.mul(g.constant(pose_weights(self.input_scale)))?, z_pc)?;
        let mu = self.mu.forward(g, store, x)?;
        let c = T::lit(LOGVAR_CLAMP);
        let logvar = self.logvar.forward(g, store, x)?.clamp(-c, c);
        Ok((mu, logvar))
    }
}

/// `[s, s, s, 1, 1, 1]`: maps a pose `[t, a]` to model units, where the
/// translation is measured at the same scale as the encoded cloud.
pub fn pose_weights<T: Scalar>(input_scale: f64) -> Tensor<T> {
    let s = T::lit(input_scale);
    Tensor::from_vec(vec![s, s, s, T::one(), T::one(), T::one()])
}

/// `p(h | z_h, z_pc)`: latent to pose `[t, a]`. The network regresses the
/// pose in model units; the translation is scaled back to meters.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspDecoder {
    pub stack: FilmStack,
    pub out: Linear,
    pub input_scale: f64,
}

impl GraspDecoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            stack: FilmStack::new("dec", cfg.grasp_latent, cfg.width, cfg.blocks, cfg.shape_latent),
            out: Linear::new("dec.out", cfg.width, 6),
            input_scale: cfg.input_scale,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.stack.init(store, rng)?;
        self.out.init(store, rng)
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        z: Var<'g, T>,
        z_pc: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let x = self.stack.forward(g, store, z, z_pc)?;
        let inv = 1.0 / self.input_scale;
        self.out.forward(g, store, x)?.mul(g.constant(pose_weights(inv)))
    }
}

/// Noise predictor `ε_θ(z_t, t, z_pc[, task])`.
///
/// The conditioning vector is `silu(W·(e(t) + P·z_pc + E[task]))` where
/// `e` is the sinusoidal embedding and `E` an optional class table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    pub stack: FilmStack,
    pub out: Linear,
    pub pc_proj: Linear,
    pub cond: Linear,
    pub time_dim: usize,
    pub timesteps: usize,
    pub task_classes: Option<usize>,
}

pub const TASK_EMBED: &str = "score.task_embed";

impl ScoreNet {
    pub fn new(cfg: &ModelConfig, timesteps: usize, task_classes: Option<usize>) -> Self {
        let e = cfg.time_dim;
        Self {
            stack: FilmStack::new("score", cfg.grasp_latent, cfg.score_width, cfg.score_blocks, e),
            out: Linear::new("score.out", cfg.score_width, cfg.grasp_latent),
            pc_proj: Linear::new("score.pc_proj", cfg.shape_latent, e),
            cond: Linear::new("score.cond", e, e),
            time_dim: e,
            timesteps,
            task_classes,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.stack.init(store, rng)?;
        self.out.init(store, rng)?;
        self.pc_proj.init(store, rng)?;
        self.cond.init(store, rng)?;
        if let Some(n) = self.task_classes {
            store.insert(TASK_EMBED, Tensor::randn([n, self.time_dim], rng).with_requires_grad(true))?;
        }
        Ok(())
    }

    /// `z_t: (B, k)`; `t` holds 1 or B timesteps in `1..=T`; `z_pc` is
    /// `(1 or B, m)`; `task` holds 1 or B class ids.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        z_t: Var<'g, T>,
        t: &[usize],
        z_pc: Var<'g, T>,
        task: Option<&[usize]>,
    ) -> Result<Var<'g, T>> {
        if let Some(&bad) = t.iter().find(|&&s| s == 0 || s > self.timesteps) {
            return Err(Error::OutOfRange(format!("timestep {bad} outside 1..={}", self.timesteps)));
        }
        let emb = g.constant(sinusoidal_embedding_batch::<T>(t, self.time_dim)?);
        let mut c = emb.add(self.pc_proj.forward(g, store, z_pc)?)?;
        if let Some(ids) = task {
            let n = self
                .task_classes
                .ok_or_else(|| Error::InvalidArgument("task id given to an unconditional score network".into()))?;
            if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
                return Err(Error::OutOfRange(format!("task id {bad} outside 0..{n}")));
            }
            c = c.add(g.param(store, TASK_EMBED)?.index_select(ids)?)?;
        }
        let c = self.cond.forward(g, store, c)?.silu();
        let x = self.stack.forward(g, store, z_t, c)?;
        self.out.forward(g, store, x)
    }
}
