//! Point-cloud encoder, grasp encoder/decoder and the diffusion noise
//! predictor, all built on [`crate::numerics`].

mod layers;
mod networks;

pub use layers::{FilmBlock, FilmStack, Linear};
pub use networks::{pose_weights, GraspDecoder, GraspEncoder, PointCloudEncoder, ScoreNet, LOGVAR_CLAMP, TASK_EMBED};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::scalar::Scalar;

/// Network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_points: usize,
    /// Widths of the shared per-point layers.
    pub pc_widths: Vec<usize>,
    /// Shape latent size `m`.
    pub shape_latent: usize,
    /// Grasp latent size `k`.
    pub grasp_latent: usize,
    /// Residual width and depth of the grasp encoder and decoder.
    pub width: usize,
    pub blocks: usize,
    pub score_width: usize,
    pub score_blocks: usize,
    /// Sinusoidal embedding and conditioning width of the score network.
    pub time_dim: usize,
    /// Multiplies point coordinates and grasp translations on the way into
    /// the encoders.
    pub input_scale: f64,
    pub mrp_scale: f64,
    pub task_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_points: 1024,
            pc_widths: vec![64, 128, 256],
            shape_latent: 128,
            grasp_latent: 4,
            width: 256,
            blocks: 3,
            score_width: 256,
            score_blocks: 3,
            time_dim: 128,
            input_scale: 10.0,
            mrp_scale: 4.0,
            task_classes: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_points", self.num_points),
            ("shape_latent", self.shape_latent),
            ("grasp_latent", self.grasp_latent),
            ("width", self.width),
            ("score_width", self.score_width),
            ("task_classes", self.task_classes),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if self.pc_widths.is_empty() || self.pc_widths.contains(&0) {
            return Err(Error::Config("pc_widths must be non-empty and positive".into()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even and positive".into()));
        }
        if !(self.input_scale > 0.0 && self.mrp_scale > 0.0) {
            return Err(Error::Config("input_scale and mrp_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Stage-one networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub config: ModelConfig,
    pub pc: PointCloudEncoder,
    pub enc: GraspEncoder,
    pub dec: GraspDecoder,
}

impl Vae {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            pc: PointCloudEncoder::new(config),
            enc: GraspEncoder::new(config),
            dec: GraspDecoder::new(config),
        })
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        self.pc.init(&mut store, rng)?;
        self.enc.init(&mut store, rng)?;
        self.dec.init(&mut store, rng)?;
        Ok(store)
    }
}
