//! TOML run configuration.

use std::path::{Path, PathBuf};

use hpga_core::denoise::{BackboneConfig, DenoiserShape, TransformerConfig, UNetConfig};
use hpga_core::diffusion::{
    k_threshold, BaselineConfig, HpgaConfig, LatentMode, ModelConfig, PolicyModel, ScheduleKind,
};
use hpga_core::envs::{TaskKind, TaskSpec};
use hpga_core::nn::PgatrConfig;
use hpga_core::policy::{k_o, raw_obs_dim, Adapter, Normalizer, Representation, K_A, RAW_ACTION_DIM};
use hpga_core::autodiff::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PointReach,
    LiftToy,
}

impl Task {
    pub fn spec(self) -> TaskSpec {
        match self {
            Task::PointReach => TaskSpec::point_reach(),
            Task::LiftToy => TaskSpec::lift_toy(),
        }
    }

    pub fn kind(self) -> TaskKind {
        self.spec().task
    }

    pub fn parse(s: &str) -> Result<Self> {
        match TaskKind::parse(s)? {
            TaskKind::PointReach => Ok(Task::PointReach),
            TaskKind::LiftToy => Ok(Task::LiftToy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// P-GATr encoder/decoder around a U-Net.
    HpgaU,
    /// P-GATr encoder/decoder around a transformer.
    HpgaT,
    BaselineU,
    BaselineT,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::HpgaU => "hpga_u",
            Variant::HpgaT => "hpga_t",
            Variant::BaselineU => "baseline_u",
            Variant::BaselineT => "baseline_t",
        }
    }

    pub fn is_hpga(self) -> bool {
        matches!(self, Variant::HpgaU | Variant::HpgaT)
    }

    pub fn uses_unet(self) -> bool {
        matches!(self, Variant::HpgaU | Variant::BaselineU)
    }

    /// The hybrid variant with the same backbone kind.
    pub fn hybrid_counterpart(self) -> Variant {
        if self.uses_unet() {
            Variant::HpgaU
        } else {
            Variant::HpgaT
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    LinearBeta,
}

impl Schedule {
    pub fn kind(self) -> ScheduleKind {
        match self {
            Schedule::Cosine => ScheduleKind::Cosine,
            Schedule::LinearBeta => ScheduleKind::LinearBeta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latent {
    Actions,
    Encoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Parameter init, batch order and diffusion noise.
    pub train: u64,
    /// Evaluation resets and sampling noise.
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { train: 0, eval: 1_000_003 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Evaluate every this many epochs during training; 0 evaluates only at the end.
    pub every: usize,
    pub max_steps: usize,
    /// Success rate at which training may stop early; 0 disables.
    pub stop_at: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 50, every: 0, max_steps: 200, stop_at: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSizes {
    pub pgatr_blocks: usize,
    pub pgatr_channels: usize,
    pub pgatr_heads: usize,
    pub unet_dims: Vec<usize>,
    pub unet_kernel: usize,
    pub unet_groups: usize,
    pub time_dim: usize,
    pub tf_d_model: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub tf_mlp_ratio: usize,
}

impl Default for ModelSizes {
    fn default() -> Self {
        let p = PgatrConfig::default();
        let u = UNetConfig::default();
        let t = TransformerConfig::default();
        Self {
            pgatr_blocks: p.n_blocks,
            pgatr_channels: p.channels,
            pgatr_heads: p.n_heads,
            unet_dims: u.down_dims,
            unet_kernel: u.kernel,
            unet_groups: u.n_groups,
            time_dim: u.time_dim,
            tf_d_model: t.d_model,
            tf_layers: t.n_layers,
            tf_heads: t.n_heads,
            tf_mlp_ratio: t.mlp_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub eval: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data.jsonl".into(),
            checkpoint: "model.ckpt".into(),
            metrics: "metrics.csv".into(),
            eval: "eval.csv".into(),
        }
    }
}

/// Environment variables that override [`Paths`] entries.
pub const PATH_ENV: [(&str, &str); 4] = [
    ("HPGA_DATASET", "dataset"),
    ("HPGA_CHECKPOINT", "checkpoint"),
    ("HPGA_METRICS", "metrics"),
    ("HPGA_EVAL", "eval"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub variant: Variant,
    pub h_o: usize,
    pub h_p: usize,
    pub h_a: usize,
    pub k_max: usize,
    pub eta: f64,
    pub schedule: Schedule,
    pub latent: Latent,
    /// Stop gradients from the decoder loss into the denoiser.
    pub detach_z0: bool,
    pub clip_z0: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// 0 disables gradient clipping.
    pub max_grad_norm: f64,
    /// Record elapsed seconds in the metrics CSV; off writes 0.
    pub wall_clock: bool,
    pub seeds: Seeds,
    pub eval: EvalConfig,
    pub model: ModelSizes,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::PointReach,
            variant: Variant::HpgaU,
            h_o: 2,
            h_p: 16,
            h_a: 8,
            k_max: 100,
            eta: 0.25,
            schedule: Schedule::Cosine,
            latent: Latent::Actions,
            detach_z0: true,
            clip_z0: true,
            epochs: 100,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-6,
            max_grad_norm: 0.0,
            wall_clock: true,
            seeds: Seeds::default(),
            eval: EvalConfig::default(),
            model: ModelSizes::default(),
            paths: Paths::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => bad(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces path entries from [`PATH_ENV`] variables found by `lookup`.
    pub fn apply_path_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, field) in PATH_ENV {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                let slot = match field {
                    "dataset" => &mut self.paths.dataset,
                    "checkpoint" => &mut self.paths.checkpoint,
                    "metrics" => &mut self.paths.metrics,
                    _ => &mut self.paths.eval,
                };
                *slot = v.into();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_o == 0 || self.h_p == 0 {
            return Err(bad("h_o and h_p must be positive"));
        }
        if self.h_a == 0 || self.h_a > self.h_p {
            return Err(bad(format!("h_a = {} must lie in 1..=h_p ({})", self.h_a, self.h_p)));
        }
        if self.k_max == 0 {
            return Err(bad("k_max must be positive"));
        }
        k_threshold(self.eta, self.k_max).map_err(|e| bad(e.to_string()))?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(bad("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(bad("weight_decay and max_grad_norm must be non-negative"));
        }
        if self.eval.episodes == 0 || self.eval.max_steps == 0 {
            return Err(bad("eval.episodes and eval.max_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval.stop_at) {
            return Err(bad("eval.stop_at must lie in [0, 1]"));
        }
        if self.latent == Latent::Encoded && !self.variant.is_hpga() {
            return Err(bad("encoded latents need a hybrid variant"));
        }
        let m = &self.model;
        self.pgatr().validate().map_err(|e| bad(e.to_string()))?;
        if self.variant.uses_unet() {
            if m.unet_dims.is_empty() || m.unet_kernel % 2 == 0 || m.unet_groups == 0 || m.time_dim == 0 {
                return Err(bad("U-Net needs widths, an odd kernel, groups and a time dimension"));
            }
            if m.unet_dims.iter().any(|d| d % m.unet_groups != 0) {
                return Err(bad("U-Net widths must be multiples of unet_groups"));
            }
            if self.h_p % (1 << (m.unet_dims.len() - 1)) != 0 {
                return Err(bad(format!("h_p = {} not divisible by the U-Net downsampling", self.h_p)));
            }
        } else if m.tf_layers == 0 || m.tf_heads == 0 || m.tf_d_model % m.tf_heads != 0 || m.tf_mlp_ratio == 0 {
            return Err(bad("transformer needs layers, heads dividing d_model and an MLP ratio"));
        }
        Ok(())
    }

    pub fn spec(&self) -> TaskSpec {
        TaskSpec { max_steps: self.eval.max_steps, ..self.task.spec() }
    }

    pub fn pgatr(&self) -> PgatrConfig {
        PgatrConfig {
            n_blocks: self.model.pgatr_blocks,
            channels: self.model.pgatr_channels,
            n_heads: self.model.pgatr_heads,
        }
    }

    fn backbone(&self) -> BackboneConfig {
        let m = &self.model;
        if self.variant.uses_unet() {
            BackboneConfig::UNet(UNetConfig {
                down_dims: m.unet_dims.clone(),
                kernel: m.unet_kernel,
                n_groups: m.unet_groups,
                time_dim: m.time_dim,
                zero_head: false,
            })
        } else {
            BackboneConfig::Transformer(TransformerConfig {
                d_model: m.tf_d_model,
                n_layers: m.tf_layers,
                n_heads: m.tf_heads,
                mlp_ratio: m.tf_mlp_ratio,
                zero_head: false,
            })
        }
    }

    fn hpga_config(&self) -> HpgaConfig {
        let objects = self.task.spec().objects();
        HpgaConfig {
            h_o: self.h_o,
            h_p: self.h_p,
            k_o: k_o(objects),
            k_a: K_A,
            encoder: self.pgatr(),
            decoder: self.pgatr(),
            backbone: self.backbone(),
            latent: match self.latent {
                Latent::Actions => LatentMode::Actions,
                Latent::Encoded => LatentMode::Encoded,
            },
        }
    }

    /// Parameter count of the hybrid counterpart, measured by construction.
    pub fn hybrid_param_count(&self) -> Result<usize> {
        let cfg = RunConfig { variant: self.variant.hybrid_counterpart(), ..self.clone() };
        let mut p = ModelParams::new();
        PolicyModel::new(&ModelConfig::Hpga(cfg.hpga_config()), &mut p, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(p.count())
    }

    /// Model for this variant. Baselines get a backbone resized to the
    /// parameter count of the hybrid model with the same backbone kind.
    pub fn model_config(&self) -> Result<ModelConfig> {
        if self.variant.is_hpga() {
            return Ok(ModelConfig::Hpga(self.hpga_config()));
        }
        let objects = self.task.spec().objects();
        let shape = DenoiserShape {
            horizon: self.h_p,
            dim: RAW_ACTION_DIM,
            cond_tokens: self.h_o,
            cond_token_dim: raw_obs_dim(objects),
        };
        let target = self.hybrid_param_count()?;
        let (backbone, _) = self.backbone().matched_to(target, shape)?;
        Ok(ModelConfig::Baseline(BaselineConfig {
            h_o: self.h_o,
            h_p: self.h_p,
            obs_dim: shape.cond_token_dim,
            act_dim: RAW_ACTION_DIM,
            backbone,
        }))
    }

    pub fn adapter(&self) -> Adapter {
        let spec = self.task.spec();
        Adapter {
            repr: if self.variant.is_hpga() { Representation::Multivector } else { Representation::Raw },
            norm: Normalizer::from_bounds(spec.lo, spec.hi),
            h_o: self.h_o,
            h_p: self.h_p,
            objects: spec.objects(),
        }
    }
}
