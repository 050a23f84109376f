use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{ModelParams, Session, Tensor, Var};
use crate::autodiff::ops;
use crate::denoise::{BackboneConfig, Denoiser, DenoiserShape};
use crate::error::{shape_err, Error, Result};
use crate::nn::{PgatrConfig, PgatrNet};

const MV: usize = 16;

/// What the diffusion process runs on in the hybrid model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentMode {
    /// `z_{a,0} := x_a`.
    #[default]
    Actions,
    /// `z_{a,0}` is produced from `x_a` by a separate P-GATr action encoder.
    Encoded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpgaConfig {
    pub h_o: usize,
    pub h_p: usize,
    /// Observation channels per frame.
    pub k_o: usize,
    /// Action channels per step.
    pub k_a: usize,
    pub encoder: PgatrConfig,
    pub decoder: PgatrConfig,
    pub backbone: BackboneConfig,
    pub latent: LatentMode,
}

impl HpgaConfig {
    pub fn denoiser_shape(&self) -> DenoiserShape {
        DenoiserShape {
            horizon: self.h_p,
            dim: self.k_a * MV,
            cond_tokens: self.h_o,
            cond_token_dim: self.k_o * MV,
        }
    }
}

/// Plain vectors in, plain vectors out; no encoder or decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub h_o: usize,
    pub h_p: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub backbone: BackboneConfig,
}

impl BaselineConfig {
    pub fn denoiser_shape(&self) -> DenoiserShape {
        DenoiserShape {
            horizon: self.h_p,
            dim: self.act_dim,
            cond_tokens: self.h_o,
            cond_token_dim: self.obs_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Hpga(HpgaConfig),
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone)]
pub struct HpgaModel {
    pub cfg: HpgaConfig,
    pub encoder: PgatrNet,
    pub denoiser: Denoiser,
    pub decoder: PgatrNet,
    pub action_encoder: Option<PgatrNet>,
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub cfg: BaselineConfig,
    pub denoiser: Denoiser,
}

/// A conditional ε-prediction policy: hybrid P-GATr model or raw-vector baseline.
#[derive(Debug, Clone)]
pub enum PolicyModel {
    Hpga(HpgaModel),
    Baseline(BaselineModel),
}

impl PolicyModel {
    /// Builds the model, registering parameters in groups
    /// `encoder`, `denoiser`, `decoder` (and `action_encoder`).
    pub fn new(cfg: &ModelConfig, params: &mut ModelParams, rng: &mut impl Rng) -> Result<Self> {
        match cfg {
            ModelConfig::Hpga(c) => {
                if c.h_o == 0 || c.h_p == 0 || c.k_o == 0 || c.k_a == 0 {
                    return Err(Error::Config(format!("empty horizon or channel count in {c:?}")));
                }
                let encoder = PgatrNet::new(params, "encoder", c.encoder.clone(), c.h_o, c.k_o, rng)?;
                let denoiser = Denoiser::new(params, "denoiser", &c.backbone, c.denoiser_shape(), rng)?;
                let decoder = PgatrNet::new(params, "decoder", c.decoder.clone(), c.h_p, c.k_a, rng)?;
                let action_encoder = match c.latent {
                    LatentMode::Actions => None,
                    LatentMode::Encoded => Some(PgatrNet::new(params, "action_encoder", c.encoder.clone(), c.h_p, c.k_a, rng)?),
                };
                Ok(PolicyModel::Hpga(HpgaModel {
                    cfg: c.clone(),
                    encoder,
                    denoiser,
                    decoder,
                    action_encoder,
                }))
            }
            ModelConfig::Baseline(c) => {
                if c.h_o == 0 || c.h_p == 0 || c.obs_dim == 0 || c.act_dim == 0 {
                    return Err(Error::Config(format!("empty horizon or feature size in {c:?}")));
                }
                let denoiser = Denoiser::new(params, "denoiser", &c.backbone, c.denoiser_shape(), rng)?;
                Ok(PolicyModel::Baseline(BaselineModel { cfg: c.clone(), denoiser }))
            }
        }
    }

    pub fn has_decoder(&self) -> bool {
        matches!(self, PolicyModel::Hpga(_))
    }

    pub fn h_p(&self) -> usize {
        match self {
            PolicyModel::Hpga(m) => m.cfg.h_p,
            PolicyModel::Baseline(m) => m.cfg.h_p,
        }
    }

    pub fn h_o(&self) -> usize {
        match self {
            PolicyModel::Hpga(m) => m.cfg.h_o,
            PolicyModel::Baseline(m) => m.cfg.h_o,
        }
    }

    /// Per-sample observation shape, without the batch axis.
    pub fn obs_shape(&self) -> Vec<usize> {
        match self {
            PolicyModel::Hpga(m) => alloc::vec![m.cfg.h_o, m.cfg.k_o, MV],
            PolicyModel::Baseline(m) => alloc::vec![m.cfg.h_o, m.cfg.obs_dim],
        }
    }

    /// Per-sample action shape, without the batch axis.
    pub fn action_shape(&self) -> Vec<usize> {
        match self {
            PolicyModel::Hpga(m) => alloc::vec![m.cfg.h_p, m.cfg.k_a, MV],
            PolicyModel::Baseline(m) => alloc::vec![m.cfg.h_p, m.cfg.act_dim],
        }
    }

    /// Features per latent time step.
    pub fn latent_dim(&self) -> usize {
        match self {
            PolicyModel::Hpga(m) => m.cfg.k_a * MV,
            PolicyModel::Baseline(m) => m.cfg.act_dim,
        }
    }

    pub fn denoiser(&self) -> &Denoiser {
        match self {
            PolicyModel::Hpga(m) => &m.denoiser,
            PolicyModel::Baseline(m) => &m.denoiser,
        }
    }

    pub(crate) fn check_batch(&self, obs: &Tensor, actions: Option<&Tensor>) -> Result<usize> {
        let b = *obs.shape().first().unwrap_or(&0);
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut want = alloc::vec![b];
        want.extend(self.obs_shape());
        if obs.shape() != want.as_slice() {
            return Err(shape_err!("observations {:?}, expected {want:?}", obs.shape()));
        }
        if let Some(a) = actions {
            let mut want = alloc::vec![b];
            want.extend(self.action_shape());
            if a.shape() != want.as_slice() {
                return Err(shape_err!("actions {:?}, expected {want:?}", a.shape()));
            }
        }
        Ok(b)
    }

    /// Conditioning tokens `(B, H_o, token_dim)`.
    pub fn condition(&self, s: &mut Session<'_>, obs: Var) -> Result<Var> {
        let b = s.tape.shape(obs)[0];
        match self {
            PolicyModel::Hpga(m) => {
                let z_o = m.encoder.forward(s, obs)?;
                ops::reshape(&mut s.tape, z_o, &[b, m.cfg.h_o, m.cfg.k_o * MV])
            }
            PolicyModel::Baseline(_) => Ok(obs),
        }
    }

    /// Clean latent `z_{a,0}` as `(B, H_p, latent_dim)`.
    pub fn clean_latent(&self, s: &mut Session<'_>, actions: Var) -> Result<Var> {
        let b = s.tape.shape(actions)[0];
        let flat = [b, self.h_p(), self.latent_dim()];
        match self {
            PolicyModel::Hpga(m) => {
                let z = match &m.action_encoder {
                    Some(enc) => enc.forward(s, actions)?,
                    None => actions,
                };
                ops::reshape(&mut s.tape, z, &flat)
            }
            PolicyModel::Baseline(_) => Ok(actions),
        }
    }

    pub fn predict_noise(&self, s: &mut Session<'_>, z: Var, cond: Var, ks: &[usize]) -> Result<Var> {
        self.denoiser().forward(s, z, cond, ks)
    }

    /// Latent `(B, H_p, latent_dim)` to actions in the per-sample action shape.
    pub fn decode(&self, s: &mut Session<'_>, z: Var) -> Result<Var> {
        match self {
            PolicyModel::Hpga(m) => {
                let b = s.tape.shape(z)[0];
                let z = ops::reshape(&mut s.tape, z, &[b, m.cfg.h_p, m.cfg.k_a, MV])?;
                m.decoder.forward(s, z)
            }
            PolicyModel::Baseline(_) => Ok(z),
        }
    }
}
