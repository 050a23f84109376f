//! Forward noising, ε-prediction and staged decoder losses, and DDPM sampling.

mod model;
mod noise;
mod sample;
mod schedule;
mod train;

pub use model::{BaselineConfig, BaselineModel, HpgaConfig, HpgaModel, LatentMode, ModelConfig, PolicyModel};
pub use noise::{
    forward_noise, loss_decoder, loss_encode_denoise, mix_coefficients, noise_slice, recover_slice, recover_z0, total_loss,
    ALPHA_BAR_GUARD,
};
pub use sample::{ddpm_sample, sample_actions};
pub use schedule::{
    k_threshold, make_schedule, NoiseSchedule, ScheduleKind, StagedLossConfig, LINEAR_BETA_END, LINEAR_BETA_START,
    TERMINAL_ALPHA_BAR,
};
pub use train::{loss_graph, train_step, train_step_with, Batch, DiffusionConfig, LossVars, StepOutput};
