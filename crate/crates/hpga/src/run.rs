//! Training, evaluation and the eta sweep.

use std::time::Instant;

use hpga_core::autodiff::{AdamW, ModelParams, Tensor};
use hpga_core::diffusion::{make_schedule, train_step, Batch, DiffusionConfig, NoiseSchedule, PolicyModel};
use hpga_core::envs::{episode_seeds, TaskSpec};
use hpga_core::policy::{rollout_batch, windows, ActionFrame, Adapter, DiffusionPolicy, Episode, ObservationFrame};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{CsvLog, EpochRow, EvalRow};

/// All training windows of a dataset as dense rows.
#[derive(Debug, Clone)]
pub struct TrainData {
    obs: Vec<f64>,
    act: Vec<f64>,
    obs_shape: Vec<usize>,
    act_shape: Vec<usize>,
    len: usize,
}

impl TrainData {
    pub fn new(adapter: &Adapter, episodes: &[Episode]) -> Result<Self> {
        let mut obs = Vec::new();
        let mut act = Vec::new();
        let mut len = 0;
        for ep in episodes {
            let ws = windows(ep, adapter.h_o, adapter.h_p);
            let o: Vec<&[ObservationFrame]> = ws.iter().map(|w| w.0.as_slice()).collect();
            let a: Vec<&[ActionFrame]> = ws.iter().map(|w| w.1.as_slice()).collect();
            if o.is_empty() {
                continue;
            }
            obs.extend_from_slice(adapter.obs_tensor(&o)?.data());
            act.extend_from_slice(adapter.action_tensor(&a)?.data());
            len += ws.len();
        }
        if len == 0 {
            return Err(Error::Config("dataset has no training windows".into()));
        }
        Ok(Self { obs, act, obs_shape: adapter.obs_shape(), act_shape: adapter.action_shape(), len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        let gather = |src: &[f64], shape: &[usize]| {
            let w: usize = shape.iter().product();
            let mut data = Vec::with_capacity(rows.len() * w);
            for &r in rows {
                data.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
            let mut full = vec![rows.len()];
            full.extend_from_slice(shape);
            Tensor::new(&full, data)
        };
        Batch { obs: gather(&self.obs, &self.obs_shape), actions: gather(&self.act, &self.act_shape) }
    }
}

/// Checks that a dataset was recorded for the configured task.
pub fn check_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    if ds.spec.task != cfg.task.kind() {
        return Err(Error::Config(format!(
            "dataset task `{}` but config task `{}`",
            ds.header.task,
            cfg.task.kind().name()
        )));
    }
    Ok(())
}

/// A model with its parameters, schedule and optimizer.
pub struct Run {
    pub cfg: RunConfig,
    pub model: PolicyModel,
    pub params: ModelParams,
    pub schedule: NoiseSchedule,
    pub diffusion: DiffusionConfig,
    pub adapter: Adapter,
    pub epochs_done: usize,
    opt: AdamW,
    rng: ChaCha8Rng,
}

impl Run {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seeds.train);
        let mut params = ModelParams::new();
        let model = PolicyModel::new(&cfg.model_config()?, &mut params, &mut init)?;
        let mut diffusion = DiffusionConfig::new(cfg.eta, cfg.k_max)?;
        diffusion.detach_decoder_input = cfg.detach_z0;
        diffusion.clip_z0 = cfg.clip_z0;
        let mut opt = AdamW::new(cfg.lr);
        opt.weight_decay = cfg.weight_decay;
        opt.max_grad_norm = (cfg.max_grad_norm > 0.0).then_some(cfg.max_grad_norm);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.train);
        rng.set_stream(1);
        Ok(Self {
            cfg: cfg.clone(),
            model,
            params,
            schedule: make_schedule(cfg.k_max, cfg.schedule.kind())?,
            diffusion,
            adapter: cfg.adapter(),
            epochs_done: 0,
            opt,
            rng,
        })
    }

    /// Rebuilds the model described by the checkpoint's config and loads its weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut run = Self::new(&ck.config)?;
        ck.load_into(&mut run.params).map_err(Error::Config)?;
        run.epochs_done = ck.epochs as usize;
        Ok(run)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params, &self.cfg, self.epochs_done as u64)
    }

    /// One shuffled pass over the data. Losses are averaged over samples.
    pub fn train_epoch(&mut self, data: &TrainData) -> Result<(f64, f64, f64)> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut ed, mut dec, mut tot) = (0.0, 0.0, 0.0);
        for rows in order.chunks(self.cfg.batch_size) {
            let batch = data.batch(rows);
            let out = train_step(&self.model, &self.params, &batch, &self.schedule, &self.diffusion, &mut self.rng)?;
            if !out.l_total.is_finite() {
                return Err(Error::Config(format!("non-finite loss at epoch {}", self.epochs_done + 1)));
            }
            self.params.zero_grad();
            self.params.accumulate_grads(&out.grads);
            self.opt.step(&mut self.params);
            let w = rows.len() as f64;
            ed += out.l_ed * w;
            dec += out.l_dec * w;
            tot += out.l_total * w;
        }
        self.epochs_done += 1;
        let n = data.len() as f64;
        Ok((ed / n, dec / n, tot / n))
    }

    /// Success rate over `episodes` closed-loop rollouts.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<f64> {
        let spec: TaskSpec = self.cfg.spec();
        let seeds = episode_seeds(seed, episodes);
        let mut policy = DiffusionPolicy::new(&self.model, &self.params, &self.schedule, self.adapter, seed)?;
        policy.clip = self.cfg.clip_z0;
        let res = rollout_batch(&mut policy, &spec, &seeds, self.cfg.eval.max_steps, self.cfg.h_a)?;
        Ok(res.iter().filter(|r| r.success).count() as f64 / episodes as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRow>,
    /// `(epochs trained, success rate)` for every evaluation.
    pub evals: Vec<(usize, f64)>,
}

impl TrainReport {
    /// First evaluated epoch count whose success reaches `rate`.
    pub fn epochs_to(&self, rate: f64) -> Option<usize> {
        self.evals.iter().find(|(_, s)| *s >= rate).map(|(e, _)| *e)
    }

    pub fn final_success(&self) -> Option<f64> {
        self.evals.last().map(|(_, s)| *s)
    }
}

/// Trains for `cfg.epochs` epochs, evaluating every `cfg.eval.every` epochs
/// and once at the end. Stops early once `cfg.eval.stop_at` is reached.
pub fn train(
    cfg: &RunConfig,
    data: &TrainData,
    mut log: Option<&mut CsvLog>,
    mut on_epoch: impl FnMut(&EpochRow, Option<f64>),
) -> Result<(Run, TrainReport)> {
    let mut run = Run::new(cfg)?;
    let mut report = TrainReport::default();
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let (l_ed, l_dec, l_total) = run.train_epoch(data)?;
        let row = EpochRow {
            epoch,
            l_ed,
            l_dec,
            l_total,
            wall_s: if cfg.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        if let Some(log) = log.as_deref_mut() {
            log.row(&row)?;
        }
        let due = (cfg.eval.every > 0 && epoch % cfg.eval.every == 0) || epoch == cfg.epochs;
        let success = if due {
            let s = run.evaluate(cfg.eval.episodes, cfg.seeds.eval)?;
            report.evals.push((epoch, s));
            Some(s)
        } else {
            None
        };
        on_epoch(&row, success);
        report.epochs.push(row);
        if cfg.eval.stop_at > 0.0 && success.is_some_and(|s| s >= cfg.eval.stop_at) {
            break;
        }
    }
    Ok((run, report))
}

/// Trains `trials` models per eta; one row per (eta, trial) with the final success.
pub fn ablate_eta(
    cfg: &RunConfig,
    data: &TrainData,
    grid: &[f64],
    trials: usize,
    mut on_row: impl FnMut(&EvalRow) -> Result<()>,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for &eta in grid {
        for trial in 0..trials {
            let mut c = cfg.clone();
            c.eta = eta;
            c.seeds.train = cfg.seeds.train.wrapping_add(trial as u64);
            c.validate()?;
            let (run, report) = train(&c, data, None, |_, _| {})?;
            let row = EvalRow {
                variant: c.variant.name().to_string(),
                eta,
                trial,
                success_rate: report.final_success().unwrap_or(0.0),
                epochs_trained: run.epochs_done,
            };
            on_row(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}
