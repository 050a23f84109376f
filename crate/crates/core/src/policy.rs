//! Observation/action frames, multivector packing, and receding-horizon execution.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{ModelParams, Tensor};
use crate::diffusion::{sample_actions, NoiseSchedule, PolicyModel};
use crate::envs::{check_success, env_reset, env_step, observe, TaskSpec};
use crate::error::{shape_err, Error, Result};
use crate::mvstack::MvStack;
use crate::pga::convert::{embed_point, embed_quaternion, embed_scalar, extract_point, extract_quaternion};
use crate::pga::{UnitQuaternion, DIM};

/// Action channels: position, orientation, gripper.
pub const K_A: usize = 3;
/// Raw action features: position (3), quaternion (4), gripper (1).
pub const RAW_ACTION_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: [f64; 3],
    pub q: UnitQuaternion,
}

impl Pose {
    pub fn new(p: [f64; 3], q: UnitQuaternion) -> Self {
        Self { p, q }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub p_ee: [f64; 3],
    pub q_ee: UnitQuaternion,
    /// 1 open, 0 closed.
    pub gripper: f64,
    pub objects: Vec<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionFrame {
    pub p: [f64; 3],
    pub q: UnitQuaternion,
    pub g: f64,
}

impl ActionFrame {
    /// Clamps the gripper command into `[0, 1]`.
    pub fn new(p: [f64; 3], q: UnitQuaternion, g: f64) -> Self {
        Self { p, q, g: g.clamp(0.0, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeMeta {
    pub task: String,
    pub seed: u64,
    pub success: bool,
}

/// Observations and the actions taken after each, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub obs: Vec<ObservationFrame>,
    pub act: Vec<ActionFrame>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Observation channels per frame for `objects` tracked poses.
pub fn k_o(objects: usize) -> usize {
    3 + 2 * objects
}

/// Raw observation features per frame.
pub fn raw_obs_dim(objects: usize) -> usize {
    8 + 7 * objects
}

fn checked_quat(q: &UnitQuaternion) -> Result<UnitQuaternion> {
    UnitQuaternion::new(q.w, q.x, q.y, q.z)
}

/// `(H_o, 3 + 2J)` stack: `[point, quaternion, gripper]` then `[point, quaternion]` per object.
pub fn pack_observation(history: &[ObservationFrame], h_o: usize) -> Result<MvStack> {
    if history.len() != h_o || h_o == 0 {
        return Err(shape_err!("observation history has {} frames, expected {h_o}", history.len()));
    }
    let j = history[0].objects.len();
    let ko = k_o(j);
    let mut out = MvStack::zeros(h_o, ko);
    for (t, f) in history.iter().enumerate() {
        if f.objects.len() != j {
            return Err(shape_err!("frame {t} has {} objects, expected {j}", f.objects.len()));
        }
        out.set(t, 0, &embed_point(f.p_ee));
        out.set(t, 1, &embed_quaternion(checked_quat(&f.q_ee)?));
        out.set(t, 2, &embed_scalar(f.gripper));
        for (i, o) in f.objects.iter().enumerate() {
            out.set(t, 3 + 2 * i, &embed_point(o.p));
            out.set(t, 4 + 2 * i, &embed_quaternion(checked_quat(&o.q)?));
        }
    }
    Ok(out)
}

/// `(H_p, 3)` stack of `[point, quaternion, gripper]`.
pub fn pack_actions(actions: &[ActionFrame]) -> Result<MvStack> {
    if actions.is_empty() {
        return Err(shape_err!("no actions to pack"));
    }
    let mut out = MvStack::zeros(actions.len(), K_A);
    for (t, a) in actions.iter().enumerate() {
        out.set(t, 0, &embed_point(a.p));
        out.set(t, 1, &embed_quaternion(checked_quat(&a.q)?));
        out.set(t, 2, &embed_scalar(a.g));
    }
    Ok(out)
}

/// Inverse of [`pack_actions`]; the orientation is the normalised even part
/// and the gripper is clamped to `[0, 1]`.
pub fn unpack_actions(x_a: &MvStack) -> Result<Vec<ActionFrame>> {
    if x_a.channels() != K_A {
        return Err(shape_err!("action stack has {} channels, expected {K_A}", x_a.channels()));
    }
    (0..x_a.time())
        .map(|t| {
            Ok(ActionFrame::new(
                extract_point(&x_a.get(t, 0))?,
                extract_quaternion(&x_a.get(t, 1))?,
                x_a.get(t, 2)[0],
            ))
        })
        .collect()
}

/// Maps workspace positions into roughly `[-1, 1]`: `(p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalizer {
    pub const IDENTITY: Self = Self {
        center: [0.0; 3],
        scale: 1.0,
    };

    /// Centre of the box and half its largest side.
    pub fn from_bounds(lo: [f64; 3], hi: [f64; 3]) -> Self {
        let center = [0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i]));
        let scale = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).fold(0.0, f64::max);
        Self { center, scale }
    }

    pub fn fwd(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| (p[i] - self.center[i]) / self.scale)
    }

    pub fn inv(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| p[i] * self.scale + self.center[i])
    }

    pub fn obs(&self, f: &ObservationFrame) -> ObservationFrame {
        ObservationFrame {
            p_ee: self.fwd(f.p_ee),
            q_ee: f.q_ee,
            gripper: f.gripper,
            objects: f.objects.iter().map(|o| Pose::new(self.fwd(o.p), o.q)).collect(),
        }
    }

    pub fn action(&self, a: &ActionFrame) -> ActionFrame {
        ActionFrame { p: self.fwd(a.p), ..*a }
    }

    pub fn action_inv(&self, a: &ActionFrame) -> ActionFrame {
        ActionFrame { p: self.inv(a.p), ..*a }
    }
}

/// How frames are turned into model tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Multivector stacks for the hybrid model.
    Multivector,
    /// Concatenated position, quaternion and gripper features for baselines.
    Raw,
}

/// Tensor conversion for one task schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adapter {
    pub repr: Representation,
    pub norm: Normalizer,
    pub h_o: usize,
    pub h_p: usize,
    pub objects: usize,
}

fn raw_obs(f: &ObservationFrame, out: &mut Vec<f64>) {
    out.extend_from_slice(&f.p_ee);
    out.extend_from_slice(&f.q_ee.to_array());
    out.push(f.gripper);
    for o in &f.objects {
        out.extend_from_slice(&o.p);
        out.extend_from_slice(&o.q.to_array());
    }
}

impl Adapter {
    pub fn obs_shape(&self) -> Vec<usize> {
        match self.repr {
            Representation::Multivector => vec![self.h_o, k_o(self.objects), DIM],
            Representation::Raw => vec![self.h_o, raw_obs_dim(self.objects)],
        }
    }

    pub fn action_shape(&self) -> Vec<usize> {
        match self.repr {
            Representation::Multivector => vec![self.h_p, K_A, DIM],
            Representation::Raw => vec![self.h_p, RAW_ACTION_DIM],
        }
    }

    /// Batch of observation histories (each exactly `h_o` frames).
    pub fn obs_tensor(&self, histories: &[&[ObservationFrame]]) -> Result<Tensor> {
        let mut data = Vec::new();
        for h in histories {
            if h.len() != self.h_o {
                return Err(shape_err!("history has {} frames, expected {}", h.len(), self.h_o));
            }
            if h.iter().any(|f| f.objects.len() != self.objects) {
                return Err(shape_err!("frame object count differs from {}", self.objects));
            }
            let normed: Vec<ObservationFrame> = h.iter().map(|f| self.norm.obs(f)).collect();
            match self.repr {
                Representation::Multivector => data.extend(pack_observation(&normed, self.h_o)?.into_data()),
                Representation::Raw => normed.iter().for_each(|f| raw_obs(f, &mut data)),
            }
        }
        let mut shape = vec![histories.len()];
        shape.extend(self.obs_shape());
        Ok(Tensor::new(&shape, data))
    }

    /// Batch of action sequences (each exactly `h_p` frames).
    pub fn action_tensor(&self, seqs: &[&[ActionFrame]]) -> Result<Tensor> {
        let mut data = Vec::new();
        for s in seqs {
            if s.len() != self.h_p {
                return Err(shape_err!("action sequence has {} frames, expected {}", s.len(), self.h_p));
            }
            let normed: Vec<ActionFrame> = s.iter().map(|a| self.norm.action(a)).collect();
            match self.repr {
                Representation::Multivector => data.extend(pack_actions(&normed)?.into_data()),
                Representation::Raw => {
                    for a in &normed {
                        data.extend_from_slice(&a.p);
                        data.extend_from_slice(&a.q.to_array());
                        data.push(a.g);
                    }
                }
            }
        }
        let mut shape = vec![seqs.len()];
        shape.extend(self.action_shape());
        Ok(Tensor::new(&shape, data))
    }

    /// Model output back to world-frame actions, one sequence per batch row.
    pub fn actions_from_tensor(&self, t: &Tensor) -> Result<Vec<Vec<ActionFrame>>> {
        let per: usize = self.action_shape().iter().product();
        if t.len() % per != 0 || t.is_empty() {
            return Err(shape_err!("action tensor {:?} does not match {:?}", t.shape(), self.action_shape()));
        }
        t.data()
            .chunks(per)
            .map(|row| {
                let frames = match self.repr {
                    Representation::Multivector => unpack_actions(&MvStack::new(self.h_p, K_A, row.to_vec())?)?,
                    Representation::Raw => row
                        .chunks(RAW_ACTION_DIM)
                        .map(|r| {
                            Ok(ActionFrame::new(
                                [r[0], r[1], r[2]],
                                UnitQuaternion::normalize(r[3], r[4], r[5], r[6])?,
                                r[7],
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                Ok(frames.iter().map(|a| self.norm.action_inv(a)).collect())
            })
            .collect()
    }
}

/// Training windows `(H_o observations ending at t, H_p actions from t)` for
/// every step `t`, padding with the first observation / last action.
pub fn windows(ep: &Episode, h_o: usize, h_p: usize) -> Vec<(Vec<ObservationFrame>, Vec<ActionFrame>)> {
    let n = ep.len().min(ep.act.len());
    (0..n)
        .map(|t| {
            let obs = (0..h_o).map(|i| ep.obs[(t + i + 1).saturating_sub(h_o)].clone()).collect();
            let act = (0..h_p).map(|i| ep.act[(t + i).min(n - 1)]).collect();
            (obs, act)
        })
        .collect()
}

/// The last `h_o` frames, repeating the earliest when fewer exist.
pub fn history(frames: &[ObservationFrame], h_o: usize) -> Vec<ObservationFrame> {
    let n = frames.len();
    (0..h_o).map(|i| frames[(n + i).saturating_sub(h_o).min(n - 1)].clone()).collect()
}

/// Maps observation histories to action sequences, one per history.
pub trait Policy {
    fn h_o(&self) -> usize;
    fn act(&mut self, histories: &[&[ObservationFrame]]) -> Result<Vec<Vec<ActionFrame>>>;
}

/// A trained (or random) diffusion model behind an [`Adapter`].
pub struct DiffusionPolicy<'a> {
    pub model: &'a PolicyModel,
    pub params: &'a ModelParams,
    pub schedule: &'a NoiseSchedule,
    pub adapter: Adapter,
    pub clip: bool,
    /// Each call samples with `seed + calls`.
    pub seed: u64,
    calls: u64,
}

impl<'a> DiffusionPolicy<'a> {
    pub fn new(model: &'a PolicyModel, params: &'a ModelParams, schedule: &'a NoiseSchedule, adapter: Adapter, seed: u64) -> Result<Self> {
        if model.obs_shape() != adapter.obs_shape() || model.action_shape() != adapter.action_shape() {
            return Err(Error::Config(alloc::format!(
                "model shapes {:?}/{:?} do not match adapter {:?}/{:?}",
                model.obs_shape(),
                model.action_shape(),
                adapter.obs_shape(),
                adapter.action_shape()
            )));
        }
        Ok(Self {
            model,
            params,
            schedule,
            adapter,
            clip: true,
            seed,
            calls: 0,
        })
    }
}

impl Policy for DiffusionPolicy<'_> {
    fn h_o(&self) -> usize {
        self.adapter.h_o
    }

    fn act(&mut self, histories: &[&[ObservationFrame]]) -> Result<Vec<Vec<ActionFrame>>> {
        let obs = self.adapter.obs_tensor(histories)?;
        let seed = self.seed.wrapping_add(self.calls);
        self.calls += 1;
        let out = sample_actions(self.model, self.params, &obs, self.schedule, self.clip, seed)?;
        self.adapter.actions_from_tensor(&out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub success: bool,
    pub steps: usize,
    pub trace: Episode,
}

/// Runs one episode per seed in lockstep, replanning every `h_a` steps with
/// one batched policy call.
pub fn rollout_batch(policy: &mut dyn Policy, spec: &TaskSpec, seeds: &[u64], max_steps: usize, h_a: usize) -> Result<Vec<RolloutResult>> {
    if h_a == 0 {
        return Err(Error::Config("H_a must be at least 1".into()));
    }
    let h_o = policy.h_o();
    let mut states: Vec<_> = seeds.iter().map(|&s| env_reset(spec, s)).collect();
    let mut traces: Vec<Episode> = seeds
        .iter()
        .map(|&s| Episode {
            obs: Vec::new(),
            act: Vec::new(),
            meta: EpisodeMeta {
                task: String::from(spec.task.name()),
                seed: s,
                success: false,
            },
        })
        .collect();
    let mut seen: Vec<Vec<ObservationFrame>> = states.iter().map(|s| vec![observe(s)]).collect();
    let mut done: Vec<bool> = states.iter().map(|s| check_success(s, spec)).collect();
    let mut steps = vec![0usize; seeds.len()];
    loop {
        let live: Vec<usize> = (0..seeds.len()).filter(|&i| !done[i] && steps[i] < max_steps).collect();
        if live.is_empty() {
            break;
        }
        let hist: Vec<Vec<ObservationFrame>> = live.iter().map(|&i| history(&seen[i], h_o)).collect();
        let refs: Vec<&[ObservationFrame]> = hist.iter().map(Vec::as_slice).collect();
        let plans = policy.act(&refs)?;
        if plans.len() != live.len() {
            return Err(shape_err!("policy returned {} plans for {} histories", plans.len(), live.len()));
        }
        for (&i, plan) in live.iter().zip(&plans) {
            if plan.len() < h_a {
                return Err(shape_err!("plan of {} actions, H_a = {h_a}", plan.len()));
            }
            for a in &plan[..h_a] {
                if done[i] || steps[i] >= max_steps {
                    break;
                }
                traces[i].obs.push(observe(&states[i]));
                traces[i].act.push(*a);
                states[i] = env_step(&states[i], spec, a);
                steps[i] += 1;
                seen[i].push(observe(&states[i]));
                done[i] = check_success(&states[i], spec);
            }
        }
    }
    Ok((0..seeds.len())
        .map(|i| {
            let mut trace = core::mem::replace(
                &mut traces[i],
                Episode {
                    obs: Vec::new(),
                    act: Vec::new(),
                    meta: EpisodeMeta {
                        task: String::new(),
                        seed: 0,
                        success: false,
                    },
                },
            );
            trace.meta.success = done[i];
            RolloutResult {
                success: done[i],
                steps: steps[i],
                trace,
            }
        })
        .collect())
}

/// Single-episode [`rollout_batch`].
pub fn rollout(policy: &mut dyn Policy, spec: &TaskSpec, seed: u64, max_steps: usize, h_a: usize) -> Result<RolloutResult> {
    Ok(rollout_batch(policy, spec, &[seed], max_steps, h_a)?.remove(0))
}
