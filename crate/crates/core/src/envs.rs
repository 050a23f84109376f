//! Kinematic toy manipulation tasks and their scripted experts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pga::UnitQuaternion;
use crate::policy::{ActionFrame, Episode, EpisodeMeta, ObservationFrame, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Move the end-effector onto an observed target pose.
    PointReach,
    /// Grasp a cube resting on the table and raise it.
    LiftToy,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PointReach => "point_reach",
            TaskKind::LiftToy => "lift_toy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "point_reach" => Ok(TaskKind::PointReach),
            "lift_toy" => Ok(TaskKind::LiftToy),
            other => Err(Error::Config(alloc::format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// Position tolerance (m).
    pub eps_p: f64,
    /// Orientation tolerance (rad).
    pub eps_q: f64,
    /// Lift height (m).
    pub lift_height: f64,
    pub grasp_radius: f64,
    /// Maximum end-effector translation per step (m).
    pub step_cap: f64,
    /// Maximum end-effector rotation per step (rad).
    pub rot_cap: f64,
    pub max_steps: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl TaskSpec {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            eps_p: 0.02,
            eps_q: 0.2,
            lift_height: 0.1,
            grasp_radius: 0.03,
            step_cap: 0.02,
            rot_cap: 0.15,
            max_steps: 200,
            lo: [-0.3, -0.3, 0.0],
            hi: [0.3, 0.3, 0.4],
        }
    }

    pub fn point_reach() -> Self {
        Self::new(TaskKind::PointReach)
    }

    pub fn lift_toy() -> Self {
        Self::new(TaskKind::LiftToy)
    }

    /// Tracked object poses per observation.
    pub fn objects(&self) -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.eps_p, self.eps_q, self.lift_height, self.grasp_radius, self.step_cap, self.rot_cap];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("task tolerances and caps must be positive".into()));
        }
        if (0..3).any(|i| !(self.hi[i] > self.lo[i])) {
            return Err(Error::Config("degenerate workspace bounds".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.task == TaskKind::LiftToy && self.lift_height + 0.05 > self.hi[2] {
            return Err(Error::Config("lift height above workspace".into()));
        }
        Ok(())
    }

    fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| p[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub ee: Pose,
    pub gripper: f64,
    /// Observed poses: the target marker (point_reach) or the cube (lift_toy).
    pub objects: Vec<Pose>,
    pub target: Pose,
    pub step: usize,
    /// Cube pose in the end-effector frame while grasped.
    pub attached: Option<Pose>,
}

fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = core::f64::consts::TAU;
    let (a, b) = (libm::sqrt(1.0 - u1), libm::sqrt(u1));
    UnitQuaternion::normalize(
        b * libm::cos(tau * u3),
        a * libm::sin(tau * u2),
        a * libm::cos(tau * u2),
        b * libm::sin(tau * u3),
    )
    .expect("unit norm by construction")
    .canonical()
}

fn uniform_in(rng: &mut impl Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| rng.gen_range(lo[i]..hi[i]))
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Moves from `from` toward `to` by at most `cap`.
fn toward(from: [f64; 3], to: [f64; 3], cap: f64) -> [f64; 3] {
    let d = distance(from, to);
    if d <= cap {
        return to;
    }
    let s = cap / d;
    let v = sub(to, from);
    [from[0] + s * v[0], from[1] + s * v[1], from[2] + s * v[2]]
}

fn turn(from: UnitQuaternion, to: UnitQuaternion, cap: f64) -> UnitQuaternion {
    let angle = from.angle_to(to);
    if angle <= cap {
        return to.canonical();
    }
    from.slerp(to, cap / angle).canonical()
}

/// Random initial state inside the workspace; deterministic in `seed`.
pub fn env_reset(spec: &TaskSpec, seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 0.05;
    let inner_lo = [spec.lo[0] + m, spec.lo[1] + m, spec.lo[2] + m];
    let inner_hi = [spec.hi[0] - m, spec.hi[1] - m, spec.hi[2] - m];
    let ee = Pose::new(uniform_in(&mut rng, inner_lo, inner_hi), random_quat(&mut rng));
    match spec.task {
        TaskKind::PointReach => {
            let target = Pose::new(uniform_in(&mut rng, inner_lo, inner_hi), random_quat(&mut rng));
            EnvState {
                ee,
                gripper: 1.0,
                objects: vec![target],
                target,
                step: 0,
                attached: None,
            }
        }
        TaskKind::LiftToy => {
            let mut p = uniform_in(&mut rng, inner_lo, inner_hi);
            p[2] = spec.lo[2];
            let yaw = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            let cube = Pose::new(p, UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], yaw).canonical());
            let mut goal = p;
            goal[2] = spec.lo[2] + spec.lift_height + 0.05;
            EnvState {
                ee,
                gripper: 1.0,
                objects: vec![cube],
                target: Pose::new(goal, cube.q),
                step: 0,
                attached: None,
            }
        }
    }
}

/// One kinematic step toward the commanded pose.
pub fn env_step(state: &EnvState, spec: &TaskSpec, a: &ActionFrame) -> EnvState {
    let mut s = state.clone();
    s.ee.p = toward(state.ee.p, spec.clamp(a.p), spec.step_cap);
    s.ee.q = turn(state.ee.q, a.q, spec.rot_cap);
    s.gripper = a.g.clamp(0.0, 1.0);
    s.step += 1;
    if spec.task == TaskKind::LiftToy {
        if s.gripper >= 0.5 {
            if s.attached.take().is_some() {
                s.objects[0].p[2] = spec.lo[2];
            }
        } else if s.attached.is_none() && distance(s.objects[0].p, s.ee.p) < spec.grasp_radius {
            let inv = s.ee.q.conjugate();
            s.attached = Some(Pose::new(inv.rotate(sub(s.objects[0].p, s.ee.p)), inv.mul(s.objects[0].q).canonical()));
        }
        if let Some(rel) = s.attached {
            s.objects[0] = Pose::new(add(s.ee.p, s.ee.q.rotate(rel.p)), s.ee.q.mul(rel.q).canonical());
        }
    }
    s
}

/// Strict-inequality success test.
pub fn check_success(state: &EnvState, spec: &TaskSpec) -> bool {
    match spec.task {
        TaskKind::PointReach => {
            distance(state.ee.p, state.target.p) < spec.eps_p && state.ee.q.angle_to(state.target.q) < spec.eps_q
        }
        TaskKind::LiftToy => state.objects[0].p[2] - spec.lo[2] > spec.lift_height,
    }
}

pub fn observe(state: &EnvState) -> ObservationFrame {
    ObservationFrame {
        p_ee: state.ee.p,
        q_ee: state.ee.q,
        gripper: state.gripper,
        objects: state.objects.clone(),
    }
}

/// Waypoint one step along the straight line / shortest arc toward the subgoal.
pub fn scripted_expert(state: &EnvState, spec: &TaskSpec) -> ActionFrame {
    let reach = |goal: Pose, g: f64| ActionFrame::new(toward(state.ee.p, goal.p, spec.step_cap), turn(state.ee.q, goal.q, spec.rot_cap), g);
    match spec.task {
        TaskKind::PointReach => reach(state.target, 1.0),
        TaskKind::LiftToy => {
            if state.attached.is_some() {
                return reach(Pose::new(state.target.p, state.ee.q), 0.0);
            }
            let cube = state.objects[0];
            let there = distance(state.ee.p, cube.p) < 0.5 * spec.grasp_radius && state.ee.q.angle_to(cube.q) < 0.5 * spec.eps_q;
            if there {
                ActionFrame::new(state.ee.p, state.ee.q, 0.0)
            } else {
                reach(cube, 1.0)
            }
        }
    }
}

/// Expert demonstration from `env_reset(spec, seed)`: runs until success, then
/// records `hold` more expert steps.
pub fn expert_episode(spec: &TaskSpec, seed: u64, hold: usize) -> Episode {
    let mut s = env_reset(spec, seed);
    let mut ep = Episode {
        obs: Vec::new(),
        act: Vec::new(),
        meta: EpisodeMeta {
            task: String::from(spec.task.name()),
            seed,
            success: false,
        },
    };
    let mut extra = 0;
    while ep.obs.len() < spec.max_steps {
        if check_success(&s, spec) {
            ep.meta.success = true;
            if extra == hold {
                break;
            }
            extra += 1;
        }
        let a = scripted_expert(&s, spec);
        ep.obs.push(observe(&s));
        ep.act.push(a);
        s = env_step(&s, spec, &a);
    }
    ep.meta.success |= check_success(&s, spec);
    ep
}

/// Per-episode reset seeds derived from a dataset seed.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

pub fn generate_episodes(spec: &TaskSpec, n: usize, seed: u64, hold: usize) -> Result<Vec<Episode>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("at least one episode required".into()));
    }
    Ok(episode_seeds(seed, n).into_iter().map(|s| expert_episode(spec, s, hold)).collect())
}

/// Replays the stored actions open-loop from the episode's reset seed.
/// Returns whether success was reached at any step.
pub fn replay(spec: &TaskSpec, ep: &Episode) -> bool {
    let mut s = env_reset(spec, ep.meta.seed);
    let mut ok = check_success(&s, spec);
    for a in &ep.act {
        s = env_step(&s, spec, a);
        ok |= check_success(&s, spec);
    }
    ok
}

/// Rebuilds the environment state an observation was taken from.
pub fn state_from_observation(f: &ObservationFrame, spec: &TaskSpec) -> EnvState {
    let ee = Pose::new(f.p_ee, f.q_ee);
    let obj = f.objects[0];
    match spec.task {
        TaskKind::PointReach => EnvState {
            ee,
            gripper: f.gripper,
            objects: f.objects.clone(),
            target: obj,
            step: 0,
            attached: None,
        },
        TaskKind::LiftToy => {
            let held = f.gripper < 0.5 && distance(obj.p, f.p_ee) < spec.grasp_radius;
            let inv = f.q_ee.conjugate();
            let attached = held.then(|| Pose::new(inv.rotate(sub(obj.p, f.p_ee)), inv.mul(obj.q).canonical()));
            let mut goal = obj.p;
            goal[2] = spec.lo[2] + spec.lift_height + 0.05;
            EnvState {
                ee,
                gripper: f.gripper,
                objects: f.objects.clone(),
                target: Pose::new(goal, obj.q),
                step: 0,
                attached,
            }
        }
    }
}

/// The scripted expert as a closed-loop policy: plans `h_p` steps by
/// simulating itself from the latest observation.
#[derive(Debug, Clone, Copy)]
pub struct ExpertPolicy {
    pub spec: TaskSpec,
    pub h_o: usize,
    pub h_p: usize,
}

impl crate::policy::Policy for ExpertPolicy {
    fn h_o(&self) -> usize {
        self.h_o
    }

    fn act(&mut self, histories: &[&[ObservationFrame]]) -> Result<Vec<Vec<ActionFrame>>> {
        histories
            .iter()
            .map(|h| {
                let last = h.last().ok_or_else(|| Error::Shape("empty history".into()))?;
                let mut s = state_from_observation(last, &self.spec);
                let mut plan = Vec::with_capacity(self.h_p);
                for _ in 0..self.h_p {
                    let a = scripted_expert(&s, &self.spec);
                    plan.push(a);
                    s = env_step(&s, &self.spec, &a);
                }
                Ok(plan)
            })
            .collect()
    }
}
