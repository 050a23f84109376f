//! Demonstration files: JSON Lines, one header record then one episode per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use hpga_core::envs::{generate_episodes, replay, TaskKind, TaskSpec};
use hpga_core::pga::UnitQuaternion;
use hpga_core::policy::{ActionFrame, Episode, EpisodeMeta, ObservationFrame, Pose};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub eps_p: f64,
    pub eps_q: f64,
    pub lift_height: f64,
    pub grasp_radius: f64,
    pub step_cap: f64,
    pub rot_cap: f64,
    pub max_steps: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: u32,
    pub task: String,
    pub seed: u64,
    pub episodes: usize,
    /// Expert steps recorded after success.
    pub hold: usize,
    pub spec: SpecRecord,
}

impl Header {
    pub fn task_spec(&self) -> Result<TaskSpec> {
        let s = &self.spec;
        let spec = TaskSpec {
            task: TaskKind::parse(&self.task)?,
            eps_p: s.eps_p,
            eps_q: s.eps_q,
            lift_height: s.lift_height,
            grasp_radius: s.grasp_radius,
            step_cap: s.step_cap,
            rot_cap: s.rot_cap,
            max_steps: s.max_steps,
            lo: s.lo,
            hi: s.hi,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoseRecord {
    p: [f64; 3],
    q: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ObsRecord {
    p: [f64; 3],
    q: [f64; 4],
    g: f64,
    objects: Vec<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActRecord {
    p: [f64; 3],
    q: [f64; 4],
    g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeRecord {
    seed: u64,
    success: bool,
    obs: Vec<ObsRecord>,
    act: Vec<ActRecord>,
}

/// A loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Header,
    pub spec: TaskSpec,
    pub episodes: Vec<Episode>,
}

fn spec_record(spec: &TaskSpec) -> SpecRecord {
    SpecRecord {
        eps_p: spec.eps_p,
        eps_q: spec.eps_q,
        lift_height: spec.lift_height,
        grasp_radius: spec.grasp_radius,
        step_cap: spec.step_cap,
        rot_cap: spec.rot_cap,
        max_steps: spec.max_steps,
        lo: spec.lo,
        hi: spec.hi,
    }
}

fn quat(q: [f64; 4]) -> std::result::Result<UnitQuaternion, String> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(format!("quaternion {q:?} has norm {n}"));
    }
    if q[0] < 0.0 {
        return Err(format!("quaternion {q:?} is not canonical (w < 0)"));
    }
    Ok(UnitQuaternion { w: q[0], x: q[1], y: q[2], z: q[3] })
}

fn to_record(ep: &Episode) -> EpisodeRecord {
    let pose = |p: &Pose| PoseRecord { p: p.p, q: p.q.to_array() };
    EpisodeRecord {
        seed: ep.meta.seed,
        success: ep.meta.success,
        obs: ep
            .obs
            .iter()
            .map(|f| ObsRecord {
                p: f.p_ee,
                q: f.q_ee.to_array(),
                g: f.gripper,
                objects: f.objects.iter().map(pose).collect(),
            })
            .collect(),
        act: ep.act.iter().map(|a| ActRecord { p: a.p, q: a.q.to_array(), g: a.g }).collect(),
    }
}

fn from_record(r: EpisodeRecord, task: &str, objects: usize) -> std::result::Result<Episode, String> {
    if r.obs.len() != r.act.len() {
        return Err(format!("{} observations but {} actions", r.obs.len(), r.act.len()));
    }
    let mut obs = Vec::with_capacity(r.obs.len());
    for o in r.obs {
        if o.objects.len() != objects {
            return Err(format!("{} object poses, task has {objects}", o.objects.len()));
        }
        if !(0.0..=1.0).contains(&o.g) {
            return Err(format!("gripper {} outside [0, 1]", o.g));
        }
        let objs = o
            .objects
            .into_iter()
            .map(|p| Ok(Pose::new(p.p, quat(p.q)?)))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        obs.push(ObservationFrame { p_ee: o.p, q_ee: quat(o.q)?, gripper: o.g, objects: objs });
    }
    let mut act = Vec::with_capacity(r.act.len());
    for a in r.act {
        if !(0.0..=1.0).contains(&a.g) {
            return Err(format!("gripper command {} outside [0, 1]", a.g));
        }
        act.push(ActionFrame::new(a.p, quat(a.q)?, a.g));
    }
    Ok(Episode {
        obs,
        act,
        meta: EpisodeMeta { task: task.to_string(), seed: r.seed, success: r.success },
    })
}

/// Writes a header line and one line per episode.
pub fn write_dataset(path: &Path, spec: &TaskSpec, seed: u64, hold: usize, episodes: &[Episode]) -> Result<()> {
    let header = Header {
        schema: SCHEMA,
        task: spec.task.name().to_string(),
        seed,
        episodes: episodes.len(),
        hold,
        spec: spec_record(spec),
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let line = |w: &mut BufWriter<File>, s: String| -> Result<()> { writeln!(w, "{s}").map_err(io_err(path)) };
    line(&mut w, serde_json::to_string(&header).expect("header serializes"))?;
    for ep in episodes {
        line(&mut w, serde_json::to_string(&to_record(ep)).expect("episode serializes"))?;
    }
    w.flush().map_err(io_err(path))
}

/// Generates `n` expert episodes and writes them to `path`.
pub fn generate_dataset(spec: &TaskSpec, n: usize, seed: u64, hold: usize, path: &Path) -> Result<Vec<Episode>> {
    let episodes = generate_episodes(spec, n, seed, hold)?;
    write_dataset(path, spec, seed, hold, &episodes)?;
    Ok(episodes)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?
        .map_err(io_err(path))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| format_err(path, format!("header: {e}")))?;
    if header.schema != SCHEMA {
        return Err(format_err(path, format!("schema {} not supported", header.schema)));
    }
    let spec = header.task_spec().map_err(|e| format_err(path, e.to_string()))?;
    let mut episodes = Vec::with_capacity(header.episodes);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord =
            serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 2)))?;
        let ep = from_record(rec, &header.task, spec.objects()).map_err(|e| format_err(path, format!("line {}: {e}", i + 2)))?;
        episodes.push(ep);
    }
    if episodes.len() != header.episodes {
        return Err(format_err(
            path,
            format!("header announces {} episodes, found {}", header.episodes, episodes.len()),
        ));
    }
    Ok(Dataset { header, spec, episodes })
}

/// Indices of episodes that do not replay to success.
pub fn failed_replays(ds: &Dataset) -> Vec<usize> {
    ds.episodes
        .iter()
        .enumerate()
        .filter(|(_, ep)| !replay(&ds.spec, ep))
        .map(|(i, _)| i)
        .collect()
}
