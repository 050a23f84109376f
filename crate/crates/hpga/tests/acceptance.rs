//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 and 8 are exact or numerical checks and fail the run.
//! Criteria 6 and 7 are training experiments; their lines are reported but
//! never fail the run. `HPGA_ACCEPTANCE=full` runs them at the documented
//! desk-scale protocol (hours on one core); the default `quick` profile runs
//! the same code with one seed, one trial and a small budget.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hpga::bench::{convergence, eta_robustness};
use hpga::config::{RunConfig, Task, Variant};
use hpga::dataset::{failed_replays, generate_dataset, read_dataset};
use hpga::run::TrainData;
use hpga_core::autodiff::{ModelParams, ParamGrads, Tensor};
use hpga_core::denoise::{BackboneConfig, UNetConfig};
use hpga_core::diffusion::{
    forward_noise, k_threshold, make_schedule, recover_z0, train_step_with, Batch, DiffusionConfig,
    HpgaConfig, LatentMode, ModelConfig, PolicyModel, ScheduleKind,
};
use hpga_core::envs::{generate_episodes, TaskSpec};
use hpga_core::gradcheck::{gradcheck, tolerance, REGISTERED};
use hpga_core::nn::equivariance::suite;
use hpga_core::nn::PgatrConfig;
use hpga_core::pga::basis::{BLADE_INDICES, DIM};
use hpga_core::pga::convert::{embed_direction, embed_point, embed_quaternion, embed_scalar};
use hpga_core::pga::{build_cayley_table, extract, EntityKind, Entity, Multivector, UnitQuaternion};
use hpga_core::MvStack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    pass: bool,
    hard: bool,
    detail: String,
}

fn report(n: usize, line: &Line) {
    let verdict = if line.pass { "PASS" } else { "FAIL" };
    let note = if line.hard { "" } else { " [reported]" };
    println!("criterion {n}: {verdict}{note}  {}", line.detail);
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

fn mask(i: usize) -> u8 {
    BLADE_INDICES[i].iter().fold(0, |m, g| m | (1 << g))
}

/// Product of two blades from their generator bitmasks: reordering sign from
/// counting transpositions, metric diag(0, 1, 1, 1) on shared generators.
fn oracle(i: usize, j: usize) -> Option<(usize, i8)> {
    let (a, b) = (mask(i), mask(j));
    if a & b & 1 != 0 {
        return None;
    }
    let mut swaps = 0;
    let mut s = a >> 1;
    while s != 0 {
        swaps += (s & b).count_ones();
        s >>= 1;
    }
    let k = (0..DIM).find(|&k| mask(k) == a ^ b).unwrap();
    Some((k, if swaps % 2 == 0 { 1 } else { -1 }))
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let table = build_cayley_table();
    let mut mismatches = 0;
    for i in 0..DIM {
        for j in 0..DIM {
            let got = table.entry(i, j).map(|b| (b.index, b.sign));
            if got != oracle(i, j) {
                mismatches += 1;
            }
        }
    }
    // Hand-read entries of the 3D PGA Cayley table.
    let spots: [(usize, usize, Option<(usize, i8)>); 10] = [
        (1, 1, None),          // e0 e0 = 0
        (2, 2, Some((0, 1))),  // e1 e1 = 1
        (2, 3, Some((8, 1))),  // e1 e2 = e12
        (3, 2, Some((8, -1))), // e2 e1 = -e12
        (8, 8, Some((0, -1))), // e12 e12 = -1
        (1, 2, Some((5, 1))),  // e0 e1 = e01
        (8, 9, Some((10, -1))), // e12 e13 = -e23
        (14, 14, Some((0, -1))), // e123 e123 = -1
        (9, 3, Some((14, -1))), // e13 e2 = -e123
        (15, 15, None),        // e0123 e0123 = 0
    ];
    let spot_bad = spots
        .iter()
        .filter(|(i, j, want)| table.entry(*i, *j).map(|b| (b.index, b.sign)) != *want)
        .count();
    let t = secs(start.elapsed());
    Line {
        pass: mismatches == 0 && spot_bad == 0 && t < 1.0,
        hard: true,
        detail: format!("{mismatches}/256 oracle mismatches, {spot_bad}/10 spot mismatches, {t:.3}s"),
    }
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Line {
    let start = Instant::now();
    let (a, b, c, d) = (1.5, -2.25, 3.125, 0.5);
    let mut exact = true;
    let expect = |m: Multivector, want: &[(usize, f64)]| {
        (0..DIM).all(|i| {
            let w = want.iter().find(|(k, _)| *k == i).map_or(0.0, |p| p.1);
            m[i].to_bits() == w.to_bits() || (m[i] == 0.0 && w == 0.0)
        })
    };
    exact &= expect(embed_scalar(a), &[(0, a)]);
    exact &= expect(embed_direction([a, b, c]), &[(2, a), (3, b), (4, c)]);
    exact &= expect(embed_point([a, b, c]), &[(11, -c), (12, b), (13, -a), (14, 1.0)]);
    // (w, x, y, z) = (0.5, 0.5, -0.5, 0.5) is exactly unit.
    let q = UnitQuaternion::new(d, d, -d, d).unwrap();
    exact &= expect(embed_quaternion(q), &[(0, d), (8, -d), (9, -d), (10, -d)]);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        if let Ok(Entity::Point(back)) = extract(&embed_point(p), EntityKind::Point) {
            worst = worst.max((0..3).map(|i| (back[i] - p[i]).abs()).fold(0.0, f64::max));
        } else {
            worst = f64::INFINITY;
        }
        let axis: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let q = UnitQuaternion::from_axis_angle(axis, rng.gen_range(-3.1..3.1));
        if let Ok(Entity::Quaternion(back)) = extract(&embed_quaternion(q), EntityKind::Quaternion) {
            let err = [back.w - q.w, back.x - q.x, back.y - q.y, back.z - q.z];
            worst = worst.max(err.iter().map(|e| e.abs()).fold(0.0, f64::max));
        } else {
            worst = f64::INFINITY;
        }
    }
    let t = secs(start.elapsed());
    Line {
        pass: exact && worst <= 1e-12 && t < 1.0,
        hard: true,
        detail: format!("symbolic exact: {exact}, roundtrip max err {worst:.2e}, {t:.3}s"),
    }
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Line {
    let start = Instant::now();
    match suite(100, 3) {
        Ok(results) => {
            let t = secs(start.elapsed());
            let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.layer.as_str()).collect();
            Line {
                pass: failed.is_empty() && t < 60.0,
                hard: true,
                detail: format!(
                    "{} checks x 100 motions, worst {worst:.2e}, failing {failed:?}, {t:.1}s",
                    results.len()
                ),
            }
        }
        Err(e) => Line { pass: false, hard: true, detail: format!("error: {e}") },
    }
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Line {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for op in REGISTERED {
        match gradcheck(op, 3) {
            Ok(r) => {
                worst = worst.max(r.max_rel_err / tolerance(op));
                if !r.pass {
                    failed.push(format!("{op} {:.2e}", r.max_rel_err));
                }
            }
            Err(e) => failed.push(format!("{op}: {e}")),
        }
    }
    let t = secs(start.elapsed());
    Line {
        pass: failed.is_empty() && t < 300.0,
        hard: true,
        detail: format!(
            "{} ops, worst error/tolerance {worst:.2}, failing {failed:?}, {t:.1}s",
            REGISTERED.len()
        ),
    }
}

// ---------------------------------------------------------------- 5

fn group_grad(p: &ModelParams, grads: &ParamGrads, group: &str) -> Vec<f64> {
    let flat = grads.flat(p);
    let mut off = 0;
    for g in p.groups() {
        if g.name == group {
            return flat[off..off + g.count()].to_vec();
        }
        off += g.count();
    }
    Vec::new()
}

fn criterion_5() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for kind in [ScheduleKind::Cosine, ScheduleKind::LinearBeta] {
        let s = make_schedule(100, kind).unwrap();
        for k in 0..=100 {
            if s.alpha_bar(k).unwrap() <= 1e-6 {
                continue;
            }
            let draw = |rng: &mut ChaCha8Rng| {
                MvStack::new(4, 3, (0..4 * 3 * 16).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
            };
            let (z0, eps) = (draw(&mut rng), draw(&mut rng));
            let zk = forward_noise(&z0, k, &eps, &s).unwrap();
            worst = worst.max(recover_z0(&zk, &eps, k, &s).unwrap().max_abs_diff(&z0));
            steps += 1;
        }
    }
    let k_thresh = k_threshold(0.25, 100).unwrap();

    let pg = PgatrConfig { n_blocks: 1, channels: 4, n_heads: 2 };
    let cfg = ModelConfig::Hpga(HpgaConfig {
        h_o: 2,
        h_p: 4,
        k_o: 3,
        k_a: 3,
        encoder: pg.clone(),
        decoder: pg,
        backbone: BackboneConfig::UNet(UNetConfig {
            down_dims: vec![8, 16],
            kernel: 3,
            n_groups: 4,
            time_dim: 8,
            zero_head: false,
        }),
        latent: LatentMode::Actions,
    });
    let mut params = ModelParams::new();
    let model = PolicyModel::new(&cfg, &mut params, &mut rng).unwrap();
    let draw = |rng: &mut ChaCha8Rng, shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect())
    };
    let batch = Batch { obs: draw(&mut rng, &[1, 2, 3, 16]), actions: draw(&mut rng, &[1, 4, 3, 16]) };
    let eps: Vec<f64> = (0..4 * 48).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let schedule = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let diffusion = DiffusionConfig::new(0.25, 100).unwrap();
    let (mut below_zero, mut above_live) = (true, true);
    for k in 1..=100 {
        let out = train_step_with(&model, &params, &batch, &schedule, &diffusion, &[k], &eps).unwrap();
        let g = group_grad(&params, &out.grads, "decoder");
        if k < k_thresh {
            below_zero &= !g.is_empty() && g.iter().all(|&v| v == 0.0);
        } else {
            above_live &= g.iter().any(|&v| v != 0.0);
        }
    }
    Line {
        pass: worst <= 1e-10 && k_thresh == 75 && below_zero && above_live,
        hard: true,
        detail: format!(
            "inversion max err {worst:.2e} over {steps} steps, K_thresh(0.25,100) = {k_thresh}, \
             decoder grads zero for all k < 75: {below_zero}, nonzero for k >= 75: {above_live}"
        ),
    }
}

// ---------------------------------------------------------------- 6, 7

struct Profile {
    name: &'static str,
    base: RunConfig,
    demos: usize,
    seeds: Vec<u64>,
    conv_epochs: usize,
    eta_epochs: usize,
    eta_trials: usize,
}

/// Desk-scale configuration shared by both experiments.
fn desk_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.task = Task::PointReach;
    c.h_p = 8;
    c.h_a = 4;
    c.k_max = 20;
    c.batch_size = 64;
    c.lr = 1e-3;
    c.wall_clock = false;
    c.eval.episodes = 50;
    c.model.pgatr_blocks = 2;
    c.model.pgatr_channels = 8;
    c.model.pgatr_heads = 4;
    c.model.unet_dims = vec![48, 64];
    c.model.unet_kernel = 3;
    c.model.time_dim = 32;
    c
}

fn profile() -> Profile {
    let full = std::env::var("HPGA_ACCEPTANCE").is_ok_and(|v| v == "full");
    if full {
        let mut base = desk_config();
        base.eval.every = 6;
        Profile { name: "full", base, demos: 200, seeds: vec![0, 1, 2], conv_epochs: 18, eta_epochs: 10, eta_trials: 3 }
    } else {
        let mut base = desk_config();
        base.eval.episodes = 10;
        base.eval.every = 0;
        Profile { name: "quick", base, demos: 50, seeds: vec![0], conv_epochs: 1, eta_epochs: 1, eta_trials: 1 }
    }
}

fn train_data(cfg: &RunConfig, variant: Variant, demos: usize) -> TrainData {
    let episodes = generate_episodes(&TaskSpec::point_reach(), demos, 7, 8).unwrap();
    let mut c = cfg.clone();
    c.variant = variant;
    TrainData::new(&c.adapter(), &episodes).unwrap()
}

fn criterion_6(p: &Profile) -> Line {
    let mut base = p.base.clone();
    base.epochs = p.conv_epochs;
    let dh = train_data(&base, Variant::HpgaU, p.demos);
    let db = train_data(&base, Variant::BaselineU, p.demos);
    let res = convergence(&base, &dh, &db, Variant::HpgaU, Variant::BaselineU, &p.seeds, 0.9, 1.5, |r| {
        eprintln!(
            "  [6] {} seed {} params {} epochs_to_0.9 {:?} evals {:?} {:.0}s",
            r.variant.name(),
            r.seed,
            r.params,
            r.epochs_to_threshold,
            r.evals,
            r.wall_s
        );
    });
    match res {
        Ok(s) => {
            let per_variant_budget = 45.0 * 60.0;
            let (th, tb) = (s.wall_s(Variant::HpgaU), s.wall_s(Variant::BaselineU));
            Line {
                pass: s.pass,
                hard: false,
                detail: format!(
                    "{} profile: hpga_u mean epochs {:?}, baseline_u mean epochs {:.1} ({} of {} censored at budget), \
                     need ratio >= {}; wall {th:.0}s / {tb:.0}s (budget {per_variant_budget:.0}s each)",
                    p.name,
                    s.hybrid_mean,
                    s.baseline_mean,
                    s.baseline_censored,
                    p.seeds.len(),
                    s.ratio
                ),
            }
        }
        Err(e) => Line { pass: false, hard: false, detail: format!("error: {e}") },
    }
}

fn criterion_7(p: &Profile) -> Line {
    let mut base = p.base.clone();
    base.variant = Variant::HpgaU;
    base.epochs = p.eta_epochs;
    let data = train_data(&base, Variant::HpgaU, p.demos);
    let res = eta_robustness(&base, &data, &[0.25, 0.5, 0.75], p.eta_trials, 0.10, 0.5, |r| {
        eprintln!("  [7] eta {} trial {} success {:.2}", r.eta, r.trial, r.success_rate);
    });
    match res {
        Ok(s) => Line {
            pass: s.pass,
            hard: false,
            detail: format!(
                "{} profile: mean success per eta {:?}, spread {:.2} (<= {}), best mean >= {} required",
                p.name, s.means, s.spread, s.tolerance, s.min_success
            ),
        },
        Err(e) => Line { pass: false, hard: false, detail: format!("error: {e}") },
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut pass = true;
    for spec in [TaskSpec::point_reach(), TaskSpec::lift_toy()] {
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let run = || -> hpga::Result<(bool, usize)> {
            generate_dataset(&spec, 200, 7, 8, &a)?;
            generate_dataset(&spec, 200, 7, 8, &b)?;
            let identical = std::fs::read(&a).ok() == std::fs::read(&b).ok();
            let ds = read_dataset(&a)?;
            Ok((identical, failed_replays(&ds).len()))
        };
        match run() {
            Ok((identical, failed)) => {
                pass &= identical && failed == 0;
                notes.push(format!("{}: byte-identical {identical}, {failed}/200 replays failed", spec.task.name()));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{}: error {e}", spec.task.name()));
            }
        }
    }
    Line { pass, hard: true, detail: notes.join("; ") }
}

fn main() -> ExitCode {
    let p = profile();
    let lines = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(&p),
        criterion_7(&p),
        criterion_8(),
    ];
    println!();
    for (i, l) in lines.iter().enumerate() {
        report(i + 1, l);
    }
    if lines.iter().all(|l| l.pass || !l.hard) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
