use std::path::Path;
use std::process::{Command, Output};

use hpga::metrics::{read_echo, read_rows, EvalRow};
use hpga::RunConfig;

fn hpga(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpga"))
        .current_dir(dir)
        .args(args)
        .env_remove("HPGA_DATASET")
        .env_remove("HPGA_CHECKPOINT")
        .env_remove("HPGA_METRICS")
        .env_remove("HPGA_EVAL")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY: &str = r#"
task = "point_reach"
variant = "hpga_u"
h_p = 4
h_a = 2
k_max = 5
epochs = 2
batch_size = 32
lr = 1e-3
wall_clock = false

[eval]
episodes = 2
max_steps = 6

[model]
pgatr_blocks = 1
pgatr_channels = 4
pgatr_heads = 2
unet_dims = [8, 16]
unet_kernel = 3
unet_groups = 4
time_dim = 8

[paths]
dataset = "data.jsonl"
checkpoint = "model.ckpt"
metrics = "metrics.csv"
eval = "eval.csv"
"#;

fn setup(dir: &Path) {
    ok(&hpga(dir, &["generate", "--task", "point_reach", "--episodes", "4", "--seed", "3", "--out", "data.jsonl"]));
    std::fs::write(dir.join("run.toml"), TINY).unwrap();
}

#[test]
fn generate_writes_a_replayable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hpga(d, &["generate", "--task", "point_reach", "--episodes", "200", "--seed", "7", "--out", "data.jsonl"]));
    ok(&hpga(d, &["generate", "--task", "point_reach", "--episodes", "200", "--seed", "7", "--out", "again.jsonl"]));
    let a = std::fs::read(d.join("data.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("again.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 201);
    let ds = hpga::read_dataset(&d.join("data.jsonl")).unwrap();
    assert!(hpga::dataset::failed_replays(&ds).is_empty());

    let bad = hpga(d, &["generate", "--task", "stack", "--episodes", "2", "--out", "x.jsonl"]);
    assert!(!bad.status.success());
    let zero = hpga(d, &["generate", "--episodes", "0", "--out", "x.jsonl"]);
    assert!(!zero.status.success());
}

#[test]
fn train_is_deterministic_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(&hpga(d, &["train", "--config", "run.toml"]));
    let first = std::fs::read(d.join("metrics.csv")).unwrap();
    let ck = std::fs::read(d.join("model.ckpt")).unwrap();
    ok(&hpga(d, &["train", "--config", "run.toml"]));
    assert_eq!(first, std::fs::read(d.join("metrics.csv")).unwrap());
    assert_eq!(ck, std::fs::read(d.join("model.ckpt")).unwrap());

    let loaded = RunConfig::load(&d.join("run.toml")).unwrap();
    assert_eq!(read_echo(&d.join("metrics.csv")).unwrap(), Some(loaded));
    let rows: Vec<hpga::metrics::EpochRow> = read_rows(&d.join("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2]);
    assert!(rows.iter().all(|r| r.l_total.is_finite() && (r.l_total - r.l_ed - r.l_dec).abs() < 1e-12));
}

#[test]
fn eval_reports_success_rate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(&hpga(d, &["train", "--config", "run.toml"]));
    let out = hpga(d, &["eval", "--config", "run.toml", "--episodes", "3"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("success rate"));
    let rows: Vec<EvalRow> = read_rows(&d.join("eval.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].variant, "hpga_u");
    assert_eq!(rows[0].epochs_trained, 2);
    assert!([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].iter().any(|v| (rows[0].success_rate - v).abs() < 1e-12));

    let missing = hpga(d, &["eval", "--config", "run.toml", "--checkpoint", "nope.ckpt"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.ckpt"));
}

#[test]
fn ablate_eta_writes_one_row_per_eta_and_trial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::write(d.join("run.toml"), TINY.replace("epochs = 2", "epochs = 1")).unwrap();
    ok(&hpga(d, &["ablate-eta", "--config", "run.toml", "--grid", "0.25,0.5,0.75", "--trials", "3", "--out", "sweep.csv"]));
    let rows: Vec<EvalRow> = read_rows(&d.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    let pairs: Vec<(f64, usize)> = rows.iter().map(|r| (r.eta, r.trial)).collect();
    for eta in [0.25, 0.5, 0.75] {
        for t in 0..3 {
            assert!(pairs.contains(&(eta, t)));
        }
    }
    assert!(rows.iter().all(|r| r.epochs_trained == 1 && (0.0..=1.0).contains(&r.success_rate)));
}

#[test]
fn export_merges_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(&hpga(d, &["train", "--config", "run.toml"]));
    std::fs::copy(d.join("metrics.csv"), d.join("other.csv")).unwrap();
    ok(&hpga(d, &["export-metrics", "--out", "all.csv", "metrics.csv", "other.csv"]));
    let text = std::fs::read_to_string(d.join("all.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("source,epoch,l_ed,l_dec,l_total,wall_s\n"));
    assert!(!hpga(d, &["export-metrics", "--out", "x.csv", "missing.csv"]).status.success());
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::write(d.join("bad.toml"), "h_a = 99").unwrap();
    let out = hpga(d, &["train", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));

    std::fs::write(d.join("nodata.toml"), TINY.replace("\"data.jsonl\"", "\"absent.jsonl\"")).unwrap();
    let out = hpga(d, &["train", "--config", "nodata.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));

    std::fs::write(d.join("lift.toml"), TINY.replace("\"point_reach\"", "\"lift_toy\"")).unwrap();
    assert!(!hpga(d, &["train", "--config", "lift.toml"]).status.success());
    assert!(!hpga(d, &["train", "--config", "missing.toml"]).status.success());
}

#[test]
fn env_vars_override_config_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::rename(d.join("data.jsonl"), d.join("moved.jsonl")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hpga"))
        .current_dir(d)
        .args(["train", "--config", "run.toml"])
        .env("HPGA_DATASET", "moved.jsonl")
        .env("HPGA_METRICS", "env_metrics.csv")
        .env_remove("HPGA_CHECKPOINT")
        .env_remove("HPGA_EVAL")
        .output()
        .unwrap();
    ok(&out);
    assert!(d.join("env_metrics.csv").exists());
    assert!(!d.join("metrics.csv").exists());
}
