use std::path::Path;

use hpga::checkpoint::Checkpoint;
use hpga::config::{RunConfig, Schedule, Variant};
use hpga::dataset::{failed_replays, generate_dataset, read_dataset, write_dataset};
use hpga::metrics::{merge, read_echo, read_rows, CsvLog, EpochRow, EvalRow};
use hpga::run::Run;
use hpga::Error;
use hpga_core::envs::{generate_episodes, TaskSpec};

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.h_p = 4;
    c.h_a = 2;
    c.k_max = 10;
    c.model.pgatr_blocks = 1;
    c.model.pgatr_channels = 4;
    c.model.pgatr_heads = 2;
    c.model.unet_dims = vec![8, 16];
    c.model.unet_groups = 4;
    c.model.unet_kernel = 3;
    c.model.time_dim = 8;
    c
}

#[test]
fn dataset_has_header_and_one_line_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let spec = TaskSpec::point_reach();
    generate_dataset(&spec, 200, 7, 8, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 201);
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["schema"], 1);
    assert_eq!(header["task"], "point_reach");
    assert_eq!(header["seed"], 7);
    assert_eq!(header["episodes"], 200);
    let first: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(first["obs"].as_array().unwrap().len(), first["act"].as_array().unwrap().len());
    assert_eq!(first["obs"][0]["q"].as_array().unwrap().len(), 4);
    assert!(first["obs"][0]["objects"][0]["p"].is_array());
    assert!(first["success"].as_bool().unwrap());
}

#[test]
fn dataset_roundtrip_is_exact_and_regeneration_identical() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [TaskSpec::point_reach(), TaskSpec::lift_toy()] {
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let eps = generate_dataset(&spec, 30, 11, 4, &a).unwrap();
        generate_dataset(&spec, 30, 11, 4, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let ds = read_dataset(&a).unwrap();
        assert_eq!(ds.episodes, eps);
        assert_eq!(ds.spec, spec);
        assert!(failed_replays(&ds).is_empty());
        for ep in &ds.episodes {
            assert!(ep.obs.iter().all(|f| f.q_ee.w >= 0.0 && f.objects.iter().all(|o| o.q.w >= 0.0)));
            assert!(ep.act.iter().all(|a| a.q.w >= 0.0));
        }
    }
}

fn rewrite(path: &Path, line: usize, f: impl Fn(&mut serde_json::Value)) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[line]).unwrap();
    f(&mut v);
    lines[line] = v.to_string();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn corrupt_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TaskSpec::point_reach();
    let eps = generate_episodes(&spec, 3, 1, 0).unwrap();
    let path = dir.path().join("d.jsonl");
    let cases: Vec<(usize, Box<dyn Fn(&mut serde_json::Value)>)> = vec![
        (0, Box::new(|v| v["schema"] = 2.into())),
        (0, Box::new(|v| v["episodes"] = 4.into())),
        (0, Box::new(|v| v["task"] = "stack".into())),
        (1, Box::new(|v| v["obs"][0]["q"] = serde_json::json!([2.0, 0.0, 0.0, 0.0]))),
        (1, Box::new(|v| v["act"][0]["q"] = serde_json::json!([-1.0, 0.0, 0.0, 0.0]))),
        (1, Box::new(|v| v["act"].as_array_mut().unwrap().pop().map(drop).unwrap())),
        (2, Box::new(|v| v["obs"][0]["objects"] = serde_json::json!([]))),
        (2, Box::new(|v| v["act"][0]["g"] = 1.5.into())),
    ];
    for (i, (line, edit)) in cases.iter().enumerate() {
        write_dataset(&path, &spec, 1, 0, &eps).unwrap();
        rewrite(&path, *line, edit);
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })), "case {i}");
    }
    assert!(matches!(read_dataset(&dir.path().join("missing.jsonl")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_roundtrip_and_validation() {
    let cfg = tiny_config();
    let run = Run::new(&cfg).unwrap();
    let ck = run.checkpoint();
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], b"HPGACKPT");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);

    let mut other = Run::new(&RunConfig { seeds: hpga::config::Seeds { train: 99, eval: 0 }, ..cfg.clone() }).unwrap();
    assert_ne!(other.params.flat(), run.params.flat());
    back.load_into(&mut other.params).unwrap();
    for (a, b) in other.params.flat().iter().zip(run.params.flat()) {
        assert_eq!(*a, f64::from(b as f32));
    }
    let reloaded = Run::from_checkpoint(&back).unwrap();
    assert_eq!(reloaded.params.flat(), other.params.flat());

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut v2 = bytes.clone();
    v2[8] = 2;
    assert!(Checkpoint::from_bytes(&v2).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());

    let mut wide = tiny_config();
    wide.model.pgatr_channels = 8;
    let mut wrong = Run::new(&wide).unwrap();
    assert!(ck.load_into(&mut wrong.params).is_err());
}

#[test]
fn config_defaults_and_roundtrip() {
    let c = RunConfig::from_toml("").unwrap();
    assert_eq!((c.h_o, c.h_p, c.h_a, c.k_max), (2, 16, 8, 100));
    assert_eq!(c.eta, 0.25);
    assert_eq!(c.schedule, Schedule::Cosine);
    assert_eq!(c.lr, 1e-4);
    assert_eq!(c.variant, Variant::HpgaU);
    let mut custom = tiny_config();
    custom.variant = Variant::BaselineT;
    custom.schedule = Schedule::LinearBeta;
    custom.eta = 0.5;
    let text = custom.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), custom);
    assert_eq!(RunConfig::from_toml(&RunConfig::from_toml(&text).unwrap().to_toml()).unwrap().to_toml(), text);
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "h_a = 20",
        "h_a = 0",
        "eta = 1.5",
        "epochs = 0",
        "lr = -1.0",
        "k_max = 0",
        "variant = \"mlp\"",
        "task = \"stack\"",
        "unknown_key = 1",
        "h_p = 6\nh_a = 4",
        "[model]\npgatr_heads = 3",
        "[eval]\nstop_at = 2.0",
        "variant = \"baseline_u\"\nlatent = \"encoded\"",
        "variant = \"hpga_t\"\n[model]\ntf_heads = 5",
    ] {
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn env_overrides_replace_paths() {
    let mut c = RunConfig::default();
    c.apply_path_overrides(|k| match k {
        "HPGA_DATASET" => Some("/x/d.jsonl".into()),
        "HPGA_EVAL" => Some(String::new()),
        _ => None,
    });
    assert_eq!(c.paths.dataset, Path::new("/x/d.jsonl"));
    assert_eq!(c.paths.eval, RunConfig::default().paths.eval);
    assert_eq!(c.paths.checkpoint, RunConfig::default().paths.checkpoint);
}

#[test]
fn baselines_are_parameter_matched() {
    for (hy, base) in [(Variant::HpgaU, Variant::BaselineU), (Variant::HpgaT, Variant::BaselineT)] {
        let mut c = tiny_config();
        c.model.tf_d_model = 16;
        c.model.tf_layers = 2;
        c.model.tf_heads = 2;
        c.variant = hy;
        let n_h = Run::new(&c).unwrap().params.count();
        c.variant = base;
        let n_b = Run::new(&c).unwrap().params.count();
        let rel = (n_b as f64 - n_h as f64).abs() / n_h as f64;
        assert!(rel <= 0.1, "{hy:?} {n_h} vs {base:?} {n_b}");
    }
}

#[test]
fn csv_logs_echo_config_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (p, off) in [(&a, 0.0), (&b, 1.0)] {
        let mut log = CsvLog::create(p, Some(&cfg)).unwrap();
        for e in 1..=3 {
            log.row(&EpochRow { epoch: e, l_ed: off + 0.5, l_dec: 0.25, l_total: off + 0.75, wall_s: 0.0 }).unwrap();
        }
    }
    assert_eq!(read_echo(&a).unwrap(), Some(cfg.clone()));
    let rows: Vec<EpochRow> = read_rows(&a).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].epoch, 3);
    let header = std::fs::read_to_string(&a).unwrap();
    assert!(header.contains("\nepoch,l_ed,l_dec,l_total,wall_s\n"));

    let out = dir.path().join("merged.csv");
    assert_eq!(merge(&[&a, &b], &out).unwrap(), 6);
    let merged = std::fs::read_to_string(&out).unwrap();
    assert!(merged.starts_with("source,epoch,l_ed,l_dec,l_total,wall_s\na.csv,1,"));
    assert!(merged.contains("b.csv,3,1.5,"));

    let e = dir.path().join("e.csv");
    let mut log = CsvLog::create(&e, None).unwrap();
    log.row(&EvalRow { variant: "hpga_u".into(), eta: 0.25, trial: 0, success_rate: 1.0, epochs_trained: 3 }).unwrap();
    assert!(std::fs::read_to_string(&e).unwrap().starts_with("variant,eta,trial,success_rate,epochs_trained\n"));
    assert!(read_echo(&e).unwrap().is_none());
    assert!(merge(&[&a, &e], &out).is_err());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let c = RunConfig::load(&path).unwrap();
        assert!(Run::new(&c).is_ok(), "{}", path.display());
        n += 1;
    }
    assert!(n >= 2);
}

#[test]
fn readme_config_block_lists_the_defaults() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    assert_eq!(RunConfig::from_toml(block).unwrap(), RunConfig::default());
}
