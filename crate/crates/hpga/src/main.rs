use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use hpga::checkpoint::Checkpoint;
use hpga::config::{RunConfig, Task};
use hpga::dataset::{failed_replays, generate_dataset, read_dataset};
use hpga::metrics::{self, CsvLog, EvalRow};
use hpga::run::{ablate_eta, check_dataset, train, Run, TrainData};

#[derive(Parser)]
#[command(name = "hpga", version, about = "Hybrid PGA diffusion policy: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write scripted-expert demonstrations as JSON Lines.
    Generate {
        #[arg(long, default_value = "point_reach")]
        task: String,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Expert steps recorded after success.
        #[arg(long, default_value_t = 8)]
        hold: usize,
        #[arg(long, env = "HPGA_DATASET")]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and per-epoch metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Roll out a checkpoint and report its success rate.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's checkpoint path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Train and evaluate over a grid of decoder-supervision fractions.
    AblateEta {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated eta values.
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.25,0.5,0.75,1.0")]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        /// Defaults to the config's eval path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge CSVs with identical columns into one file with a source column.
    ExportMetrics {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_path_overrides(|k| std::env::var(k).ok());
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<TrainData> {
    let ds = read_dataset(&cfg.paths.dataset).context("loading dataset")?;
    check_dataset(cfg, &ds)?;
    Ok(TrainData::new(&cfg.adapter(), &ds.episodes)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Generate { task, episodes, seed, hold, out } => {
            let spec = Task::parse(&task)?.spec();
            generate_dataset(&spec, episodes, seed, hold, &out)?;
            let ds = read_dataset(&out)?;
            let failed = failed_replays(&ds);
            if !failed.is_empty() {
                bail!("{} episodes do not replay to success: {failed:?}", failed.len());
            }
            println!("wrote {episodes} {task} episodes to {}", out.display());
        }
        Cmd::Train { config } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let mut log = CsvLog::create(&cfg.paths.metrics, Some(&cfg))?;
            println!("{} on {}: {} windows", cfg.variant.name(), cfg.task.kind().name(), data.len());
            let (run, report) = train(&cfg, &data, Some(&mut log), |row, success| {
                let s = success.map(|s| format!(" success {s:.3}")).unwrap_or_default();
                println!("epoch {:>4}  l_ed {:.5}  l_dec {:.5}  l_total {:.5}{s}", row.epoch, row.l_ed, row.l_dec, row.l_total);
            })?;
            run.checkpoint().save(&cfg.paths.checkpoint)?;
            println!(
                "checkpoint {} ({} params), final success {:.3}",
                cfg.paths.checkpoint.display(),
                run.params.count(),
                report.final_success().unwrap_or(0.0)
            );
        }
        Cmd::Eval { config, checkpoint, episodes, trial } => {
            let cfg = load_config(&config)?;
            let path = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let ck = Checkpoint::load(&path)?;
            let mut run = Run::from_checkpoint(&ck)?;
            run.cfg.eval = cfg.eval.clone();
            run.cfg.h_a = cfg.h_a;
            run.cfg.validate()?;
            let n = episodes.unwrap_or(cfg.eval.episodes);
            if n == 0 {
                bail!("--episodes must be positive");
            }
            let rate = run.evaluate(n, cfg.seeds.eval)?;
            let row = EvalRow {
                variant: run.cfg.variant.name().into(),
                eta: run.cfg.eta,
                trial,
                success_rate: rate,
                epochs_trained: run.epochs_done,
            };
            let mut log = CsvLog::create(&cfg.paths.eval, Some(&run.cfg))?;
            log.row(&row)?;
            println!("success rate {rate:.3} over {n} rollouts");
        }
        Cmd::AblateEta { config, grid, trials, out } => {
            let cfg = load_config(&config)?;
            if grid.is_empty() || trials == 0 {
                bail!("empty grid or zero trials");
            }
            let data = load_data(&cfg)?;
            let out = out.unwrap_or_else(|| cfg.paths.eval.clone());
            let mut log = CsvLog::create(&out, Some(&cfg))?;
            ablate_eta(&cfg, &data, &grid, trials, |row| {
                println!("eta {:.3} trial {} success {:.3}", row.eta, row.trial, row.success_rate);
                log.row(row)
            })?;
        }
        Cmd::ExportMetrics { out, inputs } => {
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let n = metrics::merge(&refs, &out)?;
            println!("{n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
