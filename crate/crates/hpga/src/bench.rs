//! Desk-scale experiment protocols: epochs-to-success for a hybrid model
//! against its parameter-matched baseline, and the eta sweep.

use std::time::Instant;

use crate::config::{RunConfig, Variant};
use crate::error::Result;
use crate::metrics::EvalRow;
use crate::run::{ablate_eta, train, TrainData};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRun {
    pub variant: Variant,
    pub seed: u64,
    /// First evaluated epoch reaching the threshold.
    pub epochs_to_threshold: Option<usize>,
    pub epochs_trained: usize,
    pub evals: Vec<(usize, f64)>,
    pub params: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub runs: Vec<ConvergenceRun>,
    pub threshold: f64,
    pub ratio: f64,
    /// Mean epochs to threshold of the hybrid runs, if every seed reached it.
    pub hybrid_mean: Option<f64>,
    /// Mean over baseline seeds; a seed that never reached the threshold
    /// counts as its full epoch budget, a lower bound on its true value.
    pub baseline_mean: f64,
    pub baseline_censored: usize,
    pub pass: bool,
}

impl ConvergenceSummary {
    pub fn wall_s(&self, v: Variant) -> f64 {
        self.runs.iter().filter(|r| r.variant == v).map(|r| r.wall_s).sum()
    }
}

/// Trains `hybrid` and its baseline counterpart once per seed, evaluating
/// every `base.eval.every` epochs and stopping a run once it reaches
/// `threshold`. Passes when every hybrid seed reaches the threshold and the
/// baseline needs at least `ratio` times as many epochs on average.
pub fn convergence(
    base: &RunConfig,
    data_hybrid: &TrainData,
    data_baseline: &TrainData,
    hybrid: Variant,
    baseline: Variant,
    seeds: &[u64],
    threshold: f64,
    ratio: f64,
    mut progress: impl FnMut(&ConvergenceRun),
) -> Result<ConvergenceSummary> {
    let mut runs = Vec::new();
    for (variant, data) in [(hybrid, data_hybrid), (baseline, data_baseline)] {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.variant = variant;
            cfg.seeds.train = seed;
            cfg.eval.stop_at = threshold;
            cfg.validate()?;
            let start = Instant::now();
            let (run, report) = train(&cfg, data, None, |_, _| {})?;
            let r = ConvergenceRun {
                variant,
                seed,
                epochs_to_threshold: report.epochs_to(threshold),
                epochs_trained: run.epochs_done,
                evals: report.evals.clone(),
                params: run.params.count(),
                wall_s: start.elapsed().as_secs_f64(),
            };
            progress(&r);
            runs.push(r);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let hy: Vec<Option<usize>> = runs.iter().filter(|r| r.variant == hybrid).map(|r| r.epochs_to_threshold).collect();
    let hybrid_mean = hy
        .iter()
        .map(|e| e.map(|e| e as f64))
        .collect::<Option<Vec<f64>>>()
        .map(|v| mean(&v));
    let bl: Vec<&ConvergenceRun> = runs.iter().filter(|r| r.variant == baseline).collect();
    let baseline_censored = bl.iter().filter(|r| r.epochs_to_threshold.is_none()).count();
    let baseline_mean = mean(
        &bl.iter()
            .map(|r| r.epochs_to_threshold.unwrap_or(r.epochs_trained) as f64)
            .collect::<Vec<_>>(),
    );
    let pass = hybrid_mean.is_some_and(|h| baseline_mean >= ratio * h);
    Ok(ConvergenceSummary { runs, threshold, ratio, hybrid_mean, baseline_mean, baseline_censored, pass })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSummary {
    pub rows: Vec<EvalRow>,
    /// `(eta, mean final success)` per grid value.
    pub means: Vec<(f64, f64)>,
    /// Largest minus smallest mean.
    pub spread: f64,
    pub tolerance: f64,
    /// Best mean must reach this for the comparison to mean anything.
    pub min_success: f64,
    pub pass: bool,
}

/// Final success after a fixed budget for every eta and trial.
pub fn eta_robustness(
    base: &RunConfig,
    data: &TrainData,
    grid: &[f64],
    trials: usize,
    tolerance: f64,
    min_success: f64,
    mut progress: impl FnMut(&EvalRow),
) -> Result<EtaSummary> {
    let mut cfg = base.clone();
    cfg.eval.every = 0;
    cfg.eval.stop_at = 0.0;
    let rows = ablate_eta(&cfg, data, grid, trials, |r| {
        progress(r);
        Ok(())
    })?;
    let means: Vec<(f64, f64)> = grid
        .iter()
        .map(|&eta| {
            let s: Vec<f64> = rows.iter().filter(|r| r.eta == eta).map(|r| r.success_rate).collect();
            (eta, s.iter().sum::<f64>() / s.len() as f64)
        })
        .collect();
    let hi = means.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let spread = hi - lo;
    let pass = spread <= tolerance && hi >= min_success;
    Ok(EtaSummary { rows, means, spread, tolerance, min_success, pass })
}
