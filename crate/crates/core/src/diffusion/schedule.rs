use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Shape of the ᾱ curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    /// Squared-cosine curve with offset 0.008, betas capped at 0.999.
    #[default]
    Cosine,
    /// Betas spaced linearly from 1e-4 to 0.02 over steps 1..=K.
    LinearBeta,
    /// Supplied directly through [`NoiseSchedule::from_alpha_bars`].
    Custom,
}

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;
/// Upper bound on ᾱ at the last step for a schedule to count as reaching pure noise.
pub const TERMINAL_ALPHA_BAR: f64 = 0.05;

/// Cumulative signal retention ᾱ_0..=ᾱ_K. ᾱ_0 = 1 (clean data).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(k_max: usize, kind: ScheduleKind) -> Result<Self> {
        if k_max < 1 {
            return Err(Error::Config("K_max must be at least 1".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Custom => return Err(Error::Config("custom schedules need explicit alpha_bar values".into())),
            ScheduleKind::LinearBeta => (1..=k_max)
                .map(|k| {
                    if k_max == 1 {
                        LINEAR_BETA_START
                    } else {
                        LINEAR_BETA_START + (LINEAR_BETA_END - LINEAR_BETA_START) * (k - 1) as f64 / (k_max - 1) as f64
                    }
                })
                .collect(),
            ScheduleKind::Cosine => {
                let f = |k: usize| {
                    let u = (k as f64 / k_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    let c = libm::cos(u * core::f64::consts::FRAC_PI_2);
                    c * c
                };
                (1..=k_max).map(|k| (1.0 - f(k) / f(k - 1)).min(MAX_BETA)).collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(k_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let s = Self { kind, alpha_bar };
        s.check()?;
        Ok(s)
    }

    /// Schedule from explicit ᾱ_0..=ᾱ_K, checked against the same invariants.
    pub fn from_alpha_bars(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Config("K_max must be at least 1".into()));
        }
        if alpha_bar.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("alpha_bar outside [0, 1]".into()));
        }
        let s = Self {
            kind: ScheduleKind::Custom,
            alpha_bar,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let a = &self.alpha_bar;
        if !(a[0] > 0.99 && a[0] <= 1.0) {
            return Err(Error::Config(alloc::format!("alpha_bar_0 = {} outside (0.99, 1]", a[0])));
        }
        if let Some(k) = a.windows(2).position(|w| !(w[1] < w[0])) {
            return Err(Error::Config(alloc::format!("alpha_bar not strictly decreasing at step {}", k + 1)));
        }
        Ok(())
    }

    pub fn k_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, k: usize) -> Result<f64> {
        self.alpha_bar.get(k).copied().ok_or(Error::StepOutOfRange { k, k_max: self.k_max() })
    }

    /// β_k = 1 − ᾱ_k / ᾱ_{k−1} for k ≥ 1.
    pub fn beta(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.k_max() {
            return Err(Error::StepOutOfRange { k, k_max: self.k_max() });
        }
        Ok(1.0 - self.alpha_bar[k] / self.alpha_bar[k - 1])
    }

    /// Whether ᾱ_K falls below [`TERMINAL_ALPHA_BAR`].
    pub fn reaches_terminal_noise(&self) -> bool {
        self.alpha_bar[self.k_max()] < TERMINAL_ALPHA_BAR
    }
}

pub fn make_schedule(k_max: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    NoiseSchedule::new(k_max, kind)
}

/// Decoder supervision window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagedLossConfig {
    pub eta: f64,
    pub k_max: usize,
    pub k_thresh: usize,
}

impl StagedLossConfig {
    pub fn new(eta: f64, k_max: usize) -> Result<Self> {
        Ok(Self {
            eta,
            k_max,
            k_thresh: k_threshold(eta, k_max)?,
        })
    }

    /// Indicator `k >= K_thresh`.
    pub fn active(&self, k: usize) -> bool {
        k >= self.k_thresh
    }
}

/// `K_max - floor(eta * K_max)`.
pub fn k_threshold(eta: f64, k_max: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidEta(eta));
    }
    Ok(k_max - libm::floor(eta * k_max as f64) as usize)
}
