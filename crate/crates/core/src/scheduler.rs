//! Relative performance scores and adaptive batch reallocation.
//!
//! Each network keeps a per-epoch history of its mean (minimised) loss. Its
//! relative performance score over a window of the last `ν` epochs is
//!
//! ```text
//! RPS = (Σ_{i=N−w+1..N} L_i) / (w · max_{i=1..N} L_i),   w = min(ν, N)
//! ```
//!
//! so it is dimensionless and lies in `(0, 1]`. When the generator and
//! discriminator scores drift more than `ε` apart, the network judged to be
//! lagging receives `min(k_max, ceil(κ·(|Δ| − ε)/ε))` extra update batches in
//! the next epoch, where `Δ = RPS_G − RPS_D`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Losses at or below zero are floored to this value before recording.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Per-epoch mean losses of one network with their running maximum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    losses: Vec<f64>,
    max: f64,
}

/// Outcome of [`LossHistory::record_epoch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recorded {
    Exact,
    /// The loss was not positive and was replaced by [`LOSS_FLOOR`].
    Floored,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_losses(losses: &[f64]) -> Result<Self> {
        let mut h = Self::new();
        for &l in losses {
            h.record_epoch(l)?;
        }
        Ok(h)
    }

    pub fn record_epoch(&mut self, loss: f64) -> Result<Recorded> {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {} loss is {loss}",
                self.losses.len() + 1
            )));
        }
        let (value, outcome) = if loss > 0.0 {
            (loss, Recorded::Exact)
        } else {
            (LOSS_FLOOR, Recorded::Floored)
        };
        if self.losses.is_empty() || value > self.max {
            self.max = value;
        }
        self.losses.push(value);
        Ok(outcome)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Largest loss recorded so far; `None` for an empty history.
    pub fn max(&self) -> Option<f64> {
        (!self.losses.is_empty()).then_some(self.max)
    }
}

/// Relative performance score over the last `min(nu, N)` epochs.
pub fn rps(history: &LossHistory, nu: usize) -> Result<f64> {
    if nu == 0 {
        return Err(Error::Config("RPS window must be at least one epoch".into()));
    }
    let n = history.len();
    let max = history
        .max()
        .ok_or_else(|| Error::Empty("RPS of an empty loss history".into()))?;
    if max <= 0.0 {
        return Err(Error::Numerical(format!(
            "RPS needs a positive maximum loss, got {max}"
        )));
    }
    let w = nu.min(n);
    // Normalising each term first keeps every ratio ≤ 1, so a window made
    // entirely of the maximum scores exactly 1.
    let window: f64 = history.losses[n - w..].iter().map(|l| l / max).sum();
    Ok(window / w as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Generator,
    Discriminator,
    None,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Generator => "generator",
            Target::Discriminator => "discriminator",
            Target::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "generator" => Some(Target::Generator),
            "discriminator" => Some(Target::Discriminator),
            "none" => Some(Target::None),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which network counts as lagging when the scores diverge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The higher score (higher normalised loss) marks the weaker network.
    Higher,
    /// The lower score marks the weaker network.
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub nu: usize,
    pub epsilon: f64,
    pub kappa: f64,
    pub k_max: u32,
    pub enabled: bool,
    pub direction: Direction,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            nu: 5,
            epsilon: 0.05,
            kappa: 1.0,
            k_max: 4,
            enabled: true,
            direction: Direction::Higher,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 {
            return Err(Error::Config("nu must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub target: Target,
    pub extra_batches: u32,
    pub rps_g: f64,
    pub rps_d: f64,
    /// `rps_g − rps_d`
    pub delta: f64,
}

impl ScheduleDecision {
    pub fn none(rps_g: f64, rps_d: f64) -> Self {
        Self {
            target: Target::None,
            extra_batches: 0,
            rps_g,
            rps_d,
            delta: rps_g - rps_d,
        }
    }
}

/// Apply the ε-rule to a pair of scores.
pub fn decide(rps_g: f64, rps_d: f64, cfg: &SchedulerConfig) -> ScheduleDecision {
    let delta = rps_g - rps_d;
    let gap = delta.abs();
    if !cfg.enabled || gap.is_nan() || gap <= cfg.epsilon {
        return ScheduleDecision::none(rps_g, rps_d);
    }
    let generator_higher = delta > 0.0;
    let target = match (cfg.direction, generator_higher) {
        (Direction::Higher, true) | (Direction::Lower, false) => Target::Generator,
        _ => Target::Discriminator,
    };
    let raw = (cfg.kappa * (gap - cfg.epsilon) / cfg.epsilon).ceil();
    // raw > 0 here because gap > ε and κ > 0
    let extra = if raw >= cfg.k_max as f64 { cfg.k_max } else { (raw as u32).max(1) };
    ScheduleDecision {
        target,
        extra_batches: extra,
        rps_g,
        rps_d,
        delta,
    }
}

/// Both histories plus configuration; produces one decision per epoch.
#[derive(Clone, Debug, Default)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub generator: LossHistory,
    pub discriminator: LossHistory,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        Self {
            config,
            generator: LossHistory::new(),
            discriminator: LossHistory::new(),
        }
    }

    /// Record one epoch of mean losses for both networks.
    pub fn record(&mut self, loss_g: f64, loss_d: f64) -> Result<(Recorded, Recorded)> {
        // Validate both before mutating either history.
        for (name, v) in [("generator", loss_g), ("discriminator", loss_d)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} epoch loss is {v}")));
            }
        }
        Ok((
            self.generator.record_epoch(loss_g)?,
            self.discriminator.record_epoch(loss_d)?,
        ))
    }

    /// Current scores and the decision for the next epoch.
    pub fn decide(&self) -> Result<ScheduleDecision> {
        let g = rps(&self.generator, self.config.nu)?;
        let d = rps(&self.discriminator, self.config.nu)?;
        Ok(decide(g, d, &self.config))
    }
}
