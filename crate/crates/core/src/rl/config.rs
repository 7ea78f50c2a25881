use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::env::EnvConfig;
use crate::rl::select::Selection;

/// Ensemble and optimization hyperparameters for one training variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedqConfig {
    /// Ensemble size N.
    pub n_critics: usize,
    /// Critics updated per round.
    pub k: usize,
    /// In-target minimization subset size M.
    pub m_target: usize,
    /// Critic update rounds per environment step (G).
    #[serde(default = "one")]
    pub utd: usize,
    pub gamma: f64,
    /// Polyak factor ρ for target networks.
    pub rho: f64,
    /// Fixed entropy temperature.
    pub alpha: f64,
    pub critic_lr: f64,
    pub policy_lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_selection")]
    pub selection: Selection,
}

fn one() -> usize {
    1
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_capacity() -> usize {
    100_000
}
fn default_selection() -> Selection {
    Selection::Dns
}

impl Default for RedqConfig {
    fn default() -> Self {
        RedqConfig {
            n_critics: 10,
            k: 5,
            m_target: 2,
            utd: 1,
            gamma: 0.99,
            rho: 0.995,
            alpha: 0.01,
            critic_lr: 1e-3,
            policy_lr: 1e-3,
            batch_size: 64,
            hidden: default_hidden(),
            buffer_capacity: default_capacity(),
            selection: Selection::Dns,
        }
    }
}

impl RedqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_critics < 2 {
            return bad(format!(
                "n_critics must be at least 2, got {}",
                self.n_critics
            ));
        }
        if self.k == 0 || self.k > self.n_critics {
            return bad(format!(
                "k must satisfy 1 <= k <= N = {}, got {}",
                self.n_critics, self.k
            ));
        }
        if self.m_target == 0 || self.m_target > self.n_critics {
            return bad(format!(
                "m_target must satisfy 1 <= M <= N = {}, got {}",
                self.n_critics, self.m_target
            ));
        }
        if self.utd == 0 {
            return bad("utd must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            ));
        }
        if !(self.critic_lr > 0.0 && self.policy_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be a non-empty list of positive counts".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size".into());
        }
        Ok(())
    }
}

/// A full training experiment: one or more selection variants over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub env: EnvConfig,
    pub redq: RedqConfig,
    /// Variants to run; defaults to `[redq.selection]`.
    #[serde(default)]
    pub selections: Vec<Selection>,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    /// Uniform-random exploration steps before updates begin.
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    /// Metrics row every `cadence` environment steps.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_warmup() -> usize {
    1000
}
fn default_cadence() -> usize {
    100
}
fn default_eval_episodes() -> usize {
    10
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.redq.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.total_steps == 0 || self.cadence == 0 {
            return Err(Error::Config(
                "total_steps and cadence must be positive".into(),
            ));
        }
        if self.env.episode_length == 0 {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        let mut sel = self.variants();
        sel.sort();
        if sel.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("selections must not repeat".into()));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Selection> {
        if self.selections.is_empty() {
            vec![self.redq.selection]
        } else {
            self.selections.clone()
        }
    }

    /// Parses and validates a JSON document; error messages carry the
    /// line and column serde reports.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
