//! Run configuration: flat `key = value` text with defaults for every key.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::QConfig;
use crate::env::Action;
use crate::error::{Error, Result};
use crate::representation::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSelection {
    Tldr,
    Uniform,
    Rnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcrlReward {
    TldrDense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    PhiFirst,
    PoliciesFirst,
}

macro_rules! keyword_enum {
    ($ty:ty, $($variant:path => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown value {other:?}; expected one of: {}",
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(GoalSelection, GoalSelection::Tldr => "tldr", GoalSelection::Uniform => "uniform", GoalSelection::Rnd => "rnd");
keyword_enum!(GcrlReward, GcrlReward::TldrDense => "tldr_dense", GcrlReward::Sparse => "sparse");
keyword_enum!(UpdateOrder, UpdateOrder::PhiFirst => "phi_first", UpdateOrder::PoliciesFirst => "policies_first");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Layout file path or built-in layout name.
    pub layout: String,
    pub seed: u64,
    pub epochs: usize,
    /// Episode length; the layout default when absent.
    pub horizon: Option<usize>,
    pub k: usize,
    pub epsilon: f64,
    pub lambda_init: f64,
    pub lambda_lr: f64,
    pub phi_dim: usize,
    pub gamma_goal: f64,
    pub gamma_explore: f64,
    pub tau: f64,
    pub relabel_ratio: f64,
    pub rollouts_per_epoch: usize,
    pub grad_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_phi: f64,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub buffer_capacity: usize,
    pub reference_batch: usize,
    pub goal_batch: usize,
    pub entropy_temp: f64,
    /// Environment steps at the start of a run taken with uniform random actions.
    pub random_steps: u64,
    pub goal_selection: GoalSelection,
    pub gcrl_reward: GcrlReward,
    pub update_order: UpdateOrder,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            layout: "large".into(),
            seed: 0,
            epochs: 300,
            horizon: None,
            k: 12,
            epsilon: 1e-3,
            lambda_init: 3e3,
            lambda_lr: 1e-3,
            phi_dim: 4,
            gamma_goal: 0.97,
            gamma_explore: 0.99,
            tau: 0.995,
            relabel_ratio: 0.8,
            rollouts_per_epoch: 8,
            grad_steps: 50,
            batch_size: 1024,
            lr: 1e-4,
            lr_phi: 5e-4,
            hidden_width: 64,
            hidden_depth: 2,
            buffer_capacity: 100_000,
            reference_batch: 256,
            goal_batch: 1024,
            entropy_temp: 0.01,
            random_steps: 4000,
            goal_selection: GoalSelection::Tldr,
            gcrl_reward: GcrlReward::TldrDense,
            update_order: UpdateOrder::PhiFirst,
            checkpoint_every: 10,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every effective value, defaults included, in the same format.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                bad.push(what.to_string());
            }
        };
        check(!self.layout.is_empty(), "layout must be set");
        check(self.horizon != Some(0), "horizon must be at least 1");
        check(self.k >= 1, "k must be at least 1");
        check(self.phi_dim >= 1, "phi_dim must be at least 1");
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("lambda_lr", self.lambda_lr),
            ("lr", self.lr),
            ("lr_phi", self.lr_phi),
        ] {
            check(v > 0.0 && v.is_finite(), &format!("{name} must be positive"));
        }
        check(self.lambda_init >= 0.0 && self.lambda_init.is_finite(), "lambda_init must be nonnegative");
        check(self.entropy_temp >= 0.0 && self.entropy_temp.is_finite(), "entropy_temp must be nonnegative");
        for (name, v) in [("gamma_goal", self.gamma_goal), ("gamma_explore", self.gamma_explore)] {
            check(v > 0.0 && v < 1.0, &format!("{name} must lie in (0, 1)"));
        }
        check((0.0..=1.0).contains(&self.tau), "tau must lie in [0, 1]");
        check((0.0..=1.0).contains(&self.relabel_ratio), "relabel_ratio must lie in [0, 1]");
        check(self.rollouts_per_epoch >= 1, "rollouts_per_epoch must be at least 1");
        check(self.grad_steps >= 1, "grad_steps must be at least 1");
        check(self.batch_size >= 1, "batch_size must be at least 1");
        check(self.hidden_width >= 1, "hidden_width must be at least 1");
        check(self.buffer_capacity >= 1, "buffer_capacity must be at least 1");
        check(self.reference_batch > self.k, "reference_batch must exceed k");
        check(self.goal_batch > self.k, "goal_batch must exceed k");
        check(self.checkpoint_every >= 1, "checkpoint_every must be at least 1");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_width: 2,
            dim: self.phi_dim,
            hidden_width: self.hidden_width,
            hidden_depth: self.hidden_depth,
            lr: self.lr_phi,
            lambda_init: self.lambda_init,
            lambda_lr: self.lambda_lr,
            epsilon: self.epsilon,
        }
    }

    /// Goal-conditioned learner: input is state features then goal features.
    pub fn goal_q_config(&self) -> QConfig {
        self.q_config(4, self.gamma_goal)
    }

    pub fn explore_q_config(&self) -> QConfig {
        self.q_config(2, self.gamma_explore)
    }

    fn q_config(&self, input_width: usize, gamma: f64) -> QConfig {
        QConfig {
            input_width,
            num_actions: Action::COUNT,
            hidden_width: self.hidden_width,
            hidden_depth: self.hidden_depth,
            lr: self.lr,
            alpha: self.entropy_temp,
            gamma,
            tau: self.tau,
        }
    }
}
