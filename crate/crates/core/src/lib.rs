//! Temporal-distance-aware representations for unsupervised goal-conditioned
//! reinforcement learning on discrete mazes.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks, a reverse-mode tape and Adam.
//! - [`env`]: grid mazes, the layout format and a breadth-first distance oracle.
//! - [`representation`]: the temporal-distance encoder and its dual multiplier.
//! - [`rewards`]: kNN particle-entropy score, exploration and goal-reaching rewards.
//! - [`replay`]: trajectory-aware replay with hindsight relabeling.
//! - [`agent`]: twin-Q soft value learners over the four grid actions.
//! - [`controller`]: the Go-Explore training loop and evaluation.
//! - [`config`] and [`ablation`]: run configuration and the ablation baselines.

pub mod ablation;
pub mod agent;
pub mod config;
pub mod controller;
pub mod env;
pub mod error;
pub mod nn;
pub mod replay;
pub mod representation;
pub mod rewards;

pub use error::{Error, Result};
pub use config::{GcrlReward, GoalSelection, RunConfig, UpdateOrder};
pub use controller::{EvalReport, MetricsRow, RunState, METRICS_HEADER};
pub use env::{load_layout, Action, Cell, MazeSpec};
