use crate::env::MazeSpec;

use super::CoverageTracker;

pub const METRICS_HEADER: &str = "epoch,env_steps,coverage_cells,coverage_fraction,goals_reached,\
mean_goal_distance,lambda,constraint_residual,mean_tldr_reward,repr_loss,qg_loss,qe_loss,seed";

/// One metrics CSV row per epoch.
///
/// `constraint_residual` is the epoch mean of `‖φ(s) − φ(s′)‖ − 1` over the
/// encoder minibatches (nonpositive when the constraint holds on average).
/// `mean_tldr_reward` is the epoch mean of the raw score of next states in
/// the exploration minibatches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: u64,
    pub coverage_cells: usize,
    pub coverage_fraction: f64,
    pub goals_reached: usize,
    pub mean_goal_distance: f64,
    pub lambda: f64,
    pub constraint_residual: f64,
    pub mean_tldr_reward: f64,
    pub repr_loss: f64,
    pub qg_loss: f64,
    pub qe_loss: f64,
    pub seed: u64,
}

impl MetricsRow {
    /// Comma-separated values in header order, without a trailing newline.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.env_steps,
            self.coverage_cells,
            self.coverage_fraction,
            self.goals_reached,
            self.mean_goal_distance,
            self.lambda,
            self.constraint_residual,
            self.mean_tldr_reward,
            self.repr_loss,
            self.qg_loss,
            self.qe_loss,
            self.seed
        )
    }
}

/// `x,y,count` for every visited cell, row-major from the bottom row.
pub fn visits_csv(maze: &MazeSpec, coverage: &CoverageTracker) -> String {
    let mut out = String::from("x,y,count\n");
    for (i, &n) in coverage.visits().iter().enumerate() {
        if n > 0 {
            let c = maze.cell_at(i);
            out.push_str(&format!("{},{},{}\n", c.x, c.y, n));
        }
    }
    out
}
