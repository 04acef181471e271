//! The outer training loop: goal selection, Go/Explore rollouts, per-epoch
//! updates of the encoder and both policies, and greedy evaluation.

mod checkpoint;
mod metrics;

pub use checkpoint::{read_checkpoint, write_checkpoint, RunCheckpoint};
pub use metrics::{visits_csv, MetricsRow, METRICS_HEADER};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ablation::{sparse_reward, RndBonus};
use crate::agent::{ActMode, QPair, TdBatch};
use crate::config::{GcrlReward, GoalSelection, RunConfig, UpdateOrder};
use crate::env::{Action, Cell, MazeSpec};
use crate::error::{Error, Result};
use crate::nn::hstack;
use crate::replay::{EpisodeKind, ReplayBuffer, TransitionRecord};
use crate::representation::{EncoderState, ReprBatch};
use crate::rewards::{exploration_rewards, gcrl_rewards, tldr_rewards, tldr_rewards_within, ReferenceBatch, RunningMean};

/// Cumulative per-cell visit counts over all training trajectories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageTracker {
    visits: Vec<u64>,
    covered: usize,
}

impl CoverageTracker {
    pub fn new(num_cells: usize) -> Self {
        Self { visits: vec![0; num_cells], covered: 0 }
    }

    pub fn visit(&mut self, index: usize) {
        if self.visits[index] == 0 {
            self.covered += 1;
        }
        self.visits[index] += 1;
    }

    pub fn covered(&self) -> usize {
        self.covered
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }
}

/// Result of one greedy goal-reaching pass over a goal set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub goals_reached: usize,
    pub mean_goal_distance: f64,
    pub successes: Vec<bool>,
    pub final_cells: Vec<Cell>,
}

/// One executed episode plus the step at which control passed to π^E
/// (equal to the horizon for goal-reaching episodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub records: Vec<TransitionRecord>,
    pub switch_step: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn features(maze: &MazeSpec, cells: impl ExactSizeIterator<Item = Cell>) -> Array2<f64> {
    let n = cells.len();
    let mut out = Array2::zeros((n, 2));
    for (i, c) in cells.enumerate() {
        let f = maze.featurize(c);
        out[[i, 0]] = f[0];
        out[[i, 1]] = f[1];
    }
    out
}

fn goal_input(maze: &MazeSpec, s: Cell, g: Cell) -> [f64; 4] {
    let (a, b) = (maze.featurize(s), maze.featurize(g));
    [a[0], a[1], b[0], b[1]]
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// The `n` highest-scoring distinct cells in descending score order; equal
/// scores keep their input order. Repeats the list when fewer are distinct.
pub fn top_distinct(cells: &[Cell], scores: &[f64], n: usize) -> Vec<Cell> {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut picked: Vec<Cell> = Vec::with_capacity(n);
    for i in order {
        if picked.len() == n {
            break;
        }
        if !picked.contains(&cells[i]) {
            picked.push(cells[i]);
        }
    }
    let distinct = picked.len();
    if distinct > 0 {
        for i in distinct..n {
            picked.push(picked[i % distinct]);
        }
    }
    picked
}

/// Runs one greedy π^G episode per goal from the start cell. Reads only.
pub fn evaluate(maze: &MazeSpec, qg: &QPair, goals: &[Cell]) -> Result<EvalReport> {
    let mut successes = Vec::with_capacity(goals.len());
    let mut final_cells = Vec::with_capacity(goals.len());
    let mut total = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &g in goals {
        let mut state = maze.reset();
        let mut reached = state.cell == g;
        while state.step < maze.horizon() {
            let a = qg.act(&goal_input(maze, state.cell, g), ActMode::Greedy, &mut rng)?;
            state = maze.step(state, Action::from_index(a)?)?;
            reached |= state.cell == g;
        }
        let d = maze.bfs_distance(state.cell, g)?.map_or(f64::INFINITY, |d| d as f64);
        total += d;
        successes.push(reached);
        final_cells.push(state.cell);
    }
    Ok(EvalReport {
        goals_reached: successes.iter().filter(|&&s| s).count(),
        mean_goal_distance: if goals.is_empty() { f64::NAN } else { total / goals.len() as f64 },
        successes,
        final_cells,
    })
}

#[derive(Debug, Default)]
struct EpochStats {
    repr_loss: Vec<f64>,
    residual: Vec<f64>,
    qg_loss: Vec<f64>,
    qe_loss: Vec<f64>,
    tldr: Vec<f64>,
}

/// Everything a training run mutates.
#[derive(Debug, Clone)]
pub struct RunState {
    pub cfg: RunConfig,
    pub maze: MazeSpec,
    pub encoder: EncoderState,
    pub qg: QPair,
    pub qe: QPair,
    pub rnd: Option<RndBonus>,
    pub buffer: ReplayBuffer,
    pub norm: RunningMean,
    pub coverage: CoverageTracker,
    pub epoch: usize,
    pub env_steps: u64,
    reachable: usize,
    rollout_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    goal_rng: ChaCha8Rng,
}

impl RunState {
    pub fn new(cfg: RunConfig, maze: MazeSpec) -> Result<Self> {
        cfg.validate()?;
        let mut init = stream(cfg.seed, 0);
        let encoder = EncoderState::new(&cfg.encoder_config(), &mut init)?;
        let qg = QPair::new(&cfg.goal_q_config(), &mut init)?;
        let qe = QPair::new(&cfg.explore_q_config(), &mut init)?;
        let rnd = match cfg.goal_selection {
            GoalSelection::Rnd => Some(RndBonus::new(2, cfg.lr_phi, &mut init)?),
            _ => None,
        };
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            norm: RunningMean::new(),
            coverage: CoverageTracker::new(maze.num_cells()),
            epoch: 0,
            env_steps: 0,
            reachable: maze.reachable_cells().len(),
            rollout_rng: stream(cfg.seed, 1),
            train_rng: stream(cfg.seed, 2),
            goal_rng: stream(cfg.seed, 3),
            encoder,
            qg,
            qe,
            rnd,
            cfg,
            maze,
        })
    }

    pub fn reachable_cells(&self) -> usize {
        self.reachable
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.coverage.covered() as f64 / self.reachable as f64
    }

    fn random_buffer_cells(&mut self, n: usize) -> Vec<Cell> {
        if self.buffer.is_empty() {
            return vec![self.maze.start(); n];
        }
        (0..n)
            .map(|_| {
                let i = self.goal_rng.gen_range(0..self.buffer.len());
                self.buffer.get(i).expect("index in range").next_state
            })
            .collect()
    }

    /// Picks `n` exploratory goals from a fresh buffer minibatch.
    pub fn select_goals(&mut self, n: usize) -> Result<Vec<Cell>> {
        if self.cfg.goal_selection == GoalSelection::Uniform || self.buffer.len() <= self.cfg.k {
            return Ok(self.random_buffer_cells(n));
        }
        let batch = self.buffer.sample_minibatch(self.cfg.goal_batch, &mut self.goal_rng)?;
        let cells: Vec<Cell> = batch.iter().map(|r| r.next_state).collect();
        self.rank_candidates(&cells, n)
    }

    /// Scores `cells` against each other and keeps the top `n` distinct ones.
    pub fn rank_candidates(&self, cells: &[Cell], n: usize) -> Result<Vec<Cell>> {
        let feats = features(&self.maze, cells.iter().copied());
        let scores = match &self.rnd {
            Some(rnd) => rnd.bonus_batch(feats.view())?,
            None => {
                let refs = ReferenceBatch::new(self.encoder.embed_batch(feats.view())?)?;
                tldr_rewards_within(&refs, self.cfg.k)?
            }
        };
        Ok(top_distinct(cells, &scores, n))
    }

    /// Runs one episode, inserts it into the buffer and updates coverage.
    pub fn rollout_episode(&mut self, goal: Cell, kind: EpisodeKind) -> Result<Episode> {
        let horizon = self.maze.horizon();
        let switch = match kind {
            EpisodeKind::GoalReaching => horizon,
            EpisodeKind::Exploration => self.rollout_rng.gen_range(0..horizon),
        };
        self.rollout_with_switch(goal, kind, switch)
    }

    /// As [`RunState::rollout_episode`] with an explicit hand-over step.
    pub fn rollout_with_switch(&mut self, goal: Cell, kind: EpisodeKind, switch: usize) -> Result<Episode> {
        let horizon = self.maze.horizon();
        let id = self.buffer.next_trajectory_id();
        let mut state = self.maze.reset();
        let mut records = Vec::with_capacity(horizon);
        self.coverage.visit(self.maze.index(state.cell));
        while state.step < horizon {
            let t = state.step;
            let a = if self.env_steps + (t as u64) < self.cfg.random_steps {
                self.rollout_rng.gen_range(0..Action::COUNT)
            } else if t < switch {
                self.qg.act(&goal_input(&self.maze, state.cell, goal), ActMode::Stochastic, &mut self.rollout_rng)?
            } else {
                self.qe.act(&self.maze.featurize(state.cell), ActMode::Stochastic, &mut self.rollout_rng)?
            };
            let action = Action::from_index(a)?;
            let next = self.maze.step(state, action)?;
            records.push(TransitionRecord {
                state: state.cell,
                action,
                next_state: next.cell,
                trajectory: id,
                t,
                traj_len: horizon,
                goal,
                kind,
            });
            self.coverage.visit(self.maze.index(next.cell));
            state = next;
        }
        self.buffer.insert_trajectory(&records)?;
        self.env_steps += horizon as u64;
        Ok(Episode { records, switch_step: switch.min(horizon) })
    }

    fn repr_step(&mut self, stats: &mut EpochStats) -> Result<()> {
        let recs = self.buffer.sample_minibatch(self.cfg.batch_size, &mut self.train_rng)?;
        let s = features(&self.maze, recs.iter().map(|r| r.state));
        let n = features(&self.maze, recs.iter().map(|r| r.next_state));
        let batch = ReprBatch::with_permuted_goals(s, n, &mut self.train_rng)?;
        let out = self.encoder.train_step(&batch)?;
        stats.repr_loss.push(out.loss);
        stats.residual.push(out.mean_step_norm - 1.0);
        Ok(())
    }

    fn goal_policy_step(&mut self, stats: &mut EpochStats) -> Result<()> {
        let recs = self.buffer.sample_minibatch(self.cfg.batch_size, &mut self.train_rng)?;
        let relabeled = self.buffer.her_relabel(&recs, self.cfg.relabel_ratio, &mut self.train_rng)?;
        let recs: Vec<TransitionRecord> = relabeled.into_iter().map(|r| r.record).collect();
        let s = features(&self.maze, recs.iter().map(|r| r.state));
        let n = features(&self.maze, recs.iter().map(|r| r.next_state));
        let g = features(&self.maze, recs.iter().map(|r| r.goal));
        let rewards = match self.cfg.gcrl_reward {
            GcrlReward::TldrDense => gcrl_rewards(
                &self.encoder.embed_batch(s.view())?,
                &self.encoder.embed_batch(n.view())?,
                &self.encoder.embed_batch(g.view())?,
            ),
            GcrlReward::Sparse => recs.iter().map(|r| sparse_reward(r.next_state, r.goal)).collect(),
        };
        let batch = TdBatch {
            inputs: hstack(s.view(), g.view()),
            actions: recs.iter().map(|r| r.action.index()).collect(),
            rewards,
            next_inputs: hstack(n.view(), g.view()),
        };
        stats.qg_loss.push(self.qg.train_step(&batch)?);
        Ok(())
    }

    fn explore_policy_step(&mut self, stats: &mut EpochStats) -> Result<()> {
        let recs = self.buffer.sample_minibatch(self.cfg.batch_size, &mut self.train_rng)?;
        let refs = self.buffer.sample_minibatch(self.cfg.reference_batch, &mut self.train_rng)?;
        let s = features(&self.maze, recs.iter().map(|r| r.state));
        let n = features(&self.maze, recs.iter().map(|r| r.next_state));
        let r = features(&self.maze, refs.iter().map(|r| r.state));
        let refs = ReferenceBatch::new(self.encoder.embed_batch(r.view())?)?;
        let tldr_s = tldr_rewards(self.encoder.embed_batch(s.view())?.view(), &refs, self.cfg.k)?;
        let tldr_n = tldr_rewards(self.encoder.embed_batch(n.view())?.view(), &refs, self.cfg.k)?;
        stats.tldr.push(mean(&tldr_n));
        let rewards = match &mut self.rnd {
            Some(rnd) => {
                let bs = rnd.bonus_batch(s.view())?;
                let bn = rnd.bonus_batch(n.view())?;
                rnd.train_step(n.view())?;
                exploration_rewards(&bs, &bn, &mut self.norm)?
            }
            None => exploration_rewards(&tldr_s, &tldr_n, &mut self.norm)?,
        };
        let batch = TdBatch {
            inputs: s,
            actions: recs.iter().map(|r| r.action.index()).collect(),
            rewards,
            next_inputs: n,
        };
        stats.qe_loss.push(self.qe.train_step(&batch)?);
        Ok(())
    }

    /// Rollouts, gradient steps, then one evaluation pass; returns the row.
    pub fn train_epoch(&mut self) -> Result<MetricsRow> {
        let rollouts = self.cfg.rollouts_per_epoch;
        let goals = self.select_goals(rollouts.div_ceil(2))?;
        for i in 0..rollouts {
            let kind = if i % 2 == 0 { EpisodeKind::GoalReaching } else { EpisodeKind::Exploration };
            self.rollout_episode(goals[i / 2], kind)?;
        }
        let mut stats = EpochStats::default();
        for _ in 0..self.cfg.grad_steps {
            match self.cfg.update_order {
                UpdateOrder::PhiFirst => {
                    self.repr_step(&mut stats)?;
                    self.goal_policy_step(&mut stats)?;
                    self.explore_policy_step(&mut stats)?;
                }
                UpdateOrder::PoliciesFirst => {
                    self.explore_policy_step(&mut stats)?;
                    self.goal_policy_step(&mut stats)?;
                    self.repr_step(&mut stats)?;
                }
            }
        }
        if !(self.encoder.lambda.is_finite() && self.qg.is_finite() && self.qe.is_finite()) {
            return Err(Error::InvalidInput(format!("training diverged at epoch {}", self.epoch + 1)));
        }
        self.epoch += 1;
        let eval = self.evaluate()?;
        Ok(MetricsRow {
            epoch: self.epoch,
            env_steps: self.env_steps,
            coverage_cells: self.coverage.covered(),
            coverage_fraction: self.coverage_fraction(),
            goals_reached: eval.goals_reached,
            mean_goal_distance: eval.mean_goal_distance,
            lambda: self.encoder.lambda,
            constraint_residual: mean(&stats.residual),
            mean_tldr_reward: mean(&stats.tldr),
            repr_loss: mean(&stats.repr_loss),
            qg_loss: mean(&stats.qg_loss),
            qe_loss: mean(&stats.qe_loss),
            seed: self.cfg.seed,
        })
    }

    /// Greedy evaluation on the layout's goal cells.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(&self.maze, &self.qg, self.maze.goals())
    }
}
