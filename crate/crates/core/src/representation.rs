//! Temporal-distance encoder.
//!
//! The encoder maps state features to an embedding whose Euclidean distances
//! estimate the number of steps between states. It maximizes
//!
//! ```text
//! E[ f(‖φ(s) − φ(g)‖) + λ · min(ε, 1 − ‖φ(s) − φ(s′)‖) ]
//! ```
//!
//! where `f(x) = −softplus(500 − x, β = 0.01)` damps very long distances and
//! the multiplier `λ ≥ 0` enforces the one-step constraint `‖φ(s) − φ(s′)‖ ≤ 1`
//! through dual gradient descent.

use std::io::{Read, Write};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_f64, read_net, read_u32, read_u64, write_f64, write_net, write_u32, write_u64};
use crate::nn::{AdamState, DenseParams, Tape};

pub const F_SHIFT: f64 = 500.0;
pub const F_BETA: f64 = 0.01;

/// `f(x) = −(1/β) · ln(1 + exp(β(500 − x)))`.
pub fn f_transform(x: f64) -> f64 {
    -crate::nn::softplus_beta(F_SHIFT - x, F_BETA)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_width: usize,
    pub dim: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub lr: f64,
    pub lambda_init: f64,
    pub lambda_lr: f64,
    pub epsilon: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_width: 2,
            dim: 4,
            hidden_width: 64,
            hidden_depth: 2,
            lr: 1e-3,
            lambda_init: 3e3,
            lambda_lr: 1e-3,
            epsilon: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub net: DenseParams,
    pub adam: AdamState,
    pub lambda: f64,
    pub lambda_lr: f64,
    pub epsilon: f64,
}

/// Transition pairs plus goals. The goal of row `i` is `next_states[goal_rows[i]]`,
/// i.e. goals are drawn from the same minibatch.
#[derive(Debug, Clone)]
pub struct ReprBatch {
    pub states: Array2<f64>,
    pub next_states: Array2<f64>,
    pub goal_rows: Vec<usize>,
}

impl ReprBatch {
    pub fn new(states: Array2<f64>, next_states: Array2<f64>, goal_rows: Vec<usize>) -> Result<Self> {
        let n = states.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("empty representation batch".into()));
        }
        if next_states.dim() != states.dim() || goal_rows.len() != n {
            return Err(Error::Shape(format!(
                "batch parts disagree: states {:?}, next {:?}, {} goals",
                states.dim(),
                next_states.dim(),
                goal_rows.len()
            )));
        }
        if goal_rows.iter().any(|&g| g >= n) {
            return Err(Error::InvalidInput("goal row out of range".into()));
        }
        if states.iter().chain(next_states.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite features".into()));
        }
        Ok(Self { states, next_states, goal_rows })
    }

    /// Pairs each transition with the next state of a uniformly permuted row.
    pub fn with_permuted_goals<R: Rng + ?Sized>(
        states: Array2<f64>,
        next_states: Array2<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut perm: Vec<usize> = (0..states.nrows()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
        Self::new(states, next_states, perm)
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss, parameter gradients and constraint statistics for one batch.
#[derive(Debug, Clone)]
pub struct ReprLoss {
    pub loss: f64,
    pub grads: DenseParams,
    /// Mean of `‖φ(s) − φ(s′)‖`.
    pub mean_step_norm: f64,
    /// Mean of `min(ε, 1 − ‖φ(s) − φ(s′)‖)`.
    pub mean_constraint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprStats {
    pub loss: f64,
    pub lambda: f64,
    pub mean_step_norm: f64,
}

impl EncoderState {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be at least 1".into()));
        }
        if !(cfg.epsilon > 0.0) || cfg.lambda_init < 0.0 || !(cfg.lambda_lr > 0.0) || !(cfg.lr > 0.0) {
            return Err(Error::InvalidInput(format!("bad encoder hyperparameters {cfg:?}")));
        }
        let mut widths = vec![cfg.input_width];
        widths.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_depth));
        widths.push(cfg.dim);
        let net = DenseParams::new(&widths, rng)?;
        Ok(Self::from_params(net, cfg))
    }

    pub fn from_params(net: DenseParams, cfg: &EncoderConfig) -> Self {
        let adam = AdamState::new(&net, cfg.lr);
        Self { net, adam, lambda: cfg.lambda_init, lambda_lr: cfg.lambda_lr, epsilon: cfg.epsilon }
    }

    pub fn dim(&self) -> usize {
        self.net.output_width()
    }

    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.net.forward_one(features)
    }

    pub fn embed_batch(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.forward(features)
    }

    /// `‖φ(a) − φ(b)‖`, the estimated number of steps between two states.
    pub fn temporal_distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let (za, zb) = (self.embed(a)?, self.embed(b)?);
        Ok(euclidean(&za, &zb))
    }

    /// Negated Lagrangian and its gradient with respect to the encoder
    /// parameters; `λ` is held constant.
    pub fn repr_loss(&self, batch: &ReprBatch) -> Result<ReprLoss> {
        let n = batch.len();
        let stacked = concatenate(Axis(0), &[batch.states.view(), batch.next_states.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut tape = Tape::new();
        let x = tape.leaf(stacked);
        let (z, vars) = self.net.record(&mut tape, x)?;
        let s_rows: Vec<usize> = (0..n).collect();
        let next_rows: Vec<usize> = (n..2 * n).collect();
        let goal_rows: Vec<usize> = batch.goal_rows.iter().map(|&g| n + g).collect();
        let zs = tape.select_rows(z, &s_rows)?;
        let zn = tape.select_rows(z, &next_rows)?;
        let zg = tape.select_rows(z, &goal_rows)?;

        let to_goal = tape.sub(zs, zg)?;
        let d_goal = tape.row_norm(to_goal)?;
        let shifted = tape.affine(d_goal, -1.0, F_SHIFT)?;
        let sp = tape.softplus(shifted, F_BETA)?;
        let f = tape.affine(sp, -1.0, 0.0)?;

        let step = tape.sub(zs, zn)?;
        let d_step = tape.row_norm(step)?;
        let slack = tape.affine(d_step, -1.0, 1.0)?;
        let constraint = tape.min_const(slack, self.epsilon)?;
        let penalty = tape.affine(constraint, self.lambda, 0.0)?;

        let per_row = tape.add(f, penalty)?;
        let objective = tape.mean(per_row)?;
        let loss = tape.affine(objective, -1.0, 0.0)?;

        let mean_step_norm = tape.value(d_step).mean().unwrap_or(0.0);
        let mean_constraint = tape.value(constraint).mean().unwrap_or(0.0);
        let mut grads = tape.backward(loss)?;
        Ok(ReprLoss {
            loss: tape.scalar(loss),
            grads: self.net.collect_grads(&mut grads, &vars),
            mean_step_norm,
            mean_constraint,
        })
    }

    /// Mean of `min(ε, 1 − ‖φ(s) − φ(s′)‖)` under the current encoder.
    pub fn constraint_term(&self, batch: &ReprBatch) -> Result<f64> {
        let zs = self.embed_batch(batch.states.view())?;
        let zn = self.embed_batch(batch.next_states.view())?;
        let total: f64 = zs
            .rows()
            .into_iter()
            .zip(zn.rows())
            .map(|(a, b)| {
                let d = euclidean(a.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"));
                self.epsilon.min(1.0 - d)
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Dual descent on `λ`: it grows while transitions are stretched past unit
    /// length and decays (by at most `α_λ·ε`) while the constraint is slack.
    pub fn dual_update(&mut self, batch: &ReprBatch) -> Result<()> {
        let c = self.constraint_term(batch)?;
        self.apply_dual(c);
        Ok(())
    }

    fn apply_dual(&mut self, mean_constraint: f64) {
        self.lambda = (self.lambda - self.lambda_lr * mean_constraint).max(0.0);
    }

    /// One Adam step on the encoder followed by a dual step on `λ`, both
    /// computed from the same forward pass.
    pub fn train_step(&mut self, batch: &ReprBatch) -> Result<ReprStats> {
        let out = self.repr_loss(batch)?;
        self.adam.step(&mut self.net, &out.grads)?;
        self.apply_dual(out.mean_constraint);
        Ok(ReprStats { loss: out.loss, lambda: self.lambda, mean_step_norm: out.mean_step_norm })
    }

    /// nn layout followed by the trailer `(d u32, λ f64, ε f64, step u64)`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_net(w, &self.net, &self.adam)?;
        write_u32(w, self.dim() as u32)?;
        write_f64(w, self.lambda)?;
        write_f64(w, self.epsilon)?;
        write_u64(w, self.adam.step)
    }

    pub fn read_from<R: Read>(r: &mut R, lambda_lr: f64) -> Result<Self> {
        let (net, adam) = read_net(r)?;
        let dim = read_u32(r)? as usize;
        let lambda = read_f64(r)?;
        let epsilon = read_f64(r)?;
        let step = read_u64(r)?;
        if dim != net.output_width() || step != adam.step {
            return Err(Error::Checkpoint("encoder trailer disagrees with the network".into()));
        }
        if !(lambda >= 0.0) || !(epsilon > 0.0) {
            return Err(Error::Checkpoint(format!("invalid multiplier state λ={lambda}, ε={epsilon}")));
        }
        Ok(Self { net, adam, lambda, lambda_lr, epsilon })
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
