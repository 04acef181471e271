//! Twin-Q soft value learners over a discrete action set.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{expect_magic, read_f64, read_net, write_f64, write_net};
use crate::nn::{AdamState, DenseParams, Tape};

const QPAIR_MAGIC: &[u8; 8] = b"TLDRQPR\0";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QConfig {
    pub input_width: usize,
    pub num_actions: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub lr: f64,
    /// Entropy temperature; 0 gives hard-max backups.
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.input_width > 0
            && self.num_actions > 0
            && self.hidden_width > 0
            && self.lr > 0.0
            && self.alpha >= 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && (0.0..=1.0).contains(&self.tau);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("bad Q-learner configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Greedy,
    Stochastic,
}

/// Transitions already featurized, with rewards computed by the caller.
#[derive(Debug, Clone)]
pub struct TdBatch {
    pub inputs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_inputs: Array2<f64>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self, width: usize, num_actions: usize) -> Result<()> {
        let n = self.actions.len();
        if self.rewards.len() != n || self.inputs.nrows() != n || self.next_inputs.nrows() != n {
            return Err(Error::Shape("TD batch fields disagree in length".into()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("empty TD batch".into()));
        }
        if self.inputs.ncols() != width || self.next_inputs.ncols() != width {
            return Err(Error::Shape(format!("TD batch width differs from {width}")));
        }
        if self.actions.iter().any(|&a| a >= num_actions) {
            return Err(Error::InvalidInput("action index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TdLoss {
    pub loss: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub grads1: DenseParams,
    pub grads2: DenseParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPair {
    pub q1: DenseParams,
    pub q2: DenseParams,
    pub target1: DenseParams,
    pub target2: DenseParams,
    pub adam1: AdamState,
    pub adam2: AdamState,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// `α·log Σ exp(q/α)`, or `max q` when `α = 0`.
pub fn soft_max(q: &[f64], alpha: f64) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if alpha == 0.0 {
        return m;
    }
    m + alpha * q.iter().map(|v| ((v - m) / alpha).exp()).sum::<f64>().ln()
}

/// `softmax(q/α)`; one-hot on the lowest argmax when `α = 0`.
pub fn softmax_policy(q: &[f64], alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        let best = argmax(q);
        return (0..q.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
    }
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|v| ((v - m) / alpha).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

impl QPair {
    pub fn new<R: Rng + ?Sized>(cfg: &QConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![cfg.input_width];
        widths.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_depth));
        widths.push(cfg.num_actions);
        let q1 = DenseParams::new(&widths, rng)?;
        let q2 = DenseParams::new(&widths, rng)?;
        Ok(Self {
            adam1: AdamState::new(&q1, cfg.lr),
            adam2: AdamState::new(&q2, cfg.lr),
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            tau: cfg.tau,
        })
    }

    pub fn input_width(&self) -> usize {
        self.q1.input_width()
    }

    pub fn num_actions(&self) -> usize {
        self.q1.output_width()
    }

    /// `min(Q₁, Q₂)` for one input.
    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        let a = self.q1.forward_one(input)?;
        let b = self.q2.forward_one(input)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
    }

    /// `min(Q₁, Q₂)` row-wise for a batch.
    pub fn q_values_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut a = self.q1.forward(inputs)?;
        let b = self.q2.forward(inputs)?;
        a.zip_mut_with(&b, |x, &y| *x = x.min(y));
        Ok(a)
    }

    pub fn policy_distribution(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_policy(&self.q_values(input)?, self.alpha))
    }

    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], mode: ActMode, rng: &mut R) -> Result<usize> {
        let q = self.q_values(input)?;
        Ok(match mode {
            ActMode::Greedy => argmax(&q),
            ActMode::Stochastic => sample_index(&softmax_policy(&q, self.alpha), rng),
        })
    }

    /// Bootstrap targets `r + γ·V_target(s′)`.
    pub fn td_targets(&self, batch: &TdBatch) -> Result<Vec<f64>> {
        let mut next = self.target1.forward(batch.next_inputs.view())?;
        let t2 = self.target2.forward(batch.next_inputs.view())?;
        next.zip_mut_with(&t2, |x, &y| *x = x.min(y));
        Ok(next
            .axis_iter(Axis(0))
            .zip(&batch.rewards)
            .map(|(row, r)| r + self.gamma * soft_max(&row.to_vec(), self.alpha))
            .collect())
    }

    /// One Adam step on each head toward the bootstrap targets. Returns the
    /// mean squared TD error averaged over both heads, measured before the
    /// step. Targets are not moved; see [`QPair::polyak_update`].
    pub fn td_update(&mut self, batch: &TdBatch) -> Result<f64> {
        let out = self.td_loss(batch)?;
        self.adam1.step(&mut self.q1, &out.grads1)?;
        self.adam2.step(&mut self.q2, &out.grads2)?;
        Ok(out.loss)
    }

    /// Mean squared TD error of both heads against fixed bootstrap targets,
    /// with each head's gradient.
    pub fn td_loss(&self, batch: &TdBatch) -> Result<TdLoss> {
        batch.check(self.input_width(), self.num_actions())?;
        let y = Array2::from_shape_vec((batch.len(), 1), self.td_targets(batch)?)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (l1, grads1) = head_loss(&self.q1, batch, &y)?;
        let (l2, grads2) = head_loss(&self.q2, batch, &y)?;
        Ok(TdLoss { loss: 0.5 * (l1 + l2), loss1: l1, loss2: l2, grads1, grads2 })
    }

    /// `target ← τ·target + (1−τ)·online`.
    pub fn polyak_update(&mut self) -> Result<()> {
        let tau = self.tau;
        self.target1.zip_apply(&self.q1, |t, o| *t = tau * *t + (1.0 - tau) * o)?;
        self.target2.zip_apply(&self.q2, |t, o| *t = tau * *t + (1.0 - tau) * o)
    }

    /// TD step followed by the target update.
    pub fn train_step(&mut self, batch: &TdBatch) -> Result<f64> {
        let loss = self.td_update(batch)?;
        self.polyak_update()?;
        Ok(loss)
    }

    pub fn is_finite(&self) -> bool {
        [&self.q1, &self.q2, &self.target1, &self.target2].iter().all(|p| p.is_finite())
    }

    /// Magic, `(α, γ, τ)`, then four nn records: Q₁, Q₂ with their Adam
    /// state and both targets with untouched moments.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(QPAIR_MAGIC)?;
        for v in [self.alpha, self.gamma, self.tau] {
            write_f64(w, v)?;
        }
        write_net(w, &self.q1, &self.adam1)?;
        write_net(w, &self.q2, &self.adam2)?;
        write_net(w, &self.target1, &AdamState::new(&self.target1, self.adam1.lr))?;
        write_net(w, &self.target2, &AdamState::new(&self.target2, self.adam2.lr))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, QPAIR_MAGIC)?;
        let alpha = read_f64(r)?;
        let gamma = read_f64(r)?;
        let tau = read_f64(r)?;
        let (q1, adam1) = read_net(r)?;
        let (q2, adam2) = read_net(r)?;
        let (target1, _) = read_net(r)?;
        let (target2, _) = read_net(r)?;
        let shapes_ok = q1.same_shape(&q2) && q1.same_shape(&target1) && q1.same_shape(&target2);
        if !shapes_ok {
            return Err(Error::Checkpoint("Q heads and targets differ in shape".into()));
        }
        if !(alpha >= 0.0) || !(gamma > 0.0 && gamma < 1.0) || !(0.0..=1.0).contains(&tau) {
            return Err(Error::Checkpoint(format!("invalid learner constants α={alpha} γ={gamma} τ={tau}")));
        }
        Ok(Self { q1, q2, target1, target2, adam1, adam2, alpha, gamma, tau })
    }
}

fn head_loss(head: &DenseParams, batch: &TdBatch, y: &Array2<f64>) -> Result<(f64, DenseParams)> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch.inputs.clone());
    let (q, vars) = head.record(&mut tape, x)?;
    let qa = tape.gather_cols(q, &batch.actions)?;
    let target = tape.leaf(y.clone());
    let diff = tape.sub(qa, target)?;
    let sq = tape.square(diff)?;
    let loss = tape.mean(sq)?;
    let mut grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), head.collect_grads(&mut grads, &vars)))
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
