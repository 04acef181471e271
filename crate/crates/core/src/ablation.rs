//! Stand-ins used by the ablation switches: the sparse goal reward and a
//! small random-network-distillation novelty bonus.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::env::Cell;
use crate::error::{Error, Result};
use crate::nn::{AdamState, DenseParams, Tape};

/// `0` on arrival at `g`, `−1` otherwise.
pub fn sparse_reward(next: Cell, goal: Cell) -> f64 {
    if next == goal {
        0.0
    } else {
        -1.0
    }
}

pub const RND_HIDDEN: usize = 32;
pub const RND_OUTPUT: usize = 8;

/// Novelty as the squared error of a trained predictor against a frozen
/// random target.
#[derive(Debug, Clone, PartialEq)]
pub struct RndBonus {
    pub target: DenseParams,
    pub predictor: DenseParams,
    pub adam: AdamState,
}

impl RndBonus {
    pub fn new<R: Rng + ?Sized>(input_width: usize, lr: f64, rng: &mut R) -> Result<Self> {
        let widths = [input_width, RND_HIDDEN, RND_OUTPUT];
        let target = DenseParams::new(&widths, rng)?;
        let predictor = DenseParams::new(&widths, rng)?;
        Ok(Self { adam: AdamState::new(&predictor, lr), target, predictor })
    }

    pub fn bonus(&self, features: &[f64]) -> Result<f64> {
        let p = self.predictor.forward_one(features)?;
        let t = self.target.forward_one(features)?;
        Ok(p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn bonus_batch(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let mut d = self.predictor.forward(features)?;
        d -= &self.target.forward(features)?;
        Ok(d.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).collect())
    }

    /// One Adam step on the mean per-row bonus. Returns the loss before the step.
    pub fn train_step(&mut self, features: ArrayView2<'_, f64>) -> Result<f64> {
        if features.nrows() == 0 {
            return Err(Error::InvalidInput("empty RND batch".into()));
        }
        let target: Array2<f64> = self.target.forward(features)?;
        let mut tape = Tape::new();
        let x = tape.leaf(features.to_owned());
        let (out, vars) = self.predictor.record(&mut tape, x)?;
        let t = tape.leaf(target);
        let diff = tape.sub(out, t)?;
        let sq = tape.square(diff)?;
        let m = tape.mean(sq)?;
        let loss = tape.affine(m, RND_OUTPUT as f64, 0.0)?;
        let mut grads = tape.backward(loss)?;
        let g = self.predictor.collect_grads(&mut grads, &vars);
        self.adam.step(&mut self.predictor, &g)?;
        Ok(tape.scalar(loss))
    }
}
