//! Reward signals built on the temporal-distance embedding.
//!
//! - the kNN particle-entropy score `log(1 + mean distance to the k nearest
//!   reference embeddings)`, used to pick exploratory goals;
//! - the exploration reward `score(s′) − score(s)`, each term divided by a
//!   running mean of observed scores;
//! - the goal-reaching reward `‖φ(s) − φ(g)‖ − ‖φ(s′) − φ(g)‖`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::representation::{euclidean, EncoderState};

/// Running estimate of the mean score, used to keep exploration rewards on
/// a consistent scale.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMean {
    mean: f64,
    count: u64,
}

impl RunningMean {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }

    pub fn update_many(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.update(x));
    }

    /// Divides by the current estimate; passes through while it is not positive.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.count == 0 || self.mean <= 0.0 {
            x
        } else {
            x / self.mean
        }
    }
}

/// Embeddings that define the neighbourhoods of the particle estimator.
#[derive(Debug, Clone)]
pub struct ReferenceBatch {
    embeddings: Array2<f64>,
}

impl ReferenceBatch {
    pub fn new(embeddings: Array2<f64>) -> Result<Self> {
        if embeddings.ncols() == 0 {
            return Err(Error::InvalidInput("reference embeddings have zero width".into()));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite reference embedding".into()));
        }
        Ok(Self { embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }
}

/// Particle-entropy score of `z`: `log(1 + (1/k) Σ_{j ∈ kNN} ‖z − z_j‖)`.
///
/// `exclude` drops one reference row, used when `z` is itself that member.
pub fn tldr_reward(z: &[f64], refs: &ReferenceBatch, k: usize, exclude: Option<usize>) -> Result<f64> {
    let mut scratch = Vec::with_capacity(refs.len());
    tldr_reward_with(z, refs, k, exclude, &mut scratch)
}

fn tldr_reward_with(
    z: &[f64],
    refs: &ReferenceBatch,
    k: usize,
    exclude: Option<usize>,
    dists: &mut Vec<f64>,
) -> Result<f64> {
    if z.len() != refs.dim() {
        return Err(Error::Shape(format!("query dim {} vs reference dim {}", z.len(), refs.dim())));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    dists.clear();
    for (j, row) in refs.embeddings.rows().into_iter().enumerate() {
        if Some(j) == exclude {
            continue;
        }
        dists.push(euclidean(z, row.as_slice().expect("reference rows are contiguous")));
    }
    if dists.len() < k {
        return Err(Error::InvalidInput(format!("k = {k} but only {} references available", dists.len())));
    }
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let nearest = &mut dists[..k];
    nearest.sort_unstable_by(f64::total_cmp);
    let mean = nearest.iter().sum::<f64>() / k as f64;
    Ok(mean.ln_1p())
}

/// Scores for a batch of queries that are not members of `refs`.
pub fn tldr_rewards(queries: ArrayView2<'_, f64>, refs: &ReferenceBatch, k: usize) -> Result<Vec<f64>> {
    let mut scratch = Vec::with_capacity(refs.len());
    queries
        .rows()
        .into_iter()
        .map(|q| tldr_reward_with(&q.to_vec(), refs, k, None, &mut scratch))
        .collect()
}

/// Scores every member of `refs` against the rest of the batch.
pub fn tldr_rewards_within(refs: &ReferenceBatch, k: usize) -> Result<Vec<f64>> {
    let mut scratch = Vec::with_capacity(refs.len());
    (0..refs.len())
        .map(|i| {
            let z = refs.embeddings.row(i).to_vec();
            tldr_reward_with(&z, refs, k, Some(i), &mut scratch)
        })
        .collect()
}

/// Normalized score difference; updates `norm` with both scores first.
pub fn exploration_reward_from_scores(score_s: f64, score_next: f64, norm: &mut RunningMean) -> f64 {
    norm.update(score_s);
    norm.update(score_next);
    frozen_exploration_reward(score_s, score_next, norm)
}

/// Same as [`exploration_reward_from_scores`] without touching the statistics.
pub fn frozen_exploration_reward(score_s: f64, score_next: f64, norm: &RunningMean) -> f64 {
    norm.normalize(score_next) - norm.normalize(score_s)
}

/// Batched exploration rewards: the running mean absorbs all scores of the
/// batch, then every pair is normalized with the updated estimate.
pub fn exploration_rewards(scores_s: &[f64], scores_next: &[f64], norm: &mut RunningMean) -> Result<Vec<f64>> {
    if scores_s.len() != scores_next.len() {
        return Err(Error::Shape("score vectors differ in length".into()));
    }
    for (&a, &b) in scores_s.iter().zip(scores_next) {
        norm.update(a);
        norm.update(b);
    }
    Ok(scores_s
        .iter()
        .zip(scores_next)
        .map(|(&a, &b)| frozen_exploration_reward(a, b, norm))
        .collect())
}

/// Exploration reward for one transition given state features.
pub fn exploration_reward(
    enc: &EncoderState,
    s: &[f64],
    s_next: &[f64],
    refs: &ReferenceBatch,
    k: usize,
    norm: &mut RunningMean,
) -> Result<f64> {
    let a = tldr_reward(&enc.embed(s)?, refs, k, None)?;
    let b = tldr_reward(&enc.embed(s_next)?, refs, k, None)?;
    Ok(exploration_reward_from_scores(a, b, norm))
}

/// `‖z_s − z_g‖ − ‖z_next − z_g‖` on embeddings.
pub fn gcrl_reward_embedded(z_s: &[f64], z_next: &[f64], z_goal: &[f64]) -> f64 {
    euclidean(z_s, z_goal) - euclidean(z_next, z_goal)
}

/// Goal-reaching reward for one transition given state features.
pub fn gcrl_reward(enc: &EncoderState, s: &[f64], s_next: &[f64], g: &[f64]) -> Result<f64> {
    Ok(gcrl_reward_embedded(&enc.embed(s)?, &enc.embed(s_next)?, &enc.embed(g)?))
}

/// Row-wise goal-reaching rewards for embedded batches.
pub fn gcrl_rewards(z_s: &Array2<f64>, z_next: &Array2<f64>, z_goal: &Array2<f64>) -> Vec<f64> {
    z_s.rows()
        .into_iter()
        .zip(z_next.rows())
        .zip(z_goal.rows())
        .map(|((a, b), g)| {
            gcrl_reward_embedded(
                a.as_slice().expect("contiguous"),
                b.as_slice().expect("contiguous"),
                g.as_slice().expect("contiguous"),
            )
        })
        .collect()
}
