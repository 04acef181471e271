//! Bounded transition store with whole-trajectory eviction and hindsight
//! goal relabeling.

use std::collections::VecDeque;

use rand::Rng;

use crate::env::{Action, Cell};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpisodeKind {
    GoalReaching,
    Exploration,
}

/// One environment step. States are stored as cells; features are derived
/// on demand by the maze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionRecord {
    pub state: Cell,
    pub action: Action,
    pub next_state: Cell,
    pub trajectory: u64,
    pub t: usize,
    pub traj_len: usize,
    pub goal: Cell,
    pub kind: EpisodeKind,
}

/// A record after relabeling. `future_t` is the timestep whose `next_state`
/// became the goal, or `None` when the episode goal was kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relabeled {
    pub record: TransitionRecord,
    pub future_t: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Span {
    start: u64,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    records: VecDeque<TransitionRecord>,
    capacity: usize,
    popped: u64,
    first_traj: u64,
    spans: VecDeque<Span>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput("replay capacity must be positive".into()));
        }
        Ok(Self {
            records: VecDeque::new(),
            capacity,
            popped: 0,
            first_traj: 0,
            spans: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_trajectories(&self) -> usize {
        self.spans.len()
    }

    /// Id the next new trajectory must carry.
    pub fn next_trajectory_id(&self) -> u64 {
        self.first_traj + self.spans.len() as u64
    }

    pub fn oldest_trajectory(&self) -> Option<u64> {
        (!self.spans.is_empty()).then_some(self.first_traj)
    }

    pub fn contains_trajectory(&self, id: u64) -> bool {
        self.span(id).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    pub fn get(&self, i: usize) -> Option<&TransitionRecord> {
        self.records.get(i)
    }

    fn span(&self, id: u64) -> Option<Span> {
        let offset = id.checked_sub(self.first_traj)?;
        self.spans.get(offset as usize).copied()
    }

    /// Appends a record. Records must arrive in order: either the next
    /// timestep of the newest trajectory or timestep 0 of a fresh one.
    pub fn insert(&mut self, record: TransitionRecord) -> Result<()> {
        if record.t >= record.traj_len {
            return Err(Error::InvalidInput(format!(
                "timestep {} outside trajectory of length {}",
                record.t, record.traj_len
            )));
        }
        let next = self.next_trajectory_id();
        let continues = self.spans.back().is_some_and(|s| {
            next - 1 == record.trajectory && s.len == record.t
        });
        if continues {
            let last = self.records.back().expect("nonempty span implies records");
            if last.traj_len != record.traj_len {
                return Err(Error::InvalidInput("trajectory length changed mid-trajectory".into()));
            }
            self.spans.back_mut().expect("checked").len += 1;
        } else if record.trajectory == next && record.t == 0 {
            if self.spans.is_empty() {
                self.first_traj = next;
            }
            self.spans.push_back(Span { start: self.popped + self.records.len() as u64, len: 1 });
        } else {
            return Err(Error::InvalidInput(format!(
                "out-of-order record: trajectory {} t {} (next id {next})",
                record.trajectory, record.t
            )));
        }
        self.records.push_back(record);
        self.evict();
        Ok(())
    }

    /// Inserts a finished trajectory.
    pub fn insert_trajectory(&mut self, records: &[TransitionRecord]) -> Result<()> {
        records.iter().try_for_each(|r| self.insert(*r))
    }

    fn evict(&mut self) {
        while self.records.len() > self.capacity && self.spans.len() > 1 {
            let span = self.spans.pop_front().expect("more than one span");
            self.records.drain(..span.len);
            self.popped += span.len as u64;
            self.first_traj += 1;
        }
    }

    /// Resident records of trajectory `id` with timestep ≥ `t`, in order.
    pub fn future(&self, id: u64, t: usize) -> Result<Vec<TransitionRecord>> {
        let span = self
            .span(id)
            .ok_or_else(|| Error::InvalidInput(format!("trajectory {id} not resident")))?;
        let start = (span.start - self.popped) as usize;
        Ok(self.records.range(start..start + span.len).filter(|r| r.t >= t).copied().collect())
    }

    /// `n` records uniformly with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<TransitionRecord>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| self.records[rng.gen_range(0..self.records.len())]).collect())
    }

    /// With probability `ratio` per record, replaces the goal by the
    /// `next_state` of a uniformly chosen record of the same trajectory at
    /// timestep ≥ t. Records whose trajectory is gone are resampled.
    pub fn her_relabel<R: Rng + ?Sized>(
        &self,
        batch: &[TransitionRecord],
        ratio: f64,
        rng: &mut R,
    ) -> Result<Vec<Relabeled>> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidInput(format!("relabel ratio {ratio} outside [0, 1]")));
        }
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        batch
            .iter()
            .map(|&r| {
                let mut record = r;
                let span = loop {
                    match self.span(record.trajectory) {
                        Some(s) => break s,
                        None => record = self.records[rng.gen_range(0..self.records.len())],
                    }
                };
                if rng.gen::<f64>() >= ratio {
                    return Ok(Relabeled { record, future_t: None });
                }
                let start = (span.start - self.popped) as usize;
                let pick = rng.gen_range(record.t..span.len);
                let source = self.records[start + pick];
                debug_assert_eq!(source.t, pick);
                record.goal = source.next_state;
                Ok(Relabeled { record, future_t: Some(source.t) })
            })
            .collect()
    }
}
