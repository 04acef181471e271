use std::io::{Read, Write};

use crate::agent::QPair;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{expect_magic, read_f64, read_u32, read_u64, write_f64, write_u32, write_u64};
use crate::representation::EncoderState;

use super::RunState;

const RUN_MAGIC: &[u8; 8] = b"TLDRRUN\0";
const RUN_VERSION: u32 = 1;

/// The learned parts of a run, enough to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCheckpoint {
    pub fingerprint: u64,
    pub horizon: usize,
    pub epoch: u64,
    pub seed: u64,
    pub encoder: EncoderState,
    pub qg: QPair,
    pub qe: QPair,
}

/// Magic, version, layout fingerprint, horizon, epoch, seed, λ step size,
/// then the encoder and both Q pairs.
pub fn write_checkpoint<W: Write>(w: &mut W, state: &RunState) -> Result<()> {
    w.write_all(RUN_MAGIC)?;
    write_u32(w, RUN_VERSION)?;
    write_u64(w, state.maze.fingerprint())?;
    write_u64(w, state.maze.horizon() as u64)?;
    write_u64(w, state.epoch as u64)?;
    write_u64(w, state.cfg.seed)?;
    write_f64(w, state.encoder.lambda_lr)?;
    state.encoder.write_to(w)?;
    state.qg.write_to(w)?;
    state.qe.write_to(w)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<RunCheckpoint> {
    expect_magic(r, RUN_MAGIC)?;
    let version = read_u32(r)?;
    if version != RUN_VERSION {
        return Err(Error::Checkpoint(format!("unsupported run checkpoint version {version}")));
    }
    let fingerprint = read_u64(r)?;
    let horizon = read_u64(r)? as usize;
    let epoch = read_u64(r)?;
    let seed = read_u64(r)?;
    let lambda_lr = read_f64(r)?;
    let encoder = EncoderState::read_from(r, lambda_lr)?;
    let qg = QPair::read_from(r)?;
    let qe = QPair::read_from(r)?;
    if horizon == 0 || qg.input_width() != 4 || qe.input_width() != 2 {
        return Err(Error::Checkpoint("checkpoint networks do not fit a maze run".into()));
    }
    Ok(RunCheckpoint { fingerprint, horizon, epoch, seed, encoder, qg, qe })
}
