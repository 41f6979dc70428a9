//! Prediction export.
//!
//! Layout (little-endian, floats are `f64`, positions in the world frame):
//!
//! ```text
//! file    := magic:"MPAP" version:u32 count:u32 record*count
//! record  := scene_id:u64 agent_type:u8 n_modes:u32 horizon:u32
//!            (x:f64 y:f64)*(n_modes*horizon) probability:f64*n_modes
//!            n_history:u32 (x:f64 y:f64 valid:u8)*n_history
//! ```
//!
//! Trajectories are stored mode-major. The target's observed history is
//! included for plotting; invalid history steps are stored as zeros.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scene::AgentType;

pub const PREDICTIONS_MAGIC: [u8; 4] = *b"MPAP";
pub const PREDICTIONS_VERSION: u32 = 1;
const KIND: &str = "predictions";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub scene_id: u64,
    pub agent_type: AgentType,
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub probabilities: Vec<f64>,
    pub history: Vec<[f64; 2]>,
    pub history_valid: Vec<bool>,
}

impl PredictionRecord {
    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        let t = self.horizon();
        if self.trajectories.iter().any(|m| m.len() != t) {
            return Err(Error::arg(format!("record {}: ragged trajectories", self.scene_id)));
        }
        if self.probabilities.len() != self.trajectories.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction probabilities",
                expected: self.trajectories.len(),
                found: self.probabilities.len(),
            });
        }
        if self.history.len() != self.history_valid.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction history",
                expected: self.history.len(),
                found: self.history_valid.len(),
            });
        }
        Ok(())
    }
}

pub fn encode_predictions(records: &[PredictionRecord]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(&PREDICTIONS_MAGIC);
    w.u32(PREDICTIONS_VERSION);
    w.len(records.len());
    for r in records {
        r.check()?;
        w.u64(r.scene_id);
        w.u8(r.agent_type.code());
        w.len(r.trajectories.len());
        w.len(r.horizon());
        for p in r.trajectories.iter().flatten() {
            w.f64(p[0]);
            w.f64(p[1]);
        }
        r.probabilities.iter().for_each(|&p| w.f64(p));
        w.len(r.history.len());
        for (p, &v) in r.history.iter().zip(&r.history_valid) {
            w.f64(p[0]);
            w.f64(p[1]);
            w.u8(v as u8);
        }
    }
    Ok(w.buf)
}

pub fn decode_predictions(bytes: &[u8]) -> Result<Vec<PredictionRecord>> {
    let mut r = Reader::new(bytes, KIND);
    r.header(PREDICTIONS_MAGIC, PREDICTIONS_VERSION)?;
    let count = r.count(21)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let scene_id = r.u64()?;
        let code = r.u8()?;
        let agent_type = AgentType::from_code(code).ok_or_else(|| r.corrupt(format!("agent type {code}")))?;
        let modes = r.count(8)?;
        let horizon = r.u32()? as usize;
        if modes.saturating_mul(horizon).saturating_mul(16) > r.remaining() {
            return Err(r.corrupt(format!("{modes}x{horizon} trajectories exceed file")));
        }
        let mut trajectories = Vec::with_capacity(modes);
        for _ in 0..modes {
            trajectories.push((0..horizon).map(|_| Ok([r.f64()?, r.f64()?])).collect::<Result<Vec<_>>>()?);
        }
        let probabilities = (0..modes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n = r.count(17)?;
        let mut history = Vec::with_capacity(n);
        let mut history_valid = Vec::with_capacity(n);
        for _ in 0..n {
            history.push([r.f64()?, r.f64()?]);
            history_valid.push(r.bool()?);
        }
        out.push(PredictionRecord { scene_id, agent_type, trajectories, probabilities, history, history_valid });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_predictions(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_predictions(&bytes)
}
